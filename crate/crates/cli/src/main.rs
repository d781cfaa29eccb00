use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ellipcert_core::certificate::{self, CertError, Certificate};
use ellipcert_core::pipeline::{analyze_source, roles_only, Analysis, PipelineError};
use ellipcert_core::sim::{simulate, Policy, SimError, SimOptions};
use ellipcert_core::synthesis::{synthesize, Margin, Status, SynthesisConfig};
use ellipcert_core::{FrontendError, Span};

/// Ellipsoidal stability certificates for controller loops.
#[derive(Parser)]
#[command(name = "ellipcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an invariant and write a certificate.
    Analyze {
        source: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
        /// Certificate output path (default: `<source>.cert.json`).
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
        /// Also print the role map as JSON.
        #[arg(long)]
        dump_roles: bool,
        /// Also print the compiled rule chain as JSON.
        #[arg(long)]
        dump_rules: bool,
        #[arg(long)]
        json: bool,
    },
    /// Replay a certificate against its source.
    Check {
        certificate: PathBuf,
        source: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the program concretely and measure the Lyapunov level.
    Simulate {
        certificate: PathBuf,
        source: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long, default_value_t = 8)]
        trials: u64,
        /// uniform, extremal, adversarial-sign or zero
        #[arg(long, default_value = "adversarial-sign")]
        policy: Policy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Print the role of every variable.
    Roles {
        source: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the compiled rule chain.
    Rules {
        source: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid points per parameter.
    #[arg(long)]
    grid: Option<usize>,
    /// Containment margin: `auto` or a number.
    #[arg(long)]
    margin: Option<String>,
}

impl SynthArgs {
    fn load(&self) -> anyhow::Result<SynthesisConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("{}: cannot read", p.display()))?;
                SynthesisConfig::from_json(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?
            }
            None => SynthesisConfig::default(),
        };
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(m) = &self.margin {
            cfg.margin = match m.as_str() {
                "auto" => Margin::Auto,
                v => match v.parse::<f64>() {
                    Ok(x) if x >= 0.0 && x.is_finite() => Margin::Fixed(x),
                    _ => return Err(anyhow!("--margin: expected `auto` or a non-negative number, got `{v}`")),
                },
            };
        }
        cfg.validate().map_err(|e| anyhow!("config: {e}"))?;
        Ok(cfg)
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))
}

fn located(path: &Path, span: Span, message: &str) -> anyhow::Error {
    if span.line == 0 {
        anyhow!("{}: {message}", path.display())
    } else {
        anyhow!("{}:{}:{}: {message}", path.display(), span.line, span.col)
    }
}

fn frontend_error(path: &Path, e: &FrontendError) -> anyhow::Error {
    located(path, e.span, &e.message)
}

fn pipeline_error(path: &Path, e: &PipelineError) -> anyhow::Error {
    located(path, e.span(), e.message())
}

fn compile(path: &Path, cfg: &SynthesisConfig) -> anyhow::Result<Analysis> {
    let src = read(path)?;
    let inputs = cfg.input_bounds().map_err(|e| anyhow!("config: {e}"))?;
    analyze_source(&src, &inputs).map_err(|e| pipeline_error(path, &e))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn rules_text(a: &Analysis) -> String {
    let s = &a.summary;
    let mut out = format!("loop head [{}]\n", s.head_layout.join(", "));
    for (k, r) in s.rules.iter().enumerate() {
        let loc = r.location.as_ref().map(|l| format!("{}:{} {}", l.line, l.col, l.text)).unwrap_or_default();
        let param = r.param.map(|p| format!(" ({})", s.params[p].name)).unwrap_or_default();
        out.push_str(&format!("{:>3}. {:?}{param}  [{}] -> [{}]  {loc}\n", k + 1, r.kind, r.pre_layout.join(", "), r.post_layout.join(", ")));
    }
    out
}

fn analyze(
    source: &Path,
    synth: &SynthArgs,
    output: Option<PathBuf>,
    dump_roles: bool,
    dump_rules: bool,
    as_json: bool,
) -> anyhow::Result<ExitCode> {
    let cfg = synth.load()?;
    let a = compile(source, &cfg)?;
    if dump_roles {
        print_json(&a.roles.roles.to_json());
    }
    if dump_rules {
        print_json(&a.summary.to_json());
    }
    let result = synthesize(&a.summary, &cfg);
    let reason = match &result.status {
        Status::Failed { reason } => reason.clone(),
        Status::Proved => {
            let cert = certificate::emit(&result, &a.summary, &a.program.token_hash)?;
            let out = output.unwrap_or_else(|| source.with_extension("cert.json"));
            fs::write(&out, cert.to_json()).with_context(|| format!("{}: cannot write", out.display()))?;
            let p = result.p.as_ref().expect("proved results carry P");
            let radii: Vec<(String, f64)> =
                a.summary.head_layout.iter().enumerate().map(|(k, n)| (n.clone(), p[(k, k)].max(0.0).sqrt())).collect();
            if as_json {
                print_json(&json!({
                    "status": "proved",
                    "radius": radii.iter().map(|(n, r)| (n.clone(), json!(r))).collect::<serde_json::Map<String, serde_json::Value>>(),
                    "theta": result.theta,
                    "margin": result.margin,
                    "certificate": out.display().to_string(),
                }));
            } else {
                println!("PROVED");
                for (n, r) in &radii {
                    println!("  |{n}| <= {r:.6}");
                }
                println!("certificate written to {}", out.display());
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    if as_json {
        print_json(&json!({ "status": "failed", "reason": reason, "bestViolation": result.best_violation }));
    } else {
        println!("FAILED: {reason}");
    }
    Ok(ExitCode::from(1))
}

fn check(cert_path: &Path, source: &Path, as_json: bool) -> anyhow::Result<ExitCode> {
    let report = match certificate::verify_file(cert_path, source) {
        Ok(r) => r,
        Err(CertError::Io(e)) => return Err(anyhow!("{e}")),
        Err(e) => return Err(anyhow!("{}: {e}", cert_path.display())),
    };
    if as_json {
        print_json(&serde_json::to_value(&report).expect("report serializes"));
    } else {
        print!("{}", report.text());
    }
    Ok(if report.verdict.accepted() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_cert(path: &Path) -> anyhow::Result<Certificate> {
    Certificate::from_json(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn simulate_cmd(cert_path: &Path, source: &Path, opts: SimOptions, as_json: bool) -> anyhow::Result<ExitCode> {
    let cert = load_cert(cert_path)?;
    let src = read(source)?;
    let report = match simulate(&cert, &src, &opts) {
        Ok(r) => r,
        Err(SimError::Unchecked(why)) => {
            println!("refusing to simulate: {why}");
            return Ok(ExitCode::from(1));
        }
        Err(e) => return Err(anyhow!("{e}")),
    };
    if as_json {
        print_json(&serde_json::to_value(&report).expect("report serializes"));
    } else {
        print!("{}", report.text());
    }
    Ok(if report.within { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn roles_cmd(source: &Path, as_json: bool) -> anyhow::Result<ExitCode> {
    let src = read(source)?;
    let (_, analysis) = roles_only(&src).map_err(|e| frontend_error(source, &e))?;
    let roles = analysis.roles.by_source_name();
    if as_json {
        print_json(&analysis.roles.to_json());
    } else {
        for (name, role) in &roles {
            println!("{name:<12} {}", serde_json::to_value(role).expect("role serializes").as_str().unwrap_or(""));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn rules_cmd(source: &Path, synth: &SynthArgs, as_json: bool) -> anyhow::Result<ExitCode> {
    let a = compile(source, &synth.load()?)?;
    if as_json {
        print_json(&a.summary.to_json());
    } else {
        print!("{}", rules_text(&a));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Analyze { source, synth, output, dump_roles, dump_rules, json } => {
            analyze(&source, &synth, output, dump_roles, dump_rules, json)
        }
        Command::Check { certificate, source, json } => check(&certificate, &source, json),
        Command::Simulate { certificate, source, steps, trials, policy, seed, json } => {
            simulate_cmd(&certificate, &source, SimOptions { steps, trials, policy, seed }, json)
        }
        Command::Roles { source, json } => roles_cmd(&source, json),
        Command::Rules { source, synth, json } => rules_cmd(&source, &synth, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e:#}");
            ExitCode::from(2)
        }
    }
}
