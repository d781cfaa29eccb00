//! Concrete simulation of the analyzed loop against a certified invariant.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::certificate::{replay, Certificate, Verdict};
use crate::frontend::ast::BinOp;
use crate::frontend::{unroll::slot_of, Expr, NodeKind, Slot};
use crate::linalg::{self, Matrix};
use crate::pipeline::analyze_source;
use crate::semantics::{initial_store, sector_fn};

/// Largest accepted `steps × trials`.
pub const MAX_WORK: u64 = 1_000_000_000;
/// Tolerance on the Lyapunov level.
pub const LEVEL_TOL: f64 = 1e-6;
/// Reads per iteration up to which the adversarial policy enumerates all signs.
const EXHAUSTIVE_READS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// `u ~ U[-bound, bound]`
    Uniform,
    /// `u = +bound`
    Extremal,
    /// Signs chosen to maximize the next loop-head level.
    AdversarialSign,
    Zero,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Uniform, Policy::Extremal, Policy::AdversarialSign, Policy::Zero];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Uniform => "uniform",
            Policy::Extremal => "extremal",
            Policy::AdversarialSign => "adversarial-sign",
            Policy::Zero => "zero",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Policy::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected uniform, extremal, adversarial-sign or zero)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub steps: u64,
    pub trials: u64,
    pub policy: Policy,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { steps: 10_000, trials: 8, policy: Policy::AdversarialSign, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("certificate rejected: {0}")]
    Unchecked(String),
    #[error("steps x trials = {0} exceeds {MAX_WORK}")]
    TooMuchWork(u128),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub policy: Policy,
    pub steps: u64,
    pub trials: u64,
    pub seed: u64,
    /// `max xᵗ P⁻¹ x` over all trials and loop-head visits.
    pub max_level: f64,
    pub worst_trial: u64,
    pub worst_step: u64,
    /// Level never increased along any trial.
    pub nonincreasing: bool,
    pub within: bool,
}

impl SimReport {
    pub fn text(&self) -> String {
        format!(
            "policy {}: {} trials x {} steps (seed {})\nmax level {:.9} at trial {} step {}\n{}\n",
            self.policy,
            self.trials,
            self.steps,
            self.seed,
            self.max_level,
            self.worst_trial,
            self.worst_step,
            if self.within { "INSIDE invariant" } else { "OUTSIDE invariant" }
        )
    }
}

/// Expression over slot indices.
#[derive(Debug, Clone)]
enum SExpr {
    Num(f64),
    Slot(usize),
    Neg(Box<SExpr>),
    Bin(BinOp, Box<SExpr>, Box<SExpr>),
    Sector(Box<SExpr>),
}

impl SExpr {
    fn eval(&self, store: &[f64]) -> f64 {
        match self {
            SExpr::Num(v) => *v,
            SExpr::Slot(k) => store[*k],
            SExpr::Neg(a) => -a.eval(store),
            SExpr::Sector(a) => sector_fn("", a.eval(store)),
            SExpr::Bin(op, a, b) => {
                let (a, b) = (a.eval(store), b.eval(store));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Instr {
    Set(usize, SExpr),
    /// `(slot, read number within the iteration, bound)`
    Read(usize, usize, f64),
}

/// The loop body lowered to slot operations, plus the invariant it is checked against.
#[derive(Debug, Clone)]
pub struct Machine {
    body: Vec<Instr>,
    reads: usize,
    init: Vec<f64>,
    head: Vec<usize>,
    /// Eigenpairs of the loop-head matrix, for `xᵗ P⁺ x`.
    eig: (Vec<f64>, Matrix),
}

impl Machine {
    /// Lowers the program `src` and takes the invariant from `cert` (which must replay).
    pub fn new(cert: &Certificate, src: &str) -> Result<Self, SimError> {
        let report = replay(cert, src);
        if let Verdict::Rejected { .. } = report.verdict {
            return Err(SimError::Unchecked(report.text().trim_end().lines().last().unwrap_or("").to_string()));
        }
        let a = analyze_source(src, &cert.inputs).map_err(|e| SimError::Setup(e.to_string()))?;
        let store0 = initial_store(&a.program);
        let mut slots: Vec<Slot> = store0.keys().cloned().collect();
        slots.sort();
        let index: HashMap<Slot, usize> = slots.iter().cloned().enumerate().map(|(k, s)| (s, k)).collect();
        let init: Vec<f64> = slots.iter().map(|s| store0[s]).collect();
        let slot = |lv: &crate::frontend::LValue| -> Result<usize, SimError> {
            slot_of(lv)
                .and_then(|s| index.get(&s).copied())
                .ok_or_else(|| SimError::Setup(format!("`{}` has no concrete slot", lv.name)))
        };
        fn lower(e: &Expr, slot: &dyn Fn(&crate::frontend::LValue) -> Result<usize, SimError>) -> Result<SExpr, SimError> {
            Ok(match e {
                Expr::Num(v) => SExpr::Num(*v),
                Expr::Var(lv) => SExpr::Slot(slot(lv)?),
                Expr::Neg(a) => SExpr::Neg(Box::new(lower(a, slot)?)),
                Expr::Call(_, a) => SExpr::Sector(Box::new(lower(a, slot)?)),
                Expr::Bin(op, a, b) => SExpr::Bin(*op, Box::new(lower(a, slot)?), Box::new(lower(b, slot)?)),
            })
        }
        let mut body = Vec::new();
        let mut reads = 0;
        for id in a.unrolled.loop_body() {
            match &a.unrolled.node(id).kind {
                NodeKind::Assign { lhs, rhs } => body.push(Instr::Set(slot(lhs)?, lower(rhs, &slot)?)),
                NodeKind::Read { lhs, channel } => {
                    let bound = *cert
                        .inputs
                        .get(channel)
                        .ok_or_else(|| SimError::Setup(format!("no bound for input channel {channel}")))?;
                    body.push(Instr::Read(slot(lhs)?, reads, bound));
                    reads += 1;
                }
                _ => {}
            }
        }
        let by_name: BTreeMap<String, usize> = slots.iter().enumerate().map(|(k, s)| (s.to_string(), k)).collect();
        let head = cert
            .loop_head
            .layout
            .iter()
            .map(|n| by_name.get(n).copied().ok_or_else(|| SimError::Setup(format!("loop-head slot `{n}` is not a variable"))))
            .collect::<Result<Vec<_>, _>>()?;
        let p = Matrix::from_rows(&cert.loop_head.matrix).ok_or_else(|| SimError::Setup("bad loop-head matrix".into()))?;
        let eig = linalg::sym_eigen(&p.symmetrized());
        Ok(Machine { body, reads, init, head, eig })
    }

    /// `xᵗ P⁺ x` for the loop-head slots; infinite off the ellipsoid's span.
    pub fn level(&self, store: &[f64]) -> f64 {
        let (vals, vecs) = &self.eig;
        let n = vals.len();
        let top = vals.iter().cloned().fold(0.0, f64::max);
        let x: Vec<f64> = self.head.iter().map(|k| store[*k]).collect();
        let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut lvl = 0.0;
        for j in 0..n {
            let c: f64 = (0..n).map(|i| vecs[(i, j)] * x[i]).sum();
            if vals[j] > 1e-12 * top {
                lvl += c * c / vals[j];
            } else if c.abs() > 1e-9 * xn.max(1.0) {
                return f64::INFINITY;
            }
        }
        lvl
    }

    fn run_body(&self, store: &mut [f64], inputs: &[f64]) {
        for ins in &self.body {
            match ins {
                Instr::Set(k, e) => store[*k] = e.eval(store),
                Instr::Read(k, r, _) => store[*k] = inputs[*r],
            }
        }
    }

    fn bounds(&self) -> Vec<f64> {
        self.body
            .iter()
            .filter_map(|i| match i {
                Instr::Read(_, _, b) => Some(*b),
                _ => None,
            })
            .collect()
    }

    fn level_after(&self, store: &[f64], inputs: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(store);
        self.run_body(scratch, inputs);
        self.level(scratch)
    }

    fn choose_inputs(&self, policy: Policy, store: &[f64], bounds: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match policy {
            Policy::Zero => out.fill(0.0),
            Policy::Extremal => out.copy_from_slice(bounds),
            Policy::Uniform => {
                for (o, b) in out.iter_mut().zip(bounds) {
                    *o = rng.gen_range(-b..=*b);
                }
            }
            Policy::AdversarialSign => {
                let mut scratch = Vec::with_capacity(store.len());
                let mut trial = bounds.to_vec();
                if self.reads <= EXHAUSTIVE_READS {
                    let mut best = f64::NEG_INFINITY;
                    for mask in 0u32..(1 << self.reads) {
                        for (r, b) in bounds.iter().enumerate() {
                            trial[r] = if mask >> r & 1 == 1 { -b } else { *b };
                        }
                        let l = self.level_after(store, &trial, &mut scratch);
                        if l > best {
                            best = l;
                            out.copy_from_slice(&trial);
                        }
                    }
                } else {
                    for r in 0..self.reads {
                        trial[r] = bounds[r];
                        let up = self.level_after(store, &trial, &mut scratch);
                        trial[r] = -bounds[r];
                        let down = self.level_after(store, &trial, &mut scratch);
                        if up >= down {
                            trial[r] = bounds[r];
                        }
                    }
                    out.copy_from_slice(&trial);
                }
            }
        }
    }

    fn trial(&self, opts: &SimOptions, trial: u64) -> (f64, u64, bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(trial);
        let bounds = self.bounds();
        let mut inputs = vec![0.0; self.reads];
        let mut store = self.init.clone();
        let mut last = self.level(&store);
        let (mut max, mut at) = (last, 0);
        let mut nonincreasing = true;
        for step in 1..=opts.steps {
            self.choose_inputs(opts.policy, &store, &bounds, &mut rng, &mut inputs);
            self.run_body(&mut store, &inputs);
            let l = self.level(&store);
            if l > last * (1.0 + 1e-12) + 1e-300 {
                nonincreasing = false;
            }
            if l > max || l.is_nan() {
                max = if l.is_nan() { f64::INFINITY } else { l };
                at = step;
            }
            last = l;
        }
        (max, at, nonincreasing)
    }

    pub fn run(&self, opts: &SimOptions) -> Result<SimReport, SimError> {
        let work = opts.steps as u128 * opts.trials as u128;
        if work > MAX_WORK as u128 {
            return Err(SimError::TooMuchWork(work));
        }
        let results: Vec<(f64, u64, bool)> = (0..opts.trials).into_par_iter().map(|t| self.trial(opts, t)).collect();
        let (mut max_level, mut worst_trial, mut worst_step) = (0.0, 0, 0);
        for (t, (m, s, _)) in results.iter().enumerate() {
            if *m > max_level {
                (max_level, worst_trial, worst_step) = (*m, t as u64, *s);
            }
        }
        Ok(SimReport {
            policy: opts.policy,
            steps: opts.steps,
            trials: opts.trials,
            seed: opts.seed,
            max_level,
            worst_trial,
            worst_step,
            nonincreasing: results.iter().all(|r| r.2),
            within: max_level <= 1.0 + LEVEL_TOL,
        })
    }
}

/// Replays `cert`, then simulates.
pub fn simulate(cert: &Certificate, src: &str, opts: &SimOptions) -> Result<SimReport, SimError> {
    Machine::new(cert, src)?.run(opts)
}
