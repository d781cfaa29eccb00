//! Proof certificates: emission and independent replay.
//!
//! Replay recompiles the rule chain from source and re-evaluates every step from
//! the claimed precondition. It never calls into [`crate::synthesis`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ellipsoid::{loewner_gap, loewner_leq, membership, Ellipsoid, Form, SymMatrix};
use crate::linalg::{self, Matrix};
use crate::pipeline::analyze_source;
use crate::semantics::{apply_rule, evaluate, resolve_param, LoopSummary, ParamSpec, RuleInstance};
use crate::synthesis::SynthesisResult;

pub const SCHEMA: &str = "ellipcert-v1";
pub const TOOL_VERSION: &str = concat!("ellipcert ", env!("CARGO_PKG_VERSION"));
/// Default relative tolerance for recomputed matrices.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Named matrix at one program point. Rows are stored explicitly so that a
/// non-symmetric claim is visible to the checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub layout: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl MatrixRecord {
    pub fn from_sym(layout: &[String], m: &SymMatrix) -> Self {
        MatrixRecord { layout: layout.to_vec(), matrix: m.to_rows() }
    }

    fn to_matrix(&self) -> Result<Matrix, String> {
        let n = self.layout.len();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(format!("matrix shape does not match {n} layout entries"));
        }
        let m = Matrix::from_rows(&self.matrix).unwrap_or_else(|| Matrix::zeros(0, 0));
        if !m.is_finite() {
            return Err("matrix has non-finite entries".into());
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub rule: RuleInstance,
    /// Absolute λ or ε used at this step.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<f64>,
    pub post: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Certificate {
    pub schema: String,
    pub tool_version: String,
    pub program_hash: String,
    /// Input channel → bound the invariant assumes.
    pub inputs: BTreeMap<u32, f64>,
    pub params: Vec<ParamSpec>,
    /// Raw search values, one per entry of `params`.
    pub theta: Vec<f64>,
    pub margin: f64,
    pub tolerance: f64,
    /// Accept a claimed post that contains the recomputed one.
    #[serde(default)]
    pub allow_looser: bool,
    pub init: Vec<f64>,
    pub loop_head: MatrixRecord,
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum CertError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed certificate: {0}")]
    Format(String),
    #[error("unsupported schema `{0}` (expected `{SCHEMA}`)")]
    Schema(String),
    #[error("cannot emit: {0}")]
    NotProved(String),
}

impl Certificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CertError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CertError::Format(e.to_string()))?;
        match v.get("schema").and_then(|s| s.as_str()) {
            Some(SCHEMA) => {}
            Some(other) => return Err(CertError::Schema(other.to_string())),
            None => return Err(CertError::Format("missing `schema` field".into())),
        }
        serde_json::from_value(v).map_err(|e| CertError::Format(e.to_string()))
    }
}

/// Builds the certificate for a proved result.
pub fn emit(result: &SynthesisResult, summary: &LoopSummary, program_hash: &str) -> Result<Certificate, CertError> {
    let p = match (&result.status, &result.p) {
        (crate::synthesis::Status::Proved, Some(p)) => p,
        (crate::synthesis::Status::Failed { reason }, _) => return Err(CertError::NotProved(reason.clone())),
        _ => return Err(CertError::NotProved("no invariant matrix".into())),
    };
    let results = evaluate(summary, &result.theta, p).map_err(|e| CertError::NotProved(e.to_string()))?;
    let steps = summary
        .rules
        .iter()
        .zip(results)
        .map(|(rule, r)| Step { rule: rule.clone(), value: r.value, post: MatrixRecord::from_sym(r.post.layout(), r.post.matrix()) })
        .collect();
    Ok(Certificate {
        schema: SCHEMA.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        program_hash: program_hash.to_string(),
        inputs: summary.inputs.clone(),
        params: summary.params.clone(),
        theta: result.theta.clone(),
        margin: result.margin,
        tolerance: DEFAULT_TOLERANCE,
        allow_looser: false,
        init: summary.init.clone(),
        loop_head: MatrixRecord::from_sym(&summary.head_layout, p),
        steps,
    })
}

/// Where replay stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Stage {
    Header,
    LoopHead,
    Step(usize),
    Containment,
    Initial,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Header => f.write_str("header"),
            Stage::LoopHead => f.write_str("loop head"),
            Stage::Step(k) => write!(f, "step {}", k + 1),
            Stage::Containment => f.write_str("fixpoint containment"),
            Stage::Initial => f.write_str("initial state"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected {
        stage: Stage,
        reason: String,
        /// Minimum eigenvalue of the violated PSD condition, or the largest deviation.
        #[serde(skip_serializing_if = "Option::is_none")]
        witness: Option<f64>,
    },
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    fn reject(stage: Stage, reason: impl Into<String>, witness: Option<f64>) -> Self {
        Verdict::Rejected { stage, reason: reason.into(), witness }
    }
}

/// Full replay outcome with one line per checked item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub verdict: Verdict,
    pub lines: Vec<String>,
}

impl Report {
    pub fn text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        match &self.verdict {
            Verdict::Accepted => out.push_str("ACCEPTED\n"),
            Verdict::Rejected { stage, reason, witness } => {
                out.push_str(&format!("REJECTED at {stage}: {reason}"));
                if let Some(w) = witness {
                    out.push_str(&format!(" (witness {w:e})"));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn symmetric(m: &Matrix, tol: f64) -> bool {
    m.asymmetry() <= tol * m.max_abs().max(f64::MIN_POSITIVE)
}

/// Rule equality ignoring source positions, which move with formatting.
fn same_rule(a: &RuleInstance, b: &RuleInstance) -> bool {
    let strip = |r: &RuleInstance| RuleInstance { location: None, ..r.clone() };
    strip(a) == strip(b)
}

/// Largest entrywise deviation relative to the recomputed matrix.
fn deviation(claimed: &Matrix, recomputed: &Matrix) -> f64 {
    let scale = recomputed.max_abs().max(f64::MIN_POSITIVE);
    claimed.sub(recomputed).max_abs() / scale
}

/// Re-checks `cert` against the source text `src`.
pub fn replay(cert: &Certificate, src: &str) -> Report {
    let mut lines = Vec::new();
    let verdict = replay_inner(cert, src, &mut lines);
    Report { verdict, lines }
}

fn replay_inner(cert: &Certificate, src: &str, lines: &mut Vec<String>) -> Verdict {
    let tol = cert.tolerance;
    if cert.schema != SCHEMA {
        return Verdict::reject(Stage::Header, format!("schema `{}`", cert.schema), None);
    }
    if !(tol.is_finite() && tol > 0.0 && tol <= 1e-6) {
        return Verdict::reject(Stage::Header, format!("tolerance {tol} outside (0, 1e-6]"), None);
    }
    if !(cert.margin.is_finite() && cert.margin >= 0.0) {
        return Verdict::reject(Stage::Header, format!("margin {} must be non-negative", cert.margin), None);
    }
    let analysis = match analyze_source(src, &cert.inputs) {
        Ok(a) => a,
        Err(e) => return Verdict::reject(Stage::Header, format!("source does not compile: {e}"), None),
    };
    if analysis.program.token_hash != cert.program_hash {
        return Verdict::reject(Stage::Header, "program hash mismatch", None);
    }
    lines.push(format!("program hash {} matches", &cert.program_hash[..cert.program_hash.len().min(16)]));
    let summary = &analysis.summary;
    if cert.params != summary.params {
        return Verdict::reject(Stage::Header, "parameter list differs from the compiled program", None);
    }
    if cert.theta.len() != summary.params.len() {
        return Verdict::reject(Stage::Header, "theta length differs from the parameter list", None);
    }
    for (spec, v) in summary.params.iter().zip(&cert.theta) {
        if !(v.is_finite() && *v >= spec.lo && *v <= spec.hi) {
            return Verdict::reject(Stage::Header, format!("{} = {v} outside [{}, {}]", spec.name, spec.lo, spec.hi), None);
        }
    }
    if cert.init != summary.init {
        return Verdict::reject(Stage::Header, "initial state differs from the source initializers", None);
    }
    if cert.steps.len() != summary.rules.len() {
        return Verdict::reject(
            Stage::Header,
            format!("{} steps claimed, program compiles to {}", cert.steps.len(), summary.rules.len()),
            None,
        );
    }

    // loop head
    if cert.loop_head.layout != summary.head_layout {
        return Verdict::reject(Stage::LoopHead, "layout differs from the loop-head state", None);
    }
    let head = match cert.loop_head.to_matrix() {
        Ok(m) => m,
        Err(e) => return Verdict::reject(Stage::LoopHead, e, None),
    };
    if !symmetric(&head, tol) {
        return Verdict::reject(Stage::LoopHead, "matrix is not symmetric", Some(head.asymmetry()));
    }
    if !linalg::is_psd_matrix(&head, crate::ellipsoid::PSD_TOL) {
        return Verdict::reject(Stage::LoopHead, "matrix is not PSD", Some(linalg::min_eigenvalue(&head)));
    }
    let head = SymMatrix::new(head).expect("checked square and finite");
    lines.push(format!("loop head [{}] is PSD", summary.head_layout.join(", ")));

    let mut pre = match Ellipsoid::new(Form::Reverse, head.clone(), summary.head_layout.clone()) {
        Ok(e) => e,
        Err(e) => return Verdict::reject(Stage::LoopHead, e.to_string(), None),
    };
    for (k, (step, rule)) in cert.steps.iter().zip(&summary.rules).enumerate() {
        let stage = Stage::Step(k);
        if !same_rule(&step.rule, rule) {
            return Verdict::reject(stage, format!("{:?} rule does not match the compiled statement", step.rule.kind), None);
        }
        let value = rule.param.map(|i| resolve_param(&summary.params[i], cert.theta[i], &pre));
        match (value, step.value) {
            (None, None) => {}
            (Some(v), Some(c)) if (v - c).abs() <= tol * v.abs().max(f64::MIN_POSITIVE) => {}
            _ => return Verdict::reject(stage, "parameter value does not match theta", None),
        }
        let recomputed = match apply_rule(rule, &pre, value) {
            Ok(e) => e,
            Err(e) => return Verdict::reject(stage, format!("rule does not apply: {e}"), None),
        };
        if step.post.layout != rule.post_layout {
            return Verdict::reject(stage, "post layout differs from the rule", None);
        }
        let claimed = match step.post.to_matrix() {
            Ok(m) => m,
            Err(e) => return Verdict::reject(stage, e, None),
        };
        if !symmetric(&claimed, tol) {
            return Verdict::reject(stage, "claimed post is not symmetric", Some(claimed.asymmetry()));
        }
        let dev = deviation(&claimed, recomputed.matrix());
        let claimed = SymMatrix::new(claimed).expect("checked square and finite");
        let how = if dev <= tol {
            "matches"
        } else if cert.allow_looser && loewner_leq(recomputed.matrix(), &claimed, 0.0).unwrap_or(false) {
            "contains recomputed"
        } else {
            return Verdict::reject(stage, format!("{:?} post deviates from the recomputed matrix", rule.kind), Some(dev));
        };
        let loc = rule.location.as_ref().map(|l| format!("{}:{}", l.line, l.col)).unwrap_or_default();
        lines.push(format!("step {} {:?} at {loc}: {how}", k + 1, rule.kind));
        pre = match Ellipsoid::new(Form::Reverse, claimed, step.post.layout.clone()) {
            Ok(e) => e,
            Err(e) => return Verdict::reject(stage, e.to_string(), None),
        };
    }

    // fixpoint
    if pre.layout() != summary.head_layout.as_slice() {
        return Verdict::reject(Stage::Containment, "loop end layout differs from the loop head", None);
    }
    match loewner_leq(pre.matrix(), &head, cert.margin) {
        Ok(true) => lines.push(format!("loop end contained in loop head with margin {:e}", cert.margin)),
        Ok(false) => {
            return Verdict::reject(
                Stage::Containment,
                "loop end not contained in loop head",
                Some(loewner_gap(pre.matrix(), &head, cert.margin)),
            )
        }
        Err(e) => return Verdict::reject(Stage::Containment, e.to_string(), None),
    }
    let head_e = Ellipsoid::new(Form::Reverse, head, summary.head_layout.clone()).expect("layout checked");
    match membership(&summary.init, &head_e) {
        Ok(true) => lines.push("initial state inside loop head".to_string()),
        Ok(false) => return Verdict::reject(Stage::Initial, "initial state outside loop head", None),
        Err(e) => return Verdict::reject(Stage::Initial, e.to_string(), None),
    }
    Verdict::Accepted
}

/// Reads both files and replays. I/O and format problems are errors, not verdicts.
pub fn verify_file(cert_path: &Path, src_path: &Path) -> Result<Report, CertError> {
    let text = std::fs::read_to_string(cert_path)?;
    let src = std::fs::read_to_string(src_path)?;
    let cert = Certificate::from_json(&text)?;
    Ok(replay(&cert, &src))
}

/// Every finite nonzero matrix entry a perturbation fuzz may target:
/// `(step, row, col)` with `None` for the loop head.
pub fn matrix_entries(cert: &Certificate) -> Vec<(Option<usize>, usize, usize)> {
    let mut out = Vec::new();
    let mut push = |which: Option<usize>, m: &MatrixRecord| {
        for (i, row) in m.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    out.push((which, i, j));
                }
            }
        }
    };
    push(None, &cert.loop_head);
    for (k, s) in cert.steps.iter().enumerate() {
        push(Some(k), &s.post);
    }
    out
}

/// Copy of `cert` with one entry scaled by `1 + rel`.
pub fn perturb(cert: &Certificate, entry: (Option<usize>, usize, usize), rel: f64) -> Certificate {
    let mut c = cert.clone();
    let (which, i, j) = entry;
    let m = match which {
        None => &mut c.loop_head,
        Some(k) => &mut c.steps[k].post,
    };
    m.matrix[i][j] *= 1.0 + rel;
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{synthesize, SynthesisConfig};

    const SCALAR: &str = "double x = 1000; double u, y; while (1) { u = read(0); x = 0.999*x + 2*u; y = x; write(y); }";

    fn cert_for(src: &str) -> Certificate {
        let a = analyze_source(src, &BTreeMap::from([(0, 1.0)])).unwrap();
        let r = synthesize(&a.summary, &SynthesisConfig::default());
        emit(&r, &a.summary, &a.program.token_hash).unwrap()
    }

    #[test]
    fn round_trip_accepts() {
        let c = cert_for(SCALAR);
        assert_eq!(c.steps.len(), 4);
        let back = Certificate::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let r = replay(&back, SCALAR);
        assert!(r.verdict.accepted(), "{}", r.text());
    }

    #[test]
    fn modified_source_is_rejected() {
        let c = cert_for(SCALAR);
        let r = replay(&c, &SCALAR.replace("0.999", "0.998"));
        assert!(matches!(r.verdict, Verdict::Rejected { stage: Stage::Header, .. }));
        assert!(r.text().contains("hash mismatch"));
    }

    #[test]
    fn whitespace_does_not_matter() {
        let c = cert_for(SCALAR);
        let r = replay(&c, &SCALAR.replace("; ", ";\n    // comment\n"));
        assert!(r.verdict.accepted(), "{}", r.text());
    }

    #[test]
    fn perturbed_entry_is_rejected() {
        let c = cert_for("double x = 1; while (1) { x = 0.5*x; }");
        assert_eq!(c.steps.len(), 1);
        for e in matrix_entries(&c) {
            assert!(!replay(&perturb(&c, e, 0.01), "double x = 1; while (1) { x = 0.5*x; }").verdict.accepted());
        }
    }

    #[test]
    fn looser_claims_are_opt_in() {
        let src = "double x = 1; while (1) { x = 0.5*x; }";
        let mut c = cert_for(src);
        c.steps[0].post.matrix[0][0] *= 1.001;
        assert!(!replay(&c, src).verdict.accepted());
        c.allow_looser = true;
        assert!(replay(&c, src).verdict.accepted());
    }

    #[test]
    fn format_errors() {
        assert!(matches!(Certificate::from_json("{"), Err(CertError::Format(_))));
        assert!(matches!(Certificate::from_json(r#"{"schema":"ellipcert-v0"}"#), Err(CertError::Schema(_))));
        assert!(matches!(Certificate::from_json(r#"{"schema":"ellipcert-v1"}"#), Err(CertError::Format(_))));
    }
}
