//! Loop-invariant synthesis: Lyapunov solves plus a grid search over the rule parameters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{loewner_gap, loewner_leq, membership, Ellipsoid, Form, SymMatrix};
use crate::linalg::{self, Lu, Matrix};
use crate::semantics::{evaluate, loop_map, LoopSummary, ParamKind, RuleKind};

/// Spectral radius at or above `1 − MARGINAL_TOL` counts as not stable.
pub const MARGINAL_TOL: f64 = 1e-9;
const KRON_MAX_DIM: usize = 30;
const FULL_GRID_LIMIT: usize = 4096;
const MAX_ITERATIONS: usize = 500;
const BLOWUP: f64 = 1e150;
/// Ranks a failed stability pre-check below any iterated candidate.
const RHO_PENALTY: f64 = 1e3;
/// Size of the coarse grid that seeds coordinate descent.
/// Iterations without a 1% improvement before a grid point is abandoned.
const STALL_WINDOW: usize = 12;
const COARSE_LIMIT: usize = 512;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("spectral radius {0} is not below 1")]
    SpectralRadiusTooLarge(f64),
    #[error("matrix is not square")]
    NotSquare,
    #[error("dimension mismatch")]
    DimensionMismatch,
    #[error("linear solve failed")]
    Singular,
}

/// Largest eigenvalue modulus. Closed forms for n ≤ 2, Schur decomposition otherwise.
pub fn spectral_radius(a: &Matrix) -> f64 {
    assert!(a.is_square());
    match a.rows() {
        0 => 0.0,
        1 => a[(0, 0)].abs(),
        2 => {
            let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            let tr = p + s;
            let det = p * s - q * r;
            let half = (p - s) / 2.0;
            let disc = half * half + q * r;
            if disc >= 0.0 {
                let root = disc.sqrt();
                (tr / 2.0 + root).abs().max((tr / 2.0 - root).abs())
            } else {
                det.abs().sqrt()
            }
        }
        n => {
            let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
            m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
        }
    }
}

/// Solves `P = A P Aᵗ + Q`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix, SynthesisError> {
    if !a.is_square() {
        return Err(SynthesisError::NotSquare);
    }
    let n = a.rows();
    if q.dim() != n {
        return Err(SynthesisError::DimensionMismatch);
    }
    let rho = spectral_radius(a);
    if !(rho < 1.0 - MARGINAL_TOL) {
        return Err(SynthesisError::SpectralRadiusTooLarge(rho));
    }
    if n == 0 {
        return Ok(q.clone());
    }
    let p = if n <= KRON_MAX_DIM {
        let k = linalg::kron(a, a);
        let lhs = Matrix::identity(n * n).sub(&k);
        let lu = Lu::new(&lhs).ok_or(SynthesisError::Singular)?;
        Matrix::from_row_major(n, n, lu.solve_vec(q.data()))
    } else {
        doubling(a, q)
    };
    SymMatrix::new(p).map_err(|_| SynthesisError::Singular)
}

/// `Σ Aᵏ Q (Aᵏ)ᵗ` by repeated squaring.
fn doubling(a: &Matrix, q: &SymMatrix) -> Matrix {
    let mut p = q.as_matrix().clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let next = p.add(&ak.congruence(&p));
        let delta = next.sub(&p).frobenius();
        p = next;
        ak = ak.mul(&ak);
        if delta <= 1e-16 * p.frobenius() {
            break;
        }
    }
    p
}

/// Containment margin: `"auto"` (relative to the invariant) or an absolute value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    Auto,
    Fixed(f64),
}

impl Margin {
    pub fn value(self, p: &Matrix) -> f64 {
        match self {
            Margin::Auto => 1e-6 * p.trace() / p.rows().max(1) as f64,
            Margin::Fixed(m) => m,
        }
    }
}

impl Serialize for Margin {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Margin::Auto => s.serialize_str("auto"),
            Margin::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Margin {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) if v >= 0.0 && v.is_finite() => Ok(Margin::Fixed(v)),
            Repr::Num(v) => Err(serde::de::Error::custom(format!("margin {v} must be a non-negative number"))),
            Repr::Str(s) if s == "auto" => Ok(Margin::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unknown margin `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InputSpec {
    /// `|u| ≤ bound`
    Rect { bound: f64 },
}

impl InputSpec {
    pub fn bound(self) -> f64 {
        match self {
            InputSpec::Rect { bound } => bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub inputs: BTreeMap<String, InputSpec>,
    pub grid: usize,
    pub refine: usize,
    pub margin: Margin,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            inputs: BTreeMap::from([("0".to_string(), InputSpec::Rect { bound: 1.0 })]),
            grid: 32,
            refine: 2,
            margin: Margin::Auto,
        }
    }
}

impl SynthesisConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: SynthesisConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.grid < 2 {
            return Err(format!("grid must be at least 2 (got {})", self.grid));
        }
        self.input_bounds().map(|_| ())
    }

    /// Channel → bound `U`.
    pub fn input_bounds(&self) -> Result<BTreeMap<u32, f64>, String> {
        let mut out = BTreeMap::new();
        for (k, spec) in &self.inputs {
            let ch: u32 = k.parse().map_err(|_| format!("input channel `{k}` is not a non-negative integer"))?;
            let b = spec.bound();
            if !(b > 0.0 && b.is_finite()) {
                return Err(format!("input {k}: bound {b} must be positive"));
            }
            out.insert(ch, b);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Proved,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub status: Status,
    /// Reverse-form loop-head matrix.
    pub p: Option<SymMatrix>,
    /// Raw search values, one per summary parameter.
    pub theta: Vec<f64>,
    /// Absolute parameter value used at each rule (λ or ε).
    pub values: Vec<Option<f64>>,
    pub margin: f64,
    pub best_violation: Option<f64>,
}

impl SynthesisResult {
    pub fn proved(&self) -> bool {
        self.status == Status::Proved
    }

    fn failed(reason: String, best_violation: Option<f64>) -> Self {
        SynthesisResult {
            status: Status::Failed { reason },
            p: None,
            theta: Vec::new(),
            values: Vec::new(),
            margin: 0.0,
            best_violation,
        }
    }
}

/// Membership of the declared initial state in the reverse ellipsoid `E†(P)`.
pub fn check_initial(init: &[f64], p: &SymMatrix) -> Result<bool, crate::ellipsoid::EllipsoidError> {
    let e = Ellipsoid::new(Form::Reverse, p.clone(), crate::ellipsoid::anon_layout(p.dim()))?;
    membership(init, &e)
}

/// `xᵗ P⁻¹ x`, or infinity when `P` is not invertible and `x ≠ 0`.
pub fn level(x: &[f64], p: &Matrix) -> f64 {
    if x.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    match Lu::new(p) {
        Some(lu) => {
            let y = lu.solve_vec(x);
            x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0)
        }
        None => f64::INFINITY,
    }
}

/// Affine chain `G(P) = F P Fᵗ + C`, with sector outputs replaced by zero.
pub struct Reduced {
    pub f: Matrix,
    pub c: Matrix,
    pub exact: bool,
}

/// Pushes `(M, D)` with `P ↦ M P Mᵗ + D` through the chain. Copy steps use
/// zero slack and sector outputs are zero, so for chains with those steps the
/// result is only the linear part.
pub fn reduce(summary: &LoopSummary, theta: &[f64]) -> Reduced {
    let n = summary.state_dim();
    let mut m = Matrix::identity(n);
    let mut d = Matrix::zeros(n, n);
    let mut exact = true;
    for rule in &summary.rules {
        match rule.kind {
            k if k.is_congruence() => {
                let a = rule.matrix_a.as_ref().expect("congruence rules carry a matrix");
                m = a.mul(&m);
                d = a.congruence(&d);
            }
            RuleKind::Intro | RuleKind::Product => {
                let u = rule.input.map_or(0.0, |i| i.bound);
                let (sm, sd, su) = match rule.param {
                    Some(k) => {
                        let l = theta[k];
                        (1.0 / l.sqrt(), 1.0 / l, u * u / (1.0 - l))
                    }
                    None => (1.0, 1.0, u * u),
                };
                m = Matrix::vstack(&m.scale(sm), &Matrix::zeros(1, n));
                d = Matrix::block_diag(&d.scale(sd), &Matrix::diag(&[su]));
            }
            RuleKind::CopyReverse => {
                exact = false;
                let a = rule.matrix_a.as_ref().expect("copy rules carry a matrix");
                let lift = Matrix::vstack(&Matrix::identity(a.cols()), a);
                m = lift.mul(&m);
                d = lift.congruence(&d);
            }
            RuleKind::SectorReverse => {
                exact = false;
                m = Matrix::vstack(&m, &Matrix::zeros(1, n));
                d = Matrix::block_diag(&d, &Matrix::zeros(1, 1));
            }
            _ => exact = false,
        }
    }
    Reduced { f: m, c: d, exact }
}

fn fmt_radius(rho: f64) -> String {
    if (rho - 1.0).abs() <= MARGINAL_TOL {
        "1.0".to_string()
    } else {
        format!("{rho:.6}")
    }
}

/// Search grid for one parameter: logit-spaced for λ, log-spaced for ε.
fn to_unit(kind: ParamKind, v: f64) -> f64 {
    match kind {
        ParamKind::Lambda => (v / (1.0 - v)).ln(),
        ParamKind::EpsY | ParamKind::EpsU => v.ln(),
    }
}

fn from_unit(kind: ParamKind, t: f64) -> f64 {
    match kind {
        ParamKind::Lambda => 1.0 / (1.0 + (-t).exp()),
        ParamKind::EpsY | ParamKind::EpsU => t.exp(),
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    theta: Vec<f64>,
    p: Option<SymMatrix>,
    margin: f64,
    /// Objective (trace) when feasible.
    trace: f64,
    /// Relative violation when infeasible.
    violation: f64,
}

impl Candidate {
    fn infeasible(theta: &[f64], violation: f64) -> Self {
        Candidate { theta: theta.to_vec(), p: None, margin: 0.0, trace: f64::INFINITY, violation }
    }

    fn better(&self, other: &Candidate) -> bool {
        match (self.p.is_some(), other.p.is_some()) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.trace < other.trace,
            (false, false) => self.violation < other.violation,
        }
    }
}

/// Verifies a candidate against the actual rule chain.
fn verify(summary: &LoopSummary, theta: &[f64], p: &SymMatrix, margin: Margin) -> Result<f64, f64> {
    let eta = margin.value(p);
    let scale = p.trace() / p.dim().max(1) as f64;
    let g = match loop_map(summary, theta, p) {
        Ok(g) => g,
        Err(_) => return Err(f64::INFINITY),
    };
    let contained = loewner_leq(&g, p, eta).unwrap_or(false);
    let lvl = level(&summary.init, p);
    let init_ok = check_initial(&summary.init, p).unwrap_or(false);
    if contained && init_ok {
        Ok(eta)
    } else {
        let gap = (-loewner_gap(&g, p, eta)).max(0.0) / scale.max(f64::MIN_POSITIVE);
        Err(gap + (lvl - 1.0).max(0.0))
    }
}

fn attempt_linear(summary: &LoopSummary, theta: &[f64], margin: Margin) -> Candidate {
    let red = reduce(summary, theta);
    let n = summary.state_dim();
    let rho = spectral_radius(&red.f);
    if !(rho < 1.0 - MARGINAL_TOL) {
        return Candidate::infeasible(theta, RHO_PENALTY * rho);
    }
    let Ok(c) = SymMatrix::new(red.c.clone()) else { return Candidate::infeasible(theta, f64::INFINITY) };
    let (Ok(p0), Ok(ph)) = (solve_discrete_lyapunov(&red.f, &c), solve_discrete_lyapunov(&red.f, &SymMatrix::identity(n)))
    else {
        return Candidate::infeasible(theta, f64::INFINITY);
    };
    let nf = n.max(1) as f64;
    // P = P0 + s·Ph gives G(P) = P − s·I exactly.
    let s_min = match margin {
        Margin::Auto => {
            let k = 1e-6 * ph.trace() / nf;
            if k >= 1.0 {
                return Candidate::infeasible(theta, k);
            }
            (1e-6 * p0.trace() / nf / (1.0 - k)).max(1e-300)
        }
        Margin::Fixed(m) => m,
    };
    let mut s = (s_min * 2.0).max(1e-12 * (p0.trace() / nf).max(f64::MIN_POSITIVE));
    let mut best_violation = f64::INFINITY;
    for _ in 0..6 {
        let mut p = p0.add(&ph.scale(s));
        let lvl = level(&summary.init, &p);
        if lvl > 1.0 {
            if !lvl.is_finite() {
                s *= 10.0;
                continue;
            }
            p = p.scale(lvl * (1.0 + 1e-7));
        }
        let Ok(p) = SymMatrix::new(p) else { break };
        match verify(summary, theta, &p, margin) {
            Ok(eta) => {
                let trace = p.trace();
                return Candidate { theta: theta.to_vec(), p: Some(p), margin: eta, trace, violation: 0.0 };
            }
            Err(v) => best_violation = best_violation.min(v),
        }
        s *= 10.0;
    }
    Candidate::infeasible(theta, best_violation)
}

/// Scales `p` up until the initial state is inside, then verifies.
fn check_scaled(summary: &LoopSummary, theta: &[f64], p: &Matrix, margin: Margin) -> Result<Candidate, f64> {
    let lvl = level(&summary.init, p);
    if !lvl.is_finite() {
        return Err(f64::INFINITY);
    }
    let p = if lvl > 1.0 { p.scale(lvl * (1.0 + 1e-7)) } else { p.clone() };
    let ps = SymMatrix::new(p).map_err(|_| f64::INFINITY)?;
    let eta = verify(summary, theta, &ps, margin)?;
    let trace = ps.trace();
    Ok(Candidate { theta: theta.to_vec(), p: Some(ps), margin: eta, trace, violation: 0.0 })
}

/// Smallest feasible multiple of `p` (doubling, then bisection in log scale).
fn ray_search(summary: &LoopSummary, theta: &[f64], p: &Matrix, margin: Margin) -> Option<Candidate> {
    let mut hi = 1.0;
    let mut found = None;
    for _ in 0..60 {
        hi *= 2.0;
        if let Ok(c) = check_scaled(summary, theta, &p.scale(hi), margin) {
            found = Some(c);
            break;
        }
    }
    let mut best = found?;
    let mut lo = hi / 2.0;
    for _ in 0..12 {
        let mid = (lo * hi).sqrt();
        match check_scaled(summary, theta, &p.scale(mid), margin) {
            Ok(c) => {
                hi = mid;
                best = c;
            }
            Err(_) => lo = mid,
        }
    }
    Some(best)
}

/// Value iteration `P ← G(P) + 2ηI` on the shape. The chain is affine in `P` up
/// to the ε scaling, so `G(αP) ≈ αH(P) + C`; whenever `H(P) ≺ P` a large enough
/// multiple of `P` is feasible and a ray search finds it.
fn attempt_general(summary: &LoopSummary, theta: &[f64], margin: Margin) -> Candidate {
    let red = reduce(summary, theta);
    let n = summary.state_dim();
    let nf = n.max(1) as f64;
    let rho = spectral_radius(&red.f);
    if !(rho < 1.0 - MARGINAL_TOL) {
        return Candidate::infeasible(theta, RHO_PENALTY * rho);
    }
    let c = red.c.symmetrized();
    let delta = (c.trace() / nf * 1e-3).max(1e-9);
    let start = SymMatrix::new(c.add_diag(delta)).ok().and_then(|q| solve_discrete_lyapunov(&red.f, &q).ok());
    let Some(mut p) = start.map(SymMatrix::into_matrix) else { return Candidate::infeasible(theta, f64::INFINITY) };
    let mut best = f64::INFINITY;
    let mut last_improvement = 0;
    for it in 0..MAX_ITERATIONS {
        if !p.is_finite() || p.max_abs() > BLOWUP || p.max_abs() < 1.0 / BLOWUP {
            break;
        }
        match check_scaled(summary, theta, &p, margin) {
            Ok(c) => return c,
            Err(v) => {
                if v < best * 0.99 {
                    best = v;
                    last_improvement = it;
                } else if it - last_improvement > STALL_WINDOW {
                    break;
                }
            }
        }
        let Ok(ps) = SymMatrix::new(p.clone()) else { break };
        let Ok(g) = loop_map(summary, theta, &ps) else { break };
        let twice = SymMatrix::new(p.scale(2.0)).expect("finite");
        let probe = it.is_power_of_two() || it == 0;
        if let (true, Ok(g2)) = (probe, loop_map(summary, theta, &twice)) {
            let h = g2.sub(&g);
            if linalg::min_eigenvalue(&p.sub(&h).symmetrized()) > 0.0 {
                if let Some(c) = ray_search(summary, theta, &p, margin) {
                    return c;
                }
            }
        }
        let eta = margin.value(&p);
        p = g.add_diag(2.0 * eta).symmetrized();
    }
    Candidate::infeasible(theta, best)
}

fn attempt(summary: &LoopSummary, theta: &[f64], margin: Margin, linear: bool) -> Candidate {
    if linear {
        attempt_linear(summary, theta, margin)
    } else {
        attempt_general(summary, theta, margin)
    }
}

fn axis(kind: ParamKind, lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (to_unit(kind, lo), to_unit(kind, hi));
    (0..points)
        .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
        .collect()
}

fn best_of(cands: Vec<Candidate>) -> Option<Candidate> {
    // deterministic: ties keep the earliest grid point
    cands.into_iter().reduce(|best, c| if c.better(&best) { c } else { best })
}

/// Grid search (full grid or coordinate descent) in the transformed coordinates.
fn search(
    summary: &LoopSummary,
    bounds: &[(f64, f64)],
    cfg: &SynthesisConfig,
    linear: bool,
    center: Option<&[f64]>,
) -> Option<Candidate> {
    let kinds: Vec<ParamKind> = summary.params.iter().map(|p| p.kind).collect();
    let d = kinds.len();
    let g = cfg.grid;
    let axes: Vec<Vec<f64>> = (0..d).map(|k| axis(kinds[k], bounds[k].0, bounds[k].1, g)).collect();
    let to_theta = |t: &[f64]| -> Vec<f64> { t.iter().zip(&kinds).map(|(t, k)| from_unit(*k, *t)).collect() };
    let full_grid = |axes: &[Vec<f64>]| -> Option<Candidate> {
        let g = axes.first().map_or(1, Vec::len);
        let total = g.pow(d as u32);
        let cands: Vec<Candidate> = (0..total)
            .into_par_iter()
            .map(|mut idx| {
                let mut t = vec![0.0; d];
                for k in 0..d {
                    t[k] = axes[k][idx % g];
                    idx /= g;
                }
                attempt(summary, &to_theta(&t), cfg.margin, linear)
            })
            .collect();
        best_of(cands)
    };
    if g.checked_pow(d as u32).is_some_and(|n| n <= FULL_GRID_LIMIT) {
        return full_grid(&axes);
    }
    // coordinate descent, seeded by a coarse full grid
    let mut best = match center {
        Some(c) => attempt(summary, c, cfg.margin, linear),
        None => {
            let gc = ((COARSE_LIMIT as f64).powf(1.0 / d as f64).floor() as usize).clamp(2, g);
            let coarse: Vec<Vec<f64>> = (0..d).map(|k| axis(kinds[k], bounds[k].0, bounds[k].1, gc)).collect();
            full_grid(&coarse)?
        }
    };
    let mut t: Vec<f64> = best.theta.iter().zip(&kinds).map(|(v, k)| to_unit(*k, *v)).collect();
    for _sweep in 0..4 {
        let before = best.clone();
        for k in 0..d {
            let cands: Vec<Candidate> = axes[k]
                .par_iter()
                .map(|v| {
                    let mut tt = t.clone();
                    tt[k] = *v;
                    attempt(summary, &to_theta(&tt), cfg.margin, linear)
                })
                .collect();
            if let Some(c) = best_of(cands) {
                if c.better(&best) {
                    t = c.theta.iter().zip(&kinds).map(|(v, kind)| to_unit(*kind, *v)).collect();
                    best = c;
                }
            }
        }
        if !best.better(&before) {
            break;
        }
    }
    Some(best)
}

/// Searches the parameters of `summary` for an invariant at the loop head.
pub fn synthesize(summary: &LoopSummary, cfg: &SynthesisConfig) -> SynthesisResult {
    let n = summary.state_dim();
    if n == 0 {
        return SynthesisResult::failed("loop has no state variables".into(), None);
    }
    // linear part at λ = 1: no λ choice can fix an unstable or marginal core
    let ones: Vec<f64> = summary.params.iter().map(|p| if p.kind == ParamKind::Lambda { 1.0 } else { p.lo }).collect();
    let core = reduce(summary, &ones);
    let rho = spectral_radius(&core.f);
    if rho >= 1.0 - MARGINAL_TOL {
        let word = if rho <= 1.0 + MARGINAL_TOL { "marginal" } else { "unstable" };
        return SynthesisResult::failed(format!("{word} spectral radius {}", fmt_radius(rho)), Some(rho - 1.0));
    }
    let linear = core.exact;
    let mut bounds: Vec<(f64, f64)> = summary.params.iter().map(|p| (p.lo, p.hi)).collect();
    let mut best: Option<Candidate> = None;
    for level in 0..=cfg.refine {
        let center = best.as_ref().map(|b| b.theta.clone());
        let Some(c) = search(summary, &bounds, cfg, linear, center.as_deref()) else { break };
        let improved = best.as_ref().is_none_or(|b| c.better(b));
        if improved {
            best = Some(c);
        }
        if level == cfg.refine {
            break;
        }
        // shrink each axis to the neighbouring cells of the best point
        let b = best.as_ref().expect("set above");
        bounds = summary
            .params
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let (lo, hi) = (to_unit(spec.kind, bounds[k].0), to_unit(spec.kind, bounds[k].1));
                let step = (hi - lo) / (cfg.grid - 1) as f64;
                let t = to_unit(spec.kind, b.theta[k]);
                let (glo, ghi) = (to_unit(spec.kind, spec.lo), to_unit(spec.kind, spec.hi));
                (from_unit(spec.kind, (t - step).max(glo)), from_unit(spec.kind, (t + step).min(ghi)))
            })
            .collect();
    }
    match best {
        Some(Candidate { theta, p: Some(p), margin, .. }) => {
            let values = evaluate(summary, &theta, &p)
                .map(|steps| steps.into_iter().map(|s| s.value).collect())
                .unwrap_or_default();
            SynthesisResult { status: Status::Proved, p: Some(p), theta, values, margin, best_violation: None }
        }
        Some(c) => SynthesisResult::failed(
            format!("no feasible parameters on the search grid (best relative violation {:.3e})", c.violation),
            Some(c.violation),
        ),
        None => SynthesisResult::failed("empty search grid".into(), None),
    }
}
