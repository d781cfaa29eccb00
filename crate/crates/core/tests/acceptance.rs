//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ellipcert_core::certificate::{self, matrix_entries, perturb, Certificate};
use ellipcert_core::ellipsoid::{self as ell, ConvexCombinator, Ellipsoid, Form, SymMatrix};
use ellipcert_core::pipeline::{analyze_source, roles_only};
use ellipcert_core::roles::Role;
use ellipcert_core::sim::{simulate, Policy, SimOptions};
use ellipcert_core::synthesis::{solve_discrete_lyapunov, synthesize, Status, SynthesisConfig};
use ellipcert_core::Matrix;

const TOL: f64 = 1e-9;
const INSTANCES: usize = 10_000;
const POINTS: usize = 8;

type Outcome = Result<String, String>;

// ---------------------------------------------------------------- oracle helpers

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_row_major(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec())
}

fn sym(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::new(from_na(m)).expect("finite")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    uniform(rng, lo.ln(), hi.ln()).exp()
}

fn gaussianish(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -1.0, 1.0))
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let g = gaussianish(rng, n, n);
        if g.determinant().abs() > 1e-3 {
            return g.qr().q();
        }
    }
}

/// Random PSD matrix with eigenvalues in [0.1, 10]; one eigenvalue is zero when `singular`.
fn random_psd(rng: &mut ChaCha8Rng, n: usize, singular: bool) -> DMatrix<f64> {
    let v = orthogonal(rng, n);
    let mut lam: Vec<f64> = (0..n).map(|_| log_uniform(rng, 0.1, 10.0)).collect();
    if singular {
        lam[rng.gen_range(0..n)] = 0.0;
    }
    let m = &v * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lam)) * v.transpose();
    (&m + m.transpose()) * 0.5
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_psd(rng, n, false)
}

fn maybe_singular(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let singular = rng.gen_bool(0.2);
    random_psd(rng, n, singular)
}

fn direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return d.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// Radius in the unit ball: half the samples sit on the sphere.
fn radius(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        rng.gen::<f64>().powf(1.0 / n as f64)
    }
}

fn quad(p: &DMatrix<f64>, x: &[f64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(x);
    (v.transpose() * p * &v)[(0, 0)]
}

/// Point of `E(P)` obtained by scaling a random direction.
fn sample_direct(rng: &mut ChaCha8Rng, p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let d = direction(rng, n);
    let r = radius(rng, n) / quad(p, &d).sqrt();
    d.into_iter().map(|v| v * r).collect()
}

/// Point of `E(P₁) ∩ … ∩ E(Pₖ)`.
fn sample_intersection(rng: &mut ChaCha8Rng, ps: &[DMatrix<f64>]) -> Vec<f64> {
    let n = ps[0].nrows();
    let d = direction(rng, n);
    let level = ps.iter().map(|p| quad(p, &d)).fold(0.0, f64::max);
    let r = radius(rng, n) / level.sqrt();
    d.into_iter().map(|v| v * r).collect()
}

/// Point of `E†(P)`: `V·diag(√λ)·z` with `|z| ≤ 1`.
fn sample_reverse(rng: &mut ChaCha8Rng, p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let eig = p.clone().symmetric_eigen();
    let z: Vec<f64> = direction(rng, n).into_iter().map(|v| v * radius(rng, n)).collect();
    let scaled = nalgebra::DVector::from_iterator(n, (0..n).map(|k| eig.eigenvalues[k].max(0.0).sqrt() * z[k]));
    (&eig.eigenvectors * scaled).iter().copied().collect()
}

fn in_direct(p: &DMatrix<f64>, x: &[f64]) -> bool {
    quad(p, x) <= 1.0 + TOL
}

fn in_reverse(p: &DMatrix<f64>, x: &[f64]) -> bool {
    let n = x.len();
    let mut b = DMatrix::zeros(n + 1, n + 1);
    b[(0, 0)] = 1.0;
    for i in 0..n {
        b[(0, i + 1)] = x[i];
        b[(i + 1, 0)] = x[i];
    }
    b.view_mut((1, 1), (n, n)).copy_from(p);
    let scale = p.amax().max(1.0);
    b.symmetric_eigen().eigenvalues.min() >= -TOL * scale
}

fn contains(e: &Ellipsoid, x: &[f64]) -> bool {
    let p = to_na(e.matrix().as_matrix());
    match e.form() {
        Form::Direct => in_direct(&p, x),
        Form::Reverse => in_reverse(&p, x),
    }
}

fn apply(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * nalgebra::DVector::from_column_slice(x)).iter().copied().collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> ConvexCombinator {
    let w: Vec<f64> = (0..k).map(|_| uniform(rng, 0.05, 1.0)).collect();
    let s: f64 = w.iter().sum();
    ConvexCombinator::new(w.into_iter().map(|v| v / s).collect()).expect("simplex weights")
}

fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    loop {
        let a = gaussianish(rng, n, n);
        let sv = a.clone().singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < 100.0 {
            return a;
        }
    }
}

/// `|f(x)| ≤ |x|` sector functions: component, negated component, sine, scaled norm.
fn sector_value(rng: &mut ChaCha8Rng, x: &[f64]) -> f64 {
    let k = rng.gen_range(0..x.len());
    match rng.gen_range(0..4) {
        0 => x[k],
        1 => -x[k],
        2 => x[k].sin(),
        _ => uniform(rng, -1.0, 1.0) * x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

// ---------------------------------------------------------------- criterion 1

/// One randomized instance: builds the input, applies the rule and checks sampled
/// concrete successors. Returns the number of violations.
type Trial = fn(&mut ChaCha8Rng) -> Result<usize, String>;

fn count_outside(points: impl IntoIterator<Item = Vec<f64>>, e: &Ellipsoid) -> usize {
    points.into_iter().filter(|p| !contains(e, p)).count()
}

fn trial_conversion(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.gen_range(1..=4);
    let p = random_pd(rng, n);
    let d = Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?;
    let r = ell::direct_to_reverse(&d).map_err(|e| e.to_string())?;
    let back = ell::reverse_to_direct(&Ellipsoid::reverse(sym(&p)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let fwd = count_outside((0..POINTS / 2).map(|_| sample_direct(rng, &p)), &r);
    let bwd = count_outside((0..POINTS / 2).map(|_| sample_reverse(rng, &p)), &back);
    Ok(fwd + bwd)
}

fn trial_affine_image(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (n, m) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let p = maybe_singular(rng, n);
    let a = gaussianish(rng, m, n) * 2.0;
    let e = Ellipsoid::reverse(sym(&p)).map_err(|e| e.to_string())?;
    let out = ell::affine_image_reverse(&e, &from_na(&a), None).map_err(|e| e.to_string())?;
    Ok(count_outside((0..POINTS).map(|_| apply(&a, &sample_reverse(rng, &p))), &out))
}

fn trial_convex_combination(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (n, k) = (rng.gen_range(1..=4), rng.gen_range(1..=3));
    let ps: Vec<DMatrix<f64>> = (0..k).map(|_| random_pd(rng, n)).collect();
    let es: Vec<Ellipsoid> = ps.iter().map(|p| Ellipsoid::direct(sym(p))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let out = ell::convex_combination(&es, &simplex(rng, k)).map_err(|e| e.to_string())?;
    Ok(count_outside((0..POINTS).map(|_| sample_intersection(rng, &ps)), &out))
}

fn product_inputs(rng: &mut ChaCha8Rng, form: Form) -> Result<(Vec<DMatrix<f64>>, Vec<Ellipsoid>), String> {
    let k = rng.gen_range(2..=3);
    let ps: Vec<DMatrix<f64>> = (0..k)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            match form {
                Form::Direct => random_pd(rng, n),
                Form::Reverse => maybe_singular(rng, n),
            }
        })
        .collect();
    let es = ps
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let e = Ellipsoid::new(form, sym(p), names(&format!("b{i}_"), p.nrows()))?;
            Ok(e)
        })
        .collect::<Result<Vec<_>, ell::EllipsoidError>>()
        .map_err(|e| e.to_string())?;
    Ok((ps, es))
}

fn trial_product(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (ps, es) = product_inputs(rng, Form::Direct)?;
    let out = ell::cartesian_product(&es, &simplex(rng, es.len())).map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS).map(|_| ps.iter().flat_map(|p| sample_direct(rng, p)).collect()).collect();
    Ok(count_outside(pts, &out))
}

fn trial_product_reverse(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (ps, es) = product_inputs(rng, Form::Reverse)?;
    let out = ell::cartesian_product_reverse(&es, &simplex(rng, es.len())).map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS).map(|_| ps.iter().flat_map(|p| sample_reverse(rng, p)).collect()).collect();
    Ok(count_outside(pts, &out))
}

fn trial_project(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.gen_range(2..=4);
    let keep = rng.gen_range(1..n);
    let p = random_pd(rng, n);
    let out = ell::project_direct(&Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?, keep).map_err(|e| e.to_string())?;
    Ok(count_outside((0..POINTS).map(|_| sample_direct(rng, &p)[..keep].to_vec()), &out))
}

fn trial_inverse_image(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.gen_range(1..=4);
    let p = random_pd(rng, n);
    let a = well_conditioned(rng, n);
    let out = ell::inverse_image_direct(&Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?, &from_na(&a))
        .map_err(|e| e.to_string())?;
    Ok(count_outside((0..POINTS).map(|_| apply(&a, &sample_direct(rng, &p))), &out))
}

fn trial_copy_direct(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (n, m) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let p = random_pd(rng, n);
    let a = gaussianish(rng, m, n) * 2.0;
    let lambda = log_uniform(rng, 1e-3, 1e3);
    let out = ell::copy_rule_direct(&Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?, &from_na(&a), lambda, None)
        .map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS)
        .map(|_| {
            let x = sample_direct(rng, &p);
            concat(&x, &apply(&a, &x))
        })
        .collect();
    Ok(count_outside(pts, &out))
}

fn trial_copy_reverse(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let (n, m) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let p = maybe_singular(rng, n);
    let a = gaussianish(rng, m, n) * 2.0;
    let eps = if rng.gen_bool(0.2) { 0.0 } else { log_uniform(rng, 1e-3, 1e3) };
    let out = ell::copy_rule_reverse(&Ellipsoid::reverse(sym(&p)).map_err(|e| e.to_string())?, &from_na(&a), eps, None)
        .map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS)
        .map(|_| {
            let x = sample_reverse(rng, &p);
            concat(&x, &apply(&a, &x))
        })
        .collect();
    Ok(count_outside(pts, &out))
}

fn trial_sector_direct(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.gen_range(1..=4);
    let p = random_pd(rng, n);
    let mu = p.clone().symmetric_eigen().eigenvalues.min() * rng.gen::<f64>();
    let out = ell::sector_rule_direct(&Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?, mu, None)
        .map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS)
        .map(|_| {
            let x = sample_direct(rng, &p);
            let u = sector_value(rng, &x);
            concat(&x, &[u])
        })
        .collect();
    Ok(count_outside(pts, &out))
}

fn trial_sector_reverse(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let n = rng.gen_range(1..=4);
    let p = random_pd(rng, n);
    let eps = p.clone().symmetric_eigen().eigenvalues.max() * (1.0 + log_uniform(rng, 1e-3, 10.0));
    let out = ell::sector_rule_reverse(&Ellipsoid::reverse(sym(&p)).map_err(|e| e.to_string())?, eps, None)
        .map_err(|e| e.to_string())?;
    let pts: Vec<Vec<f64>> = (0..POINTS)
        .map(|_| {
            let x = sample_reverse(rng, &p);
            let u = sector_value(rng, &x);
            concat(&x, &[u])
        })
        .collect();
    Ok(count_outside(pts, &out))
}

fn rule_soundness() -> Outcome {
    let suite: [(&str, Trial); 11] = [
        ("direct_to_reverse/reverse_to_direct", trial_conversion),
        ("affine_image_reverse", trial_affine_image),
        ("convex_combination", trial_convex_combination),
        ("cartesian_product", trial_product),
        ("cartesian_product_reverse", trial_product_reverse),
        ("project_direct", trial_project),
        ("inverse_image_direct", trial_inverse_image),
        ("copy_rule_direct", trial_copy_direct),
        ("copy_rule_reverse", trial_copy_reverse),
        ("sector_rule_direct", trial_sector_direct),
        ("sector_rule_reverse", trial_sector_reverse),
    ];
    let start = Instant::now();
    let mut failures = Vec::new();
    for (k, (name, trial)) in suite.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + k as u64);
        let mut violations = 0;
        for i in 0..INSTANCES {
            match trial(&mut rng) {
                Ok(v) => violations += v,
                Err(e) => {
                    failures.push(format!("{name} instance {i}: {e}"));
                    break;
                }
            }
        }
        if violations > 0 {
            failures.push(format!("{name}: {violations} violations"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(60) {
        failures.push(format!("runtime {elapsed:.1?} exceeds 60 s"));
    }
    if failures.is_empty() {
        Ok(format!("{} ops x {INSTANCES} instances x {POINTS} points, 0 violations", suite.len()))
    } else {
        Err(failures.join("; "))
    }
}

// ---------------------------------------------------------------- criterion 2

fn form_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut disagreements = 0;
    for _ in 0..INSTANCES {
        let n = rng.gen_range(1..=4);
        let p = random_pd(&mut rng, n);
        let inv = p.clone().try_inverse().ok_or("random PD matrix not invertible")?;
        let d = Ellipsoid::direct(sym(&p)).map_err(|e| e.to_string())?;
        let r = Ellipsoid::reverse(sym(&inv)).map_err(|e| e.to_string())?;
        let dir = direction(&mut rng, n);
        let scale = uniform(&mut rng, 0.0, 2.0) / quad(&p, &dir).sqrt();
        let x: Vec<f64> = dir.into_iter().map(|v| v * scale).collect();
        let a = ell::membership(&x, &d).map_err(|e| e.to_string())?;
        let b = ell::membership(&x, &r).map_err(|e| e.to_string())?;
        if a != b {
            disagreements += 1;
        }
    }
    if disagreements == 0 {
        Ok(format!("{INSTANCES} instances, 0 disagreements"))
    } else {
        Err(format!("{disagreements} disagreements out of {INSTANCES}"))
    }
}

// ---------------------------------------------------------------- criterion 3

fn oracle_spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn lyapunov() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = rng.gen_range(1..=10);
        let g = gaussianish(&mut rng, n, n);
        let rho = oracle_spectral_radius(&g);
        let a = if rho > 0.0 { g * (uniform(&mut rng, 0.0, 0.95) / rho) } else { g };
        let q = random_pd(&mut rng, n);
        let p = solve_discrete_lyapunov(&from_na(&a), &sym(&q)).map_err(|e| format!("system {i}: {e}"))?;
        let p = to_na(p.as_matrix());
        let residual = (&p - &a * &p * a.transpose() - &q).norm() / p.norm();
        worst = worst.max(residual);
    }
    if worst > 1e-8 {
        return Err(format!("worst relative residual {worst:e}"));
    }
    let half = solve_discrete_lyapunov(&Matrix::diag(&[0.5]), &SymMatrix::diag(&[1.0])).map_err(|e| e.to_string())?;
    let err = (half[(0, 0)] - 4.0 / 3.0).abs();
    if err > 1e-10 {
        return Err(format!("[[0.5]] gives {} (error {err:e})", half[(0, 0)]));
    }
    Ok(format!("100 systems, worst relative residual {worst:.1e}; [[0.5]] error {err:.1e}"))
}

// ---------------------------------------------------------------- criterion 4

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn default_inputs() -> BTreeMap<u32, f64> {
    SynthesisConfig::default().input_bounds().expect("default config")
}

/// Minimum over λ of the radius² bound `4λ / ((λ − a²)(1 − λ))` for `x' = a·x + 2u`.
fn scalar_radius_oracle(a: f64) -> f64 {
    let f = |l: f64| 4.0 * l / ((l - a * a) * (1.0 - l));
    let (mut lo, mut hi) = (a * a, 1.0);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi)).sqrt()
}

fn two_state_reproduction() -> Outcome {
    let start = Instant::now();
    let src = fixture("two_state.ctl");
    let (_, roles) = roles_only(&src).map_err(|e| e.to_string())?;
    let got = roles.roles.by_source_name();
    let mut want = BTreeMap::new();
    for (vars, role) in [(&["i", "j"][..], Role::Index), (&["u", "x", "x_new", "y"], Role::State), (&["A", "b", "c"], Role::Parameter)] {
        for v in vars {
            want.insert(v.to_string(), role);
        }
    }
    if got != want {
        return Err(format!("roles {got:?}"));
    }
    let cfg = SynthesisConfig::default();
    let full = analyze_source(&src, &default_inputs()).map_err(|e| e.to_string())?;
    let status = synthesize(&full.summary, &cfg).status;
    match &status {
        Status::Failed { reason } if reason.contains("marginal") && reason.contains("1.0") => {}
        other => return Err(format!("full state: expected marginal failure, got {other:?}")),
    }
    let sub = analyze_source(&fixture("scalar_input.ctl"), &default_inputs()).map_err(|e| e.to_string())?;
    let r = synthesize(&sub.summary, &cfg);
    let p = r.p.as_ref().ok_or_else(|| format!("x1 subsystem not proved: {:?}", r.status))?;
    let radius = p[(0, 0)].sqrt();
    let oracle = scalar_radius_oracle(0.999);
    if !(2000.0..=2100.0).contains(&radius) {
        return Err(format!("radius {radius} outside [2000, 2100]"));
    }
    if radius < oracle * (1.0 - 1e-9) {
        return Err(format!("radius {radius} beats the optimum {oracle}"));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(5) {
        return Err(format!("runtime {elapsed:.2?} exceeds 5 s"));
    }
    Ok(format!("roles exact, full state marginal, radius {radius:.3} (oracle optimum {oracle:.3})"))
}

// ---------------------------------------------------------------- criterion 5

fn prove(src: &str) -> Result<Certificate, String> {
    let a = analyze_source(src, &default_inputs()).map_err(|e| e.to_string())?;
    let r = synthesize(&a.summary, &SynthesisConfig::default());
    if !r.proved() {
        return Err(format!("not proved: {:?}", r.status));
    }
    certificate::emit(&r, &a.summary, &a.program.token_hash).map_err(|e| e.to_string())
}

fn nonlinear() -> Outcome {
    let start = Instant::now();
    let src = fixture("sector.ctl");
    let cert = prove(&src)?;
    let mut levels = Vec::new();
    for policy in [Policy::Uniform, Policy::Extremal, Policy::AdversarialSign] {
        let opts = SimOptions { steps: 1_000_000, trials: 4, policy, seed: 5 };
        let report = simulate(&cert, &src, &opts).map_err(|e| e.to_string())?;
        if !report.within || report.max_level > 1.0 + 1e-6 {
            return Err(format!("{policy}: max level {}", report.max_level));
        }
        levels.push(format!("{policy} {:.6}", report.max_level));
    }
    let unstable = analyze_source(&fixture("sector_unstable.ctl"), &default_inputs()).map_err(|e| e.to_string())?;
    if synthesize(&unstable.summary, &SynthesisConfig::default()).proved() {
        return Err("unstable variant was proved".into());
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        return Err(format!("runtime {elapsed:.1?} exceeds 30 s"));
    }
    Ok(format!("proved; max levels {}; unstable variant not proved", levels.join(", ")))
}

// ---------------------------------------------------------------- criterion 6

fn integrity() -> Outcome {
    let src = fixture("two_state_stable.ctl");
    let cert = prove(&src)?;
    if !certificate::replay(&cert, &src).verdict.accepted() {
        return Err("unperturbed certificate rejected".into());
    }
    let entries = matrix_entries(&cert);
    if entries.is_empty() {
        return Err("certificate has no matrix entries".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let picks: Vec<_> = (0..100)
        .map(|_| (entries[rng.gen_range(0..entries.len())], if rng.gen_bool(0.5) { 0.01 } else { -0.01 }))
        .collect();
    let run = || -> Vec<certificate::Verdict> {
        picks.iter().map(|&(entry, rel)| certificate::replay(&perturb(&cert, entry, rel), &src).verdict).collect()
    };
    let first = run();
    let second = run();
    let accepted = first.iter().filter(|v| v.accepted()).count();
    if accepted > 0 {
        return Err(format!("{accepted} of 100 perturbed certificates accepted"));
    }
    if first != second {
        return Err("verdicts differ between runs".into());
    }
    Ok(format!("100/100 perturbations rejected over {} entries, deterministic", entries.len()))
}

// ---------------------------------------------------------------- criterion 7

fn corpus() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ctl"))
        .collect();
    files.sort();
    let mut certified = Vec::new();
    for path in &files {
        let src = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let Ok(a) = analyze_source(&src, &default_inputs()) else { continue };
        let r = synthesize(&a.summary, &SynthesisConfig::default());
        if !r.proved() {
            continue;
        }
        let emitted = certificate::emit(&r, &a.summary, &a.program.token_hash).map_err(|e| format!("{name}: {e}"))?;
        let cert = Certificate::from_json(&emitted.to_json()).map_err(|e| format!("{name}: {e}"))?;
        let report = certificate::replay(&cert, &src);
        if !report.verdict.accepted() {
            return Err(format!("{name}: replay {:?}", report.verdict));
        }
        let opts = SimOptions { steps: 100_000, trials: 4, policy: Policy::AdversarialSign, seed: 7 };
        let sim = simulate(&cert, &src, &opts).map_err(|e| format!("{name}: {e}"))?;
        if !sim.within {
            return Err(format!("{name}: simulation reached level {}", sim.max_level));
        }
        certified.push(name);
    }
    if certified.is_empty() {
        return Err("no certificates emitted".into());
    }
    Ok(format!("{} of {} programs certified and confirmed: {}", certified.len(), files.len(), certified.join(", ")))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("rule soundness", rule_soundness),
        ("form equivalence", form_equivalence),
        ("lyapunov solver", lyapunov),
        ("two-state reproduction", two_state_reproduction),
        ("nonlinear sector case", nonlinear),
        ("certificate integrity", integrity),
        ("end-to-end corpus", corpus),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.2} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.2} s): {detail}", k + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
