//! Ellipsoidal abstract domain.
//!
//! Two encodings of the same family of sets are supported:
//!
//! * **Direct** `E(P) = { x : xᵗPx ≤ 1 }`, which admits unbounded (cylindrical)
//!   degenerate members when `P` is singular;
//! * **Reverse** `E†(P) = { x : [[1, xᵗ], [x, P]] ⪰ 0 }`, which admits flat
//!   degenerate members when `P` is singular.
//!
//! For invertible `P` the two agree, `E†(P) = E(P⁻¹)`. Every transfer rule used by
//! the analyzer lives here as a pure function from ellipsoids (plus scalar
//! parameters) to ellipsoids, so the certificate checker can replay them without
//! touching the synthesis code.

use std::collections::HashSet;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};

/// Default relative tolerance `η_psd` for positive semi-definiteness.
pub const PSD_TOL: f64 = 1e-9;

/// Default slack for direct-form membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Rectangular matrices used as linear maps between layouts.
pub type AffineMap = Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipsoidError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not square")]
    NotSquare,
    #[error("matrix is singular or ill-conditioned")]
    NotInvertible,
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("projection needs an invertible complement block or a null coupling block")]
    NotProjectable,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid convex combinator: {0}")]
    InvalidCombinator(String),
    #[error("layouts overlap on `{0}`")]
    OverlappingLayouts(String),
    #[error("expected a {expected} ellipsoid")]
    WrongForm { expected: Form },
}

pub type Result<T> = std::result::Result<T, EllipsoidError>;

/// Dense symmetric matrix, symmetrized on construction.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SymMatrix(Matrix);

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl SymMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(EllipsoidError::NotSquare);
        }
        if !m.is_finite() {
            return Err(EllipsoidError::NonFinite);
        }
        Ok(SymMatrix(m.symmetrized()))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows).ok_or(EllipsoidError::NotSquare)?)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n))
    }

    pub fn diag(values: &[f64]) -> Self {
        SymMatrix(Matrix::diag(values))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = EllipsoidError;
    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::new(m)
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Direct,
    Reverse,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Form::Direct => f.write_str("direct"),
            Form::Reverse => f.write_str("reverse"),
        }
    }
}

/// An ellipsoid over an ordered list of named coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    form: Form,
    matrix: SymMatrix,
    layout: Vec<String>,
}

/// Names `v0, v1, ...` for ellipsoids built without a program context.
pub fn anon_layout(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

impl Ellipsoid {
    /// Validates the layout length and positive semi-definiteness (within [`PSD_TOL`]).
    pub fn new(form: Form, matrix: SymMatrix, layout: Vec<String>) -> Result<Self> {
        if layout.len() != matrix.dim() {
            return Err(EllipsoidError::DimensionMismatch { expected: matrix.dim(), found: layout.len() });
        }
        if !linalg::is_psd_matrix(&matrix, PSD_TOL) {
            return Err(EllipsoidError::NotPsd { min_eigenvalue: linalg::min_eigenvalue(&matrix) });
        }
        Ok(Ellipsoid { form, matrix, layout })
    }

    pub fn direct(matrix: SymMatrix) -> Result<Self> {
        let n = matrix.dim();
        Self::new(Form::Direct, matrix, anon_layout(n))
    }

    pub fn reverse(matrix: SymMatrix) -> Result<Self> {
        let n = matrix.dim();
        Self::new(Form::Reverse, matrix, anon_layout(n))
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn layout(&self) -> &[String] {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn with_layout(mut self, layout: Vec<String>) -> Result<Self> {
        if layout.len() != self.dim() {
            return Err(EllipsoidError::DimensionMismatch { expected: self.dim(), found: layout.len() });
        }
        self.layout = layout;
        Ok(self)
    }

    fn expect(&self, form: Form) -> Result<()> {
        if self.form != form {
            return Err(EllipsoidError::WrongForm { expected: form });
        }
        Ok(())
    }
}

/// Weights in the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexCombinator(Vec<f64>);

impl ConvexCombinator {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(EllipsoidError::InvalidCombinator("no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(EllipsoidError::InvalidCombinator(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(EllipsoidError::InvalidCombinator(format!("weights sum to {sum}")));
        }
        Ok(ConvexCombinator(weights))
    }

    pub fn uniform(n: usize) -> Self {
        ConvexCombinator(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<bool> {
    if !m.is_finite() {
        return Err(EllipsoidError::NonFinite);
    }
    Ok(linalg::is_psd_matrix(m, tol))
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(EllipsoidError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `[[1, xᵗ], [x, m]]`.
fn bordered(x: &[f64], m: &Matrix) -> Matrix {
    let n = x.len();
    let mut b = Matrix::zeros(n + 1, n + 1);
    b[(0, 0)] = 1.0;
    for i in 0..n {
        b[(0, i + 1)] = x[i];
        b[(i + 1, 0)] = x[i];
    }
    b.set_block(1, 1, m);
    b
}

pub fn membership(x: &[f64], e: &Ellipsoid) -> Result<bool> {
    check_dim(e.dim(), x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EllipsoidError::NonFinite);
    }
    Ok(match e.form {
        Form::Direct => quad_form(&e.matrix, x) <= 1.0 + MEMBERSHIP_TOL,
        Form::Reverse => linalg::is_psd_matrix(&bordered(x, &e.matrix), PSD_TOL),
    })
}

/// `xᵗ M x`.
pub fn quad_form(m: &Matrix, x: &[f64]) -> f64 {
    m.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
}

pub fn direct_to_reverse(e: &Ellipsoid) -> Result<Ellipsoid> {
    e.expect(Form::Direct)?;
    let inv = linalg::inverse(&e.matrix).ok_or(EllipsoidError::NotInvertible)?;
    Ellipsoid::new(Form::Reverse, SymMatrix::new(inv)?, e.layout.clone())
}

pub fn reverse_to_direct(e: &Ellipsoid) -> Result<Ellipsoid> {
    e.expect(Form::Reverse)?;
    let inv = linalg::inverse(&e.matrix).ok_or(EllipsoidError::NotInvertible)?;
    Ellipsoid::new(Form::Direct, SymMatrix::new(inv)?, e.layout.clone())
}

fn out_layout(layout: Option<Vec<String>>, rows: usize, fallback: &[String]) -> Result<Vec<String>> {
    match layout {
        Some(l) => {
            check_dim(rows, l.len())?;
            Ok(l)
        }
        None if rows == fallback.len() => Ok(fallback.to_vec()),
        None => Ok(anon_layout(rows)),
    }
}

/// Image of a reverse ellipsoid under a linear map: `E†(A P Aᵗ)`.
///
/// The range constraint `x ∈ R(A)` is not kept; the result is an over-approximation.
/// Introduction (`A = [I; cᵗ]`), dropping (`A = [I 0]`) and zero initialization are
/// all instances. `layout` names the output coordinates (defaults to the input
/// layout when `A` is square).
pub fn affine_image_reverse(e: &Ellipsoid, a: &AffineMap, layout: Option<Vec<String>>) -> Result<Ellipsoid> {
    e.expect(Form::Reverse)?;
    check_dim(e.dim(), a.cols())?;
    if !a.is_finite() {
        return Err(EllipsoidError::NonFinite);
    }
    let layout = out_layout(layout, a.rows(), &e.layout)?;
    Ellipsoid::new(Form::Reverse, SymMatrix::new(a.congruence(&e.matrix))?, layout)
}

/// Keeps the coordinates at `indices` (in that order) of a reverse ellipsoid.
pub fn select_reverse(e: &Ellipsoid, indices: &[usize]) -> Result<Ellipsoid> {
    let mut a = Matrix::zeros(indices.len(), e.dim());
    for (r, &c) in indices.iter().enumerate() {
        if c >= e.dim() {
            return Err(EllipsoidError::DimensionMismatch { expected: e.dim(), found: c + 1 });
        }
        a[(r, c)] = 1.0;
    }
    let layout = indices.iter().map(|&i| e.layout[i].clone()).collect();
    affine_image_reverse(e, &a, Some(layout))
}

/// Over-approximates `∩ E(Pᵢ)` by `E(Σ λᵢ Pᵢ)`.
pub fn convex_combination(es: &[Ellipsoid], weights: &ConvexCombinator) -> Result<Ellipsoid> {
    check_dim(es.len(), weights.0.len())?;
    let first = es.first().ok_or_else(|| EllipsoidError::InvalidCombinator("no ellipsoids".into()))?;
    let n = first.dim();
    let mut acc = Matrix::zeros(n, n);
    for (e, w) in es.iter().zip(&weights.0) {
        e.expect(Form::Direct)?;
        check_dim(n, e.dim())?;
        acc = acc.add(&e.matrix.scale(*w));
    }
    Ellipsoid::new(Form::Direct, SymMatrix::new(acc)?, first.layout.clone())
}

fn check_disjoint(es: &[Ellipsoid]) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut layout = Vec::new();
    for name in es.iter().flat_map(|e| e.layout.iter()) {
        if !seen.insert(name.clone()) {
            return Err(EllipsoidError::OverlappingLayouts(name.clone()));
        }
        layout.push(name.clone());
    }
    Ok(layout)
}

/// Product of direct ellipsoids over disjoint layouts: `diag(λ₁P₁, …, λₙPₙ)`.
pub fn cartesian_product(es: &[Ellipsoid], weights: &ConvexCombinator) -> Result<Ellipsoid> {
    check_dim(es.len(), weights.0.len())?;
    let layout = check_disjoint(es)?;
    let mut acc = Matrix::zeros(0, 0);
    for (e, w) in es.iter().zip(&weights.0) {
        e.expect(Form::Direct)?;
        acc = Matrix::block_diag(&acc, &e.matrix.scale(*w));
    }
    Ellipsoid::new(Form::Direct, SymMatrix::new(acc)?, layout)
}

/// Reverse-form counterpart of [`cartesian_product`]: `diag(P₁/λ₁, …, Pₙ/λₙ)`.
///
/// Agrees with the direct rule through `E†(P) = E(P⁻¹)` when every block is
/// invertible, and stays meaningful for flat blocks. Every weight must be positive.
pub fn cartesian_product_reverse(es: &[Ellipsoid], weights: &ConvexCombinator) -> Result<Ellipsoid> {
    check_dim(es.len(), weights.0.len())?;
    let layout = check_disjoint(es)?;
    let mut acc = Matrix::zeros(0, 0);
    for (e, w) in es.iter().zip(&weights.0) {
        e.expect(Form::Reverse)?;
        if *w <= 0.0 {
            return Err(EllipsoidError::InvalidParameter(format!("reverse product weight {w} must be positive")));
        }
        acc = Matrix::block_diag(&acc, &e.matrix.scale(1.0 / w));
    }
    Ellipsoid::new(Form::Reverse, SymMatrix::new(acc)?, layout)
}

/// Shadow of a direct ellipsoid on its leading `keep` coordinates: `P − RᵗQ⁻¹R`,
/// or `P` when the coupling block `R` vanishes.
pub fn project_direct(e: &Ellipsoid, keep: usize) -> Result<Ellipsoid> {
    e.expect(Form::Direct)?;
    if keep > e.dim() {
        return Err(EllipsoidError::DimensionMismatch { expected: e.dim(), found: keep });
    }
    let xs: Vec<usize> = (0..keep).collect();
    let ys: Vec<usize> = (keep..e.dim()).collect();
    let p = e.matrix.select(&xs, &xs);
    let r = e.matrix.select(&ys, &xs);
    let layout = e.layout[..keep].to_vec();
    if r.max_abs() == 0.0 {
        return Ellipsoid::new(Form::Direct, SymMatrix::new(p)?, layout);
    }
    let q = e.matrix.select(&ys, &ys);
    let q_inv = linalg::inverse(&q).ok_or(EllipsoidError::NotProjectable)?;
    let schur = p.sub(&r.transpose().mul(&q_inv).mul(&r));
    Ellipsoid::new(Form::Direct, SymMatrix::new(schur)?, layout)
}

/// Image of a direct ellipsoid under an invertible map: `E(A⁻ᵗ P A⁻¹)`.
pub fn inverse_image_direct(e: &Ellipsoid, a: &AffineMap) -> Result<Ellipsoid> {
    e.expect(Form::Direct)?;
    if !a.is_square() {
        return Err(EllipsoidError::NotSquare);
    }
    check_dim(e.dim(), a.cols())?;
    let a_inv = linalg::inverse(a).ok_or(EllipsoidError::NotInvertible)?;
    let m = a_inv.transpose().mul(&e.matrix).mul(&a_inv);
    Ellipsoid::new(Form::Direct, SymMatrix::new(m)?, e.layout.clone())
}

fn fresh_layout(e: &Ellipsoid, new_vars: Option<Vec<String>>, count: usize) -> Result<Vec<String>> {
    let new_vars = match new_vars {
        Some(v) => {
            check_dim(count, v.len())?;
            v
        }
        None => (0..count).map(|i| format!("v{}", e.dim() + i)).collect(),
    };
    let mut layout = e.layout.clone();
    for v in new_vars {
        if layout.contains(&v) {
            return Err(EllipsoidError::OverlappingLayouts(v));
        }
        layout.push(v);
    }
    Ok(layout)
}

/// `y = A x` in direct form: `[[P, 0], [0, 0]] + λ [Aᵗ; −I][A, −I]`.
pub fn copy_rule_direct(e: &Ellipsoid, a: &AffineMap, lambda: f64, new_vars: Option<Vec<String>>) -> Result<Ellipsoid> {
    e.expect(Form::Direct)?;
    check_dim(e.dim(), a.cols())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(EllipsoidError::InvalidParameter(format!("copy weight {lambda} must be non-negative")));
    }
    let m = a.rows();
    let layout = fresh_layout(e, new_vars, m)?;
    let base = Matrix::block_diag(&e.matrix, &Matrix::zeros(m, m));
    let k = Matrix::hstack(a, &Matrix::identity(m).scale(-1.0));
    let q = base.add(&k.transpose().mul(&k).scale(lambda));
    Ellipsoid::new(Form::Direct, SymMatrix::new(q)?, layout)
}

/// `y = A x` in reverse form: `[[P̂, P̂Aᵗ], [AP̂, AP̂Aᵗ + εI]]`.
pub fn copy_rule_reverse(e: &Ellipsoid, a: &AffineMap, eps: f64, new_vars: Option<Vec<String>>) -> Result<Ellipsoid> {
    e.expect(Form::Reverse)?;
    check_dim(e.dim(), a.cols())?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(EllipsoidError::InvalidParameter(format!("copy slack {eps} must be non-negative")));
    }
    let m = a.rows();
    let layout = fresh_layout(e, new_vars, m)?;
    let p = e.matrix.as_matrix();
    let pa = p.mul(&a.transpose());
    let q = Matrix::from_blocks(p, &pa, &pa.transpose(), &a.mul(&pa).add_diag(eps));
    Ellipsoid::new(Form::Reverse, SymMatrix::new(q)?, layout)
}

/// Largest `μ` accepted by [`sector_rule_direct`], i.e. `λ_min(P)`.
pub fn sector_mu_max(e: &Ellipsoid) -> f64 {
    linalg::min_eigenvalue(&e.matrix).max(0.0)
}

/// `u = f(x)` with `|f(x)| ≤ |x|`, direct form: `diag(P − μI, μ)`.
pub fn sector_rule_direct(e: &Ellipsoid, mu: f64, new_var: Option<String>) -> Result<Ellipsoid> {
    e.expect(Form::Direct)?;
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(EllipsoidError::InvalidParameter(format!("sector weight {mu} must be non-negative")));
    }
    let top = e.matrix.add_diag(-mu);
    if !linalg::is_psd_matrix(&top, PSD_TOL) {
        return Err(EllipsoidError::InvalidParameter(format!("P - {mu}·I is not positive semi-definite")));
    }
    let layout = fresh_layout(e, new_var.map(|v| vec![v]), 1)?;
    let q = Matrix::block_diag(&top, &Matrix::diag(&[mu]));
    Ellipsoid::new(Form::Direct, SymMatrix::new(q)?, layout)
}

/// `u = f(x)` with `|f(x)| ≤ |x|`, reverse form: `diag(−εP̂(P̂ − εI)⁻¹, ε)`.
/// Requires `P̂` invertible and `ε > λ_max(P̂)`.
pub fn sector_rule_reverse(e: &Ellipsoid, eps: f64, new_var: Option<String>) -> Result<Ellipsoid> {
    e.expect(Form::Reverse)?;
    if !eps.is_finite() {
        return Err(EllipsoidError::NonFinite);
    }
    linalg::inverse(&e.matrix).ok_or(EllipsoidError::NotInvertible)?;
    let lmax = linalg::max_eigenvalue(&e.matrix);
    if eps <= lmax {
        return Err(EllipsoidError::InvalidParameter(format!(
            "sector slack {eps} must exceed the largest eigenvalue {lmax}"
        )));
    }
    // εP̂(εI − P̂)⁻¹; the two factors commute
    let shifted = e.matrix.scale(-1.0).add_diag(eps);
    let inv = linalg::inverse(&shifted).ok_or_else(|| {
        EllipsoidError::InvalidParameter(format!("sector slack {eps} too close to the spectrum"))
    })?;
    let top = e.matrix.mul(&inv).scale(eps);
    let layout = fresh_layout(e, new_var.map(|v| vec![v]), 1)?;
    let q = Matrix::block_diag(&top, &Matrix::diag(&[eps]));
    Ellipsoid::new(Form::Reverse, SymMatrix::new(q)?, layout)
}

/// `M_a ⪯ M_b − margin·I`, with the PSD tolerance taken relative to the operands.
pub fn loewner_leq(ma: &SymMatrix, mb: &SymMatrix, margin: f64) -> Result<bool> {
    check_dim(ma.dim(), mb.dim())?;
    if !ma.is_finite() || !mb.is_finite() || !margin.is_finite() {
        return Err(EllipsoidError::NonFinite);
    }
    let diff = mb.sub(ma).add_diag(-margin);
    let scale = ma.max_abs().max(mb.max_abs());
    Ok(linalg::is_psd_shifted(&diff, PSD_TOL * scale, scale))
}

/// Smallest eigenvalue of `M_b − M_a − margin·I`; the numeric witness for a failed
/// [`loewner_leq`].
pub fn loewner_gap(ma: &SymMatrix, mb: &SymMatrix, margin: f64) -> f64 {
    linalg::min_eigenvalue(&mb.sub(ma).add_diag(-margin))
}
