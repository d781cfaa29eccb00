//! Compilation of the unrolled loop body into a chain of ellipsoid rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::ellipsoid::{
    affine_image_reverse, cartesian_product_reverse, copy_rule_reverse, sector_rule_reverse, ConvexCombinator,
    Ellipsoid, EllipsoidError, Form, SymMatrix,
};
use crate::frontend::ast::{base_name, BinOp, Expr, LValue, Slot, SourceProgram};
use crate::frontend::cfg::{Cfg, NodeId, NodeKind};
use crate::frontend::pretty::{expr_str, lvalue_str};
use crate::frontend::unroll::slot_of;
use crate::frontend::Span;
use crate::linalg::{self, Matrix};
use crate::roles::Role;

pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-6;
/// Relative range of the copy slack: `ε_y = s·λ_max(P̂)`.
pub const EPS_Y_RANGE: (f64, f64) = (1e-6, 1e3);
/// Relative range of the sector slack: `ε_u = λ_max(P̂)·(1 + s)`.
pub const EPS_U_RANGE: (f64, f64) = (1e-6, 999.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    AffineImage,
    Intro,
    Drop,
    InitZero,
    ConvexCombine,
    Product,
    Project,
    InverseImage,
    CopyDirect,
    CopyReverse,
    SectorDirect,
    SectorReverse,
}

impl RuleKind {
    /// Rules whose output is `A P Aᵗ` for the stored matrix `A`.
    pub fn is_congruence(self) -> bool {
        matches!(self, RuleKind::AffineImage | RuleKind::InitZero | RuleKind::Drop | RuleKind::Project)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Lambda,
    EpsY,
    EpsU,
}

/// A scalar parameter searched by synthesis. `lo`/`hi` bound the raw search
/// value; ε parameters are relative to the largest eigenvalue of the rule's
/// precondition (see [`resolve_param`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub line: u32,
    pub col: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub channel: u32,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleInstance {
    pub kind: RuleKind,
    pub location: Option<Location>,
    pub pre_layout: Vec<String>,
    pub post_layout: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matrix_a: Option<Matrix>,
    /// Index into [`LoopSummary::params`].
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub param: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub input: Option<InputRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub rules: Vec<RuleInstance>,
    pub params: Vec<ParamSpec>,
    pub head_layout: Vec<String>,
    /// Declared initial values of the loop-head slots.
    pub init: Vec<f64>,
    pub inputs: BTreeMap<u32, f64>,
}

impl LoopSummary {
    pub fn has_sector(&self) -> bool {
        self.rules.iter().any(|r| matches!(r.kind, RuleKind::SectorReverse | RuleKind::SectorDirect))
    }

    pub fn state_dim(&self) -> usize {
        self.head_layout.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rules: Vec<_> = self
            .rules
            .iter()
            .map(|r| {
                let mut v = serde_json::to_value(r).expect("rule serializes");
                if let Some(k) = r.param {
                    v["param"] = serde_json::Value::String(self.params[k].name.clone());
                }
                v
            })
            .collect();
        serde_json::json!({
            "head_layout": self.head_layout,
            "init": self.init,
            "params": self.params,
            "rules": rules,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemErrorKind {
    MissingLoop,
    PrefixStatements,
    UnmatchedStatement,
    ParameterNotInvariant,
    ParameterDependsOnState,
    RoleConflict,
    MissingInputBound,
    Rule,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{span}: {message}")]
pub struct SemanticsError {
    pub kind: SemErrorKind,
    pub span: Span,
    pub message: String,
}

impl SemanticsError {
    fn new(kind: SemErrorKind, span: Span, message: impl Into<String>) -> Self {
        SemanticsError { kind, span, message: message.into() }
    }
}

type SResult<T> = Result<T, SemanticsError>;

/// Models a sector-bounded function for concrete evaluation. Declared `nonlin`
/// functions behave as `sin`.
pub fn sector_fn(_name: &str, x: f64) -> f64 {
    x.sin()
}

/// Concrete evaluation; `lookup` returns `None` for unknown variables.
pub fn eval_expr(e: &Expr, lookup: &mut impl FnMut(&LValue) -> Option<f64>) -> Option<f64> {
    Some(match e {
        Expr::Num(v) => *v,
        Expr::Var(lv) => lookup(lv)?,
        Expr::Neg(a) => -eval_expr(a, lookup)?,
        Expr::Call(f, a) => sector_fn(f, eval_expr(a, lookup)?),
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval_expr(a, lookup)?, eval_expr(b, lookup)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
    })
}

/// Splits `lhs = rhs` with one sector call into
/// `y_v = arg; u_v = f(y_v); lhs = rhs[f(arg) := u_v]`.
/// Returns the statement unchanged when it has no call.
pub fn expand_nonlinear(lhs: &LValue, rhs: &Expr, y_v: &str, u_v: &str) -> Result<Vec<(LValue, Expr)>, String> {
    match rhs.calls() {
        0 => return Ok(vec![(lhs.clone(), rhs.clone())]),
        1 => {}
        n => return Err(format!("{n} sector-function applications in one statement (at most one is supported)")),
    }
    let mut call: Option<(String, Expr)> = None;
    fn replace(e: &Expr, u_v: &str, call: &mut Option<(String, Expr)>) -> Expr {
        match e {
            Expr::Call(f, arg) => {
                *call = Some((f.clone(), (**arg).clone()));
                Expr::Var(LValue::scalar(u_v))
            }
            Expr::Neg(a) => Expr::Neg(Box::new(replace(a, u_v, call))),
            Expr::Bin(op, a, b) => Expr::bin(*op, replace(a, u_v, call), replace(b, u_v, call)),
            other => other.clone(),
        }
    }
    let outer = replace(rhs, u_v, &mut call);
    let (f, arg) = call.expect("one call present");
    if arg.calls() > 0 {
        return Err("nested sector-function applications are not supported".into());
    }
    Ok(vec![
        (LValue::scalar(y_v), arg),
        (LValue::scalar(u_v), Expr::Call(f, Box::new(Expr::Var(LValue::scalar(y_v))))),
        (lhs.clone(), outer),
    ])
}

/// Linear form over layout names plus a constant.
#[derive(Debug, Clone, Default, PartialEq)]
struct Lin {
    coeffs: BTreeMap<String, f64>,
    constant: f64,
}

impl Lin {
    fn is_const(&self) -> bool {
        self.coeffs.values().all(|c| *c == 0.0)
    }

    fn scale(mut self, s: f64) -> Lin {
        for c in self.coeffs.values_mut() {
            *c *= s;
        }
        self.constant *= s;
        self
    }

    fn add(mut self, other: Lin, sign: f64) -> Lin {
        for (k, c) in other.coeffs {
            *self.coeffs.entry(k).or_insert(0.0) += sign * c;
        }
        self.constant += sign * other.constant;
        self
    }
}

struct Compiler<'a> {
    roles: &'a BTreeMap<String, Role>,
    inputs: &'a BTreeMap<u32, f64>,
    env: HashMap<Slot, f64>,
    layout: Vec<String>,
    rules: Vec<RuleInstance>,
    params: Vec<ParamSpec>,
    virtuals: usize,
}

fn is_virtual(name: &str) -> bool {
    name.starts_with('%')
}

fn role_of(roles: &BTreeMap<String, Role>, name: &str) -> Role {
    if is_virtual(name) {
        return Role::State;
    }
    roles.get(base_name(name)).copied().unwrap_or(Role::Parameter)
}

fn slot_name(lv: &LValue) -> Option<String> {
    if is_virtual(&lv.name) {
        return Some(lv.name.clone());
    }
    slot_of(lv).map(|s| s.to_string())
}

/// Initial values of every slot of every declared variable.
pub fn initial_store(prog: &SourceProgram) -> HashMap<Slot, f64> {
    let mut env = HashMap::new();
    for d in &prog.decls {
        let values = d.flat_init();
        for (k, v) in values.iter().enumerate() {
            env.insert(Slot::indexed(d.name.clone(), unflatten(k, &d.dims)), *v);
        }
    }
    env
}

pub fn unflatten(mut k: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (axis, n) in dims.iter().enumerate().rev() {
        out[axis] = k % n;
        k /= n;
    }
    out
}

pub fn flatten(indices: &[usize], dims: &[usize]) -> usize {
    indices.iter().zip(dims).fold(0, |acc, (i, n)| acc * n + i)
}

impl Compiler<'_> {
    fn err(&self, kind: SemErrorKind, span: Span, msg: impl Into<String>) -> SemanticsError {
        SemanticsError::new(kind, span, msg)
    }

    fn linearize(&self, e: &Expr, span: Span) -> SResult<Lin> {
        Ok(match e {
            Expr::Num(v) => Lin { coeffs: BTreeMap::new(), constant: *v },
            Expr::Var(lv) => {
                let name = slot_name(lv)
                    .ok_or_else(|| self.err(SemErrorKind::UnmatchedStatement, span, "non-constant subscript"))?;
                if role_of(self.roles, &lv.name) == Role::State {
                    if !self.layout.contains(&name) {
                        return Err(self.err(
                            SemErrorKind::UnmatchedStatement,
                            span,
                            format!("state `{name}` is read before it holds a value in this iteration"),
                        ));
                    }
                    Lin { coeffs: BTreeMap::from([(name, 1.0)]), constant: 0.0 }
                } else {
                    let slot = slot_of(lv).expect("checked above");
                    Lin { coeffs: BTreeMap::new(), constant: self.env.get(&slot).copied().unwrap_or(0.0) }
                }
            }
            Expr::Neg(a) => self.linearize(a, span)?.scale(-1.0),
            Expr::Call(..) => {
                return Err(self.err(SemErrorKind::UnmatchedStatement, span, "sector call in a linear position"))
            }
            Expr::Bin(op, a, b) => {
                let (la, lb) = (self.linearize(a, span)?, self.linearize(b, span)?);
                match op {
                    BinOp::Add => la.add(lb, 1.0),
                    BinOp::Sub => la.add(lb, -1.0),
                    BinOp::Mul if la.is_const() => lb.scale(la.constant),
                    BinOp::Mul if lb.is_const() => la.scale(lb.constant),
                    BinOp::Div if lb.is_const() => la.scale(1.0 / lb.constant),
                    _ => {
                        return Err(self.err(
                            SemErrorKind::UnmatchedStatement,
                            span,
                            format!("`{}` is not linear in the state", expr_str(e)),
                        ))
                    }
                }
            }
        })
    }

    fn row(&self, lin: &Lin) -> Matrix {
        let mut row = Matrix::zeros(1, self.layout.len());
        for (name, c) in &lin.coeffs {
            let k = self.layout.iter().position(|n| n == name).expect("linearize checks membership");
            row[(0, k)] = *c;
        }
        row
    }

    fn push(&mut self, kind: RuleKind, loc: &Location, a: Option<Matrix>, post: Vec<String>, param: Option<usize>) {
        self.rules.push(RuleInstance {
            kind,
            location: Some(loc.clone()),
            pre_layout: self.layout.clone(),
            post_layout: post.clone(),
            matrix_a: a,
            param,
            input: None,
        });
        self.layout = post;
    }

    fn new_param(&mut self, kind: ParamKind) -> usize {
        let k = self.params.iter().filter(|p| p.kind == kind).count() + 1;
        let (prefix, lo, hi) = match kind {
            ParamKind::Lambda => ("lambda", LAMBDA_MIN, LAMBDA_MAX),
            ParamKind::EpsY => ("eps_y", EPS_Y_RANGE.0, EPS_Y_RANGE.1),
            ParamKind::EpsU => ("eps_u", EPS_U_RANGE.0, EPS_U_RANGE.1),
        };
        self.params.push(ParamSpec { name: format!("{prefix}{k}"), kind, lo, hi });
        self.params.len() - 1
    }

    fn selection(&self, keep: &[String]) -> Matrix {
        let mut a = Matrix::zeros(keep.len(), self.layout.len());
        for (r, name) in keep.iter().enumerate() {
            let c = self.layout.iter().position(|n| n == name).expect("kept names are tracked");
            a[(r, c)] = 1.0;
        }
        a
    }

    fn drop_names(&mut self, names: &[String], loc: &Location) {
        let keep: Vec<String> = self.layout.iter().filter(|n| !names.contains(n)).cloned().collect();
        let a = self.selection(&keep);
        self.push(RuleKind::Drop, loc, Some(a), keep, None);
    }

    /// `name = lin` for a state target.
    fn affine(&mut self, name: &str, lin: &Lin, loc: &Location, span: Span) -> SResult<()> {
        if lin.constant != 0.0 {
            return Err(self.err(
                SemErrorKind::UnmatchedStatement,
                span,
                format!("assignment to `{name}` has a constant offset {}; only linear updates are supported", lin.constant),
            ));
        }
        let row = self.row(lin);
        let zero = row.max_abs() == 0.0;
        let n = self.layout.len();
        match self.layout.iter().position(|l| l == name) {
            Some(k) => {
                let mut t = Matrix::identity(n);
                for j in 0..n {
                    t[(k, j)] = row[(0, j)];
                }
                let kind = if zero { RuleKind::InitZero } else { RuleKind::AffineImage };
                let post = self.layout.clone();
                self.push(kind, loc, Some(t), post, None);
            }
            None => {
                let a = Matrix::vstack(&Matrix::identity(n), &row);
                let mut post = self.layout.clone();
                post.push(name.to_string());
                let kind = if zero { RuleKind::InitZero } else { RuleKind::AffineImage };
                self.push(kind, loc, Some(a), post, None);
            }
        }
        Ok(())
    }

    fn eval_param(&self, e: &Expr, span: Span) -> SResult<f64> {
        let mut bad: Option<String> = None;
        let v = eval_expr(e, &mut |lv| {
            if role_of(self.roles, &lv.name) == Role::State {
                bad = Some(lvalue_str(lv));
                return None;
            }
            Some(slot_of(lv).and_then(|s| self.env.get(&s).copied()).unwrap_or(0.0))
        });
        match (v, bad) {
            (_, Some(s)) => Err(self.err(
                SemErrorKind::ParameterDependsOnState,
                span,
                format!("parameter assignment reads state `{s}`"),
            )),
            (Some(v), None) => Ok(v),
            (None, None) => Err(self.err(SemErrorKind::UnmatchedStatement, span, "cannot evaluate parameter")),
        }
    }

    fn node(&mut self, cfg: &Cfg, id: NodeId) -> SResult<()> {
        let node = cfg.node(id);
        let span = node.span;
        match &node.kind {
            NodeKind::Read { lhs, channel } => {
                let loc = Location { line: span.line, col: span.col, text: format!("{} = read({channel});", lvalue_str(lhs)) };
                let name = slot_name(lhs).expect("unrolled");
                if role_of(self.roles, &lhs.name) != Role::State {
                    return Err(self.err(SemErrorKind::RoleConflict, span, format!("input `{name}` is not state")));
                }
                let bound = *self.inputs.get(channel).ok_or_else(|| {
                    self.err(SemErrorKind::MissingInputBound, span, format!("no bound configured for input channel {channel}"))
                })?;
                if self.layout.contains(&name) {
                    self.drop_names(std::slice::from_ref(&name), &loc);
                }
                let mut post = self.layout.clone();
                post.push(name);
                let (kind, param) =
                    if self.layout.is_empty() { (RuleKind::Intro, None) } else { (RuleKind::Product, Some(self.new_param(ParamKind::Lambda))) };
                self.push(kind, &loc, None, post, param);
                self.rules.last_mut().expect("just pushed").input = Some(InputRef { channel: *channel, bound });
            }
            NodeKind::Assign { lhs, rhs } => {
                let loc = Location { line: span.line, col: span.col, text: format!("{} = {};", lvalue_str(lhs), expr_str(rhs)) };
                if role_of(self.roles, &lhs.name) != Role::State {
                    let v = self.eval_param(rhs, span)?;
                    let slot = slot_of(lhs).expect("unrolled");
                    self.env.insert(slot, v);
                    return Ok(());
                }
                let name = slot_name(lhs).expect("unrolled");
                if rhs.calls() == 0 {
                    let lin = self.linearize(rhs, span)?;
                    return self.affine(&name, &lin, &loc, span);
                }
                self.virtuals += 1;
                let (y_v, u_v) = (format!("%y{}", self.virtuals), format!("%u{}", self.virtuals));
                let steps = expand_nonlinear(lhs, rhs, &y_v, &u_v)
                    .map_err(|m| self.err(SemErrorKind::UnmatchedStatement, span, m))?;
                let [(_, arg), _, (_, outer)] = <[_; 3]>::try_from(steps).expect("three steps");
                let lin = self.linearize(&arg, span)?;
                if lin.constant != 0.0 {
                    return Err(self.err(SemErrorKind::UnmatchedStatement, span, "sector argument has a constant offset"));
                }
                let row = self.row(&lin);
                let mut post = self.layout.clone();
                post.push(y_v.clone());
                let p = self.new_param(ParamKind::EpsY);
                self.push(RuleKind::CopyReverse, &loc, Some(row), post, Some(p));
                let mut post = self.layout.clone();
                post.push(u_v.clone());
                let p = self.new_param(ParamKind::EpsU);
                self.push(RuleKind::SectorReverse, &loc, None, post, Some(p));
                let lin = self.linearize(&outer, span)?;
                self.affine(&name, &lin, &loc, span)?;
                self.drop_names(&[y_v, u_v], &loc);
            }
            NodeKind::Write { .. } | NodeKind::Assume { .. } => {}
            NodeKind::Entry | NodeKind::Exit => {}
            NodeKind::ForInit { .. } | NodeKind::ForTest { .. } | NodeKind::ForIncr { .. } => {
                return Err(self.err(SemErrorKind::UnmatchedStatement, span, "loop is not unrolled"));
            }
        }
        Ok(())
    }
}

/// Parameter store after one pass over the body, plus every parameter value read.
fn parameter_pass(
    cfg: &Cfg,
    body: &[NodeId],
    roles: &BTreeMap<String, Role>,
    mut env: HashMap<Slot, f64>,
) -> SResult<(HashMap<Slot, f64>, Vec<u64>)> {
    let mut reads = Vec::new();
    for &id in body {
        let node = cfg.node(id);
        let exprs: Vec<&Expr> = match &node.kind {
            NodeKind::Assign { rhs, .. } => vec![rhs],
            NodeKind::Write { value } => vec![value],
            NodeKind::Assume { cond } => vec![&cond.lhs, &cond.rhs],
            _ => Vec::new(),
        };
        for e in &exprs {
            e.visit_vars(&mut |lv| {
                if role_of(roles, &lv.name) != Role::State {
                    if let Some(s) = slot_of(lv) {
                        reads.push(env.get(&s).copied().unwrap_or(0.0).to_bits());
                    }
                }
            });
        }
        if let NodeKind::Assign { lhs, rhs } = &node.kind {
            if role_of(roles, &lhs.name) != Role::State {
                let mut state_read = None;
                let v = eval_expr(rhs, &mut |lv| {
                    if role_of(roles, &lv.name) == Role::State {
                        state_read = Some(lvalue_str(lv));
                    }
                    Some(slot_of(lv).and_then(|s| env.get(&s).copied()).unwrap_or(0.0))
                });
                if let Some(s) = state_read {
                    return Err(SemanticsError::new(
                        SemErrorKind::ParameterDependsOnState,
                        node.span,
                        format!("parameter `{}` depends on state `{s}`", lvalue_str(lhs)),
                    ));
                }
                if let (Some(slot), Some(v)) = (slot_of(lhs), v) {
                    env.insert(slot, v);
                }
            }
        }
    }
    Ok((env, reads))
}

/// Slots of state variables read in the body before being written.
pub fn upward_exposed_state(cfg: &Cfg, body: &[NodeId], roles: &BTreeMap<String, Role>) -> Vec<Slot> {
    let mut defined = BTreeSet::new();
    let mut exposed = BTreeSet::new();
    for &id in body {
        let node = cfg.node(id);
        let mut used = Vec::new();
        let mut collect = |e: &Expr| {
            e.visit_vars(&mut |lv| {
                if role_of(roles, &lv.name) == Role::State {
                    if let Some(s) = slot_of(lv) {
                        used.push(s);
                    }
                }
            })
        };
        match &node.kind {
            NodeKind::Assign { rhs, .. } => collect(rhs),
            NodeKind::Write { value } => collect(value),
            NodeKind::Assume { cond } => {
                collect(&cond.lhs);
                collect(&cond.rhs);
            }
            _ => {}
        }
        for s in used {
            if !defined.contains(&s) {
                exposed.insert(s);
            }
        }
        if let NodeKind::Assign { lhs, .. } | NodeKind::Read { lhs, .. } = &node.kind {
            if let Some(s) = slot_of(lhs) {
                defined.insert(s);
            }
        }
    }
    let order: HashMap<&str, usize> = cfg.program.decls.iter().enumerate().map(|(k, d)| (d.name.as_str(), k)).collect();
    let mut out: Vec<Slot> = exposed.into_iter().collect();
    out.sort_by(|a, b| {
        let ka = order.get(a.name.as_str()).copied().unwrap_or(usize::MAX);
        let kb = order.get(b.name.as_str()).copied().unwrap_or(usize::MAX);
        (ka, &a.indices).cmp(&(kb, &b.indices))
    });
    out
}

/// Compiles the body of the top-level loop of an unrolled CFG.
/// `roles` maps source-level variable names to roles; `inputs` maps channels to
/// the bound `U` of `|u| ≤ U`.
pub fn compile_loop(cfg: &Cfg, roles: &BTreeMap<String, Role>, inputs: &BTreeMap<u32, f64>) -> SResult<LoopSummary> {
    let Some(head) = cfg.loop_head else {
        return Err(SemanticsError::new(SemErrorKind::MissingLoop, Span::default(), "program has no `while(1)` loop"));
    };
    if let Some(&n) = cfg.prefix_nodes().first() {
        return Err(SemanticsError::new(
            SemErrorKind::PrefixStatements,
            cfg.node(n).span,
            "statements outside the main loop are not supported; use declaration initializers",
        ));
    }
    let body = cfg.loop_body();
    if let Some(&bad) = body.iter().find(|n| cfg.node(**n).succs.len() != 1) {
        return Err(SemanticsError::new(SemErrorKind::UnmatchedStatement, cfg.node(bad).span, "loop body is not straight-line"));
    }
    debug_assert_eq!(body[0], head);

    let env0 = initial_store(&cfg.program);
    let (env1, reads0) = parameter_pass(cfg, &body, roles, env0.clone())?;
    let (env2, reads1) = parameter_pass(cfg, &body, roles, env1.clone())?;
    let stable = |a: &HashMap<Slot, f64>, b: &HashMap<Slot, f64>| {
        a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| w.to_bits() == v.to_bits()))
    };
    if reads0 != reads1 || !stable(&env1, &env2) {
        let span = cfg.node(head).span;
        return Err(SemanticsError::new(
            SemErrorKind::ParameterNotInvariant,
            span,
            "parameter values differ between loop iterations",
        ));
    }

    let head_slots = upward_exposed_state(cfg, &body, roles);
    let init = head_slots
        .iter()
        .map(|s| env0.get(s).copied().unwrap_or(0.0))
        .collect();
    let head_layout: Vec<String> = head_slots.iter().map(ToString::to_string).collect();

    let mut c = Compiler {
        roles,
        inputs,
        env: env0,
        layout: head_layout.clone(),
        rules: Vec::new(),
        params: Vec::new(),
        virtuals: 0,
    };
    for &id in &body {
        c.node(cfg, id)?;
    }
    if c.layout != head_layout {
        if let Some(missing) = head_layout.iter().find(|n| !c.layout.contains(n)) {
            return Err(SemanticsError::new(
                SemErrorKind::UnmatchedStatement,
                cfg.node(head).span,
                format!("state `{missing}` is not defined at the end of the loop body"),
            ));
        }
        let a = c.selection(&head_layout);
        let loc = Location { line: cfg.node(head).span.line, col: cfg.node(head).span.col, text: "end of loop body".into() };
        c.push(RuleKind::Project, &loc, Some(a), head_layout.clone(), None);
    }
    Ok(LoopSummary { rules: c.rules, params: c.params, head_layout, init, inputs: inputs.clone() })
}

/// Turns a raw search value into the absolute rule parameter.
pub fn resolve_param(spec: &ParamSpec, raw: f64, pre: &Ellipsoid) -> f64 {
    match spec.kind {
        ParamKind::Lambda => raw,
        ParamKind::EpsY => {
            let l = linalg::max_eigenvalue(pre.matrix());
            if l > 0.0 {
                raw * l
            } else {
                raw
            }
        }
        ParamKind::EpsU => {
            let l = linalg::max_eigenvalue(pre.matrix()).max(0.0);
            if l > 0.0 {
                l * (1.0 + raw)
            } else {
                raw
            }
        }
    }
}

fn layout_error(rule: &RuleInstance, found: &[String]) -> EllipsoidError {
    EllipsoidError::InvalidParameter(format!(
        "layout mismatch: rule expects [{}], state is [{}]",
        rule.pre_layout.join(", "),
        found.join(", ")
    ))
}

/// Applies one rule with its absolute parameter value (λ or ε).
pub fn apply_rule(rule: &RuleInstance, pre: &Ellipsoid, value: Option<f64>) -> Result<Ellipsoid, EllipsoidError> {
    if pre.layout() != rule.pre_layout.as_slice() {
        return Err(layout_error(rule, pre.layout()));
    }
    let missing = |what: &str| EllipsoidError::InvalidParameter(format!("{what} missing"));
    let post = match rule.kind {
        RuleKind::AffineImage | RuleKind::InitZero | RuleKind::Drop | RuleKind::Project => {
            let a = rule.matrix_a.as_ref().ok_or_else(|| missing("matrix"))?;
            affine_image_reverse(pre, a, Some(rule.post_layout.clone()))?
        }
        RuleKind::Intro | RuleKind::Product => {
            let input = rule.input.ok_or_else(|| missing("input bound"))?;
            if !(input.bound > 0.0) || !input.bound.is_finite() {
                return Err(EllipsoidError::InvalidParameter(format!("input bound {} must be positive", input.bound)));
            }
            let name = rule.post_layout.last().cloned().ok_or_else(|| missing("input name"))?;
            let bound = Ellipsoid::new(Form::Reverse, SymMatrix::diag(&[input.bound * input.bound]), vec![name])?;
            if rule.kind == RuleKind::Intro {
                if pre.dim() != 0 {
                    return Err(EllipsoidError::InvalidParameter("input introduction needs an empty state".into()));
                }
                bound
            } else {
                let lambda = value.ok_or_else(|| missing("lambda"))?;
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(EllipsoidError::InvalidParameter(format!("lambda {lambda} outside (0, 1)")));
                }
                let w = ConvexCombinator::new(vec![lambda, 1.0 - lambda])?;
                cartesian_product_reverse(&[pre.clone(), bound], &w)?
            }
        }
        RuleKind::CopyReverse => {
            let a = rule.matrix_a.as_ref().ok_or_else(|| missing("matrix"))?;
            let eps = value.ok_or_else(|| missing("eps"))?;
            let new_vars = rule.post_layout[pre.dim()..].to_vec();
            copy_rule_reverse(pre, a, eps, Some(new_vars))?
        }
        RuleKind::SectorReverse => {
            let eps = value.ok_or_else(|| missing("eps"))?;
            sector_rule_reverse(pre, eps, rule.post_layout.last().cloned())?
        }
        other => {
            return Err(EllipsoidError::InvalidParameter(format!("{other:?} does not apply to reverse-form states")));
        }
    };
    if post.layout() != rule.post_layout.as_slice() {
        return Err(layout_error(rule, post.layout()));
    }
    Ok(post)
}

/// One evaluated step: the post-state and the absolute parameter value used.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub post: Ellipsoid,
    pub value: Option<f64>,
}

/// Runs the rule chain from the loop-head matrix at raw parameters `theta`.
pub fn evaluate(summary: &LoopSummary, theta: &[f64], head: &SymMatrix) -> Result<Vec<StepResult>, EllipsoidError> {
    let mut cur = Ellipsoid::new(Form::Reverse, head.clone(), summary.head_layout.clone())?;
    let mut out = Vec::with_capacity(summary.rules.len());
    for rule in &summary.rules {
        let value = rule.param.map(|k| resolve_param(&summary.params[k], theta[k], &cur));
        let post = apply_rule(rule, &cur, value)?;
        cur = post.clone();
        out.push(StepResult { post, value });
    }
    Ok(out)
}

/// Loop-end matrix `G_θ(P)`.
pub fn loop_map(summary: &LoopSummary, theta: &[f64], head: &SymMatrix) -> Result<SymMatrix, EllipsoidError> {
    let steps = evaluate(summary, theta, head)?;
    Ok(match steps.last() {
        Some(s) => s.post.matrix().clone(),
        None => head.clone(),
    })
}

/// Applies a sequence of rules with absolute values (the per-statement transfer).
pub fn transfer(rules: &[RuleInstance], values: &[Option<f64>], pre: &Ellipsoid) -> Result<Ellipsoid, EllipsoidError> {
    let mut cur = pre.clone();
    for (r, v) in rules.iter().zip(values) {
        cur = apply_rule(r, &cur, *v)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_cfg, parse, unroll_loops};
    use crate::roles::analyze_roles;

    fn compile(src: &str) -> SResult<LoopSummary> {
        let p = parse(src).unwrap();
        let cfg = build_cfg(&p);
        let roles = analyze_roles(&cfg).roles.by_source_name();
        let u = unroll_loops(&cfg).unwrap();
        compile_loop(&u, &roles, &BTreeMap::from([(0, 1.0)]))
    }

    fn kinds(s: &LoopSummary) -> Vec<RuleKind> {
        s.rules.iter().map(|r| r.kind).collect()
    }

    #[test]
    fn contraction_is_one_affine_image() {
        let s = compile("double x = 1; while(1) { x = 0.5*x; }").unwrap();
        assert_eq!(kinds(&s), [RuleKind::AffineImage]);
        assert!(s.params.is_empty());
        assert_eq!(s.head_layout, ["x"]);
        assert_eq!(s.init, [1.0]);
    }

    #[test]
    fn scalar_input_chain() {
        let s = compile("double x = 1000; double u, y; while(1) { u = read(0); x = 0.999*x + 2*u; y = x; write(y); }").unwrap();
        assert_eq!(kinds(&s), [RuleKind::Product, RuleKind::AffineImage, RuleKind::AffineImage, RuleKind::Project]);
        assert_eq!(s.params.len(), 1);
        assert_eq!(s.params[0].kind, ParamKind::Lambda);
        let a = s.rules[1].matrix_a.as_ref().unwrap();
        assert_eq!(a.to_rows(), vec![vec![0.999, 2.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn element_update_matrix() {
        // x[0] = x[0] + a01*x[1] gives T = I + a01 E01
        let s = compile("double a = 0.3; double x[2] = {1, 1}; while(1) { x[0] = x[0] + a*x[1]; x[1] = 0.5*x[1]; }").unwrap();
        let t = s.rules[0].matrix_a.as_ref().unwrap();
        assert_eq!(t.to_rows(), vec![vec![1.0, 0.3], vec![0.0, 1.0]]);
    }

    #[test]
    fn zero_init_entering_layout() {
        let s = compile("double x = 1, y; while(1) { y = 0; y = y + x; x = 0.5*y; }").unwrap();
        assert_eq!(s.rules[0].kind, RuleKind::InitZero);
        assert_eq!(s.rules[0].matrix_a.as_ref().unwrap().to_rows(), vec![vec![1.0], vec![0.0]]);
    }

    #[test]
    fn sector_chain() {
        let s = compile("double x = 1; while(1) { x = 0.5*x + 0.25*sin(x); }").unwrap();
        assert_eq!(
            kinds(&s),
            [RuleKind::CopyReverse, RuleKind::SectorReverse, RuleKind::AffineImage, RuleKind::Drop]
        );
        let names: Vec<_> = s.params.iter().map(|p| p.kind).collect();
        assert_eq!(names, [ParamKind::EpsY, ParamKind::EpsU]);
    }

    #[test]
    fn expansion_shapes() {
        let x = LValue::scalar("x");
        let rhs = parse("double x, b, c; while(1) { x = x + b*sin(c*x); }").unwrap();
        let crate::frontend::StmtKind::WhileTrue { body } = &rhs.body[0].kind else { panic!() };
        let crate::frontend::StmtKind::Assign { rhs, .. } = &body[0].kind else { panic!() };
        let steps = expand_nonlinear(&x, rhs, "y", "u").unwrap();
        let text: Vec<String> = steps.iter().map(|(l, e)| format!("{} = {}", lvalue_str(l), expr_str(e))).collect();
        assert_eq!(text, ["y = c * x", "u = sin(y)", "x = x + b * u"]);

        let f_of_x = Expr::Call("sin".into(), Box::new(Expr::Var(x.clone())));
        let steps = expand_nonlinear(&x, &f_of_x, "y", "u").unwrap();
        let text: Vec<String> = steps.iter().map(|(l, e)| format!("{} = {}", lvalue_str(l), expr_str(e))).collect();
        assert_eq!(text, ["y = x", "u = sin(y)", "x = u"]);

        let nested = Expr::Call("sin".into(), Box::new(f_of_x));
        assert!(expand_nonlinear(&x, &nested, "y", "u").is_err());
    }

    #[test]
    fn unmatched_statements() {
        for src in [
            "double x = 1; while(1) { x = x*x; }",
            "double x = 1; while(1) { x = 0.5*x + 1; }",
            "double x = 1; while(1) { x = sin(sin(x)); }",
            "double x = 1; while(1) { x = sin(x) + sin(x); }",
        ] {
            let e = compile(src).unwrap_err();
            assert_eq!(e.kind, SemErrorKind::UnmatchedStatement, "{src}");
            assert!(e.span.line >= 1);
        }
    }

    #[test]
    fn missing_loop_and_prefix() {
        assert_eq!(compile("double x = 1; x = 0.5*x;").unwrap_err().kind, SemErrorKind::MissingLoop);
        assert_eq!(
            compile("double x; x = 1; while(1) { x = 0.5*x; }").unwrap_err().kind,
            SemErrorKind::PrefixStatements
        );
    }

    #[test]
    fn parameters_evaluated_in_loop() {
        let s = compile("double k, u, y, x = 1; while(1) { u = read(0); k = 2.0; x = 0.5*x + k*u; }").unwrap();
        let a = s.rules[1].matrix_a.as_ref().unwrap();
        assert_eq!(a.to_rows()[0], vec![0.5, 2.0]);
        assert_eq!(
            compile("double k = 1, m, x = 1; while(1) { x = k*x; k = m; m = 0.5; }").unwrap_err().kind,
            SemErrorKind::ParameterNotInvariant
        );
    }

    #[test]
    fn reading_a_tracked_input_drops_it_first() {
        let s = compile("double x = 1, u; while(1) { x = 0.5*x + u; u = read(0); }").unwrap();
        assert_eq!(s.head_layout, ["x", "u"]);
        assert_eq!(kinds(&s), [RuleKind::AffineImage, RuleKind::Drop, RuleKind::Product]);
    }

    #[test]
    fn evaluation_matches_manual_product() {
        let s = compile("double x = 0; double u; while(1) { u = read(0); x = 0.5*x + u; }").unwrap();
        let g = loop_map(&s, &[0.5], &SymMatrix::diag(&[4.0])).unwrap();
        // diag(4/0.5, 1/0.5) then row [0.5, 1]: 0.25*8 + 2 = 4
        assert!((g[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trip() {
        let dims = [2, 3, 4];
        for k in 0..24 {
            assert_eq!(flatten(&unflatten(k, &dims), &dims), k);
        }
    }
}
