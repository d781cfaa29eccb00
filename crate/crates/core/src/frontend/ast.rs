use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarType {
    Double,
    Float,
    Int,
}

impl ScalarType {
    pub fn keyword(self) -> &'static str {
        match self {
            ScalarType::Double => "double",
            ScalarType::Float => "float",
            ScalarType::Int => "int",
        }
    }
}

/// Constant initializer, possibly a nested brace list.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Value(f64),
    List(Vec<Init>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub ty: ScalarType,
    pub dims: Vec<usize>,
    pub init: Option<Init>,
    pub span: Span,
}

impl VarDecl {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Initial values in row-major order; missing entries are zero (C semantics).
    pub fn flat_init(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        fn walk(init: &Init, dims: &[usize], out: &mut Vec<f64>) {
            match (init, dims.split_first()) {
                (Init::Value(v), None) => out.push(*v),
                (Init::Value(v), Some(_)) => {
                    // scalar initializer for an aggregate fills the first element
                    let start = out.len();
                    out.push(*v);
                    let total: usize = dims.iter().product();
                    out.resize(start + total, 0.0);
                }
                (Init::List(items), None) => match items.first() {
                    Some(first) => walk(first, &[], out),
                    None => out.push(0.0),
                },
                (Init::List(items), Some((&n, rest))) => {
                    let stride: usize = rest.iter().product();
                    let start = out.len();
                    for item in items.iter().take(n) {
                        let before = out.len();
                        walk(item, rest, out);
                        out.resize(before + stride, 0.0);
                    }
                    out.resize(start + n * stride, 0.0);
                }
            }
        }
        match &self.init {
            Some(init) => walk(init, &self.dims, &mut out),
            None => {}
        }
        out.resize(self.len().max(1), 0.0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LValue {
    pub name: String,
    pub indices: Vec<Expr>,
}

impl LValue {
    pub fn scalar(name: impl Into<String>) -> Self {
        LValue { name: name.into(), indices: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(LValue),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Calls `f` on every variable reference, including those inside subscripts.
    pub fn visit_vars<'a>(&'a self, f: &mut impl FnMut(&'a LValue)) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(lv) => {
                f(lv);
                for i in &lv.indices {
                    i.visit_vars(f);
                }
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.visit_vars(f),
            Expr::Bin(_, a, b) => {
                a.visit_vars(f);
                b.visit_vars(f);
            }
        }
    }

    /// Base names read for their value (subscript variables excluded).
    pub fn value_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(lv) => {
                out.insert(lv.name.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.value_vars(out),
            Expr::Bin(_, a, b) => {
                a.value_vars(out);
                b.value_vars(out);
            }
        }
    }

    /// Base names appearing inside subscript expressions.
    pub fn subscript_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(lv) => lvalue_subscript_vars(lv, out),
            Expr::Neg(e) | Expr::Call(_, e) => e.subscript_vars(out),
            Expr::Bin(_, a, b) => {
                a.subscript_vars(out);
                b.subscript_vars(out);
            }
        }
    }

    pub fn calls(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 0,
            Expr::Neg(e) => e.calls(),
            Expr::Call(_, e) => 1 + e.calls(),
            Expr::Bin(_, a, b) => a.calls() + b.calls(),
        }
    }

    pub fn map_vars(&self, f: &mut impl FnMut(&LValue) -> Expr) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(lv) => f(lv),
            Expr::Neg(e) => Expr::Neg(Box::new(e.map_vars(f))),
            Expr::Call(name, e) => Expr::Call(name.clone(), Box::new(e.map_vars(f))),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.map_vars(f), b.map_vars(f)),
        }
    }

    /// Evaluates an expression made only of numeric literals.
    pub fn const_value(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Var(_) | Expr::Call(..) => None,
            Expr::Neg(e) => e.const_value().map(|v| -v),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.const_value()?, b.const_value()?);
                Some(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                })
            }
        }
    }
}

pub fn lvalue_subscript_vars(lv: &LValue, out: &mut BTreeSet<String>) {
    for i in &lv.indices {
        i.value_vars(out);
        i.subscript_vars(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cond {
    pub lhs: Expr,
    pub op: RelOp,
    pub rhs: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StmtId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub id: StmtId,
    pub span: Span,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { lhs: LValue, op: AssignOp, rhs: Expr },
    Read { lhs: LValue, channel: u32 },
    Write { value: Expr },
    Assume { cond: Cond },
    /// `for (index = lo; index < hi; index++)`, half-open bounds.
    For { index: String, lo: i64, hi: i64, body: Vec<Stmt> },
    WhileTrue { body: Vec<Stmt> },
}

impl StmtKind {
    /// The right-hand side after desugaring `+=`/`-=`.
    pub fn effective_rhs(lhs: &LValue, op: AssignOp, rhs: &Expr) -> Expr {
        match op {
            AssignOp::Set => rhs.clone(),
            AssignOp::Add => Expr::bin(BinOp::Add, Expr::Var(lhs.clone()), rhs.clone()),
            AssignOp::Sub => Expr::bin(BinOp::Sub, Expr::Var(lhs.clone()), rhs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceProgram {
    pub decls: Vec<VarDecl>,
    pub nonlins: Vec<String>,
    pub body: Vec<Stmt>,
    /// Digest of the token stream; independent of whitespace and comments.
    pub token_hash: String,
}

/// Builtin sector-bounded functions.
pub const BUILTIN_SECTOR: &[&str] = &["sin"];

impl SourceProgram {
    pub fn decl(&self, name: &str) -> Option<&VarDecl> {
        let base = base_name(name);
        self.decls.iter().find(|d| d.name == base)
    }

    pub fn is_sector_fn(&self, name: &str) -> bool {
        BUILTIN_SECTOR.contains(&name) || self.nonlins.iter().any(|n| n == name)
    }

    /// Copy with spans and statement ids cleared, for structural comparison.
    pub fn normalized(&self) -> SourceProgram {
        fn strip(stmts: &[Stmt]) -> Vec<Stmt> {
            stmts
                .iter()
                .map(|s| Stmt {
                    id: StmtId(0),
                    span: Span::default(),
                    kind: match &s.kind {
                        StmtKind::For { index, lo, hi, body } => {
                            StmtKind::For { index: index.clone(), lo: *lo, hi: *hi, body: strip(body) }
                        }
                        StmtKind::WhileTrue { body } => StmtKind::WhileTrue { body: strip(body) },
                        other => other.clone(),
                    },
                })
                .collect()
        }
        SourceProgram {
            decls: self.decls.iter().map(|d| VarDecl { span: Span::default(), ..d.clone() }).collect(),
            nonlins: self.nonlins.clone(),
            body: strip(&self.body),
            token_hash: String::new(),
        }
    }
}

/// Strips a persistence-range suffix: `t#2` → `t`.
pub fn base_name(name: &str) -> &str {
    name.split('#').next().unwrap_or(name)
}

/// A scalar storage location: a variable with concrete subscripts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub indices: Vec<usize>,
}

impl Slot {
    pub fn scalar(name: impl Into<String>) -> Self {
        Slot { name: name.into(), indices: Vec::new() }
    }

    pub fn indexed(name: impl Into<String>, indices: Vec<usize>) -> Self {
        Slot { name: name.into(), indices }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for i in &self.indices {
            write!(f, "[{i}]")?;
        }
        Ok(())
    }
}
