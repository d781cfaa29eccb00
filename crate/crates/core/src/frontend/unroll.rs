use std::collections::{BTreeSet, HashMap};

use super::ast::*;
use super::cfg::{build_cfg, Cfg};
use super::{ErrorKind, FrontendError, Span};

/// Maximum number of statement instances produced by unrolling.
pub const UNROLL_LIMIT: u64 = 1_000_000;

/// Fully unrolls every `for` loop, substituting index variables by constants.
pub fn unroll_loops(cfg: &Cfg) -> Result<Cfg, FrontendError> {
    let prog = unroll_program(&cfg.program)?;
    Ok(build_cfg(&prog))
}

pub fn unroll_program(p: &SourceProgram) -> Result<SourceProgram, FrontendError> {
    instance_count(&p.body)?;
    let mut indices = BTreeSet::new();
    collect_indices(&p.body, &mut indices);
    let u = Unroller { prog: p, indices, env: HashMap::new() };
    let mut u = u;
    let body = u.stmts(&p.body)?;
    Ok(SourceProgram { body, ..p.clone() })
}

fn instance_count(stmts: &[Stmt]) -> Result<u64, FrontendError> {
    let mut total: u64 = 0;
    for s in stmts {
        let n = match &s.kind {
            StmtKind::For { lo, hi, body, .. } => {
                let trip = u64::try_from(hi.saturating_sub(*lo)).unwrap_or(0);
                trip.saturating_mul(instance_count(body)?.max(1))
            }
            StmtKind::WhileTrue { body } => instance_count(body)?,
            _ => 1,
        };
        if n > UNROLL_LIMIT {
            return Err(FrontendError::new(
                ErrorKind::UnrollLimit,
                s.span,
                format!("unrolling produces {n} statement instances (limit {UNROLL_LIMIT})"),
            ));
        }
        total = total.saturating_add(n);
    }
    if total > UNROLL_LIMIT {
        let span = stmts.first().map_or(Span::default(), |s| s.span);
        return Err(FrontendError::new(
            ErrorKind::UnrollLimit,
            span,
            format!("unrolling produces {total} statement instances (limit {UNROLL_LIMIT})"),
        ));
    }
    Ok(total)
}

fn collect_indices(stmts: &[Stmt], out: &mut BTreeSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::For { index, body, .. } => {
                out.insert(index.clone());
                collect_indices(body, out);
            }
            StmtKind::WhileTrue { body } => collect_indices(body, out),
            _ => {}
        }
    }
}

struct Unroller<'a> {
    prog: &'a SourceProgram,
    indices: BTreeSet<String>,
    env: HashMap<String, i64>,
}

impl Unroller<'_> {
    fn stmts(&mut self, stmts: &[Stmt]) -> Result<Vec<Stmt>, FrontendError> {
        let mut out = Vec::new();
        for s in stmts {
            self.stmt(s, &mut out)?;
        }
        Ok(out)
    }

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<Stmt>) -> Result<(), FrontendError> {
        let sp = s.span;
        let kind = match &s.kind {
            StmtKind::For { index, lo, hi, body } => {
                let saved = self.env.get(index).copied();
                for k in *lo..*hi {
                    self.env.insert(index.clone(), k);
                    for b in body {
                        self.stmt(b, out)?;
                    }
                }
                match saved {
                    Some(v) => self.env.insert(index.clone(), v),
                    None => self.env.remove(index),
                };
                return Ok(());
            }
            StmtKind::WhileTrue { body } => StmtKind::WhileTrue { body: self.stmts(body)? },
            StmtKind::Assign { lhs, op, rhs } => {
                self.check_not_index(lhs, sp)?;
                StmtKind::Assign { lhs: self.lvalue(lhs, sp)?, op: *op, rhs: self.expr(rhs, sp)? }
            }
            StmtKind::Read { lhs, channel } => {
                self.check_not_index(lhs, sp)?;
                StmtKind::Read { lhs: self.lvalue(lhs, sp)?, channel: *channel }
            }
            StmtKind::Write { value } => StmtKind::Write { value: self.expr(value, sp)? },
            StmtKind::Assume { cond } => StmtKind::Assume {
                cond: Cond { lhs: self.expr(&cond.lhs, sp)?, op: cond.op, rhs: self.expr(&cond.rhs, sp)? },
            },
        };
        out.push(Stmt { id: s.id, span: sp, kind });
        Ok(())
    }

    fn check_not_index(&self, lhs: &LValue, sp: Span) -> Result<(), FrontendError> {
        if self.indices.contains(&lhs.name) {
            return Err(FrontendError::new(
                ErrorKind::Unsupported,
                sp,
                format!("assignment to loop index `{}` outside its loop header", lhs.name),
            ));
        }
        Ok(())
    }

    fn expr(&self, e: &Expr, sp: Span) -> Result<Expr, FrontendError> {
        Ok(match e {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(lv) if self.indices.contains(&lv.name) => match self.env.get(&lv.name) {
                Some(&k) => Expr::Num(k as f64),
                None => {
                    return Err(FrontendError::new(
                        ErrorKind::Unsupported,
                        sp,
                        format!("loop index `{}` used outside its loop", lv.name),
                    ))
                }
            },
            Expr::Var(lv) => Expr::Var(self.lvalue(lv, sp)?),
            Expr::Neg(a) => Expr::Neg(Box::new(self.expr(a, sp)?)),
            Expr::Call(f, a) => Expr::Call(f.clone(), Box::new(self.expr(a, sp)?)),
            Expr::Bin(op, a, b) => Expr::bin(*op, self.expr(a, sp)?, self.expr(b, sp)?),
        })
    }

    fn lvalue(&self, lv: &LValue, sp: Span) -> Result<LValue, FrontendError> {
        if lv.indices.is_empty() {
            return Ok(lv.clone());
        }
        let dims = self.prog.decl(&lv.name).map(|d| d.dims.clone()).unwrap_or_default();
        let mut indices = Vec::with_capacity(lv.indices.len());
        for (axis, ix) in lv.indices.iter().enumerate() {
            let resolved = self.expr(ix, sp)?;
            let Some(v) = resolved.const_value() else {
                return Err(FrontendError::new(
                    ErrorKind::NonConstant,
                    sp,
                    format!("subscript of `{}` is not constant after unrolling", lv.name),
                ));
            };
            let dim = dims.get(axis).copied().unwrap_or(0);
            if v.fract() != 0.0 || v < 0.0 || v >= dim as f64 {
                return Err(FrontendError::new(
                    ErrorKind::IndexOutOfBounds,
                    sp,
                    format!("subscript {v} out of bounds for `{}` (dimension {dim})", lv.name),
                ));
            }
            indices.push(Expr::Num(v));
        }
        Ok(LValue { name: lv.name.clone(), indices })
    }
}

/// Concrete subscripts of an unrolled lvalue.
pub fn const_indices(lv: &LValue) -> Option<Vec<usize>> {
    lv.indices
        .iter()
        .map(|e| e.const_value().filter(|v| *v >= 0.0 && v.fract() == 0.0).map(|v| v as usize))
        .collect()
}

pub fn slot_of(lv: &LValue) -> Option<Slot> {
    Some(Slot::indexed(lv.name.clone(), const_indices(lv)?))
}
