use std::fmt::Write;

use super::ast::*;

/// Renders a program back to source. Declarations are hoisted to the top, so
/// the output reparses to the same AST.
pub fn pretty_print(p: &SourceProgram) -> String {
    let mut out = String::new();
    if !p.nonlins.is_empty() {
        let _ = writeln!(out, "nonlin {};", p.nonlins.join(", "));
    }
    for d in &p.decls {
        let _ = write!(out, "{} {}", d.ty.keyword(), d.name);
        for n in &d.dims {
            let _ = write!(out, "[{n}]");
        }
        if let Some(init) = &d.init {
            out.push_str(" = ");
            init_str(init, &mut out);
        }
        out.push_str(";\n");
    }
    for s in &p.body {
        stmt_str(s, 0, &mut out);
    }
    out
}

fn init_str(init: &Init, out: &mut String) {
    match init {
        Init::Value(v) => out.push_str(&num(*v)),
        Init::List(items) => {
            out.push('{');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                init_str(item, out);
            }
            out.push('}');
        }
    }
}

fn num(v: f64) -> String {
    if v < 0.0 {
        format!("-{}", -v)
    } else {
        format!("{v}")
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn stmt_str(s: &Stmt, depth: usize, out: &mut String) {
    indent(depth, out);
    match &s.kind {
        StmtKind::Assign { lhs, op, rhs } => {
            let _ = writeln!(out, "{} {} {};", lvalue_str(lhs), op.symbol(), expr_str(rhs));
        }
        StmtKind::Read { lhs, channel } => {
            let _ = writeln!(out, "{} = read({channel});", lvalue_str(lhs));
        }
        StmtKind::Write { value } => {
            let _ = writeln!(out, "write({});", expr_str(value));
        }
        StmtKind::Assume { cond } => {
            let _ = writeln!(out, "assume({} {} {});", expr_str(&cond.lhs), cond.op.symbol(), expr_str(&cond.rhs));
        }
        StmtKind::For { index, lo, hi, body } => {
            let _ = writeln!(out, "for ({index} = {lo}; {index} < {hi}; {index}++) {{");
            for b in body {
                stmt_str(b, depth + 1, out);
            }
            indent(depth, out);
            out.push_str("}\n");
        }
        StmtKind::WhileTrue { body } => {
            out.push_str("while (1) {\n");
            for b in body {
                stmt_str(b, depth + 1, out);
            }
            indent(depth, out);
            out.push_str("}\n");
        }
    }
}

pub fn lvalue_str(lv: &LValue) -> String {
    let mut s = lv.name.clone();
    for i in &lv.indices {
        let _ = write!(s, "[{}]", expr_str(i));
    }
    s
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 => 3,
        _ => 4,
    }
}

pub fn expr_str(e: &Expr) -> String {
    match e {
        Expr::Num(v) => num(*v),
        Expr::Var(lv) => lvalue_str(lv),
        Expr::Call(f, arg) => format!("{f}({})", expr_str(arg)),
        Expr::Neg(inner) => {
            if prec(inner) < 4 {
                format!("-({})", expr_str(inner))
            } else {
                format!("-{}", expr_str(inner))
            }
        }
        Expr::Bin(op, a, b) => {
            let p = prec(e);
            let left = if prec(a) < p { format!("({})", expr_str(a)) } else { expr_str(a) };
            let right = if prec(b) <= p { format!("({})", expr_str(b)) } else { expr_str(b) };
            format!("{left} {} {right}", op.symbol())
        }
    }
}
