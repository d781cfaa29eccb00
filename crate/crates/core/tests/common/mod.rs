//! Reference interpreter for CFGs, independent of the library's evaluator.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ellipcert_core::frontend::ast::BinOp;
use ellipcert_core::frontend::{Cfg, Expr, LValue, NodeKind, SourceProgram};

pub struct Machine<'a> {
    pub prog: &'a SourceProgram,
    pub store: BTreeMap<String, Vec<f64>>,
    pub inputs: Vec<f64>,
    pub reads: usize,
    pub writes: Vec<f64>,
}

impl<'a> Machine<'a> {
    pub fn new(prog: &'a SourceProgram, store: BTreeMap<String, Vec<f64>>, inputs: Vec<f64>) -> Self {
        Machine { prog, store, inputs, reads: 0, writes: Vec::new() }
    }

    pub fn slot(&self, lv: &LValue) -> (String, usize) {
        let decl = self.prog.decl(&lv.name).expect("declared");
        let mut flat = 0;
        for (k, e) in lv.indices.iter().enumerate() {
            let i = self.eval(e);
            assert!(i >= 0.0 && i.fract() == 0.0, "bad subscript {i}");
            flat = flat * decl.dims[k] + i as usize;
        }
        (lv.name.clone(), flat)
    }

    pub fn eval(&self, e: &Expr) -> f64 {
        match e {
            Expr::Num(v) => *v,
            Expr::Var(lv) => {
                let (n, k) = self.slot(lv);
                self.store[&n][k]
            }
            Expr::Neg(a) => -self.eval(a),
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.eval(a), self.eval(b));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(_, a) => self.eval(a).sin(),
        }
    }

    pub fn set(&mut self, lv: &LValue, v: f64) {
        let (n, k) = self.slot(lv);
        self.store.get_mut(&n).unwrap()[k] = v;
    }

    /// Runs one loop iteration starting at the loop head.
    pub fn iterate(&mut self, cfg: &Cfg) {
        let head = cfg.loop_head.expect("loop");
        let mut cur = head;
        for _ in 0..1_000_000 {
            let node = cfg.node(cur);
            let mut next = node.succs[0];
            match &node.kind {
                NodeKind::Assign { lhs, rhs } => {
                    let v = self.eval(rhs);
                    self.set(lhs, v);
                }
                NodeKind::Read { lhs, .. } => {
                    let v = self.inputs[self.reads];
                    self.reads += 1;
                    self.set(lhs, v);
                }
                NodeKind::Write { value } => self.writes.push(self.eval(value)),
                NodeKind::ForInit { index, lo } => self.set(&LValue::scalar(index.clone()), *lo as f64),
                NodeKind::ForTest { index, hi } => {
                    if self.store[index][0] >= *hi as f64 {
                        next = node.succs[1];
                    }
                }
                NodeKind::ForIncr { index } => {
                    let v = self.store[index][0] + 1.0;
                    self.set(&LValue::scalar(index.clone()), v);
                }
                NodeKind::Assume { .. } | NodeKind::Entry | NodeKind::Exit => {}
            }
            if next == head {
                return;
            }
            cur = next;
        }
        panic!("iteration did not return to the loop head");
    }
}
