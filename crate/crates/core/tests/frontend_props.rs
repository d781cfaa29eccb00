//! Semantic properties of unrolling and role classification, checked with a
//! small CFG interpreter written independently of the library.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::Machine;
use ellipcert_core::frontend::ast::{BinOp, Cond};
use ellipcert_core::frontend::{build_cfg, parse, unroll_loops, Expr, NodeKind, SourceProgram, Stmt, StmtKind};
use ellipcert_core::roles::{analyze_roles, compute_liveness, persistence_ranges};

const NESTED: &str = "
double M[3][2] = { {1, 2}, {3, 4}, {5, 6} };
double v[2] = { 1, 1 };
double w[3];
double acc, u;
int i, j;
while (1) {
  u = read(0);
  for (i = 0; i < 3; i++) {
    w[i] = 0;
    for (j = 0; j <= 1; j++) w[i] += M[i][j]*v[j];
    w[i] -= 0.5*u;
  }
  acc = 0;
  for (i = 0; i < 3; i++) acc = acc + w[i]/3;
  for (j = 0; j < 2; j++) v[j] = 0.1*v[j] + 0.01*acc + 0.2*sin(w[j]);
  write(acc);
}";

const FLAT: &str = "
double x = 1, k = 2.5, y, t;
while (1) {
  t = k*x;
  x = 0.5*x - 0.1*t;
  y = -x + (t - 1)*0.25;
  write(y);
}";

fn corpus() -> Vec<(String, String)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ctl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out.push(("nested".into(), NESTED.into()));
    out.push(("flat".into(), FLAT.into()));
    out
}

fn loop_indices(prog: &SourceProgram) -> BTreeSet<String> {
    fn walk(stmts: &[Stmt], out: &mut BTreeSet<String>) {
        for s in stmts {
            match &s.kind {
                StmtKind::For { index, body, .. } => {
                    out.insert(index.clone());
                    walk(body, out);
                }
                StmtKind::WhileTrue { body } => walk(body, out),
                _ => {}
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(&prog.body, &mut out);
    out
}

#[test]
fn unrolling_preserves_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, src) in corpus() {
        let prog = parse(&src).unwrap();
        let cfg = build_cfg(&prog);
        let unrolled = unroll_loops(&cfg).unwrap();
        let indices = loop_indices(&prog);
        for _ in 0..50 {
            let store: BTreeMap<String, Vec<f64>> = prog
                .decls
                .iter()
                .map(|d| (d.name.clone(), (0..d.len()).map(|_| rng.gen_range(-2.0..2.0)).collect()))
                .collect();
            let inputs: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut a = Machine::new(&prog, store.clone(), inputs.clone());
            let mut b = Machine::new(&unrolled.program, store, inputs);
            a.iterate(&cfg);
            b.iterate(&unrolled);
            for (var, vals) in &a.store {
                if indices.contains(var) {
                    continue;
                }
                let other = &b.store[var];
                let same = vals.iter().zip(other).all(|(x, y)| x.to_bits() == y.to_bits());
                assert!(same, "{name}: `{var}` differs: {vals:?} vs {other:?}");
            }
            assert_eq!(a.reads, b.reads, "{name}: read count");
            let same = a.writes.iter().zip(&b.writes).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same && a.writes.len() == b.writes.len(), "{name}: writes differ");
        }
    }
}

#[test]
fn unrolled_nodes_are_elementary() {
    for (name, src) in corpus() {
        let unrolled = unroll_loops(&build_cfg(&parse(&src).unwrap())).unwrap();
        for node in &unrolled.nodes {
            assert!(
                !matches!(node.kind, NodeKind::ForInit { .. } | NodeKind::ForTest { .. } | NodeKind::ForIncr { .. }),
                "{name}: loop node survived unrolling"
            );
            let subscripts_constant = match &node.kind {
                NodeKind::Assign { lhs, .. } | NodeKind::Read { lhs, .. } => {
                    lhs.indices.iter().all(|e| e.const_value().is_some())
                }
                _ => true,
            };
            assert!(subscripts_constant, "{name}: non-constant subscript after unrolling");
            assert!(node.succs.len() <= 1, "{name}: branching node after unrolling");
        }
    }
}

#[test]
fn renamed_variables_have_one_range() {
    for (name, src) in corpus() {
        let analysis = analyze_roles(&build_cfg(&parse(&src).unwrap()));
        let live = compute_liveness(&analysis.renamed);
        let ranges = persistence_ranges(&live, &analysis.renamed);
        let mut count: BTreeMap<&str, usize> = BTreeMap::new();
        for r in ranges.iter().filter(|r| !r.edges.is_empty()) {
            *count.entry(r.variable.as_str()).or_default() += 1;
        }
        for (var, n) in count {
            assert_eq!(n, 1, "{name}: `{var}` has {n} ranges after renaming");
        }
    }
}

fn commute(e: &Expr) -> Expr {
    match e {
        Expr::Bin(op @ (BinOp::Add | BinOp::Mul), a, b) => Expr::bin(*op, commute(b), commute(a)),
        Expr::Bin(op, a, b) => Expr::bin(*op, commute(a), commute(b)),
        Expr::Neg(a) => Expr::Neg(Box::new(commute(a))),
        Expr::Call(f, a) => Expr::Call(f.clone(), Box::new(commute(a))),
        other => other.clone(),
    }
}

fn commute_stmts(stmts: &[Stmt]) -> Vec<Stmt> {
    stmts
        .iter()
        .map(|s| {
            let kind = match &s.kind {
                StmtKind::Assign { lhs, op, rhs } => StmtKind::Assign { lhs: lhs.clone(), op: *op, rhs: commute(rhs) },
                StmtKind::Write { value } => StmtKind::Write { value: commute(value) },
                StmtKind::Assume { cond } => {
                    StmtKind::Assume { cond: Cond { lhs: commute(&cond.lhs), op: cond.op, rhs: commute(&cond.rhs) } }
                }
                StmtKind::For { index, lo, hi, body } => {
                    StmtKind::For { index: index.clone(), lo: *lo, hi: *hi, body: commute_stmts(body) }
                }
                StmtKind::WhileTrue { body } => StmtKind::WhileTrue { body: commute_stmts(body) },
                other => other.clone(),
            };
            Stmt { kind, ..s.clone() }
        })
        .collect()
}

#[test]
fn classification_ignores_term_order() {
    for (name, src) in corpus() {
        let prog = parse(&src).unwrap();
        let swapped = SourceProgram { body: commute_stmts(&prog.body), ..prog.clone() };
        assert_ne!(swapped.body, prog.body, "{name}: nothing to permute");
        let a = analyze_roles(&build_cfg(&prog)).roles;
        let b = analyze_roles(&build_cfg(&swapped)).roles;
        assert_eq!(a.by_source_name(), b.by_source_name(), "{name}");
        assert_eq!(a, b, "{name}");
    }
}
