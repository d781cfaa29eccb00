use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ellipcert_core::certificate::{emit, replay};
use ellipcert_core::frontend::parse;
use ellipcert_core::pipeline::analyze_source;
use ellipcert_core::synthesis::{solve_discrete_lyapunov, synthesize, SynthesisConfig};
use ellipcert_core::{Matrix, SymMatrix};

const SCALAR: &str = include_str!("../../core/tests/fixtures/scalar_input.ctl");
const TWO_STATE: &str = include_str!("../../core/tests/fixtures/two_state.ctl");
const STABLE: &str = include_str!("../../core/tests/fixtures/two_state_stable.ctl");

fn inputs() -> BTreeMap<u32, f64> {
    BTreeMap::from([(0, 1.0)])
}

fn frontend(c: &mut Criterion) {
    c.bench_function("parse two_state", |b| b.iter(|| parse(black_box(TWO_STATE)).unwrap()));
    c.bench_function("compile two_state", |b| b.iter(|| analyze_source(black_box(TWO_STATE), &inputs()).unwrap()));
}

fn lyapunov(c: &mut Criterion) {
    let n = 10;
    let a = Matrix::from_row_major(n, n, (0..n * n).map(|k| if k % (n + 1) == 0 { 0.5 } else { 0.01 * (k % 7) as f64 }).collect());
    let q = SymMatrix::identity(n);
    c.bench_function("lyapunov n=10", |b| b.iter(|| solve_discrete_lyapunov(black_box(&a), &q).unwrap()));
}

fn synthesis(c: &mut Criterion) {
    let cfg = SynthesisConfig::default();
    let scalar = analyze_source(SCALAR, &inputs()).unwrap();
    c.bench_function("synthesize scalar_input", |b| b.iter(|| synthesize(black_box(&scalar.summary), &cfg)));

    let stable = analyze_source(STABLE, &inputs()).unwrap();
    let result = synthesize(&stable.summary, &cfg);
    let cert = emit(&result, &stable.summary, &stable.program.token_hash).unwrap();
    c.bench_function("replay two_state_stable", |b| b.iter(|| replay(black_box(&cert), STABLE)));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = frontend, lyapunov, synthesis
}
criterion_main!(benches);
