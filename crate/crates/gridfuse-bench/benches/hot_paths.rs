//! Benchmarks for the hot paths: power flow, dense eigensolve, fused
//! model assembly with gradients, and the midpoint rollout.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use gridfuse_core::eig::eig_dense;
use gridfuse_core::fusion::{fuse_global_tape, global_rollout, ComponentVars};
use gridfuse_core::grid::dataset::{generate_dataset, DatasetConfig};
use gridfuse_core::grid::linearize::{linearize_all, truth_global};
use gridfuse_core::grid::powerflow::newton_power_flow;
use gridfuse_core::grid::two_machine_three_bus;
use gridfuse_core::tape::Tape;
use gridfuse_core::tensor::Tensor;

fn bench_power_flow(c: &mut Criterion) {
    let grid = two_machine_three_bus();
    let op = grid.nominal_op();
    c.bench_function("power_flow_two_machine", |b| {
        b.iter(|| newton_power_flow(black_box(&grid), black_box(&op)).unwrap())
    });
}

fn bench_eig(c: &mut Criterion) {
    let grid = two_machine_three_bus();
    let op = grid.nominal_op();
    let eq = newton_power_flow(&grid, &op).unwrap();
    let truth = truth_global(&grid, &eq).unwrap();
    c.bench_function("eig_dense_4x4", |b| {
        b.iter(|| eig_dense(black_box(&truth.a_sys)).unwrap())
    });
}

fn bench_fusion_grad(c: &mut Criterion) {
    let grid = two_machine_three_bus();
    let op = grid.nominal_op();
    let eq = newton_power_flow(&grid, &op).unwrap();
    let comps = linearize_all(&grid, &eq);
    c.bench_function("fuse_global_with_gradient", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars: Vec<ComponentVars> = comps
                .iter()
                .map(|cm| ComponentVars {
                    a: tape.leaf(cm.a.clone()),
                    b: tape.leaf(cm.b.clone()),
                    c: tape.leaf(cm.c.clone()),
                    d: tape.leaf(cm.d.clone()),
                    b_state: tape.leaf(cm.b_state.clone()),
                    b_output: tape.leaf(cm.b_output.clone()),
                })
                .collect();
            let m_net = tape.leaf(eq.m_net.clone());
            let g = fuse_global_tape(&mut tape, &vars, m_net).unwrap();
            let loss = tape.sq_sum(g.a_sys);
            let grads = tape.backward(loss).unwrap();
            black_box(grads);
        })
    });
}

fn bench_rollout(c: &mut Criterion) {
    let grid = two_machine_three_bus();
    let op = grid.nominal_op();
    let eq = newton_power_flow(&grid, &op).unwrap();
    let truth = truth_global(&grid, &eq).unwrap();
    let x0 = Tensor::new(vec![4], vec![0.01, 0.0, -0.01, 0.0]);
    c.bench_function("global_rollout_200_steps", |b| {
        b.iter(|| global_rollout(black_box(&truth), black_box(&x0), 200, 0.01).unwrap())
    });
}

fn bench_dataset(c: &mut Criterion) {
    let grid = two_machine_three_bus();
    let cfg = DatasetConfig {
        n_samples: 2,
        steps: 200,
        ..DatasetConfig::benchmark("two-machine-three-bus", 2, 5)
    };
    c.bench_function("simulate_two_samples_200_steps", |b| {
        b.iter(|| generate_dataset(black_box(&grid), black_box(&cfg)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_power_flow,
    bench_eig,
    bench_fusion_grad,
    bench_rollout,
    bench_dataset
);
criterion_main!(benches);
