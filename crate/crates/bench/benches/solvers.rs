//! Criterion benchmarks for the hot paths: assembly, the implicit forward
//! solve, and one objective/gradient evaluation of the inverse problem.

use adcfit::fem::{assemble, solve_spd, MassLumping};
use adcfit::forward::{forward_solve, BoundaryControl, ControlState};
use adcfit::inverse::{InverseProblem, RegParams};
use adcfit::mesh::{generate_phantom, PhantomVariant, DEFAULT_SHELL_FRACTIONS};
use adcfit::synthetic::{make_synthetic_observations, manufactured_g, NoiseSpec};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_assembly(c: &mut Criterion) {
    let mesh = generate_phantom(8, 80.0, PhantomVariant::TwoDomain, DEFAULT_SHELL_FRACTIONS)
        .unwrap();
    c.bench_function("assemble_res8", |b| {
        b.iter(|| assemble(black_box(&mesh), MassLumping::Consistent).unwrap())
    });
}

fn bench_cg(c: &mut Criterion) {
    let mesh = generate_phantom(8, 80.0, PhantomVariant::TwoDomain, DEFAULT_SHELL_FRACTIONS)
        .unwrap();
    let sys = assemble(&mesh, MassLumping::Consistent).unwrap();
    let a = sys.time_matrix(&[4.0, 8.0], 1.0);
    let a_ff = sys.free_submatrix(&a);
    let b_vec: Vec<f64> = (0..a_ff.dimension).map(|i| (i % 13) as f64 - 6.0).collect();
    c.bench_function("cg_res8_free_block", |b| {
        b.iter(|| solve_spd(black_box(&a_ff), black_box(&b_vec), 1e-10).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let mesh = generate_phantom(8, 80.0, PhantomVariant::TwoDomain, DEFAULT_SHELL_FRACTIONS)
        .unwrap();
    let sys = assemble(&mesh, MassLumping::Consistent).unwrap();
    let k = 10;
    let control = ControlState {
        diffusion: vec![4.0, 8.0],
        g: BoundaryControl::from_rows(k + 1, sys.num_dirichlet(), |j, _| {
            manufactured_g(j as f64 * 2.4)
        }),
    };
    let u0 = vec![0.0; sys.num_vertices];
    c.bench_function("forward_res8_k10", |b| {
        b.iter(|| forward_solve(black_box(&sys), black_box(&control), &u0, 2.4, k).unwrap())
    });
}

fn bench_gradient(c: &mut Criterion) {
    let mesh = generate_phantom(8, 80.0, PhantomVariant::TwoDomain, DEFAULT_SHELL_FRACTIONS)
        .unwrap();
    let sys = assemble(&mesh, MassLumping::Consistent).unwrap();
    let k = 10;
    let obs = make_synthetic_observations(&sys, &[4.0, 8.0], 2.4, 10, 24.0, &NoiseSpec::none())
        .unwrap();
    let problem = InverseProblem::new(
        &sys,
        vec![0.0; sys.num_vertices],
        obs,
        RegParams::new(1e-6, 1e-4, 0.0).unwrap(),
        2.4,
        k,
        1e-10,
    )
    .unwrap();
    let control = ControlState {
        diffusion: vec![2.0, 10.0],
        g: BoundaryControl::from_rows(k + 1, sys.num_dirichlet(), |j, _| {
            manufactured_g(j as f64 * 2.4) * 0.8
        }),
    };
    let mut group = c.benchmark_group("inverse");
    group.sample_size(20);
    group.bench_function("objective_and_gradient_res8_k10", |b| {
        b.iter(|| problem.objective_and_gradient(black_box(&control)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_assembly, bench_cg, bench_forward, bench_gradient);
criterion_main!(benches);
