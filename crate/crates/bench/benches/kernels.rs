use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use istn_core::algorithms::water_fill;
use istn_core::sca::{f_ap, f_ap_lin, f_exp_lin, f_sqrt_lin, solve_convex, ConvexSubproblem, Tolerances};

fn surrogates(c: &mut Criterion) {
    let xs: Vec<f64> = (0..1024).map(|i| i as f64 / 1024.0).collect();
    c.bench_function("surrogates_1024", |b| {
        b.iter(|| {
            let mut s = 0.0;
            for &x in &xs {
                s += f_ap(x, 1e-3) + f_ap_lin(x, 0.5, 1e-3) + f_exp_lin(x, 0.3);
                s += f_sqrt_lin(x + 1.0, 4.0).unwrap();
            }
            black_box(s)
        })
    });
}

fn water_filling(c: &mut Criterion) {
    let w: Vec<f64> = (0..24).map(|i| 1.0 + (i % 3) as f64).collect();
    let g: Vec<f64> = (0..24).map(|i| 0.01 * (1 + i) as f64).collect();
    c.bench_function("water_fill_24", |b| b.iter(|| water_fill(black_box(&w), black_box(&g), 1.0)));
}

fn conic_step(c: &mut Criterion) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/stalled_subproblem.json");
    let pb: ConvexSubproblem = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let tol = Tolerances::default();
    let mut g = c.benchmark_group("conic");
    g.sample_size(20);
    g.bench_function("calibration_step", |b| b.iter(|| solve_convex(black_box(&pb), &tol).unwrap()));
    g.finish();
}

criterion_group!(benches, surrogates, water_filling, conic_step);
criterion_main!(benches);
