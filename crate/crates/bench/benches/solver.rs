use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use l2relax::{compute_gram, default_grid, fit, fit_path, hac_lrv, SolverSettings};
use l2relax_bench::{gram, panel};

fn single_fit(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let mut group = c.benchmark_group("fit");
    for n in [50, 100, 200] {
        let g = gram(n, 200);
        let tau = 0.05 * g.eta_sup();
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| fit(black_box(g), tau, &settings).unwrap())
        });
    }
    group.finish();
}

fn warm_path(c: &mut Criterion) {
    let settings = SolverSettings::default();
    let g = gram(100, 200);
    let grid = default_grid(&g, 40).unwrap();
    c.bench_function("path/100x40", |b| {
        b.iter(|| fit_path(black_box(&g), grid.values(), &settings).unwrap())
    });
}

fn gram_build(c: &mut Criterion) {
    let p = panel(200, 200);
    c.bench_function("gram/200x200", |b| {
        b.iter(|| compute_gram(black_box(&p)).unwrap())
    });
}

fn hac(c: &mut Criterion) {
    let s: Vec<f64> = (0..2000)
        .map(|t| ((t * 7919) % 101) as f64 / 50.0 - 1.0)
        .collect();
    let mut group = c.benchmark_group("hac");
    for h in [0, 7, 44] {
        group.bench_with_input(BenchmarkId::from_parameter(h), &h, |b, &h| {
            b.iter(|| hac_lrv(black_box(&s), h).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, single_fit, warm_path, gram_build, hac);
criterion_main!(benches);
