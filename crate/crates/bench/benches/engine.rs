use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qpmc_bench::{grid, metric, solved_leaf, BUMP, EXHIBIT};
use qpmc_core::foliation::{sweep, SweepBox, SweepConfig};
use qpmc_core::solver::{newton_solve, SolverConfig};
use qpmc_core::spectrum::leaf_spectrum;
use qpmc_core::variation::{check_formulas, Formula, VariationConfig, VariationFamily};
use qpmc_core::compute_geometry;

fn geometry_and_spectrum(c: &mut Criterion) {
    let m = metric(EXHIBIT);
    let mut group = c.benchmark_group("spectrum");
    group.sample_size(10);
    for n in [64, 128, 256] {
        let leaf = solved_leaf(&m, n);
        group.bench_with_input(BenchmarkId::new("geometry", n), &leaf, |b, l| {
            b.iter(|| compute_geometry(&m, l).unwrap())
        });
        let geom = compute_geometry(&m, &leaf).unwrap();
        group.bench_with_input(BenchmarkId::new("eigen", n), &geom, |b, g| {
            b.iter(|| leaf_spectrum(g).unwrap())
        });
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("newton_solve");
    group.sample_size(10);
    for (name, spec) in [("bump", BUMP), ("exhibit", EXHIBIT)] {
        let m = metric(spec);
        group.bench_function(name, |b| {
            b.iter(|| newton_solve(&m, &[0.0, 0.0], grid(128), &SolverConfig::default(), None).unwrap())
        });
    }
    group.finish();
}

fn foliation(c: &mut Criterion) {
    let m = metric(BUMP);
    let bounds = SweepBox::cube(-1.0, 1.0, 2).unwrap();
    let cfg = SweepConfig::new(0.5, grid(64));
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("bump_5x5", |b| b.iter(|| sweep(&m, &bounds, &cfg).unwrap()));
    group.finish();
}

fn variations(c: &mut Criterion) {
    let m = metric(EXHIBIT);
    let leaf = solved_leaf(&m, 64);
    let fam = VariationFamily::seeded(&m, &leaf, 3, 1.0, VariationConfig::default()).unwrap();
    let mut group = c.benchmark_group("variations");
    group.sample_size(10);
    group.bench_function("all_formulas_n64", |b| {
        b.iter(|| check_formulas(&m, &fam, &Formula::ALL, 11).unwrap())
    });
    group.finish();
}

criterion_group!(benches, geometry_and_spectrum, solve, foliation, variations);
criterion_main!(benches);
