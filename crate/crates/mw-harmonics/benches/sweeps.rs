use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mw_harmonics::czo::{apply_scalar, riesz_kernel};
use mw_harmonics::geometry::Cube;
use mw_harmonics::grid::{CellGrid, ScalarField, VectorField};
use mw_harmonics::maximal::{weighted_maximal, Input};
use mw_harmonics::muckenhoupt::{roudenko_characteristic, ExponentConfig};
use mw_harmonics::par;
use mw_harmonics::weights::{make_weight, WeightSpec};

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn characteristic(c: &mut Criterion) {
    let grid = CellGrid::unit(1, 7);
    let w = make_weight(&WeightSpec::RandomLogLipschitz { n: 2, seed: 1, lipschitz: 2.0 }, grid).unwrap();
    let cfg = ExponentConfig::classical(&[2.0, 3.0]).unwrap();
    let cubes = grid.sliding_family();
    let mut g = c.benchmark_group("roudenko_sliding");
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| roudenko_characteristic(&[&w, &w], &cfg, &cubes).unwrap().value)
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn maximal(c: &mut Criterion) {
    let grid = CellGrid::unit(2, 4);
    let w = make_weight(&WeightSpec::RandomCells { n: 2, seed: 2, spread: 10.0 }, grid).unwrap();
    let f = VectorField::scaled(&ScalarField::from_fn(grid, |x| x[0] - x[1]), &[1.0, 0.5]);
    let cubes = grid.dyadic_family();
    let mut g = c.benchmark_group("weighted_maximal");
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| weighted_maximal(&[Input::Vectors(&f)], &[&w], &[1.5], &cubes).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

fn riesz(c: &mut Criterion) {
    let grid = CellGrid::new(1, 2, 8).unwrap();
    let f = ScalarField::indicator(grid, &Cube::dyadic(&[1], 0)).unwrap();
    let k = riesz_kernel(2, 1).unwrap();
    let mut g = c.benchmark_group("bilinear_riesz");
    g.sample_size(10);
    for (name, seq) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::set_sequential(seq);
            b.iter(|| apply_scalar(&k, &[&f, &f]).unwrap())
        });
    }
    par::set_sequential(false);
    g.finish();
}

criterion_group!(benches, characteristic, maximal, riesz);
criterion_main!(benches);
