use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hkgeom::bessel::{quadrature_e, simulate_besq, simulate_besq_exact};
use hkgeom::cylinder::{CylinderFunction, Kernel, ScalarField};
use hkgeom::expr::Expr;
use hkgeom::random_measures::{sample_batch, substream, BaseMeasure, IntensityParams, Law};
use hkgeom_bench::random_measure;

fn sampling(c: &mut Criterion) {
    let params = IntensityParams::new(2.0, BaseMeasure::unit_ball(2)).unwrap();
    let mut group = c.benchmark_group("sample_batch 1000");
    for (name, law) in [("df", Law::Df), ("gamma", Law::Gamma), ("mlp", Law::Mlp)] {
        group.bench_function(name, |b| {
            b.iter(|| sample_batch(&params, law, Some((1.0, 4.0)), 1000, black_box(7)).unwrap())
        });
    }
    group.finish();
}

fn bessel(c: &mut Criterion) {
    c.bench_function("besq euler T=1 dt=1e-3", |b| {
        let mut rng = substream(1, 0);
        b.iter(|| simulate_besq(1.5, 1.0, 1.0, 1e-3, &mut rng).unwrap())
    });
    c.bench_function("besq exact T=1 dt=1e-3", |b| {
        let mut rng = substream(1, 0);
        b.iter(|| simulate_besq_exact(1.5, 1.0, 1.0, 1e-3, &mut rng).unwrap())
    });
    let chi = Expr::parse("exp(-v0)").unwrap();
    c.bench_function("quadrature_e", |b| b.iter(|| quadrature_e(black_box(1.5), &chi, 1e3).unwrap()));
}

fn cylinder(c: &mut Criterion) {
    let f = ScalarField::GaussianBump { center: vec![0.2, -0.1], width: 0.8, amp: 1.5 };
    let g = ScalarField::Linear { a: vec![1.0, 0.5], b: 0.3 };
    let u =
        CylinderFunction::new(Expr::parse("v0 * tanh(v1)").unwrap(), vec![Kernel::Saturating(f), Kernel::MassTimes(g)])
            .unwrap()
            .product(&CylinderFunction::truncation(4.0).unwrap());
    let mu = random_measure(100, 2, 9);
    c.bench_function("cylinder gradient, 100 atoms", |b| b.iter(|| u.gradient(black_box(&mu))));
}

criterion_group!(benches, sampling, bessel, cylinder);
criterion_main!(benches);
