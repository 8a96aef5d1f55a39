use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::f64::consts::PI;
use std::hint::black_box;

use magflow_core::displacement;
use magflow_core::dynamics::integrate;
use magflow_core::gradientflow::{self, evolve, FlowParams, ShortLoops};
use magflow_core::loopspace;
use magflow_core::minimax::{self, VerifyTolerances};
use magflow_core::{DiscreteLoop, Field, ModelSurface, PhasePoint, TonelliSystem, Vec3};

fn torus() -> TonelliSystem {
    TonelliSystem::kinetic(ModelSurface::torus_flat(Field::Constant(1.0)))
}

fn sphere() -> TonelliSystem {
    TonelliSystem::kinetic(ModelSurface::sphere(Field::Constant(2.0)))
}

fn larmor(n: usize) -> DiscreteLoop {
    DiscreteLoop::planar_circle(Vec3::zeros(), 1.0, n, 2.0 * PI, false, 0.0)
}

fn action_form(c: &mut Criterion) {
    let (t, s) = (torus(), sphere());
    let lp = larmor(256);
    let lat = DiscreteLoop::latitude(-0.3, 256, 2.0);
    c.bench_function("action_one_form/torus_256", |b| b.iter(|| loopspace::action_one_form(&t, black_box(&lp), 0.5)));
    c.bench_function("action_one_form/sphere_256", |b| b.iter(|| loopspace::action_one_form(&s, black_box(&lat), 0.5)));
    c.bench_function("normalized_field/torus_256", |b| b.iter(|| gradientflow::normalized_field(&t, black_box(&lp), 0.5)));
    c.bench_function("normalized_field/sphere_256", |b| b.iter(|| gradientflow::normalized_field(&s, black_box(&lat), 0.5)));
    let lat2 = DiscreteLoop::latitude(-0.25, 256, 2.05);
    c.bench_function("segment_variation/sphere_256", |b| {
        b.iter(|| loopspace::segment_variation(&s, black_box(&lat), black_box(&lat2), 0.5, 0).unwrap())
    });
}

fn dynamics(c: &mut Criterion) {
    let t = torus();
    let z = PhasePoint::new(Vec3::zeros(), Vec3::x());
    c.bench_function("integrate/larmor_period_1e-10", |b| b.iter(|| integrate(&t, black_box(&z), 2.0 * PI, 1e-10).unwrap()));
}

fn flow(c: &mut Criterion) {
    let t = torus();
    let start = DiscreteLoop::planar_circle(Vec3::zeros(), 1.03, 128, 2.0 * PI, false, 0.0);
    let mut p = FlowParams::new(0.5, ShortLoops { delta: 0.25, epsilon: 0.05 });
    p.r_max = 1.0;
    c.bench_function("evolve/torus_128_r1", |b| b.iter(|| evolve(&t, black_box(&start), &p).unwrap()));
}

fn extraction(c: &mut Criterion) {
    let t = torus();
    let start = DiscreteLoop::planar_circle(Vec3::new(0.1, 0.0, 0.0), 1.02, 128, 6.3, false, 0.3);
    let tol = VerifyTolerances::default();
    let mut g = c.benchmark_group("extract");
    g.sample_size(10);
    g.bench_function("torus_128", |b| {
        b.iter_batched(|| start.clone(), |lp| minimax::extract_and_verify(&t, &lp, 0.5, &tol).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

fn displacement_check(c: &mut Criterion) {
    let sys = TonelliSystem::new(ModelSurface::sphere(Field::Constant(1.0)), Field::Height(Vec3::z())).unwrap();
    let f = Field::Height(Vec3::new(1.0, 0.0, 0.1).normalize());
    let mut g = c.benchmark_group("displace_check");
    g.sample_size(10);
    g.bench_function("sphere_1e4", |b| b.iter(|| displacement::displace_check(&sys, &f, -0.5, 10_000).unwrap()));
    g.finish();
}

criterion_group!(benches, action_form, dynamics, flow, extraction, displacement_check);
criterion_main!(benches);
