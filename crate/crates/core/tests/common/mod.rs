#![allow(dead_code)]

use std::f64::consts::PI;

use magflow_core::loopspace::{self, ActionForm};
use magflow_core::{DiscreteLoop, Field, LoopTangent, ModelSurface, TonelliSystem, Vec3};
use rand::Rng;

/// Random smooth loop: a few Fourier modes around a random centre, pushed to
/// the surface through the retraction.
pub fn fourier_loop(sys: &TonelliSystem, rng: &mut impl Rng, n: usize, scale: f64) -> DiscreteLoop {
    let s = &sys.surface;
    let center = if s.is_sphere() {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        v.normalize()
    } else {
        Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0)
    };
    let (e1, e2) = s.tangent_frame(&center);
    let modes: Vec<[f64; 4]> = (1..=3)
        .map(|m| {
            let amp = scale / (m * m) as f64;
            [
                amp * rng.random_range(-1.0..1.0),
                amp * rng.random_range(-1.0..1.0),
                amp * rng.random_range(-1.0..1.0),
                amp * rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let samples = (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let mut a = 0.0;
            let mut b = 0.0;
            for (m, c) in modes.iter().enumerate() {
                let w = (m + 1) as f64 * t;
                a += c[0] * w.cos() + c[1] * w.sin();
                b += c[2] * w.cos() + c[3] * w.sin();
            }
            s.retract_unchecked(&center, &(e1 * a + e2 * b))
        })
        .collect();
    DiscreteLoop::new(samples, rng.random_range(0.3..4.0))
}

pub fn random_tangent(sys: &TonelliSystem, lp: &DiscreteLoop, rng: &mut impl Rng) -> LoopTangent {
    let n = lp.n();
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let zeta = lp
        .samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let t = 2.0 * PI * i as f64 / n as f64 + phase;
            let v = Vec3::new(c[0] * t.cos() + c[3], c[1] * (2.0 * t).sin() + c[4], c[2] * t.sin() + c[5]);
            sys.surface.project(x, &v)
        })
        .collect();
    LoopTangent { zeta, dt: rng.random_range(-1.0..1.0) }
}

pub fn eta(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> ActionForm {
    loopspace::action_one_form(sys, lp, k)
}

pub fn flat(b: f64) -> TonelliSystem {
    TonelliSystem::kinetic(ModelSurface::torus_flat(Field::Constant(b)))
}

pub fn sphere(b: f64) -> TonelliSystem {
    TonelliSystem::kinetic(ModelSurface::sphere(Field::Constant(b)))
}
