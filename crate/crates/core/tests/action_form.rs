mod common;

use common::*;
use magflow_core::loopspace::{self, DEFAULT_DELTA};
use magflow_core::{DiscreteLoop, Field, ModelSurface, TonelliSystem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central difference of the primitive along `(ζ, δT)`, moving samples by the
/// retraction.
fn fd_primitive(sys: &TonelliSystem, lp: &DiscreteLoop, v: &magflow_core::LoopTangent, k: f64, h: f64) -> f64 {
    let s = |sign: f64| {
        let moved = lp.step(&sys.surface, v, sign * h);
        if sys.surface.is_sphere() {
            loopspace::local_primitive(sys, &moved, k, 10.0).unwrap()
        } else {
            loopspace::global_primitive(sys, &moved, k).unwrap()
        }
    };
    (s(1.0) - s(-1.0)) / (2.0 * h)
}

fn check_surface(sys: &TonelliSystem, scale: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let lp = fourier_loop(sys, &mut rng, 64, scale);
        let v = random_tangent(sys, &lp, &mut rng);
        let k = 0.7;
        let pairing = eta(sys, &lp, k).pair(&v);
        let fd = fd_primitive(sys, &lp, &v, k, 1e-5);
        let rel = (pairing - fd).abs() / pairing.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn action_form_matches_differences_torus() {
    let flat = TonelliSystem::new(ModelSurface::torus_flat(Field::CosCos(1.3)), Field::CosCos(0.4)).unwrap();
    let w = check_surface(&flat, 0.3, 1);
    assert!(w <= 1e-5, "flat torus worst relative error {w:e}");
    let conf = TonelliSystem::new(ModelSurface::torus_conformal(Field::CosCos(0.3), Field::Constant(1.0)), Field::Constant(0.0)).unwrap();
    let w = check_surface(&conf, 0.3, 2);
    assert!(w <= 1e-5, "conformal torus worst relative error {w:e}");
}

#[test]
fn action_form_matches_differences_sphere() {
    let sys = TonelliSystem::new(ModelSurface::sphere(Field::CosCos(0.8)), Field::Height(magflow_core::Vec3::z())).unwrap();
    let w = check_surface(&sys, 0.3, 3);
    assert!(w <= 1e-5, "sphere worst relative error {w:e}");
}

#[test]
fn transgression_is_the_cap_derivative() {
    let sys = sphere(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lp = fourier_loop(&sys, &mut rng, 64, 0.02);
    let v = random_tangent(&sys, &lp, &mut rng);
    let h = 1e-6;
    let cap = |s: f64| loopspace::cap_integral(&sys, &lp.step(&sys.surface, &v, s * h), DEFAULT_DELTA).unwrap();
    let fd = (cap(1.0) - cap(-1.0)) / (2.0 * h);
    let tau = loopspace::transgression_pairing(&sys, &lp, &v.zeta);
    assert!((fd - tau).abs() <= 1e-7 * tau.abs().max(1e-3), "{fd} vs {tau}");
}
