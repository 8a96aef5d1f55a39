//! Displacement of energy sublevels by fibrewise translation `p ↦ p − T·df`.
//!
//! For a mechanical Hamiltonian `H = ½|p|² + V` the sublevel `{H ≤ k}`
//! projects onto `{V ≤ k}`. If `f` has no critical point there, translating
//! far enough along `−df` pushes every point of the sublevel above `k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

use crate::dynamics::{self, PhasePoint, PotentialFlow, TonelliSystem};
use crate::error::{MagflowError, Result};
use crate::geometry::{Field, Vec3};

/// Momentum disk resolution: rings × rays, plus the zero section.
const RINGS: usize = 4;
const RAYS: usize = 12;
const CROSSCHECK_POINTS: usize = 100;
const CROSSCHECK_SEED: u64 = 0x5eed;
const CRITICAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementStatus {
    Displaced,
    NotDisplaced,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementReport {
    pub k: f64,
    pub f: String,
    pub epsilon_f: f64,
    pub b_p: f64,
    pub h0: f64,
    pub h1: f64,
    pub t_disp: f64,
    /// `min H(q, p − T_disp·df) − k` over the sample.
    pub margin: f64,
    /// Margins at 1, 1.5 and 2 times `t_disp`.
    pub margin_checks: [f64; 3],
    pub samples: usize,
    /// Largest deviation between the closed-form translation and the
    /// integrated flow of `T_disp·f∘π`.
    pub crosscheck_max_error: f64,
    pub status: DisplacementStatus,
}

/// Quasi-uniform base points of the whole surface, about `count` of them.
fn base_grid(sys: &TonelliSystem, count: usize) -> Vec<Vec3> {
    if sys.surface.is_sphere() {
        // Fibonacci lattice.
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..count)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect()
    } else {
        let g = (count as f64).sqrt().ceil() as usize;
        (0..g * g)
            .map(|i| Vec3::new(((i / g) as f64 + 0.5) / g as f64, ((i % g) as f64 + 0.5) / g as f64, 0.0))
            .collect()
    }
}

/// Base points of `{V ≤ k}`, at least `count` of them when the set has
/// interior.
fn sublevel_base(sys: &TonelliSystem, k: f64, count: usize) -> Vec<Vec3> {
    let mut total = count.max(16);
    loop {
        let pts: Vec<Vec3> = base_grid(sys, total).into_iter().filter(|q| sys.v(q) <= k).collect();
        if pts.len() >= count || total > 64 * count {
            return pts;
        }
        let frac = (pts.len() as f64 / total as f64).max(1.0 / 64.0);
        total = ((count as f64 / frac) * 1.1).ceil() as usize + total / 2;
    }
}

/// A minimizer of V: best grid point polished by projected gradient descent.
fn potential_minimizer(sys: &TonelliSystem) -> Vec3 {
    let mut q = base_grid(sys, 4096)
        .into_iter()
        .min_by(|a, b| sys.v(a).total_cmp(&sys.v(b)))
        .expect("grid is nonempty");
    let mut step = 0.05;
    for _ in 0..2000 {
        let g = sys.surface.project(&q, &sys.grad_v(&q));
        if g.norm() < 1e-14 {
            break;
        }
        let trial = sys.surface.retract_unchecked(&q, &(-g * step));
        if sys.v(&trial) < sys.v(&q) {
            q = trial;
            step *= 1.2;
        } else {
            step *= 0.5;
        }
    }
    q
}

/// Samples of `{H ≤ k}`: quasi-uniform base points of `{V ≤ k}`, each with
/// a polar grid over its momentum disk `|p|_q ≤ √(2(k − V(q)))`, boundary
/// circle included. At least `n` samples unless the level is a set of minima.
pub fn projected_sublevel_sample(sys: &TonelliSystem, k: f64, n: usize) -> Result<Vec<PhasePoint>> {
    let min_h = sys.min_v;
    if k < min_h - 1e-12 {
        return Err(MagflowError::EmptyLevel { k, min_h });
    }
    if k <= min_h + 1e-12 {
        return Ok(vec![PhasePoint::new(potential_minimizer(sys), Vec3::zeros())]);
    }
    let per_base = 1 + RINGS * RAYS;
    let base = sublevel_base(sys, k, n.div_ceil(per_base));
    let mut out = Vec::with_capacity(base.len() * per_base);
    for q in base {
        let c = sys.surface.conformal(&q);
        let radius = (2.0 * c * (k - sys.v(&q)).max(0.0)).sqrt();
        let (e1, e2) = sys.surface.tangent_frame(&q);
        out.push(PhasePoint::new(q, Vec3::zeros()));
        for ring in 1..=RINGS {
            let r = radius * (ring as f64 / RINGS as f64).sqrt();
            for ray in 0..RAYS {
                let th = 2.0 * PI * (ray as f64 + 0.5 * (ring % 2) as f64) / RAYS as f64;
                out.push(PhasePoint::new(q, (e1 * th.cos() + e2 * th.sin()) * r));
            }
        }
    }
    Ok(out)
}

/// `|d_q f|_q`, the dual norm of the differential.
fn df_norm(sys: &TonelliSystem, f: &Field, q: &Vec3) -> f64 {
    sys.surface.project(q, &f.grad(q)).norm() / sys.surface.conformal(q).sqrt()
}

/// ε_f: smallest `|df|` over `{V ≤ k}`. The best sample points are polished
/// by descent on `|df|²` inside the sublevel, so critical points between
/// grid nodes are found.
pub fn gradient_floor(sys: &TonelliSystem, f: &Field, k: f64, n: usize) -> Result<f64> {
    if f.is_constant() {
        return Err(MagflowError::NotDisplaceable(0.0));
    }
    let base: Vec<Vec3> = if k <= sys.min_v + 1e-12 {
        vec![potential_minimizer(sys)]
    } else {
        sublevel_base(sys, k, n)
    };
    if base.is_empty() {
        return Err(MagflowError::EmptyLevel { k, min_h: sys.min_v });
    }
    let mut order: Vec<(f64, Vec3)> = base.iter().map(|q| (df_norm(sys, f, q), *q)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut floor = order[0].0;
    for (g0, q0) in order.iter().take(8) {
        let (mut g, mut q) = (*g0, *q0);
        let mut step = 0.02;
        for _ in 0..400 {
            // Descent direction from a central-difference gradient of |df|.
            let (e1, e2) = sys.surface.tangent_frame(&q);
            let h = 1e-6;
            let d = |e: Vec3| {
                let a = sys.surface.retract_unchecked(&q, &(e * h));
                let b = sys.surface.retract_unchecked(&q, &(e * -h));
                (df_norm(sys, f, &a) - df_norm(sys, f, &b)) / (2.0 * h)
            };
            let grad = e1 * d(e1) + e2 * d(e2);
            if grad.norm() < 1e-12 {
                break;
            }
            let trial = sys.surface.retract_unchecked(&q, &(-grad.normalize() * step));
            let gt = df_norm(sys, f, &trial);
            if gt < g && sys.v(&trial) <= k {
                q = trial;
                g = gt;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        floor = floor.min(g);
    }
    if floor <= CRITICAL_TOL {
        return Err(MagflowError::NotDisplaceable(floor));
    }
    Ok(floor)
}

/// Translation time from the quadratic-at-infinity bound
/// `H(q, p) ≥ H₀|p|_q − H₁`, with a 10% safety factor.
pub fn displacement_time(sys: &TonelliSystem, epsilon_f: f64, b_p: f64, k: f64) -> f64 {
    1.1 * (k + sys.h1_const + sys.h0_const * b_p) / (sys.h0_const * epsilon_f)
}

/// Sup of `|p|_q` over `{H ≤ k}`.
pub fn momentum_bound(sys: &TonelliSystem, k: f64) -> f64 {
    (2.0 * (k - sys.min_v)).max(0.0).sqrt()
}

fn margin_at(sys: &TonelliSystem, f: &Field, k: f64, t: f64, sample: &[PhasePoint]) -> f64 {
    sample
        .iter()
        .map(|z| sys.hamiltonian(&sys.fibrewise_translation(f, t, z)) - k)
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates the translated Hamiltonian on a sublevel sample and cross-checks
/// the closed-form translation against the integrated flow of `t_disp·f∘π`.
pub fn verify_displacement(sys: &TonelliSystem, f: &Field, k: f64, t_disp: f64, n: usize) -> Result<DisplacementReport> {
    let sample = projected_sublevel_sample(sys, k, n)?;
    let epsilon_f = gradient_floor(sys, f, k, n)?;
    let margin = margin_at(sys, f, k, t_disp, &sample);
    let margin_checks = [margin, margin_at(sys, f, k, 1.5 * t_disp, &sample), margin_at(sys, f, k, 2.0 * t_disp, &sample)];
    let flow = PotentialFlow { surface: &sys.surface, f: *f, scale: t_disp };
    let mut rng = ChaCha8Rng::seed_from_u64(CROSSCHECK_SEED);
    let mut cross = 0.0f64;
    for _ in 0..CROSSCHECK_POINTS.min(sample.len()) {
        let z = &sample[rng.random_range(0..sample.len())];
        let exact = sys.fibrewise_translation(f, t_disp, z);
        let end = dynamics::integrate_flow(&flow, z, 1.0, 1e-12)?;
        let scale = 1.0 + exact.p.norm();
        cross = cross.max(end.last().distance(&exact) / scale);
    }
    let status = if margin > 0.0 { DisplacementStatus::Displaced } else { DisplacementStatus::NotDisplaced };
    Ok(DisplacementReport {
        k,
        f: f.to_string(),
        epsilon_f,
        b_p: momentum_bound(sys, k),
        h0: sys.h0_const,
        h1: sys.h1_const,
        t_disp,
        margin,
        margin_checks,
        samples: sample.len(),
        crosscheck_max_error: cross,
        status,
    })
}

/// Full pipeline: ε_f, B_p, T_disp, then verification.
pub fn displace_check(sys: &TonelliSystem, f: &Field, k: f64, n: usize) -> Result<DisplacementReport> {
    let epsilon_f = gradient_floor(sys, f, k, n)?;
    let t = displacement_time(sys, epsilon_f, momentum_bound(sys, k), k);
    verify_displacement(sys, f, k, t, n)
}
