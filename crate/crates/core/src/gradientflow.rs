//! Negative-gradient semi-flow of the free-period action form on loop space.
//!
//! The loop part of `η_k` is dualized with a discrete periodic H¹ metric; the
//! period part with `dT²`. The flow follows the normalized field
//! `X = −♯η/√(1+|η|²)`, multiplied by a cutoff that vanishes on short loops of
//! small action.

use serde::Serialize;

use crate::dynamics::TonelliSystem;
use crate::error::{MagflowError, Result};
use crate::geometry::Vec3;
use crate::loopspace::{self, ActionForm, DiscreteLoop, LoopTangent};

/// Short-loop thresholds: `V_δ` is `length < delta`; the cutoff ramps over
/// `[epsilon/4, epsilon/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShortLoops {
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowParams {
    pub k: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Local error bound of the Heun step (sup norm over samples and period).
    pub step_tol: f64,
    pub tol_vanish: f64,
    pub r_max: f64,
    pub t_min: f64,
    pub short: ShortLoops,
    /// When false the cutoff is ignored (the untruncated flow).
    pub truncated: bool,
}

impl FlowParams {
    pub fn new(k: f64, short: ShortLoops) -> Self {
        FlowParams {
            k,
            h_init: 0.01,
            h_max: 0.1,
            step_tol: 1e-5,
            tol_vanish: 1e-6,
            r_max: 10.0,
            t_min: 1e-3,
            short,
            truncated: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tol_vanish > 0.0
            && self.r_max > 0.0
            && self.t_min > 0.0
            && self.h_init > 0.0
            && self.h_max >= self.h_init
            && self.step_tol > 0.0
            && self.short.delta > 0.0
            && self.short.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MagflowError::InvalidInput(format!("invalid flow parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Vanished,
    Budget,
    #[serde(rename = "entered_W'")]
    EnteredW,
    PeriodFloor,
    /// Step size fell below the floor; the trace up to that point is kept.
    Stiffness,
}

impl Termination {
    pub fn tag(self) -> &'static str {
        match self {
            Termination::Vanished => "vanished",
            Termination::Budget => "budget",
            Termination::EnteredW => "entered_W'",
            Termination::PeriodFloor => "period_floor",
            Termination::Stiffness => "stiffness",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub r: f64,
    pub lp: DiscreteLoop,
    pub eta_norm: f64,
    pub delta_s: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub points: Vec<TracePoint>,
    pub reason: Termination,
    /// Steps where `|T(r) − T(0)|² > 1.05·r·(−ΔS(r))`.
    pub holder_violations: usize,
    /// Largest g_Λ norm of an accepted step divided by its step size.
    pub max_speed: f64,
    pub rejected_steps: usize,
}

impl FlowTrace {
    pub fn last(&self) -> &TracePoint {
        self.points.last().expect("traces hold at least the initial point")
    }

    pub fn final_loop(&self) -> &DiscreteLoop {
        &self.last().lp
    }
}

/// Periodic solve of `(B − D)w = B·rhs` per ambient coordinate, where `D` is
/// the second difference in the unit-period parameter and `B = I + h²D/12`.
/// The compact weighting makes the discrete inverse of `1 − d²/dt²` fourth
/// order accurate.
fn solve_h1(rhs: &[Vec3]) -> Vec<Vec3> {
    let n = rhs.len();
    let nf = n as f64;
    let n2 = nf * nf;
    let b_rhs: Vec<Vec3> = (0..n)
        .map(|i| (rhs[(i + n - 1) % n] + rhs[i] * 10.0 + rhs[(i + 1) % n]) / 12.0)
        .collect();
    solve_cyclic(10.0 / 12.0 + 2.0 * n2, 1.0 / 12.0 - n2, &b_rhs)
}

/// `B⁻¹(B − D)v`, the H¹ Riesz operator applied to v.
fn h1_operator(v: &[Vec3]) -> Vec<Vec3> {
    let n = v.len();
    let n2 = (n * n) as f64;
    let rhs: Vec<Vec3> = (0..n)
        .map(|i| {
            let lap = (v[(i + n - 1) % n] - v[i] * 2.0 + v[(i + 1) % n]) * n2;
            (v[(i + n - 1) % n] + v[i] * 10.0 + v[(i + 1) % n]) / 12.0 - lap
        })
        .collect();
    solve_cyclic(10.0 / 12.0, 1.0 / 12.0, &rhs)
}

/// Solves the symmetric circulant tridiagonal system with diagonal `d` and
/// off-diagonal `e` (including the corners) by Thomas + Sherman–Morrison.
fn solve_cyclic(d: f64, e: f64, rhs: &[Vec3]) -> Vec<Vec3> {
    let n = rhs.len();
    let gamma = -d;
    let mut diag = vec![d; n];
    diag[0] = d - gamma;
    diag[n - 1] = d - e * e / gamma;
    let mut u = vec![Vec3::zeros(); n];
    u[0] = Vec3::repeat(gamma);
    u[n - 1] = Vec3::repeat(e);
    let y = thomas(&diag, e, rhs);
    let z = thomas(&diag, e, &u);
    let vy = y[0] + y[n - 1] * (e / gamma);
    let vz = z[0] + z[n - 1] * (e / gamma);
    let factor = vy.component_div(&(Vec3::repeat(1.0) + vz));
    y.iter().zip(&z).map(|(y, z)| y - z.component_mul(&factor)).collect()
}

fn thomas(diag: &[f64], e: f64, rhs: &[Vec3]) -> Vec<Vec3> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut x = vec![Vec3::zeros(); n];
    c[0] = e / diag[0];
    x[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - e * c[i - 1];
        c[i] = e / m;
        x[i] = (rhs[i] - x[i - 1] * e) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] = x[i] - x[i + 1] * c[i];
    }
    x
}

/// `♯η`: the loop part solves the discrete `w − ẅ = r`, the period part is
/// copied. On the sphere `w` is constrained to the tangent planes, which
/// couples the coordinates; that system is solved by conjugate gradients
/// preconditioned with the unconstrained solve.
pub fn h1_dual(sys: &TonelliSystem, lp: &DiscreteLoop, eta: &ActionForm) -> LoopTangent {
    let zeta = if sys.surface.is_sphere() {
        solve_h1_tangent(&lp.samples, &eta.density)
    } else {
        solve_h1(&eta.density)
    };
    LoopTangent { zeta, dt: eta.period }
}

const CG_MAX_ITER: usize = 60;
const CG_REL_TOL: f64 = 1e-13;

fn solve_h1_tangent(xs: &[Vec3], rhs: &[Vec3]) -> Vec<Vec3> {
    let proj = |v: Vec<Vec3>| -> Vec<Vec3> { v.into_iter().zip(xs).map(|(v, x)| v - x * x.dot(&v)).collect() };
    let dot = |a: &[Vec3], b: &[Vec3]| -> f64 { a.iter().zip(b).map(|(a, b)| a.dot(b)).sum() };
    let r0 = proj(rhs.to_vec());
    let mut w = proj(solve_h1(&r0));
    let aw = proj(h1_operator(&w));
    let mut res: Vec<Vec3> = r0.iter().zip(&aw).map(|(r, a)| r - a).collect();
    let mut z = proj(solve_h1(&res));
    let mut p = z.clone();
    let mut rz = dot(&res, &z);
    let scale = dot(&r0, &w).abs();
    for _ in 0..CG_MAX_ITER {
        if !(rz > CG_REL_TOL * CG_REL_TOL * scale) {
            break;
        }
        let ap = proj(h1_operator(&p));
        let alpha = rz / dot(&p, &ap);
        for i in 0..w.len() {
            w[i] += p[i] * alpha;
            res[i] -= ap[i] * alpha;
        }
        z = proj(solve_h1(&res));
        let rz_next = dot(&res, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + p[i] * beta;
        }
    }
    w
}

/// `g_{H¹}(v, v) + δT²`.
pub fn loop_norm_sq(v: &LoopTangent) -> f64 {
    let a = h1_operator(&v.zeta);
    let n = v.zeta.len() as f64;
    a.iter().zip(&v.zeta).map(|(a, z)| a.dot(z)).sum::<f64>() / n + v.dt * v.dt
}

/// `|η|` in the dual of g_Λ, given `w = ♯η`.
fn dual_norm(eta: &ActionForm, w: &LoopTangent) -> f64 {
    let n = eta.density.len() as f64;
    let h1 = eta.density.iter().zip(&w.zeta).map(|(r, w)| r.dot(w)).sum::<f64>() / n;
    (h1.max(0.0) + eta.period * eta.period).sqrt()
}

/// `X_k` and `|η_k|` at a loop.
pub fn normalized_field_with_norm(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> (LoopTangent, f64) {
    let eta = loopspace::action_one_form(sys, lp, k);
    let mut w = h1_dual(sys, lp, &eta);
    let norm = dual_norm(&eta, &w);
    let s = -1.0 / (1.0 + norm * norm).sqrt();
    for z in &mut w.zeta {
        *z *= s;
    }
    w.dt *= s;
    (w, norm)
}

pub fn normalized_field(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> LoopTangent {
    normalized_field_with_norm(sys, lp, k).0
}

/// Cubic smoothstep: 0 on `(−∞, lo]`, 1 on `[hi, ∞)`.
pub fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// κ̂: 1 off `V_δ`, otherwise the smoothstep of the local primitive over
/// `[ε/4, ε/2]`.
pub fn cutoff_factor(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64, short: &ShortLoops) -> Result<f64> {
    if loopspace::length(&sys.surface, lp) >= short.delta {
        return Ok(1.0);
    }
    let s = loopspace::local_primitive(sys, lp, k, short.delta)?;
    Ok(smoothstep(0.25 * short.epsilon, 0.5 * short.epsilon, s))
}

struct FieldAt {
    x: LoopTangent,
    eta_norm: f64,
    cutoff: f64,
}

fn field_at(sys: &TonelliSystem, lp: &DiscreteLoop, p: &FlowParams) -> Result<FieldAt> {
    let cutoff = if p.truncated { cutoff_factor(sys, lp, p.k, &p.short)? } else { 1.0 };
    let (mut x, eta_norm) = normalized_field_with_norm(sys, lp, p.k);
    if cutoff != 1.0 {
        for z in &mut x.zeta {
            *z *= cutoff;
        }
        x.dt *= cutoff;
    }
    Ok(FieldAt { x, eta_norm, cutoff })
}

const H_FLOOR: f64 = 1e-12;
pub const DS_SLACK: f64 = 1e-9;
const HOLDER_SLACK: f64 = 1.05;

/// Integrates `X̂_k` from `loop0` with adaptive Heun steps and per-sample
/// retraction until one of the stop criteria fires.
pub fn evolve(sys: &TonelliSystem, loop0: &DiscreteLoop, params: &FlowParams) -> Result<FlowTrace> {
    params.validate()?;
    loop0.validate(&sys.surface)?;
    let surface = &sys.surface;
    let mut x = loop0.clone();
    let mut f = field_at(sys, &x, params)?;
    let mut trace = FlowTrace {
        points: vec![TracePoint { r: 0.0, lp: x.clone(), eta_norm: f.eta_norm, delta_s: 0.0, cutoff: f.cutoff }],
        reason: Termination::Budget,
        holder_violations: 0,
        max_speed: 0.0,
        rejected_steps: 0,
    };
    let t0 = x.period;
    let (mut r, mut ds) = (0.0, 0.0);
    let mut h = params.h_init.min(params.h_max);
    loop {
        if f.cutoff == 0.0 {
            trace.reason = Termination::EnteredW;
            break;
        }
        if f.eta_norm <= params.tol_vanish {
            trace.reason = Termination::Vanished;
            break;
        }
        if x.period < params.t_min {
            trace.reason = Termination::PeriodFloor;
            break;
        }
        if r >= params.r_max * (1.0 - 1e-14) {
            trace.reason = Termination::Budget;
            break;
        }
        if h < H_FLOOR {
            trace.reason = Termination::Stiffness;
            break;
        }
        let h_try = h.min(params.r_max - r);
        let pred = x.step(surface, &f.x, h_try);
        let fp = field_at(sys, &pred, params)?;
        // Heun: average of the two slopes, the second taken at the predictor
        // and projected back to the tangent planes of x.
        let avg = LoopTangent {
            zeta: f.x.zeta.iter().zip(&fp.x.zeta).map(|(a, b)| (a + b) * 0.5).collect(),
            dt: 0.5 * (f.x.dt + fp.x.dt),
        };
        let err = f
            .x
            .zeta
            .iter()
            .zip(&fp.x.zeta)
            .map(|(a, b)| (b - a).amax())
            .fold((fp.x.dt - f.x.dt).abs(), f64::max)
            * 0.5
            * h_try;
        let next = x.step(surface, &avg, h_try);
        let max_move = loopspace::max_sample_distance(surface, &x, &next);
        let step_ds = if err <= params.step_tol && max_move <= 0.5 * loopspace::PATH_STEP_BOUND {
            loopspace::segment_variation_fixed(sys, &x, &next, params.k, 3)
        } else {
            f64::INFINITY
        };
        if step_ds > DS_SLACK {
            trace.rejected_steps += 1;
            h = 0.5 * h_try;
            continue;
        }
        let speed = loop_norm_sq(&avg).sqrt();
        trace.max_speed = trace.max_speed.max(speed);
        r += h_try;
        ds += step_ds;
        x = next;
        f = field_at(sys, &x, params)?;
        let dt = x.period - t0;
        if dt * dt > HOLDER_SLACK * r * (-ds).max(0.0) + 1e-14 {
            trace.holder_violations += 1;
        }
        trace.points.push(TracePoint { r, lp: x.clone(), eta_norm: f.eta_norm, delta_s: ds, cutoff: f.cutoff });
        let grow = if err > 0.0 { (0.9 * (params.step_tol / err).sqrt()).clamp(0.3, 2.0) } else { 2.0 };
        h = (h_try * grow).min(params.h_max);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletenessReport {
    pub period_floor_hit: bool,
    /// Fitted `C` in `e(x) ≤ C·T²` over the trace tail, when the floor was hit.
    pub fitted_constant: Option<f64>,
    pub compliant: bool,
}

/// Runtime check of the completeness mechanism. A trace that reaches the
/// period floor must have `e(x) = O(T²)` along its tail: the ratio `e/T²`
/// over the last quarter may not exceed twice its level on the rest of the
/// tail. Traces that never hit the floor are compliant.
pub fn completeness_diagnostic(sys: &TonelliSystem, trace: &FlowTrace) -> CompletenessReport {
    if trace.reason != Termination::PeriodFloor {
        return CompletenessReport { period_floor_hit: false, fitted_constant: None, compliant: true };
    }
    let ratios: Vec<f64> = trace
        .points
        .iter()
        .map(|p| loopspace::l2_energy(&sys.surface, &p.lp) / (p.lp.period * p.lp.period))
        .collect();
    let tail = &ratios[ratios.len() / 2..];
    let split = tail.len() / 2;
    let fitted = tail.iter().copied().fold(0.0, f64::max);
    let early = tail[..split.max(1)].iter().copied().fold(0.0, f64::max);
    let late = tail[split..].iter().copied().fold(0.0, f64::max);
    CompletenessReport {
        period_floor_hit: true,
        fitted_constant: Some(fitted),
        compliant: late <= 2.0 * early + 1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Field, ModelSurface};
    use std::f64::consts::PI;

    fn flat(b: f64) -> TonelliSystem {
        TonelliSystem::kinetic(ModelSurface::torus_flat(Field::Constant(b)))
    }

    fn short() -> ShortLoops {
        ShortLoops { delta: 0.25, epsilon: 0.01 }
    }

    #[test]
    fn constant_density_dualizes_to_itself() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::constant(Vec3::new(0.3, 0.4, 0.0), 64, 1.0);
        let c = Vec3::new(0.7, -1.1, 0.0);
        let eta = ActionForm { density: vec![c; 64], period: 0.25 };
        let w = h1_dual(&sys, &lp, &eta);
        let err = w.zeta.iter().map(|z| (z - c).amax()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err:.3e}");
        assert_eq!(w.dt, 0.25);
    }

    #[test]
    fn cosine_mode_matches_fourier_solution() {
        let sys = flat(1.0);
        let n = 256;
        let lp = DiscreteLoop::constant(Vec3::zeros(), n, 1.0);
        let density = (0..n)
            .map(|i| Vec3::new((2.0 * PI * i as f64 / n as f64).cos(), 0.0, 0.0))
            .collect();
        let w = h1_dual(&sys, &lp, &ActionForm { density, period: 0.0 });
        let err = (0..n)
            .map(|i| (w.zeta[i].x - (2.0 * PI * i as f64 / n as f64).cos() / (1.0 + 4.0 * PI * PI)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err:.3e}");
    }

    #[test]
    fn dual_is_self_adjoint() {
        let sys = TonelliSystem::kinetic(ModelSurface::sphere(Field::Constant(1.0)));
        let n = 48;
        let lp = DiscreteLoop::latitude(0.3, n, 1.0);
        let mk = |f: &dyn Fn(f64) -> Vec3| -> ActionForm {
            let density = (0..n)
                .map(|i| {
                    let x = lp.samples[i];
                    sys.surface.project(&x, &f(i as f64 / n as f64))
                })
                .collect();
            ActionForm { density, period: 0.0 }
        };
        let r1 = mk(&|t| Vec3::new((2.0 * PI * t).sin(), 0.3, (6.0 * PI * t).cos()));
        let r2 = mk(&|t| Vec3::new(t * (1.0 - t), (4.0 * PI * t).cos(), 0.5));
        let w1 = h1_dual(&sys, &lp, &r1);
        let w2 = h1_dual(&sys, &lp, &r2);
        let a = r2.pair(&w1);
        let b = r1.pair(&w2);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn h1_operator_inverts_the_dual() {
        let n = 32;
        let r: Vec<Vec3> = (0..n).map(|i| Vec3::new((i as f64).sin(), (i * i % 7) as f64, 0.0)).collect();
        let w = solve_h1(&r);
        let back = h1_operator(&w);
        assert!(back.iter().zip(&r).all(|(a, b)| (a - b).amax() < 1e-9));
    }

    #[test]
    fn normalized_field_is_strictly_short() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::planar_circle(Vec3::zeros(), 0.4, 64, 1.3, true, 0.0);
        let (x, norm) = normalized_field_with_norm(&sys, &lp, 0.5);
        let len = loop_norm_sq(&x).sqrt();
        assert!(len < 1.0);
        assert!((len - norm / (1.0 + norm * norm).sqrt()).abs() < 1e-9);
        // Scaling the loop up grows |η| and pushes |X| toward 1.
        let mut prev = 0.0;
        for s in [1.0, 3.0, 10.0, 30.0] {
            let big = DiscreteLoop::planar_circle(Vec3::zeros(), 0.4 * s, 64, 1.3, true, 0.0);
            let l = loop_norm_sq(&normalized_field(&sys, &big, 0.5)).sqrt();
            assert!(l > prev && l < 1.0);
            prev = l;
        }
    }

    #[test]
    fn cutoff_examples() {
        let sys = flat(1.0);
        let sh = short();
        let long = DiscreteLoop::planar_circle(Vec3::zeros(), (0.25 + 0.1) / (2.0 * PI), 256, 1.0, true, 0.0);
        assert_eq!(cutoff_factor(&sys, &long, 0.5, &sh).unwrap(), 1.0);
        let point = DiscreteLoop::constant(Vec3::new(0.2, 0.2, 0.0), 32, 0.001);
        assert_eq!(cutoff_factor(&sys, &point, 0.5, &sh).unwrap(), 0.0);
        // S = T·k on a constant loop with V ≡ 0.
        let mid = DiscreteLoop::constant(Vec3::zeros(), 32, 3.0 * sh.epsilon / 8.0 / 0.5);
        assert!((cutoff_factor(&sys, &mid, 0.5, &sh).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn loop_in_w_prime_is_fixed() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::constant(Vec3::new(0.2, 0.2, 0.0), 32, 0.001);
        let tr = evolve(&sys, &lp, &FlowParams::new(0.5, short())).unwrap();
        assert_eq!(tr.points.len(), 1);
        assert_eq!(tr.reason, Termination::EnteredW);
    }

    #[test]
    fn exact_zero_is_fixed() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::planar_circle(Vec3::zeros(), 1.0, 64, 2.0 * PI, false, 0.0);
        let (_, norm) = normalized_field_with_norm(&sys, &lp, 0.5);
        let mut p = FlowParams::new(0.5, short());
        p.tol_vanish = norm.max(1e-12) * 1.01;
        let tr = evolve(&sys, &lp, &p).unwrap();
        assert_eq!(tr.reason, Termination::Vanished);
        assert_eq!(tr.points.len(), 1);
        assert_eq!(tr.final_loop(), &lp);
    }

    #[test]
    fn flow_decreases_action_and_respects_bounds() {
        let sys = TonelliSystem::new(ModelSurface::torus_flat(Field::CosCos(0.3)), Field::CosCos(0.2)).unwrap();
        let lp = DiscreteLoop::planar_circle(Vec3::new(0.1, 0.2, 0.0), 0.3, 64, 1.5, true, 0.0);
        let mut p = FlowParams::new(0.8, short());
        p.r_max = 1.0;
        let tr = evolve(&sys, &lp, &p).unwrap();
        assert_eq!(tr.reason, Termination::Budget);
        assert!((tr.last().r - 1.0).abs() < 1e-12);
        for w in tr.points.windows(2) {
            assert!(w[1].delta_s <= w[0].delta_s + DS_SLACK);
        }
        assert_eq!(tr.holder_violations, 0);
        assert!(tr.max_speed < 1.0);
        let s0 = loopspace::global_primitive(&sys, &lp, 0.8).unwrap();
        let s1 = loopspace::global_primitive(&sys, tr.final_loop(), 0.8).unwrap();
        assert!((s1 - s0 - tr.last().delta_s).abs() < 1e-6, "{} vs {}", s1 - s0, tr.last().delta_s);
    }

    #[test]
    fn larmor_circle_is_a_saddle_of_the_flow() {
        // Nearby circles do not flow back to the orbit: the action has an
        // indefinite Hessian there, so the flow leaves along the unstable mode.
        let sys = flat(1.0);
        let exact = DiscreteLoop::planar_circle(Vec3::zeros(), 1.0, 128, 2.0 * PI, false, 0.0);
        let s_orbit = loopspace::global_primitive(&sys, &exact, 0.5).unwrap();
        assert!(normalized_field_with_norm(&sys, &exact, 0.5).1 < 1e-3);
        for scale in [0.97, 1.03] {
            let lp = DiscreteLoop::planar_circle(Vec3::zeros(), scale, 128, 2.0 * PI, false, 0.0);
            let mut p = FlowParams::new(0.5, short());
            p.r_max = 20.0;
            let tr = evolve(&sys, &lp, &p).unwrap();
            let end = tr.final_loop();
            let s_end = loopspace::global_primitive(&sys, end, 0.5).unwrap();
            let radius = loopspace::length(&sys.surface, end) / (2.0 * PI);
            assert!(s_end < s_orbit - 1e-3, "scale {scale}: {s_end} vs orbit {s_orbit}");
            assert!((radius - 1.0).abs() > 0.1, "scale {scale}: radius {radius}");
            assert_eq!(tr.holder_violations, 0);
        }
    }

    #[test]
    fn untruncated_flow_agrees_away_from_short_loops() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::planar_circle(Vec3::zeros(), 0.5, 64, 2.0, true, 0.0);
        let mut p = FlowParams::new(0.5, short());
        p.r_max = 0.5;
        let a = evolve(&sys, &lp, &p).unwrap();
        p.truncated = false;
        let b = evolve(&sys, &lp, &p).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        let d = loopspace::max_sample_distance(&sys.surface, a.final_loop(), b.final_loop());
        assert!(d < 1e-12);
    }

    #[test]
    fn shrinking_circles_fit_quadratic_energy() {
        let sys = flat(0.0);
        let rho = 0.7;
        let points = (0..40)
            .map(|j| {
                let t = 0.5 * 0.9f64.powi(j);
                TracePoint {
                    r: j as f64,
                    lp: DiscreteLoop::planar_circle(Vec3::zeros(), rho * t, 256, t, true, 0.0),
                    eta_norm: 1.0,
                    delta_s: -(j as f64),
                    cutoff: 1.0,
                }
            })
            .collect();
        let tr = FlowTrace { points, reason: Termination::PeriodFloor, holder_violations: 0, max_speed: 0.0, rejected_steps: 0 };
        let rep = completeness_diagnostic(&sys, &tr);
        assert!(rep.compliant);
        let c = rep.fitted_constant.unwrap();
        let expect = (2.0 * PI * rho).powi(2);
        assert!((c - expect).abs() / expect < 1e-3, "{c} vs {expect}");
    }

    #[test]
    fn constant_trace_is_compliant() {
        let sys = flat(1.0);
        let lp = DiscreteLoop::constant(Vec3::zeros(), 16, 1e-4);
        let tr = evolve(&sys, &lp, &FlowParams::new(0.5, short())).unwrap();
        let rep = completeness_diagnostic(&sys, &tr);
        assert!(rep.compliant && !rep.period_floor_hit);
    }
}
