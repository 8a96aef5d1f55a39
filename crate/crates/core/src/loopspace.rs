//! Discrete free loops `(x, T)`: N samples at `t_i = i/N` plus a period.
//!
//! Every functional is built on the N closing segments `[x_i, x_{i+1}]`.
//! Kinetic terms use the squared segment length (conformal factor at the
//! midpoint on the torus, great-circle arc on the sphere), potentials are
//! evaluated at segment midpoints, and the magnetic term is the flux through
//! the geodesic cone over the polygon. The action form is the exact gradient
//! of this discrete functional, so the discrete `η_k` is closed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::TonelliSystem;
use crate::error::{MagflowError, Result};
use crate::geometry::{ModelSurface, SurfaceKind, Vec3};
use crate::quad;

pub const DEFAULT_DELTA: f64 = 0.25;
pub const PATH_STEP_BOUND: f64 = 0.2;
const CAP_NODES_U: usize = 8;
const CAP_NODES_V: usize = 4;
const EDGE_NODES: usize = 4;
const CAP_PIECE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLoop {
    pub samples: Vec<Vec3>,
    pub period: f64,
    /// Torus only: the lift closes as `x[N] = x[0] + shift`. Zero for contractible loops.
    pub shift: [i32; 2],
}

/// A tangent vector `(ζ, δT)` at a loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTangent {
    pub zeta: Vec<Vec3>,
    pub dt: f64,
}

/// A discrete path `u[0..=m]` in loop space.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopPath {
    pub loops: Vec<DiscreteLoop>,
}

/// Value of `η_k` at a loop: the loop part as an L² density `r` (so that
/// `η[(ζ, 0)] = (1/N) Σ r_i·ζ_i`) and the period part `η[∂/∂T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionForm {
    pub density: Vec<Vec3>,
    pub period: f64,
}

impl ActionForm {
    pub fn pair(&self, v: &LoopTangent) -> f64 {
        let n = self.density.len() as f64;
        self.density.iter().zip(&v.zeta).map(|(r, z)| r.dot(z)).sum::<f64>() / n + self.period * v.dt
    }

    /// Largest pointwise entry, used for convergence statements.
    pub fn max_abs(&self) -> f64 {
        self.density
            .iter()
            .map(|r| r.amax())
            .fold(self.period.abs(), f64::max)
    }

    pub fn scale(&mut self, s: f64) {
        for r in &mut self.density {
            *r *= s;
        }
        self.period *= s;
    }
}

impl LoopTangent {
    pub fn zeros(n: usize) -> Self {
        LoopTangent { zeta: vec![Vec3::zeros(); n], dt: 0.0 }
    }
}

impl DiscreteLoop {
    pub fn new(samples: Vec<Vec3>, period: f64) -> Self {
        DiscreteLoop { samples, period, shift: [0, 0] }
    }

    pub fn constant(q: Vec3, n: usize, period: f64) -> Self {
        Self::new(vec![q; n], period)
    }

    /// Planar circle `center + r(cos θ, sin θ)`, counterclockwise when `ccw`,
    /// starting at angle `phase`.
    pub fn planar_circle(center: Vec3, radius: f64, n: usize, period: f64, ccw: bool, phase: f64) -> Self {
        let sign = if ccw { 1.0 } else { -1.0 };
        let samples = (0..n)
            .map(|i| {
                let th = phase + sign * 2.0 * PI * i as f64 / n as f64;
                center + Vec3::new(radius * th.cos(), radius * th.sin(), 0.0)
            })
            .collect();
        Self::new(samples, period)
    }

    /// Latitude circle at height z, counterclockwise about +z.
    pub fn latitude(z: f64, n: usize, period: f64) -> Self {
        let r = (1.0 - z * z).max(0.0).sqrt();
        let samples = (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                Vec3::new(r * th.cos(), r * th.sin(), z)
            })
            .collect();
        Self::new(samples, period)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// `x[i]` for `i ∈ 0..=N`, applying the lift shift at `i = N`.
    #[inline]
    pub fn at(&self, i: usize) -> Vec3 {
        let n = self.n();
        if i < n {
            self.samples[i]
        } else {
            self.samples[i - n] + Vec3::new(self.shift[0] as f64, self.shift[1] as f64, 0.0)
        }
    }

    /// `x[i−1]` with the lift shift applied at `i = 0`.
    #[inline]
    pub fn before(&self, i: usize) -> Vec3 {
        if i > 0 {
            self.samples[i - 1]
        } else {
            self.samples[self.n() - 1] - Vec3::new(self.shift[0] as f64, self.shift[1] as f64, 0.0)
        }
    }

    pub fn validate(&self, surface: &ModelSurface) -> Result<()> {
        let n = self.n();
        if n < 16 || !n.is_multiple_of(2) {
            return Err(MagflowError::InvalidInput(format!("loops need an even N ≥ 16, got {n}")));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(MagflowError::InvalidInput(format!("period must be positive, got {}", self.period)));
        }
        if surface.is_sphere() && self.shift != [0, 0] {
            return Err(MagflowError::InvalidInput("sphere loops carry no lift shift".into()));
        }
        for q in &self.samples {
            surface.check_point(q)?;
        }
        Ok(())
    }

    /// Rotates the sample index: `x'[i] = x[i + s]`.
    pub fn rotate(&self, s: usize) -> Self {
        let n = self.n();
        let shift = Vec3::new(self.shift[0] as f64, self.shift[1] as f64, 0.0);
        let samples = (0..n)
            .map(|i| {
                let j = i + s % n;
                if j < n {
                    self.samples[j]
                } else {
                    self.samples[j - n] + shift
                }
            })
            .collect();
        DiscreteLoop { samples, period: self.period, shift: self.shift }
    }

    /// Moves along a tangent: retraction per sample, additive in `T`.
    pub fn step(&self, surface: &ModelSurface, v: &LoopTangent, scale: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .zip(&v.zeta)
            .map(|(x, z)| surface.retract_unchecked(x, &(surface.project(x, z) * scale)))
            .collect();
        DiscreteLoop { samples, period: self.period + scale * v.dt, shift: self.shift }
    }

    pub fn centroid(&self) -> Vec3 {
        self.samples.iter().sum::<Vec3>() / self.n() as f64
    }
}

/// Largest per-sample distance between two loops with the same N.
pub fn max_sample_distance(surface: &ModelSurface, a: &DiscreteLoop, b: &DiscreteLoop) -> f64 {
    a.samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| surface.riemannian_distance(x, y))
        .fold(0.0, f64::max)
}

/// Sphere log map `log_x(y)`.
#[inline]
fn sphere_log(x: &Vec3, y: &Vec3) -> Vec3 {
    let t = y - x * x.dot(y);
    let tn = t.norm();
    if tn < 1e-300 {
        return Vec3::zeros();
    }
    let theta = tn.atan2(x.dot(y));
    t * (theta / tn)
}

/// Per-segment data shared by the functionals.
struct Segment {
    a: Vec3,
    b: Vec3,
    mid: Vec3,
    /// Squared Riemannian length of the segment.
    len_sq: f64,
}

fn segments(surface: &ModelSurface, lp: &DiscreteLoop) -> Vec<Segment> {
    let n = lp.n();
    (0..n)
        .map(|i| {
            let a = lp.at(i);
            let b = lp.at(i + 1);
            let mid = surface.interpolate(&a, &b, 0.5);
            let len_sq = if surface.is_sphere() {
                let th = a.cross(&b).norm().atan2(a.dot(&b));
                th * th
            } else {
                surface.conformal(&mid) * (b - a).norm_squared()
            };
            Segment { a, b, mid, len_sq }
        })
        .collect()
}

/// `l(x) = Σ |x_{i+1} − x_i|_g`.
pub fn length(surface: &ModelSurface, lp: &DiscreteLoop) -> f64 {
    segments(surface, lp).iter().map(|s| s.len_sq.sqrt()).sum()
}

/// `e(x) = N Σ |x_{i+1} − x_i|²_g`, the L² energy of `x` on `[0, 1]`.
pub fn l2_energy(surface: &ModelSurface, lp: &DiscreteLoop) -> f64 {
    lp.n() as f64 * segments(surface, lp).iter().map(|s| s.len_sq).sum::<f64>()
}

/// `S^L_k(x, T) = T ∫₀¹ [L(x, ẋ/T) + k] dt` with segment differences and the
/// midpoint rule.
pub fn free_period_action(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> f64 {
    let n = lp.n() as f64;
    let t = lp.period;
    segments(&sys.surface, lp)
        .iter()
        .map(|s| 0.5 * n / t * s.len_sq + t / n * (k - sys.v(&s.mid)))
        .sum()
}

/// `η_k[∂/∂T] = k − ∫₀¹ E(x, ẋ/T) dt`.
pub fn period_part(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> f64 {
    let n = lp.n() as f64;
    let t = lp.period;
    let mean_e: f64 = segments(&sys.surface, lp)
        .iter()
        .map(|s| 0.5 * s.len_sq * n * n / (t * t) + sys.v(&s.mid))
        .sum::<f64>()
        / n;
    k - mean_e
}

/// Boundary weights for the transgression: on segment `[a, b]` with
/// `ζ(s) = (1−s)ζ_a + sζ_b`, returns `(A, B)` such that the segment's
/// contribution is `ζ_a·A + ζ_b·B`.
fn edge_transgression(surface: &ModelSurface, a: &Vec3, b: &Vec3) -> (Vec3, Vec3) {
    let d = b - a;
    if surface.kind == SurfaceKind::TorusFlat && surface.magnetic.is_constant() {
        let v = d.cross(&Vec3::z()) * (0.5 * surface.magnetic.value(a));
        return (v, v);
    }
    let (nodes, weights) = quad::gauss_legendre_01(EDGE_NODES);
    let mut wa = Vec3::zeros();
    let mut wb = Vec3::zeros();
    for (s, w) in nodes.iter().zip(weights) {
        let m = a * (1.0 - s) + b * *s;
        let (g, jac, n) = if surface.is_sphere() {
            let mn2 = m.norm_squared();
            let g = m / mn2.sqrt();
            (g, 1.0 / mn2, g)
        } else {
            (m, 1.0, Vec3::z())
        };
        // σ(ζ, γ') = β ⟨n, ζ × d⟩·jac = ζ·(d × n)·β·jac
        let v = d.cross(&n) * (surface.magnetic_density(&g) * jac * w);
        wa += v * (1.0 - s);
        wb += v * *s;
    }
    (wa, wb)
}

/// `τ^σ_x[ζ] = ∫₀¹ σ(ζ, ẋ) dt` along the polygon, with ζ interpolated linearly
/// on each segment.
pub fn transgression_pairing(sys: &TonelliSystem, lp: &DiscreteLoop, zeta: &[Vec3]) -> f64 {
    let n = lp.n();
    (0..n)
        .map(|i| {
            let (wa, wb) = edge_transgression(&sys.surface, &lp.at(i), &lp.at(i + 1));
            zeta[i].dot(&wa) + zeta[(i + 1) % n].dot(&wb)
        })
        .sum()
}

/// `η_k = dS^L_k + τ^σ` at `(x, T)`. Per sample the density is the discrete
/// Euler–Lagrange residual `d_qL − (d/ds) d_vL + σ(·, γ')`.
pub fn action_one_form(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> ActionForm {
    let surface = &sys.surface;
    let n = lp.n();
    let nf = n as f64;
    let t = lp.period;
    let segs = segments(surface, lp);
    // grad[i] accumulates ∂S/∂x_i; the density is N·grad.
    let mut grad = vec![Vec3::zeros(); n];
    let kin = 0.5 * nf / t;
    let pot = t / nf;
    for (i, s) in segs.iter().enumerate() {
        let j = (i + 1) % n;
        if surface.is_sphere() {
            grad[i] += sphere_log(&s.a, &s.b) * (-2.0 * kin);
            grad[j] += sphere_log(&s.b, &s.a) * (-2.0 * kin);
            let big_m = 0.5 * (s.a + s.b);
            let gv = surface.project(&s.mid, &sys.potential.grad(&s.mid)) / (2.0 * big_m.norm());
            grad[i] -= gv * pot;
            grad[j] -= gv * pot;
        } else {
            let d = s.b - s.a;
            let c = surface.conformal(&s.mid);
            let half_dc = surface.conformal_grad(&s.mid) * (0.5 * d.norm_squared());
            grad[i] += (half_dc - d * (2.0 * c)) * kin;
            grad[j] += (half_dc + d * (2.0 * c)) * kin;
            let gv = sys.potential.grad(&s.mid) * 0.5;
            grad[i] -= gv * pot;
            grad[j] -= gv * pot;
        }
        if surface.magnetic != crate::geometry::Field::Constant(0.0) {
            let (wa, wb) = edge_transgression(surface, &s.a, &s.b);
            grad[i] += wa;
            grad[j] += wb;
        }
    }
    let density = grad
        .iter()
        .zip(&lp.samples)
        .map(|(g, x)| surface.project(x, g) * nf)
        .collect();
    ActionForm { density, period: period_part(sys, lp, k) }
}

/// Apex of the capping cone.
fn cap_apex(surface: &ModelSurface, lp: &DiscreteLoop) -> Result<Vec3> {
    let mean = lp.centroid();
    if surface.is_sphere() {
        let norm = mean.norm();
        if norm < 1e-3 {
            return Err(MagflowError::DegenerateCap(format!("sample mean has norm {norm:.3e}")));
        }
        Ok(mean / norm)
    } else {
        Ok(mean)
    }
}

/// `∫ D*σ` over the geodesic cone from `apex` to the polygon.
fn cone_flux(surface: &ModelSurface, lp: &DiscreteLoop, apex: &Vec3) -> f64 {
    let n = lp.n();
    let flat_constant = !surface.is_sphere()
        && surface.kind != SurfaceKind::TorusConformal
        && surface.magnetic.is_constant();
    let (un, uw) = quad::gauss_legendre_01(CAP_NODES_U);
    let (vn, vw) = quad::gauss_legendre_01(CAP_NODES_V);
    let mut total = 0.0;
    for i in 0..n {
        let a = lp.at(i);
        let b = lp.at(i + 1);
        let d = b - a;
        if surface.is_sphere() {
            // F = P/|P| with P = c + u(m(v) − c): density b(F)·u·⟨c, a × b⟩/|P|³.
            let cab = apex.dot(&a.cross(&b));
            if cab == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for (v, wv) in vn.iter().zip(vw) {
                let m = a + d * *v;
                for (u, wu) in un.iter().zip(uw) {
                    let p = apex + (m - apex) * *u;
                    let pn = p.norm();
                    acc += wv * wu * surface.magnetic.value(&(p / pn)) * u / (pn * pn * pn);
                }
            }
            total += acc * cab;
        } else {
            let area2 = (a - apex).cross(&d).z;
            if flat_constant {
                total += 0.5 * area2 * surface.magnetic_density(apex);
                continue;
            }
            // Long rays of a large lift cross many periods of the density:
            // composite rule in u with pieces of length at most CAP_PIECE.
            let reach = (a - apex).norm().max((b - apex).norm());
            let pieces = (reach / CAP_PIECE).ceil().max(1.0);
            let mut acc = 0.0;
            for piece in 0..pieces as usize {
                let u0 = piece as f64 / pieces;
                for (v, wv) in vn.iter().zip(vw) {
                    let m = a + d * *v;
                    for (u, wu) in un.iter().zip(uw) {
                        let u = u0 + u / pieces;
                        acc += wv * wu / pieces * surface.magnetic_density(&(apex + (m - apex) * u)) * u;
                    }
                }
            }
            total += acc * area2;
        }
    }
    total
}

/// Flux of σ through the capping cone of a short loop.
pub fn cap_integral(sys: &TonelliSystem, lp: &DiscreteLoop, delta: f64) -> Result<f64> {
    let l = length(&sys.surface, lp);
    if !(l < delta) {
        return Err(MagflowError::OutsideShortLoops { length: l, delta });
    }
    if lp.shift != [0, 0] {
        return Err(MagflowError::NotContractible(lp.shift));
    }
    let apex = cap_apex(&sys.surface, lp)?;
    Ok(cone_flux(&sys.surface, lp, &apex))
}

/// The primitive of `η_k` on short loops: `S^L_k + ∫ D*σ`.
pub fn local_primitive(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64, delta: f64) -> Result<f64> {
    Ok(free_period_action(sys, lp, k) + cap_integral(sys, lp, delta)?)
}

/// Torus primitive for contractible loops of any length: the cap is the
/// planar cone over the closed lift.
pub fn global_primitive(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> Result<f64> {
    if sys.surface.is_sphere() {
        return Err(MagflowError::InvalidInput("the global primitive is defined on the torus".into()));
    }
    if lp.shift != [0, 0] {
        return Err(MagflowError::NotContractible(lp.shift));
    }
    let apex = lp.centroid();
    Ok(free_period_action(sys, lp, k) + cone_flux(&sys.surface, lp, &apex))
}

/// Loop on the straight (torus) or normalized (sphere) interpolation between
/// two loops, with its derivative in s.
fn interpolate_loops(surface: &ModelSurface, a: &DiscreteLoop, b: &DiscreteLoop, s: f64) -> (DiscreteLoop, LoopTangent) {
    let mut samples = Vec::with_capacity(a.n());
    let mut zeta = Vec::with_capacity(a.n());
    for (x, y) in a.samples.iter().zip(&b.samples) {
        let m = x * (1.0 - s) + y * s;
        let d = y - x;
        if surface.is_sphere() {
            let mn = m.norm();
            let g = m / mn;
            samples.push(g);
            zeta.push((d - g * g.dot(&d)) / mn);
        } else {
            samples.push(m);
            zeta.push(d);
        }
    }
    let lp = DiscreteLoop { samples, period: a.period * (1.0 - s) + b.period * s, shift: a.shift };
    (lp, LoopTangent { zeta, dt: b.period - a.period })
}

/// `∫ u*η_k` along the piecewise interpolated path. Each segment is integrated
/// by adaptive Gauss–Legendre quadrature.
pub fn action_variation(sys: &TonelliSystem, path: &LoopPath, k: f64) -> Result<f64> {
    let mut total = 0.0;
    for (j, w) in path.loops.windows(2).enumerate() {
        total += segment_variation(sys, &w[0], &w[1], k, j)?;
    }
    Ok(total)
}

/// `∫ u*η_k` over one interpolated segment from `a` to `b`.
pub fn segment_variation(sys: &TonelliSystem, a: &DiscreteLoop, b: &DiscreteLoop, k: f64, index: usize) -> Result<f64> {
    let surface = &sys.surface;
    if a.n() != b.n() || a.shift != b.shift {
        return Err(MagflowError::InvalidInput("path loops must share N and lift shift".into()));
    }
    let step = max_sample_distance(surface, a, b);
    if step > PATH_STEP_BOUND {
        return Err(MagflowError::RefinePath { segment: index, step, bound: PATH_STEP_BOUND });
    }
    if step == 0.0 && a.period == b.period {
        return Ok(0.0);
    }
    let mut f = |s: f64| {
        let (lp, tangent) = interpolate_loops(surface, a, b, s);
        action_one_form(sys, &lp, k).pair(&tangent)
    };
    Ok(quad::adaptive(&mut f, 0.0, 1.0, 1e-11, 12))
}

/// `∫ u*η_k` over one interpolated segment with a fixed n-point Gauss rule;
/// for the short steps of a flow line.
pub fn segment_variation_fixed(sys: &TonelliSystem, a: &DiscreteLoop, b: &DiscreteLoop, k: f64, nodes: usize) -> f64 {
    let (x, w) = quad::gauss_legendre_01(nodes);
    x.iter()
        .zip(w)
        .map(|(s, w)| {
            let (lp, tangent) = interpolate_loops(&sys.surface, a, b, *s);
            w * action_one_form(sys, &lp, k).pair(&tangent)
        })
        .sum()
}

/// ε: half the smallest local primitive over `n_probe` loops of length just
/// below δ, each at its action-minimizing period, at energy `k`.
pub fn calibrate_epsilon(sys: &TonelliSystem, k: f64, delta: f64, n_probe: usize, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_s = f64::INFINITY;
    for _ in 0..n_probe {
        let lp = probe_loop(sys, &mut rng, delta * (1.0 - 1e-6), n);
        let segs = segments(&sys.surface, &lp);
        let nf = n as f64;
        let a: f64 = 0.5 * nf * segs.iter().map(|s| s.len_sq).sum::<f64>();
        let b: f64 = segs.iter().map(|s| k - sys.v(&s.mid)).sum::<f64>() / nf;
        if b <= 0.0 {
            return Err(MagflowError::InvalidInput(format!("k = {k} does not exceed the potential on a probe loop")));
        }
        let t = (a / b).sqrt();
        let lp = DiscreteLoop { period: t, ..lp };
        min_s = min_s.min(local_primitive(sys, &lp, k, delta)?);
    }
    Ok(0.5 * min_s)
}

/// A random ellipse of the given length around a random center, either orientation.
pub fn probe_loop(sys: &TonelliSystem, rng: &mut impl Rng, target_length: f64, n: usize) -> DiscreteLoop {
    let surface = &sys.surface;
    let center = if surface.is_sphere() {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        Vec3::new(r * phi.cos(), r * phi.sin(), z)
    } else {
        Vec3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0)
    };
    let aspect: f64 = rng.random_range(0.3..1.0);
    let tilt: f64 = rng.random_range(0.0..PI);
    let phase: f64 = rng.random_range(0.0..2.0 * PI);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (e1, e2) = surface.tangent_frame(&center);
    let (u1, u2) = (e1 * tilt.cos() + e2 * tilt.sin(), e2 * tilt.cos() - e1 * tilt.sin());
    let build = |scale: f64| {
        let samples = (0..n)
            .map(|i| {
                let th = phase + sign * 2.0 * PI * i as f64 / n as f64;
                let v = (u1 * th.cos() + u2 * (aspect * th.sin())) * scale;
                surface.retract_unchecked(&center, &v)
            })
            .collect();
        DiscreteLoop::new(samples, 1.0)
    };
    // Length is monotone in the scale; bisect onto the target.
    let (mut lo, mut hi) = (0.0, target_length);
    while length(surface, &build(hi)) < target_length {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if length(surface, &build(mid)) < target_length {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(lo)
}
