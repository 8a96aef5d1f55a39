//! Mechanical Hamiltonians `H = ½|p|² + V` on a model surface, Legendre duality
//! and the flow of `ω_σ = dp∧dq + π*σ`.
//!
//! Momenta are stored as ambient vectors `p` with the pairing `⟨p, v⟩ = p·v`,
//! so on a conformal torus `|p|²_q = |p|²/c(q)`.

use serde::Serialize;

use crate::error::{MagflowError, Result};
use crate::geometry::{Field, ModelSurface, SurfacePoint, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub q: SurfacePoint,
    pub p: Vec3,
}

impl PhasePoint {
    pub fn new(q: Vec3, p: Vec3) -> Self {
        PhasePoint { q, p }
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        ((self.q - other.q).norm_squared() + (self.p - other.p).norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.p.iter()).all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentPoint {
    pub q: SurfacePoint,
    pub v: Vec3,
}

/// A mechanical Tonelli system with the constants of its quadratic bounds:
/// `E(q,v) ≥ E₀|v|² − E₁` and `H(q,p) ≥ H₀|p| − H₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct TonelliSystem {
    pub surface: ModelSurface,
    pub potential: Field,
    pub min_v: f64,
    pub max_v: f64,
    pub e0_const: f64,
    pub e1_const: f64,
    pub h0_const: f64,
    pub h1_const: f64,
}

impl TonelliSystem {
    pub fn new(surface: ModelSurface, potential: Field) -> Result<Self> {
        if !surface.is_sphere() && !potential.is_periodic() {
            return Err(MagflowError::InvalidInput("torus potential must be periodic".into()));
        }
        let max_v = grid_extremum(&surface, &potential, 32, true);
        let min_v = grid_extremum(&surface, &potential, 32, false);
        Ok(TonelliSystem {
            surface,
            potential,
            min_v,
            max_v,
            e0_const: 0.5,
            e1_const: -min_v,
            h0_const: 1.0,
            // ½|p|² ≥ |p| − ½
            h1_const: 0.5 - min_v,
        })
    }

    /// Kinetic system, `V ≡ 0`.
    pub fn kinetic(surface: ModelSurface) -> Self {
        Self::new(surface, Field::Constant(0.0)).expect("constant potential")
    }

    #[inline]
    pub fn v(&self, q: &Vec3) -> f64 {
        self.potential.value(q)
    }

    /// Gradient of `V` in the tangent plane (Euclidean components).
    #[inline]
    pub fn grad_v(&self, q: &Vec3) -> Vec3 {
        self.surface.project(q, &self.potential.grad(q))
    }

    pub fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        0.5 * z.p.norm_squared() / self.surface.conformal(&z.q) + self.v(&z.q)
    }

    pub fn lagrangian(&self, w: &TangentPoint) -> f64 {
        0.5 * self.surface.norm_sq(&w.q, &w.v) - self.v(&w.q)
    }

    pub fn energy_fn(&self, w: &TangentPoint) -> f64 {
        0.5 * self.surface.norm_sq(&w.q, &w.v) + self.v(&w.q)
    }

    pub fn legendre(&self, z: &PhasePoint) -> TangentPoint {
        TangentPoint { q: z.q, v: z.p / self.surface.conformal(&z.q) }
    }

    pub fn inverse_legendre(&self, w: &TangentPoint) -> PhasePoint {
        PhasePoint { q: w.q, p: w.v * self.surface.conformal(&w.q) }
    }

    /// `max_q min_p H(q, p)` evaluated on a grid plus one local refinement.
    /// For mechanical `H` the inner minimum sits at `p = 0`.
    pub fn e0(&self, grid_density: usize) -> Result<f64> {
        if grid_density < 16 {
            return Err(MagflowError::InvalidInput("e0 grid density must be at least 16".into()));
        }
        Ok(grid_extremum(&self.surface, &self.potential, grid_density, true))
    }

    /// `(q̇, ṗ)` for `H` with `ṗ = −∂H/∂q − σ(∂H/∂p, ·)`.
    pub fn twisted_vector_field(&self, z: &PhasePoint) -> (Vec3, Vec3) {
        let s = &self.surface;
        let q = &z.q;
        let p = &z.p;
        if s.is_sphere() {
            // Constrained ambient form; −|p|²q keeps (q, p) on T*S².
            let qdot = *p;
            let pdot = -self.grad_v(q) - q * p.norm_squared() - q.cross(&qdot) * s.magnetic.value(q);
            (qdot, pdot)
        } else {
            let c = s.conformal(q);
            let qdot = p / c;
            let beta = s.magnetic_density(q);
            let kinetic = s.conformal_grad(q) * (0.5 * p.norm_squared() / (c * c));
            let pdot = kinetic - self.grad_v(q) - Vec3::z().cross(&qdot) * beta;
            (qdot, pdot)
        }
    }

    /// `(q, p − t·d_qf)`, the time-t flow of `f∘π` for any σ.
    pub fn fibrewise_translation(&self, f: &Field, t: f64, z: &PhasePoint) -> PhasePoint {
        PhasePoint { q: z.q, p: z.p - self.surface.project(&z.q, &f.grad(&z.q)) * t }
    }
}

/// Extremum of a field over the surface: a uniform grid, then one pass on a
/// finer local grid around the best node.
pub fn grid_extremum(surface: &ModelSurface, f: &Field, density: usize, maximize: bool) -> f64 {
    let sign = if maximize { 1.0 } else { -1.0 };
    let n = density.max(2);
    let mut best = (f64::NEG_INFINITY, Vec3::zeros());
    let consider = |best: &mut (f64, Vec3), q: Vec3| {
        let v = sign * f.value(&q);
        if v > best.0 {
            *best = (v, q);
        }
    };
    let h;
    if surface.is_sphere() {
        h = std::f64::consts::PI / n as f64;
        for i in 0..=n {
            let theta = h * i as f64;
            let m = if i == 0 || i == n { 1 } else { 2 * n };
            for j in 0..m {
                let phi = h * j as f64;
                consider(&mut best, Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()));
            }
        }
    } else {
        h = 1.0 / n as f64;
        for i in 0..n {
            for j in 0..n {
                consider(&mut best, Vec3::new(h * i as f64, h * j as f64, 0.0));
            }
        }
    }
    let center = best.1;
    let (e1, e2) = surface.tangent_frame(&center);
    let fine = h / n as f64;
    let r = n as i64;
    for a in -r..=r {
        for b in -r..=r {
            let v = e1 * (fine * a as f64) + e2 * (fine * b as f64);
            consider(&mut best, surface.retract_unchecked(&center, &v));
        }
    }
    sign * best.0
}

/// Right-hand side of a Hamiltonian system on `T*M`, with the energy it conserves.
pub trait PhaseFlow {
    fn surface(&self) -> &ModelSurface;
    fn rhs(&self, z: &PhasePoint) -> (Vec3, Vec3);
    fn energy(&self, z: &PhasePoint) -> f64;
}

impl PhaseFlow for TonelliSystem {
    fn surface(&self) -> &ModelSurface {
        &self.surface
    }
    fn rhs(&self, z: &PhasePoint) -> (Vec3, Vec3) {
        self.twisted_vector_field(z)
    }
    fn energy(&self, z: &PhasePoint) -> f64 {
        self.hamiltonian(z)
    }
}

/// The flow of `K = scale·f∘π` under `ω_σ`.
#[derive(Debug, Clone)]
pub struct PotentialFlow<'a> {
    pub surface: &'a ModelSurface,
    pub f: Field,
    pub scale: f64,
}

impl PhaseFlow for PotentialFlow<'_> {
    fn surface(&self) -> &ModelSurface {
        self.surface
    }
    fn rhs(&self, z: &PhasePoint) -> (Vec3, Vec3) {
        // ∂K/∂p = 0, so the magnetic term σ(∂K/∂p, ·) vanishes identically.
        let qdot = Vec3::zeros();
        let pdot = -self.surface.project(&z.q, &self.f.grad(&z.q)) * self.scale;
        (qdot, pdot)
    }
    fn energy(&self, z: &PhasePoint) -> f64 {
        self.scale * self.f.value(&z.q)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub max_energy_drift: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub energies: Vec<f64>,
    pub stats: IntegratorStats,
}

impl Trajectory {
    pub fn last(&self) -> &PhasePoint {
        self.states.last().expect("trajectory holds the initial state")
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 5_000_000;

fn tidy(surface: &ModelSurface, mut z: PhasePoint) -> PhasePoint {
    if surface.is_sphere() {
        if (z.q.norm() - 1.0).abs() > 1e-12 {
            z.q = z.q.normalize();
        }
        z.p = surface.project(&z.q, &z.p);
    }
    z
}

/// Adaptive Dormand–Prince integration of the mechanical flow to `t_end`
/// (negative `t_end` integrates backward).
pub fn integrate(sys: &TonelliSystem, z0: &PhasePoint, t_end: f64, tol: f64) -> Result<Trajectory> {
    integrate_flow(sys, z0, t_end, tol)
}

/// Same as [`integrate`] for any [`PhaseFlow`]. Every accepted step is recorded.
pub fn integrate_flow<F: PhaseFlow>(flow: &F, z0: &PhasePoint, t_end: f64, tol: f64) -> Result<Trajectory> {
    if !(1e-13..=1e-3).contains(&tol) {
        return Err(MagflowError::InvalidInput(format!("tolerance {tol} outside [1e-13, 1e-3]")));
    }
    if !z0.is_finite() || !t_end.is_finite() {
        return Err(MagflowError::Divergence { t: 0.0 });
    }
    let surface = flow.surface();
    let mut z = tidy(surface, *z0);
    let h0 = flow.energy(&z);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![z],
        energies: vec![h0],
        stats: IntegratorStats::default(),
    };
    if t_end == 0.0 {
        return Ok(traj);
    }
    let dir = t_end.signum();
    let span = t_end.abs();
    let mut t = 0.0f64;
    let mut h = (0.01 * span).min(0.05);
    let mut k = [(Vec3::zeros(), Vec3::zeros()); 7];
    k[0] = flow.rhs(&z);
    let mut steps = 0usize;
    while t < span {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(MagflowError::Stiffness { t: dir * t, h });
        }
        let last = t + h >= span;
        if last {
            h = span - t;
        }
        let hs = dir * h;
        for s in 1..7 {
            let mut dq = Vec3::zeros();
            let mut dp = Vec3::zeros();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    dq += kj.0 * a;
                    dp += kj.1 * a;
                }
            }
            k[s] = flow.rhs(&PhasePoint { q: z.q + dq * hs, p: z.p + dp * hs });
        }
        let mut q5 = z.q;
        let mut p5 = z.p;
        let mut eq = Vec3::zeros();
        let mut ep = Vec3::zeros();
        for s in 0..7 {
            q5 += k[s].0 * (hs * B5[s]);
            p5 += k[s].1 * (hs * B5[s]);
            eq += k[s].0 * (hs * (B5[s] - B4[s]));
            ep += k[s].1 * (hs * (B5[s] - B4[s]));
        }
        let znew = PhasePoint { q: q5, p: p5 };
        if !znew.is_finite() {
            return Err(MagflowError::Divergence { t: dir * t });
        }
        let mut err: f64 = 0.0;
        for i in 0..3 {
            let sq = tol * (1.0 + z.q[i].abs().max(q5[i].abs()));
            let sp = tol * (1.0 + z.p[i].abs().max(p5[i].abs()));
            err = err.max(eq[i].abs() / sq).max(ep[i].abs() / sp);
        }
        if err <= 1.0 {
            t = if last { span } else { t + h };
            z = tidy(surface, znew);
            let e = flow.energy(&z);
            traj.stats.steps += 1;
            traj.stats.max_energy_drift = traj.stats.max_energy_drift.max((e - h0).abs());
            traj.times.push(dir * t);
            traj.states.push(z);
            traj.energies.push(e);
            // FSAL: the last stage is the derivative at the new point unless tidy moved it.
            k[0] = if surface.is_sphere() { flow.rhs(&z) } else { k[6] };
        } else {
            traj.stats.rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * (1.0 + t) {
            return Err(MagflowError::Stiffness { t: dir * t, h });
        }
    }
    Ok(traj)
}
