//! Minimax over sweepout classes of loops, the energy scan and orbit extraction.
//!
//! Two classes are shipped: latitude sweepouts of the round sphere and paths
//! on the torus from a constant loop to a large circle of negative action.
//! Each member is pushed down by the truncated flow for a fixed flow time per
//! sweep; the family primitive is re-evaluated between sweeps.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

use crate::dynamics::{self, PhasePoint, TangentPoint, TonelliSystem};
use crate::error::{MagflowError, Result};
use crate::geometry::Vec3;
use crate::gradientflow::{self, FlowParams, ShortLoops, Termination};
use crate::loopspace::{self, DiscreteLoop, PATH_STEP_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassTag {
    SphereSweepout,
    NegativeActionPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopFamily {
    /// Parameter of each member in [0, 1].
    pub params: Vec<f64>,
    pub loops: Vec<DiscreteLoop>,
    pub class: ClassTag,
    /// Member whose primitive anchors the family primitive.
    pub anchor: usize,
}

impl LoopFamily {
    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    /// Largest per-sample distance between consecutive members.
    pub fn max_gap(&self, sys: &TonelliSystem) -> f64 {
        self.loops
            .windows(2)
            .map(|w| loopspace::max_sample_distance(&sys.surface, &w[0], &w[1]))
            .fold(0.0, f64::max)
    }

    /// Inserts the interpolated loop between members `j` and `j + 1`.
    fn insert_midpoint(&mut self, sys: &TonelliSystem, j: usize) {
        let (a, b) = (&self.loops[j], &self.loops[j + 1]);
        let samples = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| sys.surface.interpolate(x, y, 0.5))
            .collect();
        let mid = DiscreteLoop { samples, period: 0.5 * (a.period + b.period), shift: a.shift };
        let s = 0.5 * (self.params[j] + self.params[j + 1]);
        self.loops.insert(j + 1, mid);
        self.params.insert(j + 1, s);
        if self.anchor > j {
            self.anchor += 1;
        }
    }
}

/// Latitude circles `z_j = −cos(πj/m)` with period `t_bar`, from the south
/// pole to the north pole.
pub fn birkhoff_sweepout(sys: &TonelliSystem, m: usize, n: usize, t_bar: f64) -> Result<LoopFamily> {
    if !sys.surface.is_sphere() {
        return Err(MagflowError::ClassConstruction("sweepouts are built on the sphere".into()));
    }
    if m < 2 || !(t_bar > 0.0) {
        return Err(MagflowError::ClassConstruction(format!("need m ≥ 2 and T̄ > 0, got m = {m}, T̄ = {t_bar}")));
    }
    let mut loops: Vec<DiscreteLoop> = (0..=m)
        .map(|j| DiscreteLoop::latitude(-(PI * j as f64 / m as f64).cos(), n, t_bar))
        .collect();
    // Exact poles.
    loops[0] = DiscreteLoop::constant(Vec3::new(0.0, 0.0, -1.0), n, t_bar);
    loops[m] = DiscreteLoop::constant(Vec3::new(0.0, 0.0, 1.0), n, t_bar);
    let params = (0..=m).map(|j| j as f64 / m as f64).collect();
    Ok(LoopFamily { params, loops, class: ClassTag::SphereSweepout, anchor: 0 })
}

/// Path in the lift from the constant loop at the origin to a circle of
/// negative action at every `k ≤ k_range.1`, through concentric circles
/// whose periods match a speed `√(2(sup I − min V))`. The circle runs
/// against the mean field, so its flux term is negative.
pub fn negative_action_path(sys: &TonelliSystem, k_range: (f64, f64), m: usize, n: usize, t_bar: f64) -> Result<LoopFamily> {
    let surface = &sys.surface;
    if surface.is_sphere() {
        return Err(MagflowError::ClassConstruction("negative-action paths are built on the torus".into()));
    }
    if m < 2 || !(t_bar > 0.0) || !(k_range.0 <= k_range.1) {
        return Err(MagflowError::ClassConstruction(format!("bad class parameters m = {m}, T̄ = {t_bar}, I = {k_range:?}")));
    }
    let flux = mean_flux(sys);
    if flux.abs() < 1e-9 {
        return Err(MagflowError::ClassConstruction("the magnetic field has zero mean".into()));
    }
    let k_top = k_range.1;
    let v = (2.0 * (k_top - sys.min_v)).max(1e-12).sqrt();
    let ccw = flux < 0.0;
    let build = |radius: f64, members: usize| -> Vec<DiscreteLoop> {
        (0..=members)
            .map(|j| {
                let r = radius * j as f64 / members as f64;
                if j == 0 {
                    DiscreteLoop::constant(Vec3::zeros(), n, t_bar)
                } else {
                    DiscreteLoop::planar_circle(Vec3::zeros(), r, n, t_bar + 2.0 * PI * r / v, ccw, 0.0)
                }
            })
            .collect()
    };
    let mut radius = 2.2 * 2.0 * v / flux.abs();
    for _ in 0..8 {
        let members = m.max((radius / (0.5 * PATH_STEP_BOUND)).ceil() as usize);
        let loops = build(radius, members);
        if loopspace::global_primitive(sys, loops.last().unwrap(), k_top)? < 0.0 {
            let params = (0..=members).map(|j| j as f64 / members as f64).collect();
            return Ok(LoopFamily { params, loops, class: ClassTag::NegativeActionPath, anchor: 0 });
        }
        radius *= 1.5;
    }
    Err(MagflowError::ClassConstruction(format!("no negative-action circle up to radius {radius:.3}")))
}

/// Mean of the magnetic density over the fundamental domain.
fn mean_flux(sys: &TonelliSystem) -> f64 {
    let g = 64;
    let mut acc = 0.0;
    for i in 0..g {
        for j in 0..g {
            let q = Vec3::new((i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64, 0.0);
            acc += sys.surface.magnetic_density(&q);
        }
    }
    acc / (g * g) as f64
}

/// Primitive of a single loop anchoring a family: the global primitive on the
/// torus, the local one on the sphere.
fn anchor_value(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> Result<f64> {
    if sys.surface.is_sphere() {
        loopspace::local_primitive(sys, lp, k, loopspace::DEFAULT_DELTA)
    } else {
        loopspace::global_primitive(sys, lp, k)
    }
}

/// `S_0` increments between consecutive members; the k-dependence is added
/// back exactly as `k·ΔT`.
fn family_increments(sys: &TonelliSystem, family: &LoopFamily) -> Result<Vec<f64>> {
    family
        .loops
        .par_windows(2)
        .enumerate()
        .map(|(j, w)| loopspace::segment_variation(sys, &w[0], &w[1], 0.0, j))
        .collect()
}

/// `S_k(u)(ζ_j)`: the anchor primitive plus the integrated action form.
pub fn family_primitive(sys: &TonelliSystem, family: &LoopFamily, k: f64) -> Result<Vec<f64>> {
    let inc = family_increments(sys, family)?;
    let anchor = &family.loops[family.anchor];
    let base = anchor_value(sys, anchor, 0.0)?;
    let mut s0 = vec![0.0; family.len()];
    s0[family.anchor] = base;
    for j in family.anchor + 1..family.len() {
        s0[j] = s0[j - 1] + inc[j - 1];
    }
    for j in (0..family.anchor).rev() {
        s0[j] = s0[j + 1] - inc[j];
    }
    Ok(s0.iter().zip(&family.loops).map(|(s, lp)| s + k * lp.period).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaxBudget {
    pub max_sweeps: usize,
    /// Flow time each member is advanced per sweep.
    pub flow_quantum: f64,
    pub max_members: usize,
    /// Stop once the smallest max improved by less than `stab_tol·(1 + |c|)`
    /// over the last `stab_window` sweeps.
    pub stab_tol: f64,
    pub stab_window: usize,
    /// Members within `near_fraction·max(|max|, ε)` of the max count as near-maximizers.
    pub near_fraction: f64,
    /// Once the max falls slowly, only members within
    /// `active_fraction·(|max| + ε)` of it are flowed.
    pub active_fraction: f64,
    /// Bisections next to the maximizer per sweep, down to member distance `peak_gap`.
    pub peak_insertions: usize,
    pub peak_gap: f64,
}

impl Default for MinimaxBudget {
    fn default() -> Self {
        MinimaxBudget {
            max_sweeps: 60,
            flow_quantum: 0.5,
            max_members: 600,
            stab_tol: 1e-4,
            stab_window: 5,
            near_fraction: 0.01,
            active_fraction: 0.1,
            peak_insertions: 8,
            peak_gap: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimaxRecord {
    pub k: f64,
    pub c: f64,
    pub argmax: usize,
    pub sweeps: usize,
    pub flow_used: f64,
    pub converged: bool,
    pub candidate_residual: f64,
    pub candidate_period: f64,
    /// Near-maximizers found inside `W_k`.
    pub notinw_violations: usize,
    /// Sweeps after which a class invariant failed.
    pub class_violations: usize,
    pub holder_violations: usize,
    pub period_floor_hits: usize,
    pub stiffness_hits: usize,
    /// Family max after each sweep.
    pub history: Vec<f64>,
    pub members: usize,
}

#[derive(Debug, Clone)]
pub struct MinimaxOutcome {
    pub record: MinimaxRecord,
    pub family: LoopFamily,
    pub values: Vec<f64>,
    pub argmax_loop: DiscreteLoop,
    pub candidate: DiscreteLoop,
}

/// Endpoints untouched, negativity of the torus endpoint, and a member of
/// length at least δ.
fn class_holds(sys: &TonelliSystem, family: &LoopFamily, initial: &LoopFamily, k: f64, delta: f64) -> Result<bool> {
    let ends_fixed = family.loops[0] == initial.loops[0] && family.loops.last() == initial.loops.last();
    let negative = match family.class {
        ClassTag::SphereSweepout => true,
        ClassTag::NegativeActionPath => loopspace::global_primitive(sys, family.loops.last().unwrap(), k)? < 0.0,
    };
    let reaches = family.loops.iter().any(|lp| loopspace::length(&sys.surface, lp) >= delta);
    Ok(ends_fixed && negative && reaches)
}

/// `c(k)` estimate: alternate flow sweeps over the interior members with
/// re-evaluation of the family primitive, keeping the smallest max seen.
pub fn minimax_value(
    sys: &TonelliSystem,
    family0: &LoopFamily,
    k: f64,
    short: ShortLoops,
    budget: &MinimaxBudget,
) -> Result<MinimaxOutcome> {
    let mut family = family0.clone();
    let mut flow = FlowParams::new(k, short);
    flow.r_max = budget.flow_quantum;
    flow.tol_vanish = 1e-10;
    let mut rec = MinimaxRecord {
        k,
        c: f64::INFINITY,
        argmax: 0,
        sweeps: 0,
        flow_used: 0.0,
        converged: false,
        candidate_residual: f64::NAN,
        candidate_period: f64::NAN,
        notinw_violations: 0,
        class_violations: 0,
        holder_violations: 0,
        period_floor_hits: 0,
        stiffness_hits: 0,
        history: Vec::new(),
        members: 0,
    };
    let mut best: Option<(LoopFamily, Vec<f64>, usize)> = None;
    let mut prev_max = f64::INFINITY;
    let mut values = family_primitive(sys, &family, k)?;
    for sweep in 0..=budget.max_sweeps {
        refine_peak(sys, &mut family, &mut values, k, budget)?;
        let (imax, vmax) = argmax(&values);
        rec.history.push(vmax);
        rec.members = family.len();
        if !class_holds(sys, &family, family0, k, short.delta)? {
            rec.class_violations += 1;
        }
        if vmax < rec.c {
            rec.c = vmax;
            rec.argmax = imax;
            best = Some((family.clone(), values.clone(), imax));
        }
        rec.sweeps = sweep;
        let w = budget.stab_window;
        if sweep >= w && rec.history[..=sweep - w].iter().copied().fold(f64::INFINITY, f64::min) - rec.c
            < budget.stab_tol * (1.0 + rec.c.abs())
        {
            rec.converged = true;
            break;
        }
        if sweep == budget.max_sweeps {
            break;
        }
        // While the max still falls fast every member is flowed; afterwards
        // only members near the top, since the rest cannot become maximizers
        // and would only stretch the family.
        let fast = prev_max - vmax > 0.05 * vmax.abs();
        prev_max = vmax;
        let floor = if fast { f64::NEG_INFINITY } else { vmax - budget.active_fraction * (vmax.abs() + short.epsilon) };
        let last = family.len() - 1;
        let active: Vec<usize> = (1..last).filter(|&j| values[j] >= floor).collect();
        let traces: Vec<_> = active
            .par_iter()
            .map(|&j| gradientflow::evolve(sys, &family.loops[j], &flow))
            .collect::<Result<_>>()?;
        for (&j, tr) in active.iter().zip(&traces) {
            rec.holder_violations += tr.holder_violations;
            match tr.reason {
                Termination::PeriodFloor => rec.period_floor_hits += 1,
                Termination::Stiffness => rec.stiffness_hits += 1,
                _ => {}
            }
            family.loops[j] = tr.final_loop().clone();
        }
        rec.flow_used += budget.flow_quantum;
        refine_gaps(sys, &mut family);
        values = family_primitive(sys, &family, k)?;
    }
    let (family, values, imax) = best.expect("at least one sweep is evaluated");
    let near = budget.near_fraction * rec.c.abs().max(short.epsilon);
    let mut candidate = (f64::INFINITY, imax);
    for (j, v) in values.iter().enumerate() {
        if *v < rec.c - near {
            continue;
        }
        let lp = &family.loops[j];
        if gradientflow::cutoff_factor(sys, lp, k, &short).map_or(true, |c| c < 1.0) {
            rec.notinw_violations += 1;
        }
        let (_, res) = gradientflow::normalized_field_with_norm(sys, lp, k);
        if res < candidate.0 {
            candidate = (res, j);
        }
    }
    let cand = family.loops[candidate.1].clone();
    rec.candidate_residual = candidate.0;
    rec.candidate_period = cand.period;
    Ok(MinimaxOutcome { record: rec, argmax_loop: family.loops[imax].clone(), candidate: cand, values, family })
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc })
}

/// Keeps consecutive members within half the path step bound.
fn refine_gaps(sys: &TonelliSystem, family: &mut LoopFamily) {
    let mut j = 0;
    while j + 1 < family.len() {
        let gap = loopspace::max_sample_distance(&sys.surface, &family.loops[j], &family.loops[j + 1]);
        if gap > 0.5 * PATH_STEP_BOUND {
            family.insert_midpoint(sys, j);
        } else {
            j += 1;
        }
    }
}

/// Bisects next to the maximizer until its neighbours are within
/// `peak_gap`, updating the primitive values incrementally.
fn refine_peak(sys: &TonelliSystem, family: &mut LoopFamily, values: &mut Vec<f64>, k: f64, budget: &MinimaxBudget) -> Result<()> {
    for _ in 0..budget.peak_insertions {
        if family.len() >= budget.max_members {
            break;
        }
        let (imax, _) = argmax(values);
        let gap = |j: usize| loopspace::max_sample_distance(&sys.surface, &family.loops[j], &family.loops[j + 1]);
        let side = [imax.checked_sub(1), Some(imax).filter(|&j| j + 1 < family.len())]
            .into_iter()
            .flatten()
            .filter(|&j| gap(j) > budget.peak_gap)
            .max_by(|&a, &b| gap(a).total_cmp(&gap(b)));
        let Some(j) = side else { break };
        family.insert_midpoint(sys, j);
        let (a, m) = (&family.loops[j], &family.loops[j + 1]);
        let inc = loopspace::segment_variation(sys, a, m, 0.0, j)?;
        let v = values[j] - k * a.period + inc + k * m.period;
        values.insert(j + 1, v);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyTolerances {
    /// Target for the g_Λ-dual norm of the discrete `η_k`.
    pub residual: f64,
    pub closing: f64,
    pub energy: f64,
    /// Integration tolerance of the shooting and verification runs.
    pub ode_tol: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances { residual: 1e-8, closing: 1e-4, energy: 1e-4, ode_tol: 1e-11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitResult {
    /// The verified orbit resampled at the candidate's N.
    #[serde(skip)]
    pub orbit: Option<DiscreteLoop>,
    /// Zero of the discrete action form reached by the Gauss–Newton stage.
    #[serde(skip)]
    pub discrete: DiscreteLoop,
    pub q0: [f64; 3],
    pub p0: [f64; 3],
    pub period: f64,
    pub discrete_period: f64,
    pub energy_error: f64,
    pub eta_residual: f64,
    /// Closing error of the orbit started from the discrete zero before the
    /// shooting correction.
    pub pre_polish_closing_error: f64,
    pub closing_error: f64,
    pub contractible: bool,
    pub verified: bool,
    pub note: String,
}

/// Residual vector of the discrete `η_k`: tangent-frame components of the
/// density scaled by `1/√N`, then the period part.
fn eta_residual_vector(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> DVector<f64> {
    let eta = loopspace::action_one_form(sys, lp, k);
    let n = lp.n();
    let s = 1.0 / (n as f64).sqrt();
    let mut r = DVector::zeros(2 * n + 1);
    for (i, (d, x)) in eta.density.iter().zip(&lp.samples).enumerate() {
        let (e1, e2) = sys.surface.tangent_frame(x);
        r[2 * i] = d.dot(&e1) * s;
        r[2 * i + 1] = d.dot(&e2) * s;
    }
    r[2 * n] = eta.period;
    r
}

/// Moves every sample along its tangent frame by the matching entries of `u`.
fn displace(sys: &TonelliSystem, lp: &DiscreteLoop, u: &DVector<f64>) -> DiscreteLoop {
    let n = lp.n();
    let samples = lp
        .samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let (e1, e2) = sys.surface.tangent_frame(x);
            sys.surface.retract_unchecked(x, &(e1 * u[2 * i] + e2 * u[2 * i + 1]))
        })
        .collect();
    DiscreteLoop { samples, period: lp.period + u[2 * n], shift: lp.shift }
}

/// Jacobian of [`eta_residual_vector`] at `lp`. The density at sample i only
/// sees samples i−1, i, i+1 and T, so samples are perturbed in interleaved
/// colour classes; the period row follows from the symmetry of the Hessian
/// of the discrete action.
fn eta_jacobian(sys: &TonelliSystem, lp: &DiscreteLoop, k: f64) -> DMatrix<f64> {
    let n = lp.n();
    let dim = 2 * n + 1;
    let colours = (3..=n).find(|c| n.is_multiple_of(*c)).unwrap_or(n);
    let h = 1e-6;
    let sn = (n as f64).sqrt();
    let mut jac = DMatrix::zeros(dim, dim);
    let central = |u: &DVector<f64>| -> DVector<f64> {
        let plus = eta_residual_vector(sys, &displace(sys, lp, u), k);
        let minus = eta_residual_vector(sys, &displace(sys, lp, &(-u)), k);
        (plus - minus) / (2.0 * h)
    };
    for c in 0..colours {
        for a in 0..2 {
            let mut u = DVector::zeros(dim);
            for i in (c..n).step_by(colours) {
                u[2 * i + a] = h;
            }
            let col = central(&u);
            for i in (c..n).step_by(colours) {
                for j in [(i + n - 1) % n, i, (i + 1) % n] {
                    jac[(2 * j, 2 * i + a)] = col[2 * j];
                    jac[(2 * j + 1, 2 * i + a)] = col[2 * j + 1];
                }
            }
        }
    }
    let mut u = DVector::zeros(dim);
    u[2 * n] = h;
    let col = central(&u);
    jac.set_column(2 * n, &col);
    // ∂(period part)/∂u_i = ∂²S/∂T∂u_i = (√N/N)·∂r_i/∂T with r_i the scaled density row.
    for i in 0..2 * n {
        jac[(2 * n, i)] = col[i] / sn;
    }
    jac
}

/// Levenberg–Marquardt on the discrete `η_k = 0` system. Returns the loop and
/// its dual residual norm.
pub fn solve_discrete_zero(sys: &TonelliSystem, start: &DiscreteLoop, k: f64, tol: f64, max_iter: usize) -> (DiscreteLoop, f64) {
    let mut lp = start.clone();
    let mut r = eta_residual_vector(sys, &lp, k);
    let mut cost = r.norm_squared();
    let mut mu = 1e-6;
    for _ in 0..max_iter {
        let res = gradientflow::normalized_field_with_norm(sys, &lp, k).1;
        if res <= tol {
            break;
        }
        let jac = eta_jacobian(sys, &lp, k);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &r;
        let scale = jtj.diagonal().max();
        let mut accepted = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * scale;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step = -chol.solve(&g);
            let trial = displace(sys, &lp, &step);
            if trial.period <= 0.0 {
                mu *= 10.0;
                continue;
            }
            let rt = eta_residual_vector(sys, &trial, k);
            let ct = rt.norm_squared();
            if ct < cost {
                lp = trial;
                r = rt;
                cost = ct;
                mu = (mu / 5.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 8.0;
        }
        if !accepted {
            break;
        }
    }
    let res = gradientflow::normalized_field_with_norm(sys, &lp, k).1;
    (lp, res)
}

/// Initial phase point of a discrete loop: `x_0` with the central-difference
/// velocity, Legendre-transformed.
fn initial_state(sys: &TonelliSystem, lp: &DiscreteLoop) -> PhasePoint {
    let n = lp.n() as f64;
    let q = lp.samples[0];
    let mut v = (lp.at(1) - lp.before(0)) * (n / (2.0 * lp.period));
    v = sys.surface.project(&q, &v);
    sys.inverse_legendre(&TangentPoint { q, v })
}

fn flow_to(sys: &TonelliSystem, z: &PhasePoint, t: f64, tol: f64) -> Result<PhasePoint> {
    Ok(*dynamics::integrate(sys, z, t, tol)?.last())
}

/// Shooting residual: closing defect in the tangent frame at `q` plus `H − k`.
fn shooting_residual(sys: &TonelliSystem, z: &PhasePoint, t: f64, k: f64, tol: f64) -> Result<SVector<f64, 5>> {
    let end = flow_to(sys, z, t, tol)?;
    let (e1, e2) = sys.surface.tangent_frame(&z.q);
    let dq = end.q - z.q;
    let dp = end.p - z.p;
    Ok(SVector::from([dq.dot(&e1), dq.dot(&e2), dp.dot(&e1), dp.dot(&e2), sys.hamiltonian(z) - k]))
}

fn shift_state(sys: &TonelliSystem, z: &PhasePoint, d: &SVector<f64, 5>) -> PhasePoint {
    let (e1, e2) = sys.surface.tangent_frame(&z.q);
    let q = sys.surface.retract_unchecked(&z.q, &(e1 * d[0] + e2 * d[1]));
    let p = sys.surface.project(&q, &(z.p + e1 * d[2] + e2 * d[3]));
    PhasePoint { q, p }
}

/// Newton on the periodic-orbit equations with pseudo-inverse steps; the
/// closing map is degenerate along the flow and across the orbit family.
fn shooting_polish(sys: &TonelliSystem, z0: &PhasePoint, t0: f64, k: f64, tol: f64) -> Result<(PhasePoint, f64)> {
    let (mut z, mut t) = (*z0, t0);
    let mut f = shooting_residual(sys, &z, t, k, tol)?;
    let h = 1e-6;
    for _ in 0..25 {
        if f.norm() < 1e-10 {
            break;
        }
        let mut jac = SMatrix::<f64, 5, 5>::zeros();
        for c in 0..5 {
            let mut d = SVector::<f64, 5>::zeros();
            d[c] = h;
            let zp = if c < 4 { shift_state(sys, &z, &d) } else { z };
            let tp = if c == 4 { t + h } else { t };
            let fp = shooting_residual(sys, &zp, tp, k, tol)?;
            jac.set_column(c, &((fp - f) / h));
        }
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd
            .solve(&(-f), 1e-7 * smax)
            .map_err(|e| MagflowError::RefinementFailed(e.to_string()))?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..10 {
            let d = step * lambda;
            let zt = shift_state(sys, &z, &SVector::from([d[0], d[1], d[2], d[3], 0.0]));
            let tt = t + d[4];
            if tt > 0.0 {
                let ft = shooting_residual(sys, &zt, tt, k, tol)?;
                if ft.norm() < f.norm() {
                    z = zt;
                    t = tt;
                    f = ft;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((z, t))
}

/// Refines a candidate to a zero of the discrete action form, corrects it to
/// a periodic orbit of the Hamiltonian flow, and verifies by an independent
/// integration.
pub fn extract_and_verify(sys: &TonelliSystem, candidate: &DiscreteLoop, k: f64, tol: &VerifyTolerances) -> Result<OrbitResult> {
    candidate.validate(&sys.surface)?;
    let (discrete, eta_residual) = solve_discrete_zero(sys, candidate, k, tol.residual, 60);
    let z_disc = initial_state(sys, &discrete);
    let pre = flow_to(sys, &z_disc, discrete.period, tol.ode_tol)
        .map(|end| end.distance(&z_disc))
        .unwrap_or(f64::INFINITY);
    let (z0, period) = shooting_polish(sys, &z_disc, discrete.period, k, tol.ode_tol)?;
    // Verification run at a tighter tolerance than the shooting stage.
    let verify_tol = (0.1 * tol.ode_tol).max(1e-13);
    let end = flow_to(sys, &z0, period, verify_tol)?;
    let closing_error = end.distance(&z0);
    let energy_error = (sys.hamiltonian(&z0) - k).abs();
    // The lift must close without a lattice shift.
    let contractible = discrete.shift == [0, 0] && (sys.surface.is_sphere() || (end.q - z0.q).norm() < 0.5);
    let n = candidate.n();
    let mut samples = Vec::with_capacity(n);
    let mut z = z0;
    for i in 0..n {
        samples.push(z.q);
        if i + 1 < n {
            z = flow_to(sys, &z, period / n as f64, verify_tol)?;
        }
    }
    let verified = closing_error <= tol.closing && energy_error <= tol.energy && eta_residual <= tol.residual && contractible;
    let note = if verified {
        "verified".to_string()
    } else {
        format!(
            "unverified: closing {closing_error:.3e}, energy {energy_error:.3e}, residual {eta_residual:.3e}, contractible {contractible}"
        )
    };
    Ok(OrbitResult {
        orbit: Some(DiscreteLoop::new(samples, period)),
        q0: z0.q.into(),
        p0: z0.p.into(),
        period,
        discrete_period: discrete.period,
        energy_error,
        eta_residual,
        pre_polish_closing_error: pre,
        closing_error,
        contractible,
        verified,
        note,
        discrete,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanConfig {
    pub interval: (f64, f64),
    pub n_grid: usize,
    pub members: usize,
    pub samples: usize,
    pub delta: f64,
    /// Probe loops used to calibrate ε.
    pub n_probe: usize,
    pub seed: u64,
    /// The slope cap is `slope_factor` times the mean slope of c over I.
    pub slope_factor: f64,
    /// Lower end of the admissible candidate period window.
    pub t_min: f64,
    pub budget: MinimaxBudget,
    pub verify: VerifyTolerances,
}

impl ScanConfig {
    pub fn new(interval: (f64, f64), n_grid: usize) -> Self {
        ScanConfig {
            interval,
            n_grid,
            members: 64,
            samples: 256,
            delta: loopspace::DEFAULT_DELTA,
            n_probe: 200,
            seed: 0,
            slope_factor: 10.0,
            t_min: 1e-3,
            budget: MinimaxBudget::default(),
            verify: VerifyTolerances::default(),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = self.interval;
        if self.n_grid == 1 {
            return vec![a];
        }
        (0..self.n_grid)
            .map(|i| {
                let s = i as f64 / (self.n_grid - 1) as f64;
                a * (1.0 - s) + b * s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanEntry {
    pub record: MinimaxRecord,
    /// One-sided difference quotient of c at this grid point.
    pub slope: f64,
    pub selected: bool,
    pub orbit: Option<OrbitResult>,
    /// Candidate loop handed to extraction.
    #[serde(skip)]
    pub candidate: DiscreteLoop,
    #[serde(skip)]
    pub family: LoopFamily,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub class: ClassTag,
    pub epsilon: f64,
    pub t_bar: f64,
    pub e0: f64,
    pub slope_cap: f64,
    pub period_window: (f64, f64),
    pub entries: Vec<ScanEntry>,
    /// Whether the c grid is nondecreasing up to the minimax stabilization tolerance.
    pub monotone: bool,
}

/// Builds the class for a scan: ε calibrated at the bottom of I (the action
/// grows with k), and the constant endpoints at `T̄` with `T̄·sup I = ε/8`.
pub fn build_class(sys: &TonelliSystem, cfg: &ScanConfig) -> Result<(LoopFamily, f64, f64)> {
    let (lo, hi) = cfg.interval;
    let epsilon = loopspace::calibrate_epsilon(sys, lo, cfg.delta, cfg.n_probe, cfg.samples, cfg.seed)?;
    let t_bar = epsilon / (8.0 * (hi - sys.min_v).max(1e-12));
    let family = if sys.surface.is_sphere() {
        birkhoff_sweepout(sys, cfg.members, cfg.samples, t_bar)?
    } else {
        negative_action_path(sys, cfg.interval, cfg.members, cfg.samples, t_bar)?
    };
    Ok((family, epsilon, t_bar))
}

/// Minimax values on the k grid, slope-cap selection of energies, and
/// extraction of an orbit at each selected energy.
pub fn struwe_scan(sys: &TonelliSystem, cfg: &ScanConfig) -> Result<ScanReport> {
    let (lo, hi) = cfg.interval;
    if !(lo < hi) || cfg.n_grid < 2 {
        return Err(MagflowError::InvalidInput(format!("scan needs lo < hi and ≥ 2 grid points, got {:?}, {}", cfg.interval, cfg.n_grid)));
    }
    let e0 = sys.e0(64)?;
    if lo <= e0 {
        return Err(MagflowError::InvalidInput(format!("scan interval must lie above e0 = {e0:.6}")));
    }
    let (family, epsilon, t_bar) = build_class(sys, cfg)?;
    let short = ShortLoops { delta: cfg.delta, epsilon };
    let grid = cfg.grid();
    let outcomes: Vec<MinimaxOutcome> = grid
        .par_iter()
        .map(|k| minimax_value(sys, &family, *k, short, &cfg.budget))
        .collect::<Result<_>>()?;
    let cs: Vec<f64> = outcomes.iter().map(|o| o.record.c).collect();
    let mean_slope = (cs[cs.len() - 1] - cs[0]) / (hi - lo);
    let slope_cap = cfg.slope_factor * mean_slope.abs();
    let window = (cfg.t_min, slope_cap + 3.0);
    let m = grid.len();
    let slopes: Vec<f64> = (0..m)
        .map(|i| {
            let (a, b) = if i + 1 < m { (i, i + 1) } else { (i - 1, i) };
            (cs[b] - cs[a]) / (grid[b] - grid[a])
        })
        .collect();
    let tol = |c: f64| 10.0 * cfg.budget.stab_tol * (1.0 + c.abs()) + 1e-9;
    let monotone = cs.windows(2).all(|w| w[1] >= w[0] - tol(w[0]));
    let entries = outcomes
        .into_par_iter()
        .zip(slopes.par_iter())
        .map(|(out, slope)| {
            let selected = *slope <= slope_cap;
            let in_window = out.candidate.period >= window.0 && out.candidate.period <= window.1;
            let orbit = if selected && in_window {
                Some(extract_and_verify(sys, &out.candidate, out.record.k, &cfg.verify)?)
            } else {
                None
            };
            Ok(ScanEntry { record: out.record, slope: *slope, selected, orbit, candidate: out.candidate, family: out.family })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanReport { class: family.class, epsilon, t_bar, e0, slope_cap, period_window: window, entries, monotone })
}
