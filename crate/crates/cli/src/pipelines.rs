//! The four pipelines. Each returns the artifacts to write and a summary;
//! nothing touches the filesystem here except reading an initial loop.

use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

use magflow_core::displacement::{self, DisplacementStatus};
use magflow_core::gradientflow::{self, FlowParams, ShortLoops};
use magflow_core::io;
use magflow_core::loopspace::{self, DEFAULT_DELTA};
use magflow_core::minimax::{self, MinimaxRecord, OrbitResult, ScanConfig, VerifyTolerances};
use magflow_core::{MagflowError, PhasePoint, TonelliSystem};

use crate::config::{ConfigError, FindOrbitSection, RunConfig, ScanSection};

pub enum Failure {
    Config(String),
    Numeric(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<MagflowError> for Failure {
    fn from(e: MagflowError) -> Self {
        Failure::Numeric(e.to_string())
    }
}

/// Output files in write order, then the summary.
#[derive(Default)]
pub struct Artifacts {
    pub files: Vec<(String, String)>,
    pub summary: String,
    /// Set when a result failed verification; the artifacts are still written.
    pub unverified: Option<String>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }
}

fn missing(section: &str) -> Failure {
    Failure::Config(format!("missing [{section}] table for this pipeline"))
}

pub fn integrate(cfg: &RunConfig, sys: &TonelliSystem, text: &str) -> Result<Artifacts, Failure> {
    let sec = cfg.integrate.as_ref().ok_or_else(|| missing("integrate"))?;
    let q = sys
        .surface
        .point(sec.q0.get_ref())
        .map_err(|e| ConfigError::at(text, sec.q0.span(), "integrate.q0", e))?;
    let p = sec.p0.get_ref();
    if p.len() != sys.surface.kind.dim() {
        return Err(ConfigError::at(text, sec.p0.span(), "integrate.p0", format!("expected {} components", sys.surface.kind.dim())).into());
    }
    let p = sys.surface.project(&q, &magflow_core::Vec3::new(p[0], p[1], p.get(2).copied().unwrap_or(0.0)));
    let z0 = PhasePoint::new(q, p);
    let traj = magflow_core::dynamics::integrate(sys, &z0, sec.t_end, sec.tol)?;
    let kind = sys.surface.kind;
    let mut out = Artifacts::default();
    out.add("trajectory.csv", io::trajectory_csv(sys, &traj));
    let qs: Vec<_> = traj.states.iter().map(|z| z.q).collect();
    out.add("trajectory.svg", io::curve_svg(kind, &qs, false));
    out.add("integrate.json", io::to_json(&traj.stats));
    let end = traj.last();
    let _ = writeln!(out.summary, "integrate on {} to t = {}", kind.tag(), sec.t_end);
    let _ = writeln!(out.summary, "  accepted steps {}, rejected {}", traj.stats.steps, traj.stats.rejected);
    let _ = writeln!(out.summary, "  H(z0) = {}, max |H drift| = {:.3e}", io::fmt_f64(traj.energies[0]), traj.stats.max_energy_drift);
    let _ = writeln!(out.summary, "  final q = {:?}", &end.q.as_slice()[..kind.dim()]);
    Ok(out)
}

/// Orbit file: the extraction record plus a pointer to the loop JSON.
#[derive(Serialize)]
struct OrbitFile<'a> {
    surface: &'static str,
    k: f64,
    minimax: Option<&'a MinimaxRecord>,
    flow: Option<FlowSummary>,
    orbit: &'a OrbitResult,
    samples_ref: Option<String>,
}

#[derive(Serialize)]
struct FlowSummary {
    epsilon: f64,
    reason: &'static str,
    final_r: f64,
    final_eta_norm: f64,
    delta_s: f64,
    holder_violations: usize,
}

fn push_orbit(out: &mut Artifacts, sys: &TonelliSystem, stem: &str, orbit: &OrbitResult) -> Option<String> {
    let lp = orbit.orbit.as_ref()?;
    let name = format!("{stem}_loop.json");
    out.add(name.clone(), io::loop_to_json(sys.surface.kind, lp));
    out.add(format!("{stem}.svg"), io::curve_svg(sys.surface.kind, &lp.samples, true));
    Some(name)
}

fn find_orbit_tolerances(sec: &FindOrbitSection) -> VerifyTolerances {
    let mut tol = VerifyTolerances::default();
    sec.verify.apply(&mut tol);
    tol
}

pub fn find_orbit(cfg: &RunConfig, sys: &TonelliSystem, text: &str, seed: u64, base: &Path) -> Result<Artifacts, Failure> {
    let sec = cfg.find_orbit.as_ref().ok_or_else(|| missing("find_orbit"))?;
    let k = *sec.k.get_ref();
    let e0 = sys.e0(64)?;
    if !(k > e0) {
        return Err(ConfigError::at(text, sec.k.span(), "find_orbit.k", format!("must exceed e0 = {e0:.6}")).into());
    }
    let tol = find_orbit_tolerances(sec);
    let mut out = Artifacts::default();
    let (candidate, record, flow) = match &sec.initial {
        Some(path) => {
            let path = base.join(path);
            let body = std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("find_orbit.initial: {}: {e}", path.display())))?;
            let (kind, lp) = io::loop_from_json(&body).map_err(|e| Failure::Config(format!("find_orbit.initial: {e}")))?;
            if kind != sys.surface.kind {
                return Err(Failure::Config(format!("find_orbit.initial is a {} loop, the run is on {}", kind.tag(), sys.surface.kind.tag())));
            }
            lp.validate(&sys.surface)?;
            let epsilon = loopspace::calibrate_epsilon(sys, k, DEFAULT_DELTA, 200, lp.n(), seed)?;
            let mut params = FlowParams::new(k, ShortLoops { delta: DEFAULT_DELTA, epsilon });
            if let Some(v) = sec.flow.r_max {
                params.r_max = v;
            }
            if let Some(v) = sec.flow.tol_vanish {
                params.tol_vanish = v;
            }
            if let Some(v) = sec.flow.step_tol {
                params.step_tol = v;
            }
            if let Some(v) = sec.flow.truncated {
                params.truncated = v;
            }
            let trace = gradientflow::evolve(sys, &lp, &params)?;
            out.add("flow_trace.csv", io::flow_trace_csv(&sys.surface, &trace));
            let last = trace.last();
            let summary = FlowSummary {
                epsilon,
                reason: trace.reason.tag(),
                final_r: last.r,
                final_eta_norm: last.eta_norm,
                delta_s: last.delta_s,
                holder_violations: trace.holder_violations,
            };
            (trace.final_loop().clone(), None, Some(summary))
        }
        None => {
            let mut scan = ScanConfig::new((k, k), 2);
            scan.samples = sec.samples;
            scan.members = sec.members;
            scan.seed = seed;
            sec.minimax.apply(&mut scan.budget);
            let (family, epsilon, _) = minimax::build_class(sys, &scan)?;
            let short = ShortLoops { delta: scan.delta, epsilon };
            let outcome = minimax::minimax_value(sys, &family, k, short, &scan.budget)?;
            (outcome.candidate, Some(outcome.record), None)
        }
    };
    let orbit = minimax::extract_and_verify(sys, &candidate, k, &tol)?;
    let samples_ref = push_orbit(&mut out, sys, "orbit", &orbit);
    let file = OrbitFile { surface: sys.surface.kind.tag(), k, minimax: record.as_ref(), flow, orbit: &orbit, samples_ref };
    out.add("orbit.json", io::to_json(&file));
    let _ = writeln!(out.summary, "find-orbit on {} at k = {k}", sys.surface.kind.tag());
    if let Some(r) = &record {
        let _ = writeln!(out.summary, "  minimax c = {:.8} after {} sweeps (converged {})", r.c, r.sweeps, r.converged);
    }
    if let Some(f) = &file.flow {
        let _ = writeln!(out.summary, "  flow ended by {} at r = {:.4}, |eta| = {:.3e}", f.reason, f.final_r, f.final_eta_norm);
    }
    write_orbit_lines(&mut out.summary, &orbit);
    if !orbit.verified {
        out.unverified = Some(orbit.note.clone());
    }
    Ok(out)
}

fn write_orbit_lines(s: &mut String, o: &OrbitResult) {
    let _ = writeln!(s, "  orbit period {:.8}, closing {:.3e}, energy error {:.3e}, residual {:.3e}", o.period, o.closing_error, o.energy_error, o.eta_residual);
    let _ = writeln!(s, "  {}", o.note);
}

#[derive(Serialize)]
struct ScanFile {
    surface: &'static str,
    class: minimax::ClassTag,
    epsilon: f64,
    t_bar: f64,
    e0: f64,
    slope_cap: f64,
    period_window: (f64, f64),
    monotone: bool,
    entries: Vec<ScanFileEntry>,
}

#[derive(Serialize)]
struct ScanFileEntry {
    k: f64,
    c: f64,
    converged: bool,
    slope: f64,
    selected: bool,
    sweeps: usize,
    candidate_period: f64,
    candidate_residual: f64,
    orbit: Option<ScanFileOrbit>,
}

#[derive(Serialize)]
struct ScanFileOrbit {
    period: f64,
    energy_error: f64,
    closing_error: f64,
    eta_residual: f64,
    contractible: bool,
    verified: bool,
    q0: [f64; 3],
    p0: [f64; 3],
    samples_ref: Option<String>,
}

fn scan_config(sec: &ScanSection, text: &str, seed: u64, e0: f64) -> Result<ScanConfig, Failure> {
    let [lo, hi] = *sec.interval.get_ref();
    if !(lo < hi) {
        return Err(ConfigError::at(text, sec.interval.span(), "scan.interval", "needs lo < hi").into());
    }
    if !(lo > e0) {
        return Err(ConfigError::at(text, sec.interval.span(), "scan.interval", format!("inf I must exceed e0 = {e0:.6}")).into());
    }
    let n_grid = *sec.n_grid.get_ref();
    if n_grid < 2 {
        return Err(ConfigError::at(text, sec.n_grid.span(), "scan.n_grid", "needs at least 2 points").into());
    }
    let mut c = ScanConfig::new((lo, hi), n_grid);
    c.samples = sec.samples;
    c.members = sec.members;
    c.n_probe = sec.n_probe;
    c.seed = seed;
    if let Some(v) = sec.delta {
        c.delta = v;
    }
    if let Some(v) = sec.slope_factor {
        c.slope_factor = v;
    }
    if let Some(v) = sec.t_min {
        c.t_min = v;
    }
    sec.minimax.apply(&mut c.budget);
    sec.verify.apply(&mut c.verify);
    Ok(c)
}

pub fn scan(cfg: &RunConfig, sys: &TonelliSystem, text: &str, seed: u64) -> Result<Artifacts, Failure> {
    let sec = cfg.scan.as_ref().ok_or_else(|| missing("scan"))?;
    let e0 = sys.e0(64)?;
    let sc = scan_config(sec, text, seed, e0)?;
    let report = minimax::struwe_scan(sys, &sc)?;
    let mut out = Artifacts::default();
    let kind = sys.surface.kind;
    let _ = writeln!(out.summary, "scan on {} over I = [{}, {}], {} points", kind.tag(), sc.interval.0, sc.interval.1, sc.n_grid);
    let _ = writeln!(out.summary, "  class {:?}, epsilon {:.6}, T_bar {:.6}, slope cap {:.6}, monotone {}", report.class, report.epsilon, report.t_bar, report.slope_cap, report.monotone);
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for (i, e) in report.entries.iter().enumerate() {
        let r = &e.record;
        let orbit = e.orbit.as_ref().map(|o| {
            let samples_ref = push_orbit(&mut out, sys, &format!("orbit_{i:03}"), o);
            if !o.verified {
                failed.push(r.k);
            }
            ScanFileOrbit {
                period: o.period,
                energy_error: o.energy_error,
                closing_error: o.closing_error,
                eta_residual: o.eta_residual,
                contractible: o.contractible,
                verified: o.verified,
                q0: o.q0,
                p0: o.p0,
                samples_ref,
            }
        });
        let _ = write!(out.summary, "  k {:.4}  c {:.8}  converged {:5}  selected {:5}", r.k, r.c, r.converged, e.selected);
        match &orbit {
            Some(o) => {
                let _ = writeln!(out.summary, "  T {:.6}  closing {:.2e}  verified {}", o.period, o.closing_error, o.verified);
            }
            None => out.summary.push('\n'),
        }
        entries.push(ScanFileEntry {
            k: r.k,
            c: r.c,
            converged: r.converged,
            slope: e.slope,
            selected: e.selected,
            sweeps: r.sweeps,
            candidate_period: r.candidate_period,
            candidate_residual: r.candidate_residual,
            orbit,
        });
    }
    let file = ScanFile {
        surface: kind.tag(),
        class: report.class,
        epsilon: report.epsilon,
        t_bar: report.t_bar,
        e0: report.e0,
        slope_cap: report.slope_cap,
        period_window: report.period_window,
        monotone: report.monotone,
        entries,
    };
    out.add("scan.json", io::to_json(&file));
    if !failed.is_empty() {
        out.unverified = Some(format!("orbits at k = {failed:?} did not verify"));
    }
    Ok(out)
}

pub fn displace_check(cfg: &RunConfig, sys: &TonelliSystem) -> Result<Artifacts, Failure> {
    let sec = cfg.displace.as_ref().ok_or_else(|| missing("displace"))?;
    let rep = displacement::displace_check(sys, &sec.f, sec.k, sec.samples)?;
    let mut out = Artifacts::default();
    out.add("displacement.json", io::to_json(&rep));
    let _ = writeln!(out.summary, "displace-check on {} at k = {} with f = {}", sys.surface.kind.tag(), rep.k, rep.f);
    let _ = writeln!(out.summary, "  eps_f {:.6}, B_p {:.6}, T_disp {:.6}", rep.epsilon_f, rep.b_p, rep.t_disp);
    let _ = writeln!(out.summary, "  margin {:.6} over {} samples, cross-check error {:.2e}", rep.margin, rep.samples, rep.crosscheck_max_error);
    let _ = writeln!(out.summary, "  status {:?}", rep.status);
    if rep.status != DisplacementStatus::Displaced {
        out.unverified = Some(format!("sublevel not displaced (margin {:.3e})", rep.margin));
    }
    Ok(out)
}
