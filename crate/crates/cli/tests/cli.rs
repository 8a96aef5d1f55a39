use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use magflow_core::dynamics::integrate;
use magflow_core::io::{loop_from_json, loop_to_json};
use magflow_core::{DiscreteLoop, Field, ModelSurface, PhasePoint, SurfaceKind, TonelliSystem, Vec3};

fn magflow(pipeline: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magflow"))
        .arg(pipeline)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TORUS: &str = "[surface]\nkind = \"torus_flat\"\nmagnetic = \"constant:1\"\n";

#[test]
fn zero_time_trajectory_holds_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{TORUS}\n[integrate]\nq0 = [0.1, 0.2]\np0 = [0.3, -0.4]\nt_end = 0.0\n"));
    let out = dir.path().join("out");
    let o = magflow("integrate", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "t,q1,q2,p1,p2,H");
    assert!(lines[1].starts_with("0.0000000000000000e0,1.0000000000000001e-1,2.0000000000000001e-1,"));
    assert!(out.join("trajectory.svg").exists() && out.join("summary.txt").exists());
}

#[test]
fn config_errors_name_the_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        (format!("{TORUS}\n[integrate]\nq0 = [0.1, 0.2]\np0 = [1.0, 0.0]\nt_end = 1.0\ntol = -1e-9\n"), "tol", "integrate"),
        (format!("{TORUS}colour = \"red\"\n"), "colour", "integrate"),
        (format!("{TORUS}\n[scan]\ninterval = [0.0, 1.0]\nn_grid = 4\n"), "scan.interval", "scan"),
        (format!("{TORUS}\n[scan]\ninterval = [0.5, 1.0]\nn_grid = 1\n"), "scan.n_grid", "scan"),
        ("[surface]\nkind = \"klein_bottle\"\nmagnetic = \"constant:1\"\n".to_string(), "klein_bottle", "integrate"),
    ];
    for (body, needle, pipeline) in cases {
        let cfg = write_config(dir.path(), "c.toml", &body);
        let o = magflow(pipeline, &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(1), "{body}");
        let msg = stderr(&o);
        assert!(msg.contains("line") && msg.contains(needle), "{msg}");
    }
    let cfg = write_config(dir.path(), "c.toml", TORUS);
    let o = magflow("integrate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[integrate]"));
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{TORUS}\n[integrate]\nq0 = [0.1, 0.2]\np0 = [1.0, 0.0]\nt_end = 1.0\n"));
    let o = Command::new(env!("CARGO_BIN_EXE_magflow"))
        .args(["integrate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("MAGFLOW_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MAGFLOW_THREADS"));
}

const DISPLACE: &str = "[surface]\nkind = \"sphere_round\"\nmagnetic = \"constant:1\"\npotential = \"height\"\n\n[displace]\nk = -0.5\nf = \"height:1,0,0.1\"\nsamples = 10000\n";

#[test]
fn displace_check_is_displaced_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", DISPLACE);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = magflow("displace-check", &cfg, out, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ja = std::fs::read(a.join("displacement.json")).unwrap();
    assert_eq!(ja, std::fs::read(b.join("displacement.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(v["status"], "displaced");
    assert!(v["margin"].as_f64().unwrap() > 0.0);
    assert!(v["samples"].as_u64().unwrap() >= 10_000);
}

/// Slightly enlarged Larmor circle of the b = 1 torus at k = 1/2.
fn initial_loop(dir: &Path) -> String {
    let lp = DiscreteLoop::planar_circle(Vec3::new(0.3, 0.1, 0.0), 1.02, 128, 6.3, false, 0.4);
    std::fs::write(dir.join("start.json"), loop_to_json(SurfaceKind::TorusFlat, &lp)).unwrap();
    format!("{TORUS}\n[find_orbit]\nk = 0.5\ninitial = \"start.json\"\n\n[find_orbit.flow]\nr_max = 0.05\n")
}

#[test]
fn orbit_files_reverify_and_repeat_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &initial_loop(dir.path()));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = magflow("find-orbit", &cfg, out, &["--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ja = std::fs::read_to_string(a.join("orbit.json")).unwrap();
    assert_eq!(ja, std::fs::read_to_string(b.join("orbit.json")).unwrap());
    assert!(a.join("flow_trace.csv").exists() && a.join("orbit.svg").exists());

    let v: serde_json::Value = serde_json::from_str(&ja).unwrap();
    let o = &v["orbit"];
    assert_eq!(o["verified"], true);
    let vec3 = |x: &serde_json::Value| Vec3::new(x[0].as_f64().unwrap(), x[1].as_f64().unwrap(), x[2].as_f64().unwrap());
    let z0 = PhasePoint::new(vec3(&o["q0"]), vec3(&o["p0"]));
    let period = o["period"].as_f64().unwrap();
    assert!((period - 2.0 * std::f64::consts::PI).abs() < 1e-6);
    let sys = TonelliSystem::kinetic(ModelSurface::torus_flat(Field::Constant(1.0)));
    let end = integrate(&sys, &z0, period, 1e-12).unwrap();
    let closing = end.last().distance(&z0);
    let stored = o["closing_error"].as_f64().unwrap();
    assert!(closing <= 2.0 * stored.max(1e-14), "{closing} vs stored {stored}");

    let loop_file = a.join(v["samples_ref"].as_str().unwrap());
    let (kind, lp) = loop_from_json(&std::fs::read_to_string(loop_file).unwrap()).unwrap();
    assert_eq!(kind, SurfaceKind::TorusFlat);
    assert_eq!(lp.n(), 128);
    assert_eq!(lp.period, period);
}

#[test]
fn unverified_orbit_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let body = initial_loop(dir.path()) + "\n[find_orbit.verify]\nclosing = 1e-30\n";
    let cfg = write_config(dir.path(), "c.toml", &body);
    let out = dir.path().join("out");
    let o = magflow("find-orbit", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("orbit.json").exists());
}

#[test]
fn missing_initial_loop_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{TORUS}\n[find_orbit]\nk = 0.5\ninitial = \"nope.json\"\n"));
    let o = magflow("find-orbit", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
}
