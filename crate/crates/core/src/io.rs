//! File formats: loop JSON, trajectory and flow-trace CSV, SVG sketches, and
//! JSON with floats fixed at 17 significant digits.

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io;

use crate::dynamics::{TonelliSystem, Trajectory};
use crate::error::{MagflowError, Result};
use crate::geometry::{ModelSurface, SurfaceKind, Vec3};
use crate::gradientflow::FlowTrace;
use crate::loopspace::{self, DiscreteLoop};

/// `{:.16e}`: 17 significant digits, round-trip exact and byte-stable.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Pretty JSON formatter printing every f64 with 17 significant digits.
struct FixedFloats<'a>(PrettyFormatter<'a>);

impl Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloats(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization does not fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[derive(Serialize, Deserialize)]
struct LoopFile {
    surface: String,
    #[serde(rename = "T")]
    period: f64,
    samples: Vec<Vec<f64>>,
}

/// Loop JSON: `{"surface", "T", "samples"}`, torus samples as lift coordinates.
pub fn loop_to_json(kind: SurfaceKind, lp: &DiscreteLoop) -> String {
    let dim = kind.dim();
    let file = LoopFile {
        surface: kind.tag().to_string(),
        period: lp.period,
        samples: lp.samples.iter().map(|q| q.as_slice()[..dim].to_vec()).collect(),
    };
    to_json(&file)
}

pub fn loop_from_json(text: &str) -> Result<(SurfaceKind, DiscreteLoop)> {
    let file: LoopFile = serde_json::from_str(text).map_err(|e| MagflowError::InvalidInput(format!("loop JSON: {e}")))?;
    let kind = SurfaceKind::from_tag(&file.surface)?;
    let dim = kind.dim();
    let samples = file
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.len() != dim {
                return Err(MagflowError::InvalidInput(format!("sample {i} has {} coordinates, expected {dim}", s.len())));
            }
            Ok(Vec3::new(s[0], s[1], if dim == 3 { s[2] } else { 0.0 }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kind, DiscreteLoop::new(samples, file.period)))
}

/// Trajectory CSV with header `t,q1,q2[,q3],p1,p2[,p3],H`.
pub fn trajectory_csv(sys: &TonelliSystem, traj: &Trajectory) -> String {
    let dim = sys.surface.kind.dim();
    let mut out = String::new();
    let names: Vec<String> = ["q", "p"]
        .iter()
        .flat_map(|s| (1..=dim).map(move |i| format!("{s}{i}")))
        .collect();
    let _ = writeln!(out, "t,{},H", names.join(","));
    for ((t, z), h) in traj.times.iter().zip(&traj.states).zip(&traj.energies) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(z.q.as_slice()[..dim].iter().map(|x| fmt_f64(*x)));
        row.extend(z.p.as_slice()[..dim].iter().map(|x| fmt_f64(*x)));
        row.push(fmt_f64(*h));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Flow-trace CSV: `r,T,length,l2_energy,eta_norm,deltaS,cutoff`.
pub fn flow_trace_csv(surface: &ModelSurface, trace: &FlowTrace) -> String {
    let mut out = String::from("r,T,length,l2_energy,eta_norm,deltaS,cutoff\n");
    for p in &trace.points {
        let row = [
            p.r,
            p.lp.period,
            loopspace::length(surface, &p.lp),
            loopspace::l2_energy(surface, &p.lp),
            p.eta_norm,
            p.delta_s,
            p.cutoff,
        ];
        let _ = writeln!(out, "{}", row.map(fmt_f64).join(","));
    }
    out
}

const SVG_SIZE: f64 = 480.0;

/// SVG sketch of a base curve: the lift for the torus (unit lattice drawn),
/// longitude/latitude coordinates for the sphere (15° grid).
pub fn curve_svg(kind: SurfaceKind, points: &[Vec3], closed: bool) -> String {
    let mut body = String::new();
    let (polylines, (x0, x1, y0, y1)) = if kind.is_sphere() {
        let mut lines: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        let mut prev: Option<f64> = None;
        let pts: Vec<&Vec3> = if closed { points.iter().chain(points.first()).collect() } else { points.iter().collect() };
        for q in pts {
            let lon = q.y.atan2(q.x).to_degrees();
            let lat = q.z.clamp(-1.0, 1.0).asin().to_degrees();
            if prev.is_some_and(|p| (lon - p).abs() > 180.0) {
                lines.push(Vec::new());
            }
            prev = Some(lon);
            lines.last_mut().unwrap().push((lon, lat));
        }
        for lat in (-75..=75).step_by(15) {
            let _ = writeln!(body, r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#ddd"/>"##, sx(-180.0, -180.0, 180.0), sy(lat as f64, -90.0, 90.0), sx(180.0, -180.0, 180.0), sy(lat as f64, -90.0, 90.0));
        }
        (lines, (-180.0, 180.0, -90.0, 90.0))
    } else {
        let mut pts: Vec<(f64, f64)> = points.iter().map(|q| (q.x, q.y)).collect();
        if closed && !pts.is_empty() {
            pts.push(pts[0]);
        }
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |b, p| {
            (b.0.min(p.0), b.1.max(p.0), b.2.min(p.1), b.3.max(p.1))
        });
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        // Square viewport with a margin.
        let span = (x1 - x0).max(y1 - y0).max(1e-9) * 1.1;
        let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let view = (cx - 0.5 * span, cx + 0.5 * span, cy - 0.5 * span, cy + 0.5 * span);
        for i in view.0.floor() as i64..=view.1.ceil() as i64 {
            let x = sx(i as f64, view.0, view.1);
            let _ = writeln!(body, r##"<line x1="{x}" y1="0" x2="{x}" y2="{SVG_SIZE}" stroke="#ddd"/>"##);
        }
        for j in view.2.floor() as i64..=view.3.ceil() as i64 {
            let y = sy(j as f64, view.2, view.3);
            let _ = writeln!(body, r##"<line x1="0" y1="{y}" x2="{SVG_SIZE}" y2="{y}" stroke="#ddd"/>"##);
        }
        (vec![pts], view)
    };
    for line in polylines.iter().filter(|l| l.len() > 1) {
        let coords: Vec<String> = line.iter().map(|(x, y)| format!("{:.3},{:.3}", sx(*x, x0, x1), sy(*y, y0, y1))).collect();
        let _ = writeln!(body, r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>"##, coords.join(" "));
    }
    let width = if kind.is_sphere() { 2.0 * SVG_SIZE } else { SVG_SIZE };
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\" preserveAspectRatio=\"none\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn sx(x: f64, x0: f64, x1: f64) -> f64 {
    (x - x0) / (x1 - x0) * SVG_SIZE
}

fn sy(y: f64, y0: f64, y1: f64) -> f64 {
    SVG_SIZE - (y - y0) / (y1 - y0) * SVG_SIZE
}

/// Geodesic radius and curvature of a closed sphere curve fitted as a circle:
/// the centre is the normalized sample mean, ρ the mean angular distance.
pub fn sphere_circle_fit(samples: &[Vec3]) -> (Vec3, f64, f64) {
    let centre = samples.iter().sum::<Vec3>().normalize();
    let rho = samples.iter().map(|q| q.dot(&centre).clamp(-1.0, 1.0).acos()).sum::<f64>() / samples.len() as f64;
    let kappa = if rho > 0.0 && rho < PI { 1.0 / rho.tan() } else { f64::INFINITY };
    (centre, rho, kappa)
}
