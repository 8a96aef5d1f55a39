//! The two model surfaces, flat or conformal torus and round sphere, in global
//! coordinates.
//!
//! Torus points live in the universal cover (the plane, third component zero),
//! sphere points are unit vectors in R³. Every metric here is conformal to the
//! ambient Euclidean one, so a tangent vector is just an ambient vector and the
//! metric is a scalar factor `c(q)` times the identity on the tangent plane.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MagflowError, Result};

pub type Vec3 = Vector3<f64>;

/// A point on a model surface: lifted planar coordinates (z = 0) for the torus,
/// a unit vector for the sphere.
pub type SurfacePoint = Vec3;

pub const SPHERE_NORM_TOL: f64 = 1e-12;
pub const DEFAULT_TRUST_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    TorusFlat,
    TorusConformal,
    SphereRound,
}

impl SurfaceKind {
    pub fn tag(self) -> &'static str {
        match self {
            SurfaceKind::TorusFlat => "torus_flat",
            SurfaceKind::TorusConformal => "torus_conformal",
            SurfaceKind::SphereRound => "sphere_round",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "torus_flat" => Ok(SurfaceKind::TorusFlat),
            "torus_conformal" => Ok(SurfaceKind::TorusConformal),
            "sphere_round" => Ok(SurfaceKind::SphereRound),
            other => Err(MagflowError::InvalidInput(format!("unknown surface kind '{other}'"))),
        }
    }

    pub fn is_sphere(self) -> bool {
        self == SurfaceKind::SphereRound
    }

    /// Number of working coordinates of a point.
    pub fn dim(self) -> usize {
        if self.is_sphere() {
            3
        } else {
            2
        }
    }
}

/// Named scalar fields. Values and gradients are given by ambient formulas,
/// gradients are Euclidean (project them for the sphere).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    /// `c`
    Constant(f64),
    /// `a·cos(2πx)·cos(2πy)`
    CosCos(f64),
    /// `sin(2πx) + c·sin(2πy)`, critical points only where both cosines vanish.
    SinSin(f64),
    /// Linear height `⟨a, q⟩`; sphere only.
    Height(Vec3),
}

impl Field {
    /// Parses `constant:<v>`, `coscos:<amp>`, `sinsin:<c>`, `height` (the z
    /// coordinate) or `height:<ax>,<ay>,<az>` (normalized direction).
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || MagflowError::InvalidInput(format!("cannot parse field '{spec}'"));
        let spec = spec.trim();
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (spec, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let v: f64 = a.ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        match name {
            "constant" => Ok(Field::Constant(num(arg)?)),
            "coscos" => Ok(Field::CosCos(num(arg)?)),
            "sinsin" => Ok(Field::SinSin(num(arg)?)),
            "height" => match arg {
                None => Ok(Field::Height(Vec3::z())),
                Some(a) => {
                    let parts: Vec<f64> = a
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad())?;
                    if parts.len() != 3 {
                        return Err(bad());
                    }
                    let v = Vec3::new(parts[0], parts[1], parts[2]);
                    let n = v.norm();
                    if !(n > 0.0 && n.is_finite()) {
                        return Err(bad());
                    }
                    Ok(Field::Height(v / n))
                }
            },
            _ => Err(bad()),
        }
    }

    pub fn value(&self, q: &Vec3) -> f64 {
        match *self {
            Field::Constant(c) => c,
            Field::CosCos(a) => a * (2.0 * PI * q.x).cos() * (2.0 * PI * q.y).cos(),
            Field::SinSin(c) => (2.0 * PI * q.x).sin() + c * (2.0 * PI * q.y).sin(),
            Field::Height(a) => a.dot(q),
        }
    }

    pub fn grad(&self, q: &Vec3) -> Vec3 {
        let w = 2.0 * PI;
        match *self {
            Field::Constant(_) => Vec3::zeros(),
            Field::CosCos(a) => Vec3::new(
                -a * w * (w * q.x).sin() * (w * q.y).cos(),
                -a * w * (w * q.x).cos() * (w * q.y).sin(),
                0.0,
            ),
            Field::SinSin(c) => Vec3::new(w * (w * q.x).cos(), c * w * (w * q.y).cos(), 0.0),
            Field::Height(a) => a,
        }
    }

    /// Whether the formula descends to the torus.
    pub fn is_periodic(&self) -> bool {
        !matches!(self, Field::Height(_))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Field::Constant(_))
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Constant(c) => write!(f, "constant:{c}"),
            Field::CosCos(a) => write!(f, "coscos:{a}"),
            Field::SinSin(c) => write!(f, "sinsin:{c}"),
            Field::Height(a) => write!(f, "height:{},{},{}", a.x, a.y, a.z),
        }
    }
}

/// `(M, g, σ)` with `g = e^{2λ}·g_flat` on the torus and `σ = b·dA_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSurface {
    pub kind: SurfaceKind,
    pub lambda: Field,
    pub magnetic: Field,
    pub trust_radius: f64,
}

impl ModelSurface {
    pub fn new(kind: SurfaceKind, lambda: Field, magnetic: Field) -> Result<Self> {
        let lambda = match kind {
            SurfaceKind::TorusConformal => lambda,
            _ => {
                if lambda != Field::Constant(0.0) {
                    return Err(MagflowError::InvalidInput(format!(
                        "{} takes no conformal exponent",
                        kind.tag()
                    )));
                }
                lambda
            }
        };
        if !kind.is_sphere() && !(lambda.is_periodic() && magnetic.is_periodic()) {
            return Err(MagflowError::InvalidInput(
                "torus fields must be periodic".into(),
            ));
        }
        Ok(ModelSurface { kind, lambda, magnetic, trust_radius: DEFAULT_TRUST_RADIUS })
    }

    pub fn torus_flat(b: Field) -> Self {
        Self::new(SurfaceKind::TorusFlat, Field::Constant(0.0), b).expect("periodic b")
    }

    pub fn torus_conformal(lambda: Field, b: Field) -> Self {
        Self::new(SurfaceKind::TorusConformal, lambda, b).expect("periodic fields")
    }

    pub fn sphere(b: Field) -> Self {
        Self::new(SurfaceKind::SphereRound, Field::Constant(0.0), b).expect("valid sphere")
    }

    pub fn is_sphere(&self) -> bool {
        self.kind.is_sphere()
    }

    pub fn check_point(&self, q: &SurfacePoint) -> Result<()> {
        if !q.iter().all(|c| c.is_finite()) {
            return Err(MagflowError::InvalidPoint(format!("non-finite coordinates {q:?}")));
        }
        if self.is_sphere() {
            if (q.norm() - 1.0).abs() > SPHERE_NORM_TOL {
                return Err(MagflowError::InvalidPoint(format!(
                    "sphere point has norm {}",
                    q.norm()
                )));
            }
        } else if q.z != 0.0 {
            return Err(MagflowError::InvalidPoint("torus point has a z component".into()));
        }
        Ok(())
    }

    /// Builds a point from working coordinates (2 for the torus, 3 for the sphere).
    /// Sphere input is normalized.
    pub fn point(&self, coords: &[f64]) -> Result<SurfacePoint> {
        let q = match (self.is_sphere(), coords.len()) {
            (false, 2) => Vec3::new(coords[0], coords[1], 0.0),
            (true, 3) => {
                let v = Vec3::new(coords[0], coords[1], coords[2]);
                let n = v.norm();
                if !(n > 0.0) {
                    return Err(MagflowError::InvalidPoint("zero vector on the sphere".into()));
                }
                v / n
            }
            _ => {
                return Err(MagflowError::InvalidPoint(format!(
                    "{} expects {} coordinates, got {}",
                    self.kind.tag(),
                    self.kind.dim(),
                    coords.len()
                )))
            }
        };
        self.check_point(&q)?;
        Ok(q)
    }

    /// Conformal factor `c(q)` with `g = c·I`.
    #[inline]
    pub fn conformal(&self, q: &Vec3) -> f64 {
        match self.kind {
            SurfaceKind::TorusConformal => (2.0 * self.lambda.value(q)).exp(),
            _ => 1.0,
        }
    }

    /// Euclidean gradient of the conformal factor.
    #[inline]
    pub fn conformal_grad(&self, q: &Vec3) -> Vec3 {
        match self.kind {
            SurfaceKind::TorusConformal => 2.0 * self.conformal(q) * self.lambda.grad(q),
            _ => Vec3::zeros(),
        }
    }

    /// Unit normal fixing the orientation: `e_z` on the torus, `q` on the sphere.
    #[inline]
    pub fn normal(&self, q: &Vec3) -> Vec3 {
        if self.is_sphere() {
            *q
        } else {
            Vec3::z()
        }
    }

    /// Orthogonal projection onto the tangent plane at `q`.
    #[inline]
    pub fn project(&self, q: &Vec3, v: &Vec3) -> Vec3 {
        if self.is_sphere() {
            v - q * q.dot(v)
        } else {
            Vec3::new(v.x, v.y, 0.0)
        }
    }

    /// Orthonormal (Euclidean) basis of the tangent plane, positively oriented.
    pub fn tangent_frame(&self, q: &Vec3) -> (Vec3, Vec3) {
        if !self.is_sphere() {
            return (Vec3::x(), Vec3::y());
        }
        let a = if q.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
        let e1 = (a - q * q.dot(&a)).normalize();
        let e2 = q.cross(&e1);
        (e1, e2)
    }

    pub fn metric_at(&self, q: &SurfacePoint) -> Result<Matrix2<f64>> {
        self.check_point(q)?;
        Ok(Matrix2::identity() * self.conformal(q))
    }

    #[inline]
    pub fn norm_sq(&self, q: &Vec3, v: &Vec3) -> f64 {
        self.conformal(q) * self.project(q, v).norm_squared()
    }

    /// Density `β = b·c` with `σ_q(v, w) = β(q)·⟨n(q), v × w⟩`.
    #[inline]
    pub fn magnetic_density(&self, q: &Vec3) -> f64 {
        self.magnetic.value(q) * self.conformal(q)
    }

    /// `σ_q(v, w) = b(q)·dA_q(v, w)`.
    pub fn magnetic_pairing(&self, q: &SurfacePoint, v: &Vec3, w: &Vec3) -> Result<f64> {
        self.check_point(q)?;
        Ok(self.magnetic_density(q) * self.normal(q).dot(&v.cross(w)))
    }

    pub fn retract(&self, q: &SurfacePoint, v: &Vec3) -> Result<SurfacePoint> {
        let v = self.project(q, v);
        let norm = self.norm_sq(q, &v).sqrt();
        if !(norm <= self.trust_radius) {
            return Err(MagflowError::StepTooLarge { norm, radius: self.trust_radius });
        }
        Ok(self.retract_unchecked(q, &v))
    }

    /// Retraction without the trust-radius test; `v` must already be tangent.
    #[inline]
    pub fn retract_unchecked(&self, q: &Vec3, v: &Vec3) -> Vec3 {
        if self.is_sphere() {
            (q + v).normalize()
        } else {
            q + v
        }
    }

    /// Great-circle distance on the sphere; on the torus the length of the
    /// straight segment in the lift, integrated against the conformal factor.
    pub fn riemannian_distance(&self, q1: &SurfacePoint, q2: &SurfacePoint) -> f64 {
        if self.is_sphere() {
            // atan2 form stays accurate for nearly equal and nearly antipodal points.
            return q1.cross(q2).norm().atan2(q1.dot(q2));
        }
        let d = q2 - q1;
        let len = d.norm();
        if self.kind == SurfaceKind::TorusFlat || len == 0.0 {
            return len;
        }
        let (nodes, weights) = crate::quad::gauss_legendre_01(8);
        nodes
            .iter()
            .zip(weights)
            .map(|(s, w)| w * self.conformal(&(q1 + d * *s)).sqrt())
            .sum::<f64>()
            * len
    }

    /// Interpolation used for every straight piece in the discretization: a
    /// segment in the lift, a normalized chord (great-circle arc) on the sphere.
    #[inline]
    pub fn interpolate(&self, a: &Vec3, b: &Vec3, s: f64) -> Vec3 {
        let m = a * (1.0 - s) + b * s;
        if self.is_sphere() {
            m.normalize()
        } else {
            m
        }
    }

    pub fn tag(&self) -> &'static str {
        self.kind.tag()
    }
}
