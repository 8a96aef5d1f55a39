//! Run configuration: a TOML file with one table per pipeline.
//!
//! Parse errors from the `toml` crate already carry line, column and key.
//! Checks that need more than one value go through [`ConfigError::at`], which
//! resolves a span back to a line.

use serde::{Deserialize, Deserializer};
use std::fmt;
use std::ops::Range;
use toml::Spanned;

use magflow_core::{Field, ModelSurface, SurfaceKind, TonelliSystem};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    /// Error pinned to the line holding `span` in `text`.
    pub fn at(text: &str, span: Range<usize>, field: &str, msg: impl fmt::Display) -> Self {
        let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
        ConfigError(format!("line {line}, field `{field}`: {msg}"))
    }
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("must be positive and finite, got {v}")))
    }
}

fn positive_opt<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    positive(d).map(Some)
}

fn finite<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(serde::de::Error::custom("must be finite"))
    }
}

fn field_spec<'de, D: Deserializer<'de>>(d: D) -> Result<Field, D::Error> {
    let s = String::deserialize(d)?;
    Field::parse(&s).map_err(serde::de::Error::custom)
}

fn surface_kind<'de, D: Deserializer<'de>>(d: D) -> Result<SurfaceKind, D::Error> {
    let s = String::deserialize(d)?;
    SurfaceKind::from_tag(&s).map_err(serde::de::Error::custom)
}

fn at_least_4<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
    let v = usize::deserialize(d)?;
    if v >= 4 {
        Ok(v)
    } else {
        Err(serde::de::Error::custom(format!("must be at least 4, got {v}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceSection,
    pub seed: Option<u64>,
    pub integrate: Option<IntegrateSection>,
    pub find_orbit: Option<FindOrbitSection>,
    pub scan: Option<ScanSection>,
    pub displace: Option<DisplaceSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    #[serde(deserialize_with = "surface_kind")]
    pub kind: SurfaceKind,
    /// Conformal exponent, `torus_conformal` only.
    #[serde(default = "zero_field", deserialize_with = "field_spec")]
    pub lambda: Field,
    #[serde(deserialize_with = "field_spec")]
    pub magnetic: Field,
    #[serde(default = "zero_field", deserialize_with = "field_spec")]
    pub potential: Field,
}

fn zero_field() -> Field {
    Field::Constant(0.0)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateSection {
    pub q0: Spanned<Vec<f64>>,
    pub p0: Spanned<Vec<f64>>,
    #[serde(deserialize_with = "finite")]
    pub t_end: f64,
    #[serde(default = "default_ode_tol", deserialize_with = "positive")]
    pub tol: f64,
}

fn default_ode_tol() -> f64 {
    1e-10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindOrbitSection {
    pub k: Spanned<f64>,
    /// Loop JSON to flow from; without it the minimax class is used.
    pub initial: Option<String>,
    #[serde(default = "default_samples", deserialize_with = "at_least_4")]
    pub samples: usize,
    #[serde(default = "default_members", deserialize_with = "at_least_4")]
    pub members: usize,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub minimax: MinimaxSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub interval: Spanned<[f64; 2]>,
    pub n_grid: Spanned<usize>,
    #[serde(default = "default_samples", deserialize_with = "at_least_4")]
    pub samples: usize,
    #[serde(default = "default_members", deserialize_with = "at_least_4")]
    pub members: usize,
    #[serde(default = "default_probes")]
    pub n_probe: usize,
    #[serde(default, deserialize_with = "positive_opt")]
    pub delta: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub slope_factor: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub t_min: Option<f64>,
    #[serde(default)]
    pub minimax: MinimaxSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_samples() -> usize {
    256
}

fn default_members() -> usize {
    64
}

fn default_probes() -> usize {
    200
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default, deserialize_with = "positive_opt")]
    pub r_max: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub tol_vanish: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub step_tol: Option<f64>,
    pub truncated: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxSection {
    pub max_sweeps: Option<usize>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub flow_quantum: Option<f64>,
    pub max_members: Option<usize>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub stab_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, deserialize_with = "positive_opt")]
    pub residual: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub closing: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub energy: Option<f64>,
    #[serde(default, deserialize_with = "positive_opt")]
    pub ode_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplaceSection {
    #[serde(deserialize_with = "finite")]
    pub k: f64,
    #[serde(deserialize_with = "field_spec")]
    pub f: Field,
    #[serde(default = "default_displace_samples")]
    pub samples: usize,
}

fn default_displace_samples() -> usize {
    10_000
}

impl MinimaxSection {
    pub fn apply(&self, b: &mut magflow_core::minimax::MinimaxBudget) {
        if let Some(v) = self.max_sweeps {
            b.max_sweeps = v;
        }
        if let Some(v) = self.flow_quantum {
            b.flow_quantum = v;
        }
        if let Some(v) = self.max_members {
            b.max_members = v;
        }
        if let Some(v) = self.stab_tol {
            b.stab_tol = v;
        }
    }
}

impl VerifySection {
    pub fn apply(&self, t: &mut magflow_core::minimax::VerifyTolerances) {
        if let Some(v) = self.residual {
            t.residual = v;
        }
        if let Some(v) = self.closing {
            t.closing = v;
        }
        if let Some(v) = self.energy {
            t.energy = v;
        }
        if let Some(v) = self.ode_tol {
            t.ode_tol = v;
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string().trim_end().to_string()))
    }

    pub fn system(&self) -> Result<TonelliSystem, ConfigError> {
        let s = &self.surface;
        let surface = ModelSurface::new(s.kind, s.lambda, s.magnetic)
            .map_err(|e| ConfigError(format!("[surface]: {e}")))?;
        TonelliSystem::new(surface, s.potential).map_err(|e| ConfigError(format!("[surface]: {e}")))
    }
}
