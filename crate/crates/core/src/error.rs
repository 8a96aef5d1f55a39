use thiserror::Error;

/// Everything that can go wrong inside the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagflowError {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("retraction step {norm:.3e} exceeds trust radius {radius}")]
    StepTooLarge { norm: f64, radius: f64 },
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    Stiffness { t: f64, h: f64 },
    #[error("non-finite state at t = {t}")]
    Divergence { t: f64 },
    #[error("loop length {length} is not below the short-loop threshold {delta}")]
    OutsideShortLoops { length: f64, delta: f64 },
    #[error("capping cone is degenerate: {0}")]
    DegenerateCap(String),
    #[error("path segment {segment} moves a sample by {step}, above the bound {bound}; refine the path")]
    RefinePath { segment: usize, step: f64, bound: f64 },
    #[error("loop is not contractible (lift shift {0:?})")]
    NotContractible([i32; 2]),
    #[error("cannot construct minimax class: {0}")]
    ClassConstruction(String),
    #[error("orbit refinement failed: {0}")]
    RefinementFailed(String),
    #[error("energy level {k} lies below min H = {min_h}")]
    EmptyLevel { k: f64, min_h: f64 },
    #[error("f has a critical point over the projected sublevel (|df| = {0:.3e})")]
    NotDisplaceable(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, MagflowError>;
