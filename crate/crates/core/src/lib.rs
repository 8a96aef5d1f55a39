//! Contractible periodic orbits of magnetic Tonelli systems on the torus and
//! the round sphere, found as zeros of the free-period action 1-form and
//! verified by integrating the twisted Hamiltonian flow.

// `!(x > 0.0)` is how NaN gets rejected alongside the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod displacement;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod gradientflow;
pub mod io;
pub mod loopspace;
pub mod minimax;
pub mod quad;

pub use dynamics::{PhasePoint, TangentPoint, TonelliSystem, Trajectory};
pub use error::{MagflowError, Result};
pub use geometry::{Field, ModelSurface, SurfaceKind, SurfacePoint, Vec3};
pub use loopspace::{DiscreteLoop, LoopPath, LoopTangent};
