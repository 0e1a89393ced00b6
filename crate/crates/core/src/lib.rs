//! p-elastic gradient flow of closed planar curves kept at constant speed,
//! computed by minimizing movements and checked against a-priori certificates.

pub mod curve;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod flow;
pub mod io;
pub mod spectral;
pub mod tolerance;
pub mod vec2;

pub use curve::{ClosedCurve, ScalarField, VectorField};
pub use energy::{EnergyBreakdown, EnergyParams};
pub use error::{FlowError, Result};
pub use flow::{FlowConfig, StepRecord, Trajectory};
pub use vec2::{rotate90, Vec2};
