//! Multi-point optimal and precise array response control (OPARC).
//!
//! The crate assigns virtual interferences to a normalized covariance matrix so
//! that the beampattern reaches prescribed levels at several angles per step
//! while the array gain stays maximal. On top of that engine it provides
//! beampattern synthesis, multi-constraint adaptive beamforming with
//! normalized covariance loading, and two-stage quiescent pattern control.
//!
//! Angles are degrees and levels are dB at every public boundary unless a
//! function name says otherwise (`*_linear`). Internally levels are linear
//! power ratios.

pub mod adaptive;
pub mod array;
pub mod cadmm;
pub mod error;
pub mod iterative;
pub mod kernel;
pub mod linalg;
pub mod multipoint;
pub mod quiescent;
pub mod scenario;
pub mod synthesis;
pub mod vcm;

pub use array::{AngleGrid, ArrayGeometry, BeamWeight, ElementPattern, Steering};
pub use cadmm::{CadmmConfig, ConsensusState, RealQcqp};
pub use error::{OparcError, Result};
pub use iterative::{IterativeConfig, MultiPointResult};
pub use kernel::ControlTask;
pub use multipoint::{Solver, StepOutcome};
pub use scenario::{ControlMetrics, Interference, RunReport, Scenario};
pub use synthesis::{DesiredPattern, MainlobeTemplate, Sector, SidelobeSector, SynthesisConfig, SynthesisOutcome, SynthesisResult};
pub use adaptive::{ConstraintSpec, CovarianceEstimate, ProjectedSteering, QcmvResult};
pub use quiescent::{PersistedDesign, QuiescentDesign};
pub use vcm::{BlockAssignment, LedgerEntry, Vcm};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Linear power ratio to dB.
pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// dB to linear power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
