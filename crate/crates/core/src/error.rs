use thiserror::Error;

pub type Result<T> = std::result::Result<T, OparcError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OparcError {
    #[error("angle {0} deg outside [-90, 90]")]
    AngleDomain(f64),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid angle grid: {0}")]
    Grid(String),
    #[error("beam response at the beam axis is zero")]
    DegenerateBeam,
    #[error("matrix is not Hermitian positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("steering matrix is rank deficient (relative smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("capacitance matrix of the block update is singular")]
    UpdateSingular,
    #[error("h-to-INR map is singular at component {0}")]
    BijectionSingular(usize),
    #[error("recovered INR {index} has imaginary residue {residue:e}")]
    InrConsistency { index: usize, residue: f64 },
    #[error("level {level_db:.3} dB at {theta_deg} deg is unreachable with a real INR")]
    InfeasibleLevel { theta_deg: f64, level_db: f64 },
    #[error("control angle {0} deg is indistinguishable from the beam axis")]
    DegenerateGeometry(f64),
    #[error("invalid control task: {0}")]
    InvalidTask(String),
    #[error("{requested} constrained points exceed the {available} available degrees of freedom")]
    DegreesOfFreedom { requested: usize, available: usize },
    #[error("solver settled with {achieved_db:.3} dB at {theta_deg} deg against {target_db:.3} dB")]
    LevelsNotMet { theta_deg: f64, achieved_db: f64, target_db: f64 },
    #[error("QCQP-1 projection has no feasible point")]
    ProjectionInfeasible,
    /// A solver stopped early; `trace` holds the per-iteration residual
    /// (β_MAX per sweep or δ_MAX per ADMM iteration) recorded so far.
    #[error("solver aborted at {stage} after {} recorded iterations: {source}", trace.len())]
    Aborted {
        stage: String,
        trace: Vec<f64>,
        #[source]
        source: Box<OparcError>,
    },
    #[error("design fingerprint {design} does not match live geometry {live}")]
    FingerprintMismatch { design: String, live: String },
    #[error("interference count {j_r} must be below the element count {n}")]
    InterferenceCount { j_r: usize, n: usize },
    #[error("sampled patterns do not share a grid: {0}")]
    GridMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
