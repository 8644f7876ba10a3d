use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid test statistics (tau1={tau1}, tau0={tau0}): {reason}")]
    InvalidTest {
        tau1: f64,
        tau0: f64,
        reason: &'static str,
    },
    #[error("invalid stage policy (pi1={pi1}, pi0={pi0}): probabilities must lie in [0,1]")]
    InvalidStagePolicy { pi1: f64, pi0: f64 },
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("group {group} stage {stage}: test (tau1={tau1}, tau0={tau0}) is not minimally effective")]
    NotEffective {
        group: String,
        stage: usize,
        tau1: f64,
        tau0: f64,
    },
    #[error("{what}: {required:.0} exceeds budget {budget}")]
    SizeLimit {
        what: &'static str,
        required: f64,
        budget: u64,
    },
    #[error("eps must lie in (0,1), got {0}")]
    InvalidEps(f64),
    #[error("alpha must lie in [0,1], got {0}")]
    InvalidAlpha(f64),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("objective {objective} is not supported by {solver}")]
    IncompatibleObjective {
        objective: String,
        solver: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
