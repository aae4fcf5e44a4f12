use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state {0} holds no agents")]
    EmptySourceState(usize),
    #[error("source and target state are both {0}")]
    SameState(usize),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown example `{0}`")]
    UnknownExample(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("policy does not cover the horizon: control ends at {control_end}, horizon is {horizon}")]
    HorizonNotCovered { control_end: f64, horizon: f64 },
    #[error("undiscounted reward over an infinite horizon cannot be truncated")]
    InfiniteHorizonUntruncated,
    #[error("lattice with {size} points exceeds the cap of {cap}")]
    LatticeTooLarge { size: u128, cap: usize },
    #[error("infinite-horizon Bellman operator needs a positive discount rate")]
    UndiscountedInfinite,
    #[error("time step {step} too large: step * exit-rate bound = {product} > 0.5")]
    StepTooLarge { step: f64, product: f64 },
    #[error("simplex projection of {magnitude:e} at t = {time} exceeds 1e-6")]
    ProjectionTooLarge { magnitude: f64, time: f64 },
    #[error("value iteration did not converge within {0} sweeps")]
    NotConverged(usize),
    #[error("operation needs a finite horizon")]
    FiniteHorizonRequired,
    #[error("unsupported policy: {0}")]
    UnsupportedPolicy(String),
    #[error("operation only applies to the {expected} model family, got `{got}`")]
    WrongModelFamily { expected: &'static str, got: String },
    #[error("model has coupled action constraints; per-state maximisation does not apply")]
    CoupledConstraints,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable variant name, printed by the CLI on failure.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptySourceState(_) => "EmptySourceState",
            Error::SameState(_) => "SameState",
            Error::UnknownModel(_) => "UnknownModel",
            Error::UnknownExample(_) => "UnknownExample",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::InvalidMeasure(_) => "InvalidMeasure",
            Error::HorizonNotCovered { .. } => "HorizonNotCovered",
            Error::InfiniteHorizonUntruncated => "InfiniteHorizonUntruncated",
            Error::LatticeTooLarge { .. } => "LatticeTooLarge",
            Error::UndiscountedInfinite => "UndiscountedInfinite",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::ProjectionTooLarge { .. } => "ProjectionTooLarge",
            Error::NotConverged(_) => "NotConverged",
            Error::FiniteHorizonRequired => "FiniteHorizonRequired",
            Error::UnsupportedPolicy(_) => "UnsupportedPolicy",
            Error::WrongModelFamily { .. } => "WrongModelFamily",
            Error::CoupledConstraints => "CoupledConstraints",
            Error::Dimension(_) => "Dimension",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
