use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // panel data
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: outcome `{value}` is not a nonnegative integer")]
    NonIntegerOutcome { row: usize, value: String },
    #[error("row {row}: randomization probability {value} outside (0,1) or arm probabilities sum to >= 1")]
    ProbabilityOutOfRange { row: usize, value: f64 },
    #[error("duplicate decision point (participant={participant}, t={t})")]
    DuplicateDecisionPoint { participant: String, t: u32 },
    #[error("row {row}: {message}")]
    InvalidRecord { row: usize, message: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{feature}` lags before the first decision point and has no declared initial value")]
    LagBeforeStart { feature: String },
    #[error("dataset is empty")]
    EmptyDataset,

    // nuisance
    #[error("IRLS diverged: {0}")]
    IrlsDiverged(String),
    #[error("separation detected: {0:.0}% of fitted probabilities pinned at the clip bounds")]
    SeparationDetected(f64),
    #[error("no available records with arm {0}")]
    NoRecordsForArm(usize),
    #[error("known randomization probabilities requested but the dataset has none")]
    MissingKnownProbabilities,
    #[error("arm {0} is never observed among available records")]
    DegenerateArm(usize),
    #[error("nuisance values missing: {0}")]
    MissingNuisance(String),
    #[error("invalid nuisance model file: {0}")]
    InvalidModelFile(String),

    // estimation
    #[error("control design is rank deficient")]
    RankDeficientControls,
    #[error("solver did not converge: final score norm {norm:.3e} at {iterate:?}")]
    NoConvergence { norm: f64, iterate: Vec<f64> },
    #[error("bread matrix is singular")]
    SingularBread,
    #[error("covariance has a negative eigenvalue {0:.3e}")]
    NotPositiveSemidefinite(f64),
    #[error("estimator {estimator} does not support {reason}")]
    Unsupported { estimator: String, reason: String },

    // simulation / config
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {0} replicates failed")]
    AllReplicatesFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed user input (files, flags, configs)
    /// rather than a numerical failure during estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::NonIntegerOutcome { .. }
                | Error::ProbabilityOutOfRange { .. }
                | Error::DuplicateDecisionPoint { .. }
                | Error::InvalidRecord { .. }
                | Error::UnknownFeature(_)
                | Error::LagBeforeStart { .. }
                | Error::EmptyDataset
                | Error::MissingKnownProbabilities
                | Error::InvalidModelFile(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
