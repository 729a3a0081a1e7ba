use thiserror::Error;

use crate::network::QueueClass;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot schedule event at t={fire_time} before now={now}")]
    SchedulingInPast { now: f64, fire_time: f64 },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistributionParams(String),

    #[error("occupancy {0} outside (0, 1)")]
    OccupancyOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace and timed runs are mutually exclusive")]
    MutuallyExclusiveFlags,

    #[error("archetype {0} cannot be simulated directly")]
    UnsupportedArchetype(String),

    #[error("trace holds {available} completed entities, need more than {needed}")]
    InsufficientTrace { needed: usize, available: usize },

    #[error("estimates at different occupancies ({a} vs {b})")]
    MismatchedOccupancy { a: f64, b: f64 },

    #[error("design matrix is rank deficient")]
    SingularFit,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error(
        "timing unstable: replication CV {cv:.3} exceeds {max:.3}; \
         stop other workloads or raise RS_ORACLE_TIMING_CV_MAX"
    )]
    TimingUnstable { cv: f64, max: f64 },

    #[error("profile schema error: {0}")]
    ProfileSchema(String),

    #[error("profile corrupt: {0}")]
    ProfileCorrupt(String),

    #[error("profile has no models for class {0}")]
    MissingClass(QueueClass),

    #[error("invalid simplification operation: {0}")]
    InvalidOperation(String),

    #[error("no LOS model for {0}")]
    MissingLosModel(String),

    #[error("routing inconsistency: {0}")]
    RoutingInconsistency(String),

    #[error("{n} samples is below the fitting minimum of {min}")]
    FitDataTooSmall { n: usize, min: usize },

    #[error("no candidate family accepted (best p-value {best_p:.4})")]
    NoAcceptableFit { best_p: f64 },

    #[error("observed value is zero at index {0}")]
    ZeroObservation(usize),

    #[error("observed values have zero variance")]
    DegenerateVariance,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
