use thiserror::Error;

use crate::geometry::FeatureVector;

/// Diagnostics attached to a solver run that stopped before meeting its
/// termination test.
#[derive(Debug, Clone)]
pub struct SolverFailure {
    /// Best feasible iterate seen, stage by stage (`x⁽⁰⁾ … x⁽ᵏ⁾` or `[x, z]`).
    pub best_path: Vec<FeatureVector>,
    /// True (unsmoothed) cost of `best_path`.
    pub best_cost: f64,
    /// Smoothing level of the stage that failed.
    pub mu: f64,
    /// Newton iterations spent in the failing stage.
    pub iterations: usize,
    /// Last objective change observed.
    pub objective_change: f64,
    /// Largest constraint violation of `best_path`.
    pub constraint_violation: f64,
}

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature vectors must have at least one coordinate")]
    EmptyVector,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("classifier normal has zero length")]
    ZeroNormal,

    #[error("classifier normal is not unit length (|w| = {0})")]
    NotNormalized(f64),

    #[error("classifier threshold must be zero after homogenization (b = {0})")]
    NotHomogeneous(f64),

    #[error("classifiers are parallel (|w1·w2| = {0})")]
    ParallelClassifiers(f64),

    #[error("pipeline must contain at least one classifier")]
    EmptyPipeline,

    #[error("the joint acceptance region is empty")]
    InfeasibleRegion,

    #[error("the joint acceptance region has no interior")]
    DegenerateRegion,

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("solver did not converge at mu = {}: best cost {} (violation {:e})", .0.mu, .0.best_cost, .0.constraint_violation)]
    SolverDidNotConverge(Box<SolverFailure>),

    #[error("plan is infeasible: {0}")]
    InfeasiblePlan(String),

    #[error("manipulation budget must be non-negative (got {0})")]
    NegativeBudget(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("oracle grid has no feasible node for stage {stage}")]
    GridTooCoarse { stage: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("agent {index}: {source}")]
    Agent {
        index: usize,
        #[source]
        source: Box<ScreeningError>,
    },
}

impl ScreeningError {
    pub(crate) fn for_agent(self, index: usize) -> Self {
        ScreeningError::Agent {
            index,
            source: Box::new(self),
        }
    }

    /// Strips agent wrappers and reports whether the root cause is a solver
    /// convergence failure.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            ScreeningError::SolverDidNotConverge(_) => true,
            ScreeningError::Agent { source, .. } => source.is_non_convergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ScreeningError>;
