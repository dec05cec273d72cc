//! Strategic manipulation against screening pipelines of linear classifiers.
//!
//! An agent facing `k` halfspace tests either has to satisfy all of them at
//! once (conjunction) or one after the other (sequential pipeline). The
//! sequential setting lets an agent "zig-zag": pass a test, then abandon it
//! while moving toward the next one. This crate computes optimal manipulation
//! plans in both settings, certifies them, and evaluates the conservative
//! threshold-shift defense.

pub mod barrier;
pub mod cost;
pub mod defense;
pub mod error;
pub mod geometry;
pub mod oracle;
pub mod population;
mod polyhedron;
pub mod response;
pub mod scenario_io;

pub use barrier::SolverOptions;
pub use cost::{CostModel, QuadraticForm};
pub use error::{Result, ScreeningError, SolverFailure};
pub use geometry::{
    angle_between, feature_vector, general_position, homogenize, FeatureVector,
    HalfspaceClassifier, Mode, Pipeline, BOUNDARY_TOL, PARALLEL_TOL,
};
pub use response::{best_response, ManipulationPlan, Method, RegionLabel};
