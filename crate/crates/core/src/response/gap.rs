//! Cost of the joint test versus the same tests run in sequence.

use super::{best_response, ManipulationPlan};
use crate::barrier::SolverOptions;
use crate::cost::CostModel;
use crate::error::{Result, ScreeningError};
use crate::geometry::{FeatureVector, HalfspaceClassifier, Mode, Pipeline};

#[derive(Debug, Clone)]
pub struct GapReport {
    pub c_conj: f64,
    pub c_seq: f64,
    /// `c_conj / c_seq`; 1 when both are zero, `+∞` when only `c_seq` is.
    pub ratio: f64,
    pub conjunction: ManipulationPlan,
    pub sequential: ManipulationPlan,
}

/// Best-response costs of one agent under both screening modes.
pub fn cost_gap(
    classifiers: &[HalfspaceClassifier],
    x0: &FeatureVector,
    cost: &CostModel,
    options: &SolverOptions,
) -> Result<GapReport> {
    let seq = Pipeline::new(classifiers.to_vec(), Mode::Sequential)?;
    let conj = seq.with_mode(Mode::Conjunction);
    let sequential = best_response(&seq, x0, cost, options)?;
    let conjunction = best_response(&conj, x0, cost, options)?;
    let (c_seq, c_conj) = (sequential.total_cost(), conjunction.total_cost());
    debug_assert!(c_conj >= c_seq - 1e-6 * c_conj.max(1.0), "conj {c_conj} < seq {c_seq}");
    let ratio = if c_seq > 0.0 {
        c_conj / c_seq
    } else if c_conj > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(GapReport {
        c_conj,
        c_seq,
        ratio,
        conjunction,
        sequential,
    })
}

/// The pair `x₁/γ + x₂ >= 1`, `x₁/γ - x₂ >= 1`: from the origin the joint
/// test costs at least `γ` while the sequence costs at most 3.
pub fn gap_instance(gamma: f64) -> Result<[HalfspaceClassifier; 2]> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(ScreeningError::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok([
        HalfspaceClassifier::from_slice(&[1.0 / gamma, 1.0], 1.0)?,
        HalfspaceClassifier::from_slice(&[1.0 / gamma, -1.0], 1.0)?,
    ])
}
