//! Best responses of a strategic agent to a pipeline.

mod closed_form;
mod gap;
mod kkt;
mod solver;

pub use closed_form::{
    classify_region, conjunction_closed_form_2d, sequential_closed_form_2d,
    sequential_closed_form_with_region, RegionLabel,
};
pub use gap::{cost_gap, gap_instance, GapReport};
pub use kkt::{kkt_check, KktCertificate, CERTIFICATE_TOL};
pub use solver::{conjunction_response, sequential_response};

use serde::{Deserialize, Serialize};

use crate::barrier::SolverOptions;
use crate::cost::CostModel;
use crate::error::{Result, ScreeningError};
use crate::geometry::{FeatureVector, Mode, Pipeline, PARALLEL_TOL};

/// How a plan was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ClosedForm2D,
    ConvexSolver,
    Oracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedForm2D => "ClosedForm2D",
            Method::ConvexSolver => "ConvexSolver",
            Method::Oracle => "Oracle",
        }
    }
}

/// A manipulation path with its per-leg costs.
///
/// Sequential plans hold `x⁽⁰⁾ … x⁽ᵏ⁾`, conjunction plans hold `[x, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationPlan {
    path: Vec<FeatureVector>,
    leg_costs: Vec<f64>,
    total_cost: f64,
    method: Method,
    certificate: Option<KktCertificate>,
}

impl ManipulationPlan {
    /// Builds a plan, pricing each leg of `path` with `cost`.
    pub fn from_path(path: Vec<FeatureVector>, cost: &CostModel, method: Method) -> Self {
        let leg_costs: Vec<f64> = path.windows(2).map(|p| cost.cost(&p[0], &p[1])).collect();
        let total_cost = leg_costs.iter().sum();
        Self {
            path,
            leg_costs,
            total_cost,
            method,
            certificate: None,
        }
    }

    /// Reassembles a stored plan, checking that the parts agree.
    pub fn from_parts(
        path: Vec<FeatureVector>,
        leg_costs: Vec<f64>,
        total_cost: f64,
        method: Method,
        certificate: Option<KktCertificate>,
    ) -> Result<Self> {
        if path.len() < 2 || leg_costs.len() + 1 != path.len() {
            return Err(ScreeningError::InvalidArgument(format!(
                "plan with {} points needs {} leg costs, got {}",
                path.len(),
                path.len().saturating_sub(1),
                leg_costs.len()
            )));
        }
        let d = path[0].len();
        if path.iter().any(|p| p.len() != d) {
            return Err(ScreeningError::InvalidArgument("plan points differ in dimension".into()));
        }
        let sum: f64 = leg_costs.iter().sum();
        if (sum - total_cost).abs() > 1e-9 * total_cost.abs().max(1.0) {
            return Err(ScreeningError::InvalidArgument(format!(
                "total cost {total_cost} differs from the sum of legs {sum}"
            )));
        }
        Ok(Self {
            path,
            leg_costs,
            total_cost,
            method,
            certificate,
        })
    }

    pub fn path(&self) -> &[FeatureVector] {
        &self.path
    }

    pub fn leg_costs(&self) -> &[f64] {
        &self.leg_costs
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn certificate(&self) -> Option<&KktCertificate> {
        self.certificate.as_ref()
    }

    pub fn start(&self) -> &FeatureVector {
        &self.path[0]
    }

    /// Final position, the point the last classifier sees.
    pub fn end(&self) -> &FeatureVector {
        self.path.last().expect("plans have at least two points")
    }

    pub(crate) fn with_certificate(mut self, certificate: Option<KktCertificate>) -> Self {
        self.certificate = certificate;
        self
    }
}

/// Best response to `pipeline` in its own mode.
///
/// Two non-parallel classifiers in the plane under ℓ₂ cost use the closed
/// forms; everything else goes through the convex solver. ℓ₂ plans carry a
/// KKT certificate.
pub fn best_response(
    pipeline: &Pipeline,
    x: &FeatureVector,
    cost: &CostModel,
    options: &SolverOptions,
) -> Result<ManipulationPlan> {
    crate::geometry::check_dim(pipeline.dim(), x.len())?;
    cost.check_dim(pipeline.dim())?;
    if let Some(plan) = planar_closed_form(pipeline, x, cost)? {
        let certificate = kkt_check(&plan, pipeline).ok();
        return Ok(plan.with_certificate(certificate));
    }
    match pipeline.mode() {
        Mode::Sequential => sequential_response(pipeline, x, cost, options),
        Mode::Conjunction => conjunction_response(pipeline, x, cost, options),
    }
}

fn planar_closed_form(
    pipeline: &Pipeline,
    x: &FeatureVector,
    cost: &CostModel,
) -> Result<Option<ManipulationPlan>> {
    if pipeline.dim() != 2 || pipeline.len() != 2 || *cost != CostModel::L2 {
        return Ok(None);
    }
    let h = pipeline.classifiers();
    let (u1, u2) = (h[0].normalize(), h[1].normalize());
    if (1.0 - u1.w().dot(u2.w()).abs()) <= PARALLEL_TOL {
        return Ok(None);
    }
    let plan = match pipeline.mode() {
        Mode::Sequential => sequential_closed_form_2d(&h[0], &h[1], x)?,
        Mode::Conjunction => conjunction_closed_form_2d(&h[0], &h[1], x)?,
    };
    Ok(Some(plan))
}
