//! The conservative τ-shift defense and its audits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::SolverOptions;
use crate::cost::CostModel;
use crate::error::{Result, ScreeningError};
use crate::geometry::{self, check_dim, general_position, FeatureVector, Mode, Pipeline};
use crate::oracle::GridSpec;
use crate::response::{best_response, ManipulationPlan};

/// Budget comparisons accept costs up to `τ + BUDGET_TOL`.
pub const BUDGET_TOL: f64 = 1e-9;
/// Threshold perturbation used by the optimality spot-check.
pub const SPOT_CHECK_DELTA: f64 = 1e-2;

/// A pipeline whose normalized thresholds were raised by the budget `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefendedPipeline {
    original: Pipeline,
    shifted: Pipeline,
    tau: f64,
}

impl DefendedPipeline {
    pub fn original(&self) -> &Pipeline {
        &self.original
    }

    pub fn shifted(&self) -> &Pipeline {
        &self.shifted
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(ScreeningError::NegativeBudget(tau));
    }
    if !tau.is_finite() {
        return Err(ScreeningError::NonFinite("manipulation budget"));
    }
    Ok(())
}

/// Normalizes every classifier and shifts its threshold by `tau`.
pub fn conservative_defense(pipeline: &Pipeline, tau: f64) -> Result<DefendedPipeline> {
    check_tau(tau)?;
    let shifted = pipeline
        .classifiers()
        .iter()
        .map(|h| h.normalize().shifted(tau))
        .collect();
    Ok(DefendedPipeline {
        original: pipeline.clone(),
        shifted: Pipeline::new(shifted, pipeline.mode())?,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub tn_rate: f64,
    pub fn_rate: f64,
    pub n_agents: usize,
    pub setting: Mode,
}

/// Cheapest cost for `x` to pass `pipeline`, decided against `budget` with
/// cheap bounds first. Returns `None` when a lower bound already exceeds it.
fn cost_within(
    pipeline: &Pipeline,
    x: &FeatureVector,
    cost: &CostModel,
    budget: f64,
    options: &SolverOptions,
) -> Result<Option<ManipulationPlan>> {
    if cost.is_norm() {
        // every stop is reached from x, so each halfspace alone bounds the cost
        let lower = pipeline
            .classifiers()
            .iter()
            .map(|h| cost.halfspace_distance(h.w(), -h.margin(x)))
            .fold(0.0, f64::max);
        if lower > budget {
            return Ok(None);
        }
    }
    best_response(pipeline, x, cost, options).map(Some)
}

/// Whether the agent's best response against `pipeline` fits in `budget`.
fn accepted_within(
    pipeline: &Pipeline,
    x: &FeatureVector,
    cost: &CostModel,
    budget: f64,
    options: &SolverOptions,
) -> Result<bool> {
    Ok(cost_within(pipeline, x, cost, budget, options)?.is_some_and(|p| p.total_cost() <= budget))
}

/// Confusion rates of the defended pipeline on best-responding agents.
///
/// Ground truth is the original conjunction at the unmanipulated point; an
/// agent is accepted when its best response to the shifted pipeline (in
/// `setting`) costs at most `tau`.
pub fn evaluate(
    defended: &DefendedPipeline,
    agents: &[FeatureVector],
    tau: f64,
    cost: &CostModel,
    setting: Mode,
    options: &SolverOptions,
) -> Result<EvaluationReport> {
    check_tau(tau)?;
    if agents.is_empty() {
        return Err(ScreeningError::InvalidArgument("no agents to evaluate".into()));
    }
    cost.check_dim(defended.original.dim())?;
    let shifted = defended.shifted.with_mode(setting);
    let outcomes: Vec<(bool, bool)> = agents
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let truth = defended.original.accepts_all(x).map_err(|e| e.for_agent(i))?;
            let accepted = accepted_within(&shifted, x, cost, tau + BUDGET_TOL, options)
                .map_err(|e| e.for_agent(i))?;
            Ok((truth, accepted))
        })
        .collect::<Result<_>>()?;
    let n = agents.len();
    let count = |t: bool, a: bool| outcomes.iter().filter(|o| **o == (t, a)).count();
    let rate = |c: usize| c as f64 / n as f64;
    Ok(EvaluationReport {
        tp_rate: rate(count(true, true)),
        fp_rate: rate(count(false, true)),
        tn_rate: rate(count(false, false)),
        fn_rate: rate(count(true, false)),
        n_agents: n,
        setting,
    })
}

/// An unqualified agent that passes the defended pipeline within budget.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub agent: FeatureVector,
    pub setting: Mode,
    pub plan: ManipulationPlan,
}

#[derive(Debug, Clone)]
pub enum AuditOutcome {
    Pass { agents_checked: usize },
    Counterexample(Box<Counterexample>),
}

impl AuditOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, AuditOutcome::Pass { .. })
    }
}

/// Slack below `τ` required before a computed cost counts as a violation,
/// covering the solver tolerance.
fn audit_slack(tau: f64, options: &SolverOptions) -> f64 {
    options.tol.max(1e-9) * tau.max(1.0)
}

/// Sweeps every unqualified grid node and looks for one whose best response
/// to the shifted pipeline, in either setting, stays within the budget.
pub fn zero_fp_audit(
    defended: &DefendedPipeline,
    tau: f64,
    cost: &CostModel,
    grid: &GridSpec,
    options: &SolverOptions,
) -> Result<AuditOutcome> {
    check_tau(tau)?;
    grid.validate()?;
    check_dim(2, defended.original.dim())?;
    check_dim(2, grid.dim())?;
    cost.check_dim(2)?;
    let budget = tau - audit_slack(tau, options);
    if budget < 0.0 {
        return Ok(AuditOutcome::Pass { agents_checked: 0 });
    }
    let steps = grid.steps();
    let agents: Vec<FeatureVector> = (0..=steps[1])
        .flat_map(|j| (0..=steps[0]).map(move |i| (i, j)))
        .map(|(i, j)| {
            FeatureVector::from_vec(vec![
                grid.lower[0] + i as f64 * grid.resolution,
                grid.lower[1] + j as f64 * grid.resolution,
            ])
        })
        .filter(|x| !defended.original.classifiers().iter().all(|h| h.accepts(x)))
        .collect();

    for setting in [Mode::Sequential, Mode::Conjunction] {
        let shifted = defended.shifted.with_mode(setting);
        // the first violating node in row-major order, if any
        let found = agents
            .par_iter()
            .enumerate()
            .map(|(i, x)| -> Result<Option<(usize, ManipulationPlan)>> {
                let plan = cost_within(&shifted, x, cost, budget, options).map_err(|e| e.for_agent(i))?;
                Ok(plan.filter(|p| p.total_cost() <= budget).map(|p| (i, p)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .next();
        if let Some((i, plan)) = found {
            return Ok(AuditOutcome::Counterexample(Box::new(Counterexample {
                agent: agents[i].clone(),
                setting,
                plan,
            })));
        }
    }
    Ok(AuditOutcome::Pass {
        agents_checked: agents.len(),
    })
}

/// Result of lowering one shifted threshold by `δ`.
#[derive(Debug, Clone)]
pub struct FaceCheck {
    pub classifier: usize,
    /// Unqualified agent placed just outside the original boundary, below the face.
    pub agent: FeatureVector,
    /// Its best-response cost against the weakened pipeline.
    pub cost: f64,
    /// Whether the weakened pipeline admits it within budget.
    pub violated: bool,
}

/// Checks that the shift cannot be relaxed on any face: lowering shifted
/// threshold `i` by `delta` lets an unqualified agent through.
///
/// Only meaningful when the classifiers are in general position; returns
/// `Ok(None)` otherwise.
pub fn optimality_spot_check(
    defended: &DefendedPipeline,
    cost: &CostModel,
    setting: Mode,
    delta: f64,
    options: &SolverOptions,
) -> Result<Option<Vec<FaceCheck>>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(ScreeningError::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    if !general_position(defended.original.classifiers())? {
        return Ok(None);
    }
    let tau = defended.tau;
    let shifted = defended.shifted.classifiers();
    let mut checks = Vec::with_capacity(shifted.len());
    for i in 0..shifted.len() {
        let (face, _) = geometry::face_interior_point(shifted, i).ok_or(ScreeningError::InfeasibleRegion)?;
        let w = shifted[i].w();
        // fails the original test i by delta/2, everything else as at the face
        let agent = &face - w * (tau + delta / 2.0);
        let weakened: Vec<_> = shifted
            .iter()
            .enumerate()
            .map(|(j, h)| if j == i { h.shifted(-delta) } else { h.clone() })
            .collect();
        let weakened = Pipeline::new(weakened, setting)?;
        let plan = best_response(&weakened, &agent, cost, options)?;
        let unqualified = !defended.original.accepts_all(&agent)?;
        checks.push(FaceCheck {
            classifier: i,
            cost: plan.total_cost(),
            violated: unqualified && plan.total_cost() <= tau + BUDGET_TOL,
            agent,
        });
    }
    Ok(Some(checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{feature_vector, HalfspaceClassifier};

    fn h(w: &[f64], b: f64) -> HalfspaceClassifier {
        HalfspaceClassifier::from_slice(w, b).unwrap()
    }

    fn example1() -> Pipeline {
        Pipeline::new(vec![h(&[-3.0, 4.0], 1.0), h(&[1.0, 0.0], 1.0)], Mode::Sequential).unwrap()
    }

    #[test]
    fn shift_examples() {
        let p = Pipeline::new(vec![h(&[1.0, 0.0], 1.0)], Mode::Sequential).unwrap();
        let d = conservative_defense(&p, 0.5).unwrap();
        assert!((d.shifted().classifiers()[0].b() - 1.5).abs() < 1e-15);
        assert_eq!(conservative_defense(&p, 0.0).unwrap().shifted(), &p);

        let d = conservative_defense(&example1(), 0.3).unwrap();
        let s = d.shifted().classifiers();
        assert!((s[0].w()[0] + 0.6).abs() < 1e-15 && (s[0].w()[1] - 0.8).abs() < 1e-15);
        assert!((s[0].b() - 0.5).abs() < 1e-15);
        assert!((s[1].b() - 1.3).abs() < 1e-15);
        assert_eq!(d.shifted().mode(), Mode::Sequential);
        assert!(matches!(conservative_defense(&p, -0.1), Err(ScreeningError::NegativeBudget(_))));
    }

    #[test]
    fn deep_agent_is_a_true_positive() {
        let d = conservative_defense(&example1(), 0.5).unwrap();
        let agents = vec![feature_vector(&[5.0, 6.0]).unwrap()];
        let r = evaluate(&d, &agents, 0.5, &CostModel::L2, Mode::Sequential, &SolverOptions::default()).unwrap();
        assert_eq!(r.tp_rate, 1.0);
    }

    #[test]
    fn audit_passes_and_catches_under_shift() {
        let opts = SolverOptions::default();
        let grid = GridSpec::cube(2, -2.0, 3.0, 0.05).unwrap();
        let d = conservative_defense(&example1(), 0.5).unwrap();
        assert!(zero_fp_audit(&d, 0.5, &CostModel::L2, &grid, &opts).unwrap().passed());

        let weak = conservative_defense(&example1(), 0.25).unwrap();
        let out = zero_fp_audit(&weak, 0.5, &CostModel::L2, &grid, &opts).unwrap();
        match out {
            AuditOutcome::Counterexample(c) => {
                assert!(!example1().accepts_all(&c.agent).unwrap());
                assert!(c.plan.total_cost() <= 0.5);
            }
            AuditOutcome::Pass { .. } => panic!("under-shifted pipeline passed"),
        }

        let none = conservative_defense(&example1(), 0.0).unwrap();
        assert!(zero_fp_audit(&none, 0.0, &CostModel::L2, &grid, &opts).unwrap().passed());
    }

    #[test]
    fn spot_check_finds_a_violation_on_every_face() {
        let d = conservative_defense(&example1(), 0.5).unwrap();
        for setting in [Mode::Sequential, Mode::Conjunction] {
            let checks = optimality_spot_check(&d, &CostModel::L2, setting, SPOT_CHECK_DELTA, &SolverOptions::default())
                .unwrap()
                .unwrap();
            assert_eq!(checks.len(), 2);
            assert!(checks.iter().all(|c| c.violated), "{checks:?}");
        }
    }

    #[test]
    fn spot_check_is_gated_on_general_position() {
        // the second classifier is implied by the first
        let p = Pipeline::new(vec![h(&[1.0, 0.0], 2.0), h(&[1.0, 0.0], 1.0)], Mode::Sequential).unwrap();
        let d = conservative_defense(&p, 0.5).unwrap();
        let out = optimality_spot_check(&d, &CostModel::L2, Mode::Sequential, 0.01, &SolverOptions::default()).unwrap();
        assert!(out.is_none());
    }
}
