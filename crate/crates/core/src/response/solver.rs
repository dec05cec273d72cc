//! Best responses in any dimension through the barrier continuation.

use std::ops::{AddAssign, SubAssign};

use nalgebra::{DMatrix, DVector};

use super::{kkt_check, ManipulationPlan, Method};
use crate::barrier::{self, BarrierFailure, SmoothObjective, SolverOptions};
use crate::cost::CostModel;
use crate::error::{Result, ScreeningError, SolverFailure};
use crate::geometry::{check_dim, project_onto, FeatureVector, Mode, Pipeline, BOUNDARY_TOL};
use crate::polyhedron::{self, Projection};

/// Legs shorter than this (relative to the problem scale) are treated as stays.
const SNAP_TOL: f64 = 1e-9;

/// `Σ φ(x_i - x_{i-1})` over the stacked stops `y = (x_1, …, x_k)`.
struct ChainObjective<'a> {
    x0: &'a FeatureVector,
    k: usize,
    d: usize,
    cost: &'a CostModel,
}

impl ChainObjective<'_> {
    fn stop(&self, y: &DVector<f64>, i: usize) -> FeatureVector {
        if i == 0 {
            self.x0.clone()
        } else {
            y.rows((i - 1) * self.d, self.d).into_owned()
        }
    }

    fn leg(&self, y: &DVector<f64>, i: usize) -> DVector<f64> {
        self.stop(y, i) - self.stop(y, i - 1)
    }
}

impl SmoothObjective for ChainObjective<'_> {
    fn value(&self, y: &DVector<f64>, mu: f64) -> f64 {
        (1..=self.k).map(|i| self.cost.smoothed(&self.leg(y, i), mu).0).sum()
    }

    fn derivatives(&self, y: &DVector<f64>, mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let (k, d) = (self.k, self.d);
        let mut g = DVector::zeros(k * d);
        let mut h = DMatrix::zeros(k * d, k * d);
        // leg i depends on +x_i and -x_{i-1}; stop i lives in block i-1
        for i in 1..=k {
            let (_, gi, hi) = self.cost.smoothed(&self.leg(y, i), mu);
            let cur = (i - 1) * d;
            g.rows_mut(cur, d).add_assign(&gi);
            h.view_mut((cur, cur), (d, d)).add_assign(&hi);
            if i >= 2 {
                let prev = (i - 2) * d;
                g.rows_mut(prev, d).sub_assign(&gi);
                h.view_mut((prev, prev), (d, d)).add_assign(&hi);
                h.view_mut((cur, prev), (d, d)).sub_assign(&hi);
                h.view_mut((prev, cur), (d, d)).sub_assign(&hi);
            }
        }
        (g, h)
    }

    fn true_value(&self, y: &DVector<f64>) -> f64 {
        (1..=self.k).map(|i| self.cost.of_displacement(&self.leg(y, i))).sum()
    }
}

fn validate(pipeline: &Pipeline, x: &FeatureVector, cost: &CostModel) -> Result<()> {
    check_dim(pipeline.dim(), x.len())?;
    cost.check_dim(pipeline.dim())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ScreeningError::NonFinite("agent features"));
    }
    Ok(())
}

fn stationary_plan(x: &FeatureVector, stops: usize, cost: &CostModel) -> ManipulationPlan {
    ManipulationPlan::from_path(vec![x.clone(); stops + 1], cost, Method::ConvexSolver)
}

fn certify(plan: ManipulationPlan, pipeline: &Pipeline, cost: &CostModel) -> ManipulationPlan {
    if *cost == CostModel::L2 {
        let certificate = kkt_check(&plan, pipeline).ok();
        plan.with_certificate(certificate)
    } else {
        plan
    }
}

/// Exact cost-minimizing projection for ℓ₂ and quadratic costs, when the
/// active-set enumeration is small enough.
fn exact_projection(
    x: &FeatureVector,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    cost: &CostModel,
) -> Option<Result<FeatureVector>> {
    let found = match cost {
        CostModel::L2 => polyhedron::project(x, a, c),
        CostModel::Quadratic(q) => {
            // z = x + L⁻ᵀu turns the cost into ‖u‖²
            let l = q.factor();
            let lt_inv = l.transpose().try_inverse()?;
            let au = a * &lt_inv;
            let cu = c - a * x;
            match polyhedron::project(&DVector::zeros(x.len()), &au, &cu) {
                Projection::Point(u) => Projection::Point(x + lt_inv * u),
                other => other,
            }
        }
        _ => return None,
    };
    match found {
        Projection::Point(z) => Some(Ok(z)),
        Projection::Infeasible => Some(Err(ScreeningError::InfeasibleRegion)),
        Projection::TooLarge => None,
    }
}

fn failure(
    objective: &ChainObjective<'_>,
    pipeline: &Pipeline,
    mode: Mode,
    err: BarrierFailure,
) -> ScreeningError {
    let path: Vec<FeatureVector> = (0..=objective.k).map(|i| objective.stop(&err.best, i)).collect();
    let h = pipeline.classifiers();
    let violation = match mode {
        Mode::Sequential => h
            .iter()
            .zip(&path[1..])
            .map(|(h, x)| (-h.margin(x)).max(0.0))
            .fold(0.0, f64::max),
        Mode::Conjunction => h.iter().map(|h| (-h.margin(&path[1])).max(0.0)).fold(0.0, f64::max),
    };
    ScreeningError::SolverDidNotConverge(Box::new(SolverFailure {
        best_path: path,
        best_cost: err.best_true,
        mu: err.mu,
        iterations: err.iterations,
        objective_change: err.objective_change,
        constraint_violation: violation,
    }))
}

/// Cheapest single move into the joint accept set.
pub fn conjunction_response(
    pipeline: &Pipeline,
    x: &FeatureVector,
    cost: &CostModel,
    options: &SolverOptions,
) -> Result<ManipulationPlan> {
    validate(pipeline, x, cost)?;
    let pipeline = pipeline.normalized().with_mode(Mode::Conjunction);
    if pipeline.accepts_all(x)? {
        return Ok(certify(stationary_plan(x, 1, cost), &pipeline, cost));
    }
    let (a, c) = pipeline.constraint_matrix();
    let boundary = match exact_projection(x, &a, &c, cost) {
        Some(Ok(z)) => {
            let plan = ManipulationPlan::from_path(vec![x.clone(), z], cost, Method::ConvexSolver);
            return Ok(certify(plan, &pipeline, cost));
        }
        Some(Err(e)) => return Err(e),
        None => match polyhedron::project(x, &a, &c) {
            Projection::Point(z) => Some(z),
            Projection::Infeasible => return Err(ScreeningError::InfeasibleRegion),
            Projection::TooLarge => None,
        },
    };

    let (center, slack) = polyhedron::max_min_slack(&a, &c).ok_or(ScreeningError::InfeasibleRegion)?;
    if slack < -BOUNDARY_TOL {
        return Err(ScreeningError::InfeasibleRegion);
    }
    if slack <= 1e-12 {
        return Err(ScreeningError::DegenerateRegion);
    }
    let start = match boundary {
        Some(zb) => &zb + (&center - &zb) * 0.01,
        None => center,
    };
    let d = x.len();
    let objective = ChainObjective { x0: x, k: 1, d, cost };
    let out = barrier::minimize(&objective, &a, &c, start, options)
        .map_err(|e| failure(&objective, &pipeline, Mode::Conjunction, e))?;
    let plan = ManipulationPlan::from_path(vec![x.clone(), out.y], cost, Method::ConvexSolver);
    Ok(certify(plan, &pipeline, cost))
}

/// Cheapest path `x⁽⁰⁾ → x⁽¹⁾ → … → x⁽ᵏ⁾` with stop `i` accepted by test `i`.
pub fn sequential_response(
    pipeline: &Pipeline,
    x0: &FeatureVector,
    cost: &CostModel,
    options: &SolverOptions,
) -> Result<ManipulationPlan> {
    validate(pipeline, x0, cost)?;
    let pipeline = pipeline.normalized().with_mode(Mode::Sequential);
    let h = pipeline.classifiers();
    let (k, d) = (h.len(), pipeline.dim());
    if pipeline.accepts_all(x0)? {
        return Ok(certify(stationary_plan(x0, k, cost), &pipeline, cost));
    }

    // feasible starts: greedy projections, and the joint projection held for every stop
    let mut greedy = vec![x0.clone()];
    for hi in h {
        let next = project_onto(hi, greedy.last().unwrap());
        greedy.push(next);
    }
    let (a_joint, c_joint) = pipeline.constraint_matrix();
    let mut starts = vec![greedy];
    if let Projection::Point(z) = polyhedron::project(x0, &a_joint, &c_joint) {
        let mut path = vec![x0.clone()];
        path.extend(std::iter::repeat_n(z, k));
        starts.push(path);
    }
    let incumbent = starts
        .into_iter()
        .map(|p| ManipulationPlan::from_path(p, cost, Method::ConvexSolver))
        .min_by(|p, q| p.total_cost().total_cmp(&q.total_cost()))
        .unwrap();

    let scale = x0.amax().max(1.0);
    let push = 1e-3 * scale;
    let mut y0 = DVector::zeros(k * d);
    for (i, hi) in h.iter().enumerate() {
        let stop = &incumbent.path()[i + 1] + hi.w() * push;
        y0.rows_mut(i * d, d).copy_from(&stop);
    }
    let mut a = DMatrix::zeros(k, k * d);
    for (i, hi) in h.iter().enumerate() {
        a.view_mut((i, i * d), (1, d)).copy_from(&hi.w().transpose());
    }
    let objective = ChainObjective { x0, k, d, cost };
    let out = barrier::minimize(&objective, &a, &c_joint, y0, options)
        .map_err(|e| failure(&objective, &pipeline, Mode::Sequential, e))?;

    let mut path: Vec<FeatureVector> = (0..=k).map(|i| objective.stop(&out.y, i)).collect();
    for i in 1..=k {
        let stay = &path[i - 1];
        if (&path[i] - stay).norm() <= SNAP_TOL * scale && h[i - 1].margin(stay) >= -BOUNDARY_TOL {
            path[i] = stay.clone();
        }
    }
    let plan = ManipulationPlan::from_path(path, cost, Method::ConvexSolver);
    let plan = if plan.total_cost() <= incumbent.total_cost() {
        plan
    } else {
        incumbent
    };
    Ok(certify(plan, &pipeline, cost))
}
