//! Damped Newton on a smoothed objective plus a logarithmic barrier for
//! linear inequalities `A y >= c`, driven through a continuation schedule.
//!
//! Stage `s` minimizes `f_mu(y) - mu Σ log(a_j·y - c_j)` with the same `mu`
//! for the smoothing and the barrier weight, warm-started from stage `s-1`.

use nalgebra::{DMatrix, DVector};

/// Smoothing levels, coarse to fine.
pub const MU_SCHEDULE: [f64; 5] = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10];
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;

pub(crate) trait SmoothObjective {
    fn value(&self, y: &DVector<f64>, mu: f64) -> f64;
    fn derivatives(&self, y: &DVector<f64>, mu: f64) -> (DVector<f64>, DMatrix<f64>);
    /// Unsmoothed objective, used for termination and reporting.
    fn true_value(&self, y: &DVector<f64>) -> f64;
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub schedule: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            schedule: MU_SCHEDULE.to_vec(),
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierFailure {
    pub best: DVector<f64>,
    pub best_true: f64,
    pub mu: f64,
    pub iterations: usize,
    pub objective_change: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub y: DVector<f64>,
    #[cfg(test)]
    pub true_value: f64,
}

struct Barrier<'a> {
    a: &'a DMatrix<f64>,
    c: &'a DVector<f64>,
}

impl Barrier<'_> {
    fn slacks(&self, y: &DVector<f64>) -> DVector<f64> {
        self.a * y - self.c
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        let s = self.slacks(y);
        if s.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        -s.iter().map(|v| v.ln()).sum::<f64>()
    }

    fn add_derivatives(&self, y: &DVector<f64>, t: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
        let s = self.slacks(y);
        for j in 0..self.a.nrows() {
            let row = self.a.row(j).transpose();
            *g -= &row * (t / s[j]);
            h.ger(t / (s[j] * s[j]), &row, &row, 1.0);
        }
    }

    /// Largest step keeping every slack positive.
    fn max_step(&self, y: &DVector<f64>, dir: &DVector<f64>) -> f64 {
        let s = self.slacks(y);
        let ad = self.a * dir;
        let mut alpha = f64::INFINITY;
        for j in 0..ad.len() {
            if ad[j] < 0.0 {
                alpha = alpha.min(-s[j] / ad[j]);
            }
        }
        alpha
    }
}

/// Solves `(H + ridge·I) d = -g`, raising the ridge until the factorization succeeds.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>, ridge: f64, scale: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let mut ridge = ridge;
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let dir = ch.solve(&(-g));
            if dir.iter().all(|v| v.is_finite()) {
                return Some(dir);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    None
}

/// Halvings tried before the step is declared a failure and the ridge raised.
const MAX_BACKTRACKS: usize = 60;

enum Step {
    Taken { y: DVector<f64>, value: f64, ridge: f64 },
    Converged,
    Stalled,
}

/// One damped Newton step. Piecewise-linear costs leave the smoothed Hessian
/// nearly singular away from the kinks, so a failed line search retries with
/// a larger Levenberg-Marquardt ridge before giving up.
fn newton_step<F: Fn(&DVector<f64>) -> f64>(
    total: F,
    barrier: &Barrier<'_>,
    y: &DVector<f64>,
    value: f64,
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    ridge: f64,
) -> Step {
    let n = h.nrows();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let mut ridge = ridge;
    while ridge <= 1e20 * scale {
        let Some(dir) = newton_direction(h, g, ridge, scale) else {
            return Step::Stalled;
        };
        let slope = g.dot(&dir);
        if -slope <= 2e-14 * value.abs().max(1.0) {
            return Step::Converged;
        }
        let mut alpha = (0.99 * barrier.max_step(y, &dir)).min(1.0);
        for _ in 0..MAX_BACKTRACKS {
            let trial = y + &dir * alpha;
            let tv = total(&trial);
            if tv.is_finite() && tv <= value + 0.25 * alpha * slope {
                return Step::Taken { y: trial, value: tv, ridge };
            }
            alpha *= 0.5;
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
    }
    Step::Stalled
}

/// Runs the continuation from a strictly feasible `y0`.
pub(crate) fn minimize<O: SmoothObjective>(
    objective: &O,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    y0: DVector<f64>,
    options: &SolverOptions,
) -> Result<BarrierOutcome, BarrierFailure> {
    let barrier = Barrier { a, c };
    debug_assert!(barrier.slacks(&y0).iter().all(|&s| s > 0.0));
    let mut y = y0;
    let mut best = y.clone();
    let mut best_true = objective.true_value(&y);
    let mut previous_true = f64::NAN;

    for &mu in &options.schedule {
        let total = |y: &DVector<f64>| objective.value(y, mu) + mu * barrier.value(y);
        let mut value = total(&y);
        let mut stage_iters = 0;
        let mut last_change = f64::INFINITY;
        let mut ridge = 0.0;
        loop {
            if stage_iters >= options.max_iterations {
                return Err(BarrierFailure {
                    best,
                    best_true,
                    mu,
                    iterations: stage_iters,
                    objective_change: last_change,
                });
            }
            stage_iters += 1;
            let (mut g, mut h) = objective.derivatives(&y, mu);
            barrier.add_derivatives(&y, mu, &mut g, &mut h);
            match newton_step(total, &barrier, &y, value, &g, &h, ridge) {
                Step::Taken { y: next, value: next_value, ridge: used } => {
                    last_change = value - next_value;
                    y = next;
                    value = next_value;
                    // relax the damping after a success
                    ridge = if used < 1e-8 { 0.0 } else { used * 0.01 };
                    if last_change <= 1e-15 * value.abs().max(1.0) && used == 0.0 {
                        break;
                    }
                }
                Step::Converged | Step::Stalled => break,
            }
        }

        let current = objective.true_value(&y);
        if current <= best_true {
            best_true = current;
            best = y.clone();
        }
        let change = (previous_true - current).abs();
        // zero legs shrink with mu, so keep going two decades past tol
        if mu <= 1e-2 * options.tol && change < options.tol * current.abs().max(1.0) {
            break;
        }
        previous_true = current;
    }

    Ok(BarrierOutcome {
        y: best,
        #[cfg(test)]
        true_value: best_true,
    })
}
