//! First-order optimality certificates for ℓ₂ best responses.
//!
//! With `u_i` the unit direction of leg `i`, a sequential plan is optimal iff
//! there are `λ >= 0` with `u_i = Σ_{j>=i} λ_j w_j` on every moving leg,
//! `‖Σ_{j>=i} λ_j w_j‖ <= 1` on every stay, and `λ_j (w_j·x_j - b_j) = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ManipulationPlan;
use crate::error::{Result, ScreeningError};
use crate::geometry::{check_dim, Mode, Pipeline};

/// Residual bound for a plan to count as certified.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Legs shorter than this, relative to the path scale, are stays.
const ZERO_LEG: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// One multiplier per classifier, for the unit-normalized normals.
    pub multipliers: Vec<f64>,
    pub stationarity_residual: f64,
    pub complementarity_residual: f64,
}

impl KktCertificate {
    pub fn is_certified(&self) -> bool {
        self.stationarity_residual < CERTIFICATE_TOL
            && self.complementarity_residual < CERTIFICATE_TOL
            && self.multipliers.iter().all(|&l| l >= -1e-9)
    }
}

/// Checks a plan against `pipeline` (in the pipeline's mode) under ℓ₂ cost.
///
/// Fails with `InfeasiblePlan` if some stop is rejected by its test.
pub fn kkt_check(plan: &ManipulationPlan, pipeline: &Pipeline) -> Result<KktCertificate> {
    let pipeline = pipeline.normalized();
    let h = pipeline.classifiers();
    let k = h.len();
    let path = plan.path();
    for x in path {
        check_dim(pipeline.dim(), x.len())?;
    }
    // stops[j] is the point classifier j sees
    let stops: Vec<usize> = match pipeline.mode() {
        Mode::Sequential => {
            if path.len() != k + 1 {
                return Err(ScreeningError::InvalidArgument(format!(
                    "sequential plan for {k} classifiers needs {} points, got {}",
                    k + 1,
                    path.len()
                )));
            }
            (1..=k).collect()
        }
        Mode::Conjunction => {
            if path.len() != 2 {
                return Err(ScreeningError::InvalidArgument(format!(
                    "conjunction plan needs 2 points, got {}",
                    path.len()
                )));
            }
            vec![1; k]
        }
    };
    for (j, &s) in stops.iter().enumerate() {
        if !h[j].accepts(&path[s]) {
            return Err(ScreeningError::InfeasiblePlan(format!(
                "point {s} is rejected by classifier {} (margin {:e})",
                j + 1,
                h[j].margin(&path[s])
            )));
        }
    }

    // each multiplier enters every leg at or before its stop
    let legs = path.len() - 1;
    let scale = path.iter().map(|p| p.amax()).fold(1.0, f64::max);
    let d = pipeline.dim();
    let mut moving = Vec::new();
    for i in 0..legs {
        let v = &path[i + 1] - &path[i];
        let n = v.norm();
        if n > ZERO_LEG * scale {
            moving.push((i, v / n));
        }
    }
    let mut m = DMatrix::zeros(moving.len() * d, k);
    let mut rhs = DVector::zeros(moving.len() * d);
    for (r, (i, u)) in moving.iter().enumerate() {
        rhs.rows_mut(r * d, d).copy_from(u);
        for (j, &s) in stops.iter().enumerate() {
            if s > *i {
                m.view_mut((r * d, j), (d, 1)).copy_from(h[j].w());
            }
        }
    }
    let lambda = if moving.is_empty() {
        DVector::zeros(k)
    } else {
        nnls(&m, &rhs)
    };

    let mut stationarity: f64 = 0.0;
    for i in 0..legs {
        let mut g = DVector::zeros(d);
        for (j, &s) in stops.iter().enumerate() {
            if s > i {
                g += h[j].w() * lambda[j];
            }
        }
        match moving.iter().find(|(l, _)| *l == i) {
            Some((_, u)) => stationarity = stationarity.max((u - g).amax()),
            None => stationarity = stationarity.max(g.norm() - 1.0),
        }
    }
    let complementarity = stops
        .iter()
        .enumerate()
        .map(|(j, &s)| (lambda[j] * h[j].margin(&path[s])).abs())
        .fold(0.0, f64::max);
    Ok(KktCertificate {
        multipliers: lambda.iter().copied().collect(),
        stationarity_residual: stationarity.max(0.0),
        complementarity_residual: complementarity,
    })
}

/// Lawson–Hanson non-negative least squares `min ‖Mλ - r‖, λ >= 0`.
pub(crate) fn nnls(m: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let tol = 1e-12 * m.amax().max(1.0) * r.amax().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..3 * n + 3 {
        let w = m.transpose() * (r - m * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        loop {
            let s = restricted_lstsq(m, r, &passive);
            if (0..n).all(|j| !passive[j] || s[j] > 0.0) {
                x = s;
                break;
            }
            let mut alpha = 1.0;
            for j in 0..n {
                if passive[j] && s[j] <= 0.0 {
                    alpha = f64::min(alpha, x[j] / (x[j] - s[j]));
                }
            }
            x += (&s - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

fn restricted_lstsq(m: &DMatrix<f64>, r: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..m.ncols()).filter(|&j| passive[j]).collect();
    let sub = m.select_columns(&cols);
    let sol = sub
        .svd(true, true)
        .solve(r, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(cols.len()));
    let mut full = DVector::zeros(m.ncols());
    for (c, &j) in cols.iter().enumerate() {
        full[j] = sol[c];
    }
    full
}
