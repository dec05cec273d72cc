//! Manipulation cost models and their smoothed surrogates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ScreeningError};
use crate::geometry::{check_dim, FeatureVector};

/// Cost `c(x, x̂)` of moving an agent from `x` to `x̂`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    L1,
    L2,
    LInf,
    /// `(x̂ - x)ᵀ A (x̂ - x)` for a symmetric positive-definite `A`.
    Quadratic(QuadraticForm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    matrix: DMatrix<f64>,
    /// Lower Cholesky factor, `A = L Lᵀ`.
    factor: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(ScreeningError::NotPositiveDefinite(format!(
                "matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(ScreeningError::NonFinite("quadratic cost matrix"));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(ScreeningError::NotPositiveDefinite("matrix is not symmetric".into()));
        }
        let min_eig = matrix.clone().symmetric_eigenvalues().min();
        if min_eig <= 1e-12 * scale {
            return Err(ScreeningError::NotPositiveDefinite(format!(
                "smallest eigenvalue {min_eig:e}"
            )));
        }
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| ScreeningError::NotPositiveDefinite("Cholesky failed".into()))?
            .l();
        Ok(Self { matrix, factor })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub(crate) fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

impl CostModel {
    pub fn quadratic(matrix: DMatrix<f64>) -> Result<Self> {
        Ok(CostModel::Quadratic(QuadraticForm::new(matrix)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostModel::L1 => "l1",
            CostModel::L2 => "l2",
            CostModel::LInf => "linf",
            CostModel::Quadratic(_) => "quadratic",
        }
    }

    pub fn is_norm(&self) -> bool {
        !matches!(self, CostModel::Quadratic(_))
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            CostModel::Quadratic(q) => check_dim(d, q.dim()),
            _ => Ok(()),
        }
    }

    /// Cost of a displacement `v = x̂ - x`.
    pub fn of_displacement(&self, v: &DVector<f64>) -> f64 {
        match self {
            CostModel::L1 => v.lp_norm(1),
            CostModel::L2 => v.norm(),
            CostModel::LInf => v.amax(),
            CostModel::Quadratic(q) => v.dot(&(q.matrix() * v)),
        }
    }

    pub fn cost(&self, from: &FeatureVector, to: &FeatureVector) -> f64 {
        self.of_displacement(&(to - from))
    }

    /// Smallest cost of crossing from margin `-gap` to margin 0 of a halfspace
    /// with normal `w` in a single move: `gap / ‖w‖_*`.
    pub(crate) fn halfspace_distance(&self, w: &DVector<f64>, gap: f64) -> f64 {
        if gap <= 0.0 {
            return 0.0;
        }
        match self {
            CostModel::L1 => gap / w.amax(),
            CostModel::L2 => gap / w.norm(),
            CostModel::LInf => gap / w.lp_norm(1),
            CostModel::Quadratic(q) => {
                let y = q
                    .factor()
                    .solve_lower_triangular(w)
                    .expect("Cholesky factor is invertible");
                gap * gap / y.norm_squared()
            }
        }
    }

    /// Constant `L` with `c(x, x̂) <= L ‖x̂ - x‖₂` for norm costs.
    pub fn l2_lipschitz(&self, d: usize) -> Option<f64> {
        match self {
            CostModel::L1 => Some((d as f64).sqrt()),
            CostModel::L2 | CostModel::LInf => Some(1.0),
            CostModel::Quadratic(_) => None,
        }
    }

    /// Constant `m` with `c(x, x̂) >= m ‖x̂ - x‖₂` for norm costs.
    pub fn l2_lower_factor(&self, d: usize) -> Option<f64> {
        match self {
            CostModel::L1 | CostModel::L2 => Some(1.0),
            CostModel::LInf => Some(1.0 / (d as f64).sqrt()),
            CostModel::Quadratic(_) => None,
        }
    }

    /// Value, gradient and Hessian of the smoothed leg cost at displacement `v`.
    ///
    /// The surrogate over-estimates the true cost by at most `smoothing_bias(d)·mu`.
    pub(crate) fn smoothed(&self, v: &DVector<f64>, mu: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = v.len();
        match self {
            CostModel::L2 => {
                let s = (v.norm_squared() + mu * mu).sqrt();
                let g = v / s;
                let h = (DMatrix::identity(d, d) - &g * g.transpose()) / s;
                (s, g, h)
            }
            CostModel::L1 => {
                let mut value = 0.0;
                let mut g = DVector::zeros(d);
                let mut h = DMatrix::zeros(d, d);
                for j in 0..d {
                    let s = (v[j] * v[j] + mu * mu).sqrt();
                    value += s;
                    g[j] = v[j] / s;
                    h[(j, j)] = mu * mu / (s * s * s);
                }
                (value, g, h)
            }
            CostModel::LInf => {
                // mu · log Σ exp(±v_j / mu)
                let m = v.amax();
                let mut plus = DVector::zeros(d);
                let mut minus = DVector::zeros(d);
                let mut total = 0.0;
                for j in 0..d {
                    plus[j] = ((v[j] - m) / mu).exp();
                    minus[j] = ((-v[j] - m) / mu).exp();
                    total += plus[j] + minus[j];
                }
                plus /= total;
                minus /= total;
                let value = m + mu * total.ln();
                let g = &plus - &minus;
                let q = &plus + &minus;
                let h = (DMatrix::from_diagonal(&q) - &g * g.transpose()) / mu;
                (value, g, h)
            }
            CostModel::Quadratic(q) => {
                let av = q.matrix() * v;
                (v.dot(&av), av * 2.0, q.matrix() * 2.0)
            }
        }
    }

    /// Upper bound on `smoothed - true` per unit of `mu`.
    #[cfg(test)]
    pub(crate) fn smoothing_bias(&self, d: usize) -> f64 {
        match self {
            CostModel::L2 => 1.0,
            CostModel::L1 => d as f64,
            CostModel::LInf => (2.0 * d as f64).ln(),
            CostModel::Quadratic(_) => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(c)
    }

    #[test]
    fn norm_costs() {
        let d = v(&[3.0, -4.0]);
        assert_eq!(CostModel::L1.of_displacement(&d), 7.0);
        assert_eq!(CostModel::L2.of_displacement(&d), 5.0);
        assert_eq!(CostModel::LInf.of_displacement(&d), 4.0);
    }

    #[test]
    fn quadratic_cost_and_validation() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = CostModel::quadratic(a).unwrap();
        let d = v(&[1.0, -1.0]);
        assert!((c.of_displacement(&d) - (2.0 - 1.0 + 1.0)).abs() < 1e-15);
        assert_eq!(c.of_displacement(&v(&[0.0, 0.0])), 0.0);

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CostModel::quadratic(indefinite),
            Err(ScreeningError::NotPositiveDefinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(CostModel::quadratic(asym).is_err());
    }

    #[test]
    fn halfspace_distance_matches_dual_norm() {
        let w = v(&[0.6, 0.8]);
        assert!((CostModel::L2.halfspace_distance(&w, 1.0) - 1.0).abs() < 1e-15);
        assert!((CostModel::L1.halfspace_distance(&w, 1.0) - 1.25).abs() < 1e-15);
        assert!((CostModel::LInf.halfspace_distance(&w, 1.4) - 1.0).abs() < 1e-15);
        let q = CostModel::quadratic(DMatrix::identity(2, 2) * 4.0).unwrap();
        // best single move is w / 2, costing 4 · 1/4
        assert!((q.halfspace_distance(&w, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(CostModel::L2.halfspace_distance(&w, -1.0), 0.0);
    }

    #[test]
    fn smoothed_bias_and_derivatives() {
        let costs = [
            CostModel::L1,
            CostModel::L2,
            CostModel::LInf,
            CostModel::quadratic(DMatrix::from_row_slice(3, 3, &[2., 0., 0., 0., 1., 0.3, 0., 0.3, 1.]))
                .unwrap(),
        ];
        let x = v(&[0.3, -1.2, 0.05]);
        let mu = 1e-2;
        for c in &costs {
            let (f, g, h) = c.smoothed(&x, mu);
            let truth = c.of_displacement(&x);
            assert!(f >= truth - 1e-15);
            assert!(f - truth <= c.smoothing_bias(3) * mu + 1e-15, "{}", c.name());
            // central differences
            let eps = 1e-6;
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                let (fp, gp, _) = c.smoothed(&xp, mu);
                let (fm, gm, _) = c.smoothed(&xm, mu);
                assert!(((fp - fm) / (2.0 * eps) - g[j]).abs() < 1e-6, "{} grad", c.name());
                for i in 0..3 {
                    let fd = (gp[i] - gm[i]) / (2.0 * eps);
                    assert!((fd - h[(i, j)]).abs() < 1e-4 * (1.0 + fd.abs()), "{} hess", c.name());
                }
            }
        }
    }
}
