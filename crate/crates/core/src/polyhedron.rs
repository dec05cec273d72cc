//! Small dense polyhedra `{z : A z >= c}`: exact Euclidean projection by
//! active-set enumeration and a max-min-slack (phase-1) solve.

use nalgebra::{DMatrix, DVector};

use crate::barrier::{self, SmoothObjective, SolverOptions};

/// Enumeration gives up above this many candidate active sets.
const MAX_ACTIVE_SETS: usize = 50_000;
const FEAS_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) enum Projection {
    Point(DVector<f64>),
    Infeasible,
    TooLarge,
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    let mut r: usize = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Euclidean projection of `y` onto `{z : A z >= c}`.
///
/// Every KKT point of the projection has a linearly independent active set of
/// size at most `min(n, m)`, so the candidates are enumerated directly and the
/// closest feasible one with non-negative multipliers wins.
pub(crate) fn project(y: &DVector<f64>, a: &DMatrix<f64>, c: &DVector<f64>) -> Projection {
    let (m, n) = a.shape();
    let slack = a * y - c;
    let scale = 1.0 + c.amax() + (a * y).amax();
    if slack.iter().all(|&s| s >= -FEAS_TOL * scale) {
        return Projection::Point(y.clone());
    }
    let max_size = n.min(m);
    let total: usize = (1..=max_size).map(|s| binomial(m, s)).fold(0, usize::saturating_add);
    if total > MAX_ACTIVE_SETS {
        return Projection::TooLarge;
    }

    let mut best: Option<(f64, DVector<f64>)> = None;
    for size in 1..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            if let Some(z) = try_active_set(y, a, c, &idx, scale) {
                let dist = (&z - y).norm();
                if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                    best = Some((dist, z));
                }
            }
            if !next_combination(&mut idx, m) {
                break;
            }
        }
    }
    match best {
        Some((_, z)) => Projection::Point(z),
        None => Projection::Infeasible,
    }
}

fn try_active_set(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    idx: &[usize],
    scale: f64,
) -> Option<DVector<f64>> {
    let n = a.ncols();
    let mut ws = DMatrix::zeros(idx.len(), n);
    let mut rhs = DVector::zeros(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        ws.row_mut(r).copy_from(&a.row(i));
        rhs[r] = c[i] - a.row(i).dot(&y.transpose());
    }
    let gram = &ws * ws.transpose();
    // reject (nearly) dependent active sets
    let eig = gram.clone().symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max().max(1e-300) {
        return None;
    }
    let lambda = gram.cholesky()?.solve(&rhs);
    if lambda.iter().any(|&l| l < -1e-12 * scale) {
        return None;
    }
    let z = y + ws.transpose() * lambda;
    let slack = a * &z - c;
    if slack.iter().all(|&s| s >= -FEAS_TOL * scale) {
        Some(z)
    } else {
        None
    }
}

fn next_combination(idx: &mut [usize], m: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < m - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Linear objective `-s` over `(y, s)`.
struct MaxSlack {
    n: usize,
}

impl SmoothObjective for MaxSlack {
    fn value(&self, y: &DVector<f64>, _mu: f64) -> f64 {
        -y[self.n]
    }

    fn derivatives(&self, y: &DVector<f64>, _mu: f64) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(y.len());
        g[self.n] = -1.0;
        (g, DMatrix::zeros(y.len(), y.len()))
    }

    fn true_value(&self, y: &DVector<f64>) -> f64 {
        -y[self.n]
    }
}

/// Maximizes `min_j (a_j·y - c_j)` (capped at 1) and returns the maximizer
/// together with the optimal slack. Rows of `a` should be unit length.
pub(crate) fn max_min_slack(a: &DMatrix<f64>, c: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (m, n) = a.shape();
    if m == 0 {
        return Some((DVector::zeros(n), 1.0));
    }
    if n == 0 {
        return Some((DVector::zeros(0), (-c).min().min(1.0)));
    }
    let center = match project(&DVector::zeros(n), a, c) {
        Projection::Point(z) => z,
        _ => DVector::zeros(n),
    };
    let radius = 1e3 * (1.0 + center.amax() + c.amax());

    // rows: [a | -1] (y,s) >= c ; -s >= -1 ; ±y_l >= ±center_l - radius
    let rows = m + 1 + 2 * n;
    let mut big = DMatrix::zeros(rows, n + 1);
    let mut rhs = DVector::zeros(rows);
    for j in 0..m {
        for l in 0..n {
            big[(j, l)] = a[(j, l)];
        }
        big[(j, n)] = -1.0;
        rhs[j] = c[j];
    }
    big[(m, n)] = -1.0;
    rhs[m] = -1.0;
    for l in 0..n {
        big[(m + 1 + 2 * l, l)] = 1.0;
        rhs[m + 1 + 2 * l] = center[l] - radius;
        big[(m + 2 + 2 * l, l)] = -1.0;
        rhs[m + 2 + 2 * l] = -center[l] - radius;
    }

    let min_slack = (a * &center - c).min();
    let mut y0 = center.clone().resize_vertically(n + 1, 0.0);
    y0[n] = (min_slack - 1.0).min(0.0);

    let options = SolverOptions {
        tol: 0.0,
        max_iterations: 500,
        ..SolverOptions::default()
    };
    let out = barrier::minimize(&MaxSlack { n }, &big, &rhs, y0, &options).ok()?;
    let y = out.y.rows(0, n).into_owned();
    let s = (a * &y - c).min().min(1.0);
    Some((y, s))
}

pub(crate) fn is_feasible(a: &DMatrix<f64>, c: &DVector<f64>) -> bool {
    match project(&DVector::zeros(a.ncols()), a, c) {
        Projection::Point(_) => true,
        Projection::Infeasible => false,
        Projection::TooLarge => max_min_slack(a, c).is_some_and(|(_, s)| s >= -FEAS_TOL),
    }
}

/// Orthonormal basis (as columns) of the complement of `w`.
pub(crate) fn orthonormal_complement(w: &DVector<f64>) -> DMatrix<f64> {
    let d = w.len();
    let u = w / w.norm();
    // Householder reflection mapping e_p to ±u, p the largest |u_p|
    let p = u.iamax();
    let mut v = u.clone();
    let sign = if u[p] >= 0.0 { 1.0 } else { -1.0 };
    v[p] += sign;
    let vv = v.norm_squared();
    let reflect = DMatrix::identity(d, d) - &v * v.transpose() * (2.0 / vv);
    let mut basis = DMatrix::zeros(d, d - 1);
    let mut col = 0;
    for j in 0..d {
        if j != p {
            basis.set_column(col, &reflect.column(j));
            col += 1;
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn projection_onto_orthant() {
        let a = DMatrix::identity(2, 2);
        let c = DVector::zeros(2);
        match project(&DVector::from_vec(vec![-1.0, -1.0]), &a, &c) {
            Projection::Point(z) => assert!(z.norm() < 1e-15),
            other => panic!("{other:?}"),
        }
        match project(&DVector::from_vec(vec![3.0, -1.0]), &a, &c) {
            Projection::Point(z) => assert_eq!(z, DVector::from_vec(vec![3.0, 0.0])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn projection_detects_empty_slab() {
        let a = m(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(project(&DVector::zeros(2), &a, &c), Projection::Infeasible));
        assert!(!is_feasible(&a, &c));
    }

    #[test]
    fn projection_is_closest_feasible_point() {
        // triangle x >= 0, y >= 0, x + y <= 1
        let a = m(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        let c = DVector::from_vec(vec![0.0, 0.0, -1.0]);
        let y = DVector::from_vec(vec![2.0, 0.5]);
        let Projection::Point(z) = project(&y, &a, &c) else { panic!() };
        assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12);
        // brute force over a fine grid of the triangle
        let mut best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=(400 - i) {
                let p = DVector::from_vec(vec![i as f64 / 400.0, j as f64 / 400.0]);
                best = best.min((&p - &y).norm());
            }
        }
        assert!((z - &y).norm() <= best + 1e-12);
    }

    #[test]
    fn max_min_slack_values() {
        // 0 <= x <= 1 in one dimension: best slack 0.5 at x = 0.5
        let a = m(2, 1, &[1.0, -1.0]);
        let c = DVector::from_vec(vec![0.0, -1.0]);
        let (y, s) = max_min_slack(&a, &c).unwrap();
        assert!((s - 0.5).abs() < 1e-7, "{s}");
        assert!((y[0] - 0.5).abs() < 1e-6);

        // capped at 1 for unbounded regions
        let a = m(1, 2, &[1.0, 0.0]);
        let (_, s) = max_min_slack(&a, &DVector::zeros(1)).unwrap();
        assert!((s - 1.0).abs() < 1e-7);

        // infeasible: x >= 1 and x <= 0
        let a = m(2, 1, &[1.0, -1.0]);
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let (_, s) = max_min_slack(&a, &c).unwrap();
        assert!((s + 0.5).abs() < 1e-7);
    }

    #[test]
    fn complement_is_orthonormal() {
        for w in [vec![1.0, 0.0, 0.0], vec![0.3, -2.0, 0.5], vec![0.0, 0.0, -4.0]] {
            let w = DVector::from_vec(w);
            let b = orthonormal_complement(&w);
            assert!((b.transpose() * &b - DMatrix::identity(2, 2)).amax() < 1e-14);
            assert!((b.transpose() * &w).amax() < 1e-14);
        }
    }
}
