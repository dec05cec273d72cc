//! Halfspace classifiers, pipelines and the exact geometric primitives the
//! best-response code is built from.
//!
//! Conventions:
//! - A classifier accepts `x` iff `w·x >= b - BOUNDARY_TOL`; points on the
//!   boundary are accepted.
//! - Closed forms and the defense work with unit normals. `normalize` rescales
//!   `w` and `b` by the same factor so the accept set is unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScreeningError};
use crate::polyhedron;

/// A point in feature space.
pub type FeatureVector = DVector<f64>;

/// Slack absorbed when testing `w·x >= b`.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Two unit normals count as parallel when `|w1·w2| >= 1 - PARALLEL_TOL`.
pub const PARALLEL_TOL: f64 = 1e-9;
/// Rank and slack tolerance of the general-position test.
pub const RANK_TOL: f64 = 1e-7;
const UNIT_TOL: f64 = 1e-12;

/// Builds a feature vector, rejecting empty or non-finite input.
pub fn feature_vector(coords: &[f64]) -> Result<FeatureVector> {
    if coords.is_empty() {
        return Err(ScreeningError::EmptyVector);
    }
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(ScreeningError::NonFinite("feature vector"));
    }
    Ok(DVector::from_column_slice(coords))
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(ScreeningError::DimensionMismatch { expected, found })
    }
}

/// Linear test `h(x) = 1 iff w·x >= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceClassifier {
    w: DVector<f64>,
    b: f64,
}

impl HalfspaceClassifier {
    pub fn new(w: DVector<f64>, b: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(ScreeningError::EmptyVector);
        }
        if w.iter().any(|c| !c.is_finite()) || !b.is_finite() {
            return Err(ScreeningError::NonFinite("classifier"));
        }
        if w.norm() == 0.0 {
            return Err(ScreeningError::ZeroNormal);
        }
        Ok(Self { w, b })
    }

    pub fn from_slice(w: &[f64], b: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(w), b)
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn normalize(&self) -> Self {
        let n = self.w.norm();
        Self {
            w: &self.w / n,
            b: self.b / n,
        }
    }

    pub fn is_normalized(&self) -> bool {
        (self.w.norm() - 1.0).abs() <= UNIT_TOL
    }

    /// Same normal, threshold raised by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            w: self.w.clone(),
            b: self.b + delta,
        }
    }

    /// Signed slack `w·x - b`.
    pub fn margin(&self, x: &FeatureVector) -> f64 {
        self.w.dot(x) - self.b
    }

    pub(crate) fn accepts(&self, x: &FeatureVector) -> bool {
        self.margin(x) >= -BOUNDARY_TOL
    }

    /// Returns `true` (label 1) iff `w·x >= b - BOUNDARY_TOL`.
    pub fn classify(&self, x: &FeatureVector) -> Result<bool> {
        check_dim(self.dim(), x.len())?;
        Ok(self.accepts(x))
    }

    /// Orthogonal projection onto the accept set and the distance to it.
    ///
    /// Requires a unit normal and a zero threshold.
    pub fn project_and_distance(&self, x: &FeatureVector) -> Result<(FeatureVector, f64)> {
        check_dim(self.dim(), x.len())?;
        if !self.is_normalized() {
            return Err(ScreeningError::NotNormalized(self.w.norm()));
        }
        if self.b != 0.0 {
            return Err(ScreeningError::NotHomogeneous(self.b));
        }
        Ok(project_unit(&self.w, x))
    }

    /// Feature-monotone test: every component of `w` is non-negative.
    pub fn is_monotone(&self) -> bool {
        let scale = self.w.norm();
        self.w.iter().all(|&c| c / scale >= -PARALLEL_TOL)
    }
}

/// `P_w(x)` and `d_w(x)` for a unit `w` and the homogeneous halfspace `w·y >= 0`.
pub(crate) fn project_unit(w: &DVector<f64>, x: &FeatureVector) -> (FeatureVector, f64) {
    let s = w.dot(x);
    if s >= 0.0 {
        (x.clone(), 0.0)
    } else {
        (x - w * s, -s)
    }
}

/// Projection onto `{y : w·y >= b}` for a general classifier.
pub(crate) fn project_onto(h: &HalfspaceClassifier, x: &FeatureVector) -> FeatureVector {
    let m = h.margin(x);
    if m >= 0.0 {
        x.clone()
    } else {
        x - h.w() * (m / h.w().norm_squared())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sequential,
    Conjunction,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Sequential => "sequential",
            Mode::Conjunction => "conjunction",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "conjunction" => Ok(Mode::Conjunction),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Ordered classifiers plus the way they are deployed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    classifiers: Vec<HalfspaceClassifier>,
    mode: Mode,
}

impl Pipeline {
    pub fn new(classifiers: Vec<HalfspaceClassifier>, mode: Mode) -> Result<Self> {
        let first = classifiers.first().ok_or(ScreeningError::EmptyPipeline)?;
        let d = first.dim();
        for h in &classifiers[1..] {
            check_dim(d, h.dim())?;
        }
        Ok(Self { classifiers, mode })
    }

    pub fn classifiers(&self) -> &[HalfspaceClassifier] {
        &self.classifiers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            classifiers: self.classifiers.clone(),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.classifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classifiers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.classifiers[0].dim()
    }

    pub fn normalized(&self) -> Self {
        Self {
            classifiers: self.classifiers.iter().map(|h| h.normalize()).collect(),
            mode: self.mode,
        }
    }

    /// Every classifier accepts `x` (the ground-truth label of an unmanipulated agent).
    pub fn accepts_all(&self, x: &FeatureVector) -> Result<bool> {
        check_dim(self.dim(), x.len())?;
        Ok(self.classifiers.iter().all(|h| h.accepts(x)))
    }

    /// Normals as rows, thresholds as a vector.
    pub(crate) fn constraint_matrix(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.len();
        let d = self.dim();
        let mut a = DMatrix::zeros(k, d);
        let mut c = DVector::zeros(k);
        for (i, h) in self.classifiers.iter().enumerate() {
            a.row_mut(i).copy_from(&h.w().transpose());
            c[i] = h.b();
        }
        (a, c)
    }

    /// Whether the intersection of all accept sets is nonempty.
    pub fn conjunction_feasible(&self) -> bool {
        let (a, c) = self.normalized().constraint_matrix();
        polyhedron::is_feasible(&a, &c)
    }
}

/// Change of variables `x' = x + s` that moves both boundaries through the origin.
///
/// Returns `s` and the normalized homogeneous classifiers.
pub fn homogenize(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
) -> Result<(FeatureVector, HalfspaceClassifier, HalfspaceClassifier)> {
    check_dim(2, h1.dim())?;
    check_dim(2, h2.dim())?;
    let (n1, n2) = (h1.normalize(), h2.normalize());
    let cos = n1.w().dot(n2.w());
    if cos.abs() >= 1.0 - PARALLEL_TOL {
        return Err(ScreeningError::ParallelClassifiers(cos.abs()));
    }
    let (w1, w2) = (n1.w(), n2.w());
    let det = w1[0] * w2[1] - w1[1] * w2[0];
    let (r1, r2) = (-n1.b(), -n2.b());
    let s = DVector::from_vec(vec![
        (r1 * w2[1] - r2 * w1[1]) / det,
        (w1[0] * r2 - w2[0] * r1) / det,
    ]);
    let h1h = HalfspaceClassifier {
        w: w1.clone(),
        b: 0.0,
    };
    let h2h = HalfspaceClassifier {
        w: w2.clone(),
        b: 0.0,
    };
    Ok((s, h1h, h2h))
}

/// Opening angle `θ` of the joint accept cone, `cos θ = -w1·w2`.
pub fn angle_between(h1: &HalfspaceClassifier, h2: &HalfspaceClassifier) -> Result<f64> {
    check_dim(h1.dim(), h2.dim())?;
    for h in [h1, h2] {
        if !h.is_normalized() {
            return Err(ScreeningError::NotNormalized(h.w().norm()));
        }
    }
    let cos = h1.w().dot(h2.w());
    if cos.abs() >= 1.0 - PARALLEL_TOL {
        return Err(ScreeningError::ParallelClassifiers(cos.abs()));
    }
    // angle between w1 and -w2, in the cancellation-free half-angle form
    let sum = (h1.w() + h2.w()).norm();
    let diff = (h1.w() - h2.w()).norm();
    Ok(2.0 * sum.atan2(diff))
}

/// Whether every face `F_i = {w_i·x = b_i} ∩ {h_j(x) = 1, j != i}` has affine
/// dimension exactly `d - 1`.
///
/// Each face is certified by maximizing the smallest slack of the non-parallel
/// constraints over the hyperplane `w_i·x = b_i`; a positive optimum proves a
/// relatively open patch. Otherwise the constraints tight at the optimizer are
/// rank-tested against `w_i`.
pub fn general_position(classifiers: &[HalfspaceClassifier]) -> Result<bool> {
    let first = classifiers.first().ok_or(ScreeningError::EmptyPipeline)?;
    let d = first.dim();
    for h in classifiers {
        check_dim(d, h.dim())?;
    }
    let normalized: Vec<_> = classifiers.iter().map(|h| h.normalize()).collect();
    let pipeline = Pipeline::new(normalized.clone(), Mode::Conjunction)?;
    if !pipeline.conjunction_feasible() {
        return Err(ScreeningError::InfeasibleRegion);
    }
    for i in 0..normalized.len() {
        match face_dimension(&normalized, i) {
            Some(dim) if dim + 1 == d => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Affine dimension of face `i` (`None` when the face is empty).
fn face_dimension(normalized: &[HalfspaceClassifier], i: usize) -> Option<usize> {
    let hi = &normalized[i];
    let d = hi.dim();
    let basis = polyhedron::orthonormal_complement(hi.w());
    let origin = hi.w() * hi.b();

    // slack_j(y) = a_j·y + c_j on the hyperplane, y in R^{d-1}
    let mut rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    let mut tight = vec![hi.w().clone()];
    for (j, hj) in normalized.iter().enumerate() {
        if j == i {
            continue;
        }
        let a = basis.transpose() * hj.w();
        let c = hj.margin(&origin);
        if a.norm() <= PARALLEL_TOL {
            // parallel boundary: constant slack along the whole hyperplane
            if c < -RANK_TOL {
                return None;
            }
            if c <= RANK_TOL {
                tight.push(hj.w().clone());
            }
            continue;
        }
        let n = a.norm();
        rows.push((a / n, c / n, j));
    }

    if !rows.is_empty() {
        let m = rows.len();
        let mut a = DMatrix::zeros(m, d - 1);
        let mut c = DVector::zeros(m);
        for (r, (row, off, _)) in rows.iter().enumerate() {
            a.row_mut(r).copy_from(&row.transpose());
            c[r] = -off;
        }
        let (point, slack) = polyhedron::max_min_slack(&a, &c)?;
        if slack < -RANK_TOL {
            return None;
        }
        if slack <= RANK_TOL {
            for (r, (_, _, j)) in rows.iter().enumerate() {
                let s = a.row(r).dot(&point.transpose()) - c[r];
                if s <= RANK_TOL {
                    tight.push(normalized[*j].w().clone());
                }
            }
        }
    }

    let mut m = DMatrix::zeros(tight.len(), d);
    for (r, w) in tight.iter().enumerate() {
        m.row_mut(r).copy_from(&w.transpose());
    }
    let rank = m.rank(RANK_TOL);
    Some(d - rank)
}

/// Point of the hyperplane `w_i·x = b_i` where the smallest margin of the other
/// classifiers is as large as possible (capped at 1), with that margin.
/// Expects normalized classifiers.
pub(crate) fn face_interior_point(
    normalized: &[HalfspaceClassifier],
    i: usize,
) -> Option<(FeatureVector, f64)> {
    let hi = &normalized[i];
    let d = hi.dim();
    let origin = hi.w() * hi.b();
    let others: Vec<&HalfspaceClassifier> =
        normalized.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, h)| h).collect();
    let point = if d == 1 || others.is_empty() {
        origin
    } else {
        let basis = polyhedron::orthonormal_complement(hi.w());
        let mut a = DMatrix::zeros(others.len(), d - 1);
        let mut c = DVector::zeros(others.len());
        for (r, hj) in others.iter().enumerate() {
            let row = basis.transpose() * hj.w();
            // parallel rows keep a zero row: their margin is constant on the hyperplane
            let n = row.norm();
            let scale = if n > PARALLEL_TOL { n } else { 1.0 };
            a.row_mut(r).copy_from(&(row / scale).transpose());
            c[r] = -hj.margin(&origin) / scale;
        }
        let (y, _) = polyhedron::max_min_slack(&a, &c)?;
        origin + basis * y
    };
    let min_margin = |p: &FeatureVector| others.iter().map(|h| h.margin(p)).fold(f64::INFINITY, f64::min);
    // slack beyond 1 is not sought, as in max_min_slack
    let slack = min_margin(&point).min(1.0);
    // the maximizer can sit anywhere on a plateau; pull it back toward the
    // foot of the hyperplane while keeping the slack (concave along the segment)
    let foot = hi.w() * hi.b();
    let at = |t: f64| &foot + (&point - &foot) * t;
    let target = slack - 1e-9 * slack.abs().max(1.0);
    let (mut lo, mut hi_t) = (0.0, 1.0);
    if min_margin(&foot) >= target {
        hi_t = 0.0;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi_t);
            if min_margin(&at(mid)) >= target {
                hi_t = mid;
            } else {
                lo = mid;
            }
        }
    }
    let point = at(hi_t);
    let slack = min_margin(&point);
    Some((point, slack))
}
