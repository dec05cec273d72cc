//! Brute-force best responses over a regular grid, used to check the solver
//! and the closed forms on small instances.
//!
//! For a norm cost an optimal sequential path can always be chosen so that
//! each stop either repeats the previous one or lies on its own boundary
//! (cut a leg where it first enters the halfspace; the triangle inequality
//! pays for the rest). The search therefore keeps, per stage, the grid nodes
//! in a thin band inside each boundary plus the "stay" candidates, and runs
//! an exact stage-by-stage shortest path over them.
//!
//! Rounding each optimal stop to a band node moves it by at most `h√d`, so the
//! grid optimum exceeds the true one by at most `(2k - 1)·L·h·√d`, with `L`
//! the Lipschitz constant of the cost with respect to ℓ₂. Grid paths are
//! feasible, so the grid optimum is never below the true one.
//!
//! A conjunction optimum can sit in a narrow corner of the accept region. If
//! some unit `u` has `wᵢ·u >= s` for every active normal, the ball of radius
//! `h√d/2` around `z + (h√d/2s)·u` is accepted and holds a node, so rounding
//! costs at most `L·(h√d/2)·(1 + 1/s)`. `s` is taken as the smallest such
//! width over all subsets of classifiers, which assumes the inactive ones
//! keep that ball clear (true once `h` is small against the region).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::error::{Result, ScreeningError};
use crate::geometry::{check_dim, FeatureVector, HalfspaceClassifier, Pipeline};

/// Per-axis step cap.
pub const MAX_STEPS_PER_AXIS: usize = 1000;
/// The total node count is capped at `NODE_CAP_PER_DIM^d`.
pub const NODE_CAP_PER_DIM: usize = 400;

/// Axis-aligned box sampled at spacing `resolution`, nodes at `lower + i·h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: f64,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: f64) -> Result<Self> {
        let grid = Self {
            lower,
            upper,
            resolution,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square box `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64, resolution: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d], resolution)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if d == 0 {
            return Err(ScreeningError::InvalidGrid("grid has no axes".into()));
        }
        if self.upper.len() != d {
            return Err(ScreeningError::InvalidGrid(format!(
                "lower has {d} coordinates, upper has {}",
                self.upper.len()
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(ScreeningError::InvalidGrid(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        for axis in 0..d {
            let (lo, hi) = (self.lower[axis], self.upper[axis]);
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(ScreeningError::InvalidGrid(format!(
                    "axis {axis}: need lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        let steps = self.steps();
        if let Some(axis) = steps.iter().position(|&s| s > MAX_STEPS_PER_AXIS) {
            return Err(ScreeningError::InvalidGrid(format!(
                "axis {axis} has {} steps, at most {MAX_STEPS_PER_AXIS} allowed",
                steps[axis]
            )));
        }
        let nodes = self.node_count();
        let cap = NODE_CAP_PER_DIM.pow(d as u32);
        if nodes > cap {
            return Err(ScreeningError::InvalidGrid(format!("{nodes} nodes exceed the cap of {cap}")));
        }
        Ok(())
    }

    /// Number of steps along each axis.
    pub fn steps(&self) -> Vec<usize> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| ((hi - lo) / self.resolution + 1e-9).floor() as usize)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.steps().iter().map(|s| s + 1).fold(1, usize::saturating_mul)
    }

    pub fn contains(&self, x: &FeatureVector) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] - 1e-12 && v <= self.upper[i] + 1e-12)
    }

    /// All nodes whose every coordinate lies within `[lo_i, hi_i]`.
    fn nodes_in(&self, lo: &[f64], hi: &[f64]) -> Vec<FeatureVector> {
        let d = self.dim();
        let h = self.resolution;
        let steps = self.steps();
        let mut ranges = Vec::with_capacity(d);
        for axis in 0..d {
            let first = ((lo[axis] - self.lower[axis]) / h).ceil().max(0.0) as usize;
            let last = ((hi[axis] - self.lower[axis]) / h).floor();
            if last < 0.0 {
                return Vec::new();
            }
            let last = (last as usize).min(steps[axis]);
            if first > last {
                return Vec::new();
            }
            ranges.push((first, last));
        }
        let mut out = Vec::new();
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            out.push(DVector::from_iterator(
                d,
                (0..d).map(|a| self.lower[a] + idx[a] as f64 * h),
            ));
            let mut axis = 0;
            loop {
                if axis == d {
                    return out;
                }
                if idx[axis] < ranges[axis].1 {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = ranges[axis].0;
                axis += 1;
            }
        }
    }
}

/// Grid optimum with the guaranteed gap to the continuous optimum.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub cost: f64,
    /// `x⁽⁰⁾ … x⁽ᵏ⁾` for sequential searches, `[x, z]` for conjunction searches.
    pub path: Vec<FeatureVector>,
    /// The continuous optimum lies in `[cost - error_bound, cost]`.
    pub error_bound: f64,
}

fn lipschitz(cost: &CostModel, d: usize) -> Result<(f64, f64)> {
    match (cost.l2_lipschitz(d), cost.l2_lower_factor(d)) {
        (Some(l), Some(m)) => Ok((l, m)),
        _ => Err(ScreeningError::Unsupported(format!(
            "the grid oracle needs a norm cost, got {}",
            cost.name()
        ))),
    }
}

fn check_inputs(pipeline: &Pipeline, x0: &FeatureVector, cost: &CostModel, grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    check_dim(pipeline.dim(), x0.len())?;
    check_dim(pipeline.dim(), grid.dim())?;
    if pipeline.dim() > 3 || pipeline.len() > 3 {
        return Err(ScreeningError::Unsupported(format!(
            "the grid oracle handles d <= 3 and k <= 3, got d = {} and k = {}",
            pipeline.dim(),
            pipeline.len()
        )));
    }
    if !grid.contains(x0) {
        return Err(ScreeningError::InvalidGrid("the search box must contain the agent".into()));
    }
    lipschitz(cost, pipeline.dim()).map(|_| ())
}

/// Grid nodes within the box `x0 ± radius` (clipped to the grid).
fn nodes_near(grid: &GridSpec, x0: &FeatureVector, radius: f64) -> Vec<FeatureVector> {
    let lo: Vec<f64> = x0.iter().map(|v| v - radius).collect();
    let hi: Vec<f64> = x0.iter().map(|v| v + radius).collect();
    grid.nodes_in(&lo, &hi)
}

/// Cheapest grid node accepted by every classifier, or `x` itself if accepted.
fn conjunction_search(
    classifiers: &[HalfspaceClassifier],
    x: &FeatureVector,
    cost: &CostModel,
    grid: &GridSpec,
) -> Option<(f64, FeatureVector)> {
    if classifiers.iter().all(|h| h.accepts(x)) {
        return Some((0.0, x.clone()));
    }
    let all = grid.nodes_in(&grid.lower, &grid.upper);
    all.into_par_iter()
        .filter(|q| classifiers.iter().all(|h| h.accepts(q)))
        .map(|q| (cost.cost(x, &q), q))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Grid search for the conjunction best response.
pub fn oracle_conjunction(
    pipeline: &Pipeline,
    x0: &FeatureVector,
    cost: &CostModel,
    grid: &GridSpec,
) -> Result<OracleResult> {
    check_inputs(pipeline, x0, cost, grid)?;
    let d = pipeline.dim();
    let (l, _) = lipschitz(cost, d)?;
    let normalized = pipeline.normalized();
    let (c, z) = conjunction_search(normalized.classifiers(), x0, cost, grid)
        .ok_or(ScreeningError::GridTooCoarse { stage: 1 })?;
    Ok(OracleResult {
        cost: c,
        path: vec![x0.clone(), z],
        error_bound: conjunction_bound(normalized.classifiers(), l, grid.resolution),
    })
}

fn conjunction_bound(normalized: &[HalfspaceClassifier], l: f64, h: f64) -> f64 {
    let d = normalized[0].dim();
    let s = corner_width(normalized);
    if s <= 0.0 {
        return f64::INFINITY;
    }
    l * 0.5 * h * (d as f64).sqrt() * (1.0 + 1.0 / s)
}

/// Smallest positive `max_{‖u‖=1} min_{i∈S} wᵢ·u` over subsets `S` of the
/// normals, 0 if there is none.
pub(crate) fn corner_width(normalized: &[HalfspaceClassifier]) -> f64 {
    let k = normalized.len();
    (1..1usize << k)
        .map(|mask| {
            let subset: Vec<&DVector<f64>> = (0..k).filter(|i| mask >> i & 1 == 1).map(|i| normalized[i].w()).collect();
            hull_min_norm(&subset)
        })
        .filter(|&s| s > 1e-12)
        .fold(f64::INFINITY, f64::min)
        .min(1.0)
}

/// Distance from the origin to the convex hull of `points` (few points only).
///
/// Equals the width above by minimax duality.
fn hull_min_norm(points: &[&DVector<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1..1usize << n {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let m = idx.len();
        // minimize ‖Σ λ_j p_j‖ on the affine hull: [G 1; 1ᵀ 0] [λ; ν] = [0; 1]
        let mut a = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[(r, c)] = points[i].dot(points[j]);
            }
            a[(r, m)] = 1.0;
            a[(m, r)] = 1.0;
        }
        rhs[m] = 1.0;
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if (0..m).any(|r| sol[r] < -1e-12) {
            continue;
        }
        let p = idx
            .iter()
            .enumerate()
            .fold(DVector::zeros(points[0].len()), |acc, (r, &i)| acc + points[i] * sol[r]);
        best = best.min(p.norm());
    }
    best
}

struct Stage {
    nodes: Vec<FeatureVector>,
    dist: Vec<f64>,
    /// Index into the previous stage's nodes.
    pred: Vec<usize>,
}

/// Grid search for the sequential best response.
pub fn oracle_sequential(
    pipeline: &Pipeline,
    x0: &FeatureVector,
    cost: &CostModel,
    grid: &GridSpec,
) -> Result<OracleResult> {
    check_inputs(pipeline, x0, cost, grid)?;
    let d = pipeline.dim();
    let k = pipeline.len();
    let (l, m) = lipschitz(cost, d)?;
    let normalized = pipeline.normalized();
    let h = normalized.classifiers();
    let step = grid.resolution * (d as f64).sqrt();
    let bound = (2 * k - 1) as f64 * l * step;

    // jumping straight into the joint accept set is one feasible grid path;
    // cheaper paths never leave the ball it defines
    let direct = conjunction_search(h, x0, cost, grid);
    let upper = direct.as_ref().map_or(f64::INFINITY, |(c, _)| *c);
    let radius = upper / m + step;
    let near = if radius.is_finite() {
        nodes_near(grid, x0, radius)
    } else {
        grid.nodes_in(&grid.lower, &grid.upper)
    };

    let mut stages = vec![Stage {
        nodes: vec![x0.clone()],
        dist: vec![0.0],
        pred: vec![0],
    }];
    for (i, hi) in h.iter().enumerate() {
        let prev = stages.last().unwrap();
        let mut nodes: Vec<FeatureVector> = Vec::new();
        let mut stay_from: Vec<Option<usize>> = Vec::new();
        for (j, q) in prev.nodes.iter().enumerate() {
            if hi.accepts(q) {
                nodes.push(q.clone());
                stay_from.push(Some(j));
            }
        }
        for q in &near {
            let margin = hi.margin(q);
            if hi.accepts(q) && margin <= 2.0 * step {
                nodes.push(q.clone());
                stay_from.push(None);
            }
        }
        // keeps the direct path representable so the pruning below is safe
        if let Some((_, z)) = &direct {
            nodes.push(z.clone());
            stay_from.push(None);
        }
        if nodes.is_empty() {
            return Err(ScreeningError::GridTooCoarse { stage: i + 1 });
        }
        let relaxed: Vec<(f64, usize)> = nodes
            .par_iter()
            .zip(&stay_from)
            .map(|(q, stay)| {
                let mut best = match stay {
                    Some(j) => (prev.dist[*j], *j),
                    None => (f64::INFINITY, 0),
                };
                for (j, p) in prev.nodes.iter().enumerate() {
                    if prev.dist[j] >= best.0 {
                        continue;
                    }
                    let c = prev.dist[j] + cost.cost(p, q);
                    if c < best.0 {
                        best = (c, j);
                    }
                }
                best
            })
            .collect();
        // nodes dearer than the direct path cannot be on an optimal one
        let keep: Vec<usize> = (0..nodes.len()).filter(|&j| relaxed[j].0 <= upper).collect();
        if keep.is_empty() {
            return Err(ScreeningError::GridTooCoarse { stage: i + 1 });
        }
        stages.push(Stage {
            nodes: keep.iter().map(|&j| nodes[j].clone()).collect(),
            dist: keep.iter().map(|&j| relaxed[j].0).collect(),
            pred: keep.iter().map(|&j| relaxed[j].1).collect(),
        });
    }

    let last = stages.last().unwrap();
    let (mut at, best) = last
        .dist
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, &c)| (j, c))
        .unwrap();
    let mut path = vec![FeatureVector::zeros(d); k + 1];
    for s in (0..=k).rev() {
        path[s] = stages[s].nodes[at].clone();
        at = stages[s].pred[at];
    }
    Ok(OracleResult {
        cost: best,
        path,
        error_bound: bound,
    })
}
