//! Agent populations and best-response rasters over the plane.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::defense::BUDGET_TOL;
use crate::error::{Result, ScreeningError};
use crate::geometry::{check_dim, homogenize, FeatureVector, HalfspaceClassifier};
use crate::oracle::GridSpec;
use crate::response::{conjunction_closed_form_2d, sequential_closed_form_with_region, RegionLabel};

/// Cells per axis of the default raster.
pub const DEFAULT_RASTER_CELLS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterCell {
    /// Cell center.
    pub x: f64,
    pub y: f64,
    pub c_conj: f64,
    pub c_seq: f64,
    pub region: RegionLabel,
    pub within_budget_conj: bool,
    pub within_budget_seq: bool,
}

/// Best-response costs at the centers of a grid of square cells.
///
/// Cell `(i, j)` covers `[lower + i·h, lower + (i+1)·h]` on each axis and is
/// evaluated at its center only, so the raster is a picture, not a bound.
/// Cells are stored row-major: `y` index outer, `x` index inner.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRaster {
    pub grid: GridSpec,
    pub tau: f64,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<RasterCell>,
}

impl RegionRaster {
    pub fn cell(&self, i: usize, j: usize) -> &RasterCell {
        &self.cells[j * self.nx + i]
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn count_seq(&self) -> usize {
        self.cells.iter().filter(|c| c.within_budget_seq).count()
    }

    pub fn count_conj(&self) -> usize {
        self.cells.iter().filter(|c| c.within_budget_conj).count()
    }
}

/// Fills a raster with both closed forms.
pub fn rasterize(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    tau: f64,
    grid: &GridSpec,
) -> Result<RegionRaster> {
    if tau.is_nan() || tau < 0.0 {
        return Err(ScreeningError::NegativeBudget(tau));
    }
    grid.validate()?;
    check_dim(2, grid.dim())?;
    // fail early on parallel or misdimensioned classifiers
    homogenize(h1, h2)?;
    let steps = grid.steps();
    let (nx, ny) = (steps[0], steps[1]);
    if nx == 0 || ny == 0 {
        return Err(ScreeningError::InvalidGrid("the raster has no cells".into()));
    }
    let h = grid.resolution;
    let rows: Vec<Vec<RasterCell>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = grid.lower[1] + (j as f64 + 0.5) * h;
            (0..nx)
                .map(|i| {
                    let x = grid.lower[0] + (i as f64 + 0.5) * h;
                    let p = FeatureVector::from_vec(vec![x, y]);
                    let conj = conjunction_closed_form_2d(h1, h2, &p)?.total_cost();
                    let (seq, region) = sequential_closed_form_with_region(h1, h2, &p)?;
                    let seq = seq.total_cost();
                    Ok(RasterCell {
                        x,
                        y,
                        c_conj: conj,
                        c_seq: seq,
                        region,
                        within_budget_conj: conj <= tau + BUDGET_TOL,
                        within_budget_seq: seq <= tau + BUDGET_TOL,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(RegionRaster {
        grid: grid.clone(),
        tau,
        nx,
        ny,
        cells: rows.into_iter().flatten().collect(),
    })
}

/// Square box centered on the boundary intersection with half-width
/// `max(3τ, 1)`, split into 200 × 200 cells.
pub fn default_raster_grid(h1: &HalfspaceClassifier, h2: &HalfspaceClassifier, tau: f64) -> Result<GridSpec> {
    let (shift, _, _) = homogenize(h1, h2)?;
    let half = (3.0 * tau).max(1.0);
    let center = -shift;
    GridSpec::new(
        vec![center[0] - half, center[1] - half],
        vec![center[0] + half, center[1] + half],
        2.0 * half / DEFAULT_RASTER_CELLS as f64,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum PopulationKind {
    /// Regular lattice with `n^(1/d)` points per axis, corners included.
    GridFan { lower: Vec<f64>, upper: Vec<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub kind: PopulationKind,
    pub n: usize,
}

impl PopulationSpec {
    pub fn dim(&self) -> usize {
        match &self.kind {
            PopulationKind::GridFan { lower, .. } | PopulationKind::UniformBox { lower, .. } => lower.len(),
            PopulationKind::Gaussian { mean, .. } => mean.len(),
        }
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.is_empty() {
        return Err(ScreeningError::EmptyVector);
    }
    check_dim(lower.len(), upper.len())?;
    for (lo, hi) in lower.iter().zip(upper) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(ScreeningError::InvalidArgument(format!("invalid box side [{lo}, {hi}]")));
        }
    }
    Ok(())
}

fn lattice(lower: &[f64], upper: &[f64], n: usize) -> Result<Vec<FeatureVector>> {
    let d = lower.len();
    let m = (n as f64).powf(1.0 / d as f64).round() as usize;
    if m.checked_pow(d as u32) != Some(n) {
        return Err(ScreeningError::InvalidArgument(format!(
            "a {d}-dimensional lattice needs a perfect {d}-th power of points, got {n}"
        )));
    }
    let coord = |axis: usize, i: usize| {
        if m == 1 {
            0.5 * (lower[axis] + upper[axis])
        } else {
            lower[axis] + (upper[axis] - lower[axis]) * i as f64 / (m - 1) as f64
        }
    };
    Ok((0..n)
        .map(|mut idx| {
            let mut p = DVector::zeros(d);
            for (axis, v) in p.iter_mut().enumerate() {
                *v = coord(axis, idx % m);
                idx /= m;
            }
            p
        })
        .collect())
}

/// Factor `L` with `L Lᵀ = Σ` for a positive semi-definite `Σ`.
fn covariance_factor(covariance: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if covariance.len() != d || covariance.iter().any(|row| row.len() != d) {
        return Err(ScreeningError::DimensionMismatch {
            expected: d,
            found: covariance.len(),
        });
    }
    let sigma = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(ScreeningError::NonFinite("covariance"));
    }
    let scale = sigma.amax().max(1e-300);
    if (&sigma - sigma.transpose()).amax() > 1e-12 * scale {
        return Err(ScreeningError::NotPositiveDefinite("covariance is not symmetric".into()));
    }
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-12 * scale {
        return Err(ScreeningError::NotPositiveDefinite(format!(
            "covariance has eigenvalue {:e}",
            eig.eigenvalues.min()
        )));
    }
    if let Some(ch) = sigma.cholesky() {
        return Ok(ch.l());
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Draws `n` agents; identical specs and seeds give identical populations.
pub fn sample_population(spec: &PopulationSpec, seed: u64) -> Result<Vec<FeatureVector>> {
    if spec.n == 0 {
        return Err(ScreeningError::InvalidArgument("population size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &spec.kind {
        PopulationKind::GridFan { lower, upper } => {
            check_box(lower, upper)?;
            lattice(lower, upper, spec.n)
        }
        PopulationKind::UniformBox { lower, upper } => {
            check_box(lower, upper)?;
            Ok((0..spec.n)
                .map(|_| {
                    DVector::from_iterator(
                        lower.len(),
                        lower.iter().zip(upper).map(|(&lo, &hi)| rng.random_range(lo..=hi)),
                    )
                })
                .collect())
        }
        PopulationKind::Gaussian { mean, covariance } => {
            if mean.is_empty() {
                return Err(ScreeningError::EmptyVector);
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(ScreeningError::NonFinite("mean"));
            }
            let d = mean.len();
            let factor = covariance_factor(covariance, d)?;
            let mu = DVector::from_column_slice(mean);
            Ok((0..spec.n)
                .map(|_| {
                    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    &mu + &factor * z
                })
                .collect())
        }
    }
}
