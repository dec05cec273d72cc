//! Exact best responses for two classifiers in the plane under ℓ₂ cost.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ManipulationPlan, Method};
use crate::cost::CostModel;
use crate::error::{Result, ScreeningError};
use crate::geometry::{
    angle_between, check_dim, homogenize, FeatureVector, HalfspaceClassifier, Mode, Pipeline,
    BOUNDARY_TOL,
};
use crate::polyhedron::{self, Projection};

/// Behaviour zone of an agent facing two classifiers in sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionLabel {
    /// Already passes the first test: stay, then project onto the second.
    R1,
    /// Zig-zag along the first boundary, then project onto the second.
    R2,
    /// Move straight to the intersection of the two boundaries.
    R3,
    /// A single projection onto the first test also passes the second.
    R4,
    AlreadyAccepted,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::R1 => "R1",
            RegionLabel::R2 => "R2",
            RegionLabel::R3 => "R3",
            RegionLabel::R4 => "R4",
            RegionLabel::AlreadyAccepted => "AlreadyAccepted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "R1" => RegionLabel::R1,
            "R2" => RegionLabel::R2,
            "R3" => RegionLabel::R3,
            "R4" => RegionLabel::R4,
            "AlreadyAccepted" => RegionLabel::AlreadyAccepted,
            _ => return None,
        })
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Projection onto `w·y >= 0` treating points within the boundary tolerance as inside.
fn project(w: &DVector<f64>, x: &FeatureVector) -> (FeatureVector, f64) {
    let s = w.dot(x);
    if s >= -BOUNDARY_TOL {
        (x.clone(), 0.0)
    } else {
        (x - w * s, -s)
    }
}

fn accepts(w: &DVector<f64>, x: &FeatureVector) -> bool {
    w.dot(x) >= -BOUNDARY_TOL
}

fn check_planar(h1: &HalfspaceClassifier, h2: &HalfspaceClassifier, x: &FeatureVector) -> Result<()> {
    check_dim(2, h1.dim())?;
    check_dim(2, h2.dim())?;
    check_dim(2, x.len())
}

/// Conjunction best response: a projection onto one accept set, or straight
/// to the intersection of the boundaries.
pub fn conjunction_closed_form_2d(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x: &FeatureVector,
) -> Result<ManipulationPlan> {
    check_planar(h1, h2, x)?;
    let (shift, g1, g2) = match homogenize(h1, h2) {
        Ok(parts) => parts,
        Err(ScreeningError::ParallelClassifiers(_)) => return parallel_conjunction(h1, h2, x),
        Err(e) => return Err(e),
    };
    let xh = x + &shift;
    let (w1, w2) = (g1.w(), g2.w());
    let zh = if accepts(w1, &xh) && accepts(w2, &xh) {
        xh.clone()
    } else {
        let (p2, _) = project(w2, &xh);
        let (p1, _) = project(w1, &xh);
        if accepts(w1, &p2) {
            p2
        } else if accepts(w2, &p1) {
            p1
        } else {
            DVector::zeros(2)
        }
    };
    let z = zh - shift;
    Ok(ManipulationPlan::from_path(
        vec![x.clone(), z],
        &CostModel::L2,
        Method::ClosedForm2D,
    ))
}

/// Parallel boundaries: the joint accept set is a halfspace or a slab, and the
/// best response is the projection onto it.
fn parallel_conjunction(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x: &FeatureVector,
) -> Result<ManipulationPlan> {
    let pipeline = Pipeline::new(vec![h1.normalize(), h2.normalize()], Mode::Conjunction)?;
    let (a, c) = pipeline.constraint_matrix();
    match polyhedron::project(x, &a, &c) {
        Projection::Point(z) => Ok(ManipulationPlan::from_path(
            vec![x.clone(), z],
            &CostModel::L2,
            Method::ClosedForm2D,
        )),
        _ => Err(ScreeningError::InfeasibleRegion),
    }
}

struct SequentialSolution {
    region: RegionLabel,
    /// Homogeneous coordinates.
    x1: FeatureVector,
    x2: FeatureVector,
}

fn solve_sequential(
    w1: &DVector<f64>,
    w2: &DVector<f64>,
    theta: f64,
    x0: &FeatureVector,
) -> SequentialSolution {
    if accepts(w1, x0) {
        let (x2, _) = project(w2, x0);
        let region = if accepts(w2, x0) {
            RegionLabel::AlreadyAccepted
        } else {
            RegionLabel::R1
        };
        return SequentialSolution {
            region,
            x1: x0.clone(),
            x2,
        };
    }
    let (p1, d1) = project(w1, x0);
    if accepts(w2, &p1) {
        return SequentialSolution {
            region: RegionLabel::R4,
            x1: p1.clone(),
            x2: p1,
        };
    }
    let p_norm = p1.norm();
    let (sin, cos) = theta.sin_cos();
    // |tan θ| <= ‖P‖ / d, written without dividing by cos θ; ties go to the zig-zag
    if d1 * sin > p_norm * cos.abs() {
        let origin = DVector::zeros(2);
        SequentialSolution {
            region: RegionLabel::R3,
            x1: origin.clone(),
            x2: origin,
        }
    } else {
        let scale = 1.0 - d1 * sin / (p_norm * cos.abs());
        let x1 = p1 * scale;
        let (x2, _) = project(w2, &x1);
        SequentialSolution {
            region: RegionLabel::R2,
            x1,
            x2,
        }
    }
}

fn sequential_parts(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x0: &FeatureVector,
) -> Result<(FeatureVector, SequentialSolution)> {
    check_planar(h1, h2, x0)?;
    let (shift, g1, g2) = homogenize(h1, h2)?;
    let theta = angle_between(&g1, &g2)?;
    let xh = x0 + &shift;
    let sol = solve_sequential(g1.w(), g2.w(), theta, &xh);
    Ok((shift, sol))
}

/// Sequential best response for two non-parallel classifiers in the plane.
pub fn sequential_closed_form_2d(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x0: &FeatureVector,
) -> Result<ManipulationPlan> {
    let (shift, sol) = sequential_parts(h1, h2, x0)?;
    let path = vec![x0.clone(), sol.x1 - &shift, sol.x2 - &shift];
    Ok(ManipulationPlan::from_path(path, &CostModel::L2, Method::ClosedForm2D))
}

/// Which branch of the sequential closed form applies to `x0`.
pub fn classify_region(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x0: &FeatureVector,
) -> Result<RegionLabel> {
    Ok(sequential_parts(h1, h2, x0)?.1.region)
}

/// Sequential closed-form plan together with its region label.
pub fn sequential_closed_form_with_region(
    h1: &HalfspaceClassifier,
    h2: &HalfspaceClassifier,
    x0: &FeatureVector,
) -> Result<(ManipulationPlan, RegionLabel)> {
    let (shift, sol) = sequential_parts(h1, h2, x0)?;
    let path = vec![x0.clone(), sol.x1 - &shift, sol.x2 - &shift];
    Ok((
        ManipulationPlan::from_path(path, &CostModel::L2, Method::ClosedForm2D),
        sol.region,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::feature_vector;

    fn v(c: &[f64]) -> FeatureVector {
        feature_vector(c).unwrap()
    }

    fn h(w: &[f64], b: f64) -> HalfspaceClassifier {
        HalfspaceClassifier::from_slice(w, b).unwrap()
    }

    fn example1() -> (HalfspaceClassifier, HalfspaceClassifier) {
        (h(&[-3.0, 4.0], 1.0), h(&[1.0, 0.0], 1.0))
    }

    #[test]
    fn example1_conjunction_goes_to_corner() {
        let (h1, h2) = example1();
        let plan = conjunction_closed_form_2d(&h1, &h2, &v(&[0.0, 0.0])).unwrap();
        let z = &plan.path()[1];
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
        assert!((plan.total_cost() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn example1_sequential_zigzag() {
        let (h1, h2) = example1();
        let (plan, region) = sequential_closed_form_with_region(&h1, &h2, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(region, RegionLabel::R2);
        assert!((plan.total_cost() - 31.0 / 25.0).abs() < 1e-12);
        let x1 = &plan.path()[1];
        let x2 = &plan.path()[2];
        assert!((x1[0] - 7.0 / 75.0).abs() < 1e-12 && (x1[1] - 8.0 / 25.0).abs() < 1e-12);
        assert!((x2[0] - 1.0).abs() < 1e-12 && (x2[1] - 8.0 / 25.0).abs() < 1e-12);
        assert!((4.0 * x1[1] - 3.0 * x1[0] - 1.0).abs() < 1e-12);
        assert!((plan.leg_costs()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((plan.leg_costs()[1] - 68.0 / 75.0).abs() < 1e-12);
    }

    #[test]
    fn homogenized_example1_first_stop() {
        // in shifted coordinates x1 = (17/21)·P_{w1}(x0)
        let (shift, sol) = sequential_parts(&example1().0, &example1().1, &v(&[0.0, 0.0])).unwrap();
        let p = v(&[-28.0 / 25.0, -21.0 / 25.0]) * (17.0 / 21.0);
        assert!((&sol.x1 - &p).norm() < 1e-12);
        assert!((&shift - v(&[-1.0, -1.0])).norm() < 1e-12);
    }

    #[test]
    fn accepted_agent_stays_put() {
        let (h1, h2) = example1();
        let x = v(&[3.0, 5.0]);
        let c = conjunction_closed_form_2d(&h1, &h2, &x).unwrap();
        let s = sequential_closed_form_2d(&h1, &h2, &x).unwrap();
        assert_eq!(c.total_cost(), 0.0);
        assert_eq!(s.total_cost(), 0.0);
        assert_eq!(classify_region(&h1, &h2, &x).unwrap(), RegionLabel::AlreadyAccepted);
    }

    #[test]
    fn conjunction_single_projection_case() {
        // h1: x2 >= 0, h2: x1 >= 0; P_{w1}(5,-1) = (5,0) passes h2
        let plan = conjunction_closed_form_2d(&h(&[0.0, 1.0], 0.0), &h(&[1.0, 0.0], 0.0), &v(&[5.0, -1.0]))
            .unwrap();
        assert!((plan.total_cost() - 1.0).abs() < 1e-15);
        assert_eq!(plan.path()[1], v(&[5.0, 0.0]));
    }

    #[test]
    fn first_test_passed_is_r1() {
        let (h1, h2) = example1();
        // passes h1 (4·2 - 0 >= 1), fails h2
        let x = v(&[0.0, 2.0]);
        let (plan, region) = sequential_closed_form_with_region(&h1, &h2, &x).unwrap();
        assert_eq!(region, RegionLabel::R1);
        assert!((plan.total_cost() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_normals_match_conjunction() {
        let h1 = h(&[0.0, 1.0], 0.0);
        let h2 = h(&[1.0, 0.0], 0.0);
        for x in [[-1.0, -1.0], [-3.0, -0.5], [2.0, -1.0], [-1.0, 4.0], [-0.2, -7.0]] {
            let x = v(&x);
            let s = sequential_closed_form_2d(&h1, &h2, &x).unwrap();
            let c = conjunction_closed_form_2d(&h1, &h2, &x).unwrap();
            assert!((s.total_cost() - c.total_cost()).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_classifiers() {
        let h1 = h(&[1.0, 0.0], 1.0);
        let h2 = h(&[2.0, 0.0], 4.0);
        assert!(matches!(
            sequential_closed_form_2d(&h1, &h2, &v(&[0.0, 0.0])),
            Err(ScreeningError::ParallelClassifiers(_))
        ));
        let plan = conjunction_closed_form_2d(&h1, &h2, &v(&[0.0, 3.0])).unwrap();
        assert!((plan.total_cost() - 2.0).abs() < 1e-12);
        let slab_empty = conjunction_closed_form_2d(&h(&[1.0, 0.0], 1.0), &h(&[-1.0, 0.0], 0.0), &v(&[0.0, 0.0]));
        assert!(matches!(slab_empty, Err(ScreeningError::InfeasibleRegion)));
    }
}
