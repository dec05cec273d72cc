use std::f64::consts::PI;

use proptest::prelude::*;
use screening_core::defense::conservative_defense;
use screening_core::{best_response, feature_vector, CostModel, HalfspaceClassifier, Mode, Pipeline, SolverOptions};

fn pipeline(a1: f64, b1: f64, a2: f64, b2: f64, mode: Mode) -> Option<Pipeline> {
    if (a1 - a2).cos().abs() > 0.95 {
        return None;
    }
    let h1 = HalfspaceClassifier::from_slice(&[a1.cos(), a1.sin()], b1).unwrap();
    let h2 = HalfspaceClassifier::from_slice(&[a2.cos(), a2.sin()], b2).unwrap();
    Some(Pipeline::new(vec![h1, h2], mode).unwrap())
}

fn cost(p: &Pipeline, x: &[f64]) -> f64 {
    best_response(p, &feature_vector(x).unwrap(), &CostModel::L2, &SolverOptions::default())
        .unwrap()
        .total_cost()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // rescaling (w, b) by a positive factor leaves every decision unchanged
    #[test]
    fn cost_ignores_classifier_scale(
        a1 in 0.0..2.0 * PI, a2 in 0.0..2.0 * PI,
        b1 in -1.0..1.0f64, b2 in -1.0..1.0f64,
        s in 0.1..20.0f64,
        x in -2.0..2.0f64, y in -2.0..2.0f64,
        seq in any::<bool>(),
    ) {
        let mode = if seq { Mode::Sequential } else { Mode::Conjunction };
        let Some(p) = pipeline(a1, b1, a2, b2, mode) else { return Ok(()) };
        let scaled: Vec<_> = p.classifiers().iter()
            .map(|h| HalfspaceClassifier::new(h.w() * s, h.b() * s).unwrap())
            .collect();
        let q = Pipeline::new(scaled, mode).unwrap();
        prop_assert!((cost(&p, &[x, y]) - cost(&q, &[x, y])).abs() < 1e-6);
    }

    #[test]
    fn cost_is_translation_invariant(
        a1 in 0.0..2.0 * PI, a2 in 0.0..2.0 * PI,
        b1 in -1.0..1.0f64, b2 in -1.0..1.0f64,
        tx in -3.0..3.0f64, ty in -3.0..3.0f64,
        x in -2.0..2.0f64, y in -2.0..2.0f64,
    ) {
        let Some(p) = pipeline(a1, b1, a2, b2, Mode::Sequential) else { return Ok(()) };
        let moved: Vec<_> = p.classifiers().iter()
            .map(|h| HalfspaceClassifier::new(h.w().clone(), h.b() + h.w()[0] * tx + h.w()[1] * ty).unwrap())
            .collect();
        let q = Pipeline::new(moved, Mode::Sequential).unwrap();
        prop_assert!((cost(&p, &[x, y]) - cost(&q, &[x + tx, y + ty])).abs() < 1e-6);
    }

    // raising thresholds never makes passing cheaper
    #[test]
    fn larger_shift_costs_more(
        a1 in 0.0..2.0 * PI, a2 in 0.0..2.0 * PI,
        b1 in -1.0..1.0f64, b2 in -1.0..1.0f64,
        t1 in 0.0..1.0f64, dt in 0.0..1.0f64,
        x in -2.0..2.0f64, y in -2.0..2.0f64,
        seq in any::<bool>(),
    ) {
        let mode = if seq { Mode::Sequential } else { Mode::Conjunction };
        let Some(p) = pipeline(a1, b1, a2, b2, mode) else { return Ok(()) };
        let low = conservative_defense(&p, t1).unwrap();
        let high = conservative_defense(&p, t1 + dt).unwrap();
        prop_assert!(cost(high.shifted(), &[x, y]) >= cost(low.shifted(), &[x, y]) - 1e-6);
    }
}

#[test]
fn shift_by_tau_adds_tau_for_single_unit_classifier() {
    let h = HalfspaceClassifier::from_slice(&[0.6, 0.8], 0.5).unwrap();
    let p = Pipeline::new(vec![h], Mode::Sequential).unwrap();
    let d = conservative_defense(&p, 0.7).unwrap();
    let before = cost(&p, &[0.0, 0.0]);
    let after = cost(d.shifted(), &[0.0, 0.0]);
    assert!((before - 0.5).abs() < 1e-9);
    assert!((after - 1.2).abs() < 1e-9);
}
