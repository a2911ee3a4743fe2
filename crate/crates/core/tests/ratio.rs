mod common;

use common::*;
use nalgebra::DMatrix;
use structhinf::hinf::HinfOptions;
use structhinf::ratio::*;
use structhinf::sysmodel::{GainExpansion, StateSpace};

fn hopts() -> HinfOptions {
    HinfOptions::default()
}

/// Peak gain of the scalar loop `x' = (k - 1) x + w`, `z = (x; k x)`, by
/// the frequency-grid oracle.
fn scalar_loop_norm(k: f64) -> f64 {
    let ss = StateSpace::new(m(&[&[k - 1.0]]), m(&[&[1.0]]), m(&[&[1.0], &[k]]), DMatrix::zeros(2, 1)).unwrap();
    grid_norm(&ss, 400)
}

#[test]
fn zero_over_zero_is_one() {
    assert_eq!(ratio_of(0.0, 0.0), 1.0);
    assert_eq!(ratio_of(1.0, 0.0), f64::INFINITY);
    assert_eq!(ratio_of(3.0, 2.0), 1.5);
}

#[test]
fn scalar_baseline_matches_line_search() {
    let (sys, _) = scalar_plant(&["1"], &["1"], false);
    // Golden-section line search over k in [-100, 0].
    let (mut a, mut b) = (-100.0f64, 0.0f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let (c, d) = (b - r * (b - a), a + r * (b - a));
        if scalar_loop_norm(c) < scalar_loop_norm(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let k_line = 0.5 * (a + b);
    let j_line = scalar_loop_norm(k_line);
    assert!((k_line + 1.0).abs() < 1e-3 && (j_line - 0.5f64.sqrt()).abs() < 1e-6);

    let base = baseline_optimal(&sys, &[0.0], &[], &hopts(), &BaselineOptions::default()).unwrap();
    assert!((base.j - j_line).abs() <= 1e-3, "{} vs {j_line}", base.j);
    assert!(base.starts >= 1);
}

#[test]
fn baseline_without_stabilizing_start_fails() {
    let (sys, _) = scalar_plant(&["1", "a"], &["1"], true);
    // A hopeless random search: zero restarts and an unstable supplied start
    // at the most unstable parameter.
    let opts = BaselineOptions {
        restarts: 0,
        ..BaselineOptions::default()
    };
    let err = baseline_optimal(&sys, &[1.0], &[DMatrix::from_element(1, 1, 5.0)], &hopts(), &opts);
    assert!(err.is_err());
}

#[test]
fn constant_problem_has_constant_baseline() {
    let (sys, _) = scalar_plant(&["1", "a"], &["1"], false);
    let js: Vec<f64> = sys
        .bounds()
        .grid(5)
        .iter()
        .map(|a| baseline_optimal(&sys, a, &[], &hopts(), &BaselineOptions::default()).unwrap().j)
        .collect();
    for j in &js {
        assert!((j - js[0]).abs() <= 1e-3, "{js:?}");
    }
}

#[test]
fn self_ratio_is_one() {
    let (sys, g0) = scalar_plant(&["1", "a"], &["1"], false);
    let k = baseline_optimal(&sys, &[0.0], &[], &hopts(), &BaselineOptions::default()).unwrap().gain;
    let g = GainExpansion {
        coeffs: vec![k],
        ..g0
    };
    let rep = competitive_ratio(&sys, &g, &sys, None, 5, &hopts(), &BaselineOptions::default()).unwrap();
    assert!(rep.r >= 1.0 && rep.r <= 1.0 + 1e-3, "{}", rep.r);
    assert!(rep.records.iter().all(|r| r.flag.is_none()));
}

#[test]
fn ratio_rejects_single_point_grid() {
    let (sys, g0) = scalar_plant(&["1"], &["1"], false);
    assert!(competitive_ratio(&sys, &g0, &sys, None, 1, &hopts(), &BaselineOptions::default()).is_err());
}

#[test]
fn baseline_dominates_structured_strategy() {
    let (sys, g0) = example1(true, false);
    let (sys_full, g0_full) = example1(true, true);
    let rep = competitive_ratio(&sys, &g0, &sys_full, Some(&g0_full), 3, &hopts(), &BaselineOptions::default()).unwrap();
    for rec in &rep.records {
        assert!(rec.flag.is_none());
        assert!(rec.j_baseline <= rec.j_strategy + 1e-6, "{rec:?}");
        assert!(rec.ratio >= 1.0);
    }
}

#[test]
fn nested_grids_never_decrease_ratio_and_reproduce() {
    let (sys, g0) = example1(false, false);
    let g = reference_gain(&sys, &g0);
    let (sys_full, g0_full) = example1(true, true);
    let opts = BaselineOptions::default();
    let coarse = competitive_ratio(&sys, &g, &sys_full, Some(&g0_full), 3, &hopts(), &opts).unwrap();
    let fine = competitive_ratio(&sys, &g, &sys_full, Some(&g0_full), 5, &hopts(), &opts).unwrap();
    assert!(fine.r >= coarse.r, "{} < {}", fine.r, coarse.r);
    for c in &coarse.records {
        let f = fine.records.iter().find(|f| f.alpha == c.alpha).unwrap();
        assert_eq!(c, f);
    }
    let again = competitive_ratio(&sys, &g, &sys_full, Some(&g0_full), 3, &hopts(), &opts).unwrap();
    assert_eq!(coarse, again);
}
