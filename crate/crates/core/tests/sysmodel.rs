mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use structhinf::hinf::Frequency;
use structhinf::subgrad::build_gain_aug;
use structhinf::sysmodel::*;
use structhinf::Error;

#[test]
fn example1_plant_at_origin() {
    let (sys, _) = example1(false, false);
    let mats = sys.eval_matrices(&[0.0, 0.0]).unwrap();
    assert_eq!(mats.a, m(&[&[-2.0, 0.1], &[0.3, -1.0]]));
}

#[test]
fn example1_plant_at_unit_a1() {
    let (sys, _) = example1(false, false);
    let a = sys.eval_matrices(&[1.0, 0.0]).unwrap().a;
    assert_eq!(a[(0, 0)], -1.0);
    assert!((a[(0, 1)] - (0.1 + 0.4 * 1f64.sin())).abs() < 1e-15);
}

#[test]
fn platoon_drag_term() {
    let (sys, _) = platoon(&[vec![0], vec![1], vec![2]]);
    let a = sys.eval_matrices(&[1.0, 1.0, 1.0]).unwrap().a;
    assert!((a[(0, 0)] + 0.1).abs() < 1e-15);
}

#[test]
fn outside_box_is_an_error() {
    let (sys, g) = example1(false, false);
    assert!(matches!(sys.eval_matrices(&[1.5, 0.0]), Err(Error::OutOfBox { .. })));
    assert!(closed_loop(&sys, &g, &[0.0, -2.0]).is_err());
}

#[test]
fn initial_strategy_is_constant() {
    let (_, g) = example1(false, false);
    for a in [[0.0, 0.0], [0.7, -0.3], [-1.0, 1.0]] {
        assert_eq!(eval_strategy(&g, &a), m(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, -0.5]]));
    }
}

#[test]
fn reference_strategy_at_unit_a1() {
    let (sys, g) = example1(false, false);
    let row = [-0.1892, -1.008, 0.0];
    let mut c = vec![DMatrix::zeros(2, 3); 4];
    for l in 0..3 {
        for j in 0..3 {
            c[l][(0, j)] = row[j];
        }
    }
    c[0][(1, 2)] = -7.107;
    c[3][(1, 2)] = 6.607;
    let gs = strategy_for(&sys, g.eta.clone(), c).unwrap();
    let k = eval_strategy(&gs, &[1.0, 0.0]);
    for j in 0..2 {
        assert!((k[(0, j)] - 3.0 * row[j]).abs() < 1e-12);
    }
}

#[test]
fn zero_strategy_gives_open_loop() {
    let (sys, g) = example1(false, false);
    let z = GainExpansion::zeros(g.eta.clone(), g.masks.clone());
    let cl = closed_loop(&sys, &z, &[0.0, 0.0]).unwrap();
    assert_eq!(cl.a, sys.eval_matrices(&[0.0, 0.0]).unwrap().a);
}

#[test]
fn platoon_open_loop_has_double_pole_at_zero() {
    let (sys, g) = platoon(&[vec![0], vec![1], vec![2]]);
    let z = GainExpansion::zeros(g.eta.clone(), g.masks.clone());
    let cl = closed_loop(&sys, &z, &[0.7, 0.8, 0.9]).unwrap();
    let eigs = cl.a.clone().complex_eigenvalues();
    let zeros = eigs.iter().filter(|z| z.norm() < 1e-12).count();
    assert_eq!(zeros, 2);
}

#[test]
fn example1_masks_match_starred_pattern() {
    let (_, g) = example1(false, false);
    assert_eq!(g.masks[0], m(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]));
    assert_eq!(g.masks[1], m(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]));
    assert_eq!(g.masks[2], m(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]));
    assert_eq!(g.masks[3], m(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]));
}

#[test]
fn complete_design_graph_frees_every_diagonal_block() {
    let (_, g) = example1(false, true);
    for mask in &g.masks {
        assert_eq!(mask, &m(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]));
    }
}

#[test]
fn platoon_local_masks() {
    let (_, g) = platoon(&[vec![0], vec![1], vec![2]]);
    for l in [1, 2] {
        let free: Vec<(usize, usize)> = (0..3)
            .flat_map(|i| (0..11).map(move |j| (i, j)))
            .filter(|&(i, j)| g.masks[l][(i, j)] == 1.0)
            .collect();
        assert_eq!(free, vec![(0, 0), (0, 1), (0, 2)]);
    }
}

#[test]
fn measurement_outside_control_graph_is_rejected() {
    let p = names(&["a"]);
    let xi = structhinf::basis::BasisSet::new(structhinf::basis::BasisRole::Plant, &p, &["1"], &[0.0], &[1.0]).unwrap();
    let partition = Partition::new(vec![dims(1, 1, 1, 1, 1), dims(1, 1, 1, 1, 0)]).unwrap();
    let term = PlantTerm {
        a: -DMatrix::identity(2, 2),
        b_w: DMatrix::identity(2, 2),
        b_u: DMatrix::identity(2, 2),
        c_y: m(&[&[1.0, 1.0], &[0.0, 1.0]]),
        d_yw: DMatrix::zeros(2, 2),
    };
    let perf = Performance {
        c_z: DMatrix::identity(2, 2),
        d_zw: DMatrix::zeros(2, 2),
        d_zu: DMatrix::zeros(2, 2),
    };
    let err = ParamSystem::new(
        xi,
        vec![term],
        perf,
        partition,
        Graph::self_loops(GraphRole::Control, 2),
        Graph::self_loops(GraphRole::Design, 2),
        ParamBox::new(p, vec![0.0], vec![1.0]).unwrap(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Structure { .. }), "{err}");
}

#[test]
fn validation_flags_missing_regularity_only_as_warning() {
    let (sys, _) = example1(false, false);
    let r = validate_system(&sys, &ValidateOptions::default()).unwrap();
    assert!(r.structure_ok);
    assert!(!r.dyw_coisometric);
    assert!(r.dzu_orthonormal);
    assert!(!r.warnings.is_empty());
}

#[test]
fn platoon_validates() {
    let (sys, _) = platoon(&[vec![0], vec![1], vec![2]]);
    let r = validate_system(&sys, &ValidateOptions::default()).unwrap();
    assert!(r.structure_ok && r.stabilizable && r.detectable);
}

#[test]
fn projection_examples() {
    let (_, g) = example1(false, false);
    let ones = GainExpansion {
        eta: g.eta.clone(),
        coeffs: vec![DMatrix::from_element(2, 3, 1.0); 4],
        masks: g.masks.clone(),
    };
    let p = project_gains(&ones, &g.masks);
    assert_eq!(p.coeffs, g.masks);
    assert_eq!(project_gains(&g, &g.masks).coeffs, g.coeffs);

    let b = ParamBox::new(names(&["a1", "a2"]), vec![-1.0; 2], vec![1.0; 2]).unwrap();
    assert_eq!(project_params(&[2.0, 0.0], &b), vec![1.0, 0.0]);
    assert_eq!(project_params(&[0.3, -0.4], &b), vec![0.3, -0.4]);
}

#[test]
fn clamp_is_the_nearest_box_point() {
    let b = ParamBox::new(names(&["x", "y"]), vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap();
    let mut r = rng(3);
    let grid = b.grid(201);
    for _ in 0..50 {
        let q = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let p = project_params(&q, &b);
        let d = |a: &[f64]| ((a[0] - q[0]).powi(2) + (a[1] - q[1]).powi(2)).sqrt();
        let brute = grid.iter().map(|g| d(g)).fold(f64::INFINITY, f64::min);
        assert!(d(&p) <= brute + 1e-12);
    }
}

#[test]
fn projection_is_nonexpansive() {
    let (_, g) = example1(false, false);
    let mut r = rng(4);
    for _ in 0..50 {
        let mk = |r: &mut _| GainExpansion {
            eta: g.eta.clone(),
            coeffs: (0..4).map(|_| uniform(r, 2, 3) * 3.0).collect(),
            masks: g.masks.clone(),
        };
        let (x, y) = (mk(&mut r), mk(&mut r));
        let (px, py) = (project_gains(&x, &g.masks), project_gains(&y, &g.masks));
        assert!(px.distance(&py) <= x.distance(&y) + 1e-12);
    }
}

#[test]
fn gain_augmented_realization_reproduces_closed_loop() {
    let (sys, g0) = example1(false, false);
    let mut r = rng(5);
    for _ in 0..5 {
        let g = GainExpansion {
            eta: g0.eta.clone(),
            coeffs: (0..4).map(|_| uniform(&mut r, 2, 3).component_mul(&g0.masks[0])).collect(),
            masks: g0.masks.clone(),
        };
        let g = project_gains(&g, &g0.masks);
        let a = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let cl = closed_loop(&sys, &g, &a).unwrap();
        let aug = build_gain_aug(&sys, &g, &a).unwrap();
        for _ in 0..20 {
            let w = 10f64.powf(r.random_range(-2.0..2.0));
            let (t, _, _) = aug.blocks(Frequency::Finite(w)).unwrap();
            let direct = response(&cl, w);
            let err = (&t - &direct).norm() / direct.norm().max(1e-12);
            assert!(err <= 1e-10, "{err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn strategies_stay_block_diagonal(seed in any::<u64>(), a1 in -1.0f64..1.0, a2 in -1.0f64..1.0) {
        let (sys, g0) = example1(true, true);
        let mut r = rng(seed);
        let g = GainExpansion {
            eta: g0.eta.clone(),
            coeffs: (0..4).map(|_| uniform(&mut r, 2, 4)).collect(),
            masks: g0.masks.clone(),
        };
        let g = project_gains(&g, &g0.masks);
        let k = eval_strategy(&g, &[a1, a2]);
        let p = sys.partition();
        prop_assert!(is_block_diagonal(&k, &p.input_ranges(), &p.output_ranges()));
    }

    #[test]
    fn projections_are_idempotent(seed in any::<u64>(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let (sys, g0) = example1(false, false);
        let mut r = rng(seed);
        let g = GainExpansion {
            eta: g0.eta.clone(),
            coeffs: (0..4).map(|_| uniform(&mut r, 2, 3)).collect(),
            masks: g0.masks.clone(),
        };
        let once = project_gains(&g, &g0.masks);
        let twice = project_gains(&once, &g0.masks);
        prop_assert_eq!(&once.coeffs, &twice.coeffs);
        let p1 = project_params(&[x, y], sys.bounds());
        prop_assert_eq!(project_params(&p1, sys.bounds()), p1);
    }

    #[test]
    fn measurements_respect_control_graph(a1 in 0.5f64..1.0, a2 in 0.5f64..1.0, a3 in 0.5f64..1.0) {
        let (sys, _) = platoon(&[vec![0], vec![1], vec![2]]);
        let mats = sys.eval_matrices(&[a1, a2, a3]).unwrap();
        let p = sys.partition();
        let (rows, cols) = (p.output_ranges(), p.state_ranges());
        for i in 0..3 {
            for j in 0..3 {
                if !sys.control_graph().has(i, j) {
                    let blk = mats.c_y.view((rows[i].start, cols[j].start), (rows[i].len(), cols[j].len()));
                    prop_assert!(blk.iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn plant_is_linear_in_coefficients(c in -3.0f64..3.0, a1 in -1.0f64..1.0, a2 in -1.0f64..1.0) {
        let (sys, _) = example1(false, false);
        let scaled: Vec<PlantTerm> = sys
            .terms()
            .iter()
            .map(|t| PlantTerm { a: &t.a * c, ..t.clone() })
            .collect();
        let s2 = ParamSystem::new(
            sys.xi().clone(),
            scaled,
            sys.performance().clone(),
            sys.partition().clone(),
            sys.control_graph().clone(),
            sys.design_graph().clone(),
            sys.bounds().clone(),
        )
        .unwrap();
        let a = sys.eval_matrices(&[a1, a2]).unwrap().a * c;
        let b = s2.eval_matrices(&[a1, a2]).unwrap().a;
        prop_assert!((a - b).abs().max() <= 1e-14);
    }
}
