#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structhinf::basis::{BasisRole, BasisSet};
use structhinf::sysmodel::{
    strategy_for, GainExpansion, Graph, GraphRole, ParamBox, ParamSystem, Partition, Performance, PlantTerm,
    StateSpace, SubsystemDims,
};

pub fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

pub fn m(rows: &[&[f64]]) -> DMatrix<f64> {
    let c = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j])
}

pub fn dims(n: usize, m_w: usize, m_u: usize, o_y: usize, p: usize) -> SubsystemDims {
    SubsystemDims { n, m_w, m_u, o_y, p }
}

/// Two coupled scalar subsystems. With `full`, both controllers measure both
/// states; otherwise controller 2 sees only its own.
pub fn example1(full: bool, complete_design: bool) -> (ParamSystem, GainExpansion) {
    let p = names(&["a1", "a2"]);
    let (lo, hi) = (vec![-1.0; 2], vec![1.0; 2]);
    let xi = BasisSet::new(BasisRole::Plant, &p, &["1", "a1", "sin(a1)", "cos(a2)", "a2"], &lo, &hi).unwrap();
    let eta = Arc::new(BasisSet::new(BasisRole::Strategy, &p, &["1", "a1", "a1^2", "a2"], &lo, &hi).unwrap());
    let oy = if full { 4 } else { 3 };
    let cy0 = if full {
        m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]])
    } else {
        m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]])
    };
    let a = [
        m(&[&[-2.0, 0.1], &[0.3, -1.0]]),
        m(&[&[1.0, 0.0], &[0.0, 0.0]]),
        m(&[&[0.0, 0.4], &[0.0, 0.0]]),
        DMatrix::zeros(2, 2),
        m(&[&[0.0, 0.0], &[0.0, -1.0]]),
    ];
    let bu = [
        m(&[&[0.6, 0.0], &[0.0, 1.0]]),
        DMatrix::zeros(2, 2),
        m(&[&[-0.3, 0.0], &[0.0, 0.0]]),
        m(&[&[0.0, 0.0], &[0.0, 0.1]]),
        DMatrix::zeros(2, 2),
    ];
    let terms = (0..5)
        .map(|l| PlantTerm {
            a: a[l].clone(),
            b_w: if l == 0 { DMatrix::identity(2, 2) } else { DMatrix::zeros(2, 2) },
            b_u: bu[l].clone(),
            c_y: if l == 0 { cy0.clone() } else { DMatrix::zeros(oy, 2) },
            d_yw: DMatrix::zeros(oy, 2),
        })
        .collect();
    let perf = Performance {
        c_z: m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]]),
        d_zw: DMatrix::zeros(4, 2),
        d_zu: m(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]),
    };
    let partition = Partition::new(vec![dims(1, 1, 1, 2, 1), dims(1, 1, 1, if full { 2 } else { 1 }, 1)]).unwrap();
    let control = if full {
        Graph::complete(GraphRole::Control, 2)
    } else {
        Graph::from_lists(GraphRole::Control, 2, &[vec![0, 1], vec![1]]).unwrap()
    };
    let design = if complete_design {
        Graph::complete(GraphRole::Design, 2)
    } else {
        Graph::self_loops(GraphRole::Design, 2)
    };
    let bounds = ParamBox::new(p, lo, hi).unwrap();
    let sys = ParamSystem::new(xi, terms, perf, partition, control, design, bounds).unwrap();
    let mut g0 = vec![DMatrix::zeros(2, oy); 4];
    g0[0][(1, oy - 1)] = -0.5;
    let gamma0 = strategy_for(&sys, eta, g0).unwrap();
    (sys, gamma0)
}

/// Three-vehicle platoon with the given design graph.
pub fn platoon(design: &[Vec<usize>]) -> (ParamSystem, GainExpansion) {
    let p = names(&["m1", "m2", "m3"]);
    let (lo, hi) = (vec![0.5; 3], vec![1.0; 3]);
    let xi = BasisSet::new(BasisRole::Plant, &p, &["1", "1/m1", "1/m2", "1/m3"], &lo, &hi).unwrap();
    let eta = Arc::new(
        BasisSet::new(BasisRole::Strategy, &p, &["1", "m1", "m1^2", "m2", "m2^2", "m3", "m3^2"], &lo, &hi).unwrap(),
    );
    let mut a = vec![DMatrix::zeros(5, 5); 4];
    a[0][(1, 0)] = 1.0;
    a[0][(1, 2)] = -1.0;
    a[0][(3, 2)] = 1.0;
    a[0][(3, 4)] = -1.0;
    a[1][(0, 0)] = -0.1;
    a[2][(2, 2)] = -0.1;
    a[3][(4, 4)] = -0.1;
    let mut bu = vec![DMatrix::zeros(5, 3); 4];
    bu[1][(0, 0)] = 1.0;
    bu[2][(2, 1)] = 1.0;
    bu[3][(4, 2)] = 1.0;
    let mut cy = DMatrix::zeros(11, 5);
    for (r, c) in [0, 1, 2, 0, 1, 2, 3, 4, 2, 3, 4].into_iter().enumerate() {
        cy[(r, c)] = 1.0;
    }
    let terms = (0..4)
        .map(|l| PlantTerm {
            a: a[l].clone(),
            b_w: if l == 0 { DMatrix::identity(5, 5) } else { DMatrix::zeros(5, 5) },
            b_u: bu[l].clone(),
            c_y: if l == 0 { cy.clone() } else { DMatrix::zeros(11, 5) },
            d_yw: DMatrix::zeros(11, 5),
        })
        .collect();
    let mut c_z = DMatrix::zeros(5, 5);
    c_z[(0, 1)] = 1.0;
    c_z[(1, 3)] = 1.0;
    let mut d_zu = DMatrix::zeros(5, 3);
    for i in 0..3 {
        d_zu[(2 + i, i)] = 1.0;
    }
    let perf = Performance {
        c_z,
        d_zw: DMatrix::zeros(5, 5),
        d_zu,
    };
    let partition = Partition::new(vec![dims(2, 2, 1, 3, 1), dims(1, 1, 1, 5, 1), dims(2, 2, 1, 3, 1)]).unwrap();
    let control = Graph::from_lists(GraphRole::Control, 3, &[vec![0, 1], vec![0, 1, 2], vec![1, 2]]).unwrap();
    let design = Graph::from_lists(GraphRole::Design, 3, design).unwrap();
    let bounds = ParamBox::new(p, lo, hi).unwrap();
    let sys = ParamSystem::new(xi, terms, perf, partition, control, design, bounds).unwrap();
    let mut g0 = vec![DMatrix::zeros(3, 11); 7];
    g0[0][(0, 0)] = -3.0;
    g0[0][(1, 4)] = 15.0;
    g0[0][(1, 5)] = -5.0;
    g0[0][(1, 6)] = 10.0;
    g0[0][(2, 9)] = 10.0;
    g0[0][(2, 10)] = -5.0;
    let gamma0 = strategy_for(&sys, eta, g0).unwrap();
    (sys, gamma0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Spectral abscissa from the eigenvalues nalgebra computes directly
/// (no balancing).
pub fn abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Random stable realization with the given sizes.
pub fn random_stable(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> StateSpace {
    let mut a = uniform(rng, n, n) * 2.0;
    let shift = abscissa(&a) + rng.random_range(0.05..1.0);
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    StateSpace::new(a, uniform(rng, n, m), uniform(rng, p, n), uniform(rng, p, m) * 0.5).unwrap()
}

/// `C (jw I - A)^{-1} B + D` by a complex LU solve.
pub fn response(ss: &StateSpace, w: f64) -> DMatrix<Complex64> {
    let n = ss.a.nrows();
    let c = |x: &DMatrix<f64>| x.map(|v| Complex64::new(v, 0.0));
    let lhs = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { Complex64::new(0.0, w) } else { Complex64::new(0.0, 0.0) };
        d - Complex64::new(ss.a[(i, j)], 0.0)
    });
    let x = lhs.lu().solve(&c(&ss.b)).expect("jw is not an eigenvalue");
    c(&ss.c) * x + c(&ss.d)
}

pub fn sigma(t: &DMatrix<Complex64>) -> f64 {
    t.clone().singular_values().max()
}

/// Peak gain over a dense log grid on `[1e-3, 1e3]` plus `0`, refined by a
/// golden-section search around the best grid point, and the value at
/// infinity.
pub fn grid_norm(ss: &StateSpace, points: usize) -> f64 {
    let ws: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (points - 1) as f64))
        .collect();
    let s = |w: f64| sigma(&response(ss, w));
    let mut best = (s(0.0), None);
    for (i, &w) in ws.iter().enumerate() {
        let v = s(w);
        if v > best.0 {
            best = (v, Some(i));
        }
    }
    let mut peak = best.0;
    if let Some(i) = best.1 {
        let (mut a, mut b) = (ws[i.saturating_sub(1)], ws[(i + 1).min(points - 1)]);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let (c, d) = (b - r * (b - a), a + r * (b - a));
            if s(c) > s(d) {
                b = d;
            } else {
                a = c;
            }
        }
        peak = peak.max(s(0.5 * (a + b)));
    }
    peak.max(ss.d.clone().singular_values().max())
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Reference structured gain for the two-subsystem example.
pub fn reference_gain(sys: &ParamSystem, g0: &GainExpansion) -> GainExpansion {
    let row = [-0.1892, -1.008, 0.0];
    let mut c = vec![DMatrix::zeros(2, 3); 4];
    for l in 0..3 {
        for j in 0..3 {
            c[l][(0, j)] = row[j];
        }
    }
    c[0][(1, 2)] = -7.107;
    c[3][(1, 2)] = 6.607;
    strategy_for(sys, g0.eta.clone(), c).unwrap()
}

/// `x' = -x + u + w`, `z = (x; u)`, `y = x`, with plant basis `xi` over one
/// parameter `a` in `[-1, 1]`; every term after the first is zero unless
/// `dep` is set, in which case the second term adds `0.5` to the pole.
pub fn scalar_plant(xi: &[&str], eta: &[&str], dep: bool) -> (ParamSystem, GainExpansion) {
    let p = names(&["a"]);
    let (lo, hi) = (vec![-1.0], vec![1.0]);
    let xi_set = BasisSet::new(BasisRole::Plant, &p, xi, &lo, &hi).unwrap();
    let eta_set = Arc::new(BasisSet::new(BasisRole::Strategy, &p, eta, &lo, &hi).unwrap());
    let terms = (0..xi.len())
        .map(|l| {
            let first = l == 0;
            PlantTerm {
                a: m(&[&[if first { -1.0 } else if dep && l == 1 { 0.5 } else { 0.0 }]]),
                b_w: m(&[&[if first { 1.0 } else { 0.0 }]]),
                b_u: m(&[&[if first { 1.0 } else { 0.0 }]]),
                c_y: m(&[&[if first { 1.0 } else { 0.0 }]]),
                d_yw: m(&[&[0.0]]),
            }
        })
        .collect();
    let perf = Performance {
        c_z: m(&[&[1.0], &[0.0]]),
        d_zw: DMatrix::zeros(2, 1),
        d_zu: m(&[&[0.0], &[1.0]]),
    };
    let partition = Partition::new(vec![dims(1, 1, 1, 1, 1)]).unwrap();
    let control = Graph::complete(GraphRole::Control, 1);
    let design = Graph::complete(GraphRole::Design, 1);
    let bounds = ParamBox::new(p, lo, hi).unwrap();
    let sys = ParamSystem::new(xi_set, terms, perf, partition, control, design, bounds).unwrap();
    let g0 = strategy_for(&sys, eta_set.clone(), vec![DMatrix::zeros(1, 1); eta.len()]).unwrap();
    (sys, g0)
}
