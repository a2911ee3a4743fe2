use proptest::prelude::*;
use structhinf::basis::{parse_expr, BasisError, BasisRole, BasisSet, Expr};

fn names() -> Vec<String> {
    vec!["a1".into(), "a2".into(), "a3".into()]
}

// Random trees over three parameters. Division only by `2 + cos(.)`, which
// never vanishes, so every tree is finite everywhere.
fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0f64..5.0).prop_map(Expr::Const),
        (0usize..3).prop_map(Expr::Param),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Add(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Mul(b(x), b(y))),
            (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Div(
                b(x),
                b(Expr::Add(b(Expr::Const(2.0)), b(Expr::Cos(b(y)))))
            )),
            inner.clone().prop_map(move |x| Expr::Neg(b(x))),
            (inner.clone(), 0i32..4).prop_map(move |(x, k)| Expr::Pow(b(x), k)),
            inner.clone().prop_map(move |x| Expr::Sin(b(x))),
            inner.clone().prop_map(move |x| Expr::Cos(b(x))),
            inner.prop_map(move |x| Expr::Exp(b(Expr::Mul(b(Expr::Const(0.1)), b(x))))),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 3)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn display_then_parse_is_exact(e in expr(), pts in prop::collection::vec(point(), 100)) {
        let n = names();
        let text = e.display(&n).to_string();
        let back = parse_expr(&text, &n).unwrap();
        for p in &pts {
            let (x, y) = (e.eval(p), back.eval(p));
            prop_assert!(x == y || (x.is_nan() && y.is_nan()), "{text}: {x} vs {y}");
        }
    }

    #[test]
    fn derivative_matches_central_difference(e in expr(), p in prop::collection::vec(-0.9f64..0.9, 3), i in 0usize..3) {
        let h = 1e-6;
        let mut up = p.clone();
        let mut dn = p.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (e.eval(&up) - e.eval(&dn)) / (2.0 * h);
        let d = e.diff(i).eval(&p);
        prop_assume!(fd.is_finite() && d.is_finite() && d.abs() < 1e6);
        prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{fd} vs {d}");
    }

    #[test]
    fn syntactic_dependency_is_sound(e in expr(), p in point(), q in point()) {
        let deps = e.deps();
        for i in 0..3 {
            if !deps.contains(&i) {
                let mut moved = p.clone();
                moved[i] = q[i];
                prop_assert_eq!(e.eval(&p), e.eval(&moved));
                prop_assert!(e.diff(i).eval(&p) == 0.0);
            }
        }
    }
}

#[test]
fn parses_sine_of_parameter() {
    let n = vec!["a1".to_string(), "a2".to_string()];
    assert_eq!(parse_expr("sin(a1)", &n).unwrap(), Expr::Sin(Box::new(Expr::Param(0))));
}

#[test]
fn reciprocal_mass_on_platoon_box() {
    let n: Vec<String> = ["m1", "m2", "m3"].iter().map(|s| s.to_string()).collect();
    let b = BasisSet::new(BasisRole::Plant, &n, &["1/m1"], &[0.5; 3], &[1.0; 3]).unwrap();
    assert_eq!(b.eval(&[0.5, 1.0, 1.0]), vec![2.0]);
    assert_eq!(b.deps(0).iter().copied().collect::<Vec<_>>(), vec![0]);
}

#[test]
fn reciprocal_through_zero_is_rejected() {
    let n = vec!["a1".to_string(), "a2".to_string()];
    let err = BasisSet::new(BasisRole::Plant, &n, &["1/a1"], &[-1.0; 2], &[1.0; 2]).unwrap_err();
    assert!(matches!(err, BasisError::SingularDivision { index: 0, .. }));
}

#[test]
fn evaluation_examples() {
    let n = vec!["a1".to_string(), "a2".to_string()];
    assert_eq!(parse_expr("a1^2", &n).unwrap().eval(&[0.5, 0.0]), 0.25);
    assert_eq!(parse_expr("cos(a2)", &n).unwrap().eval(&[0.0, 0.0]), 1.0);
    assert!((parse_expr("a1^2", &n).unwrap().diff(0).eval(&[0.3, 0.0]) - 0.6).abs() < 1e-15);
    assert!(parse_expr("sin(a1)", &n).unwrap().diff(1).is_zero());
}

#[test]
fn parse_errors_name_the_problem() {
    let n = vec!["a1".to_string()];
    assert!(parse_expr("a1 +", &n).is_err());
    assert!(parse_expr("b7", &n).is_err());
    assert!(parse_expr("tan(a1)", &n).is_err());
}

#[test]
fn jacobian_layout_is_param_major() {
    let n = vec!["a1".to_string(), "a2".to_string()];
    let b = BasisSet::new(BasisRole::Strategy, &n, &["1", "a1", "a1^2", "a2"], &[-1.0; 2], &[1.0; 2]).unwrap();
    let jac = b.jacobian(&[0.5, -0.2]);
    assert_eq!(jac.len(), 2);
    assert_eq!(jac[0], vec![0.0, 1.0, 1.0, 0.0]);
    assert_eq!(jac[1], vec![0.0, 0.0, 0.0, 1.0]);
    assert!(rel(b.eval(&[0.5, -0.2])[2], 0.25) < 1e-15);
}
