use approx::assert_relative_eq;
use lattice_green::expr::ScalarField;
use lattice_green::finsler::{figuratrix_radius, support_function};
use lattice_green::hamiltonian::{hamiltonian, phase_derivs};
use lattice_green::model::examples::{model_a, model_b};
use proptest::prelude::*;

/// Random expressions in x1, x2 that are smooth everywhere.
fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(|c| format!("{c:?}")),
        Just("x1".to_string()),
        Just("x2".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} / (2 + cos({b}))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("exp(sin({a}))")),
            inner.clone().prop_map(|a| format!("sqrt(1 + {a} * {a})")),
            inner.prop_map(|a| format!("log(2 + cosh(sin({a})))")),
        ]
    })
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-6 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn field_derivatives_match_finite_differences(
        text in expr_strategy(),
        x1 in -1.5f64..1.5,
        x2 in -1.5f64..1.5,
    ) {
        let f = ScalarField::parse(&text, 2).unwrap();
        let x = [x1, x2];
        let e = f.eval2(&x).unwrap();
        assert_relative_eq!(e.value, f.eval(&x).unwrap(), epsilon = 1e-14, max_relative = 1e-14);
        let step = 1e-5;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += step;
            xm[i] -= step;
            let gp = f.eval2(&xp).unwrap();
            let gm = f.eval2(&xm).unwrap();
            let fd = (gp.value - gm.value) / (2.0 * step);
            let scale = e.gradient[i].abs().max(e.value.abs());
            prop_assert!(close(fd, e.gradient[i], scale), "{}: d{} {} vs {}", text, i, fd, e.gradient[i]);
            for j in 0..2 {
                let fd2 = (gp.gradient[j] - gm.gradient[j]) / (2.0 * step);
                let scale = e.hessian[i][j].abs().max(e.gradient[j].abs()).max(e.value.abs());
                prop_assert!(close(fd2, e.hessian[i][j], scale), "{}: H{}{} {} vs {}", text, i, j, fd2, e.hessian[i][j]);
            }
        }
        prop_assert_eq!(e.hessian[0][1], e.hessian[1][0]);
    }

    #[test]
    fn printed_fields_reparse_to_the_same_function(
        text in expr_strategy(),
        x1 in -1.5f64..1.5,
        x2 in -1.5f64..1.5,
    ) {
        let f = ScalarField::parse(&text, 2).unwrap();
        let g = ScalarField::parse(&f.to_string(), 2).unwrap();
        prop_assert_eq!(&f, &g);
        prop_assert_eq!(f.eval2(&[x1, x2]).unwrap(), g.eval2(&[x1, x2]).unwrap());
    }

    #[test]
    fn phase_derivatives_match_finite_differences(
        x1 in -3.0f64..3.0,
        x2 in -3.0f64..3.0,
        p1 in -1.5f64..1.5,
        p2 in -1.5f64..1.5,
    ) {
        let b = model_b();
        let x = [x1, x2];
        let p = [p1, p2];
        let pd = phase_derivs(&b, &x, &p).unwrap();
        prop_assert_eq!(pd.h, hamiltonian(&b, &x, &p).unwrap());
        let s = 1e-5;
        for i in 0..2 {
            let shift = |v: [f64; 2], d: f64| {
                let mut w = v;
                w[i] += d;
                w
            };
            let hp = phase_derivs(&b, &x, &shift(p, s)).unwrap();
            let hm = phase_derivs(&b, &x, &shift(p, -s)).unwrap();
            let xp = phase_derivs(&b, &shift(x, s), &p).unwrap();
            let xm = phase_derivs(&b, &shift(x, -s), &p).unwrap();
            assert_relative_eq!((hp.h - hm.h) / (2.0 * s), pd.dhdp[i], epsilon = 1e-7, max_relative = 1e-7);
            assert_relative_eq!((xp.h - xm.h) / (2.0 * s), pd.dhdx[i], epsilon = 1e-7, max_relative = 1e-7);
            for j in 0..2 {
                assert_relative_eq!((hp.dhdp[j] - hm.dhdp[j]) / (2.0 * s), pd.hpp[(j, i)], epsilon = 1e-7, max_relative = 1e-7);
                assert_relative_eq!((xp.dhdp[j] - xm.dhdp[j]) / (2.0 * s), pd.hpx[(j, i)], epsilon = 1e-7, max_relative = 1e-7);
                assert_relative_eq!((xp.dhdx[j] - xm.dhdx[j]) / (2.0 * s), pd.hxx[(j, i)], epsilon = 1e-7, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn support_function_is_a_norm(
        x1 in -3.0f64..3.0,
        x2 in -3.0f64..3.0,
        v in prop::array::uniform2(-2.0f64..2.0),
        w in prop::array::uniform2(-2.0f64..2.0),
        u in prop::array::uniform2(-2.0f64..2.0),
        lam in 0.01f64..10.0,
    ) {
        let b = model_b();
        let x = [x1, x2];
        let f = |a: [f64; 2]| support_function(&b, &x, &a).unwrap();
        let add = |a: [f64; 2], c: [f64; 2]| [a[0] + c[0], a[1] + c[1]];
        prop_assert!(f(add(v, w)) <= f(v) + f(w) + 1e-10);
        prop_assert!(f(add(add(v, w), u)) <= f(add(v, w)) + f(u) + 1e-10);
        assert_relative_eq!(f([lam * v[0], lam * v[1]]), lam * f(v), epsilon = 1e-12, max_relative = 1e-11);
        prop_assert!(f(v) >= 0.0);
        // evenness of H makes F symmetric
        assert_relative_eq!(f([-v[0], -v[1]]), f(v), epsilon = 1e-12, max_relative = 1e-11);
    }
}

#[test]
fn model_a_radius_and_norm_on_axes() {
    let a = model_a();
    let r = figuratrix_radius(&a, &[0.0, 0.0], &[0.0, 1.0]).unwrap();
    assert_relative_eq!(r, 2.25f64.acosh(), max_relative = 1e-13);
    let f = support_function(&a, &[5.0, -2.0], &[3.0, 0.0]).unwrap();
    assert_relative_eq!(f, 3.0 * r, max_relative = 1e-12);
}
