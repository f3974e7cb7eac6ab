use bandedge_core::anomaly::{alpha, beta, classify, exponent, p_poly, AnomalyExpansion, Term};
use bandedge_core::fokker_planck::{groundstate, weak_form_residual, Coefficients, TrigPoly4};
use bandedge_core::Mat2;
use proptest::prelude::*;
use std::f64::consts::PI;

fn traceless() -> impl Strategy<Value = Mat2> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Mat2::new(a, b, c, -a))
}

fn unimodular() -> impl Strategy<Value = Mat2> {
    (0.3..3.0f64, -2.0..2.0f64, -2.0..2.0f64, prop::bool::ANY).prop_map(|(a, b, c, neg)| {
        let a = if neg { -a } else { a };
        Mat2::new(a, b, c, (1.0 + b * c) / a)
    })
}

fn trig() -> impl Strategy<Value = TrigPoly4> {
    prop::array::uniform5(-1.0..1.0f64).prop_map(|c| TrigPoly4::new(c[0], c[1], c[2], c[3], c[4]))
}

proptest! {
    #[test]
    fn p_poly_is_the_phase_velocity(p in traceless(), theta in -PI..PI) {
        // d/dt of the angle of exp(tP) e_theta at t = 0 is e_theta ^ P e_theta.
        let (s, c) = theta.sin_cos();
        let pe = [p.a * c + p.b * s, p.c * c + p.d * s];
        let want = c * pe[1] - s * pe[0];
        prop_assert!((p_poly(&p).eval(theta) - want).abs() < 1e-12);
    }

    #[test]
    fn beta_modulus_from_traces(p in traceless()) {
        let lhs = (p.transpose() * p + p * p).trace();
        let b = beta(&p);
        prop_assert!((lhs - 4.0 * b.norm_sqr()).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn alpha_is_the_rotation_part(p in traceless()) {
        // P = a sigma_z + s sigma_x + r J with J the generator of rotations.
        let r = 0.5 * (p.c - p.b);
        let a = alpha(&p);
        prop_assert!(a.re.abs() < 1e-12);
        prop_assert!((a.im - r).abs() < 1e-12);
    }

    #[test]
    fn classification_is_conjugation_invariant(p in traceless(), q in traceless(), m in unimodular()) {
        prop_assume!(p.det().abs() > 1e-3);
        let e = AnomalyExpansion::new(1.0, vec![
            Term::constant(exponent(1, 2), p),
            Term::exact(exponent(3, 4), Mat2::ZERO, vec![q]),
        ]).unwrap();
        let a = classify(&e).unwrap();
        let b = classify(&e.conjugate(&m)).unwrap();
        prop_assert_eq!(a.order, b.order);
        prop_assert_eq!(a.anomaly_type, b.anomaly_type);
        prop_assert_eq!(a.kind, b.kind);
        let (da, db) = (a.det.unwrap(), b.det.unwrap());
        prop_assert!((da - db).abs() < 1e-9 * (1.0 + da.abs()));
    }

    #[test]
    fn trig_poly_is_pi_periodic(t in trig(), theta in -PI..PI) {
        prop_assert!((t.eval(theta) - t.eval(theta + PI)).abs() < 1e-12);
    }

    #[test]
    fn trig_product_matches_pointwise(
        a in prop::array::uniform3(-1.0..1.0f64),
        b in prop::array::uniform3(-1.0..1.0f64),
        theta in -PI..PI,
    ) {
        let f = TrigPoly4::new(a[0], a[1], a[2], 0.0, 0.0);
        let g = TrigPoly4::new(b[0], b[1], b[2], 0.0, 0.0);
        prop_assert!((f.mul2(&g).eval(theta) - f.eval(theta) * g.eval(theta)).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_difference_quotient(t in trig(), theta in -PI..PI) {
        let h = 1e-5;
        let fd = (t.eval(theta + h) - t.eval(theta - h)) / (2.0 * h);
        prop_assert!((t.derivative().eval(theta) - fd).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn regular_groundstate_is_a_normalized_weak_solution(
        c0 in 0.6..2.0f64,
        pert in prop::array::uniform4(-0.1..0.1f64),
        q in trig(),
    ) {
        let p = TrigPoly4::new(c0, pert[0], pert[1], pert[2], pert[3]);
        let coeffs = Coefficients { p, q, degenerate: false };
        let rho = groundstate(&p, &q, 2048).unwrap();
        prop_assert!((rho.mass() - 1.0).abs() < 1e-8);
        prop_assert!(rho.rho.iter().all(|r| *r > 0.0));
        prop_assert!(weak_form_residual(&coeffs, &rho) < 1e-5);
    }
}
