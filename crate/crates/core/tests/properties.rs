use std::sync::Arc;

use approx::assert_abs_diff_eq;
use kmwave::{
    evolve, field_profile, gauge_transform, init_circle, init_from_phase_function, observables,
    quantization_data, refine, uniform_grid, Builtin, DispersionSymbol, EvolveSettings, GaugeMap,
    MarkerChart, PhasePoint, ReconstructSettings, Scheme,
};
use proptest::prelude::*;

fn harmonic() -> DispersionSymbol {
    DispersionSymbol::builtin(Builtin::Harmonic { omega: 1.0 })
}

fn helmholtz() -> DispersionSymbol {
    DispersionSymbol::builtin(Builtin::Helmholtz {
        c0: 1.0,
        c1: 0.15,
        rate: 0.2,
    })
}

fn line(n: usize, tilt: f64) -> MarkerChart {
    init_from_phase_function(
        move |q| tilt * q + 0.2 * q.sin(),
        move |q| tilt + 0.2 * q.cos(),
        |q| (-0.5 * q * q).exp(),
        &uniform_grid(-2.0, 2.0, n),
        0.02,
    )
    .unwrap()
}

fn circle_gauge() -> impl Strategy<Value = GaugeMap> {
    prop_oneof![
        (0.2f64..5.0).prop_map(GaugeMap::Scale),
        (-0.9f64..0.9).prop_map(|a| GaugeMap::Monotone(Arc::new(move |x: f64| x + a * x.sin()))),
        (0usize..300).prop_map(GaugeMap::Shift),
    ]
}

fn line_gauge() -> impl Strategy<Value = GaugeMap> {
    prop_oneof![
        (0.2f64..5.0).prop_map(GaugeMap::Scale),
        (0.0f64..1.0, -3.0f64..3.0)
            .prop_map(|(a, b)| GaugeMap::Monotone(Arc::new(move |x: f64| b + x + a * x.powi(3)))),
    ]
}

fn assert_charts_close(a: &MarkerChart, b: &MarkerChart, tol: f64) {
    assert_eq!(a.len(), b.len());
    assert_eq!(a.maslov, b.maslov);
    for i in 0..a.len() {
        assert_abs_diff_eq!(a.points[i].q, b.points[i].q, epsilon = tol);
        assert_abs_diff_eq!(a.points[i].p, b.points[i].p, epsilon = tol);
        assert_abs_diff_eq!(a.phases[i], b.phases[i], epsilon = tol);
        assert_abs_diff_eq!(
            a.weights[i],
            b.weights[i],
            epsilon = tol * a.weights[i].abs().max(1.0)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gauge_keeps_loop_data_and_observables(g in circle_gauge()) {
        // r^2 = 3 eps: the n = 1 harmonic level
        let eps: f64 = 0.05;
        let c = init_circle(PhasePoint::new(0.0, 0.0), (3.0 * eps).sqrt(), 256, eps, 1.0).unwrap();
        let d = gauge_transform(&c, &g).unwrap();
        let (qa, qb) = (quantization_data(&c).unwrap(), quantization_data(&d).unwrap());
        prop_assert!((qa.loop_action - qb.loop_action).abs() <= 1e-8);
        prop_assert_eq!(qa.maslov_index, qb.maslov_index);
        prop_assert!((qa.bs_residual - qb.bs_residual).abs() <= 1e-8);
        prop_assert!((c.total_weight() - d.total_weight()).abs() <= 1e-8);
        let (oa, ob) = (observables(&c, &harmonic(), 0.0).unwrap(), observables(&d, &harmonic(), 0.0).unwrap());
        prop_assert!((oa.p_phi - ob.p_phi).abs() <= 1e-8);
        prop_assert!((oa.energy - ob.energy).abs() <= 1e-8);
    }

    #[test]
    fn evolution_commutes_with_gauge(g in line_gauge(), tilt in 0.5f64..2.0) {
        let c = line(41, tilt);
        let settings = EvolveSettings::new(Scheme::Rk4, 0.05, 0.0, 0.5);
        let sym = helmholtz();
        let a = gauge_transform(evolve(&c, &sym, &settings).unwrap().last(), &g).unwrap();
        let b = evolve(&gauge_transform(&c, &g).unwrap(), &sym, &settings).unwrap();
        assert_charts_close(&a, b.last(), 1e-8);
    }

    #[test]
    fn flows_compose(split in 1usize..9, tilt in 0.5f64..2.0) {
        let c = line(31, tilt);
        let sym = helmholtz();
        let h = 0.05;
        let mid = split as f64 * h;
        let whole = evolve(&c, &sym, &EvolveSettings::new(Scheme::Rk4, h, 0.0, 0.5)).unwrap();
        let first = evolve(&c, &sym, &EvolveSettings::new(Scheme::Rk4, h, 0.0, mid)).unwrap();
        let second = evolve(first.last(), &sym, &EvolveSettings::new(Scheme::Rk4, h, mid, 0.5)).unwrap();
        assert_charts_close(whole.last(), second.last(), 1e-12);
    }

    #[test]
    fn refinement_keeps_mass_and_action(spacing in 0.01f64..0.5, tilt in -2.0f64..2.0) {
        let c = line(17, tilt);
        let fine = refine(&c, spacing);
        prop_assert!(fine.len() >= c.len());
        fine.validate().unwrap();
        prop_assert!((fine.total_weight() - c.total_weight()).abs() <= 1e-12 * c.total_weight());
        let action = |c: &MarkerChart| -> f64 { (0..c.segment_count()).map(|s| c.segment_action(s)).sum() };
        // inserted markers ride the interpolant, so the line integral moves by O(h^4)
        prop_assert!((action(&fine) - action(&c)).abs() <= 1e-2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn profiles_are_gauge_invariant(g in line_gauge()) {
        let c = line(201, 1.0);
        let grid = uniform_grid(-1.5, 1.5, 31);
        let settings = ReconstructSettings::default();
        let a = field_profile(&c, &grid, &settings).unwrap();
        let b = field_profile(&gauge_transform(&c, &g).unwrap(), &grid, &settings).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.method, y.method);
            prop_assert!((x.value - y.value).norm() <= 1e-8 * x.value.norm().max(1.0));
        }
    }
}
