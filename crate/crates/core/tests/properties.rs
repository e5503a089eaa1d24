//! Property-based invariants.

use fermipca::calibration::{
    calibrate_exact_ranks, fixed_variance_bisection, variance_limit_filter, Evaluation, VarianceTarget,
};
use fermipca::inference::{score, spectral_profile};
use fermipca::io::ModelFile;
use fermipca::measurement::{effect_from_threshold, position_tail, window_effect};
use fermipca::soft_filter::{dual_gradient, dual_hessian, fermi_dirac_filter, normalized_retained_variance, solve_mu};
use fermipca::{
    CovarianceModel, DiagonalEffect, DualMethod, FeatureDataset, MeasurementConfig, ProbeState, Window, C64,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn spectrum(d: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    d.prop_flat_map(|d| prop::collection::vec(0.0f64..1.0, d))
        .prop_map(|mut v| {
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
}

fn complex_vec(d: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d)
}

fn normalized(raw: &[(f64, f64)]) -> Option<DVector<C64>> {
    let v = DVector::from_iterator(raw.len(), raw.iter().map(|&(a, b)| C64::new(a, b)));
    let n = v.norm();
    (n > 1e-3).then(|| v / C64::new(n, 0.0))
}

fn centered_model() -> impl Strategy<Value = CovarianceModel> {
    (2usize..=6, 2usize..=8)
        .prop_flat_map(|(d, n)| prop::collection::vec(complex_vec(d), n))
        .prop_filter_map("degenerate vectors", |rows| {
            let vectors: Option<Vec<_>> = rows.iter().map(|r| normalized(r)).collect();
            CovarianceModel::build_centered(&FeatureDataset::new(vectors?).ok()?).ok()
        })
}

fn config() -> impl Strategy<Value = MeasurementConfig> {
    (0.01f64..0.5, 0.2f64..3.0, -0.5f64..0.5).prop_map(|(a, b, c)| MeasurementConfig::new(a, b, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupations_are_effects(l in spectrum(2..=8), t in 0.001f64..2.0, mu in -2.0f64..3.0) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        let f = fermi_dirac_filter(&m, t, mu);
        prop_assert!(f.occupations.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // ordered like the spectrum
        prop_assert!(f.occupations.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn gradient_is_trace_residual_and_hessian_bounded(l in spectrum(2..=8), t in 0.01f64..2.0, mu in -1.0f64..2.0) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        let d = l.len();
        for k in 1..d {
            let g = dual_gradient(&m, t, mu, k);
            let tr = fermi_dirac_filter(&m, t, mu).trace();
            prop_assert!((g - (k as f64 - tr)).abs() < 1e-12);
        }
        prop_assert!(dual_hessian(&m, t, mu) <= d as f64 / (4.0 * t) * (1.0 + 1e-12));
    }

    #[test]
    fn filters_nest_with_rank(l in spectrum(3..=8), t in 0.01f64..1.0) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        let d = l.len();
        let mut prev: Option<Vec<f64>> = None;
        for k in 1..d {
            let mu = solve_mu(&m, t, k, DualMethod::Bisection, 1e-13).unwrap().mu_star;
            let occ = fermi_dirac_filter(&m, t, mu).occupations;
            if let Some(p) = &prev {
                prop_assert!(occ.iter().zip(p).all(|(a, b)| a >= b));
            }
            prev = Some(occ);
        }
    }

    #[test]
    fn trace_norm_identity(l in spectrum(2..=8), c in config(), b1 in -1.0f64..2.0, b2 in -1.0f64..2.0) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        let f1 = effect_from_threshold(&m, &c, b1);
        let f2 = effect_from_threshold(&m, &c, b2);
        let lhs: f64 = f1.occupations.iter().zip(&f2.occupations).map(|(a, b)| (a - b).abs()).sum();
        let rhs = (f1.trace() - f2.trace()).abs();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn windows_are_additive(l in spectrum(2..=6), c in config(), a in -1.0f64..1.0, w1 in 0.01f64..1.0, w2 in 0.01f64..1.0) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        let left = window_effect(&m, &c, Window::new(a, a + w1).unwrap()).unwrap();
        let right = window_effect(&m, &c, Window::new(a + w1, a + w1 + w2).unwrap()).unwrap();
        let both = window_effect(&m, &c, Window::new(a, a + w1 + w2).unwrap()).unwrap();
        for j in 0..l.len() {
            prop_assert!((left.occupations[j] + right.occupations[j] - both.occupations[j]).abs() < 1e-14);
        }
        let below = window_effect(&m, &c, Window::new(f64::NEG_INFINITY, a).unwrap()).unwrap();
        let above = window_effect(&m, &c, Window::tail(a)).unwrap();
        for j in 0..l.len() {
            prop_assert!((below.occupations[j] + above.occupations[j] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tail_trace_identity_for_any_probe(model in centered_model(), c in config(), beta in -1.0f64..2.0, raw in complex_vec(6)) {
        let d = model.dim();
        let f = effect_from_threshold(&model, &c, beta);
        let probes = [
            ProbeState::maximally_mixed(&model),
            ProbeState::covariance_probe(&model).unwrap(),
        ];
        for p in probes.iter().chain(normalized(&raw[..d]).map(|v| ProbeState::pure(&model, &v).unwrap()).iter()) {
            let expected: f64 = p.diagonal_weights.iter().zip(&f.occupations).map(|(w, m)| w * m).sum();
            prop_assert!((position_tail(&model, &c, p, beta) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn score_bounds_and_nesting(model in centered_model(), c in config(), raw in complex_vec(6)) {
        let d = model.dim();
        let Some(v) = normalized(&raw[..d]) else { return Ok(()); };
        let z = model.center_input(&v).unwrap();
        prop_assume!(!z.degenerate);
        let ks: Vec<usize> = (1..d).collect();
        let t = calibrate_exact_ranks(&model, c, &ks, 1e-13).unwrap();
        let mut prev = 0.0;
        for e in &t.entries {
            let s = score(&model, &effect_from_threshold(&model, &c, e.beta), &z).unwrap();
            let s_bar = s.s_bar.unwrap();
            prop_assert!((0.0..=1.0).contains(&s_bar));
            prop_assert!(s.s <= s.nu * (1.0 + 1e-12));
            prop_assert!(s_bar >= prev - 1e-12);
            prev = s_bar;
        }
        let p = spectral_profile(&model, &t, &z).unwrap();
        prop_assert!(p.per_mode_probability.iter().all(|&x| x >= -1e-15));
        prop_assert!((p.per_mode_probability.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut running = 0.0;
        for (c, pi) in p.cumulative.iter().zip(&p.per_mode_probability) {
            running += pi;
            prop_assert!((c.s_bar - running).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_limit_meets_constraint(l in spectrum(2..=8), theta in 0.01f64..0.99) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        prop_assume!(m.total_variance() > 1e-6);
        match variance_limit_filter(&m, theta) {
            Ok(f) => prop_assert!((normalized_retained_variance(&m, &f).unwrap() - theta).abs() < 1e-12),
            Err(_) => prop_assert!(l.iter().filter(|&&x| x > 0.0).count() < l.len()),
        }
    }

    #[test]
    fn exact_bisection_is_monotone(l in spectrum(2..=6), tp in 0.02f64..0.5, theta in 0.05f64..0.95) {
        let m = CovarianceModel::from_spectrum(&l).unwrap();
        prop_assume!(m.total_variance() > 1e-3);
        let r = fixed_variance_bisection(&m, tp, VarianceTarget::Normalized(theta), Evaluation::Exact, 60).unwrap();
        let mut steps = r.trajectory.clone();
        steps.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        prop_assert!(steps.windows(2).all(|w| w[0].estimate <= w[1].estimate));
        let achieved = normalized_retained_variance(&m, &r.filter).unwrap();
        prop_assert!((achieved - theta).abs() < 1e-8, "{} vs {}", achieved, theta);
    }

    #[test]
    fn model_file_round_trip(model in centered_model()) {
        let text = serde_json::to_string(&ModelFile::from_model(&model)).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let back = back.to_model().unwrap();
        prop_assert_eq!(back.eigenvalues(), model.eigenvalues());
        prop_assert_eq!(back.fingerprint(), model.fingerprint());
    }
}
