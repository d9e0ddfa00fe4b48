use proptest::prelude::*;
use spin_echo::fit::{fit_lifetime_1e, DecayForm};
use spin_echo::photon::{
    calibrate, g2_curve, g2_estimate, model_probabilities, simulate_counts, CurveOptions, DlczParams, ReadBackground,
};
use spin_echo::{BeamGeometry, EfficiencyModel, EnsembleSpec, SchedulePolicy};

/// Low-excitation regime, where the leading-order coincidence model holds.
fn params() -> impl Strategy<Value = DlczParams> {
    (0.0f64..0.1, 0.0f64..0.8, 0.0f64..0.7, 0.0f64..0.1, 0.0f64..0.1, 0.0f64..0.1).prop_map(
        |(chi, eta_w, eta_r, dark_w, dark_r, n_pi)| DlczParams {
            chi,
            eta_w,
            eta_r,
            dark_w,
            dark_r,
            n_pi,
        },
    )
}

proptest! {
    #[test]
    fn g2_never_below_one(p in params(), eta in 0.0f64..1.0, echo in any::<bool>()) {
        prop_assume!(p.chi * p.eta_w + p.dark_w > 0.0 && p.chi * p.eta_r * eta + p.dark_r > 0.0);
        let c = model_probabilities(&p, eta, echo).unwrap();
        let g2 = g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap();
        prop_assert!(g2 >= 1.0 - 1e-12);
        prop_assert!(c.p_wr <= c.p_w.min(c.p_r) + 1e-15);
    }

    #[test]
    fn g2_strictly_falls_with_pi_noise(p in params(), eta in 0.01f64..1.0, extra in 1e-4f64..0.05) {
        prop_assume!(p.chi > 1e-3 && p.eta_w > 1e-3 && p.eta_r > 1e-3);
        let a = model_probabilities(&p, eta, true).unwrap();
        let q = DlczParams { n_pi: p.n_pi + extra, ..p };
        let b = model_probabilities(&q, eta, true).unwrap();
        prop_assert!(g2_estimate(b.p_w, b.p_r, b.p_wr).unwrap() < g2_estimate(a.p_w, a.p_r, a.p_wr).unwrap());
    }

    #[test]
    fn g2_matches_algebraic_form(p in params(), eta in 0.0f64..1.0) {
        prop_assume!(p.chi * p.eta_w + p.dark_w > 1e-6 && p.chi * p.eta_r * eta + p.dark_r + p.n_pi > 1e-6);
        let c = model_probabilities(&p, eta, true).unwrap();
        let q = p.eta_r * eta;
        let algebraic = 1.0 + p.chi * p.eta_w * q / (c.p_w * c.p_r);
        let g2 = g2_estimate(c.p_w, c.p_r, c.p_wr).unwrap();
        prop_assert!((g2 - algebraic).abs() <= 1e-12 * algebraic);
    }
}

#[test]
fn rejects_parameters_outside_low_excitation_regime() {
    let p = DlczParams {
        chi: 0.289,
        eta_w: 0.973,
        eta_r: 0.592,
        dark_w: 0.0,
        dark_r: 0.0,
        n_pi: 0.0,
    };
    assert!(model_probabilities(&p, 0.335, false).is_err());
}

#[test]
fn count_estimator_unbiased_at_million_trials() {
    let p = calibrate(0.0035, 0.0028, 24.3, ReadBackground::default(), 0.008).unwrap();
    for (seed, echo) in [(1, false), (2, true)] {
        let eta = if echo { 0.9409 } else { 1.0 };
        let c = simulate_counts(&p, eta, echo, 1_000_000, seed).unwrap();
        let (g2, se) = c.g2().unwrap();
        let m = model_probabilities(&p, eta, echo).unwrap();
        let model = g2_estimate(m.p_w, m.p_r, m.p_wr).unwrap();
        assert!((g2 - model).abs() < 3.0 * se, "{g2} ± {se} vs {model}");
    }
}

#[test]
fn background_dominated_g2_tracks_efficiency_lifetime() {
    let g = BeamGeometry::degenerate_wavelength(795e-9, 1.1f64.to_radians(), 2.1f64.to_radians()).unwrap();
    let spec = EnsembleSpec::rb87(1, 15e-6, [500e-6; 3], 100e-6).unwrap();
    let model = EfficiencyModel::closed_form(&spec);
    // weak pair source, read channel dominated by background
    let p = DlczParams {
        chi: 0.001,
        eta_w: 0.1,
        eta_r: 0.1,
        dark_w: 0.0,
        dark_r: 0.002,
        n_pi: 0.0,
    };
    let ts: Vec<f64> = (0..17).map(|i| i as f64 * 25e-6).collect();
    let opts = CurveOptions {
        echo_on: false,
        epsilon: 0.0,
        policy: SchedulePolicy::Centered,
        n_trials: 1_000_000,
    };
    let curve = g2_curve(&p, &g, &model, &ts, &opts).unwrap();
    let g2m1: Vec<f64> = curve.points.iter().map(|pt| pt.g2 - 1.0).collect();
    let eta: Vec<f64> = curve.points.iter().map(|pt| pt.eta_deph).collect();
    let tau_g = fit_lifetime_1e(&ts, &g2m1, DecayForm::Gaussian, Some(0.0)).unwrap().get("tau");
    let tau_eta = fit_lifetime_1e(&ts, &eta, DecayForm::Gaussian, Some(0.0)).unwrap().get("tau");
    assert!((tau_g / tau_eta - 1.0).abs() < 0.25, "{tau_g} vs {tau_eta}");
}

#[test]
fn echo_on_skips_zero_storage_time() {
    let g = BeamGeometry::degenerate_wavelength(795e-9, 1.1f64.to_radians(), 2.1f64.to_radians()).unwrap();
    let spec = EnsembleSpec::rb87(1, 15e-6, [500e-6; 3], 100e-6).unwrap();
    let p = calibrate(0.0035, 0.0028, 24.3, ReadBackground::default(), 0.008).unwrap();
    let opts = CurveOptions {
        echo_on: true,
        epsilon: 0.03,
        policy: SchedulePolicy::Centered,
        n_trials: 1_000_000,
    };
    let curve = g2_curve(&p, &g, &EfficiencyModel::closed_form(&spec), &[0.0, 100e-6], &opts).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.skipped.len(), 1);
    assert_eq!(curve.skipped[0].t, 0.0);
}
