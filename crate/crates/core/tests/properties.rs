use genp_amp::amp::{amp_reconstruct, genp_amp_reconstruct, AmpOptions, ThresholdPolicy};
use genp_amp::noise_sensitivity::minimax_risk;
use genp_amp::shrinkage::{minimax_threshold, mse_three_point, soft_threshold, sup_mse};
use genp_amp::state_evolution::{npi, optimal_npi, optimal_u};
use genp_amp::{alpha_min, gen_instance, NoiseModel, ProblemGeometry, SignalSpec};
use proptest::prelude::*;

mod common;
use common::{phi, three_point_risk_at, upper};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn shrinkage_risk_scale_invariance(
        eps in 0.001f64..0.999,
        mu in 0.0f64..12.0,
        alpha in 0.05f64..5.0,
        sigma in 0.05f64..20.0,
    ) {
        let scaled = sigma * sigma * mse_three_point(eps, mu / sigma, alpha);
        let direct = three_point_risk_at(eps, mu, alpha * sigma, sigma);
        prop_assert!((scaled - direct).abs() <= 1e-10 * direct.max(1.0), "{scaled} vs {direct}");
    }

    #[test]
    fn soft_threshold_is_nonexpansive(a in -50.0f64..50.0, b in -50.0f64..50.0, theta in 0.0f64..10.0) {
        let d = (soft_threshold(a, theta).unwrap() - soft_threshold(b, theta).unwrap()).abs();
        prop_assert!(d <= (a - b).abs() + 1e-14 * (a.abs() + b.abs() + theta));
    }

    #[test]
    fn worst_case_risk_dominates(eps in 0.001f64..0.9, mu in 0.0f64..30.0, alpha in 0.1f64..5.0) {
        prop_assert!(sup_mse(eps, alpha) >= mse_three_point(eps, mu, alpha) - 1e-12);
    }

    #[test]
    fn minimax_threshold_is_a_saddle(eps in 0.001f64..0.6) {
        let r = minimax_threshold(eps).unwrap();
        for d in [-1e-3, 1e-3] {
            prop_assert!(sup_mse(eps, r.alpha_pm + d) >= r.m_pm - 1e-12);
        }
    }

    #[test]
    fn npi_identity(
        q2 in 0.0f64..10.0,
        u in 0.0f64..50.0,
        delta in 0.01f64..1.0,
        sigma2 in 0.01f64..10.0,
        sigma_s2 in 0.01f64..10.0,
    ) {
        let expected = (u / (1.0 + u)).powi(2) * sigma_s2 + (sigma2 + q2 / delta) / (1.0 + u).powi(2);
        let got = npi(q2, u, delta, sigma2, sigma_s2);
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));

        // at the optimal weight the two variances combine harmonically
        let data = sigma2 + q2 / delta;
        let u_opt = optimal_u(q2, delta, sigma2, sigma_s2);
        prop_assert!((u_opt * sigma_s2 - data).abs() <= 1e-12 * data.max(1.0));
        let harmonic = 1.0 / (1.0 / data + 1.0 / sigma_s2);
        let at_opt = npi(q2, u_opt, delta, sigma2, sigma_s2);
        prop_assert!((at_opt - harmonic).abs() <= 1e-12 * harmonic.max(1.0));
        prop_assert!((optimal_npi(q2, delta, sigma2, sigma_s2) - harmonic).abs() <= 1e-12 * harmonic.max(1.0));
    }

    #[test]
    fn optimal_weight_is_a_local_minimum(
        q2 in 0.0f64..10.0,
        delta in 0.01f64..1.0,
        sigma2 in 0.01f64..10.0,
        sigma_s2 in 0.01f64..10.0,
    ) {
        let u = optimal_u(q2, delta, sigma2, sigma_s2);
        let best = npi(q2, u, delta, sigma2, sigma_s2);
        for f in [0.99, 1.01] {
            prop_assert!(best <= npi(q2, u * f, delta, sigma2, sigma_s2));
        }
    }

    #[test]
    fn minimax_risk_solves_its_quadratic(
        delta in 0.02f64..1.0,
        frac in 0.0f64..1.0,
        gamma in 0.01f64..100.0,
    ) {
        let rho = frac * 1.9_f64.min(1.0 / delta);
        let m = minimax_threshold(delta * rho).unwrap().m_pm;
        let x = minimax_risk(delta, rho, gamma).unwrap().finite().unwrap();
        let g = delta * gamma + delta - gamma * m;
        let scale = x * x + g.abs() * x + delta * gamma * m;
        prop_assert!((x * x + g * x - delta * gamma * m).abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn alpha_min_residual(delta in 0.01f64..1.0, gamma in 0.05f64..1e4) {
        let a = alpha_min(delta, gamma);
        let rhs = 0.5 * delta * (gamma + 1.0).powi(2) / (gamma * gamma);
        if rhs >= 0.5 {
            prop_assert_eq!(a, 0.0);
        } else {
            let lhs = (1.0 + a * a) * upper(a) - a * phi(a);
            prop_assert!((lhs - rhs).abs() <= 1e-12, "residual {}", lhs - rhs);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn genp_amp_without_prior_is_amp(seed in 0u64..1_000_000, sure in any::<bool>()) {
        let geometry = ProblemGeometry::from_ratios(300, 0.5, 0.2).unwrap();
        let noise = NoiseModel::new(0.1, f64::INFINITY).unwrap();
        let inst = gen_instance(geometry, noise, SignalSpec::ThreePoint { mu: 3.0 }, seed).unwrap();
        let policy = if sure {
            ThresholdPolicy::Sure
        } else {
            ThresholdPolicy::Multiplier(minimax_threshold(geometry.epsilon).unwrap().alpha_pm)
        };
        let opts = AmpOptions::with_iters(40);
        let truth = Some(inst.x0.view());
        let plain = amp_reconstruct(inst.y.view(), inst.a.view(), policy, &opts, truth).unwrap();
        let genp = genp_amp_reconstruct(
            inst.y.view(), inst.a.view(), inst.x_tilde.view(), f64::INFINITY, policy, &opts, truth,
        ).unwrap();
        prop_assert_eq!(&plain, &genp);
        prop_assert!(plain.x_hat.iter().zip(&genp.x_hat).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn sure_is_unbiased() {
    common::check_sure_unbiased().unwrap();
}

#[test]
fn risk_bounds_and_monotonicity_grid() {
    assert_eq!(common::check_risk_grid().unwrap(), 20 * 20 * 5);
}
