//! Deterministic prediction of (GENP-)AMP dynamics.
//!
//! The state is the per-entry MSE `q²` of the thresholded estimate together
//! with the prior weight `u`. Each step maps `q²` to the soft-threshold risk
//! at the noise-plus-interference level `npi(q², u)`, with `u` chosen to
//! minimise that level. Variances (`sigma2`, `sigma_s2`) are used throughout;
//! `sigma_s2 = +inf` is the plain AMP / LASSO case.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::normal::{normal_pdf, normal_sf};
use crate::problem::ThreePointPrior;
use crate::serde_ext::ext_f64;
use crate::shrinkage::{detection_rate_three_point, mse_three_point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub delta: f64,
    pub sigma2: f64,
    #[serde(with = "ext_f64")]
    pub sigma_s2: f64,
    pub alpha: f64,
    pub prior: ThreePointPrior,
}

impl SeParams {
    pub fn gamma_s2(&self) -> f64 {
        if self.sigma_s2.is_infinite() || self.sigma2 == 0.0 {
            f64::INFINITY
        } else {
            self.sigma_s2 / self.sigma2
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return invalid(format!("delta must be > 0, got {}", self.delta));
        }
        if !(self.sigma2 >= 0.0) || !(self.sigma_s2 >= 0.0) {
            return invalid("noise variances must be >= 0");
        }
        if !(self.alpha > 0.0) {
            return invalid(format!("alpha must be > 0, got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SePoint {
    pub q2: f64,
    #[serde(with = "ext_f64")]
    pub u: f64,
    pub xi2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SePrediction {
    pub xi_star2: f64,
    pub q_star2: f64,
    #[serde(with = "ext_f64")]
    pub u_star: f64,
    #[serde(with = "ext_f64")]
    pub lambda: f64,
    #[serde(with = "ext_f64")]
    pub tau_s: f64,
    /// Expected fraction of nonzero coordinates at the fixed point.
    pub detection_rate: f64,
    pub trajectory: Vec<SePoint>,
    pub converged: bool,
}

impl SePrediction {
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("iter,q2,u,xi2\n");
        for (t, p) in self.trajectory.iter().enumerate() {
            out.push_str(&format!(
                "{t},{},{},{}\n",
                crate::serde_ext::fmt_csv(p.q2),
                crate::serde_ext::fmt_csv(p.u),
                crate::serde_ext::fmt_csv(p.xi2)
            ));
        }
        out
    }
}

/// Variance of the un-thresholded estimate for weight `u`.
pub fn npi(q2: f64, u: f64, delta: f64, sigma2: f64, sigma_s2: f64) -> f64 {
    let data = sigma2 + q2 / delta;
    if u == 0.0 {
        return data;
    }
    if u.is_infinite() {
        return sigma_s2;
    }
    let w_prior = u / (1.0 + u);
    let w_data = 1.0 / (1.0 + u);
    w_prior * w_prior * sigma_s2 + w_data * w_data * data
}

/// The weight minimising `npi`: `(σ² + q²/δ)/σs²`.
pub fn optimal_u(q2: f64, delta: f64, sigma2: f64, sigma_s2: f64) -> f64 {
    if sigma_s2.is_infinite() {
        0.0
    } else if sigma_s2 == 0.0 {
        f64::INFINITY
    } else {
        (sigma2 + q2 / delta) / sigma_s2
    }
}

/// `npi` at the optimal weight: the harmonic combination of the two variances.
pub fn optimal_npi(q2: f64, delta: f64, sigma2: f64, sigma_s2: f64) -> f64 {
    let data = sigma2 + q2 / delta;
    if sigma_s2.is_infinite() {
        data
    } else if sigma_s2 == 0.0 {
        0.0
    } else {
        sigma_s2 * data / (sigma_s2 + data)
    }
}

/// Soft-threshold risk of the prior at noise variance `noise_var`, threshold
/// `alpha·√noise_var`.
pub fn mse_at_noise(noise_var: f64, prior: &ThreePointPrior, alpha: f64) -> f64 {
    if noise_var == 0.0 {
        return 0.0;
    }
    noise_var * mse_three_point(prior.epsilon, prior.mu / noise_var.sqrt(), alpha)
}

/// Ψ(q², u): the next MSE.
pub fn mse_map_psi(q2: f64, u: f64, p: &SeParams) -> f64 {
    mse_at_noise(npi(q2, u, p.delta, p.sigma2, p.sigma_s2), &p.prior, p.alpha)
}

fn detection_at_noise(noise_var: f64, prior: &ThreePointPrior, alpha: f64) -> f64 {
    if noise_var == 0.0 {
        return prior.epsilon;
    }
    detection_rate_three_point(prior.epsilon, prior.mu / noise_var.sqrt(), alpha)
}

/// (λ, τs) implied by a fixed point `(ξ², u)` with detection rate `d`.
fn lasso_params(alpha: f64, xi2: f64, u: f64, d: f64, delta: f64) -> (f64, f64) {
    if u.is_infinite() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let shrink = 1.0 - d / ((1.0 + u) * delta);
    ((1.0 + u) * alpha * xi2.sqrt() * shrink, u * shrink)
}

const DIVERGED_Q2: f64 = 1e12;

/// Runs the two-variable recursion from `q0` (default: the prior second
/// moment, matching a zero start) until `|Δq²| ≤ tol·q²`.
pub fn se_iterate(
    p: &SeParams,
    q0: Option<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<SePrediction> {
    p.validate()?;
    let mut q2 = q0.unwrap_or_else(|| p.prior.second_moment());
    let mut trajectory = Vec::with_capacity(max_iters.min(4096) + 1);
    let mut converged = false;
    for _ in 0..max_iters {
        let u = optimal_u(q2, p.delta, p.sigma2, p.sigma_s2);
        let xi2 = npi(q2, u, p.delta, p.sigma2, p.sigma_s2);
        trajectory.push(SePoint { q2, u, xi2 });
        let next = mse_at_noise(xi2, &p.prior, p.alpha);
        let step = (next - q2).abs();
        q2 = next;
        if step <= tol * q2 || q2 < 1e-300 {
            converged = true;
            break;
        }
        if !q2.is_finite() || q2 > DIVERGED_Q2 {
            break;
        }
    }
    let u_star = optimal_u(q2, p.delta, p.sigma2, p.sigma_s2);
    let xi_star2 = npi(q2, u_star, p.delta, p.sigma2, p.sigma_s2);
    trajectory.push(SePoint {
        q2,
        u: u_star,
        xi2: xi_star2,
    });
    let d = detection_at_noise(xi_star2, &p.prior, p.alpha);
    let (lambda, tau_s) = lasso_params(p.alpha, xi_star2, u_star, d, p.delta);
    Ok(SePrediction {
        xi_star2,
        q_star2: q2,
        u_star,
        lambda,
        tau_s,
        detection_rate: d,
        trajectory,
        converged,
    })
}

/// (1 + α²)Φ(−α) − αφ(α); strictly decreasing from 1/2 at α = 0.
fn alpha_min_lhs(alpha: f64) -> f64 {
    (1.0 + alpha * alpha) * normal_sf(alpha) - alpha * normal_pdf(alpha)
}

/// Threshold multiplier above which the ξ² fixed point is unique.
pub fn alpha_min(delta: f64, gamma_s2: f64) -> f64 {
    let factor = if gamma_s2.is_infinite() {
        1.0
    } else {
        let g = gamma_s2;
        (g + 1.0) * (g + 1.0) / (g * g)
    };
    let rhs = 0.5 * delta * factor;
    if rhs >= 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if alpha_min_lhs(mid) > rhs {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn check_uniqueness(p: &SeParams) -> Result<()> {
    let a_min = alpha_min(p.delta, p.gamma_s2());
    if p.alpha <= a_min {
        return Err(Error::UniquenessNotGuaranteed {
            alpha: p.alpha,
            alpha_min: a_min,
        });
    }
    Ok(())
}

/// Solves ξ² = F(ξ², α) by fixed-point iteration from the zero-start value,
/// switching to half steps once the increments change sign.
pub fn xi_fixed_point(p: &SeParams) -> Result<f64> {
    p.validate()?;
    check_uniqueness(p)?;
    let f = |xi2: f64| {
        let data = p.sigma2 + mse_at_noise(xi2, &p.prior, p.alpha) / p.delta;
        if p.sigma_s2.is_infinite() {
            data
        } else {
            p.sigma_s2 * data / (p.sigma_s2 + data)
        }
    };
    let mut xi2 = optimal_npi(p.prior.second_moment(), p.delta, p.sigma2, p.sigma_s2);
    let mut damping = 1.0;
    let mut last_step = 0.0;
    for _ in 0..5_000_000 {
        let step = f(xi2) - xi2;
        if step.abs() <= 1e-15 * xi2 || xi2 < 1e-300 {
            return Ok(xi2);
        }
        if last_step * step < 0.0 {
            damping = 0.5;
        }
        xi2 += damping * step;
        last_step = step;
        if !xi2.is_finite() || xi2 > DIVERGED_Q2 {
            break;
        }
    }
    Err(Error::NumericalFailure(format!(
        "xi fixed point did not converge (last value {xi2})"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPrediction {
    pub lambda: f64,
    pub tau_s: f64,
    pub xi_star2: f64,
    pub q_star2: f64,
    #[serde(with = "ext_f64")]
    pub u_star: f64,
    pub detection_rate: f64,
    /// Onsager factor at the fixed point, `detection_rate / ((1 + u)δ)`.
    pub onsager: f64,
}

/// GENP-LASSO parameters (λ, τs) whose minimiser the AMP fixed point at
/// threshold multiplier `alpha` reproduces.
pub fn predict_params(p: &SeParams) -> Result<ParamPrediction> {
    let xi_star2 = xi_fixed_point(p)?;
    let q_star2 = mse_at_noise(xi_star2, &p.prior, p.alpha);
    let u_star = optimal_u(q_star2, p.delta, p.sigma2, p.sigma_s2);
    let d = detection_at_noise(xi_star2, &p.prior, p.alpha);
    let (lambda, tau_s) = lasso_params(p.alpha, xi_star2, u_star, d, p.delta);
    Ok(ParamPrediction {
        lambda,
        tau_s,
        xi_star2,
        q_star2,
        u_star,
        detection_rate: d,
        onsager: d / ((1.0 + u_star) * p.delta),
    })
}

/// Smallest α on a bracket above `alpha_min` with predicted `λ(α) = lambda`.
/// λ(α) is increasing where the fixed point exists; without a prior the
/// fixed point diverges just above `alpha_min`, so the bisection runs on the
/// predicate "fixed point exists and λ(α) ≥ lambda".
pub fn alpha_for_lambda(
    mut p: SeParams,
    lambda: f64,
    alpha_hi: f64,
) -> Result<(f64, ParamPrediction)> {
    let mut lo = alpha_min(p.delta, p.gamma_s2()) + 1e-6;
    let mut hi = alpha_hi;
    p.alpha = hi;
    let lam_hi = predict_params(&p)?.lambda;
    if lambda > lam_hi {
        return Err(Error::NumericalFailure(format!(
            "lambda = {lambda} above the reachable maximum {lam_hi}"
        )));
    }
    let reaches = |p: &SeParams| predict_params(p).is_ok_and(|r| r.lambda >= lambda);
    p.alpha = lo;
    if reaches(&p) {
        return Err(Error::NumericalFailure(format!(
            "lambda = {lambda} below the reachable minimum {}",
            predict_params(&p)?.lambda
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        p.alpha = mid;
        if reaches(&p) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    p.alpha = hi;
    Ok((p.alpha, predict_params(&p)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shrinkage::minimax_threshold;

    fn table1_params(delta: f64, rho: f64, gamma_s2: f64, h: f64) -> SeParams {
        let eps = delta * rho;
        SeParams {
            delta,
            sigma2: 1.0,
            sigma_s2: gamma_s2,
            alpha: minimax_threshold(eps).unwrap().alpha_pm,
            prior: ThreePointPrior::new(eps, h).unwrap(),
        }
    }

    #[test]
    fn npi_collapses() {
        assert_eq!(npi(0.3, 0.0, 0.5, 1.0, 2.0), 1.0 + 0.6);
        assert_eq!(npi(0.3, f64::INFINITY, 0.5, 1.0, 2.0), 2.0);
        assert!((npi(0.3, 1e12, 0.5, 1.0, 2.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn npi_at_optimal_weight_is_harmonic() {
        for &(q2, d, s2, ss2) in &[
            (0.1, 0.25, 1.0, 1.0),
            (2.0, 0.1, 0.3, 4.0),
            (0.0, 0.7, 2.0, 0.5),
        ] {
            let u = optimal_u(q2, d, s2, ss2);
            let data: f64 = s2 + q2 / d;
            let closed = ss2 * data / (ss2 + data);
            assert!((npi(q2, u, d, s2, ss2) - closed).abs() < 1e-12);
            assert!((optimal_npi(q2, d, s2, ss2) - closed).abs() < 1e-15);
        }
    }

    #[test]
    fn optimal_u_edge_cases() {
        assert_eq!(optimal_u(0.0, 0.4, 1.0, 1.0), 1.0);
        assert_eq!(optimal_u(0.2, 0.4, 1.0, f64::INFINITY), 0.0);
        assert!(optimal_u(0.2, 0.4, 1.0, 0.0).is_infinite());
    }

    #[test]
    fn psi_reduces_to_unit_noise_risk() {
        // σ² + q²/δ = 1 with u = 0 gives npi = 1.
        let p = SeParams {
            delta: 0.5,
            sigma2: 0.5,
            sigma_s2: f64::INFINITY,
            alpha: 1.2,
            prior: ThreePointPrior::new(0.1, 2.0).unwrap(),
        };
        let direct = mse_three_point(0.1, 2.0, 1.2);
        assert_eq!(mse_map_psi(0.25, 0.0, &p), direct);
    }

    #[test]
    fn zero_signal_maps_to_small_risk() {
        let p = SeParams {
            delta: 0.5,
            sigma2: 1.0,
            sigma_s2: 1.0,
            alpha: 8.0,
            prior: ThreePointPrior::new(0.0, 1.0).unwrap(),
        };
        assert!(mse_map_psi(1.0, 1.0, &p) < 1e-12);
    }

    #[test]
    fn noiseless_recovery_below_transition() {
        let eps: f64 = 0.05;
        let p = SeParams {
            delta: 0.5,
            sigma2: 0.0,
            sigma_s2: f64::INFINITY,
            alpha: minimax_threshold(eps).unwrap().alpha_pm,
            prior: ThreePointPrior::new(eps, 1.0).unwrap(),
        };
        let pred = se_iterate(&p, None, 10_000, 1e-12).unwrap();
        assert!(pred.q_star2 < 1e-20, "{}", pred.q_star2);
    }

    #[test]
    fn alpha_min_properties() {
        assert_eq!(alpha_min(1.0, f64::INFINITY), 0.0);
        let a1 = alpha_min(0.1, 2.0);
        let a2 = alpha_min(0.3, 2.0);
        assert!(a1 >= a2);
        for &(d, g) in &[(0.1, 1.0), (0.05, 10.0), (0.2, f64::INFINITY), (0.01, 0.5)] {
            let a = alpha_min(d, g);
            let factor = if f64::is_infinite(g) {
                1.0
            } else {
                (g + 1.0) * (g + 1.0) / (g * g)
            };
            let resid = alpha_min_lhs(a) - 0.5 * d * factor;
            assert!(resid.abs() < 1e-12, "({d}, {g}) -> {a}, residual {resid}");
        }
    }

    #[test]
    fn xi_fixed_point_limits() {
        let mut p = table1_params(0.25, 0.134, 1.0, 2.0);
        p.sigma_s2 = f64::INFINITY;
        let xi2 = xi_fixed_point(&p).unwrap();
        let classical = p.sigma2 + mse_at_noise(xi2, &p.prior, p.alpha) / p.delta;
        assert!((xi2 - classical).abs() < 1e-12);

        p.sigma_s2 = 1e-12;
        assert!(xi_fixed_point(&p).unwrap() < 1e-11);
    }

    #[test]
    fn xi_fixed_point_rejects_small_alpha() {
        let mut p = table1_params(0.1, 0.095, 1.0, 2.8);
        p.alpha = 0.5 * alpha_min(0.1, 1.0);
        assert!(matches!(
            xi_fixed_point(&p),
            Err(Error::UniquenessNotGuaranteed { .. })
        ));
    }

    #[test]
    fn two_solvers_agree() {
        let rows = [
            (0.1, 0.095, 2.828),
            (0.25, 0.201, 2.547),
            (0.5, 0.347, 2.291),
            (0.1, 1.9, 2.656),
        ];
        for &(d, r, h) in &rows {
            let p = table1_params(d, r, 1.0, h);
            let se = se_iterate(&p, None, 1_000_000, 1e-15).unwrap();
            let xi2 = xi_fixed_point(&p).unwrap();
            assert!(se.converged);
            assert!(
                (se.xi_star2 - xi2).abs() < 1e-8,
                "({d},{r}) {} vs {xi2}",
                se.xi_star2
            );
            // one more step stays put
            let again = mse_map_psi(se.q_star2, se.u_star, &p);
            assert!((again - se.q_star2).abs() < 1e-12);
        }
    }

    #[test]
    fn table_fixed_points() {
        // Amplitudes h* are the published validation-table values.
        let p = table1_params(0.1, 0.095, 1.0, 2.828);
        let q = se_iterate(&p, None, 1_000_000, 1e-14).unwrap().q_star2;
        assert!((q - 0.033).abs() < 0.002, "{q}");
        let p = table1_params(0.1, 0.095, 2.0, 3.465);
        let q = se_iterate(&p, None, 1_000_000, 1e-14).unwrap().q_star2;
        assert!((q - 0.049).abs() < 0.002, "{q}");
    }

    #[test]
    fn weight_identity_at_unit_variances() {
        let p = table1_params(0.1, 0.095, 1.0, 2.828);
        let se = se_iterate(&p, None, 1_000_000, 1e-14).unwrap();
        assert!((se.u_star - (1.0 + se.q_star2 / 0.1)).abs() < 1e-12);
        assert!((se.u_star - 1.33).abs() < 0.01);
    }

    #[test]
    fn predicted_parameters_match_tables() {
        let pr = predict_params(&table1_params(0.1, 0.095, 1.0, 2.828)).unwrap();
        assert!((pr.lambda - 2.585).abs() < 0.01, "{}", pr.lambda);
        assert!((pr.tau_s - 0.995).abs() < 0.005, "{}", pr.tau_s);
        let pr = predict_params(&table1_params(0.1, 0.095, 2.0, 3.465)).unwrap();
        assert!((pr.lambda - 2.107).abs() < 0.01, "{}", pr.lambda);
        assert!((pr.tau_s - 0.497).abs() < 0.005, "{}", pr.tau_s);
    }

    #[test]
    fn no_prior_gives_zero_tau() {
        let mut p = table1_params(0.25, 0.134, 1.0, 2.0);
        p.sigma_s2 = f64::INFINITY;
        let pr = predict_params(&p).unwrap();
        assert_eq!(pr.tau_s, 0.0);
        assert_eq!(pr.u_star, 0.0);
        let classical = p.alpha * pr.xi_star2.sqrt() * (1.0 - pr.detection_rate / p.delta);
        assert!((pr.lambda - classical).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let p = table1_params(0.25, 0.134, 1.0, 2.5);
        let se = se_iterate(&p, None, 5, 0.0).unwrap();
        let csv = se.trajectory_csv();
        assert!(csv.starts_with("iter,q2,u,xi2\n"));
        assert_eq!(csv.lines().count(), 1 + se.trajectory.len());
    }
}
