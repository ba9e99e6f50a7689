//! Scalar soft thresholding and its risk under sparse three-point laws.
//!
//! All risks are at unit noise. The risk at noise level σ with amplitude μ and
//! threshold ασ is `σ² · mse_three_point(ε, μ/σ, α)`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::normal::{normal_cdf, normal_pdf, normal_sf};

/// η(x; θ) without argument checks.
#[inline]
pub(crate) fn eta(x: f64, theta: f64) -> f64 {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

pub fn soft_threshold(x: f64, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return invalid(format!("threshold must be >= 0, got {theta}"));
    }
    Ok(eta(x, theta))
}

pub fn soft_threshold_vec(x: ArrayView1<f64>, theta: f64) -> Result<Array1<f64>> {
    if !(theta >= 0.0) {
        return invalid(format!("threshold must be >= 0, got {theta}"));
    }
    Ok(x.mapv(|v| eta(v, theta)))
}

/// a.e. derivative of η: 1 outside the dead zone, 0 on it (including |x| = θ).
#[inline]
pub fn soft_threshold_derivative(x: f64, theta: f64) -> f64 {
    if x.abs() > theta {
        1.0
    } else {
        0.0
    }
}

/// E[η(Z; α)²], the risk at a zero coordinate.
pub fn zero_risk(alpha: f64) -> f64 {
    2.0 * ((1.0 + alpha * alpha) * normal_sf(alpha) - alpha * normal_pdf(alpha))
}

/// E[(η(μ + Z; α) − μ)²] for a coordinate at amplitude μ ≥ 0.
pub fn point_risk(mu: f64, alpha: f64) -> f64 {
    if mu.is_infinite() {
        return 1.0 + alpha * alpha;
    }
    let a2 = 1.0 + alpha * alpha;
    let upper = alpha - mu; // η active above: Z > α − μ
    let lower = -alpha - mu; // η active below: Z < −α − μ
    let above = a2 * normal_sf(upper) + (-alpha - mu) * normal_pdf(upper);
    let dead = mu * mu * (normal_cdf(upper) - normal_cdf(lower));
    let below = a2 * normal_cdf(lower) - (alpha - mu) * normal_pdf(lower);
    above + dead + below
}

/// Unit-noise risk of η(·; α) under (1−ε)δ₀ + (ε/2)δ_{±μ}.
pub fn mse_three_point(epsilon: f64, mu: f64, alpha: f64) -> f64 {
    if mu.is_infinite() {
        return sup_mse(epsilon, alpha);
    }
    let zero = if epsilon < 1.0 {
        (1.0 - epsilon) * zero_risk(alpha)
    } else {
        0.0
    };
    let spike = if epsilon > 0.0 {
        epsilon * point_risk(mu.abs(), alpha)
    } else {
        0.0
    };
    zero + spike
}

/// Worst-case unit-noise risk over all laws with P(X = 0) ≥ 1 − ε.
pub fn sup_mse(epsilon: f64, alpha: f64) -> f64 {
    epsilon * (1.0 + alpha * alpha) + (1.0 - epsilon) * zero_risk(alpha)
}

/// P(|X + Z| > α) under the three-point law: the expected derivative of η.
pub fn detection_rate_three_point(epsilon: f64, mu: f64, alpha: f64) -> f64 {
    let zero = 2.0 * normal_sf(alpha);
    let spike = if mu.is_infinite() {
        1.0
    } else {
        normal_sf(alpha - mu) + normal_cdf(-alpha - mu)
    };
    (1.0 - epsilon) * zero + epsilon * spike
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxResult {
    pub alpha_pm: f64,
    pub m_pm: f64,
    /// Set for ε ∈ {0, 1}, where the optimum sits at α = ∞ or α = 0.
    pub boundary: bool,
}

fn minimax_cache() -> &'static Mutex<HashMap<u64, MinimaxResult>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, MinimaxResult>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// α±(ε) and M±(ε).
///
/// `sup_mse(ε, ·)` is strictly convex: its derivative
/// `2εα − 4(1−ε)(φ(α) − αΦ(−α))` is strictly increasing. The minimiser is the
/// root of that derivative, found by bisection on (0, 10].
pub fn minimax_threshold(epsilon: f64) -> Result<MinimaxResult> {
    if !(0.0..=1.0).contains(&epsilon) {
        return invalid(format!("epsilon must lie in [0, 1], got {epsilon}"));
    }
    if epsilon == 0.0 {
        return Ok(MinimaxResult {
            alpha_pm: f64::INFINITY,
            m_pm: 0.0,
            boundary: true,
        });
    }
    if epsilon == 1.0 {
        return Ok(MinimaxResult {
            alpha_pm: 0.0,
            m_pm: 1.0,
            boundary: true,
        });
    }
    let key = epsilon.to_bits();
    if let Some(hit) = minimax_cache().lock().unwrap().get(&key) {
        return Ok(*hit);
    }

    let slope = |a: f64| epsilon * a - 2.0 * (1.0 - epsilon) * (normal_pdf(a) - a * normal_sf(a));
    let (mut lo, mut hi) = (0.0_f64, 10.0_f64);
    if slope(hi) <= 0.0 {
        return Err(Error::NumericalFailure(format!(
            "minimax threshold for epsilon = {epsilon} lies beyond alpha = 10"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let res = MinimaxResult {
        alpha_pm: alpha,
        m_pm: sup_mse(epsilon, alpha),
        boundary: false,
    };
    minimax_cache().lock().unwrap().insert(key, res);
    Ok(res)
}

/// h±(ε, c): the smallest amplitude at which the three-point law reaches a
/// fraction (1 − c) of the minimax risk under the minimax threshold.
pub fn least_favorable_amplitude(epsilon: f64, c: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    if !(c > 0.0 && c < 1.0) {
        return invalid(format!("c must lie in (0, 1), got {c}"));
    }
    let mm = minimax_threshold(epsilon)?;
    let target = (1.0 - c) * mm.m_pm;
    let f = |mu: f64| mse_three_point(epsilon, mu, mm.alpha_pm) - target;
    if f(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NumericalFailure(format!(
                "no amplitude reaches (1 - c) M± for epsilon = {epsilon}, c = {c}: \
                 risk at mu = {hi} is {} < target {target}",
                f(hi) + target
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn soft_threshold_branches() {
        assert_eq!(soft_threshold(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.0).unwrap(), -2.0);
        assert!(soft_threshold(1.0, -0.1).is_err());
        let v = soft_threshold_vec(ndarray::array![3.0, -3.0, 0.2].view(), 1.0).unwrap();
        assert_eq!(v, ndarray::array![2.0, -2.0, 0.0]);
    }

    #[test]
    fn derivative_convention() {
        assert_eq!(soft_threshold_derivative(3.0, 1.0), 1.0);
        assert_eq!(soft_threshold_derivative(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold_derivative(1.0, 1.0), 0.0);
    }

    #[test]
    fn worst_case_limit_and_collapses() {
        let (e, a) = (0.1, 1.3);
        assert_eq!(mse_three_point(e, f64::INFINITY, a), sup_mse(e, a));
        // large finite amplitude approaches the sup
        assert!((mse_three_point(e, 60.0, a) - sup_mse(e, a)).abs() < 1e-12);
        assert!((mse_three_point(0.0, 3.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((sup_mse(1.0, 0.7) - (1.0 + 0.49)).abs() < 1e-15);
        assert!((sup_mse(0.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_monte_carlo() {
        // X ~ (1/2)δ₀ + (1/4)δ_{±2}, α = 1; 10⁷ draws.
        let (eps, mu, alpha) = (0.5, 2.0, 1.0);
        let mut rng = substream(2024, Stream::Signal);
        let n = 10_000_000usize;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let u: f64 = rng.random();
            let x = if u < 1.0 - eps {
                0.0
            } else if u < 1.0 - eps / 2.0 {
                mu
            } else {
                -mu
            };
            let z: f64 = rng.sample(StandardNormal);
            let d = eta(x + z, alpha) - x;
            s += d * d;
            s2 += d * d * d * d;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let exact = mse_three_point(eps, mu, alpha);
        assert!(
            (exact - mean).abs() < 3.0 * se,
            "exact {exact} mc {mean} se {se}"
        );
    }

    #[test]
    fn minimax_matches_grid_search() {
        let mm = minimax_threshold(0.5).unwrap();
        let grid_min = (1..=200_000)
            .map(|i| sup_mse(0.5, i as f64 * 5e-5))
            .fold(f64::INFINITY, f64::min);
        assert!((mm.m_pm - grid_min).abs() < 1e-6);
        assert!(mm.m_pm <= grid_min + 1e-15);
        assert!((mm.m_pm - sup_mse(0.5, mm.alpha_pm)).abs() < 1e-15);
    }

    #[test]
    fn minimax_is_a_saddle() {
        for &e in &[0.001, 0.0095, 0.05, 0.2, 0.6] {
            let mm = minimax_threshold(e).unwrap();
            assert!(sup_mse(e, mm.alpha_pm + 1e-3) >= mm.m_pm);
            assert!(sup_mse(e, mm.alpha_pm - 1e-3) >= mm.m_pm);
        }
    }

    #[test]
    fn minimax_risk_is_monotone_in_epsilon() {
        let grid: Vec<f64> = (1..=900).map(|i| i as f64 * 0.001).collect();
        let risks: Vec<f64> = grid
            .iter()
            .map(|&e| minimax_threshold(e).unwrap().m_pm)
            .collect();
        assert!(risks.windows(2).all(|w| w[1] > w[0]));
        assert!(risks.iter().all(|&r| r > 0.0 && r < 1.0));
    }

    #[test]
    fn minimax_boundaries() {
        let z = minimax_threshold(0.0).unwrap();
        assert!(z.boundary && z.m_pm == 0.0 && z.alpha_pm.is_infinite());
        let o = minimax_threshold(1.0).unwrap();
        assert!(o.boundary && o.m_pm == 1.0 && o.alpha_pm == 0.0);
        assert!(minimax_threshold(1.5).is_err());
    }

    #[test]
    fn denoising_risk_at_table_sparsity() {
        // The γs² = 2 validation table prints (1 − c)·M±(0.0095)·γs² = 0.115 at γs² = 2 with c = 0.02;
        // the c = 0 value is 0.0588.
        let mm = minimax_threshold(0.0095).unwrap();
        assert!((mm.m_pm - 0.0588).abs() < 5e-4, "{}", mm.m_pm);
        assert!((0.98 * mm.m_pm - 0.115 / 2.0).abs() < 1e-3);
    }

    #[test]
    fn least_favorable_amplitude_solves_defining_equation() {
        for &e in &[0.0095, 0.05, 0.19] {
            let mm = minimax_threshold(e).unwrap();
            let h1 = least_favorable_amplitude(e, 0.001).unwrap();
            let h2 = least_favorable_amplitude(e, 0.01).unwrap();
            let h3 = least_favorable_amplitude(e, 0.1).unwrap();
            assert!(h1 > h2 && h2 > h3);
            for (&c, &h) in [0.001, 0.01, 0.1].iter().zip([h1, h2, h3].iter()) {
                let ratio = mse_three_point(e, h, mm.alpha_pm) / mm.m_pm;
                assert!((ratio - (1.0 - c)).abs() < 1e-8);
            }
        }
        assert!(least_favorable_amplitude(0.0, 0.1).is_err());
        assert!(least_favorable_amplitude(0.1, 1.0).is_err());
    }

    #[test]
    fn detection_rate_matches_monte_carlo() {
        let (eps, mu, alpha) = (0.3, 1.7, 1.1);
        let mut rng = substream(5, Stream::Signal);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let u: f64 = rng.random();
            let x = if u < 1.0 - eps {
                0.0
            } else if u < 1.0 - eps / 2.0 {
                mu
            } else {
                -mu
            };
            let z: f64 = rng.sample(StandardNormal);
            if (x + z).abs() > alpha {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let exact = detection_rate_three_point(eps, mu, alpha);
        assert!((p - exact).abs() < 3.0 * se);
    }
}
