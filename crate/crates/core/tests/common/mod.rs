#![allow(dead_code)]

use genp_amp::noise_sensitivity::{denoise_bound, lasso_bound, minimax_risk};
use genp_amp::parameterless::sure_risk;
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Oracles below are written from first principles and share no code with the
// library.

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper tail P(Z > z).
pub fn upper(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// ∫_a^∞ (s·z − t)² φ(z) dz.
pub fn tail_square(a: f64, s: f64, t: f64) -> f64 {
    s * s * (a * phi(a) + upper(a)) - 2.0 * s * t * phi(a) + t * t * upper(a)
}

/// E(η(μ + σZ; θ) − μ)² without reducing to unit noise.
pub fn risk_at(mu: f64, theta: f64, sigma: f64) -> f64 {
    let hi = (theta - mu) / sigma;
    let lo = (-theta - mu) / sigma;
    let middle = mu * mu * (upper(lo) - upper(hi));
    tail_square(hi, sigma, theta) + tail_square(-lo, sigma, theta) + middle
}

pub fn three_point_risk_at(eps: f64, mu: f64, theta: f64, sigma: f64) -> f64 {
    (1.0 - eps) * risk_at(0.0, theta, sigma) + eps * risk_at(mu, theta, sigma)
}

/// Mean of `sure_risk` over 100 noise draws against the exact risk, for ten
/// seeded (θ, signal) pairs; passes when every mean is within 3 stderr.
pub fn check_sure_unbiased() -> Result<(), String> {
    let n = 400;
    let reps = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    for pair in 0..10 {
        let sigma = 0.3 + 2.0 * (pair as f64) / 10.0;
        let theta = sigma * (0.3 + 0.25 * pair as f64);
        let signal: Array1<f64> = (0..n)
            .map(|i| {
                if i % 5 == 0 {
                    (1.0 + (i % 7) as f64) * if i % 2 == 0 { 1.0 } else { -1.0 }
                } else {
                    0.0
                }
            })
            .collect();
        let exact = signal
            .iter()
            .map(|&x| risk_at(x, theta, sigma))
            .sum::<f64>()
            / n as f64;
        let estimates: Vec<f64> = (0..reps)
            .map(|_| {
                let noisy: Array1<f64> = signal
                    .iter()
                    .map(|&x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + sigma * z
                    })
                    .collect();
                sure_risk(noisy.view(), theta, sigma * sigma).r_hat_over_n
            })
            .collect();
        let mean = estimates.iter().sum::<f64>() / reps as f64;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let stderr = (var / reps as f64).sqrt();
        if (mean - exact).abs() > 3.0 * stderr {
            return Err(format!(
                "pair {pair}: mean {mean} exact {exact} stderr {stderr}"
            ));
        }
    }
    Ok(())
}

/// Bounds and monotonicity over a 20 × 20 × 5 grid in (δ, ρ, γs²); returns
/// the number of grid points checked.
pub fn check_risk_grid() -> Result<usize, String> {
    let deltas: Vec<f64> = (0..20).map(|i| 0.05 + 0.9 * i as f64 / 19.0).collect();
    let fracs: Vec<f64> = (0..20).map(|j| 0.02 + 0.98 * j as f64 / 19.0).collect();
    let gammas = [0.25, 1.0, 2.0, 4.0, 16.0];
    let fin = |r: genp_amp::Result<genp_amp::noise_sensitivity::Risk>| {
        r.map_err(|e| e.to_string()).map(|r| r.finite())
    };
    let mut checked = 0;
    for &d in &deltas {
        for &f in &fracs {
            let rho = f * 1.9_f64.min(1.0 / d);
            let mut prev = 0.0;
            for &g in &gammas {
                let m = fin(minimax_risk(d, rho, g))?.ok_or("unbounded M*")?;
                if m < prev - 1e-14 {
                    return Err(format!("not monotone in gamma at ({d}, {rho}, {g})"));
                }
                prev = m;
                if let Some(b) = fin(lasso_bound(d, rho))? {
                    if m > b * (1.0 + 1e-12) {
                        return Err(format!("above LASSO bound at ({d}, {rho}, {g})"));
                    }
                }
                let dn = fin(denoise_bound(d, rho, g))?.ok_or("unbounded denoising bound")?;
                if m > dn * (1.0 + 1e-12) {
                    return Err(format!("above denoising bound at ({d}, {rho}, {g})"));
                }
                checked += 1;
            }
        }
    }

    // fixed ε = δρ, growing δ
    let epsilons: Vec<f64> = (0..20).map(|i| 0.005 + 0.3 * i as f64 / 19.0).collect();
    for &eps in &epsilons {
        for &g in &gammas {
            let mut prev = f64::INFINITY;
            for &d in deltas.iter().filter(|&&d| d >= eps) {
                let m = fin(minimax_risk(d, eps / d, g))?.ok_or("unbounded M*")?;
                if m > prev + 1e-14 {
                    return Err(format!(
                        "not decreasing in delta at eps={eps}, gamma={g}, delta={d}"
                    ));
                }
                prev = m;
            }
        }
    }
    Ok(checked)
}
