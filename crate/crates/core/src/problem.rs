//! Problem geometry, noise levels, signal laws and seeded instance generation.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{substream, Stream};
use crate::serde_ext::ext_f64;

/// Sizes `(n, m, k)` and their ratios δ = m/n, ρ = k/m, ε = k/n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemGeometry {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub delta: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl ProblemGeometry {
    pub fn from_counts(n: usize, m: usize, k: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return invalid(format!("geometry needs n, m >= 1 (n = {n}, m = {m})"));
        }
        if k > n {
            return invalid(format!("sparsity k = {k} exceeds n = {n}"));
        }
        Ok(Self {
            n,
            m,
            k,
            delta: m as f64 / n as f64,
            rho: k as f64 / m as f64,
            epsilon: k as f64 / n as f64,
        })
    }

    /// Rounds `n·δ` and `n·δ·ρ` to the nearest integers and stores the
    /// realized ratios. ρ may exceed one.
    pub fn from_ratios(n: usize, delta: f64, rho: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() || !(rho >= 0.0) || !rho.is_finite() {
            return invalid(format!("bad ratios delta = {delta}, rho = {rho}"));
        }
        if delta * rho > 1.0 + 1e-12 {
            return invalid(format!("delta * rho = {} exceeds 1", delta * rho));
        }
        let m = (n as f64 * delta).round() as usize;
        let k = ((n as f64 * delta * rho).round() as usize).min(n);
        Self::from_counts(n, m, k)
    }
}

/// Measurement noise σ² and prior noise σs². `sigma_s2 = +inf` means no prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2: f64,
    #[serde(with = "ext_f64")]
    pub sigma_s2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64, sigma_s2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return invalid(format!("sigma2 must be finite and >= 0, got {sigma2}"));
        }
        if !(sigma_s2 >= 0.0) {
            return invalid(format!("sigma_s2 must be >= 0, got {sigma_s2}"));
        }
        Ok(Self { sigma2, sigma_s2 })
    }

    pub fn from_gamma(sigma2: f64, gamma_s2: f64) -> Result<Self> {
        let sigma_s2 = if gamma_s2.is_infinite() {
            f64::INFINITY
        } else {
            gamma_s2 * sigma2
        };
        Self::new(sigma2, sigma_s2)
    }

    /// γs² = σs²/σ². Infinite without a prior or with noiseless measurements.
    pub fn gamma_s2(&self) -> f64 {
        if self.sigma_s2.is_infinite() {
            f64::INFINITY
        } else if self.sigma2 == 0.0 {
            if self.sigma_s2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.sigma_s2 / self.sigma2
        }
    }

    pub fn has_prior(&self) -> bool {
        self.sigma_s2.is_finite()
    }
}

/// The law (1−ε)δ₀ + (ε/2)δ_{+μ} + (ε/2)δ_{−μ}; `mu = +inf` is the worst case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePointPrior {
    pub epsilon: f64,
    #[serde(with = "ext_f64")]
    pub mu: f64,
}

impl ThreePointPrior {
    pub fn new(epsilon: f64, mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return invalid(format!("epsilon must lie in [0, 1], got {epsilon}"));
        }
        if !(mu > 0.0) {
            return invalid(format!("mu must be > 0, got {mu}"));
        }
        Ok(Self { epsilon, mu })
    }

    pub fn second_moment(&self) -> f64 {
        if self.epsilon == 0.0 {
            0.0
        } else {
            self.epsilon * self.mu * self.mu
        }
    }

    /// Law of `s·X`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            epsilon: self.epsilon,
            mu: self.mu * s,
        }
    }
}

/// How the nonzero entries of `x0` are drawn; the support size comes from the
/// geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Equiprobable signs with fixed amplitude.
    ThreePoint { mu: f64 },
    /// I.i.d. N(0, variance) amplitudes.
    GaussianAmplitude { variance: f64 },
}

impl SignalSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            SignalSpec::ThreePoint { mu } if !(mu.is_finite() && mu >= 0.0) => {
                invalid(format!("three-point amplitude must be finite, got {mu}"))
            }
            SignalSpec::GaussianAmplitude { variance }
                if !(variance.is_finite() && variance >= 0.0) =>
            {
                invalid(format!("amplitude variance must be finite, got {variance}"))
            }
            _ => Ok(()),
        }
    }

    /// Per-entry second moment of `x0` at density ε.
    pub fn second_moment(&self, epsilon: f64) -> f64 {
        match *self {
            SignalSpec::ThreePoint { mu } => epsilon * mu * mu,
            SignalSpec::GaussianAmplitude { variance } => epsilon * variance,
        }
    }
}

/// Everything needed to regenerate an instance bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub geometry: ProblemGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub signal_spec: SignalSpec,
}

impl InstanceSpec {
    pub fn realize(&self) -> Result<ProblemInstance> {
        gen_instance(self.geometry, self.noise, self.signal_spec, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub x0: Array1<f64>,
    pub a: Array2<f64>,
    pub y: Array1<f64>,
    /// Noisy copy of `x0`; all zeros when the noise model has no prior.
    pub x_tilde: Array1<f64>,
    pub geometry: ProblemGeometry,
    pub noise: NoiseModel,
    pub seed: u64,
    pub signal: SignalSpec,
}

impl ProblemInstance {
    pub fn spec(&self) -> InstanceSpec {
        InstanceSpec {
            geometry: self.geometry,
            noise: self.noise,
            seed: self.seed,
            signal_spec: self.signal,
        }
    }

    /// Per-entry squared error of `estimate` against `x0`.
    pub fn mse(&self, estimate: &Array1<f64>) -> f64 {
        mse(estimate, &self.x0)
    }
}

pub fn mse(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// m×n matrix with i.i.d. N(0, 1/m) entries.
pub fn gaussian_matrix(m: usize, n: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 || n == 0 {
        return invalid(format!("matrix dimensions must be >= 1, got {m}x{n}"));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = substream(seed, Stream::Matrix);
    Ok(Array2::from_shape_fn((m, n), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    }))
}

pub fn gen_instance(
    geometry: ProblemGeometry,
    noise: NoiseModel,
    signal: SignalSpec,
    seed: u64,
) -> Result<ProblemInstance> {
    build_instance(geometry, |_| noise.sigma2, noise.sigma_s2, signal, seed)
}

/// Like `gen_instance`, with σ² set per instance so that
/// `10·log10(‖A x0‖²/(m σ²)) = snr_db`.
pub fn gen_instance_snr(
    geometry: ProblemGeometry,
    snr_db: f64,
    sigma_s2: f64,
    signal: SignalSpec,
    seed: u64,
) -> Result<ProblemInstance> {
    if !snr_db.is_finite() {
        return invalid(format!("SNR must be finite, got {snr_db}"));
    }
    let m = geometry.m as f64;
    build_instance(
        geometry,
        |power| power / m / 10f64.powf(snr_db / 10.0),
        sigma_s2,
        signal,
        seed,
    )
}

fn build_instance(
    geometry: ProblemGeometry,
    sigma2_for: impl Fn(f64) -> f64,
    sigma_s2: f64,
    signal: SignalSpec,
    seed: u64,
) -> Result<ProblemInstance> {
    let ProblemGeometry { n, m, k, .. } = geometry;
    if k > n {
        return invalid(format!("sparsity k = {k} exceeds n = {n}"));
    }
    signal.validate()?;
    let a = gaussian_matrix(m, n, seed)?;

    let mut rng = substream(seed, Stream::Signal);
    let mut x0 = Array1::<f64>::zeros(n);
    for idx in rand::seq::index::sample(&mut rng, n, k).into_iter() {
        x0[idx] = match signal {
            SignalSpec::ThreePoint { mu } => {
                if rng.random::<bool>() {
                    mu
                } else {
                    -mu
                }
            }
            SignalSpec::GaussianAmplitude { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                z * variance.sqrt()
            }
        };
    }

    let clean = a.dot(&x0);
    let noise = NoiseModel::new(sigma2_for(clean.dot(&clean)), sigma_s2)?;
    let mut rng = substream(seed, Stream::MeasurementNoise);
    let sigma = noise.sigma2.sqrt();
    let w = Array1::from_shape_fn(m, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * sigma
    });
    let y = clean + &w;

    let x_tilde = if noise.has_prior() {
        let mut rng = substream(seed, Stream::PriorNoise);
        let sigma_s = noise.sigma_s2.sqrt();
        Array1::from_shape_fn(n, |i| {
            let z: f64 = rng.sample(StandardNormal);
            x0[i] + z * sigma_s
        })
    } else {
        Array1::zeros(n)
    };

    Ok(ProblemInstance {
        x0,
        a,
        y,
        x_tilde,
        geometry,
        noise,
        seed,
        signal,
    })
}
