//! SURE-based tuning: risk estimate for soft thresholding inside AMP,
//! data-driven thresholds, prior-variance estimation and P-GENP-AMP.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::amp::{
    amp_reconstruct, genp_amp_reconstruct, AmpOptions, ReconstructionReport, ThresholdPolicy,
};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SureEstimate {
    pub r_hat_over_n: f64,
    pub theta: f64,
    pub sigma_t2: f64,
}

/// Stein's unbiased estimate of the per-entry risk of `η(x̂₀; θ)` when
/// `x̂₀ = x + N(0, σt²)`:
/// `‖η − x̂₀‖²/n + σt² + (2σt²/n)·Σ(η' − 1)`.
pub fn sure_risk(x_hat0: ArrayView1<f64>, theta: f64, sigma_t2: f64) -> SureEstimate {
    let n = x_hat0.len().max(1) as f64;
    let mut fit = 0.0;
    let mut killed = 0usize;
    for &v in x_hat0 {
        let a = v.abs();
        if a <= theta {
            fit += v * v;
            killed += 1;
        } else {
            fit += theta * theta;
        }
    }
    SureEstimate {
        r_hat_over_n: fit / n + sigma_t2 - 2.0 * sigma_t2 * killed as f64 / n,
        theta,
        sigma_t2,
    }
}

/// Threshold in `[0, max|x̂₀|]` minimising `sure_risk`.
///
/// Between consecutive order statistics of `|x̂₀|` the risk is increasing
/// in θ, so the minimum sits at θ = 0 or at one of the order statistics;
/// all of them are scanned with prefix sums.
pub fn sure_tuned_threshold(x_hat0: ArrayView1<f64>, sigma_t2: f64) -> f64 {
    sure_tuned_threshold_keeping(x_hat0, sigma_t2, x_hat0.len())
}

/// As [`sure_tuned_threshold`], restricted to thresholds that leave at most
/// `max_keep` nonzero entries.
pub fn sure_tuned_threshold_keeping(
    x_hat0: ArrayView1<f64>,
    sigma_t2: f64,
    max_keep: usize,
) -> f64 {
    let n = x_hat0.len();
    if n == 0 {
        return 0.0;
    }
    let mut mags: Vec<f64> = x_hat0.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    // risk·n at θ with j entries below: Σ_{i<j} a_i² + (n−j)θ² + nσ² − 2σ²j
    let mut best_theta = 0.0;
    let zeros = mags.iter().take_while(|v| **v == 0.0).count();
    let mut best = if n - zeros <= max_keep {
        nf * sigma_t2 - 2.0 * sigma_t2 * zeros as f64
    } else {
        f64::INFINITY
    };
    let mut prefix = 0.0;
    let mut i = 0;
    while i < n {
        let a = mags[i];
        let mut j = i;
        while j < n && mags[j] == a {
            prefix += a * a;
            j += 1;
        }
        let risk = prefix + (n - j) as f64 * a * a + nf * sigma_t2 - 2.0 * sigma_t2 * j as f64;
        if risk < best && n - j <= max_keep {
            best = risk;
            best_theta = a;
        }
        i = j;
    }
    best_theta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    /// ‖x̃ − x_AMP‖²/n − r̂/n.
    SureCorrected,
    /// ‖x̃ − x̂₀‖²/n − σ*².
    Unthresholded,
    /// ‖x̃ − x_AMP‖²/n.
    Faked,
}

impl std::str::FromStr for VarianceMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sure" | "sure_corrected" => Ok(Self::SureCorrected),
            "unthresholded" => Ok(Self::Unthresholded),
            "faked" => Ok(Self::Faked),
            other => crate::error::invalid(format!("unknown variance method '{other}'")),
        }
    }
}

/// Whether σ*² in the unthresholded estimator is per entry (default) or a
/// total that is divided by n along with the norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NpiUnits {
    #[default]
    PerEntry,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorVarianceEstimate {
    /// The estimate selected by `method`, clamped at 0.
    pub sigma_s2_hat: f64,
    pub method: VarianceMethod,
    pub sure_corrected: f64,
    pub unthresholded: f64,
    pub faked: f64,
    /// ‖x̃ − x_AMP‖²/n.
    pub prior_gap: f64,
    /// Cross-fitted r̂/n at the last SURE-AMP iteration; this is what
    /// `sure_corrected` subtracts.
    pub sure_term: f64,
    /// r̂/n evaluated on the same entries that chose θ. Biased low, because
    /// the minimum of a noisy risk estimate undershoots the risk.
    pub sure_term_in_sample: f64,
    pub reliable: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceOptions {
    pub method: VarianceMethod,
    pub units: NpiUnits,
    pub amp: AmpOptions,
    /// Relative change of the noise estimate over the last iterations above
    /// which the AMP run is considered not settled.
    pub settle_tol: f64,
    pub settle_window: usize,
    /// Smallest share of the final effective noise that may be left over for
    /// measurement noise once the estimated interference is removed. Below
    /// it the state evolution map is nearly flat at its fixed point, which is
    /// how the run looks above the phase transition.
    #[serde(default = "default_min_noise_share")]
    pub min_noise_share: f64,
}

fn default_min_noise_share() -> f64 {
    0.1
}

impl Default for VarianceOptions {
    fn default() -> Self {
        Self {
            method: VarianceMethod::SureCorrected,
            units: NpiUnits::PerEntry,
            amp: AmpOptions::default(),
            settle_tol: 0.1,
            settle_window: 10,
            min_noise_share: default_min_noise_share(),
        }
    }
}

fn settled(npi: &[f64], window: usize, tol: f64) -> bool {
    if npi.len() <= window {
        return false;
    }
    let tail = &npi[npi.len() - window - 1..];
    let last = *tail.last().unwrap();
    let flat = tail
        .iter()
        .all(|v| (v - last).abs() <= tol * last.max(f64::MIN_POSITIVE));
    // a trace still shrinking toward zero is converging, not wandering
    let shrinking = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol));
    flat || shrinking
}

/// SURE risk with the threshold chosen on the even entries and evaluated
/// on the odd ones, and vice versa, averaged.
pub fn cross_fitted_sure(x_hat0: ArrayView1<f64>, sigma_t2: f64) -> f64 {
    let even: Array1<f64> = x_hat0.iter().step_by(2).copied().collect();
    let odd: Array1<f64> = x_hat0.iter().skip(1).step_by(2).copied().collect();
    if odd.is_empty() {
        return sure_risk(x_hat0, sure_tuned_threshold(x_hat0, sigma_t2), sigma_t2).r_hat_over_n;
    }
    let on_odd = sure_risk(
        odd.view(),
        sure_tuned_threshold(even.view(), sigma_t2),
        sigma_t2,
    );
    let on_even = sure_risk(
        even.view(),
        sure_tuned_threshold(odd.view(), sigma_t2),
        sigma_t2,
    );
    let (ne, no) = (even.len() as f64, odd.len() as f64);
    (on_odd.r_hat_over_n * no + on_even.r_hat_over_n * ne) / (ne + no)
}

/// Estimates σs² from a SURE-tuned plain AMP run on `(y, A)`.
pub fn estimate_prior_variance(
    x_tilde: ArrayView1<f64>,
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    opts: &VarianceOptions,
) -> Result<(PriorVarianceEstimate, ReconstructionReport)> {
    let rep = match amp_reconstruct(y, a, ThresholdPolicy::Sure, &opts.amp, None) {
        Ok(rep) => rep,
        Err(crate::Error::Divergence { iteration, reason }) => {
            let est = diverged_estimate(
                opts.method,
                format!("SURE-AMP diverged at iteration {iteration}: {reason}"),
            );
            return Ok((est, empty_report(x_tilde.len(), y.len())));
        }
        Err(e) => return Err(e),
    };
    let est = variance_from_report(x_tilde, &rep, a.nrows(), opts);
    Ok((est, rep))
}

fn diverged_estimate(method: VarianceMethod, warning: String) -> PriorVarianceEstimate {
    PriorVarianceEstimate {
        sigma_s2_hat: f64::NAN,
        method,
        sure_corrected: f64::NAN,
        unthresholded: f64::NAN,
        faked: f64::NAN,
        prior_gap: f64::NAN,
        sure_term: f64::NAN,
        sure_term_in_sample: f64::NAN,
        reliable: false,
        warnings: vec![warning],
    }
}

/// The σs² estimates from an existing SURE-AMP run with `m` measurements.
/// The run does not look at `x_tilde`, so one run serves any prior draw.
pub fn variance_from_report(
    x_tilde: ArrayView1<f64>,
    rep: &ReconstructionReport,
    m: usize,
    opts: &VarianceOptions,
) -> PriorVarianceEstimate {
    if rep.iterations_run == 0 {
        return diverged_estimate(opts.method, "SURE-AMP diverged".into());
    }
    let mut warnings = Vec::new();
    let n = x_tilde.len() as f64;
    let sigma_t2 = rep.final_npi();
    let sure = sure_risk(rep.pseudo_data.view(), rep.final_state.theta_t, sigma_t2);
    let gap = |v: &ndarray::Array1<f64>| {
        v.iter()
            .zip(x_tilde.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    };
    let prior_gap = gap(&rep.x_hat);
    let pseudo_gap = gap(&rep.pseudo_data);
    let cross = cross_fitted_sure(rep.pseudo_data.view(), sigma_t2);
    let sure_corrected = prior_gap - cross;
    let unthresholded = match opts.units {
        NpiUnits::PerEntry => pseudo_gap - sigma_t2,
        NpiUnits::Total => pseudo_gap - sigma_t2 / n,
    };
    let faked = prior_gap;
    let raw = match opts.method {
        VarianceMethod::SureCorrected => sure_corrected,
        VarianceMethod::Unthresholded => unthresholded,
        VarianceMethod::Faked => faked,
    };
    if rep.diverged {
        warnings.push("SURE-AMP noise estimate blew up".into());
    }
    if !settled(&rep.npi_trace, opts.settle_window, opts.settle_tol) && !rep.converged {
        warnings.push("SURE-AMP noise estimate did not settle".into());
    }
    let onsager = crate::amp::l0(&rep.x_hat) as f64 / m as f64;
    if onsager >= 1.0 - 1e-3 {
        warnings.push(format!(
            "Onsager factor {onsager:.4} is at the breakdown point"
        ));
    }
    let delta = m as f64 / n;
    let noise_share = 1.0 - cross / (delta * sigma_t2);
    if !(noise_share >= opts.min_noise_share) {
        warnings.push(format!(
            "interference is {:.1}% of the effective noise; the fit is above the phase transition",
            100.0 * (1.0 - noise_share)
        ));
    }
    if raw < 0.0 {
        warnings.push(format!("negative estimate {raw:.4e} clamped to 0"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    PriorVarianceEstimate {
        sigma_s2_hat: raw.max(0.0),
        method: opts.method,
        sure_corrected,
        unthresholded,
        faked,
        prior_gap,
        sure_term: cross,
        sure_term_in_sample: sure.r_hat_over_n,
        reliable: warnings.is_empty(),
        warnings,
    }
}

fn empty_report(n: usize, m: usize) -> ReconstructionReport {
    use ndarray::Array1;
    ReconstructionReport {
        x_hat: Array1::zeros(n),
        mse_trace: vec![],
        npi_trace: vec![],
        theta_trace: vec![],
        iterations_run: 0,
        converged: false,
        diverged: true,
        final_state: crate::amp::AmpState {
            x_t: Array1::zeros(n),
            r_t: Array1::zeros(m),
            theta_t: 0.0,
            u_t: 0.0,
            b_t: 0.0,
            iter: 0,
        },
        pseudo_data: Array1::zeros(n),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PGenpResult {
    pub report: ReconstructionReport,
    pub variance: PriorVarianceEstimate,
    /// The σs² actually used in the second phase.
    pub sigma_s2_used: f64,
}

/// GENP-AMP with SURE thresholds at a given prior variance.
pub fn p_genp_amp_with_variance(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    sigma_s2: f64,
    opts: &AmpOptions,
    truth: Option<ArrayView1<f64>>,
) -> Result<ReconstructionReport> {
    genp_amp_reconstruct(y, a, x_tilde, sigma_s2, ThresholdPolicy::Sure, opts, truth)
}

/// Parameterless GENP-AMP: estimate σs², then run SURE-tuned GENP-AMP.
///
/// An unusable estimate (not finite, or clamped to zero, which would make
/// the prior exact) falls back to the faked variance, which is an upper
/// estimate; the reliability flag stays false.
pub fn p_genp_amp(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    opts: &VarianceOptions,
    truth: Option<ArrayView1<f64>>,
) -> Result<PGenpResult> {
    let (variance, _) = estimate_prior_variance(x_tilde, y, a, opts)?;
    let mut sigma_s2 = variance.sigma_s2_hat;
    if !(sigma_s2 > 0.0) || !sigma_s2.is_finite() {
        sigma_s2 = if variance.faked.is_finite() && variance.faked > 0.0 {
            variance.faked
        } else {
            f64::INFINITY
        };
        log::warn!("prior variance estimate unusable, running with sigma_s2 = {sigma_s2}");
    }
    let report = p_genp_amp_with_variance(y, a, x_tilde, sigma_s2, &opts.amp, truth)?;
    Ok(PGenpResult {
        report,
        variance,
        sigma_s2_used: sigma_s2,
    })
}
