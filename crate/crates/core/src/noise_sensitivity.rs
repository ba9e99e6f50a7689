//! Closed-form minimax risk of GENP-LASSO over the (δ, ρ, γs²) space, the
//! bounds against LASSO and scalar denoising, and minimax tuning.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::problem::ThreePointPrior;
use crate::serde_ext::{ext_f64, fmt_csv};
use crate::shrinkage::{least_favorable_amplitude, minimax_threshold};
use crate::state_evolution::{predict_params, se_iterate, ParamPrediction, SeParams};

/// An MSE that may be unbounded (above the AMP phase transition).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Risk {
    Finite(f64),
    Unbounded,
}

impl Risk {
    pub fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            Risk::Finite(v)
        } else {
            Risk::Unbounded
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Risk::Finite(v) => v,
            Risk::Unbounded => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Risk::Finite(v) => Some(v),
            Risk::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Risk::Unbounded)
    }

    /// Table cell: fixed decimals, or "UB".
    pub fn cell(self, decimals: usize) -> String {
        match self {
            Risk::Finite(v) => format!("{v:.decimals$}"),
            Risk::Unbounded => "UB".to_string(),
        }
    }
}

impl std::fmt::Display for Risk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Risk::Finite(v) => write!(f, "{v}"),
            Risk::Unbounded => f.write_str("UB"),
        }
    }
}

impl Serialize for Risk {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ext_f64::serialize(&self.value(), s)
    }
}

impl<'de> Deserialize<'de> for Risk {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ext_f64::deserialize(d).map(Risk::from_f64)
    }
}

fn check_point(delta: f64, rho: f64, gamma_s2: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return invalid(format!("delta must be > 0, got {delta}"));
    }
    if !(rho >= 0.0) {
        return invalid(format!("rho must be >= 0, got {rho}"));
    }
    let eps = delta * rho;
    if eps > 1.0 + 1e-12 {
        return invalid(format!("delta * rho = {eps} exceeds 1"));
    }
    if !(gamma_s2 >= 0.0) {
        return invalid(format!("gamma_s2 must be >= 0, got {gamma_s2}"));
    }
    Ok(eps.min(1.0))
}

/// Positive root of x² + G·x − K = 0 (K ≥ 0), written to avoid cancellation.
fn positive_root(g: f64, k: f64) -> f64 {
    let disc = (g * g + 4.0 * k).sqrt();
    if g >= 0.0 {
        if k == 0.0 {
            0.0
        } else {
            2.0 * k / (g + disc)
        }
    } else {
        0.5 * (disc - g)
    }
}

/// Root of the risk quadratic with `m` standing for M±(δρ),
/// or the LASSO bound when γs² = ∞.
fn risk_root(delta: f64, gamma_s2: f64, m: f64) -> Risk {
    if gamma_s2.is_infinite() {
        return lasso_bound_from(delta, m);
    }
    let g = delta * gamma_s2 + delta - gamma_s2 * m;
    Risk::Finite(positive_root(g, delta * gamma_s2 * m))
}

fn lasso_bound_from(delta: f64, m: f64) -> Risk {
    if m < delta {
        Risk::Finite(m / (1.0 - m / delta))
    } else {
        Risk::Unbounded
    }
}

/// M*(δ, ρ, γs²): minimax per-entry MSE over σ² of optimally tuned
/// GENP-LASSO. Finite for every finite γs²; at γs² = ∞ it is the LASSO bound.
pub fn minimax_risk(delta: f64, rho: f64, gamma_s2: f64) -> Result<Risk> {
    let eps = check_point(delta, rho, gamma_s2)?;
    Ok(risk_root(delta, gamma_s2, minimax_threshold(eps)?.m_pm))
}

/// M^b(δ, ρ) = M±/(1 − M±/δ), unbounded once M±(δρ) ≥ δ.
pub fn lasso_bound(delta: f64, rho: f64) -> Result<Risk> {
    let eps = check_point(delta, rho, f64::INFINITY)?;
    Ok(lasso_bound_from(delta, minimax_threshold(eps)?.m_pm))
}

/// M±(δρ)·γs².
pub fn denoise_bound(delta: f64, rho: f64, gamma_s2: f64) -> Result<Risk> {
    let eps = check_point(delta, rho, gamma_s2)?;
    Ok(Risk::from_f64(minimax_threshold(eps)?.m_pm * gamma_s2))
}

fn npi_from(m_star: Risk, delta: f64, gamma_s2: f64, sigma2: f64) -> Risk {
    let Risk::Finite(ms) = m_star else {
        return Risk::Unbounded;
    };
    let data = 1.0 + ms / delta;
    if gamma_s2.is_infinite() {
        Risk::Finite(sigma2 * data)
    } else {
        Risk::Finite(gamma_s2 * sigma2 * data / (gamma_s2 + data))
    }
}

/// NPI* = γs²σ²(1 + M*/δ)/(γs² + 1 + M*/δ).
pub fn npi_star(delta: f64, rho: f64, gamma_s2: f64, sigma2: f64) -> Result<Risk> {
    Ok(npi_from(
        minimax_risk(delta, rho, gamma_s2)?,
        delta,
        gamma_s2,
        sigma2,
    ))
}

fn check_c(c: f64) -> Result<()> {
    if !(c >= 0.0 && c < 1.0) {
        return invalid(format!("c must lie in [0, 1), got {c}"));
    }
    Ok(())
}

/// Formal MSE (per unit σ²) of the minimax-tuned estimator on the
/// c-least-favorable law: the minimax root with M± replaced by (1 − c)M±
/// in both the linear term and the discriminant.
pub fn nearly_least_favorable_fmse(delta: f64, rho: f64, gamma_s2: f64, c: f64) -> Result<Risk> {
    let eps = check_point(delta, rho, gamma_s2)?;
    check_c(c)?;
    Ok(risk_root(
        delta,
        gamma_s2,
        (1.0 - c) * minimax_threshold(eps)?.m_pm,
    ))
}

/// The same quantity with the c-free G under the square root.
pub fn nearly_least_favorable_fmse_displayed(
    delta: f64,
    rho: f64,
    gamma_s2: f64,
    c: f64,
) -> Result<Risk> {
    let eps = check_point(delta, rho, gamma_s2)?;
    check_c(c)?;
    if gamma_s2.is_infinite() {
        return nearly_least_favorable_fmse(delta, rho, gamma_s2, c);
    }
    let m = minimax_threshold(eps)?.m_pm;
    let g = delta * gamma_s2 + delta - gamma_s2 * m;
    let gc = delta * gamma_s2 + delta - (1.0 - c) * gamma_s2 * m;
    Ok(Risk::Finite(
        0.5 * ((g * g + 4.0 * (1.0 - c) * delta * gamma_s2 * m).sqrt() - gc),
    ))
}

/// Formal minimax parameters and the amplitude of the c-least-favorable law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxParams {
    pub h_star: f64,
    pub lambda_star: f64,
    pub tau_star: f64,
    /// Predicted per-entry MSE at the c-least-favorable law.
    pub fmse: f64,
    #[serde(with = "ext_f64")]
    pub u_star: f64,
    pub npi: f64,
    pub detection_rate: f64,
    pub alpha: f64,
}

/// h* = h±(δρ, c)·√NPI*, and (λ*, τ*) read off the state-evolution fixed
/// point of the three-point law with amplitude h* under threshold α±(δρ).
/// Errors when the LASSO risk is unbounded (γs² = ∞ above the transition).
pub fn minimax_params(
    delta: f64,
    rho: f64,
    gamma_s2: f64,
    sigma2: f64,
    c: f64,
) -> Result<MinimaxParams> {
    let eps = check_point(delta, rho, gamma_s2)?;
    if !(c > 0.0 && c < 1.0) {
        return invalid(format!("c must lie in (0, 1), got {c}"));
    }
    if !(sigma2 > 0.0) {
        return invalid(format!("sigma2 must be > 0, got {sigma2}"));
    }
    let Risk::Finite(npi) = npi_star(delta, rho, gamma_s2, sigma2)? else {
        return invalid(format!(
            "LASSO risk is unbounded at (delta, rho) = ({delta}, {rho})"
        ));
    };
    let h_star = least_favorable_amplitude(eps, c)? * npi.sqrt();
    let alpha = minimax_threshold(eps)?.alpha_pm;
    let p = SeParams {
        delta,
        sigma2,
        sigma_s2: gamma_s2 * sigma2,
        alpha,
        prior: ThreePointPrior::new(eps, h_star)?,
    };
    let pred = match predict_params(&p) {
        Ok(pred) => pred,
        // α± can fall below α_min at large γs²; the recursion from the zero
        // start still settles, and its limit is the fixed point the algorithm
        // reaches.
        Err(Error::UniquenessNotGuaranteed { alpha_min, .. }) => {
            log::warn!("alpha = {alpha} is below alpha_min = {alpha_min}; using the fixed point reached from zero");
            let se = se_iterate(&p, None, 10_000_000, 1e-14)?;
            if !se.converged {
                return Err(Error::NumericalFailure(
                    "state evolution did not converge".into(),
                ));
            }
            ParamPrediction {
                lambda: se.lambda,
                tau_s: se.tau_s,
                xi_star2: se.xi_star2,
                q_star2: se.q_star2,
                u_star: se.u_star,
                detection_rate: se.detection_rate,
                onsager: se.detection_rate / ((1.0 + se.u_star) * delta),
            }
        }
        Err(e) => return Err(e),
    };
    Ok(MinimaxParams {
        h_star,
        lambda_star: pred.lambda,
        tau_star: pred.tau_s,
        fmse: pred.q_star2,
        u_star: pred.u_star,
        npi: pred.xi_star2,
        detection_rate: pred.detection_rate,
        alpha,
    })
}

/// Amplitude h±(δρ, c)·√(σ²(1 + M^b/δ)) of the c-least-favorable law for
/// plain AMP; `None` above the AMP transition.
pub fn amp_least_favorable_amplitude(
    delta: f64,
    rho: f64,
    sigma2: f64,
    c: f64,
) -> Result<Option<f64>> {
    let eps = check_point(delta, rho, f64::INFINITY)?;
    let Risk::Finite(mb) = lasso_bound(delta, rho)? else {
        return Ok(None);
    };
    Ok(Some(
        least_favorable_amplitude(eps, c)? * (sigma2 * (1.0 + mb / delta)).sqrt(),
    ))
}

/// State-evolution MSE of plain AMP at α±(δρ) on its own c-least-favorable
/// law.
pub fn amp_nearly_least_favorable_fmse(delta: f64, rho: f64, sigma2: f64, c: f64) -> Result<Risk> {
    let eps = delta * rho;
    let Some(h) = amp_least_favorable_amplitude(delta, rho, sigma2, c)? else {
        return Ok(Risk::Unbounded);
    };
    let p = SeParams {
        delta,
        sigma2,
        sigma_s2: f64::INFINITY,
        alpha: minimax_threshold(eps)?.alpha_pm,
        prior: ThreePointPrior::new(eps, h)?,
    };
    let pred = se_iterate(&p, None, 10_000_000, 1e-14)?;
    if !pred.converged {
        return Err(Error::NumericalFailure(
            "AMP state evolution did not converge".into(),
        ));
    }
    Ok(Risk::Finite(pred.q_star2))
}

/// max over ρ of M*: attained at ρ = 1/δ where M± = 1.
pub fn max_minimax_risk(delta: f64, gamma_s2: f64) -> Result<Risk> {
    if !(delta > 0.0) || !(gamma_s2 >= 0.0) {
        return invalid("need delta > 0 and gamma_s2 >= 0");
    }
    Ok(risk_root(delta, gamma_s2, 1.0))
}

/// ρ(δ): the AMP phase transition, where M±(δρ) = δ.
pub fn phase_transition_rho(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0 / delta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if minimax_threshold(delta * mid)?.m_pm < delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSurfacePoint {
    pub delta: f64,
    pub rho: f64,
    #[serde(with = "ext_f64")]
    pub gamma_s2: f64,
    pub m_star: Risk,
    pub m_lasso_bound: Risk,
    pub m_denoise_bound: Risk,
    pub npi_star: Risk,
    pub h_star: Option<f64>,
    pub lambda_star: Option<f64>,
    pub tau_star: Option<f64>,
    /// Both bounds hold at this point.
    pub bounds_hold: bool,
}

impl RiskSurfacePoint {
    pub const CSV_HEADER: &'static str =
        "delta,rho,gamma_s2,M_star,M_lasso,M_denoise,NPI_star,h_star,lambda_star,tau_star";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_csv).unwrap_or_else(|| "inf".to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_csv(self.delta),
            fmt_csv(self.rho),
            fmt_csv(self.gamma_s2),
            fmt_csv(self.m_star.value()),
            fmt_csv(self.m_lasso_bound.value()),
            fmt_csv(self.m_denoise_bound.value()),
            fmt_csv(self.npi_star.value()),
            opt(self.h_star),
            opt(self.lambda_star),
            opt(self.tau_star),
        )
    }
}

/// Evaluates every formula at one point.
pub fn surface_point(
    delta: f64,
    rho: f64,
    gamma_s2: f64,
    sigma2: f64,
    c: f64,
) -> Result<RiskSurfacePoint> {
    let m_star = minimax_risk(delta, rho, gamma_s2)?;
    let m_lasso_bound = lasso_bound(delta, rho)?;
    let m_denoise_bound = denoise_bound(delta, rho, gamma_s2)?;
    let npi = npi_from(m_star, delta, gamma_s2, sigma2);
    let params = if m_star.is_unbounded() || delta * rho >= 1.0 || delta * rho == 0.0 {
        None
    } else {
        match minimax_params(delta, rho, gamma_s2, sigma2, c) {
            Ok(p) => Some(p),
            Err(e) => {
                log::debug!("no minimax parameters at ({delta}, {rho}, {gamma_s2}): {e}");
                None
            }
        }
    };
    let slack = 1e-12;
    let ms = m_star.value();
    let bounds_hold = (m_lasso_bound.is_unbounded() || ms <= m_lasso_bound.value() * (1.0 + slack))
        && (m_denoise_bound.is_unbounded()
            || ms <= m_denoise_bound.value() * (1.0 + slack) + slack);
    Ok(RiskSurfacePoint {
        delta,
        rho,
        gamma_s2,
        m_star,
        m_lasso_bound,
        m_denoise_bound,
        npi_star: npi,
        h_star: params.map(|p| p.h_star),
        lambda_star: params.map(|p| p.lambda_star),
        tau_star: params.map(|p| p.tau_star),
        bounds_hold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<RiskSurfacePoint>,
    /// (δ, ρ, γs², message) for points that could not be evaluated.
    pub errors: Vec<(f64, f64, f64, String)>,
}

/// Evaluates the full grid δ × ρ × γs² in parallel; output order is the
/// nested loop order (δ outermost).
pub fn risk_surface_sweep(
    deltas: &[f64],
    rhos: &[f64],
    gammas: &[f64],
    sigma2: f64,
    c: f64,
) -> SweepResult {
    let grid: Vec<(f64, f64, f64)> = deltas
        .iter()
        .flat_map(|&d| {
            rhos.iter()
                .flat_map(move |&r| gammas.iter().map(move |&g| (d, r, g)))
        })
        .collect();
    let results: Vec<_> = grid
        .par_iter()
        .map(|&(d, r, g)| (d, r, g, surface_point(d, r, g, sigma2, c)))
        .collect();
    let mut out = SweepResult {
        points: Vec::with_capacity(results.len()),
        errors: Vec::new(),
    };
    for (d, r, g, res) in results {
        match res {
            Ok(p) => {
                if !p.bounds_hold {
                    log::warn!("bound violated at ({d}, {r}, {g})");
                }
                out.points.push(p)
            }
            Err(e) => out.errors.push((d, r, g, e.to_string())),
        }
    }
    out
}
