//! Standard AMP and GENP-AMP iterations, plus the fixed-point mapping to
//! GENP-LASSO parameters.

use ndarray::{Array1, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parameterless::sure_tuned_threshold_keeping;
use crate::serde_ext::{array1, ext_f64};
use crate::shrinkage::eta;

/// Unconstrained SURE thresholds drive ‖x‖₀ towards m above the AMP
/// transition, where the Onsager term blows up.
const SURE_MAX_ONSAGER: f64 = 0.75;

/// How θ_t is chosen from the pseudo-data and its noise level ξ_t².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "alpha", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// θ_t = α·ξ_t.
    Multiplier(f64),
    /// θ_t minimises SURE with noise level ξ_t².
    Sure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmpOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Stop and flag divergence once ξ_t² exceeds this multiple of ξ_0².
    pub divergence_factor: f64,
    /// SURE thresholds may not push the Onsager factor above this value.
    #[serde(default = "default_sure_max_onsager")]
    pub sure_max_onsager: f64,
}

fn default_sure_max_onsager() -> f64 {
    AmpOptions::default().sure_max_onsager
}

impl Default for AmpOptions {
    fn default() -> Self {
        Self {
            max_iters: 60,
            tol: 1e-8,
            divergence_factor: 1e6,
            sure_max_onsager: SURE_MAX_ONSAGER,
        }
    }
}

impl AmpOptions {
    pub fn with_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be >= 1");
        }
        if !(self.tol >= 0.0) {
            return invalid("tol must be >= 0");
        }
        if !(self.sure_max_onsager > 0.0) {
            return invalid("sure_max_onsager must be > 0");
        }
        Ok(())
    }
}

/// State after one iteration: `x_t` is the new estimate, the other fields
/// are the quantities that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpState {
    #[serde(with = "array1")]
    pub x_t: Array1<f64>,
    #[serde(with = "array1")]
    pub r_t: Array1<f64>,
    pub theta_t: f64,
    #[serde(with = "ext_f64")]
    pub u_t: f64,
    pub b_t: f64,
    pub iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    #[serde(with = "array1")]
    pub x_hat: Array1<f64>,
    /// Empty when no ground truth was supplied.
    pub mse_trace: Vec<f64>,
    pub npi_trace: Vec<f64>,
    pub theta_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub diverged: bool,
    pub final_state: AmpState,
    /// Un-thresholded estimate x̂₀ of the last iteration.
    #[serde(with = "array1")]
    pub pseudo_data: Array1<f64>,
}

impl ReconstructionReport {
    pub fn final_mse(&self) -> Option<f64> {
        self.mse_trace.last().copied()
    }

    pub fn final_npi(&self) -> f64 {
        *self.npi_trace.last().unwrap_or(&0.0)
    }
}

pub(crate) fn l0(x: &Array1<f64>) -> usize {
    x.iter().filter(|v| **v != 0.0).count()
}

fn norm2(x: &Array1<f64>) -> f64 {
    x.dot(x)
}

fn check_dims(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: Option<ArrayView1<f64>>,
) -> Result<()> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return invalid("measurement matrix must be non-empty");
    }
    if y.len() != m {
        return invalid(format!("y has length {}, expected {m}", y.len()));
    }
    if let Some(xt) = x_tilde {
        if xt.len() != n {
            return invalid(format!("x_tilde has length {}, expected {n}", xt.len()));
        }
    }
    Ok(())
}

fn finite_or_diverge(iter: usize, values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration: iter,
            reason: format!("non-finite {what}"),
        })
    }
}

fn relative_change(new: &Array1<f64>, old: &Array1<f64>) -> f64 {
    let diff: f64 = Zip::from(new)
        .and(old)
        .fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
    diff.sqrt() / norm2(old).sqrt().max(1e-12)
}

/// `max_keep` bounds the support so that ‖x‖₀/(m(1+u)) stays at or below
/// the Onsager cap.
fn pick_threshold(policy: ThresholdPolicy, pseudo: &Array1<f64>, xi2: f64, max_keep: usize) -> f64 {
    match policy {
        ThresholdPolicy::Multiplier(alpha) => alpha * xi2.sqrt(),
        ThresholdPolicy::Sure => sure_tuned_threshold_keeping(pseudo.view(), xi2, max_keep),
    }
}

fn max_keep(opts: &AmpOptions, m: usize, u: f64) -> usize {
    let keep = opts.sure_max_onsager * m as f64 * (1.0 + u);
    if keep.is_finite() && keep < usize::MAX as f64 {
        keep.floor() as usize
    } else {
        usize::MAX
    }
}

/// Standard AMP: x̂₀ = x + Aᵀr, x ← η(x̂₀; θ), r = y − Ax + (‖x‖₀/m)·r_prev,
/// θ = α·‖r‖/√m (or SURE-tuned), started from x = 0, r = y.
pub fn amp_reconstruct(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    policy: ThresholdPolicy,
    opts: &AmpOptions,
    truth: Option<ArrayView1<f64>>,
) -> Result<ReconstructionReport> {
    check_dims(y, a, None)?;
    opts.validate()?;
    let (m, n) = a.dim();
    let mf = m as f64;
    let mut x = Array1::<f64>::zeros(n);
    let mut r = y.to_owned();
    let mut b = 0.0;
    let mut traces = Traces::default();
    let mut xi0 = None;
    let mut state = None;
    let mut pseudo = Array1::zeros(n);
    let (mut converged, mut diverged) = (false, false);
    for t in 0..opts.max_iters {
        let xi2 = norm2(&r) / mf;
        pseudo = &x + &a.t().dot(&r);
        let theta = pick_threshold(policy, &pseudo, xi2, max_keep(opts, m, 0.0));
        let x_next = pseudo.mapv(|v| eta(v, theta));
        finite_or_diverge(t, &[xi2, theta], "noise estimate")?;
        finite_or_diverge(t, x_next.as_slice().unwrap(), "estimate")?;
        traces.push(&x_next, truth, xi2, theta);
        let change = relative_change(&x_next, &x);
        state = Some((r.clone(), theta, b, t));
        x = x_next;
        let base = *xi0.get_or_insert(xi2);
        if xi2 > opts.divergence_factor * base && base > 0.0 {
            diverged = true;
            break;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
        b = l0(&x) as f64 / mf;
        r = &y - &a.dot(&x) + b * &r;
    }
    let (r_t, theta_t, b_t, iter) = state.expect("at least one iteration");
    Ok(traces.finish(x, pseudo, converged, diverged, r_t, theta_t, 0.0, b_t, iter))
}

#[derive(Default)]
struct Traces {
    mse: Vec<f64>,
    npi: Vec<f64>,
    theta: Vec<f64>,
}

impl Traces {
    fn push(&mut self, x: &Array1<f64>, truth: Option<ArrayView1<f64>>, xi2: f64, theta: f64) {
        if let Some(x0) = truth {
            let se: f64 = Zip::from(x)
                .and(x0)
                .fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
            self.mse.push(se / x.len() as f64);
        }
        self.npi.push(xi2);
        self.theta.push(theta);
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        x_hat: Array1<f64>,
        pseudo_data: Array1<f64>,
        converged: bool,
        diverged: bool,
        r_t: Array1<f64>,
        theta_t: f64,
        u_t: f64,
        b_t: f64,
        iter: usize,
    ) -> ReconstructionReport {
        ReconstructionReport {
            iterations_run: self.npi.len(),
            final_state: AmpState {
                x_t: x_hat.clone(),
                r_t,
                theta_t,
                u_t,
                b_t,
                iter,
            },
            x_hat,
            mse_trace: self.mse,
            npi_trace: self.npi,
            theta_trace: self.theta,
            converged,
            diverged,
            pseudo_data,
        }
    }
}

/// Per-iteration quantities that depend on the residual energy.
struct PriorMix {
    u: f64,
    xi2: f64,
}

fn prior_mix(res_energy: f64, sigma_s2: f64) -> PriorMix {
    if sigma_s2.is_infinite() {
        return PriorMix {
            u: 0.0,
            xi2: res_energy,
        };
    }
    if sigma_s2 == 0.0 {
        return PriorMix {
            u: f64::INFINITY,
            xi2: 0.0,
        };
    }
    let u = res_energy / sigma_s2;
    let wp = u / (1.0 + u);
    let wd = 1.0 / (1.0 + u);
    PriorMix {
        u,
        xi2: wp * wp * sigma_s2 + wd * wd * res_energy,
    }
}

fn genp_pseudo_data(
    x: &Array1<f64>,
    atr: &Array1<f64>,
    x_tilde: ArrayView1<f64>,
    u: f64,
) -> Array1<f64> {
    if u == 0.0 {
        x + atr
    } else if u.is_infinite() {
        x_tilde.to_owned()
    } else {
        let mut out = Array1::zeros(x.len());
        Zip::from(&mut out)
            .and(x)
            .and(atr)
            .and(x_tilde)
            .for_each(|o, &xi, &g, &xt| *o = (u * xt + xi + g) / (1.0 + u));
        out
    }
}

/// GENP-AMP: the AMP pseudo-data is averaged with the prior `x_tilde`
/// using the weight u_t = ‖r‖²/(m·σs²); the Onsager factor becomes
/// ‖x‖₀/(m(1+u)). `sigma_s2 = +inf` is plain AMP.
pub fn genp_amp_reconstruct(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    sigma_s2: f64,
    policy: ThresholdPolicy,
    opts: &AmpOptions,
    truth: Option<ArrayView1<f64>>,
) -> Result<ReconstructionReport> {
    check_dims(y, a, Some(x_tilde))?;
    opts.validate()?;
    if !(sigma_s2 >= 0.0) {
        return invalid(format!("sigma_s2 must be >= 0, got {sigma_s2}"));
    }
    if let ThresholdPolicy::Multiplier(alpha) = policy {
        if !(alpha >= 0.0) {
            return invalid(format!("alpha must be >= 0, got {alpha}"));
        }
    }
    let (m, n) = a.dim();
    let mf = m as f64;
    let mut x = Array1::<f64>::zeros(n);
    let mut r = y.to_owned();
    let mut b = 0.0;
    let mut traces = Traces::default();
    let mut xi0 = None;
    let mut state = None;
    let mut pseudo = Array1::zeros(n);
    let (mut converged, mut diverged) = (false, false);
    for t in 0..opts.max_iters {
        let mix = prior_mix(norm2(&r) / mf, sigma_s2);
        let atr = a.t().dot(&r);
        pseudo = genp_pseudo_data(&x, &atr, x_tilde, mix.u);
        let theta = pick_threshold(policy, &pseudo, mix.xi2, max_keep(opts, m, mix.u));
        let x_next = pseudo.mapv(|v| eta(v, theta));
        finite_or_diverge(t, &[mix.xi2, theta], "noise estimate")?;
        finite_or_diverge(t, x_next.as_slice().unwrap(), "estimate")?;
        traces.push(&x_next, truth, mix.xi2, theta);
        let change = relative_change(&x_next, &x);
        state = Some((r.clone(), theta, mix.u, b, t));
        x = x_next;
        let base = *xi0.get_or_insert(mix.xi2);
        if mix.xi2 > opts.divergence_factor * base && base > 0.0 {
            diverged = true;
            break;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
        b = l0(&x) as f64 / (mf * (1.0 + mix.u));
        r = &y - &a.dot(&x) + b * &r;
    }
    let (r_t, theta_t, u_t, b_t, iter) = state.expect("at least one iteration");
    Ok(traces.finish(x, pseudo, converged, diverged, r_t, theta_t, u_t, b_t, iter))
}

/// A GENP-AMP fixed point with frozen (θ, u) and the matching Onsager factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    #[serde(with = "array1")]
    pub x: Array1<f64>,
    #[serde(with = "array1")]
    pub r: Array1<f64>,
    pub theta: f64,
    #[serde(with = "ext_f64")]
    pub u: f64,
    pub b: f64,
    pub iterations: usize,
    /// ‖(1−b)r − (y − Ax)‖∞ at exit.
    pub residual_identity_error: f64,
    pub relative_change: f64,
}

/// Runs GENP-AMP for `opts.max_iters` iterations, then freezes θ and u and
/// keeps iterating (recomputing b from the support) until the estimate
/// changes by less than `fixed_tol` relative, or `fixed_iters` is reached.
pub fn genp_amp_fixed_point(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    sigma_s2: f64,
    alpha: f64,
    opts: &AmpOptions,
    fixed_iters: usize,
    fixed_tol: f64,
) -> Result<FixedPoint> {
    let warm = genp_amp_reconstruct(
        y,
        a,
        x_tilde,
        sigma_s2,
        ThresholdPolicy::Multiplier(alpha),
        opts,
        None,
    )?;
    if warm.diverged {
        return Err(Error::Divergence {
            iteration: warm.iterations_run,
            reason: "warm-up diverged".into(),
        });
    }
    let m = a.nrows() as f64;
    let theta = warm.final_state.theta_t;
    let u = warm.final_state.u_t;
    if u.is_infinite() {
        return invalid("fixed point with u = inf is the prior itself");
    }
    let mut x = warm.x_hat;
    let mut r = warm.final_state.r_t;
    let mut b = l0(&x) as f64 / (m * (1.0 + u));
    r = &y - &a.dot(&x) + b * &r;
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    for t in 0..fixed_iters {
        let atr = a.t().dot(&r);
        let pseudo = genp_pseudo_data(&x, &atr, x_tilde, u);
        let x_next = pseudo.mapv(|v| eta(v, theta));
        finite_or_diverge(t, x_next.as_slice().unwrap(), "estimate")?;
        change = relative_change(&x_next, &x);
        x = x_next;
        b = l0(&x) as f64 / (m * (1.0 + u));
        r = &y - &a.dot(&x) + b * &r;
        iterations = t + 1;
        if change < fixed_tol {
            break;
        }
    }
    let lhs = (1.0 - b) * &r;
    let rhs = &y - &a.dot(&x);
    let err = (&lhs - &rhs)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(FixedPoint {
        x,
        r,
        theta,
        u,
        b,
        iterations,
        residual_identity_error: err,
        relative_change: change,
    })
}

/// GENP-LASSO parameters reproduced by a fixed point (θ, u, b):
/// λ = (1+u)θ(1−b), τs = u(1−b).
pub fn fixed_point_params(theta: f64, u: f64, b: f64) -> Result<(f64, f64)> {
    if !(theta >= 0.0) || !(u >= 0.0) || !u.is_finite() {
        return invalid(format!(
            "need theta >= 0 and finite u >= 0, got ({theta}, {u})"
        ));
    }
    if !(0.0..1.0).contains(&b) {
        return invalid(format!("Onsager factor must lie in [0, 1), got {b}"));
    }
    Ok(((1.0 + u) * theta * (1.0 - b), u * (1.0 - b)))
}

/// Fraction of nonzero coordinates of the final estimate.
pub fn equilibrium_detection_rate(report: &ReconstructionReport) -> f64 {
    l0(&report.x_hat) as f64 / report.x_hat.len() as f64
}
