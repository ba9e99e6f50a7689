//! Reference solvers: proximal-gradient GENP-LASSO, LMMSE on the stacked
//! system, residual AMP and scalar denoising.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::amp::{amp_reconstruct, AmpOptions, ReconstructionReport, ThresholdPolicy};
use crate::error::{invalid, Error, Result};
use crate::parameterless::sure_tuned_threshold;
use crate::serde_ext::array1;
use crate::shrinkage::{eta, minimax_threshold};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxSolverConfig {
    pub lambda: f64,
    pub tau_s: f64,
    /// Gradient step; `None` uses 0.99/L with L = ‖A‖₂².
    pub step: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    pub acceleration: bool,
}

impl ProxSolverConfig {
    pub fn new(lambda: f64, tau_s: f64) -> Self {
        Self {
            lambda,
            tau_s,
            step: None,
            max_iters: 100_000,
            tol: 1e-12,
            acceleration: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.tau_s >= 0.0) {
            return invalid(format!(
                "need lambda, tau_s >= 0, got ({}, {})",
                self.lambda, self.tau_s
            ));
        }
        if let Some(s) = self.step {
            if !(s > 0.0) {
                return invalid("step must be > 0");
            }
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxResult {
    #[serde(with = "array1")]
    pub z: Array1<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub step: f64,
}

/// Largest eigenvalue of AᵀA by power iteration, run until the estimate
/// changes by less than 1e-12 relative (at least 30 steps).
pub fn spectral_norm_sq(a: ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    // break symmetry so v is not orthogonal to the top singular vector
    for (i, x) in v.iter_mut().enumerate() {
        *x *= 1.0 + 1e-3 * ((i * 7919) % 101) as f64;
    }
    let mut est = 0.0;
    for k in 0..2000 {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w) / v.dot(&v);
        v = w / norm;
        if k >= 30 && (next - est).abs() <= 1e-12 * next {
            return next;
        }
        est = next;
    }
    est
}

fn objective(
    z: &Array1<f64>,
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: Option<ArrayView1<f64>>,
    lambda: f64,
    tau_s: f64,
) -> f64 {
    let res = &y - &a.dot(z);
    let l1: f64 = z.iter().map(|v| v.abs()).sum();
    let quad = match x_tilde {
        Some(xt) if tau_s > 0.0 => z
            .iter()
            .zip(xt.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        _ => 0.0,
    };
    0.5 * res.dot(&res) + lambda * l1 + 0.5 * tau_s * quad
}

/// argmin_z  s·λ|z| + (s·τs/2)(z − x̃)² + ½(z − v)².
#[inline]
pub fn genp_prox(v: f64, x_tilde: f64, lambda: f64, tau_s: f64, step: f64) -> f64 {
    let d = 1.0 + step * tau_s;
    eta((v + step * tau_s * x_tilde) / d, step * lambda / d)
}

/// Minimises ½‖y − Az‖² + λ‖z‖₁ + (τs/2)‖x̃ − z‖² by proximal gradient
/// (FISTA when `acceleration` is on). `x_tilde = None` is the LASSO.
pub fn genp_lasso_prox(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: Option<ArrayView1<f64>>,
    cfg: &ProxSolverConfig,
) -> Result<ProxResult> {
    cfg.validate()?;
    let (m, n) = a.dim();
    if y.len() != m || x_tilde.is_some_and(|x| x.len() != n) {
        return invalid("dimension mismatch");
    }
    let tau = if x_tilde.is_some() { cfg.tau_s } else { 0.0 };
    let step = cfg
        .step
        .unwrap_or_else(|| 0.99 / spectral_norm_sq(a).max(f64::MIN_POSITIVE));
    let zeros = Array1::zeros(n);
    let xt = x_tilde.unwrap_or(zeros.view());
    let mut z = Array1::<f64>::zeros(n);
    let mut w = z.clone();
    let mut t_mom = 1.0_f64;
    let mut trace = vec![objective(&z, y, a, x_tilde, cfg.lambda, tau)];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        let grad = a.t().dot(&(&a.dot(&w) - &y));
        let mut z_next = Array1::zeros(n);
        for i in 0..n {
            z_next[i] = genp_prox(w[i] - step * grad[i], xt[i], cfg.lambda, tau, step);
        }
        if !z_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "prox iterate not finite at {it}"
            )));
        }
        let diff = (&z_next - &z).mapv(|v| v * v).sum().sqrt();
        let scale = z.dot(&z).sqrt().max(1e-12);
        if cfg.acceleration {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
            w = &z_next + &((&z_next - &z) * ((t_mom - 1.0) / t_next));
            t_mom = t_next;
        } else {
            w = z_next.clone();
        }
        z = z_next;
        trace.push(objective(&z, y, a, x_tilde, cfg.lambda, tau));
        iterations = it + 1;
        if diff / scale < cfg.tol {
            converged = true;
            break;
        }
    }
    let kkt = kkt_residual(z.view(), y, a, x_tilde, cfg.lambda, tau);
    if !converged {
        log::warn!(
            "proximal gradient stopped after {iterations} iterations, KKT residual {kkt:.3e}"
        );
    }
    Ok(ProxResult {
        z,
        objective_trace: trace,
        iterations,
        converged,
        kkt_residual: kkt,
        step,
    })
}

/// ∞-norm violation of 0 ∈ −Aᵀ(y − Az) − τs(x̃ − z) + λ∂‖z‖₁.
pub fn kkt_residual(
    z: ArrayView1<f64>,
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: Option<ArrayView1<f64>>,
    lambda: f64,
    tau_s: f64,
) -> f64 {
    let mut g = a.t().dot(&(&y - &a.dot(&z)));
    if let Some(xt) = x_tilde {
        if tau_s > 0.0 {
            g = g + (&xt - &z) * tau_s;
        }
    }
    z.iter().zip(g.iter()).fold(0.0_f64, |acc, (&zi, &gi)| {
        let v = if zi != 0.0 {
            (gi - lambda * zi.signum()).abs()
        } else {
            (gi.abs() - lambda).max(0.0)
        };
        acc.max(v)
    })
}

/// Linear MMSE estimate for `[y; x̃] = [A; I]x + noise` with `x` modelled
/// as zero-mean with per-entry variance `prior_second_moment`.
///
/// Conditioning on x̃ first gives x | x̃ ~ N(βx̃, P·I) with β = C/(C+σs²)
/// and P = Cσs²/(C+σs²); the measurement update then needs only an m×m
/// solve.
pub fn lmmse(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    sigma2: f64,
    sigma_s2: f64,
    prior_second_moment: f64,
) -> Result<Array1<f64>> {
    let (m, n) = a.dim();
    if y.len() != m || x_tilde.len() != n {
        return invalid("dimension mismatch");
    }
    if !(sigma2 >= 0.0) || !(sigma_s2 >= 0.0) || !(prior_second_moment >= 0.0) {
        return invalid("variances must be >= 0");
    }
    let c = prior_second_moment;
    let (beta, p) = if sigma_s2.is_infinite() {
        (0.0, c)
    } else if c + sigma_s2 == 0.0 {
        (0.0, 0.0)
    } else {
        (c / (c + sigma_s2), c * sigma_s2 / (c + sigma_s2))
    };
    let mean = x_tilde.mapv(|v| beta * v);
    if m == 0 || p == 0.0 {
        return Ok(mean);
    }
    let innov = &y - &a.dot(&mean);
    let aat = a.dot(&a.t());
    let g = DMatrix::from_fn(m, m, |i, j| {
        p * aat[[i, j]] + if i == j { sigma2 } else { 0.0 }
    });
    let chol = Cholesky::new(g)
        .ok_or_else(|| Error::NumericalFailure("LMMSE system is singular".into()))?;
    let sol = chol.solve(&DVector::from_iterator(m, innov.iter().copied()));
    let sol = Array1::from_iter(sol.iter().copied());
    Ok(mean + a.t().dot(&sol) * p)
}

/// Runs standard AMP on `y − A x̃` to recover `e = x − x̃`, returns `x̃ + ê`.
pub fn residual_amp(
    y: ArrayView1<f64>,
    a: ArrayView2<f64>,
    x_tilde: ArrayView1<f64>,
    policy: ThresholdPolicy,
    opts: &AmpOptions,
    truth: Option<ArrayView1<f64>>,
) -> Result<ReconstructionReport> {
    let y_res = &y - &a.dot(&x_tilde);
    let e_truth = truth.map(|x0| &x0 - &x_tilde);
    let mut rep = amp_reconstruct(
        y_res.view(),
        a,
        policy,
        opts,
        e_truth.as_ref().map(|e| e.view()),
    )?;
    rep.x_hat = &rep.x_hat + &x_tilde;
    rep.final_state.x_t = rep.x_hat.clone();
    rep.pseudo_data = &rep.pseudo_data + &x_tilde;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiseMode {
    /// θ = α±(ε)·σs.
    Minimax {
        epsilon: f64,
    },
    Sure,
}

/// Soft-thresholds the prior alone.
pub fn scalar_denoise(
    x_tilde: ArrayView1<f64>,
    sigma_s2: f64,
    mode: DenoiseMode,
) -> Result<Array1<f64>> {
    if !(sigma_s2 >= 0.0) || sigma_s2.is_infinite() {
        return invalid(format!("sigma_s2 must be finite and >= 0, got {sigma_s2}"));
    }
    let theta = match mode {
        DenoiseMode::Minimax { epsilon } => minimax_threshold(epsilon)?.alpha_pm * sigma_s2.sqrt(),
        DenoiseMode::Sure => sure_tuned_threshold(x_tilde, sigma_s2),
    };
    Ok(x_tilde.mapv(|v| eta(v, theta)))
}
