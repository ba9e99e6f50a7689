//! Monte-Carlo drivers for the one-dimensional experiments: the validation
//! tables, the λ sweep with and without a prior, and the parameterless
//! study. Trials run in parallel on the current rayon pool; per-trial seeds
//! are derived from the master seed so results do not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{amp_reconstruct, genp_amp_reconstruct, AmpOptions, ThresholdPolicy};
use crate::baselines::{genp_lasso_prox, lmmse, scalar_denoise, DenoiseMode, ProxSolverConfig};
use crate::error::{invalid, Result};
use crate::noise_sensitivity::{
    amp_least_favorable_amplitude, amp_nearly_least_favorable_fmse, denoise_bound, lasso_bound,
    minimax_params, minimax_risk, nearly_least_favorable_fmse, phase_transition_rho, Risk,
};
use crate::parameterless::{
    estimate_prior_variance, p_genp_amp_with_variance, variance_from_report, VarianceOptions,
};
use crate::problem::{
    gen_instance, gen_instance_snr, mse, NoiseModel, ProblemGeometry, SignalSpec, ThreePointPrior,
};
use crate::rng::trial_seed;
use crate::serde_ext::{ext_f64, fmt_csv};
use crate::shrinkage::minimax_threshold;
use crate::state_evolution::{alpha_for_lambda, alpha_min, predict_params, SeParams};

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Stats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count,
            };
        }
        let n = count as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if count > 1 {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            count,
        }
    }

    /// Half-width of the normal-approximation 95% interval.
    pub fn ci95(&self) -> f64 {
        1.959_963_984_540_054 * self.stderr
    }
}

/// Runs `f(trial, seed)` for every trial in parallel, keeping trial order.
pub fn run_trials<T, F>(trials: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, trial_seed(master_seed, t as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub sigma2: f64,
    #[serde(with = "ext_f64")]
    pub gamma_s2: f64,
    pub c: f64,
    pub iters: usize,
    pub tol: f64,
    /// Threshold multiplier override; `None` uses α±(δρ).
    pub alpha: Option<f64>,
    pub with_lmmse: bool,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            trials: 20,
            seed: 1,
            sigma2: 1.0,
            gamma_s2: 1.0,
            c: 0.02,
            iters: 60,
            tol: 1e-8,
            alpha: None,
            with_lmmse: true,
        }
    }
}

/// The sampling points of the validation tables: fractions 1/2, 3/4, 9/10,
/// 19/20 of the AMP transition ρ(δ), rounded to three decimals, and ρ = 1.9.
pub fn table_points(deltas: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for &d in deltas {
        let pt = phase_transition_rho(d)?;
        for f in [0.5, 0.75, 0.9, 0.95] {
            out.push((d, (pt * f * 1000.0).round() / 1000.0));
        }
        out.push((d, 1.9));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub delta: f64,
    pub rho: f64,
    #[serde(with = "ext_f64")]
    pub gamma_s2: f64,
    pub h_star: f64,
    pub lambda_star: f64,
    pub tau_star: f64,
    /// M*·σ².
    pub fmse_genp: Risk,
    /// Formal MSE on the c-least-favorable law.
    pub fmse_genp_c: Risk,
    pub emse_genp: Stats,
    /// M^b·σ².
    pub fmse_amp: Risk,
    /// AMP state evolution on its own c-least-favorable law.
    pub fmse_amp_c: Risk,
    /// `None` renders as UB.
    pub emse_amp: Option<Stats>,
    pub fmse_dn: Risk,
    pub fmse_dn_c: Risk,
    pub emse_dn: Stats,
    pub emse_lmmse: Option<Stats>,
}

struct TableTrial {
    genp: f64,
    amp: f64,
    amp_diverged: bool,
    dn: f64,
    lmmse: Option<f64>,
}

pub fn table_row(delta: f64, rho: f64, cfg: &TableConfig) -> Result<TableRow> {
    if cfg.trials == 0 {
        return invalid("trials must be >= 1");
    }
    let eps = delta * rho;
    let sigma_s2 = cfg.gamma_s2 * cfg.sigma2;
    let params = minimax_params(delta, rho, cfg.gamma_s2, cfg.sigma2, cfg.c)?;
    let alpha = cfg.alpha.unwrap_or(params.alpha);
    let geometry = ProblemGeometry::from_ratios(cfg.n, delta, rho)?;
    let noise = NoiseModel::new(cfg.sigma2, sigma_s2)?;
    let signal = SignalSpec::ThreePoint { mu: params.h_star };
    let opts = AmpOptions {
        max_iters: cfg.iters,
        tol: cfg.tol,
        ..AmpOptions::default()
    };
    let fmse_amp = Risk::from_f64(lasso_bound(delta, rho)?.value() * cfg.sigma2);
    let amp_mu = amp_least_favorable_amplitude(delta, rho, cfg.sigma2, cfg.c)?;
    let trials = run_trials(cfg.trials, cfg.seed, |_, seed| {
        let inst = gen_instance(geometry, noise, signal, seed)?;
        let (y, a, xt) = (inst.y.view(), inst.a.view(), inst.x_tilde.view());
        let policy = ThresholdPolicy::Multiplier(alpha);
        let genp = genp_amp_reconstruct(y, a, xt, sigma_s2, policy, &opts, None)?;
        // AMP runs on its own least-favorable amplitude; the seed keeps A,
        // the support, the signs and w shared with the GENP instance
        let amp_inst = match amp_mu {
            Some(mu) => Some(gen_instance(
                geometry,
                noise,
                SignalSpec::ThreePoint { mu },
                seed,
            )?),
            None => None,
        };
        let amp_inst = amp_inst.as_ref().unwrap_or(&inst);
        let amp = amp_reconstruct(amp_inst.y.view(), a, policy, &opts, None);
        let (amp_mse, amp_diverged) = match amp {
            Ok(r) => (amp_inst.mse(&r.x_hat), r.diverged),
            Err(crate::Error::Divergence { .. }) => (f64::INFINITY, true),
            Err(e) => return Err(e),
        };
        let dn = scalar_denoise(xt, sigma_s2, DenoiseMode::Minimax { epsilon: eps })?;
        let lm = if cfg.with_lmmse {
            let second = ThreePointPrior::new(eps, params.h_star)?.second_moment();
            Some(mse(
                &lmmse(y, a, xt, cfg.sigma2, sigma_s2, second)?,
                &inst.x0,
            ))
        } else {
            None
        };
        Ok(TableTrial {
            genp: inst.mse(&genp.x_hat),
            amp: amp_mse,
            amp_diverged,
            dn: mse(&dn, &inst.x0),
            lmmse: lm,
        })
    })?;
    let col = |f: &dyn Fn(&TableTrial) -> f64| {
        Stats::from_samples(&trials.iter().map(f).collect::<Vec<_>>())
    };
    let amp_ub = fmse_amp.is_unbounded() || trials.iter().any(|t| t.amp_diverged);
    let m_pm = minimax_threshold(eps)?.m_pm;
    let scale = |r: Risk| Risk::from_f64(r.value() * cfg.sigma2);
    Ok(TableRow {
        delta,
        rho,
        gamma_s2: cfg.gamma_s2,
        h_star: params.h_star,
        lambda_star: params.lambda_star,
        tau_star: params.tau_star,
        fmse_genp: scale(minimax_risk(delta, rho, cfg.gamma_s2)?),
        fmse_genp_c: scale(nearly_least_favorable_fmse(
            delta,
            rho,
            cfg.gamma_s2,
            cfg.c,
        )?),
        emse_genp: col(&|t| t.genp),
        fmse_amp,
        fmse_amp_c: amp_nearly_least_favorable_fmse(delta, rho, cfg.sigma2, cfg.c)?,
        emse_amp: if amp_ub { None } else { Some(col(&|t| t.amp)) },
        fmse_dn: scale(denoise_bound(delta, rho, cfg.gamma_s2)?),
        fmse_dn_c: Risk::from_f64((1.0 - cfg.c) * m_pm * sigma_s2),
        emse_dn: col(&|t| t.dn),
        emse_lmmse: if cfg.with_lmmse {
            Some(col(&|t| t.lmmse.unwrap_or(f64::NAN)))
        } else {
            None
        },
    })
}

pub const TABLE_CSV_HEADER: &str = "# per-entry MSE in signal units; UB = unbounded\n\
gamma_s2,delta,rho,h_star,lambda_star,tau_star,\
fmse_genp,fmse_genp_c,emse_genp,emse_genp_se,\
fmse_amp,fmse_amp_c,emse_amp,emse_amp_se,\
fmse_dn,fmse_dn_c,emse_dn,emse_dn_se,emse_lmmse,emse_lmmse_se";

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_CSV_HEADER);
    out.push('\n');
    let f = |v: f64| format!("{v:.6}");
    let r = |v: Risk| v.cell(6);
    for row in rows {
        let (amp_m, amp_s) = match row.emse_amp {
            Some(s) => (f(s.mean), f(s.stderr)),
            None => ("UB".into(), "UB".into()),
        };
        let (lm_m, lm_s) = match row.emse_lmmse {
            Some(s) => (f(s.mean), f(s.stderr)),
            None => (String::new(), String::new()),
        };
        out.push_str(
            &[
                fmt_csv(row.gamma_s2),
                format!("{}", row.delta),
                format!("{}", row.rho),
                f(row.h_star),
                f(row.lambda_star),
                f(row.tau_star),
                r(row.fmse_genp),
                r(row.fmse_genp_c),
                f(row.emse_genp.mean),
                f(row.emse_genp.stderr),
                r(row.fmse_amp),
                r(row.fmse_amp_c),
                amp_m,
                amp_s,
                r(row.fmse_dn),
                r(row.fmse_dn_c),
                f(row.emse_dn.mean),
                f(row.emse_dn.stderr),
                lm_m,
                lm_s,
            ]
            .join(","),
        );
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Config {
    pub n_prox: usize,
    pub n_amp: usize,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub sigma2: f64,
    #[serde(with = "gamma_list")]
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub iters: usize,
    /// Skip the n = 2000 GENP-AMP column.
    pub skip_amp: bool,
    pub skip_prox: bool,
}

mod gamma_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Ext(#[serde(with = "crate::serde_ext::ext_f64")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| Ext(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Ext>::deserialize(d)?
            .into_iter()
            .map(|e| e.0)
            .collect())
    }
}

/// `count` log-spaced points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            n_prox: 200,
            n_amp: 2000,
            trials: 20,
            seed: 1,
            delta: 0.64,
            epsilon: 0.128,
            sigma2: 0.2,
            gammas: vec![1.0, 4.0, f64::INFINITY],
            lambdas: log_grid(0.05, 1.5, 12),
            iters: 200,
            skip_amp: false,
            skip_prox: false,
        }
    }
}

impl Fig1Config {
    fn rho(&self) -> f64 {
        self.epsilon / self.delta
    }

    fn se_params(&self, gamma_s2: f64, alpha: f64) -> Result<SeParams> {
        Ok(SeParams {
            delta: self.delta,
            sigma2: self.sigma2,
            sigma_s2: gamma_s2 * self.sigma2,
            alpha,
            prior: ThreePointPrior::new(self.epsilon, 1.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Cell {
    #[serde(with = "ext_f64")]
    pub gamma_s2: f64,
    pub lambda: f64,
    pub alpha: f64,
    #[serde(with = "ext_f64")]
    pub tau_s: f64,
    pub predicted: f64,
    pub prox: Option<Stats>,
    pub amp: Option<Stats>,
    /// Set when λ is outside the range reachable from α > α_min.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedMinimum {
    #[serde(with = "ext_f64")]
    pub gamma_s2: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub mse: f64,
}

const FIG1_ALPHA_MAX: f64 = 8.0;

/// Minimum over α of the predicted MSE, by golden-section search on
/// (α_min, 8]. The predicted MSE is unimodal in α for these laws.
pub fn fig1_predicted_minimum(cfg: &Fig1Config, gamma_s2: f64) -> Result<PredictedMinimum> {
    let lo0 = alpha_min(cfg.delta, gamma_s2) + 1e-6;
    let eval =
        |a: f64| -> Result<f64> { Ok(predict_params(&cfg.se_params(gamma_s2, a)?)?.q_star2) };
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (lo0, FIG1_ALPHA_MAX);
    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let (mut f1, mut f2) = (eval(x1)?, eval(x2)?);
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = eval(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = eval(x2)?;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let pred = predict_params(&cfg.se_params(gamma_s2, alpha)?)?;
    Ok(PredictedMinimum {
        gamma_s2,
        alpha,
        lambda: pred.lambda,
        mse: pred.q_star2,
    })
}

/// Predicted and empirical MSE over the λ grid for each γs².
pub fn fig1_sweep(cfg: &Fig1Config) -> Result<Vec<Fig1Cell>> {
    if cfg.trials == 0 {
        return invalid("trials must be >= 1");
    }
    let rho = cfg.rho();
    let g_prox = ProblemGeometry::from_ratios(cfg.n_prox, cfg.delta, rho)?;
    let g_amp = ProblemGeometry::from_ratios(cfg.n_amp, cfg.delta, rho)?;
    let signal = SignalSpec::ThreePoint { mu: 1.0 };
    let mut cells = Vec::new();
    for &gamma in &cfg.gammas {
        let sigma_s2 = gamma * cfg.sigma2;
        let noise = NoiseModel::new(cfg.sigma2, sigma_s2)?;
        for &lambda in &cfg.lambdas {
            let (alpha, pred) =
                match alpha_for_lambda(cfg.se_params(gamma, 1.0)?, lambda, FIG1_ALPHA_MAX) {
                    Ok(v) => v,
                    Err(e) => {
                        cells.push(Fig1Cell {
                            gamma_s2: gamma,
                            lambda,
                            alpha: f64::NAN,
                            tau_s: f64::NAN,
                            predicted: f64::NAN,
                            prox: None,
                            amp: None,
                            error: Some(e.to_string()),
                        });
                        continue;
                    }
                };
            let tau = pred.tau_s;
            let prox = if cfg.skip_prox {
                None
            } else {
                let errs = run_trials(cfg.trials, cfg.seed, |_, seed| {
                    let inst = gen_instance(g_prox, noise, signal, seed)?;
                    let xt = gamma.is_finite().then(|| inst.x_tilde.view());
                    let res = genp_lasso_prox(
                        inst.y.view(),
                        inst.a.view(),
                        xt,
                        &ProxSolverConfig::new(lambda, tau),
                    )?;
                    Ok(inst.mse(&res.z))
                })?;
                Some(Stats::from_samples(&errs))
            };
            let amp = if cfg.skip_amp {
                None
            } else {
                let opts = AmpOptions {
                    max_iters: cfg.iters,
                    tol: 1e-10,
                    ..AmpOptions::default()
                };
                let errs = run_trials(cfg.trials, cfg.seed ^ 0x5eed, |_, seed| {
                    let inst = gen_instance(g_amp, noise, signal, seed)?;
                    let rep = genp_amp_reconstruct(
                        inst.y.view(),
                        inst.a.view(),
                        inst.x_tilde.view(),
                        sigma_s2,
                        ThresholdPolicy::Multiplier(alpha),
                        &opts,
                        None,
                    )?;
                    Ok(inst.mse(&rep.x_hat))
                })?;
                Some(Stats::from_samples(&errs))
            };
            cells.push(Fig1Cell {
                gamma_s2: gamma,
                lambda,
                alpha,
                tau_s: tau,
                predicted: pred.q_star2,
                prox,
                amp,
                error: None,
            });
        }
    }
    Ok(cells)
}

pub fn fig1_csv(cells: &[Fig1Cell]) -> String {
    let mut out = String::from(
        "# per-entry MSE in signal units\n\
         gamma_s2,lambda,alpha,tau_s,predicted_mse,prox_mse,prox_se,amp_mse,amp_se,note\n",
    );
    let st = |s: Option<Stats>| match s {
        Some(s) => (fmt_csv(s.mean), fmt_csv(s.stderr)),
        None => (String::new(), String::new()),
    };
    for c in cells {
        let (pm, ps) = st(c.prox);
        let (am, as_) = st(c.amp);
        out.push_str(&format!(
            "{},{},{},{},{},{pm},{ps},{am},{as_},{}\n",
            fmt_csv(c.gamma_s2),
            fmt_csv(c.lambda),
            fmt_csv(c.alpha),
            fmt_csv(c.tau_s),
            fmt_csv(c.predicted),
            c.error.as_deref().unwrap_or("").replace(',', ";"),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Config {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
    pub epsilon: f64,
    pub amplitude_variance: f64,
    pub snr_db: Vec<f64>,
    pub sigma_s2: Vec<f64>,
    pub iters: usize,
    pub variance: VarianceOptions,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            n: 2000,
            trials: 100,
            seed: 1,
            delta: 0.5,
            epsilon: 0.2,
            amplitude_variance: 100.0,
            snr_db: vec![20.0, 5.0],
            sigma_s2: vec![5.0, 10.0, 20.0, 50.0, 100.0],
            iters: 60,
            variance: VarianceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Cell {
    pub snr_db: f64,
    pub sigma_s2: f64,
    pub sigma2_mean: f64,
    pub est_sure: Stats,
    pub est_unthresholded: Stats,
    pub est_faked: Stats,
    pub unreliable: usize,
    pub mse_oracle: Stats,
    pub mse_p_genp: Stats,
    pub mse_p_genp_fk: Stats,
    pub mse_amp: Stats,
}

struct Fig2Trial {
    sigma2: f64,
    sure: f64,
    unthr: f64,
    faked: f64,
    reliable: bool,
    oracle: f64,
    p_genp: f64,
    p_genp_fk: f64,
    amp: f64,
}

fn usable(v: f64, fallback: f64) -> f64 {
    if v.is_finite() && v > 0.0 {
        v
    } else {
        fallback
    }
}

pub fn fig2_sweep(cfg: &Fig2Config) -> Result<Vec<Fig2Cell>> {
    if cfg.trials == 0 {
        return invalid("trials must be >= 1");
    }
    let geometry = ProblemGeometry::from_ratios(cfg.n, cfg.delta, cfg.epsilon / cfg.delta)?;
    let signal = SignalSpec::GaussianAmplitude {
        variance: cfg.amplitude_variance,
    };
    let opts = AmpOptions {
        max_iters: cfg.iters,
        ..cfg.variance.amp
    };
    let vopts = VarianceOptions {
        amp: opts,
        ..cfg.variance
    };
    let mut cells = Vec::new();
    for &snr in &cfg.snr_db {
        // y and A do not depend on σs², so one SURE-AMP run per trial serves
        // the whole σs² grid
        let per_trial = run_trials(cfg.trials, cfg.seed, |_, seed| {
            let mut amp_rep = None;
            let mut out = Vec::with_capacity(cfg.sigma_s2.len());
            for &ss2 in &cfg.sigma_s2 {
                let inst = gen_instance_snr(geometry, snr, ss2, signal, seed)?;
                let (y, a, xt) = (inst.y.view(), inst.a.view(), inst.x_tilde.view());
                if amp_rep.is_none() {
                    amp_rep = Some(
                        match amp_reconstruct(y, a, ThresholdPolicy::Sure, &opts, None) {
                            Ok(r) => Some(r),
                            Err(crate::Error::Divergence { .. }) => None,
                            Err(e) => return Err(e),
                        },
                    );
                }
                let rep = amp_rep.as_ref().unwrap().as_ref();
                let est = match rep {
                    Some(r) => variance_from_report(xt, r, geometry.m, &vopts),
                    None => estimate_prior_variance(xt, y, a, &vopts)?.0,
                };
                let oracle = p_genp_amp_with_variance(y, a, xt, ss2, &opts, None)?;
                let fallback = usable(est.faked, f64::INFINITY);
                let p = p_genp_amp_with_variance(
                    y,
                    a,
                    xt,
                    usable(est.sigma_s2_hat, fallback),
                    &opts,
                    None,
                )?;
                let fk = p_genp_amp_with_variance(y, a, xt, fallback, &opts, None)?;
                out.push(Fig2Trial {
                    sigma2: inst.noise.sigma2,
                    sure: est.sure_corrected,
                    unthr: est.unthresholded,
                    faked: est.faked,
                    reliable: est.reliable,
                    oracle: inst.mse(&oracle.x_hat),
                    p_genp: inst.mse(&p.x_hat),
                    p_genp_fk: inst.mse(&fk.x_hat),
                    amp: rep.map_or(f64::INFINITY, |r| inst.mse(&r.x_hat)),
                });
            }
            Ok(out)
        })?;
        for (j, &ss2) in cfg.sigma_s2.iter().enumerate() {
            let trials: Vec<&Fig2Trial> = per_trial.iter().map(|t| &t[j]).collect();
            let col = |f: &dyn Fn(&Fig2Trial) -> f64| {
                Stats::from_samples(&trials.iter().map(|t| f(t)).collect::<Vec<_>>())
            };
            cells.push(Fig2Cell {
                snr_db: snr,
                sigma_s2: ss2,
                sigma2_mean: col(&|t| t.sigma2).mean,
                est_sure: col(&|t| t.sure),
                est_unthresholded: col(&|t| t.unthr),
                est_faked: col(&|t| t.faked),
                unreliable: trials.iter().filter(|t| !t.reliable).count(),
                mse_oracle: col(&|t| t.oracle),
                mse_p_genp: col(&|t| t.p_genp),
                mse_p_genp_fk: col(&|t| t.p_genp_fk),
                mse_amp: col(&|t| t.amp),
            });
        }
    }
    Ok(cells)
}

pub fn fig2_csv(cells: &[Fig2Cell]) -> String {
    let mut out = String::from(
        "# variances and per-entry MSE in signal units; ci95 = half-width of the 95% interval\n\
         snr_db,sigma_s2,sigma2_mean,est_sure,est_sure_ci95,est_unthresholded,est_unthresholded_ci95,\
         est_faked,est_faked_ci95,unreliable,mse_oracle_genp,mse_p_genp,mse_p_genp_fk,mse_amp\n",
    );
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt_csv(c.snr_db),
            fmt_csv(c.sigma_s2),
            fmt_csv(c.sigma2_mean),
            fmt_csv(c.est_sure.mean),
            fmt_csv(c.est_sure.ci95()),
            fmt_csv(c.est_unthresholded.mean),
            fmt_csv(c.est_unthresholded.ci95()),
            fmt_csv(c.est_faked.mean),
            fmt_csv(c.est_faked.ci95()),
            c.unreliable,
            fmt_csv(c.mse_oracle.mean),
            fmt_csv(c.mse_p_genp.mean),
            fmt_csv(c.mse_p_genp_fk.mean),
            fmt_csv(c.mse_amp.mean),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_basics() {
        let s = Stats::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stats::from_samples(&[3.0]).stderr, 0.0);
    }

    #[test]
    fn trials_are_ordered_and_seeded() {
        let a = run_trials(16, 7, |t, s| Ok((t, s))).unwrap();
        let b = run_trials(16, 7, |t, s| Ok((t, s))).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, (t, _))| i == *t));
    }

    #[test]
    fn table_points_match_printed_rho() {
        let pts = table_points(&[0.1, 0.25, 0.5]).unwrap();
        let rhos: Vec<f64> = pts.iter().map(|p| p.1).collect();
        assert_eq!(
            rhos,
            vec![
                0.095, 0.142, 0.170, 0.180, 1.9, 0.134, 0.201, 0.241, 0.254, 1.9, 0.193, 0.289,
                0.347, 0.366, 1.9
            ]
        );
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.1, 10.0, 3);
        assert!(
            (g[0] - 0.1).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-12 && (g[2] - 10.0).abs() < 1e-12
        );
    }

    #[test]
    fn small_table_run_is_deterministic() {
        let cfg = TableConfig {
            n: 200,
            trials: 2,
            ..TableConfig::default()
        };
        let a = table_csv(&[table_row(0.25, 0.134, &cfg).unwrap()]);
        let b = table_csv(&[table_row(0.25, 0.134, &cfg).unwrap()]);
        assert_eq!(a, b);
        let ub = table_row(0.1, 1.9, &cfg).unwrap();
        assert!(ub.emse_amp.is_none());
        assert!(table_csv(&[ub]).contains(",UB,"));
    }
}
