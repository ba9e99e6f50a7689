use std::io::Write;
use std::time::Instant;

use genp_amp::amp::{amp_reconstruct, genp_amp_reconstruct, AmpOptions, ThresholdPolicy};
use genp_amp::baselines::{
    genp_lasso_prox, lmmse, residual_amp, scalar_denoise, DenoiseMode, ProxSolverConfig,
};
use genp_amp::experiments::{
    fig1_csv, fig1_predicted_minimum, fig1_sweep, fig2_csv, fig2_sweep, log_grid, table_csv,
    table_points, table_row, Fig1Config, Fig2Config, TableConfig, TableRow,
};
use genp_amp::noise_sensitivity::{
    lasso_bound, minimax_params, minimax_risk, risk_surface_sweep, RiskSurfacePoint,
};
use genp_amp::parameterless::{
    p_genp_amp, p_genp_amp_with_variance, VarianceMethod, VarianceOptions,
};
use genp_amp::problem::{gen_instance, NoiseModel, ProblemGeometry, SignalSpec};
use genp_amp::shrinkage::minimax_threshold;
use genp_amp::state_evolution::{predict_params, se_iterate, SeParams};
use genp_amp::ThreePointPrior;
use serde_json::json;

use crate::config::{Command, Flags, Format, Method, Solver};
use crate::CliError;

type Res<T> = Result<T, CliError>;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn emit(flags: &Flags, body: &str) -> Res<()> {
    match &flags.out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| bad(format!("{}: {e}", path.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| bad(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Res<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Numerical(e.to_string()))
}

fn check_trials(flags: &Flags) -> Res<()> {
    if flags.trials == Some(0) {
        return Err(bad("--trials must be >= 1"));
    }
    Ok(())
}

fn check_points(points: &[(f64, f64)]) -> Res<()> {
    for &(d, r) in points {
        if !(d > 0.0) || !(r >= 0.0) || d * r > 1.0 + 1e-12 {
            return Err(bad(format!(
                "(delta, rho) = ({d}, {r}) needs delta > 0 and delta * rho <= 1"
            )));
        }
    }
    Ok(())
}

pub fn dispatch(cmd: Command, flags: &Flags) -> Res<()> {
    check_trials(flags)?;
    match cmd {
        Command::Table1 => cmd_table(flags, &[0.1, 0.25, 0.5], &[1.0]),
        Command::Table2 => cmd_table(flags, &[0.1], &[2.0, 4.0]),
        Command::Fig1 => cmd_fig1(flags),
        Command::Fig2 => cmd_fig2(flags),
        Command::Surface => cmd_surface(flags),
        Command::Run => cmd_run(flags),
        Command::Predict => cmd_predict(flags),
    }
}

fn table_config(flags: &Flags) -> TableConfig {
    let d = TableConfig::default();
    TableConfig {
        n: flags.n.unwrap_or(d.n),
        trials: flags.trials.unwrap_or(d.trials),
        seed: flags.seed.unwrap_or(d.seed),
        sigma2: flags.sigma2.unwrap_or(d.sigma2),
        c: flags.c.unwrap_or(d.c),
        iters: flags.iters.unwrap_or(d.iters),
        tol: flags.tol.unwrap_or(d.tol),
        alpha: flags.alpha,
        ..d
    }
}

fn cmd_table(flags: &Flags, default_deltas: &[f64], default_gammas: &[f64]) -> Res<()> {
    let deltas = flags
        .delta
        .clone()
        .unwrap_or_else(|| default_deltas.to_vec());
    let gammas = flags
        .gamma_s2
        .clone()
        .unwrap_or_else(|| default_gammas.to_vec());
    let points = match &flags.rho {
        Some(rhos) => deltas
            .iter()
            .flat_map(|&d| rhos.iter().map(move |&r| (d, r)))
            .collect(),
        None => table_points(&deltas)?,
    };
    check_points(&points)?;
    let base = table_config(flags);
    let mut rows: Vec<TableRow> = Vec::new();
    for &g in &gammas {
        if !(g > 0.0) {
            return Err(bad(format!("gamma_s2 must be > 0, got {g}")));
        }
        let cfg = TableConfig {
            gamma_s2: g,
            ..base
        };
        for &(d, r) in &points {
            let start = Instant::now();
            let cfg = if flags.formal_only {
                TableConfig {
                    trials: 1,
                    n: 200,
                    ..cfg
                }
            } else {
                cfg
            };
            rows.push(table_row(d, r, &cfg)?);
            log::info!("gamma_s2={g} delta={d} rho={r}: {:.2?}", start.elapsed());
        }
    }
    match flags.format() {
        Format::Csv => emit(flags, &table_csv(&rows)),
        Format::Json => emit(flags, &to_json(&rows)?),
    }
}

fn cmd_fig1(flags: &Flags) -> Res<()> {
    let d = Fig1Config::default();
    let delta = Flags::single(&flags.delta, "delta", d.delta).map_err(bad)?;
    let epsilon = match &flags.rho {
        Some(_) => delta * Flags::single(&flags.rho, "rho", 0.0).map_err(bad)?,
        None => d.epsilon,
    };
    let cfg = Fig1Config {
        n_amp: flags.n.unwrap_or(d.n_amp),
        trials: flags.trials.unwrap_or(d.trials),
        seed: flags.seed.unwrap_or(d.seed),
        delta,
        epsilon,
        sigma2: flags.sigma2.unwrap_or(d.sigma2),
        gammas: flags.gamma_s2.clone().unwrap_or(d.gammas.clone()),
        lambdas: flags
            .lambda
            .clone()
            .unwrap_or_else(|| log_grid(0.05, 1.5, 12)),
        iters: flags.iters.unwrap_or(d.iters),
        skip_amp: flags.formal_only,
        skip_prox: flags.formal_only,
        ..d
    };
    let start = Instant::now();
    let cells = fig1_sweep(&cfg)?;
    let minima = cfg
        .gammas
        .iter()
        .map(|&g| fig1_predicted_minimum(&cfg, g))
        .collect::<Result<Vec<_>, _>>()?;
    log::info!("fig1: {} cells in {:.2?}", cells.len(), start.elapsed());
    match flags.format() {
        Format::Csv => {
            let mut body = fig1_csv(&cells);
            for m in &minima {
                body.push_str(&format!(
                    "# predicted minimum: gamma_s2={} lambda={:.6} alpha={:.6} mse={:.6}\n",
                    genp_amp::serde_ext::fmt_csv(m.gamma_s2),
                    m.lambda,
                    m.alpha,
                    m.mse
                ));
            }
            emit(flags, &body)
        }
        Format::Json => emit(
            flags,
            &to_json(&json!({ "cells": cells, "predicted_minima": minima }))?,
        ),
    }
}

fn variance_method(flags: &Flags) -> Option<VarianceMethod> {
    match flags.method {
        None | Some(Method::Sure) => Some(VarianceMethod::SureCorrected),
        Some(Method::Unthresholded) => Some(VarianceMethod::Unthresholded),
        Some(Method::Faked) => Some(VarianceMethod::Faked),
        Some(Method::Oracle) => None,
    }
}

fn cmd_fig2(flags: &Flags) -> Res<()> {
    let d = Fig2Config::default();
    let delta = Flags::single(&flags.delta, "delta", d.delta).map_err(bad)?;
    let epsilon = match &flags.rho {
        Some(_) => delta * Flags::single(&flags.rho, "rho", 0.0).map_err(bad)?,
        None => d.epsilon,
    };
    let mut variance = d.variance;
    if let Some(m) = variance_method(flags) {
        variance.method = m;
    }
    let cfg = Fig2Config {
        n: flags.n.unwrap_or(d.n),
        trials: flags.trials.unwrap_or(d.trials),
        seed: flags.seed.unwrap_or(d.seed),
        delta,
        epsilon,
        snr_db: flags.snr.clone().unwrap_or(d.snr_db.clone()),
        sigma_s2: flags.sigma_s2.clone().unwrap_or(d.sigma_s2.clone()),
        iters: flags.iters.unwrap_or(d.iters),
        variance,
        ..d
    };
    check_points(&[(cfg.delta, cfg.epsilon / cfg.delta)])?;
    let start = Instant::now();
    let cells = fig2_sweep(&cfg)?;
    log::info!("fig2: {} cells in {:.2?}", cells.len(), start.elapsed());
    for c in &cells {
        if c.unreliable > 0 {
            log::warn!(
                "snr={} sigma_s2={}: {} of {} variance estimates flagged unreliable",
                c.snr_db,
                c.sigma_s2,
                c.unreliable,
                cfg.trials
            );
        }
    }
    match flags.format() {
        Format::Csv => emit(flags, &fig2_csv(&cells)),
        Format::Json => emit(flags, &to_json(&cells)?),
    }
}

fn cmd_surface(flags: &Flags) -> Res<()> {
    let deltas = flags.delta.clone().unwrap_or_else(|| vec![0.1, 0.25, 0.5]);
    let gammas = flags.gamma_s2.clone().unwrap_or_else(|| vec![1.0]);
    let points: Vec<(f64, f64)> = match &flags.rho {
        Some(rhos) => deltas
            .iter()
            .flat_map(|&d| rhos.iter().map(move |&r| (d, r)))
            .collect(),
        None => table_points(&deltas)?,
    };
    check_points(&points)?;
    let sigma2 = flags.sigma2.unwrap_or(1.0);
    let c = flags.c.unwrap_or(0.02);
    let mut sweep = genp_amp::noise_sensitivity::SweepResult {
        points: Vec::new(),
        errors: Vec::new(),
    };
    // keep the requested point order when ρ lists differ per δ
    for &(d, r) in &points {
        let part = risk_surface_sweep(&[d], &[r], &gammas, sigma2, c);
        sweep.points.extend(part.points);
        sweep.errors.extend(part.errors);
    }
    let violated = sweep.points.iter().filter(|p| !p.bounds_hold).count();
    match flags.format() {
        Format::Csv => {
            let mut body = format!(
                "# risks per unit sigma2; inf = unbounded\n{}\n",
                RiskSurfacePoint::CSV_HEADER
            );
            for p in &sweep.points {
                body.push_str(&p.csv_row());
                body.push('\n');
            }
            emit(flags, &body)?;
        }
        Format::Json => emit(flags, &to_json(&sweep)?)?,
    }
    if violated > 0 {
        return Err(CliError::Numerical(format!(
            "{violated} points violate the risk bounds"
        )));
    }
    if let Some((d, r, g, e)) = sweep.errors.first() {
        return Err(CliError::Numerical(format!(
            "{} points failed, first at ({d}, {r}, {g}): {e}",
            sweep.errors.len()
        )));
    }
    Ok(())
}

struct Point {
    delta: f64,
    rho: f64,
    gamma_s2: f64,
    sigma2: f64,
    c: f64,
}

fn single_point(flags: &Flags) -> Res<Point> {
    let p = Point {
        delta: Flags::single(&flags.delta, "delta", 0.25).map_err(bad)?,
        rho: Flags::single(&flags.rho, "rho", 0.134).map_err(bad)?,
        gamma_s2: Flags::single(&flags.gamma_s2, "gamma-s2", 1.0).map_err(bad)?,
        sigma2: flags.sigma2.unwrap_or(1.0),
        c: flags.c.unwrap_or(0.02),
    };
    check_points(&[(p.delta, p.rho)])?;
    Ok(p)
}

/// Amplitude: `--mu`, else h* of the point, else (no prior above the AMP
/// transition) h* of the same point with γs² = 1.
fn amplitude(flags: &Flags, p: &Point) -> Res<f64> {
    if let Some(mu) = flags.mu {
        return Ok(mu);
    }
    match minimax_params(p.delta, p.rho, p.gamma_s2, p.sigma2, p.c) {
        Ok(mp) => Ok(mp.h_star),
        Err(_) => Ok(minimax_params(p.delta, p.rho, 1.0, p.sigma2, p.c)?.h_star),
    }
}

fn cmd_run(flags: &Flags) -> Res<()> {
    let p = single_point(flags)?;
    let mu = amplitude(flags, &p)?;
    let n = flags.n.unwrap_or(2000);
    let sigma_s2 = match &flags.sigma_s2 {
        Some(_) => Flags::single(&flags.sigma_s2, "sigma-s2", 0.0).map_err(bad)?,
        None => p.gamma_s2 * p.sigma2,
    };
    let geometry = ProblemGeometry::from_ratios(n, p.delta, p.rho)?;
    let noise = NoiseModel::new(p.sigma2, sigma_s2)?;
    let seed = flags.seed.unwrap_or(1);
    let inst = gen_instance(geometry, noise, SignalSpec::ThreePoint { mu }, seed)?;
    let eps = geometry.epsilon;
    let alpha = match flags.alpha {
        Some(a) => a,
        None => minimax_threshold(eps)?.alpha_pm,
    };
    let policy = if flags.method == Some(Method::Sure) && flags.alpha.is_none() {
        ThresholdPolicy::Sure
    } else {
        ThresholdPolicy::Multiplier(alpha)
    };
    let opts = AmpOptions {
        max_iters: flags.iters.unwrap_or(60),
        tol: flags.tol.unwrap_or(1e-8),
        ..AmpOptions::default()
    };
    let (y, a, xt, x0) = (
        inst.y.view(),
        inst.a.view(),
        inst.x_tilde.view(),
        inst.x0.view(),
    );
    let solver = flags.solver.unwrap_or(Solver::GenpAmp);
    let start = Instant::now();
    let body = match solver {
        Solver::GenpAmp => {
            let rep = genp_amp_reconstruct(y, a, xt, sigma_s2, policy, &opts, Some(x0))?;
            json!({ "mse": inst.mse(&rep.x_hat), "report": rep })
        }
        Solver::Amp => {
            let rep = amp_reconstruct(y, a, policy, &opts, Some(x0))?;
            json!({ "mse": inst.mse(&rep.x_hat), "report": rep })
        }
        Solver::ResidualAmp => {
            let rep = residual_amp(y, a, xt, policy, &opts, Some(x0))?;
            json!({ "mse": inst.mse(&rep.x_hat), "report": rep })
        }
        Solver::PGenpAmp => match variance_method(flags) {
            Some(method) => {
                let vo = VarianceOptions {
                    method,
                    amp: opts,
                    ..VarianceOptions::default()
                };
                let res = p_genp_amp(y, a, xt, &vo, Some(x0))?;
                if !res.variance.reliable {
                    log::warn!(
                        "prior variance estimate flagged unreliable: {:?}",
                        res.variance.warnings
                    );
                }
                json!({ "mse": inst.mse(&res.report.x_hat), "result": res })
            }
            None => {
                let rep = p_genp_amp_with_variance(y, a, xt, sigma_s2, &opts, Some(x0))?;
                json!({ "mse": inst.mse(&rep.x_hat), "report": rep })
            }
        },
        Solver::Prox => {
            let pred = predict_params(&SeParams {
                delta: p.delta,
                sigma2: p.sigma2,
                sigma_s2,
                alpha,
                prior: ThreePointPrior::new(eps, mu)?,
            })?;
            let cfg = ProxSolverConfig {
                max_iters: flags.iters.unwrap_or(100_000),
                tol: flags.tol.unwrap_or(1e-12),
                ..ProxSolverConfig::new(
                    pred.lambda,
                    if sigma_s2.is_finite() {
                        pred.tau_s
                    } else {
                        0.0
                    },
                )
            };
            let prior = sigma_s2.is_finite().then_some(xt);
            let res = genp_lasso_prox(y, a, prior, &cfg)?;
            json!({ "mse": inst.mse(&res.z), "lambda": pred.lambda, "tau_s": pred.tau_s, "result": res })
        }
        Solver::Lmmse => {
            let second = ThreePointPrior::new(eps, mu)?.second_moment();
            let x = lmmse(y, a, xt, p.sigma2, sigma_s2, second)?;
            json!({ "mse": inst.mse(&x), "x_hat": x.to_vec() })
        }
        Solver::Denoise => {
            let mode = if flags.method == Some(Method::Sure) {
                DenoiseMode::Sure
            } else {
                DenoiseMode::Minimax { epsilon: eps }
            };
            let x = scalar_denoise(xt, sigma_s2, mode)?;
            json!({ "mse": inst.mse(&x), "x_hat": x.to_vec() })
        }
    };
    log::info!("run ({solver:?}): {:.2?}", start.elapsed());
    let out = json!({ "instance": inst.spec(), "solver": format!("{solver:?}"), "output": body });
    emit(flags, &to_json(&out)?)
}

fn cmd_predict(flags: &Flags) -> Res<()> {
    let p = single_point(flags)?;
    let eps = p.delta * p.rho;
    let mu = amplitude(flags, &p)?;
    let alpha = match flags.alpha {
        Some(a) => a,
        None => minimax_threshold(eps)?.alpha_pm,
    };
    let se = SeParams {
        delta: p.delta,
        sigma2: p.sigma2,
        sigma_s2: p.gamma_s2 * p.sigma2,
        alpha,
        prior: ThreePointPrior::new(eps, mu)?,
    };
    let traj = se_iterate(
        &se,
        None,
        flags.iters.unwrap_or(1_000_000),
        flags.tol.unwrap_or(1e-14),
    )?;
    let params = predict_params(&se).ok();
    match flags.format() {
        Format::Csv => emit(flags, &traj.trajectory_csv()),
        Format::Json => emit(
            flags,
            &to_json(&json!({
                "params": se,
                "prediction": traj,
                "lasso_params": params,
                "minimax_risk": minimax_risk(p.delta, p.rho, p.gamma_s2)?,
                "lasso_bound": lasso_bound(p.delta, p.rho)?,
            }))?,
        ),
    }
}
