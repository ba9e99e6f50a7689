//! Command-line flags and the optional JSON config file; flags win.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(
    name = "genp-amp",
    version,
    about = "GENP-AMP experiments: tables, sweeps, single runs and predictions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// λ sweep of LASSO and GENP-LASSO, predicted and empirical MSE.
    Fig1,
    /// Validation table with γs² = 1 (default) over δ ∈ {0.1, 0.25, 0.5}.
    Table1,
    /// Validation table for γs² ∈ {2, 4} at δ = 0.1.
    Table2,
    /// Parameterless study: estimated prior variance and MSE per σs².
    Fig2,
    /// Closed-form risk surface over a (δ, ρ, γs²) grid.
    Surface,
    /// Single instance; prints the reconstruction report as JSON.
    Run,
    /// State evolution only: fixed point and implied parameters.
    Predict,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    GenpAmp,
    Amp,
    PGenpAmp,
    Prox,
    Lmmse,
    Denoise,
    ResidualAmp,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sure,
    Unthresholded,
    Faked,
    Oracle,
}

/// Every setting is optional so that a config file can fill the gaps.
#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct Flags {
    /// JSON file with any of the flags below (snake_case keys).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Measurement-noise variance.
    #[arg(long, global = true)]
    pub sigma2: Option<f64>,
    /// γs² = σs²/σ² list; "inf" means no prior.
    #[arg(long = "gamma-s2", global = true, value_delimiter = ',')]
    pub gamma_s2: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub delta: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Fraction c of the nearly-least-favorable law.
    #[arg(long, global = true)]
    pub c: Option<f64>,
    /// Threshold multiplier override.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Prior-variance estimator for P-GENP-AMP.
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for Monte-Carlo trials (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// λ values for fig1.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// SNR values in dB for fig2.
    #[arg(long, global = true, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    /// True σs² grid for fig2, or σs² for run.
    #[arg(long = "sigma-s2", global = true, value_delimiter = ',')]
    pub sigma_s2: Option<Vec<f64>>,
    /// Solver for `run`.
    #[arg(long, global = true, value_enum)]
    pub solver: Option<Solver>,
    /// Three-point amplitude for `run`/`predict`; defaults to h* for the point.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// Skip the Monte-Carlo columns (formal values only).
    #[arg(long = "formal-only", global = true)]
    #[serde(default)]
    pub formal_only: bool,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Flags {
    /// Fills unset flags from `file`.
    pub fn merged_with(mut self, file: Flags) -> Flags {
        merge_fields!(self, file; n, trials, seed, sigma2, gamma_s2, delta, rho, c, alpha, iters, tol,
            method, out, format, workers, lambda, snr, sigma_s2, solver, mu);
        self.formal_only |= file.formal_only;
        self
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    pub fn single(list: &Option<Vec<f64>>, name: &str, default: f64) -> Result<f64, String> {
        match list.as_deref() {
            None => Ok(default),
            Some([v]) => Ok(*v),
            Some(_) => Err(format!("--{name} takes a single value for this command")),
        }
    }
}
