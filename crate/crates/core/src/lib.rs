//! Compressive sensing with a generalized elastic-net prior (GENP).
//!
//! Solvers for `y = A x + w` when a noisy side estimate `x̃ = x + s` is also
//! available: GENP-AMP and its parameterless variant, the state evolution
//! that predicts them, minimax noise-sensitivity formulas and reference
//! baselines (plain AMP, proximal GENP-LASSO, LMMSE, scalar denoising).

pub mod amp;
pub mod baselines;
pub mod error;
pub mod experiments;
pub mod noise_sensitivity;
pub mod normal;
pub mod parameterless;
pub mod problem;
pub mod rng;
pub mod serde_ext;
pub mod shrinkage;
pub mod state_evolution;

pub use amp::{
    amp_reconstruct, genp_amp_reconstruct, AmpOptions, ReconstructionReport, ThresholdPolicy,
};
pub use error::{Error, Result};
pub use problem::{
    gaussian_matrix, gen_instance, gen_instance_snr, InstanceSpec, NoiseModel, ProblemGeometry,
    ProblemInstance, SignalSpec, ThreePointPrior,
};
pub use shrinkage::{minimax_threshold, soft_threshold, soft_threshold_vec, MinimaxResult};
pub use state_evolution::{
    alpha_min, predict_params, se_iterate, xi_fixed_point, SeParams, SePrediction,
};
