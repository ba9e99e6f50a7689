//! Python bindings. Vectors cross the boundary as lists of floats and
//! matrices as lists of rows.

use genp_amp_core as core;
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use core::amp::{AmpOptions, ReconstructionReport, ThresholdPolicy};
use core::noise_sensitivity::Risk;

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::InvalidArgument(m) => PyValueError::new_err(m),
        other => PyArithmeticError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix rows differ in length"));
    }
    Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn risk(r: Risk) -> f64 {
    r.value()
}

fn policy(alpha: Option<f64>) -> ThresholdPolicy {
    alpha.map_or(ThresholdPolicy::Sure, ThresholdPolicy::Multiplier)
}

fn report_dict<'py>(py: Python<'py>, r: &ReconstructionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("x_hat", r.x_hat.to_vec())?;
    d.set_item("mse_trace", r.mse_trace.clone())?;
    d.set_item("npi_trace", r.npi_trace.clone())?;
    d.set_item("theta_trace", r.theta_trace.clone())?;
    d.set_item("iterations", r.iterations_run)?;
    d.set_item("converged", r.converged)?;
    d.set_item("diverged", r.diverged)?;
    d.set_item("u", r.final_state.u_t)?;
    d.set_item("onsager", r.final_state.b_t)?;
    Ok(d)
}

/// A generated compressed-sensing problem with side information.
#[pyclass(frozen)]
struct Instance {
    inner: core::ProblemInstance,
}

#[pymethods]
impl Instance {
    /// Three-point signal with amplitude `mu`. `sigma_s2 = inf` gives no prior.
    #[new]
    #[pyo3(signature = (n, delta, rho, sigma2, sigma_s2, mu, seed = 1))]
    fn new(
        n: usize,
        delta: f64,
        rho: f64,
        sigma2: f64,
        sigma_s2: f64,
        mu: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let geometry = core::ProblemGeometry::from_ratios(n, delta, rho).map_err(to_py)?;
        let noise = core::NoiseModel::new(sigma2, sigma_s2).map_err(to_py)?;
        let inner = core::gen_instance(geometry, noise, core::SignalSpec::ThreePoint { mu }, seed)
            .map_err(to_py)?;
        Ok(Instance { inner })
    }

    #[getter]
    fn x0(&self) -> Vec<f64> {
        self.inner.x0.to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.to_vec()
    }

    #[getter]
    fn x_tilde(&self) -> Vec<f64> {
        self.inner.x_tilde.to_vec()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        self.inner
            .a
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        let g = self.inner.geometry;
        (g.m, g.n, g.k)
    }

    #[getter]
    fn sigma_s2(&self) -> f64 {
        self.inner.noise.sigma_s2
    }

    fn mse(&self, estimate: Vec<f64>) -> PyResult<f64> {
        if estimate.len() != self.inner.x0.len() {
            return Err(PyValueError::new_err(
                "estimate length differs from the signal",
            ));
        }
        Ok(self.inner.mse(&Array1::from(estimate)))
    }

    /// GENP-AMP on this instance; `alpha = None` tunes the threshold by SURE.
    #[pyo3(signature = (alpha = None, iters = 60))]
    fn genp_amp<'py>(
        &self,
        py: Python<'py>,
        alpha: Option<f64>,
        iters: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let i = &self.inner;
        let r = core::genp_amp_reconstruct(
            i.y.view(),
            i.a.view(),
            i.x_tilde.view(),
            i.noise.sigma_s2,
            policy(alpha),
            &AmpOptions::with_iters(iters),
            Some(i.x0.view()),
        )
        .map_err(to_py)?;
        report_dict(py, &r)
    }

    /// Standard AMP, ignoring the side information.
    #[pyo3(signature = (alpha = None, iters = 60))]
    fn amp<'py>(
        &self,
        py: Python<'py>,
        alpha: Option<f64>,
        iters: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let i = &self.inner;
        let r = core::amp_reconstruct(
            i.y.view(),
            i.a.view(),
            policy(alpha),
            &AmpOptions::with_iters(iters),
            Some(i.x0.view()),
        )
        .map_err(to_py)?;
        report_dict(py, &r)
    }

    /// Parameterless GENP-AMP with the prior variance estimated from the data.
    #[pyo3(signature = (method = "sure", iters = 60))]
    fn p_genp_amp<'py>(
        &self,
        py: Python<'py>,
        method: &str,
        iters: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let i = &self.inner;
        let opts = core::parameterless::VarianceOptions {
            method: method.parse().map_err(to_py)?,
            amp: AmpOptions::with_iters(iters),
            ..Default::default()
        };
        let res = core::parameterless::p_genp_amp(
            i.y.view(),
            i.a.view(),
            i.x_tilde.view(),
            &opts,
            Some(i.x0.view()),
        )
        .map_err(to_py)?;
        let d = report_dict(py, &res.report)?;
        d.set_item("sigma_s2_used", res.sigma_s2_used)?;
        d.set_item("sigma_s2_hat", res.variance.sigma_s2_hat)?;
        d.set_item("reliable", res.variance.reliable)?;
        d.set_item("warnings", res.variance.warnings.clone())?;
        Ok(d)
    }
}

/// GENP-AMP on user-supplied data.
#[pyfunction(name = "genp_amp")]
#[pyo3(signature = (y, a, x_tilde, sigma_s2, alpha = None, iters = 60))]
fn genp_amp_on<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    a: Vec<Vec<f64>>,
    x_tilde: Vec<f64>,
    sigma_s2: f64,
    alpha: Option<f64>,
    iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let a = matrix(a)?;
    let (y, xt) = (Array1::from(y), Array1::from(x_tilde));
    let r = core::genp_amp_reconstruct(
        y.view(),
        a.view(),
        xt.view(),
        sigma_s2,
        policy(alpha),
        &AmpOptions::with_iters(iters),
        None,
    )
    .map_err(to_py)?;
    report_dict(py, &r)
}

/// Soft thresholding of every entry of `x` at `theta`.
#[pyfunction]
fn soft_threshold(x: Vec<f64>, theta: f64) -> PyResult<Vec<f64>> {
    core::soft_threshold_vec(Array1::from(x).view(), theta)
        .map(|v| v.to_vec())
        .map_err(to_py)
}

/// Returns (alpha_pm, M_pm) for sparsity `epsilon`.
#[pyfunction]
fn minimax_threshold(epsilon: f64) -> PyResult<(f64, f64)> {
    let r = core::minimax_threshold(epsilon).map_err(to_py)?;
    Ok((r.alpha_pm, r.m_pm))
}

/// Minimax risk per unit noise variance; `inf` when unbounded.
#[pyfunction]
fn minimax_risk(delta: f64, rho: f64, gamma_s2: f64) -> PyResult<f64> {
    core::noise_sensitivity::minimax_risk(delta, rho, gamma_s2)
        .map(risk)
        .map_err(to_py)
}

#[pyfunction]
fn lasso_bound(delta: f64, rho: f64) -> PyResult<f64> {
    core::noise_sensitivity::lasso_bound(delta, rho)
        .map(risk)
        .map_err(to_py)
}

#[pyfunction]
fn denoise_bound(delta: f64, rho: f64, gamma_s2: f64) -> PyResult<f64> {
    core::noise_sensitivity::denoise_bound(delta, rho, gamma_s2)
        .map(risk)
        .map_err(to_py)
}

#[pyfunction]
fn phase_transition_rho(delta: f64) -> PyResult<f64> {
    core::noise_sensitivity::phase_transition_rho(delta).map_err(to_py)
}

#[pyfunction]
fn alpha_min(delta: f64, gamma_s2: f64) -> f64 {
    core::alpha_min(delta, gamma_s2)
}

/// Fixed point of the state evolution for a three-point law.
#[pyfunction]
#[pyo3(signature = (delta, epsilon, mu, sigma2, sigma_s2, alpha))]
fn predict<'py>(
    py: Python<'py>,
    delta: f64,
    epsilon: f64,
    mu: f64,
    sigma2: f64,
    sigma_s2: f64,
    alpha: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = core::SeParams {
        delta,
        sigma2,
        sigma_s2,
        alpha,
        prior: core::ThreePointPrior::new(epsilon, mu).map_err(to_py)?,
    };
    let r = core::predict_params(&p).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("lambda", r.lambda)?;
    d.set_item("tau_s", r.tau_s)?;
    d.set_item("mse", r.q_star2)?;
    d.set_item("npi", r.xi_star2)?;
    d.set_item("u", r.u_star)?;
    d.set_item("detection_rate", r.detection_rate)?;
    d.set_item("onsager", r.onsager)?;
    Ok(d)
}

/// Formal minimax parameters (h*, λ*, τ*) at a phase-plane point.
#[pyfunction]
#[pyo3(signature = (delta, rho, gamma_s2, sigma2 = 1.0, c = 0.02))]
fn minimax_params<'py>(
    py: Python<'py>,
    delta: f64,
    rho: f64,
    gamma_s2: f64,
    sigma2: f64,
    c: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r =
        core::noise_sensitivity::minimax_params(delta, rho, gamma_s2, sigma2, c).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("h_star", r.h_star)?;
    d.set_item("lambda_star", r.lambda_star)?;
    d.set_item("tau_star", r.tau_star)?;
    d.set_item("fmse", r.fmse)?;
    d.set_item("npi", r.npi)?;
    Ok(d)
}

#[pymodule(name = "genp_amp")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_function(wrap_pyfunction!(genp_amp_on, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(minimax_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(minimax_risk, m)?)?;
    m.add_function(wrap_pyfunction!(lasso_bound, m)?)?;
    m.add_function(wrap_pyfunction!(denoise_bound, m)?)?;
    m.add_function(wrap_pyfunction!(phase_transition_rho, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_min, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(minimax_params, m)?)?;
    Ok(())
}
