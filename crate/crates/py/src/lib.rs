//! Python bindings: `import lewis_weights`.
//!
//! Matrices are passed as lists of rows (or anything PyO3 can turn into
//! `Vec<Vec<f64>>`, e.g. a 2-d NumPy array).

use std::time::Duration;

use lewis_core::{
    AlphaParams, DenseMatrix, LewisError, SolverConfig, SolverReport, Variant, WeightVector,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: LewisError) -> PyErr {
    match e {
        LewisError::NotPositiveDefinite { .. }
        | LewisError::NonFiniteInput { .. }
        | LewisError::DimensionMismatch(_)
        | LewisError::Dimension { .. }
        | LewisError::ZeroRow { .. }
        | LewisError::IndexOutOfRange { .. }
        | LewisError::InvalidWeight { .. }
        | LewisError::InvalidStepSize { .. }
        | LewisError::DomainError(_)
        | LewisError::UnsupportedP { .. }
        | LewisError::PreconditionViolated(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

pub fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

pub fn variant(name: &str) -> PyResult<Variant> {
    match name.replace('-', "_").as_str() {
        "parallel" => Ok(Variant::Parallel),
        "sequential" => Ok(Variant::Sequential),
        "one_step" => Ok(Variant::OneStep),
        "cohen_peng" => Ok(Variant::CohenPeng),
        other => Err(PyValueError::new_err(format!(
            "unknown variant {other:?}; expected parallel, sequential, one_step or cohen_peng"
        ))),
    }
}

/// Result of `solve`.
#[pyclass(module = "lewis_weights", frozen, get_all, skip_from_py_object)]
#[derive(Debug, Clone)]
pub struct Report {
    /// Solution of the convex program.
    pub weights_optimizer: Vec<f64>,
    /// Lewis weights, summing to about `n`.
    pub weights_definition: Vec<f64>,
    pub lewis_residual: f64,
    pub optimality_residual: f64,
    pub rho_max: f64,
    pub descent_iterations: usize,
    pub parallel_passes: usize,
    pub coordinate_steps: usize,
    pub fixed_point_iterations: usize,
    pub t_total: usize,
    pub early_stopped: bool,
    pub converged: bool,
    pub wall_ms: f64,
    pub variant: String,
    pub p: f64,
    pub eps: f64,
    /// `(iter, step_type, F, rho_max, opt_residual)` rows.
    pub trace: Vec<(usize, String, f64, f64, f64)>,
}

#[pymethods]
impl Report {
    fn __repr__(&self) -> String {
        format!(
            "Report(variant={}, p={}, m={}, lewis_residual={:.3e}, converged={})",
            self.variant,
            self.p,
            self.weights_definition.len(),
            self.lewis_residual,
            self.converged
        )
    }
}

impl From<SolverReport> for Report {
    fn from(r: SolverReport) -> Self {
        let converged = r.converged();
        Report {
            weights_optimizer: r.weights_optimizer.into_vec(),
            weights_definition: r.weights_definition.into_vec(),
            lewis_residual: r.residuals.max_relative_fixed_point_residual,
            optimality_residual: r.residuals.optimality_residual,
            rho_max: r.residuals.rho_max,
            descent_iterations: r.iterations.descent,
            parallel_passes: r.iterations.parallel_passes,
            coordinate_steps: r.iterations.coordinate_steps,
            fixed_point_iterations: r.iterations.fixed_point,
            t_total: r.config.t_total,
            early_stopped: r.early_stopped,
            converged,
            wall_ms: r.wall_ms,
            variant: r.config.variant.name().to_string(),
            p: r.config.p,
            eps: r.config.eps,
            trace: r
                .trace
                .iter()
                .map(|e| (e.iter, e.step_type.name().to_string(), e.objective, e.rho_max, e.opt_residual))
                .collect(),
        }
    }
}

/// Computes `ℓ_p` Lewis weights of `a` for `p > 2`.
#[pyfunction]
#[pyo3(signature = (a, p, eps = 1e-6, variant = "parallel", time_limit = None))]
pub fn solve(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    p: f64,
    eps: f64,
    variant: &str,
    time_limit: Option<f64>,
) -> PyResult<Report> {
    let a = matrix(a)?;
    let mut cfg = SolverConfig::schedule(p, a.rows(), a.cols(), eps, self::variant(variant)?).map_err(to_py)?;
    if let Some(s) = time_limit {
        if !(s > 0.0 && s.is_finite()) {
            return Err(PyValueError::new_err("time_limit must be a positive number of seconds"));
        }
        cfg = cfg.with_time_limit(Duration::from_secs_f64(s));
    }
    let report = py.detach(|| lewis_core::solve(&a, &cfg)).map_err(to_py)?;
    Ok(report.into())
}

/// `σ_i(w) = w_i a_iᵀ(AᵀWA)⁻¹a_i`.
#[pyfunction]
pub fn leverage_scores(a: Vec<Vec<f64>>, w: Vec<f64>) -> PyResult<Vec<f64>> {
    let a = matrix(a)?;
    let w = WeightVector::optimizer(w).map_err(to_py)?;
    lewis_core::leverage_scores(&a, &w).map_err(to_py)
}

/// Largest relative violation of the Lewis fixed-point equation by `w_bar`.
#[pyfunction]
pub fn lewis_residual(a: Vec<Vec<f64>>, w_bar: Vec<f64>, p: f64) -> PyResult<f64> {
    let a = matrix(a)?;
    let w = WeightVector::definition(w_bar).map_err(to_py)?;
    lewis_core::lewis_residual(&a, &w, p).map_err(to_py)
}

/// `F(w) = −log det(AᵀWA) + Σ w^{1+α}/(1+α)` with `α = 2/(p−2)`.
#[pyfunction]
pub fn objective_value(a: Vec<Vec<f64>>, w: Vec<f64>, p: f64) -> PyResult<f64> {
    let a = matrix(a)?;
    let params = AlphaParams::new(p).map_err(to_py)?;
    let w = WeightVector::optimizer(w).map_err(to_py)?;
    lewis_core::objective_value(&a, &w, &params).map_err(to_py)
}

/// `ρ_i(w) = σ_i(w)/w_i^{1+α}`.
#[pyfunction]
pub fn rho(a: Vec<Vec<f64>>, w: Vec<f64>, p: f64) -> PyResult<Vec<f64>> {
    let a = matrix(a)?;
    let params = AlphaParams::new(p).map_err(to_py)?;
    let w = WeightVector::optimizer(w).map_err(to_py)?;
    Ok(lewis_core::rho(&a, &w, &params).map_err(to_py)?.as_slice().to_vec())
}

/// Plain projected-gradient reference solver; returns `(w*, F(w*))`.
#[pyfunction]
#[pyo3(signature = (a, p, tol = 1e-10))]
pub fn oracle_solve(py: Python<'_>, a: Vec<Vec<f64>>, p: f64, tol: f64) -> PyResult<(Vec<f64>, f64)> {
    let a = matrix(a)?;
    let (w, f) = py.detach(|| lewis_core::oracle_solve(&a, p, tol)).map_err(to_py)?;
    Ok((w.into_vec(), f))
}

/// Fixed-point iteration for `2 < p < 4`; returns Lewis weights.
#[pyfunction]
#[pyo3(signature = (a, p, eps = 1e-6))]
pub fn cohen_peng(a: Vec<Vec<f64>>, p: f64, eps: f64) -> PyResult<Vec<f64>> {
    let a = matrix(a)?;
    Ok(lewis_core::cohen_peng_fixed_point(&a, p, eps).map_err(to_py)?.into_vec())
}

#[pymodule]
pub fn lewis_weights(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(leverage_scores, m)?)?;
    m.add_function(wrap_pyfunction!(lewis_residual, m)?)?;
    m.add_function(wrap_pyfunction!(objective_value, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_solve, m)?)?;
    m.add_function(wrap_pyfunction!(cohen_peng, m)?)?;
    Ok(())
}
