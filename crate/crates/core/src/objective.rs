//! The regularized log-det objective
//! `F(w) = −log det(AᵀWA) + (1/(1+α)) Σ w_i^{1+α}` with `α = 2/(p−2)`,
//! its derivatives and the ratio vector `ρ_i = σ_i(w)/w_i^{1+α}`.

use serde::Serialize;

use crate::error::{LewisError, Result};
use crate::linalg::{DenseMatrix, FactorMethod, SpdState, WeightVector};

/// `p`, `α = 2/(p−2)` and `ᾱ = max(1, α)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaParams {
    p: f64,
    alpha: f64,
    alpha_bar: f64,
}

impl AlphaParams {
    pub fn new(p: f64) -> Result<Self> {
        if !p.is_finite() || p <= 2.0 {
            return Err(LewisError::UnsupportedP {
                p,
                reason: "need finite p > 2",
            });
        }
        let alpha = 2.0 / (p - 2.0);
        Ok(AlphaParams {
            p,
            alpha,
            alpha_bar: alpha.max(1.0),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    /// Largest admissible Descent step, `1/(3ᾱ)`.
    pub fn max_step(&self) -> f64 {
        1.0 / (3.0 * self.alpha_bar)
    }

    /// `x^{1+α}` for `x > 0`.
    #[inline]
    pub fn pow_one_plus_alpha(&self, x: f64) -> f64 {
        ((1.0 + self.alpha) * x.ln()).exp()
    }

    #[inline]
    pub fn pow_alpha(&self, x: f64) -> f64 {
        (self.alpha * x.ln()).exp()
    }
}

/// `ρ(w)` with its cached maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoVector {
    values: Vec<f64>,
    max: f64,
}

impl RhoVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(LewisError::DomainError(
                "rho entries must be finite and nonnegative".into(),
            ));
        }
        let max = values.iter().copied().fold(0.0, f64::max);
        Ok(RhoVector { values, max })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything one factorization of `AᵀWA` gives about a weight vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: SpdState,
    /// `a_iᵀ(AᵀWA)⁻¹a_i`
    pub quadforms: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `w^{1+α}`
    pub powered: Vec<f64>,
    pub rho: RhoVector,
    pub objective: f64,
}

impl Evaluation {
    pub fn new(a: &DenseMatrix, w: &[f64], params: &AlphaParams) -> Result<Self> {
        Self::with_method(a, w, params, FactorMethod::Cholesky)
    }

    pub fn with_method(
        a: &DenseMatrix,
        w: &[f64],
        params: &AlphaParams,
        method: FactorMethod,
    ) -> Result<Self> {
        let state = SpdState::factorize_with(a, w, method, a.rows())?;
        let quadforms = state.row_quadforms(a);
        let m = w.len();
        let mut sigma = Vec::with_capacity(m);
        let mut powered = Vec::with_capacity(m);
        let mut rho = Vec::with_capacity(m);
        for (&wi, &q) in w.iter().zip(&quadforms) {
            let wa = params.pow_alpha(wi);
            sigma.push(wi * q);
            powered.push(wa * wi);
            rho.push(q / wa);
        }
        let regularizer: f64 = powered.iter().sum::<f64>() / (1.0 + params.alpha());
        let objective = -state.log_det() + regularizer;
        Ok(Evaluation {
            state,
            quadforms,
            sigma,
            powered,
            rho: RhoVector::new(rho)?,
            objective,
        })
    }

    /// `‖σ(w) − w^{1+α}‖∞`
    pub fn optimality_residual(&self) -> f64 {
        self.sigma
            .iter()
            .zip(&self.powered)
            .map(|(s, p)| (s - p).abs())
            .fold(0.0, f64::max)
    }
}

pub fn objective_value(a: &DenseMatrix, w: &WeightVector, params: &AlphaParams) -> Result<f64> {
    let state = SpdState::factorize(a, w.as_slice())?;
    let regularizer: f64 = w
        .as_slice()
        .iter()
        .map(|&x| params.pow_one_plus_alpha(x))
        .sum::<f64>()
        / (1.0 + params.alpha());
    Ok(-state.log_det() + regularizer)
}

/// `[∇F(w)]_i = (w_i^{1+α} − σ_i(w)) / w_i`.
pub fn gradient(a: &DenseMatrix, w: &WeightVector, params: &AlphaParams) -> Result<Vec<f64>> {
    let ev = Evaluation::new(a, w.as_slice(), params)?;
    Ok(w
        .as_slice()
        .iter()
        .zip(ev.powered.iter().zip(&ev.sigma))
        .map(|(wi, (p, s))| (p - s) / wi)
        .collect())
}

/// `hᵀ∇²F(w)h` without forming the `m×m` Hessian.
///
/// The Schur-square term `Σ_ij h_i h_j (a_iᵀMa_j)²` equals `tr((MB)²)` with
/// `M = (AᵀWA)⁻¹` and `B = AᵀHA`.
pub fn hessian_quadform(
    a: &DenseMatrix,
    w: &WeightVector,
    params: &AlphaParams,
    h: &[f64],
) -> Result<f64> {
    let w = w.as_slice();
    if h.len() != w.len() {
        return Err(LewisError::DimensionMismatch(
            "direction length differs from weight length".into(),
        ));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(LewisError::NonFiniteInput { what: "direction" });
    }
    let state = SpdState::factorize(a, w)?;
    let n = a.cols();
    let mut b = vec![0.0; n * n];
    for (i, &hi) in h.iter().enumerate() {
        if hi == 0.0 {
            continue;
        }
        let r = a.row(i);
        for j in 0..n {
            let s = hi * r[j];
            for k in 0..n {
                b[j * n + k] += s * r[k];
            }
        }
    }
    let minv = state.inverse();
    let mut mb = vec![0.0; n * n];
    for j in 0..n {
        for l in 0..n {
            let mjl = minv[j * n + l];
            for k in 0..n {
                mb[j * n + k] += mjl * b[l * n + k];
            }
        }
    }
    let mut trace = 0.0;
    for j in 0..n {
        for k in 0..n {
            trace += mb[j * n + k] * mb[k * n + j];
        }
    }
    let diagonal: f64 = h
        .iter()
        .zip(w)
        .map(|(&hi, &wi)| hi * hi * ((params.alpha() - 1.0) * wi.ln()).exp())
        .sum();
    Ok(trace + params.alpha() * diagonal)
}

pub fn rho(a: &DenseMatrix, w: &WeightVector, params: &AlphaParams) -> Result<RhoVector> {
    Ok(Evaluation::new(a, w.as_slice(), params)?.rho)
}
