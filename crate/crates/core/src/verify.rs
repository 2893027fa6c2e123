//! Residual checks, the sub-optimality certificate, the ellipsoid/slab
//! containment test and a brute-force convex oracle for small instances.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{LewisError, Result};
use crate::linalg::{cholesky, gram, leverage_scores_raw, solve_upper_transposed, DenseMatrix, SpdState, WeightVector};
use crate::objective::{AlphaParams, Evaluation};

/// Summary of how far a weight vector is from the Lewis fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Relative residual of `w̄_i^{2/p} = a_iᵀ(AᵀW̄^{1−2/p}A)⁻¹a_i`.
    pub max_relative_fixed_point_residual: f64,
    /// `‖σ(ŵ) − ŵ^{1+α}‖∞`
    pub optimality_residual: f64,
    pub rho_max: f64,
    /// Present only when `ŵ` satisfies the rounding condition.
    pub suboptimality_certificate: Option<f64>,
}

/// `max_i |w̄_i^{2/p} − a_iᵀ(AᵀW̄^{1−2/p}A)⁻¹a_i| / w̄_i^{2/p}`.
pub fn lewis_residual(a: &DenseMatrix, w_bar: &WeightVector, p: f64) -> Result<f64> {
    if !(p.is_finite() && p > 2.0) {
        return Err(LewisError::UnsupportedP {
            p,
            reason: "need finite p > 2",
        });
    }
    check_len(a, w_bar.len())?;
    let inner: Vec<f64> = w_bar
        .as_slice()
        .iter()
        .map(|&v| ((1.0 - 2.0 / p) * v.ln()).exp())
        .collect();
    let state = SpdState::factorize(a, &inner)?;
    let q = state.row_quadforms(a);
    Ok(w_bar
        .as_slice()
        .iter()
        .zip(&q)
        .map(|(&v, &qi)| {
            let target = (2.0 / p * v.ln()).exp();
            (target - qi).abs() / target
        })
        .fold(0.0, f64::max))
}

/// `‖σ(w) − w^{1+α}‖∞`.
pub fn optimality_residual(a: &DenseMatrix, w: &WeightVector, params: &AlphaParams) -> Result<f64> {
    check_len(a, w.len())?;
    Ok(Evaluation::new(a, w.as_slice(), params)?.optimality_residual())
}

/// `5·max(1, α⁻¹)·Σ w_i^{1+α}(ρ_i−1)²/(ρ_i+1)`, an upper bound on `F(w) − F(w*)`
/// whenever `ρ_max(w) ≤ 1+α`.
pub fn suboptimality_certificate(a: &DenseMatrix, w: &WeightVector, params: &AlphaParams) -> Result<f64> {
    check_len(a, w.len())?;
    let ev = Evaluation::new(a, w.as_slice(), params)?;
    certificate_from(&ev, params)
}

pub(crate) fn certificate_from(ev: &Evaluation, params: &AlphaParams) -> Result<f64> {
    let limit = 1.0 + params.alpha();
    if ev.rho.max() > limit * (1.0 + crate::steps::ROUNDING_SLACK) {
        return Err(LewisError::PreconditionViolated(format!(
            "rho_max = {} exceeds 1 + alpha = {limit}",
            ev.rho.max()
        )));
    }
    let sum: f64 = ev
        .powered
        .iter()
        .zip(ev.rho.as_slice())
        .map(|(&pw, &r)| pw * (r - 1.0) * (r - 1.0) / (r + 1.0))
        .sum();
    Ok(5.0 * (1.0 / params.alpha()).max(1.0) * sum)
}

/// All residuals for an optimizer-normalized weight vector `ŵ`.
pub fn residual_report(a: &DenseMatrix, w_hat: &WeightVector, params: &AlphaParams) -> Result<ResidualReport> {
    check_len(a, w_hat.len())?;
    let ev = Evaluation::new(a, w_hat.as_slice(), params)?;
    let w_bar = WeightVector::definition(ev.powered.clone())?;
    Ok(ResidualReport {
        max_relative_fixed_point_residual: lewis_residual(a, &w_bar, params.p())?,
        optimality_residual: ev.optimality_residual(),
        rho_max: ev.rho.max(),
        suboptimality_certificate: certificate_from(&ev, params).ok(),
    })
}

/// Proven bound on the multiplicative error of `ŵ^{1+α}` against the true Lewis weights.
///
/// With `μ = max_i |ln ρ_i(ŵ)|`, every entry of `ŵ` lies within a factor
/// `exp((1+√n/α)μ/α)` of the optimizer, so the definition-normalized weights are
/// within `exp((1+α)(1+√n/α)μ/α)`. Returns that exponent.
pub fn certified_log_error(ev_hat: &Evaluation, n: usize, params: &AlphaParams) -> f64 {
    let a = params.alpha();
    let mu = ev_hat.rho.as_slice().iter().map(|r| r.ln().abs()).fold(0.0, f64::max);
    (1.0 + a) * (1.0 + (n as f64).sqrt() / a) * mu / a
}

/// Samples `trials` points `x = L⁻ᵀu` on the boundary of `{xᵀAᵀWAx ≤ 1}`
/// (`LLᵀ = AᵀWA`, `u` uniform on the sphere) and checks
/// `‖W^{−α/2}Ax‖∞ ≤ √(1+α)(1 + 1e−9)` for each.
pub fn ellipsoid_containment<R: Rng + ?Sized>(
    a: &DenseMatrix,
    w: &WeightVector,
    params: &AlphaParams,
    trials: usize,
    rng: &mut R,
) -> Result<bool> {
    check_len(a, w.len())?;
    let n = a.cols();
    let l = cholesky(&gram(a, w.as_slice()), n)?;
    let scale: Vec<f64> = w.as_slice().iter().map(|&x| (-0.5 * params.alpha() * x.ln()).exp()).collect();
    let bound = (1.0 + params.alpha()).sqrt() * (1.0 + 1e-9);
    for _ in 0..trials {
        let mut u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        let x = solve_upper_transposed(&l, &u, n);
        for (i, s) in scale.iter().enumerate() {
            let ax: f64 = a.row(i).iter().zip(&x).map(|(r, xv)| r * xv).sum();
            if (s * ax).abs() > bound {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exact `F(w₁) − F(w₂)`, accurate even when the two values agree to many digits.
///
/// The log-det part is `−log det(I + B)` with `B = L₂⁻¹Aᵀ(W₁−W₂)AL₂⁻ᵀ`, taken
/// from a Cholesky factor of `I + B`; the regularizer part uses `expm1`/`ln_1p`.
pub fn objective_difference(
    a: &DenseMatrix,
    w1: &WeightVector,
    w2: &WeightVector,
    params: &AlphaParams,
) -> Result<f64> {
    check_len(a, w1.len())?;
    check_len(a, w2.len())?;
    let n = a.cols();
    let l2 = cholesky(&gram(a, w2.as_slice()), n)?;
    let d: Vec<f64> = w1.as_slice().iter().zip(w2.as_slice()).map(|(x, y)| x - y).collect();
    // C = L₂⁻¹Aᵀ: column i is L₂⁻¹a_i
    let mut b = vec![0.0; n * n];
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let c = solve_lower(&l2, a.row(i), n);
        for j in 0..n {
            let s = di * c[j];
            for k in 0..n {
                b[j * n + k] += s * c[k];
            }
        }
    }
    let log_det = log_det_identity_plus(&b, n)?;
    let a1 = 1.0 + params.alpha();
    let reg: f64 = w1
        .as_slice()
        .iter()
        .zip(w2.as_slice())
        .zip(&d)
        .map(|((_, &y), &di)| params.pow_one_plus_alpha(y) * (a1 * (di / y).ln_1p()).exp_m1())
        .sum::<f64>()
        / a1;
    Ok(-log_det + reg)
}

/// `log det(I + B)` for symmetric `B` with `I + B` positive definite.
fn log_det_identity_plus(b: &[f64], n: usize) -> Result<f64> {
    let norm: f64 = b.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    if norm < 0.25 {
        // Σ_k (−1)^{k+1} tr(B^k)/k, truncated once terms drop below 1e−34 relative.
        let mut power = b.to_vec();
        let mut total = 0.0;
        for k in 1..200 {
            let tr: f64 = (0..n).map(|j| power[j * n + j]).sum();
            let term = tr / k as f64;
            total += if k % 2 == 1 { term } else { -term };
            if term.abs() <= 1e-34 * total.abs().max(f64::MIN_POSITIVE) || tr == 0.0 {
                break;
            }
            power = mat_mul(&power, b, n);
        }
        return Ok(total);
    }
    let mut g = b.to_vec();
    for j in 0..n {
        g[j * n + j] += 1.0;
    }
    let l = cholesky(&g, n)?;
    Ok((0..n).map(|j| 2.0 * l[j * n + j].ln()).sum())
}

fn mat_mul(x: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            let xil = x[i * n + l];
            for j in 0..n {
                out[i * n + j] += xil * y[l * n + j];
            }
        }
    }
    out
}

fn solve_lower(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Iteration limit for [`oracle_solve`].
pub const ORACLE_MAX_ITERATIONS: usize = 1_000_000;

/// Minimizes the regularized log-det objective by projected gradient descent
/// with Armijo backtracking (slope 1e−4, halving) and clipping `w⁺ ≥ w/2`.
///
/// Stops once `‖σ(w) − w^{1+α}‖∞ ≤ tol`. Returns `(w*, F(w*))` in the
/// optimizer normalization.
pub fn oracle_solve(a: &DenseMatrix, p: f64, tol: f64) -> Result<(WeightVector, f64)> {
    let (w, f, _) = oracle_solve_counted(a, p, tol)?;
    Ok((w, f))
}

/// [`oracle_solve`] that also reports the number of gradient iterations.
pub fn oracle_solve_counted(a: &DenseMatrix, p: f64, tol: f64) -> Result<(WeightVector, f64, usize)> {
    let params = AlphaParams::new(p)?;
    if !(tol > 0.0) {
        return Err(LewisError::DomainError(format!("tolerance must be positive, got {tol}")));
    }
    let m = a.rows();
    let mut w = WeightVector::optimizer(vec![a.cols() as f64 / m as f64; m])?;
    let mut ev = Evaluation::new(a, w.as_slice(), &params)?;
    let mut t = 1.0_f64;
    for it in 0..ORACLE_MAX_ITERATIONS {
        let residual = ev.optimality_residual();
        if residual <= tol {
            return Ok((w, ev.objective, it));
        }
        let g: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(ev.powered.iter().zip(&ev.sigma))
            .map(|(wi, (pw, s))| (pw - s) / wi)
            .collect();
        t = (2.0 * t).min(1e12);
        loop {
            let mut slope = 0.0;
            let candidate: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&g)
                .map(|(&wi, &gi)| {
                    let c = (wi - t * gi).max(0.5 * wi);
                    slope += gi * (c - wi);
                    c
                })
                .collect();
            let candidate = WeightVector::optimizer(candidate)?;
            // differences of F are taken directly so that the test stays
            // meaningful once they drop below the rounding error of F itself
            if let Ok(change) = objective_difference(a, &candidate, &w, &params) {
                if change <= 1e-4 * slope {
                    ev = Evaluation::new(a, candidate.as_slice(), &params)?;
                    w = candidate;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-300 {
                return Err(LewisError::OracleStalled { iterations: it, residual });
            }
        }
    }
    Err(LewisError::OracleStalled {
        iterations: ORACLE_MAX_ITERATIONS,
        residual: ev.optimality_residual(),
    })
}

/// `σ(w)` for raw positive weights; test and binding convenience.
pub fn sigma(a: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    leverage_scores_raw(a, w)
}

fn check_len(a: &DenseMatrix, len: usize) -> Result<()> {
    if a.rows() != len {
        return Err(LewisError::DimensionMismatch(format!(
            "matrix has {} rows but weight vector has {len} entries",
            a.rows()
        )));
    }
    Ok(())
}
