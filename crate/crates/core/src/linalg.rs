//! Dense SPD linear algebra for weighted Gram matrices `AᵀWA`.
//!
//! Everything here works on small `n×n` systems built from a tall `m×n`
//! matrix. The Gram matrix is factored once (Cholesky by default, or
//! Householder QR of `W^{1/2}A` for badly conditioned inputs) and the
//! explicit inverse is kept so that per-row quadratic forms and
//! Sherman-Morrison updates cost `O(n²)`.

use rayon::prelude::*;

use crate::error::{LewisError, Result};

/// Row count times `n²` above which per-row work is spread over the rayon pool.
const PARALLEL_WORK_THRESHOLD: usize = 1 << 20;

/// Sherman-Morrison denominators below this force a fresh factorization.
pub const DOWNDATE_TOLERANCE: f64 = 1e-8;

/// Row-major `m×n` real matrix with `m ≥ n`, finite entries and no zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || rows < cols {
            return Err(LewisError::Dimension { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LewisError::DimensionMismatch(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LewisError::NonFiniteInput { what: "matrix" });
        }
        let m = DenseMatrix { rows, cols, data };
        if let Some(i) = (0..rows).find(|&i| m.row(i).iter().all(|&v| v == 0.0)) {
            return Err(LewisError::ZeroRow(i));
        }
        Ok(m)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(m * n);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n {
                return Err(LewisError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(m, n, data)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(n, n, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `A·R` for an `n×n` row-major `R`.
    pub fn right_multiply(&self, r: &[f64]) -> Result<Self> {
        let n = self.cols;
        if r.len() != n * n {
            return Err(LewisError::DimensionMismatch(format!(
                "right factor must be {n}x{n}"
            )));
        }
        let mut out = vec![0.0; self.rows * n];
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out[i * n..(i + 1) * n];
            for (k, &ak) in a.iter().enumerate() {
                for j in 0..n {
                    o[j] += ak * r[k * n + j];
                }
            }
        }
        Self::new(self.rows, n, out)
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.rows {
            return Err(LewisError::IndexOutOfRange {
                index: i,
                len: self.rows,
            });
        }
        Ok(())
    }
}

/// Which change of variables a weight vector lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// The variable of the convex program `w`.
    Optimizer,
    /// The fixed-point normalization `w̄ = w^{1+α}`, which sums to `n` at the solution.
    Definition,
}

/// Strictly positive, finite weights tagged with their normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    normalization: Normalization,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, normalization: Normalization) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(LewisError::InvalidWeight { index, value });
        }
        Ok(WeightVector {
            values,
            normalization,
        })
    }

    pub fn optimizer(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Normalization::Optimizer)
    }

    pub fn definition(values: Vec<f64>) -> Result<Self> {
        Self::new(values, Normalization::Definition)
    }

    pub fn constant(len: usize, value: f64, normalization: Normalization) -> Result<Self> {
        Self::new(vec![value; len], normalization)
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// How the Gram matrix is factored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorMethod {
    #[default]
    Cholesky,
    /// Householder QR of `W^{1/2}A`; slower but never squares the condition number.
    Qr,
}

/// Inverse of `AᵀWA` with its log-determinant, maintained under rank-one updates.
#[derive(Debug, Clone)]
pub struct SpdState {
    n: usize,
    weights: Vec<f64>,
    /// Lower Cholesky factor, only valid right after a fresh factorization.
    lower: Option<Vec<f64>>,
    /// `L⁻¹`, dropped together with `lower`.
    lower_inverse: Option<Vec<f64>>,
    inverse: Vec<f64>,
    log_det: f64,
    updates: usize,
    period: usize,
    method: FactorMethod,
}

impl SpdState {
    /// Factors `AᵀWA` by Cholesky with a refactorization period of `m` updates.
    pub fn factorize(a: &DenseMatrix, w: &[f64]) -> Result<Self> {
        Self::factorize_with(a, w, FactorMethod::Cholesky, a.rows())
    }

    pub fn factorize_with(
        a: &DenseMatrix,
        w: &[f64],
        method: FactorMethod,
        period: usize,
    ) -> Result<Self> {
        check_weights(a, w)?;
        let n = a.cols();
        let lower = match method {
            FactorMethod::Cholesky => cholesky(&gram(a, w), n)?,
            FactorMethod::Qr => qr_lower(a, w)?,
        };
        let log_det = 2.0 * (0..n).map(|j| lower[j * n + j].ln()).sum::<f64>();
        let linv = invert_lower(&lower, n);
        let inverse = inverse_from_lower_inverse(&linv, n);
        Ok(SpdState {
            n,
            weights: w.to_vec(),
            lower: Some(lower),
            lower_inverse: Some(linv),
            inverse,
            log_det,
            updates: 0,
            period: period.max(1),
            method,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn update_count(&self) -> usize {
        self.updates
    }

    pub fn refactor_period(&self) -> usize {
        self.period
    }

    /// Row-major `(AᵀWA)⁻¹`.
    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    /// Lower Cholesky factor `L` with `LLᵀ = AᵀWA`, present until the first update.
    pub fn lower_factor(&self) -> Option<&[f64]> {
        self.lower.as_deref()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(LewisError::DimensionMismatch(format!(
                "right-hand side has length {}, expected {}",
                b.len(),
                self.n
            )));
        }
        Ok(mat_vec(&self.inverse, b, self.n))
    }

    /// `xᵀ(AᵀWA)⁻¹x`, as `‖L⁻¹x‖²` while a fresh factor is held.
    #[inline]
    pub fn quadform(&self, x: &[f64]) -> f64 {
        let n = self.n;
        if let Some(linv) = &self.lower_inverse {
            let mut acc = 0.0;
            for i in 0..n {
                let row = &linv[i * n..i * n + i + 1];
                let y: f64 = row.iter().zip(x).map(|(l, v)| l * v).sum();
                acc += y * y;
            }
            return acc;
        }
        let mut acc = 0.0;
        for j in 0..n {
            let row = &self.inverse[j * n..(j + 1) * n];
            let xj = x[j];
            let mut off = 0.0;
            for k in (j + 1)..n {
                off += row[k] * x[k];
            }
            acc += xj * (row[j] * xj + 2.0 * off);
        }
        acc
    }

    pub fn row_quadform(&self, a: &DenseMatrix, i: usize) -> Result<f64> {
        a.check_row(i)?;
        if a.cols() != self.n {
            return Err(LewisError::DimensionMismatch(
                "matrix and factorization disagree on column count".into(),
            ));
        }
        Ok(self.quadform(a.row(i)).max(0.0))
    }

    /// `a_iᵀ(AᵀWA)⁻¹a_i` for every row.
    pub fn row_quadforms(&self, a: &DenseMatrix) -> Vec<f64> {
        let work = a.rows() * self.n * self.n;
        if work >= PARALLEL_WORK_THRESHOLD {
            (0..a.rows())
                .into_par_iter()
                .map(|i| self.quadform(a.row(i)).max(0.0))
                .collect()
        } else {
            (0..a.rows())
                .map(|i| self.quadform(a.row(i)).max(0.0))
                .collect()
        }
    }

    /// Adds `delta·a_i a_iᵀ` to the Gram matrix (weight `w_i ← w_i + delta`).
    ///
    /// Refactors from scratch once the update counter reaches the period.
    pub fn rank_one_update(mut self, a: &DenseMatrix, i: usize, delta: f64) -> Result<Self> {
        a.check_row(i)?;
        if !delta.is_finite() {
            return Err(LewisError::NonFiniteInput {
                what: "rank-one increment",
            });
        }
        let new_weight = self.weights[i] + delta;
        if !(new_weight > 0.0 && new_weight.is_finite()) {
            return Err(LewisError::InvalidWeight {
                index: i,
                value: new_weight,
            });
        }
        if delta == 0.0 {
            return Ok(self);
        }
        let n = self.n;
        let ai = a.row(i);
        let u = mat_vec(&self.inverse, ai, n);
        let q: f64 = ai.iter().zip(&u).map(|(x, y)| x * y).sum();
        let denominator = 1.0 + delta * q;
        if !(denominator > DOWNDATE_TOLERANCE) {
            return Err(LewisError::DowndateSingular { denominator });
        }
        self.weights[i] = new_weight;
        self.updates += 1;
        if self.updates >= self.period {
            return Self::factorize_with(a, &self.weights, self.method, self.period);
        }
        let scale = delta / denominator;
        for j in 0..n {
            let uj = scale * u[j];
            let row = &mut self.inverse[j * n..(j + 1) * n];
            for k in 0..n {
                row[k] -= uj * u[k];
            }
        }
        self.log_det += denominator.ln();
        self.lower = None;
        self.lower_inverse = None;
        Ok(self)
    }
}

fn check_weights(a: &DenseMatrix, w: &[f64]) -> Result<()> {
    if w.len() != a.rows() {
        return Err(LewisError::DimensionMismatch(format!(
            "{} weights for {} rows",
            w.len(),
            a.rows()
        )));
    }
    if let Some((index, &value)) = w
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v > 0.0))
    {
        if !value.is_finite() {
            return Err(LewisError::NonFiniteInput { what: "weights" });
        }
        return Err(LewisError::InvalidWeight { index, value });
    }
    Ok(())
}

/// Upper triangle and mirror of `Σ w_i a_i a_iᵀ`, row-major.
pub fn gram(a: &DenseMatrix, w: &[f64]) -> Vec<f64> {
    let n = a.cols();
    let mut g = vec![0.0; n * n];
    for (i, &wi) in w.iter().enumerate() {
        let r = a.row(i);
        for j in 0..n {
            let s = wi * r[j];
            let gj = &mut g[j * n..(j + 1) * n];
            for k in j..n {
                gj[k] += s * r[k];
            }
        }
    }
    for j in 0..n {
        for k in 0..j {
            g[j * n + k] = g[k * n + j];
        }
    }
    g
}

/// Cholesky factor of a symmetric row-major matrix.
///
/// A pivot at or below `n·eps·max diag` is treated as rank deficiency.
pub fn cholesky(g: &[f64], n: usize) -> Result<Vec<f64>> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(LewisError::NonFiniteInput {
            what: "Gram matrix",
        });
    }
    let max_diag = (0..n).map(|j| g[j * n + j]).fold(0.0_f64, f64::max);
    let threshold = n as f64 * f64::EPSILON * max_diag;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = g[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > threshold) {
            return Err(LewisError::NotPositiveDefinite {
                column: j,
                pivot: d,
                threshold,
            });
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// `Rᵀ` from a Householder QR of `W^{1/2}A`, signs flipped so the diagonal is positive.
fn qr_lower(a: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.rows(), a.cols());
    // column-major copy of W^{1/2}A
    let mut b = vec![0.0; m * n];
    for i in 0..m {
        let s = w[i].sqrt();
        for j in 0..n {
            b[j * m + i] = s * a.row(i)[j];
        }
    }
    let max_diag = (0..n)
        .map(|j| b[j * m..(j + 1) * m].iter().map(|v| v * v).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let threshold = n as f64 * f64::EPSILON * max_diag;
    for j in 0..n {
        let col = &b[j * m + j..(j + 1) * m];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[0] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = col.to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for k in j..n {
            let c = &mut b[k * m + j..(k + 1) * m];
            let dot: f64 = v.iter().zip(c.iter()).map(|(x, y)| x * y).sum();
            let f = 2.0 * dot / vnorm2;
            for (ci, vi) in c.iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        }
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let sign = if b[j * m + j] < 0.0 { -1.0 } else { 1.0 };
        for k in j..n {
            // R[j][k] = b[k*m + j]; L = Rᵀ
            l[k * n + j] = sign * b[k * m + j];
        }
        let pivot = l[j * n + j] * l[j * n + j];
        if !(pivot > threshold) {
            return Err(LewisError::NotPositiveDefinite {
                column: j,
                pivot,
                threshold,
            });
        }
    }
    Ok(l)
}

fn invert_lower(l: &[f64], n: usize) -> Vec<f64> {
    let mut linv = vec![0.0; n * n];
    for j in 0..n {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = s / l[i * n + i];
        }
    }
    linv
}

/// `(LLᵀ)⁻¹ = L⁻ᵀL⁻¹` from `L⁻¹`.
fn inverse_from_lower_inverse(linv: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in j..n {
                s += linv[k * n + i] * linv[k * n + j];
            }
            inv[i * n + j] = s;
            inv[j * n + i] = s;
        }
    }
    inv
}

/// Solves `Lᵀx = b` for lower-triangular `L`.
pub fn solve_upper_transposed(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

fn mat_vec(m: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| m[j * n..(j + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `spd_factorize` for a tagged weight vector.
pub fn spd_factorize(a: &DenseMatrix, w: &WeightVector) -> Result<SpdState> {
    SpdState::factorize(a, w.as_slice())
}

/// `σ_i(w) = w_i a_iᵀ(AᵀWA)⁻¹a_i`, factored by QR so that scores of
/// nearly square inputs stay within `[0, 1]` to rounding.
pub fn leverage_scores(a: &DenseMatrix, w: &WeightVector) -> Result<Vec<f64>> {
    leverage_scores_raw(a, w.as_slice())
}

pub(crate) fn leverage_scores_raw(a: &DenseMatrix, w: &[f64]) -> Result<Vec<f64>> {
    let state = SpdState::factorize_with(a, w, FactorMethod::Qr, a.rows())?;
    Ok(state
        .row_quadforms(a)
        .into_iter()
        .zip(w)
        .map(|(q, wi)| q * wi)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn triangle() -> DenseMatrix {
        DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap()
    }

    fn ones(m: usize) -> Vec<f64> {
        vec![1.0; m]
    }

    #[test]
    fn identity_solve() {
        let a = DenseMatrix::identity(2).unwrap();
        let s = SpdState::factorize(&a, &ones(2)).unwrap();
        assert_eq!(s.solve(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn triangle_solve_uses_explicit_inverse() {
        let s = SpdState::factorize(&triangle(), &ones(3)).unwrap();
        let x = s.solve(&[1.0, 1.0]).unwrap();
        assert_relative_eq!(x[0], 1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        for method in [FactorMethod::Cholesky, FactorMethod::Qr] {
            let err = SpdState::factorize_with(&a, &ones(2), method, 2).unwrap_err();
            assert!(matches!(err, LewisError::NotPositiveDefinite { .. }), "{err:?}");
        }
    }

    #[test]
    fn nonfinite_weights_rejected() {
        let a = DenseMatrix::identity(2).unwrap();
        let err = SpdState::factorize(&a, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, LewisError::NonFiniteInput { .. }));
        assert!(DenseMatrix::new(2, 2, vec![1.0, f64::INFINITY, 0.0, 1.0]).is_err());
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, 2.0]),
            Err(LewisError::Dimension { rows: 1, cols: 2 })
        ));
        assert!(matches!(
            DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]]),
            Err(LewisError::ZeroRow(1))
        ));
    }

    #[test]
    fn row_quadform_examples() {
        let a = DenseMatrix::identity(2).unwrap();
        let s = SpdState::factorize(&a, &[3.0, 5.0]).unwrap();
        assert_relative_eq!(s.row_quadform(&a, 0).unwrap(), 1.0 / 3.0, max_relative = 1e-15);

        let col = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let s = SpdState::factorize(&col, &ones(2)).unwrap();
        assert_relative_eq!(s.row_quadform(&col, 0).unwrap(), 0.5, max_relative = 1e-15);

        let t = triangle();
        let s = SpdState::factorize(&t, &ones(3)).unwrap();
        assert_relative_eq!(s.row_quadform(&t, 2).unwrap(), 2.0 / 3.0, max_relative = 1e-14);
        assert!(matches!(
            s.row_quadform(&t, 3),
            Err(LewisError::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn leverage_score_examples() {
        let a = DenseMatrix::identity(2).unwrap();
        let w = WeightVector::optimizer(vec![3.0, 5.0]).unwrap();
        let s = leverage_scores(&a, &w).unwrap();
        assert_relative_eq!(s[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(s[1], 1.0, max_relative = 1e-15);

        let col = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let s = leverage_scores(&col, &WeightVector::optimizer(ones(2)).unwrap()).unwrap();
        for v in &s {
            assert_relative_eq!(*v, 0.5, max_relative = 1e-15);
        }

        let s = leverage_scores(&triangle(), &WeightVector::optimizer(ones(3)).unwrap()).unwrap();
        for v in &s {
            assert_relative_eq!(*v, 2.0 / 3.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn qr_and_cholesky_agree() {
        let a = DenseMatrix::from_rows(&[
            [1.0, 2.0, 0.5],
            [0.3, -1.0, 2.0],
            [4.0, 0.0, 1.0],
            [-1.0, 1.0, 1.0],
            [0.2, 0.1, -0.7],
        ])
        .unwrap();
        let w = [0.5, 2.0, 1.5, 0.1, 3.0];
        let c = SpdState::factorize_with(&a, &w, FactorMethod::Cholesky, 5).unwrap();
        let q = SpdState::factorize_with(&a, &w, FactorMethod::Qr, 5).unwrap();
        assert_relative_eq!(c.log_det(), q.log_det(), max_relative = 1e-12);
        for (x, y) in c.inverse().iter().zip(q.inverse()) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_update_is_identity() {
        let t = triangle();
        let s = SpdState::factorize(&t, &ones(3)).unwrap();
        let before = s.row_quadforms(&t);
        let s = s.rank_one_update(&t, 1, 0.0).unwrap();
        assert_eq!(s.row_quadforms(&t), before);
        assert_eq!(s.update_count(), 0);
    }

    #[test]
    fn update_on_duplicated_column() {
        let col = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let s = SpdState::factorize(&col, &ones(2)).unwrap();
        let s = s.rank_one_update(&col, 1, 1.0).unwrap();
        assert_relative_eq!(s.row_quadform(&col, 0).unwrap(), 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn singular_downdate_reported() {
        let col = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let s = SpdState::factorize(&col, &[1.0, 1.0]).unwrap();
        // nearly all of the Gram mass sits on row 0; removing it leaves ~1e-10
        let lopsided = DenseMatrix::from_rows(&[[1.0], [1e-5]]).unwrap();
        let s2 = SpdState::factorize(&lopsided, &[1.0, 1.0]).unwrap();
        let err = s2.rank_one_update(&lopsided, 0, -(1.0 - 1e-12)).unwrap_err();
        assert!(matches!(err, LewisError::DowndateSingular { .. }), "{err:?}");
        assert!(matches!(
            s.rank_one_update(&col, 0, -2.0),
            Err(LewisError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn periodic_refactorization() {
        let t = triangle();
        let s = SpdState::factorize_with(&t, &ones(3), FactorMethod::Cholesky, 2).unwrap();
        let s = s.rank_one_update(&t, 0, 0.5).unwrap();
        assert_eq!(s.update_count(), 1);
        assert!(s.lower_factor().is_none());
        let s = s.rank_one_update(&t, 1, 0.5).unwrap();
        assert_eq!(s.update_count(), 0);
        assert!(s.lower_factor().is_some());
        assert_eq!(s.weights(), &[1.5, 1.5, 1.0]);
    }
}
