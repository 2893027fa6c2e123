//! Multiplicative descent, the rounding condition `ρ_max ≤ 1+α`, and the two
//! rounding procedures (parallel passes and sequential exact coordinate steps).

use crate::error::{LewisError, Result};
use crate::linalg::{DenseMatrix, FactorMethod, SpdState, WeightVector};
use crate::objective::{AlphaParams, Evaluation, RhoVector};

/// Relative slack on `1+α` when testing the rounding condition.
pub const ROUNDING_SLACK: f64 = 1e-12;

/// Coordinates with `ρ_i ≥ 1 − MEMBERSHIP_SLACK` join the sequential rounding set.
pub const MEMBERSHIP_SLACK: f64 = 1e-14;

/// Multiplier applied to every proved iteration bound before it becomes a hard cap.
pub const CAP_FACTOR: f64 = 10.0;

/// Per-coordinate Descent step sizes, each in `[0, 1/(3ᾱ)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    values: Vec<f64>,
}

impl StepSizes {
    pub fn new(values: Vec<f64>, params: &AlphaParams) -> Result<Self> {
        let bound = params.max_step();
        for (index, &value) in values.iter().enumerate() {
            if !(value >= 0.0 && value <= bound) {
                return Err(LewisError::InvalidStepSize {
                    index,
                    value,
                    bound,
                });
            }
        }
        Ok(StepSizes { values })
    }

    /// Every coordinate at `1/(3ᾱ)`.
    pub fn full(len: usize, params: &AlphaParams) -> Self {
        StepSizes {
            values: vec![params.max_step(); len],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// `w_i ← w_i[1 + η_i(ρ_i−1)/(ρ_i+1)]` for `i ∈ C`; other coordinates are copied.
pub fn descent_step(
    w: &WeightVector,
    rho: &RhoVector,
    coords: &[usize],
    eta: &StepSizes,
) -> Result<WeightVector> {
    let m = w.len();
    if rho.len() != m || eta.as_slice().len() != m {
        return Err(LewisError::DimensionMismatch(
            "weights, rho and step sizes must have equal length".into(),
        ));
    }
    let mut out = w.as_slice().to_vec();
    for &i in coords {
        if i >= m {
            return Err(LewisError::IndexOutOfRange { index: i, len: m });
        }
        out[i] = descend_coordinate(out[i], rho.as_slice()[i], eta.as_slice()[i]);
    }
    WeightVector::new(out, w.normalization())
}

#[inline]
pub(crate) fn descend_coordinate(w: f64, rho: f64, eta: f64) -> f64 {
    w * (1.0 + eta * (rho - 1.0) / (rho + 1.0))
}

/// `ρ_max ≤ (1+α)(1 + 1e−12)`.
pub fn rounding_condition(rho: &RhoVector, params: &AlphaParams) -> bool {
    rho_within_rounding(rho.max(), params)
}

#[inline]
pub(crate) fn rho_within_rounding(rho_max: f64, params: &AlphaParams) -> bool {
    rho_max <= (1.0 + params.alpha()) * (1.0 + ROUNDING_SLACK)
}

/// Objective, `ρ_max` and optimality residual at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSummary {
    pub objective: f64,
    pub rho_max: f64,
    pub optimality_residual: f64,
}

impl PointSummary {
    pub fn of(ev: &Evaluation) -> Self {
        PointSummary {
            objective: ev.objective,
            rho_max: ev.rho.max(),
            optimality_residual: ev.optimality_residual(),
        }
    }
}

/// Result of a parallel rounding call.
#[derive(Debug, Clone)]
pub struct ParallelRound {
    pub weights: Vec<f64>,
    pub passes: usize,
    /// Entry `k` describes the iterate after `k` passes; entry 0 is the input.
    pub history: Vec<PointSummary>,
    /// Evaluation at the returned weights.
    pub last: Evaluation,
}

/// Upper bound on while-passes implied by the per-pass contraction of `ρ_max`
/// by `(1 + α/(3ᾱ(2+α)))^α`.
pub fn parallel_pass_bound(rho_max: f64, params: &AlphaParams) -> f64 {
    let a = params.alpha();
    let target = 1.0 + a;
    if rho_max <= target {
        return 0.0;
    }
    let per_pass = a * (1.0 + a / (3.0 * params.alpha_bar() * (2.0 + a))).ln();
    ((rho_max / target).ln() / per_pass).ceil()
}

/// Parallel rounding starting from an existing evaluation.
pub fn round_parallel_from(
    a: &DenseMatrix,
    start: Evaluation,
    params: &AlphaParams,
    method: FactorMethod,
    cap_scale: f64,
) -> Result<ParallelRound> {
    let bound = parallel_pass_bound(start.rho.max(), params);
    let cap = (CAP_FACTOR * cap_scale * (bound + 1.0)).ceil() as usize;
    let mut w = start.state.weights().to_vec();
    let mut history = vec![PointSummary::of(&start)];
    let mut ev = start;
    let threshold = 1.0 + params.alpha();
    let step = params.max_step();
    let mut passes = 0;
    loop {
        let rho = ev.rho.as_slice();
        let mut any = false;
        for (wi, &r) in w.iter_mut().zip(rho) {
            if r > threshold {
                any = true;
                *wi = descend_coordinate(*wi, r, step);
            }
        }
        if !any {
            break;
        }
        passes += 1;
        if passes > cap {
            return Err(LewisError::IterationCapExceeded {
                what: "parallel rounding",
                cap,
            });
        }
        ev = Evaluation::with_method(a, &w, params, method)?;
        history.push(PointSummary::of(&ev));
    }
    Ok(ParallelRound {
        weights: w,
        passes,
        history,
        last: ev,
    })
}

/// Repeats Descent on `C = {i : ρ_i > 1+α}` with step `1/(3ᾱ)` until `C` is empty.
pub fn round_parallel(
    a: &DenseMatrix,
    w: &WeightVector,
    params: &AlphaParams,
) -> Result<WeightVector> {
    let ev = Evaluation::new(a, w.as_slice(), params)?;
    let out = round_parallel_from(a, ev, params, FactorMethod::Cholesky, 1.0)?;
    WeightVector::new(out.weights, w.normalization())
}

/// Solves `(1+δσ)(1+δ)^α = ρ` for `δ ≥ 0`.
///
/// `α = 1` uses the stable root of `σδ² + (1+σ)δ + 1 − ρ = 0`; otherwise
/// Newton on `ln(1+δσ) + α ln(1+δ) − ln ρ` (concave and increasing, so Newton
/// from `δ = 0` approaches the root from below) with bisection on
/// `[0, ρ^{1/α} − 1]` as a fallback.
pub fn solve_coordinate_delta(rho: f64, sigma: f64, params: &AlphaParams) -> Result<f64> {
    if !(rho.is_finite() && sigma.is_finite()) || sigma <= 0.0 || sigma > 1.0 + 1e-9 {
        return Err(LewisError::DomainError(format!(
            "coordinate step needs finite rho and sigma in (0, 1], got rho={rho}, sigma={sigma}"
        )));
    }
    if rho < 1.0 - MEMBERSHIP_SLACK {
        return Err(LewisError::DomainError(format!(
            "coordinate step needs rho >= 1, got {rho}"
        )));
    }
    if rho <= 1.0 {
        return Ok(0.0);
    }
    let alpha = params.alpha();
    let residual = |d: f64| (1.0 + d * sigma) * (1.0 + d).powf(alpha) - rho;
    let accept = |d: f64| residual(d).abs() <= 1e-12 * rho;

    if alpha == 1.0 {
        let b = 1.0 + sigma;
        let d = 2.0 * (rho - 1.0) / (b + (b * b + 4.0 * sigma * (rho - 1.0)).sqrt());
        if accept(d) {
            return Ok(d);
        }
    }

    let log_rho = rho.ln();
    let h = |d: f64| (d * sigma).ln_1p() + alpha * d.ln_1p() - log_rho;
    let dh = |d: f64| sigma / (1.0 + d * sigma) + alpha / (1.0 + d);
    let mut lo = 0.0_f64;
    let mut hi = (rho.ln() / alpha).exp_m1().min(f64::MAX);
    if !(h(hi) >= 0.0) {
        return Err(LewisError::BracketFailure { rho, sigma });
    }
    let mut d = 0.0_f64;
    for _ in 0..200 {
        let hv = h(d);
        if hv == 0.0 {
            break;
        }
        if hv < 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let mut next = d - hv / dh(d);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - d).abs() <= 4.0 * f64::EPSILON * next.abs().max(f64::MIN_POSITIVE) {
            d = next;
            break;
        }
        d = next;
    }
    if accept(d) {
        Ok(d)
    } else {
        Err(LewisError::BracketFailure { rho, sigma })
    }
}

/// Exact change `F(w + δw_i e_i) − F(w) = −ln(1+δσ_i) + (w_i^{1+α}/(1+α))((1+δ)^{1+α} − 1)`.
pub fn coordinate_objective_delta(
    w_i: f64,
    sigma_i: f64,
    delta: f64,
    params: &AlphaParams,
) -> Result<f64> {
    if !(1.0 + delta * sigma_i > 0.0) || !(1.0 + delta > 0.0) || !(w_i > 0.0) {
        return Err(LewisError::DomainError(format!(
            "coordinate step leaves the domain (w={w_i}, sigma={sigma_i}, delta={delta})"
        )));
    }
    let a1 = 1.0 + params.alpha();
    Ok(-(delta * sigma_i).ln_1p() + params.pow_one_plus_alpha(w_i) / a1 * (a1 * delta.ln_1p()).exp_m1())
}

/// One exact coordinate minimization performed by sequential rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateStep {
    pub index: usize,
    pub rho_before: f64,
    pub sigma_before: f64,
    pub delta: f64,
    pub weight_after: f64,
    pub objective_change: f64,
}

/// Sequential rounding as a resumable sweep over `C = {i : ρ_i ≥ 1}`.
///
/// `C` and the processing order (descending `ρ`) are fixed when the sweep is
/// created. Each step re-reads `σ_i` and `ρ_i` from the running inverse;
/// a coordinate whose current `ρ_i` has already fallen below one is skipped.
pub struct SequentialRound<'a> {
    a: &'a DenseMatrix,
    params: AlphaParams,
    method: FactorMethod,
    w: Vec<f64>,
    state: Option<SpdState>,
    order: Vec<usize>,
    next: usize,
    skipped: usize,
    refactorizations: usize,
}

impl<'a> SequentialRound<'a> {
    pub fn new(
        a: &'a DenseMatrix,
        w: &[f64],
        params: &AlphaParams,
        method: FactorMethod,
    ) -> Result<Self> {
        let ev = Evaluation::with_method(a, w, params, method)?;
        Ok(Self::from_evaluation(a, ev, params, method))
    }

    pub fn from_evaluation(
        a: &'a DenseMatrix,
        ev: Evaluation,
        params: &AlphaParams,
        method: FactorMethod,
    ) -> Self {
        let rho = ev.rho.as_slice();
        let mut order: Vec<usize> = (0..rho.len())
            .filter(|&i| rho[i] >= 1.0 - MEMBERSHIP_SLACK)
            .collect();
        order.sort_by(|&i, &j| rho[j].total_cmp(&rho[i]).then(i.cmp(&j)));
        SequentialRound {
            a,
            params: *params,
            method,
            w: ev.state.weights().to_vec(),
            state: Some(ev.state),
            order,
            next: 0,
            skipped: 0,
            refactorizations: 0,
        }
    }

    /// Indices in the rounding set, in processing order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// Processes the next coordinate of the set; `None` once the sweep is done.
    pub fn step(&mut self) -> Result<Option<CoordinateStep>> {
        while self.next < self.order.len() {
            let i = self.order[self.next];
            self.next += 1;
            let state = self.state.as_ref().expect("state present between steps");
            let wi = self.w[i];
            let q = state.quadform(self.a.row(i)).max(0.0);
            let sigma = wi * q;
            let rho = q / self.params.pow_alpha(wi);
            if rho < 1.0 {
                self.skipped += 1;
                continue;
            }
            let delta = solve_coordinate_delta(rho, sigma.min(1.0), &self.params)?;
            let objective_change = coordinate_objective_delta(wi, sigma, delta, &self.params)?;
            let increment = delta * wi;
            let new_weight = wi + increment;
            let state = self.state.take().expect("state present between steps");
            let updated = match state.clone().rank_one_update(self.a, i, increment) {
                Ok(s) => s,
                Err(LewisError::DowndateSingular { .. }) => {
                    let mut w = state.weights().to_vec();
                    w[i] = new_weight;
                    self.refactorizations += 1;
                    SpdState::factorize_with(self.a, &w, self.method, state.refactor_period())?
                }
                Err(e) => return Err(e),
            };
            self.state = Some(updated);
            self.w[i] = new_weight;
            return Ok(Some(CoordinateStep {
                index: i,
                rho_before: rho,
                sigma_before: sigma,
                delta,
                weight_after: new_weight,
                objective_change,
            }));
        }
        Ok(None)
    }

    /// Runs the remaining sweep and returns the weights and every step taken.
    pub fn finish(mut self) -> Result<SequentialOutcome> {
        let mut steps = Vec::new();
        while let Some(s) = self.step()? {
            steps.push(s);
        }
        Ok(SequentialOutcome {
            weights: self.w,
            steps,
            skipped: self.skipped,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    pub weights: Vec<f64>,
    pub steps: Vec<CoordinateStep>,
    pub skipped: usize,
}

/// Exact coordinate minimization over every `i` with `ρ_i ≥ 1`, largest `ρ` first.
pub fn round_sequential(
    a: &DenseMatrix,
    w: &WeightVector,
    params: &AlphaParams,
) -> Result<WeightVector> {
    let out = SequentialRound::new(a, w.as_slice(), params, FactorMethod::Cholesky)?.finish()?;
    WeightVector::new(out.weights, w.normalization())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{objective_value, rho};
    use approx::assert_relative_eq;

    fn p4() -> AlphaParams {
        AlphaParams::new(4.0).unwrap()
    }

    fn triangle() -> DenseMatrix {
        DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap()
    }

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::optimizer(v.to_vec()).unwrap()
    }

    #[test]
    fn step_size_validation() {
        let p = p4();
        assert!(StepSizes::new(vec![0.0, 1.0 / 3.0], &p).is_ok());
        assert!(matches!(
            StepSizes::new(vec![0.4], &p),
            Err(LewisError::InvalidStepSize { index: 0, .. })
        ));
        assert!(StepSizes::new(vec![-1e-3], &p).is_err());
        let p3 = AlphaParams::new(3.0).unwrap();
        assert!(StepSizes::new(vec![0.2], &p3).is_err());
    }

    #[test]
    fn descent_fixed_point_and_mask() {
        let p = p4();
        let w = wv(&[0.3, 0.7]);
        let ones = RhoVector::new(vec![1.0, 1.0]).unwrap();
        let out = descent_step(&w, &ones, &[0, 1], &StepSizes::full(2, &p)).unwrap();
        assert_eq!(out, w);

        let a = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let w = wv(&[1.0, 1.0]);
        let r = rho(&a, &w, &p).unwrap();
        let out = descent_step(&w, &r, &[0, 1], &StepSizes::full(2, &p)).unwrap();
        assert_relative_eq!(out.as_slice()[0], 8.0 / 9.0, max_relative = 1e-15);
        assert_relative_eq!(out.as_slice()[1], 8.0 / 9.0, max_relative = 1e-15);
        let out = descent_step(&w, &r, &[0], &StepSizes::full(2, &p)).unwrap();
        assert_eq!(out.as_slice()[1], 1.0);
    }

    #[test]
    fn rounding_condition_boundaries() {
        let p = p4();
        let r = |v: &[f64]| RhoVector::new(v.to_vec()).unwrap();
        assert!(rounding_condition(&r(&[1.0, 1.0]), &p));
        assert!(rounding_condition(&r(&[2.0, 0.1]), &p));
        assert!(!rounding_condition(&r(&[2.5, 0.1]), &p));
    }

    #[test]
    fn round_parallel_noop_when_rounded() {
        let a = DenseMatrix::identity(3).unwrap();
        let w = wv(&[1.0, 1.0, 1.0]);
        assert_eq!(round_parallel(&a, &w, &p4()).unwrap(), w);
    }

    #[test]
    fn round_parallel_triangle() {
        let a = triangle();
        let p = p4();
        let w = wv(&[0.01; 3]);
        let before = objective_value(&a, &w, &p).unwrap();
        let ev = Evaluation::new(&a, w.as_slice(), &p).unwrap();
        assert!(ev.rho.max() > 100.0);
        let out = round_parallel_from(&a, ev, &p, FactorMethod::Cholesky, 1.0).unwrap();
        let w_out = wv(&out.weights);
        let r = rho(&a, &w_out, &p).unwrap();
        assert!(rounding_condition(&r, &p));
        assert!(objective_value(&a, &w_out, &p).unwrap() <= before);
        assert!(out.weights.iter().zip(w.as_slice()).all(|(x, y)| x >= y));
        // ρ_max contracts by the proved factor on every pass
        let factor = 1.0 / (1.0 + 1.0 / (3.0 * 3.0));
        for pair in out.history.windows(2) {
            assert!(pair[1].rho_max <= factor * pair[0].rho_max * (1.0 + 1e-12));
            assert!(pair[1].objective <= pair[0].objective);
        }
        assert!(out.passes as f64 <= parallel_pass_bound(out.history[0].rho_max, &p));
    }

    #[test]
    fn delta_closed_form() {
        let d = solve_coordinate_delta(2.0, 0.5, &p4()).unwrap();
        assert_relative_eq!(d, -1.5 + 4.25f64.sqrt(), max_relative = 1e-14);
        assert_eq!(solve_coordinate_delta(1.0, 0.3, &p4()).unwrap(), 0.0);
        let p6 = AlphaParams::new(6.0).unwrap();
        assert_eq!(solve_coordinate_delta(1.0, 0.9, &p6).unwrap(), 0.0);
    }

    #[test]
    fn delta_against_bisection() {
        // α = 0.5 ⇔ p = 6
        let p = AlphaParams::new(6.0).unwrap();
        let (rho, sigma) = (3.0_f64, 0.9_f64);
        let d = solve_coordinate_delta(rho, sigma, &p).unwrap();
        let g = |x: f64| (1.0 + sigma * x) * (1.0 + x).sqrt() - rho;
        let (mut lo, mut hi) = (0.0, rho.powf(2.0) - 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_relative_eq!(d, 0.5 * (lo + hi), max_relative = 1e-12);
        assert!(g(d).abs() <= 1e-12 * rho);
    }

    #[test]
    fn delta_rejects_bad_input() {
        let p = p4();
        assert!(solve_coordinate_delta(0.5, 0.5, &p).is_err());
        assert!(solve_coordinate_delta(2.0, 0.0, &p).is_err());
        assert!(solve_coordinate_delta(f64::NAN, 0.5, &p).is_err());
    }

    #[test]
    fn coordinate_delta_examples() {
        let p = p4();
        assert_eq!(coordinate_objective_delta(0.7, 0.4, 0.0, &p).unwrap(), 0.0);
        let a = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let base = objective_value(&a, &wv(&[1.0, 1.0]), &p).unwrap();
        let moved = objective_value(&a, &wv(&[2.0, 1.0]), &p).unwrap();
        let d = coordinate_objective_delta(1.0, 0.5, 1.0, &p).unwrap();
        assert!((d - (moved - base)).abs() <= 1e-10);
        assert_relative_eq!(d, -(1.5f64).ln() + 1.5, max_relative = 1e-14);
        assert!(coordinate_objective_delta(1.0, 0.5, -2.0, &p).is_err());
    }

    #[test]
    fn round_sequential_noop_below_one() {
        let a = triangle();
        let p = p4();
        // ρ = 1.5·(2/3)/w^2... pick w large so every ρ < 1
        let w = wv(&[2.0, 2.0, 2.0]);
        let r = rho(&a, &w, &p).unwrap();
        assert!(r.max() < 1.0);
        assert_eq!(round_sequential(&a, &w, &p).unwrap(), w);
    }

    #[test]
    fn round_sequential_triangle() {
        let a = triangle();
        let p = p4();
        let w = wv(&[0.1; 3]);
        let mut sweep = SequentialRound::new(&a, w.as_slice(), &p, FactorMethod::Cholesky).unwrap();
        let mut processed = Vec::new();
        while let Some(step) = sweep.step().unwrap() {
            let fresh = rho(&a, &wv(sweep.weights()), &p).unwrap();
            assert!(fresh.as_slice()[step.index] <= 1.0 + 1e-9);
            assert!(step.objective_change <= 0.0);
            processed.push(step.index);
        }
        assert!(!processed.is_empty());
        let out = wv(sweep.weights());
        assert!(rho(&a, &out, &p).unwrap().max() <= 2.0);
    }

    #[test]
    fn round_sequential_single_violation() {
        // Rows 0 and 1 are heavy; row 2 is light and has the only ρ ≥ 1.
        let a = triangle();
        let p = p4();
        let w = wv(&[2.0, 2.0, 0.1]);
        let r = rho(&a, &w, &p).unwrap();
        assert!(r.as_slice()[2] >= 1.0 && r.as_slice()[0] < 1.0 && r.as_slice()[1] < 1.0);
        let out = round_sequential(&a, &w, &p).unwrap();
        assert_eq!(out.as_slice()[0].to_bits(), 2f64.to_bits());
        assert_eq!(out.as_slice()[1].to_bits(), 2f64.to_bits());
        assert!(out.as_slice()[2] > 0.1);
    }
}
