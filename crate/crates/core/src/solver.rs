//! End-to-end solvers: the meta-algorithm with parallel or sequential
//! rounding, the one-step variant, and the Cohen-Peng fixed-point iteration
//! used as a baseline for `p ∈ (2, 4)`.

use std::fmt;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{LewisError, Result};
use crate::linalg::{DenseMatrix, FactorMethod, Normalization, SpdState, WeightVector};
use crate::objective::{AlphaParams, Evaluation};
use crate::steps::{
    descend_coordinate, rho_within_rounding, round_parallel_from, PointSummary, SequentialRound,
    CAP_FACTOR,
};
use crate::verify::{certified_log_error, lewis_residual, residual_report, ResidualReport};

/// Default constant in front of the iteration budget.
pub const DEFAULT_K: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Parallel,
    Sequential,
    OneStep,
    CohenPeng,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Parallel => "parallel",
            Variant::Sequential => "sequential",
            Variant::OneStep => "one_step",
            Variant::CohenPeng => "cohen_peng",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one solver run. Derived fields are recomputed by every setter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub p: f64,
    pub eps: f64,
    pub variant: Variant,
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    pub alpha_bar: f64,
    /// Additive objective tolerance.
    pub eps_tilde: f64,
    /// Outer iteration budget.
    pub t_total: usize,
    /// Small one-step step factor.
    pub beta: f64,
    pub k: f64,
    /// Multiplies every hard iteration cap (not `t_total`).
    pub max_iters_scale: f64,
    /// Early stop once `‖σ − w^{1+α}‖∞` falls to this value on a rounded iterate.
    pub stop_threshold: f64,
    /// Abort with `TimeLimitExceeded` once a run has taken this long.
    #[serde(skip)]
    pub time_limit: Option<Duration>,
    /// Also stop once the extracted weights carry a proven `ε` error bound.
    pub certified_stop: bool,
    #[serde(skip)]
    pub factor_method: FactorMethod,
    #[serde(skip)]
    eps_tilde_override: Option<f64>,
    #[serde(skip)]
    stop_override: Option<f64>,
}

impl SolverConfig {
    /// Derives `α, ᾱ, ε̃, T_total, β` for a problem of size `m × n`.
    pub fn schedule(p: f64, m: usize, n: usize, eps: f64, variant: Variant) -> Result<Self> {
        let params = AlphaParams::new(p)?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(LewisError::DomainError(format!("eps must lie in (0, 1), got {eps}")));
        }
        if n == 0 || m < n {
            return Err(LewisError::Dimension { rows: m, cols: n });
        }
        if variant == Variant::CohenPeng && p >= 4.0 {
            return Err(LewisError::UnsupportedP {
                p,
                reason: "the fixed-point iteration contracts only for p in (2, 4)",
            });
        }
        let mut cfg = SolverConfig {
            p,
            eps,
            variant,
            m,
            n,
            alpha: params.alpha(),
            alpha_bar: params.alpha_bar(),
            eps_tilde: 0.0,
            t_total: 0,
            beta: params.alpha().powi(2).min(1.0) / 1000.0,
            k: DEFAULT_K,
            max_iters_scale: 1.0,
            stop_threshold: 0.0,
            certified_stop: variant == Variant::OneStep,
            time_limit: None,
            factor_method: FactorMethod::Cholesky,
            eps_tilde_override: None,
            stop_override: None,
        };
        cfg.derive();
        Ok(cfg)
    }

    /// `α⁸ε⁴ / (25m(√n+α)(α+α⁻¹))⁴`
    pub fn default_eps_tilde(alpha: f64, m: usize, n: usize, eps: f64) -> f64 {
        let denom = 25.0 * m as f64 * ((n as f64).sqrt() + alpha) * (alpha + 1.0 / alpha);
        alpha.powi(8) * eps.powi(4) / denom.powi(4)
    }

    fn derive(&mut self) {
        let a = self.alpha;
        self.eps_tilde = self
            .eps_tilde_override
            .unwrap_or_else(|| Self::default_eps_tilde(a, self.m, self.n, self.eps));
        let m = self.m as f64;
        let budget = match self.variant {
            Variant::OneStep => {
                // the one-step contraction is slower by the factor β = min(α², 1)/1000
                let log = (m * self.p / self.eps_tilde).ln();
                if a <= 1.0 {
                    1000.0 * self.k * a.powi(-3) * log
                } else {
                    1000.0 * self.k * a * a * log
                }
            }
            _ => self.k * a.max(1.0 / a) * (m / self.eps_tilde).ln(),
        };
        self.t_total = budget.ceil().max(1.0) as usize;
        self.stop_threshold = self.stop_override.unwrap_or(self.eps_tilde.sqrt() / 4.0);
    }

    pub fn params(&self) -> AlphaParams {
        AlphaParams::new(self.p).expect("validated at construction")
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self.derive();
        self
    }

    pub fn with_eps_tilde(mut self, eps_tilde: f64) -> Self {
        self.eps_tilde_override = Some(eps_tilde);
        self.derive();
        self
    }

    pub fn with_stop_threshold(mut self, threshold: f64) -> Self {
        self.stop_override = Some(threshold);
        self.derive();
        self
    }

    pub fn with_max_iters_scale(mut self, scale: f64) -> Self {
        self.max_iters_scale = scale;
        self
    }

    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn with_certified_stop(mut self, on: bool) -> Self {
        self.certified_stop = on;
        self
    }

    pub fn with_factor_method(mut self, method: FactorMethod) -> Self {
        self.factor_method = method;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.derive();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepType {
    Init,
    Descent,
    RoundParallel,
    RoundSequential,
    FixedPoint,
}

impl StepType {
    pub fn name(&self) -> &'static str {
        match self {
            StepType::Init => "init",
            StepType::Descent => "descent",
            StepType::RoundParallel => "round_parallel",
            StepType::RoundSequential => "round_sequential",
            StepType::FixedPoint => "fixed_point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    /// Outer iteration the row belongs to.
    pub iter: usize,
    pub step_type: StepType,
    pub objective: f64,
    pub rho_max: f64,
    pub opt_residual: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IterationCounts {
    pub descent: usize,
    pub parallel_passes: usize,
    pub coordinate_steps: usize,
    pub skipped_coordinates: usize,
    pub rounds: usize,
    pub fixed_point: usize,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    /// `ŵ`
    pub weights_optimizer: WeightVector,
    /// `w̄ = ŵ^{1+α}`
    pub weights_definition: WeightVector,
    /// Last rounded iterate `w_R` before extraction (the final iterate for one-step).
    pub weights_rounded: WeightVector,
    pub iterations: IterationCounts,
    pub trace: Vec<TraceEntry>,
    pub residuals: ResidualReport,
    pub early_stopped: bool,
    /// Proven log-error bound of `weights_definition` when the certified stop fired.
    pub certified_log_error: Option<f64>,
    pub wall_ms: f64,
    pub config: SolverConfig,
}

impl SolverReport {
    /// True when the fixed-point residual meets the configured `ε`.
    pub fn converged(&self) -> bool {
        self.residuals.max_relative_fixed_point_residual <= self.config.eps
    }
}

/// Runs the variant named in `cfg`.
pub fn solve(a: &DenseMatrix, cfg: &SolverConfig) -> Result<SolverReport> {
    match cfg.variant {
        Variant::Parallel | Variant::Sequential => lewis_meta(a, cfg),
        Variant::OneStep => lewis_one_step(a, cfg),
        Variant::CohenPeng => cohen_peng_report(a, cfg),
    }
}

fn check_shape(a: &DenseMatrix, cfg: &SolverConfig) -> Result<()> {
    if a.rows() != cfg.m || a.cols() != cfg.n {
        return Err(LewisError::DimensionMismatch(format!(
            "config is for {}x{} but matrix is {}x{}",
            cfg.m,
            cfg.n,
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

fn check_time(start: Instant, cfg: &SolverConfig, what: &'static str) -> Result<()> {
    match cfg.time_limit {
        Some(limit) if start.elapsed() > limit => Err(LewisError::TimeLimitExceeded {
            what,
            limit_ms: limit.as_millis(),
        }),
        _ => Ok(()),
    }
}

fn push(trace: &mut Vec<TraceEntry>, iter: usize, step_type: StepType, s: PointSummary) {
    trace.push(TraceEntry {
        iter,
        step_type,
        objective: s.objective,
        rho_max: s.rho_max,
        opt_residual: s.optimality_residual,
    });
}

struct MetaRun<'a> {
    a: &'a DenseMatrix,
    cfg: &'a SolverConfig,
    params: AlphaParams,
    counts: IterationCounts,
    trace: Vec<TraceEntry>,
    coordinate_cap: usize,
}

impl MetaRun<'_> {
    fn round(&mut self, ev: Evaluation, iter: usize) -> Result<Evaluation> {
        self.counts.rounds += 1;
        match self.cfg.variant {
            Variant::Sequential => {
                let mut sweep = SequentialRound::from_evaluation(self.a, ev, &self.params, self.cfg.factor_method);
                let mut steps = 0;
                while sweep.step()?.is_some() {
                    steps += 1;
                }
                self.counts.coordinate_steps += steps;
                self.counts.skipped_coordinates += sweep.skipped();
                if self.counts.coordinate_steps > self.coordinate_cap {
                    return Err(LewisError::IterationCapExceeded {
                        what: "sequential coordinate steps",
                        cap: self.coordinate_cap,
                    });
                }
                let ev = Evaluation::with_method(self.a, sweep.weights(), &self.params, self.cfg.factor_method)?;
                if steps > 0 {
                    push(&mut self.trace, iter, StepType::RoundSequential, PointSummary::of(&ev));
                }
                Ok(ev)
            }
            _ => {
                let out = round_parallel_from(self.a, ev, &self.params, self.cfg.factor_method, self.cfg.max_iters_scale)?;
                self.counts.parallel_passes += out.passes;
                for s in &out.history[1..] {
                    push(&mut self.trace, iter, StepType::RoundParallel, *s);
                }
                Ok(out.last)
            }
        }
    }
}

/// Meta-algorithm: from `w = (n/m)·1`, alternate Round and a full Descent step
/// for up to `T_total` iterations, round once more and extract
/// `ŵ_i = (a_iᵀ(AᵀW_RA)⁻¹a_i)^{1/α}`.
pub fn lewis_meta(a: &DenseMatrix, cfg: &SolverConfig) -> Result<SolverReport> {
    lewis_meta_observed(a, cfg, |_| {})
}

/// [`lewis_meta`] calling `observe` on every rounded iterate.
pub fn lewis_meta_observed<F: FnMut(&[f64])>(
    a: &DenseMatrix,
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<SolverReport> {
    if !matches!(cfg.variant, Variant::Parallel | Variant::Sequential) {
        return Err(LewisError::PreconditionViolated(format!(
            "meta-algorithm needs the parallel or sequential variant, got {}",
            cfg.variant
        )));
    }
    check_shape(a, cfg)?;
    let start = Instant::now();
    let params = cfg.params();
    let m = a.rows();
    let coordinate_cap = (CAP_FACTOR * cfg.max_iters_scale * (m as f64) * (cfg.t_total as f64 + 1.0)).ceil() as usize;
    let mut run = MetaRun {
        a,
        cfg,
        params,
        counts: IterationCounts::default(),
        trace: Vec::new(),
        coordinate_cap,
    };
    let mut w = vec![a.cols() as f64 / m as f64; m];
    let mut ev = Evaluation::with_method(a, &w, &params, cfg.factor_method)?;
    push(&mut run.trace, 0, StepType::Init, PointSummary::of(&ev));
    let step = params.max_step();
    let mut early_stopped = false;
    let mut certificate = None;
    for k in 0..cfg.t_total {
        check_time(start, cfg, "meta-algorithm")?;
        ev = run.round(ev, k)?;
        observe(ev.state.weights());
        if ev.optimality_residual() <= cfg.stop_threshold && rho_within_rounding(ev.rho.max(), &params) {
            early_stopped = true;
            break;
        }
        if cfg.certified_stop && k % CERTIFY_EVERY == 0 {
            certificate = certify(a, &ev, &params, cfg)?;
            if certificate.is_some() {
                early_stopped = true;
                break;
            }
        }
        w.copy_from_slice(ev.state.weights());
        for (wi, &r) in w.iter_mut().zip(ev.rho.as_slice()) {
            *wi = descend_coordinate(*wi, r, step);
        }
        ev = Evaluation::with_method(a, &w, &params, cfg.factor_method)?;
        run.counts.descent += 1;
        push(&mut run.trace, k + 1, StepType::Descent, PointSummary::of(&ev));
    }
    let last_iter = run.counts.descent;
    ev = run.round(ev, last_iter)?;
    observe(ev.state.weights());
    let rounded = WeightVector::optimizer(ev.state.weights().to_vec())?;
    let stop = Stop { early: early_stopped, certificate };
    finish(a, &params, &ev, rounded, run.counts, run.trace, stop, start, cfg)
}

/// Iterations between evaluations of the certified stopping rule.
pub const CERTIFY_EVERY: usize = 16;

/// Proven log-error of the weights extracted from `ev`, if it is within `ε`.
fn certify(a: &DenseMatrix, ev: &Evaluation, params: &AlphaParams, cfg: &SolverConfig) -> Result<Option<f64>> {
    let w_hat = extract_from_quadforms(&ev.quadforms, params)?;
    let hat = Evaluation::with_method(a, w_hat.as_slice(), params, cfg.factor_method)?;
    let bound = certified_log_error(&hat, a.cols(), params);
    Ok((bound <= 0.5 * cfg.eps.ln_1p()).then_some(bound))
}

struct Stop {
    early: bool,
    certificate: Option<f64>,
}

fn finish(
    a: &DenseMatrix,
    params: &AlphaParams,
    ev: &Evaluation,
    rounded: WeightVector,
    iterations: IterationCounts,
    trace: Vec<TraceEntry>,
    stop: Stop,
    start: Instant,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    let w_hat = extract_from_quadforms(&ev.quadforms, params)?;
    let w_bar = to_definition_normalization(&w_hat, params)?;
    let residuals = residual_report(a, &w_hat, params)?;
    Ok(SolverReport {
        weights_optimizer: w_hat,
        weights_definition: w_bar,
        weights_rounded: rounded,
        iterations,
        trace,
        residuals,
        early_stopped: stop.early,
        certified_log_error: stop.certificate,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        config: cfg.clone(),
    })
}

/// One-step variant: from `w = 1`, Descent on every coordinate with
/// `η_i = 1/(3ᾱ)` where `ρ_i ≥ 1` and `β/(3ᾱ)` elsewhere; no rounding.
pub fn lewis_one_step(a: &DenseMatrix, cfg: &SolverConfig) -> Result<SolverReport> {
    if cfg.variant != Variant::OneStep {
        return Err(LewisError::PreconditionViolated(format!(
            "one-step solver needs the one_step variant, got {}",
            cfg.variant
        )));
    }
    check_shape(a, cfg)?;
    let start = Instant::now();
    let params = cfg.params();
    let limit = (1.0 + params.alpha()) * (1.0 + 1e-9);
    let big = params.max_step();
    let small = cfg.beta * big;
    let mut w = vec![1.0; a.rows()];
    let mut ev = Evaluation::with_method(a, &w, &params, cfg.factor_method)?;
    let mut trace = Vec::new();
    let mut counts = IterationCounts::default();
    push(&mut trace, 0, StepType::Init, PointSummary::of(&ev));
    let mut early_stopped = false;
    let mut certificate = None;
    for k in 0..cfg.t_total {
        check_time(start, cfg, "one-step algorithm")?;
        if ev.rho.max() > limit {
            return Err(invariant_violation(k, ev.rho.max(), &params));
        }
        if ev.optimality_residual() <= cfg.stop_threshold {
            early_stopped = true;
            break;
        }
        if cfg.certified_stop && k % CERTIFY_EVERY == 0 {
            certificate = certify(a, &ev, &params, cfg)?;
            if certificate.is_some() {
                early_stopped = true;
                break;
            }
        }
        for (wi, &r) in w.iter_mut().zip(ev.rho.as_slice()) {
            let eta = if r >= 1.0 { big } else { small };
            *wi = descend_coordinate(*wi, r, eta);
        }
        ev = Evaluation::with_method(a, &w, &params, cfg.factor_method)?;
        counts.descent += 1;
        push(&mut trace, k + 1, StepType::Descent, PointSummary::of(&ev));
    }
    if ev.rho.max() > limit {
        return Err(invariant_violation(counts.descent, ev.rho.max(), &params));
    }
    let rounded = WeightVector::optimizer(w)?;
    let stop = Stop { early: early_stopped, certificate };
    finish(a, &params, &ev, rounded, counts, trace, stop, start, cfg)
}

fn invariant_violation(iter: usize, rho_max: f64, params: &AlphaParams) -> LewisError {
    LewisError::InvariantViolated(format!(
        "rho_max = {rho_max} exceeds 1 + alpha = {} at iteration {iter}",
        1.0 + params.alpha()
    ))
}

fn extract_from_quadforms(q: &[f64], params: &AlphaParams) -> Result<WeightVector> {
    let inv = 1.0 / params.alpha();
    WeightVector::optimizer(q.iter().map(|&x| (inv * x.ln()).exp()).collect())
}

/// `ŵ_i = (a_iᵀ(AᵀW_RA)⁻¹a_i)^{1/α}`.
pub fn extract_weights(a: &DenseMatrix, w_r: &WeightVector, params: &AlphaParams) -> Result<WeightVector> {
    let state = SpdState::factorize(a, w_r.as_slice())?;
    extract_from_quadforms(&state.row_quadforms(a), params)
}

/// `w̄ = ŵ^{1+α}`.
pub fn to_definition_normalization(w_hat: &WeightVector, params: &AlphaParams) -> Result<WeightVector> {
    if w_hat.normalization() != Normalization::Optimizer {
        return Err(LewisError::PreconditionViolated(
            "expected optimizer-normalized weights".into(),
        ));
    }
    WeightVector::definition(w_hat.as_slice().iter().map(|&x| params.pow_one_plus_alpha(x)).collect())
}

/// `ŵ = w̄^{1/(1+α)} = w̄^{1−2/p}`.
pub fn to_optimizer_normalization(w_bar: &WeightVector, params: &AlphaParams) -> Result<WeightVector> {
    if w_bar.normalization() != Normalization::Definition {
        return Err(LewisError::PreconditionViolated(
            "expected definition-normalized weights".into(),
        ));
    }
    let e = 1.0 / (1.0 + params.alpha());
    WeightVector::optimizer(w_bar.as_slice().iter().map(|&x| (e * x.ln()).exp()).collect())
}

/// Outcome of the fixed-point iteration.
#[derive(Debug, Clone)]
pub struct FixedPointRun {
    pub weights: WeightVector,
    pub iterations: usize,
    /// `‖Δ log v‖∞` per iteration.
    pub steps: Vec<f64>,
    pub residual: f64,
}

/// Cohen-Peng iteration `v_i ← (a_iᵀ(AᵀV^{1−2/p}A)⁻¹a_i)^{p/2}` for `p ∈ (2, 4)`.
///
/// The map contracts `log v` by `c = |p/2 − 1|` in sup norm, so the iteration stops when
/// `c/(1−c)·‖Δ log v‖∞ ≤ ε/2` and the fixed-point residual is at most `ε`.
pub fn cohen_peng_fixed_point(a: &DenseMatrix, p: f64, eps: f64) -> Result<WeightVector> {
    Ok(cohen_peng_run(a, p, eps, 1.0)?.weights)
}

pub fn cohen_peng_run(a: &DenseMatrix, p: f64, eps: f64, cap_scale: f64) -> Result<FixedPointRun> {
    if !(p.is_finite() && p > 2.0 && p < 4.0) {
        return Err(LewisError::UnsupportedP {
            p,
            reason: "the fixed-point iteration is implemented for p in (2, 4)",
        });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LewisError::DomainError(format!("eps must lie in (0, 1), got {eps}")));
    }
    let m = a.rows();
    let c = (p / 2.0 - 1.0).abs();
    let bound = ((2.0 / eps).ln() + (m as f64).ln().max(1.0).ln() + 10.0) / (1.0 / c).ln();
    let cap = (CAP_FACTOR * cap_scale * (bound.ceil() + 1.0)) as usize;
    let inner = 1.0 - 2.0 / p;
    let mut v = vec![a.cols() as f64 / m as f64; m];
    let mut steps = Vec::new();
    for it in 1..=cap {
        let scaled: Vec<f64> = v.iter().map(|&x| (inner * x.ln()).exp()).collect();
        let q = SpdState::factorize(a, &scaled)?.row_quadforms(a);
        let mut delta = 0.0_f64;
        for (vi, qi) in v.iter_mut().zip(&q) {
            let next = 0.5 * p * qi.ln();
            delta = delta.max((next - vi.ln()).abs());
            *vi = next.exp();
        }
        steps.push(delta);
        if c / (1.0 - c) * delta <= 0.5 * eps {
            let weights = WeightVector::definition(v.clone())?;
            let residual = lewis_residual(a, &weights, p)?;
            if residual <= eps {
                return Ok(FixedPointRun {
                    weights,
                    iterations: it,
                    steps,
                    residual,
                });
            }
        }
    }
    Err(LewisError::IterationCapExceeded {
        what: "fixed-point iteration",
        cap,
    })
}

fn cohen_peng_report(a: &DenseMatrix, cfg: &SolverConfig) -> Result<SolverReport> {
    check_shape(a, cfg)?;
    let start = Instant::now();
    let params = cfg.params();
    let run = cohen_peng_run(a, cfg.p, cfg.eps, cfg.max_iters_scale)?;
    let w_hat = to_optimizer_normalization(&run.weights, &params)?;
    let ev = Evaluation::with_method(a, w_hat.as_slice(), &params, cfg.factor_method)?;
    let trace = vec![TraceEntry {
        iter: run.iterations,
        step_type: StepType::FixedPoint,
        objective: ev.objective,
        rho_max: ev.rho.max(),
        opt_residual: ev.optimality_residual(),
    }];
    let counts = IterationCounts {
        fixed_point: run.iterations,
        ..Default::default()
    };
    let residuals = residual_report(a, &w_hat, &params)?;
    Ok(SolverReport {
        weights_definition: run.weights,
        weights_rounded: w_hat.clone(),
        weights_optimizer: w_hat,
        iterations: counts,
        trace,
        residuals,
        early_stopped: false,
        certified_log_error: None,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        config: cfg.clone(),
    })
}
