//! Shift-aware factorization `A ~ R = sum_m shift_down(W, m) * H[m]` with
//! generalized KL multiplicative updates.
//!
//! `shift_down(W, m)` moves every column of `W` down by `m` rows and fills the
//! vacated top rows with zeros. On a geometric q grid that is a multiplicative
//! peak shift of `exp(m * delta)`.
//!
//! Every update is elementwise multiplicative, so entries that reach zero stay
//! zero and frozen entries can simply be skipped without breaking the descent
//! property of the updates.

use std::ops::ControlFlow;
use std::time::Instant;

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gibbs::{self, GibbsError};
use crate::model::{FreezeSpec, Instance, ModelError, ShiftSummary, Solution, SolverConfig};
use crate::model::{GibbsMode, PRESENCE_THRESHOLD};
use crate::resample::{ResampleError, ResamplePlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("k = {k} exceeds the {n_log} log-grid points")]
    TooManyBases { k: usize, n_log: usize },
    #[error("m = {m} exceeds the {n_log} log-grid points")]
    TooManyShifts { m: usize, n_log: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error("cancelled after {iterations} iterations")]
    Cancelled {
        iterations: usize,
        loss_trace: Vec<f64>,
    },
}

/// Which part of a solve a progress record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Unconstrained solve from the initial point.
    Relaxed,
    /// Phase-rule rounding just zeroed activations.
    Rounding,
    /// Updates resumed after a rounding.
    Refining,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgressKind {
    Iteration,
    /// The current run phase met the convergence criterion (or its cap).
    Converged,
    /// Emitted once right after rounding, carrying the rounded loss.
    Rounded,
}

/// One record handed to a [`ProgressSink`].
#[derive(Debug)]
pub struct Progress<'a> {
    pub kind: ProgressKind,
    pub stage: Stage,
    /// 0-based rounding pass, 0 during the relaxed solve.
    pub round: usize,
    /// Iterations completed in total so far.
    pub iteration: usize,
    pub loss: f64,
    pub wall_ms: u64,
    pub w: &'a Array2<f64>,
    pub h: &'a Array3<f64>,
}

/// Receives progress records; returning `Break` cancels the solve at the next
/// iteration boundary.
pub trait ProgressSink {
    fn record(&mut self, progress: &Progress<'_>) -> ControlFlow<()>;
}

impl ProgressSink for () {
    fn record(&mut self, _: &Progress<'_>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl<F> ProgressSink for F
where
    F: FnMut(&Progress<'_>) -> ControlFlow<()>,
{
    fn record(&mut self, progress: &Progress<'_>) -> ControlFlow<()> {
        self(progress)
    }
}

fn check_shapes(w: &Array2<f64>, h: &Array3<f64>) -> Result<(), SolveError> {
    if w.ncols() != h.shape()[1] {
        return Err(SolveError::Dimension(format!(
            "W has {} columns but H has {} bases",
            w.ncols(),
            h.shape()[1]
        )));
    }
    Ok(())
}

/// Reconstruction `R[n][j] = sum_m sum_k W[n-m][k] * H[m][k][j]`, with rows of
/// `W` above the top treated as zero.
pub fn reconstruct(w: &Array2<f64>, h: &Array3<f64>) -> Result<Array2<f64>, SolveError> {
    check_shapes(w, h)?;
    let mut r = Array2::zeros((w.nrows(), h.shape()[2]));
    reconstruct_into(w, h, &mut r);
    Ok(r)
}

pub(crate) fn reconstruct_into(w: &Array2<f64>, h: &Array3<f64>, r: &mut Array2<f64>) {
    let n = w.nrows();
    r.fill(0.0);
    for (m, hm) in h.axis_iter(Axis(0)).enumerate() {
        if m >= n {
            break;
        }
        let contribution = w.slice(s![..n - m, ..]).dot(&hm);
        let mut rows = r.slice_mut(s![m.., ..]);
        rows += &contribution;
    }
}

/// Reconstruction of phase `k` alone, `N x J`.
pub fn phase_reconstruction(w: &Array2<f64>, h: &Array3<f64>, k: usize) -> Array2<f64> {
    let n = w.nrows();
    let j = h.shape()[2];
    let col = w.column(k);
    let mut out = Array2::zeros((n, j));
    for (m, hm) in h.axis_iter(Axis(0)).enumerate() {
        if m >= n {
            break;
        }
        let act = hm.row(k);
        for row in m..n {
            let wv = col[row - m];
            if wv == 0.0 {
                continue;
            }
            out.row_mut(row).scaled_add(wv, &act);
        }
    }
    out
}

/// Generalized KL divergence `sum(A ln(A/R) - A + R)` plus the L1 penalty
/// `sum_m gamma[m] * sum(H[m])`.
///
/// `R` is floored at `eps` inside the logarithm and `0 ln 0 = 0`.
pub fn kl_loss(
    a: &Array2<f64>,
    r: &Array2<f64>,
    gamma: &[f64],
    h: &Array3<f64>,
    eps: f64,
) -> Result<f64, SolveError> {
    if a.dim() != r.dim() {
        return Err(SolveError::Dimension(format!(
            "A is {:?} but R is {:?}",
            a.dim(),
            r.dim()
        )));
    }
    let mut loss = divergence(a.iter().copied(), r.iter().copied(), eps);
    if gamma.iter().any(|&g| g != 0.0) {
        if gamma.len() != h.shape()[0] {
            return Err(SolveError::Dimension(format!(
                "{} sparsity weights for {} shifts",
                gamma.len(),
                h.shape()[0]
            )));
        }
        for (g, hm) in gamma.iter().zip(h.axis_iter(Axis(0))) {
            if *g != 0.0 {
                loss += g * hm.iter().sum::<f64>();
            }
        }
    }
    Ok(loss)
}

pub(crate) fn divergence(
    a: impl Iterator<Item = f64>,
    r: impl Iterator<Item = f64>,
    eps: f64,
) -> f64 {
    let mut total = 0.0;
    for (a, r) in a.zip(r) {
        let term = if a > 0.0 {
            a * (a / r.max(eps)).ln() - a + r
        } else {
            r
        };
        // each term is non-negative in exact arithmetic
        total += term.max(0.0);
    }
    total
}

fn ratio(a: &Array2<f64>, r: &Array2<f64>, eps: f64) -> Array2<f64> {
    let mut q = Array2::zeros(a.dim());
    Zip::from(&mut q)
        .and(a)
        .and(r)
        .for_each(|q, &a, &r| *q = a / r.max(eps));
    q
}

/// Multiplicative update of every `H[m]` from the same reconstruction `r`:
///
/// `H[m] *= shift_down(W, m)^T (A / R) / (shift_down(W, m)^T 1 + gamma[m])`.
///
/// Entries with a `true` mask are left untouched.
pub fn update_h(
    w: &Array2<f64>,
    h: &mut Array3<f64>,
    r: &Array2<f64>,
    a: &Array2<f64>,
    gamma: &[f64],
    h_mask: Option<&Array3<bool>>,
    eps: f64,
) {
    let n = w.nrows();
    let q = ratio(a, r, eps);
    for m in 0..h.shape()[0].min(n) {
        let ws = w.slice(s![..n - m, ..]);
        let numer = ws.t().dot(&q.slice(s![m.., ..]));
        let denom: Array1<f64> = ws.sum_axis(Axis(0)) + gamma.get(m).copied().unwrap_or(0.0);
        let mut hm = h.index_axis_mut(Axis(0), m);
        for ((k, j), value) in hm.indexed_iter_mut() {
            if h_mask.is_some_and(|mask| mask[[m, k, j]]) {
                continue;
            }
            *value *= numer[[k, j]] / denom[k].max(eps);
        }
    }
}

/// Multiplicative update of `W`:
///
/// `W *= sum_m shift_up(A / R, m) H[m]^T / sum_m shift_up(1, m) H[m]^T`,
///
/// where rows shifted in from below the bottom contribute zero to both the
/// numerator and the denominator.
pub fn update_w(
    w: &mut Array2<f64>,
    h: &Array3<f64>,
    r: &Array2<f64>,
    a: &Array2<f64>,
    w_mask: Option<&Array2<bool>>,
    eps: f64,
) {
    let n = w.nrows();
    let k = w.ncols();
    let q = ratio(a, r, eps);
    let mut numer = Array2::<f64>::zeros((n, k));
    let mut denom = Array2::<f64>::zeros((n, k));
    for (m, hm) in h.axis_iter(Axis(0)).enumerate() {
        if m >= n {
            break;
        }
        let part = q.slice(s![m.., ..]).dot(&hm.t());
        let mut rows = numer.slice_mut(s![..n - m, ..]);
        rows += &part;
        let mass = hm.sum_axis(Axis(1));
        let mut rows = denom.slice_mut(s![..n - m, ..]);
        rows += &mass;
    }
    Zip::indexed(w)
        .and(&numer)
        .and(&denom)
        .for_each(|(row, col), wv, &num, &den| {
            if w_mask.is_some_and(|mask| mask[[row, col]]) {
                return;
            }
            *wv *= num / den.max(eps);
        });
}

/// Scales every unpinned, non-zero column of `W` to unit L2 norm and the
/// matching activations (all shifts) by the inverse norm. Phases with any
/// pinned entry in `W` or `H` are left alone.
pub fn normalize_w(w: &mut Array2<f64>, h: &mut Array3<f64>, freeze: &FreezeSpec) {
    for k in 0..w.ncols() {
        if freeze.phase_has_pins(k) {
            continue;
        }
        let norm = w.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        w.column_mut(k).mapv_inplace(|v| v / norm);
        h.slice_mut(s![.., k, ..]).mapv_inplace(|v| v * norm);
    }
}

/// Current factors, their reconstruction and the loss history.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub(crate) w: Array2<f64>,
    pub(crate) h: Array3<f64>,
    pub(crate) r: Array2<f64>,
    pub(crate) iteration: usize,
    pub(crate) loss_trace: Vec<f64>,
    pub(crate) segments: Vec<usize>,
}

impl ModelState {
    pub fn new(w: Array2<f64>, h: Array3<f64>) -> Result<Self, SolveError> {
        let r = reconstruct(&w, &h)?;
        Ok(ModelState {
            w,
            h,
            r,
            iteration: 0,
            loss_trace: Vec::new(),
            segments: Vec::new(),
        })
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn h(&self) -> &Array3<f64> {
        &self.h
    }

    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub(crate) fn refresh(&mut self) {
        reconstruct_into(&self.w, &self.h, &mut self.r);
    }
}

/// Iterative solver over a fixed log-resampled library.
///
/// [`solve`] wraps this for the common case; the type is public so callers
/// can drive run phases themselves (the phase-rule enforcement does).
pub struct Solver {
    a: Array2<f64>,
    config: SolverConfig,
    gamma: Vec<f64>,
    freeze: FreezeSpec,
    state: ModelState,
    started: Instant,
}

impl Solver {
    /// Sets up a solver on an already log-resampled `N_log x J` matrix.
    /// Initial values come from the freeze settings where given, otherwise from a
    /// seeded uniform draw on `(0, 1]` (all of `W` row-major, then `H`).
    pub fn new(a: Array2<f64>, config: SolverConfig, freeze: FreezeSpec) -> Result<Self, SolveError> {
        config.validate()?;
        let (n, j) = a.dim();
        if config.k > n {
            return Err(SolveError::TooManyBases { k: config.k, n_log: n });
        }
        if config.m > n {
            return Err(SolveError::TooManyShifts { m: config.m, n_log: n });
        }
        freeze.validate(n, config.k, config.m, j)?;
        if config.gibbs == GibbsMode::Exact && config.k > gibbs::EXACT_MAX_K {
            return Err(GibbsError::TooManyPhases(config.k).into());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = || 1.0 - rng.random::<f64>();
        let mut w = match &freeze.w_init {
            Some(init) => init.clone(),
            None => Array2::from_shape_simple_fn((n, config.k), &mut draw),
        };
        let mut h = match &freeze.h_init {
            Some(init) => init.clone(),
            None => Array3::from_shape_simple_fn((config.m, config.k, j), &mut draw),
        };
        if let (Some(mask), Some(values)) = (&freeze.w_mask, &freeze.w_values) {
            Zip::from(&mut w)
                .and(mask)
                .and(values)
                .for_each(|w, &f, &v| {
                    if f {
                        *w = v
                    }
                });
        }
        if let (Some(mask), Some(values)) = (&freeze.h_mask, &freeze.h_values) {
            Zip::from(&mut h)
                .and(mask)
                .and(values)
                .for_each(|h, &f, &v| {
                    if f {
                        *h = v
                    }
                });
        }

        let gamma = config.sparsity.weights(config.m);
        let state = ModelState::new(w, h)?;
        Ok(Solver {
            a,
            config,
            gamma,
            freeze,
            state,
            started: Instant::now(),
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn freeze(&self) -> &FreezeSpec {
        &self.freeze
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn loss(&self) -> f64 {
        kl_loss(&self.a, &self.state.r, &self.gamma, &self.state.h, self.config.epsilon)
            .expect("solver shapes are fixed at construction")
    }

    /// One outer iteration: optional normalization, then `H`, then `W`, with
    /// the reconstruction refreshed before each update.
    pub fn step(&mut self) -> f64 {
        let eps = self.config.epsilon;
        let st = &mut self.state;
        if self.config.sparsity.is_active() {
            normalize_w(&mut st.w, &mut st.h, &self.freeze);
            st.refresh();
        }
        update_h(&st.w, &mut st.h, &st.r, &self.a, &self.gamma, self.freeze.h_mask.as_ref(), eps);
        st.refresh();
        update_w(&mut st.w, &st.h, &st.r, &self.a, self.freeze.w_mask.as_ref(), eps);
        st.refresh();
        st.iteration += 1;
        let loss = self.loss();
        self.state.loss_trace.push(loss);
        loss
    }

    fn emit(&self, sink: &mut dyn ProgressSink, kind: ProgressKind, stage: Stage, round: usize) -> ControlFlow<()> {
        sink.record(&Progress {
            kind,
            stage,
            round,
            iteration: self.state.iteration,
            loss: self.state.loss_trace.last().copied().unwrap_or(f64::NAN),
            wall_ms: self.started.elapsed().as_millis() as u64,
            w: &self.state.w,
            h: &self.state.h,
        })
    }

    fn cancelled(&self) -> SolveError {
        SolveError::Cancelled {
            iterations: self.state.iteration,
            loss_trace: self.state.loss_trace.clone(),
        }
    }

    /// Starts a new run phase at the current point: records its loss as the
    /// first entry of a new trace segment.
    pub(crate) fn open_segment(&mut self) -> f64 {
        let loss = self.loss();
        self.state.segments.push(self.state.loss_trace.len());
        self.state.loss_trace.push(loss);
        loss
    }

    /// Iterates until `|L_t - L_{t-1}| / max(L_1, eps) < conv_gap`, where `L_1`
    /// is the loss after the first iteration of this run phase, or until
    /// `max_iters` iterations. Returns whether the criterion was met.
    pub fn run_phase(&mut self, stage: Stage, round: usize, sink: &mut dyn ProgressSink) -> Result<bool, SolveError> {
        let eps = self.config.epsilon;
        let mut first: Option<f64> = None;
        let mut prev = *self.state.loss_trace.last().expect("segment opened");
        let mut converged = false;
        for _ in 0..self.config.max_iters {
            let loss = self.step();
            let scale = *first.get_or_insert(loss);
            if self.emit(sink, ProgressKind::Iteration, stage, round).is_break() {
                return Err(self.cancelled());
            }
            let gap = (loss - prev).abs() / scale.max(eps);
            prev = loss;
            if gap < self.config.conv_gap {
                converged = true;
                break;
            }
        }
        if self.emit(sink, ProgressKind::Converged, stage, round).is_break() {
            return Err(self.cancelled());
        }
        Ok(converged)
    }

    pub(crate) fn state_mut(&mut self) -> &mut ModelState {
        &mut self.state
    }

    /// Relaxed solve followed by phase-rule enforcement when configured.
    pub fn run(&mut self, sink: &mut dyn ProgressSink) -> Result<bool, SolveError> {
        self.open_segment();
        if self.emit(sink, ProgressKind::Iteration, Stage::Relaxed, 0).is_break() {
            return Err(self.cancelled());
        }
        let mut converged = self.run_phase(Stage::Relaxed, 0, sink)?;
        if self.config.gibbs != GibbsMode::Off {
            converged = gibbs::enforce_and_refine(self, sink)?;
        }
        Ok(converged)
    }

    pub(crate) fn emit_rounded(&self, sink: &mut dyn ProgressSink, round: usize) -> Result<(), SolveError> {
        if self.emit(sink, ProgressKind::Rounded, Stage::Rounding, round).is_break() {
            return Err(self.cancelled());
        }
        Ok(())
    }

    /// Packages the current state as a [`Solution`] on grid `log_q`.
    pub fn into_solution(self, log_q: crate::model::QGrid, converged: bool) -> Solution {
        let st = self.state;
        let delta = log_q.delta().unwrap_or(0.0);
        let shift_summary = shift_summary(&st.h, delta, self.config.epsilon);
        let presence = gibbs::presence(&st.w, &st.h, PRESENCE_THRESHOLD).indicator;
        let r = reconstruct(&st.w, &st.h).expect("shapes checked");
        Solution {
            log_q,
            w: st.w,
            h: st.h,
            r,
            loss_trace: st.loss_trace,
            segments: st.segments,
            iterations: st.iteration,
            converged,
            shift_summary,
            presence,
            config: self.config,
        }
    }
}

/// Activation-weighted mean shift `s = sum_m m H[m] / sum_m H[m]` per phase
/// and sample (zero where the activations sum below `eps`) and
/// `lambda = exp(delta * s)`.
pub fn shift_summary(h: &Array3<f64>, delta: f64, eps: f64) -> ShiftSummary {
    let (_, k, j) = h.dim();
    let mut shift = Array2::zeros((k, j));
    let mut lambda = Array2::zeros((k, j));
    for kk in 0..k {
        for jj in 0..j {
            let act = h.slice(s![.., kk, jj]);
            let total: f64 = act.iter().sum();
            let s = if total < eps {
                0.0
            } else {
                act.iter()
                    .enumerate()
                    .map(|(m, &v)| m as f64 * v)
                    .sum::<f64>()
                    / total
            };
            shift[[kk, jj]] = s;
            lambda[[kk, jj]] = (delta * s).exp();
        }
    }
    ShiftSummary { shift, lambda }
}

/// Resamples the instance onto a log grid, factorizes it and, if configured,
/// enforces the phase rule.
pub fn solve(instance: &Instance, config: &SolverConfig, freeze: &FreezeSpec) -> Result<Solution, SolveError> {
    solve_with_progress(instance, config, freeze, &mut ())
}

pub fn solve_with_progress(
    instance: &Instance,
    config: &SolverConfig,
    freeze: &FreezeSpec,
    sink: &mut dyn ProgressSink,
) -> Result<Solution, SolveError> {
    config.validate()?;
    let plan = ResamplePlan::new(instance.q(), config.oversample)?;
    let a = plan.to_log_columns(&instance.intensity_matrix())?;
    let mut solver = Solver::new(a, config.clone(), freeze.clone())?;
    let converged = solver.run(sink)?;
    Ok(solver.into_solution(plan.dst().clone(), converged))
}
