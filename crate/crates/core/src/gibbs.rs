//! Phase-rule enforcement by rounding and refinement.
//!
//! After a relaxed solve, each sample keeps at most `n_el` phases: the
//! activations of every other phase (all shifts) are set to zero. Updates then
//! resume; being multiplicative they keep those zeros, so the rule holds for
//! the refined solution as well. Selection is independent per sample.

use itertools::Itertools;
use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use thiserror::Error;

use crate::model::{GibbsMode, Solution};
use crate::solver::{divergence, SolveError, Solver, Stage, ProgressSink};

/// Largest basis count for which exhaustive subset search is allowed.
pub const EXACT_MAX_K: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GibbsError {
    #[error("exact subset selection refused for k = {0} > 16")]
    TooManyPhases(usize),
    #[error("n_el must be at least 1")]
    ZeroLimit,
    #[error("sample index {0} out of range")]
    SampleOutOfRange(usize),
}

/// Which phases count as present at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceMatrix {
    /// `K x J`.
    pub indicator: Array2<bool>,
    /// Modeled signal mass of each phase at each sample, `K x J`.
    pub contribution: Array2<f64>,
}

impl PresenceMatrix {
    /// Builds the indicator from contributions. A phase is present when its
    /// mass is positive and at least `threshold` times the sample's total.
    pub fn from_contributions(contribution: Array2<f64>, threshold: f64) -> Self {
        let totals = contribution.sum_axis(Axis(0));
        let indicator = Array2::from_shape_fn(contribution.dim(), |(k, j)| {
            let c = contribution[[k, j]];
            c > 0.0 && c >= threshold * totals[j]
        });
        PresenceMatrix {
            indicator,
            contribution,
        }
    }

    /// Number of present phases per sample.
    pub fn counts(&self) -> Vec<usize> {
        self.indicator
            .axis_iter(Axis(1))
            .map(|col| col.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// `contribution[k][j] = sum_n sum_m W[n-m][k] H[m][k][j]`.
pub fn phase_contributions(w: &Array2<f64>, h: &Array3<f64>) -> Array2<f64> {
    let n = w.nrows();
    let (m_count, k_count, j_count) = h.dim();
    let mut out = Array2::zeros((k_count, j_count));
    for m in 0..m_count.min(n) {
        // mass of column k that stays on the grid after shifting by m
        let mass = w.slice(s![..n - m, ..]).sum_axis(Axis(0));
        for k in 0..k_count {
            for j in 0..j_count {
                out[[k, j]] += mass[k] * h[[m, k, j]];
            }
        }
    }
    out
}

pub fn presence(w: &Array2<f64>, h: &Array3<f64>, threshold: f64) -> PresenceMatrix {
    PresenceMatrix::from_contributions(phase_contributions(w, h), threshold)
}

/// Presence for a finished solution at `threshold`.
pub fn solution_presence(solution: &Solution, threshold: f64) -> PresenceMatrix {
    presence(&solution.w, &solution.h, threshold)
}

/// Per-sample view used to score candidate keep sets.
pub struct RoundingProblem<'a> {
    a: &'a Array2<f64>,
    w: &'a Array2<f64>,
    h: &'a Array3<f64>,
    gamma: &'a [f64],
    eps: f64,
}

impl<'a> RoundingProblem<'a> {
    pub fn new(a: &'a Array2<f64>, w: &'a Array2<f64>, h: &'a Array3<f64>, gamma: &'a [f64], eps: f64) -> Self {
        RoundingProblem { a, w, h, gamma, eps }
    }

    pub fn from_solver(solver: &'a Solver) -> Self {
        RoundingProblem::new(
            solver.data(),
            solver.state().w(),
            solver.state().h(),
            solver.gamma(),
            solver.config().epsilon,
        )
    }

    fn n_samples(&self) -> usize {
        self.h.shape()[2]
    }

    /// Each phase's modeled column at sample `j`, `K x N`.
    fn phase_columns(&self, j: usize) -> Array2<f64> {
        let n = self.w.nrows();
        let (m_count, k_count, _) = self.h.dim();
        let mut cols = Array2::zeros((k_count, n));
        for k in 0..k_count {
            let wk = self.w.column(k);
            for m in 0..m_count.min(n) {
                let act = self.h[[m, k, j]];
                if act == 0.0 {
                    continue;
                }
                let mut dst = cols.slice_mut(s![k, m..]);
                dst.scaled_add(act, &wk.slice(s![..n - m]));
            }
        }
        cols
    }

    fn penalties(&self, j: usize) -> Vec<f64> {
        let (m_count, k_count, _) = self.h.dim();
        (0..k_count)
            .map(|k| {
                (0..m_count)
                    .map(|m| self.gamma.get(m).copied().unwrap_or(0.0) * self.h[[m, k, j]])
                    .sum()
            })
            .collect()
    }

    fn score(&self, column: ArrayView1<f64>, cols: &Array2<f64>, penalties: &[f64], keep: &[usize]) -> f64 {
        let n = cols.ncols();
        let mut model = vec![0.0; n];
        for &k in keep {
            for (dst, &v) in model.iter_mut().zip(cols.row(k)) {
                *dst += v;
            }
        }
        divergence(column.iter().copied(), model.into_iter(), self.eps)
            + keep.iter().map(|&k| penalties[k]).sum::<f64>()
    }

    /// Sample-`j` loss when only the phases in `keep` retain their activations.
    pub fn subset_loss(&self, j: usize, keep: &[usize]) -> Result<f64, GibbsError> {
        if j >= self.n_samples() {
            return Err(GibbsError::SampleOutOfRange(j));
        }
        let cols = self.phase_columns(j);
        let penalties = self.penalties(j);
        Ok(self.score(self.a.column(j), &cols, &penalties, keep))
    }

    /// Chooses at most `n_el` phases to keep at sample `j`.
    ///
    /// Phases listed in `forced` are always kept. If the sample already uses
    /// no more than `n_el` phases those are kept unchanged. Otherwise exact
    /// mode scores every subset of size `n_el` and returns the one with the
    /// lowest sample loss, and greedy mode keeps the `n_el` phases with the
    /// largest modeled mass. The result is sorted.
    pub fn keep_set(&self, j: usize, n_el: usize, mode: GibbsMode, forced: &[usize]) -> Result<Vec<usize>, GibbsError> {
        if n_el == 0 {
            return Err(GibbsError::ZeroLimit);
        }
        if j >= self.n_samples() {
            return Err(GibbsError::SampleOutOfRange(j));
        }
        let k_count = self.w.ncols();
        if mode == GibbsMode::Exact && k_count > EXACT_MAX_K {
            return Err(GibbsError::TooManyPhases(k_count));
        }
        let active: Vec<usize> = (0..k_count)
            .filter(|&k| self.h.slice(s![.., k, j]).iter().any(|&v| v > 0.0))
            .collect();
        if mode == GibbsMode::Off || k_count <= n_el || active.len() <= n_el {
            return Ok((0..k_count).collect());
        }
        let mut forced: Vec<usize> = forced.to_vec();
        forced.sort_unstable();
        forced.dedup();
        if forced.len() >= n_el {
            return Ok(forced);
        }

        let cols = self.phase_columns(j);
        let free: Vec<usize> = (0..k_count).filter(|k| !forced.contains(k)).collect();
        let slots = n_el - forced.len();
        let mut keep = match mode {
            GibbsMode::Exact => {
                let penalties = self.penalties(j);
                let column = self.a.column(j);
                let mut best: Option<(f64, Vec<usize>)> = None;
                for combo in free.iter().copied().combinations(slots) {
                    let mut candidate = forced.clone();
                    candidate.extend(combo);
                    let loss = self.score(column, &cols, &penalties, &candidate);
                    if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                        best = Some((loss, candidate));
                    }
                }
                best.map(|(_, c)| c).unwrap_or(forced)
            }
            _ => {
                let mass: Vec<f64> = cols.axis_iter(Axis(0)).map(|r| r.sum()).collect();
                let mut ranked = free.clone();
                // stable: ties resolve to the lower phase index
                ranked.sort_by(|&x, &y| mass[y].total_cmp(&mass[x]));
                forced.iter().copied().chain(ranked.into_iter().take(slots)).collect()
            }
        };
        keep.sort_unstable();
        Ok(keep)
    }
}

/// Phases at sample `j` that have a pinned, non-zero activation.
fn forced_phases(solver: &Solver, j: usize) -> Vec<usize> {
    let freeze = solver.freeze();
    let (Some(mask), Some(values)) = (&freeze.h_mask, &freeze.h_values) else {
        return Vec::new();
    };
    let (m_count, k_count, _) = mask.dim();
    (0..k_count)
        .filter(|&k| (0..m_count).any(|m| mask[[m, k, j]] && values[[m, k, j]] > 0.0))
        .collect()
}

/// Zeroes the activations of every phase outside `keep[j]` at each sample
/// `j`, skipping pinned entries.
pub fn apply_keep_sets(h: &mut Array3<f64>, keep: &[Vec<usize>], h_mask: Option<&Array3<bool>>) {
    let (m_count, k_count, _) = h.dim();
    for (j, kept) in keep.iter().enumerate() {
        for k in (0..k_count).filter(|k| !kept.contains(k)) {
            for m in 0..m_count {
                if h_mask.is_some_and(|mask| mask[[m, k, j]]) {
                    continue;
                }
                h[[m, k, j]] = 0.0;
            }
        }
    }
}

/// Keep sets for every sample at the solver's current point.
pub fn select_all(solver: &Solver, mode: GibbsMode) -> Result<Vec<Vec<usize>>, GibbsError> {
    let problem = RoundingProblem::from_solver(solver);
    let n_el = solver.config().n_el;
    (0..problem.n_samples())
        .map(|j| problem.keep_set(j, n_el, mode, &forced_phases(solver, j)))
        .collect()
}

/// Runs `gibbs_rounds` passes of rounding followed by refinement to
/// convergence. Returns whether the last refinement converged.
pub fn enforce_and_refine(solver: &mut Solver, sink: &mut dyn ProgressSink) -> Result<bool, SolveError> {
    let mode = solver.config().gibbs;
    if mode == GibbsMode::Off {
        return Ok(true);
    }
    let mut converged = true;
    for round in 0..solver.config().gibbs_rounds {
        let keep = select_all(solver, mode)?;
        let h_mask = solver.freeze().h_mask.clone();
        let state = solver.state_mut();
        apply_keep_sets(&mut state.h, &keep, h_mask.as_ref());
        state.refresh();
        solver.open_segment();
        solver.emit_rounded(sink, round)?;
        converged = solver.run_phase(Stage::Refining, round, sink)?;
    }
    Ok(converged)
}
