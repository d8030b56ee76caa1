//! Demixing libraries of one-dimensional diffraction patterns into a few
//! shiftable basis patterns and per-sample activations.
//!
//! Patterns are resampled onto a geometric q grid ([`resample`]), where a
//! multiplicative peak shift becomes a row offset. The library `A` is then
//! factorized as `A ~ sum_m shift_down(W, m) * H[m]` with generalized KL
//! multiplicative updates ([`solver`]), optionally with L1 sparsity, frozen
//! entries, custom initial values and phase-rule enforcement ([`gibbs`]).
//! [`evaluation`] generates synthetic ternary libraries with known ground
//! truth and scores solutions against them; [`io`] holds the file formats.
//!
//! ```
//! use phasefd::{evaluation, solve, FreezeSpec, SolverConfig};
//!
//! let spec = evaluation::SyntheticSpec { grid_per_edge: 4, n_q: 60, ..Default::default() };
//! let (instance, truth) = evaluation::generate(&spec).unwrap();
//! let config = SolverConfig::new(3).with_max_iters(200).with_seed(1);
//! let solution = solve(&instance, &config, &FreezeSpec::default()).unwrap();
//! assert!(solution.loss_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
//! let loss = evaluation::matched_l2(&solution, &truth).unwrap();
//! assert!(loss.is_finite());
//! ```

pub mod assignment;
pub mod evaluation;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod resample;
pub mod solver;

pub use model::{
    validate_instance, FreezeSpec, GibbsMode, GridKind, Instance, ModelError, QGrid, Sample, ShiftSummary,
    Solution, SolverConfig, Sparsity,
};
pub use resample::{build_log_grid, shift_to_lambda, ResamplePlan};
pub use solver::{kl_loss, reconstruct, solve, solve_with_progress, Progress, ProgressKind, ProgressSink, SolveError, Stage};
