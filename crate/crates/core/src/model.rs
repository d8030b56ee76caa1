//! Shared domain types: scattering grids, measured libraries, solver
//! configuration, freeze specifications and solver output.
//!
//! Dimension convention used everywhere in the crate:
//!
//! * the measured library `A` is `N x J` (rows are q bins, columns samples),
//! * the basis matrix `W` is `N x K`,
//! * the activation tensor `H` is `M x K x J`, one `K x J` slice per shift.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::InstanceDocument;

/// Default relative-loss convergence threshold.
pub const DEFAULT_CONV_GAP: f64 = 2e-5;
/// Sparsity weight used when sparsity is switched on without a value.
pub const DEFAULT_SPARSITY: f64 = 0.35;
/// Default iteration cap per run phase.
pub const DEFAULT_MAX_ITERS: usize = 5000;
/// Division and logarithm floor.
pub const DEFAULT_EPSILON: f64 = 1e-12;
/// Fraction of a sample's modeled signal below which a phase is not
/// counted as present.
pub const PRESENCE_THRESHOLD: f64 = 0.01;

/// Tolerance on the composition simplex constraint.
pub const COMPOSITION_TOLERANCE: f64 = 1e-6;
/// Negative intensities within `-NEGATIVE_CLAMP_BAND * max` are clamped to 0.
pub const NEGATIVE_CLAMP_BAND: f64 = 1e-9;

const GRID_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("q grid needs at least 2 points, got {0}")]
    GridTooShort(usize),
    #[error("q grid value {value} at index {index} is not a positive finite number")]
    NonPositiveQ { index: usize, value: f64 },
    #[error("q grid is not strictly increasing at index {0}")]
    NonIncreasingQ(usize),
    #[error("instance has no elements")]
    NoElements,
    #[error("instance has no samples")]
    NoSamples,
    #[error("sample {id}: {field} has length {found}, expected {expected}")]
    Ragged {
        id: String,
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("sample {id}: composition not on simplex (sum {sum})")]
    CompositionNotOnSimplex { id: String, sum: f64 },
    #[error("sample {id}: composition entry {value} is negative or not finite")]
    BadComposition { id: String, value: f64 },
    #[error("sample {id}: intensity {value} at bin {bin} is below the clamp band")]
    NegativeIntensity { id: String, bin: usize, value: f64 },
    #[error("sample {id}: intensity at bin {bin} is not finite")]
    NonFiniteIntensity { id: String, bin: usize },
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("invalid freeze spec: {0}")]
    Freeze(String),
}

/// How the points of a [`QGrid`] are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Constant ratio between neighbours.
    Geometric,
    /// Constant difference between neighbours.
    Linear,
    Irregular,
}

/// Strictly increasing, positive grid of scattering vector magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    values: Vec<f64>,
    kind: GridKind,
    delta: Option<f64>,
}

impl QGrid {
    /// Validates `values` and classifies the spacing. Grids whose
    /// log-spacing is constant to within `1e-12` are geometric and carry
    /// that spacing as [`QGrid::delta`].
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() < 2 {
            return Err(ModelError::GridTooShort(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveQ { index, value });
            }
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ModelError::NonIncreasingQ(i + 1));
        }

        let n = values.len();
        let delta = (values[n - 1].ln() - values[0].ln()) / (n - 1) as f64;
        let geometric = values
            .windows(2)
            .all(|w| (w[1].ln() - w[0].ln() - delta).abs() < GRID_TOLERANCE);
        if geometric {
            return Ok(QGrid {
                values,
                kind: GridKind::Geometric,
                delta: Some(delta),
            });
        }

        let step = (values[n - 1] - values[0]) / (n - 1) as f64;
        let scale = values[n - 1].abs().max(1.0);
        let linear = values
            .windows(2)
            .all(|w| (w[1] - w[0] - step).abs() < GRID_TOLERANCE * scale);
        let kind = if linear {
            GridKind::Linear
        } else {
            GridKind::Irregular
        };
        Ok(QGrid {
            values,
            kind,
            delta: None,
        })
    }

    /// `n` evenly spaced points on `[start, end]`, endpoints exact.
    pub fn linear(start: f64, end: f64, n: usize) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::GridTooShort(n));
        }
        let step = (end - start) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| start + step * i as f64).collect();
        values[n - 1] = end;
        QGrid::new(values)
    }

    /// `n` log-evenly spaced points on `[start, end]`, endpoints exact.
    pub fn geometric(start: f64, end: f64, n: usize) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::GridTooShort(n));
        }
        if !(start > 0.0 && end > start) {
            return Err(ModelError::NonPositiveQ {
                index: 0,
                value: start,
            });
        }
        let delta = (end.ln() - start.ln()) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| start * (delta * i as f64).exp()).collect();
        values[n - 1] = end;
        QGrid::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// Constant log-spacing, defined for geometric grids only.
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// One measured sample of a library.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub composition: Vec<f64>,
    pub intensity: Vec<f64>,
}

/// A validated library of diffraction patterns on a shared q grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    elements: Vec<String>,
    q: QGrid,
    samples: Vec<Sample>,
}

impl Instance {
    /// Builds an instance from already-typed parts, applying the same checks
    /// as [`validate_instance`].
    pub fn new(elements: Vec<String>, q: QGrid, samples: Vec<Sample>) -> Result<Self, ModelError> {
        if elements.is_empty() {
            return Err(ModelError::NoElements);
        }
        if samples.is_empty() {
            return Err(ModelError::NoSamples);
        }
        let n = q.len();
        let e = elements.len();
        let mut seen = std::collections::HashSet::new();
        let mut samples = samples;
        for sample in &mut samples {
            if !seen.insert(sample.id.clone()) {
                return Err(ModelError::DuplicateSample(sample.id.clone()));
            }
            check_composition(sample, e)?;
            clamp_intensity(sample, n)?;
        }
        Ok(Instance {
            elements,
            q,
            samples,
        })
    }

    pub fn elements(&self) -> &[String] {
        &self.elements
    }

    pub fn q(&self) -> &QGrid {
        &self.q
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_index(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// The `N x J` intensity matrix `A`.
    pub fn intensity_matrix(&self) -> Array2<f64> {
        let n = self.q.len();
        let j = self.samples.len();
        Array2::from_shape_fn((n, j), |(row, col)| self.samples[col].intensity[row])
    }

    pub fn total_intensity(&self) -> f64 {
        self.samples
            .iter()
            .flat_map(|s| s.intensity.iter())
            .sum()
    }
}

fn check_composition(sample: &Sample, e: usize) -> Result<(), ModelError> {
    if sample.composition.len() != e {
        return Err(ModelError::Ragged {
            id: sample.id.clone(),
            field: "composition",
            found: sample.composition.len(),
            expected: e,
        });
    }
    if let Some(&value) = sample
        .composition
        .iter()
        .find(|v| !(v.is_finite() && **v >= 0.0))
    {
        return Err(ModelError::BadComposition {
            id: sample.id.clone(),
            value,
        });
    }
    let sum: f64 = sample.composition.iter().sum();
    if (sum - 1.0).abs() >= COMPOSITION_TOLERANCE {
        return Err(ModelError::CompositionNotOnSimplex {
            id: sample.id.clone(),
            sum,
        });
    }
    Ok(())
}

fn clamp_intensity(sample: &mut Sample, n: usize) -> Result<(), ModelError> {
    if sample.intensity.len() != n {
        return Err(ModelError::Ragged {
            id: sample.id.clone(),
            field: "intensity",
            found: sample.intensity.len(),
            expected: n,
        });
    }
    if let Some(bin) = sample.intensity.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteIntensity {
            id: sample.id.clone(),
            bin,
        });
    }
    let max = sample.intensity.iter().cloned().fold(0.0_f64, f64::max);
    let floor = -NEGATIVE_CLAMP_BAND * max;
    for (bin, value) in sample.intensity.iter_mut().enumerate() {
        if *value < 0.0 {
            if *value < floor {
                return Err(ModelError::NegativeIntensity {
                    id: sample.id.clone(),
                    bin,
                    value: *value,
                });
            }
            *value = 0.0;
        } else if *value == 0.0 {
            // drop negative zero
            *value = 0.0;
        }
    }
    Ok(())
}

/// Checks a parsed instance document and produces an [`Instance`].
///
/// Intensities that are negative but within `1e-9` of the sample maximum are
/// clamped to zero; anything below that band is rejected.
pub fn validate_instance(doc: InstanceDocument) -> Result<Instance, ModelError> {
    let q = QGrid::new(doc.q)?;
    let samples = doc
        .samples
        .into_iter()
        .map(|s| Sample {
            id: s.id,
            composition: s.composition,
            intensity: s.intensity,
        })
        .collect();
    Instance::new(doc.elements, q, samples)
}

/// Which subset selection the phase-rule enforcement uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GibbsMode {
    #[default]
    Off,
    Greedy,
    Exact,
}

impl std::str::FromStr for GibbsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" => Ok(GibbsMode::Off),
            "greedy" => Ok(GibbsMode::Greedy),
            "exact" => Ok(GibbsMode::Exact),
            other => Err(format!("unknown gibbs mode {other:?}")),
        }
    }
}

/// L1 weight on the activations, either one value for every shift or one
/// value per shift copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sparsity {
    Uniform(f64),
    PerShift(Vec<f64>),
}

impl Default for Sparsity {
    fn default() -> Self {
        Sparsity::Uniform(0.0)
    }
}

impl Sparsity {
    /// Weight for every shift `0..m`.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        match self {
            Sparsity::Uniform(g) => vec![*g; m],
            Sparsity::PerShift(g) => g.clone(),
        }
    }

    pub fn is_active(&self) -> bool {
        match self {
            Sparsity::Uniform(g) => *g > 0.0,
            Sparsity::PerShift(g) => g.iter().any(|&x| x > 0.0),
        }
    }
}

fn one() -> usize {
    1
}
fn default_conv_gap() -> f64 {
    DEFAULT_CONV_GAP
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_n_el() -> usize {
    3
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_oversample() -> f64 {
    1.0
}

/// Solver parameters. Only `k` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of basis patterns.
    pub k: usize,
    /// Number of shift copies per basis pattern.
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default)]
    pub sparsity: Sparsity,
    #[serde(default = "default_conv_gap")]
    pub conv_gap: f64,
    /// Iteration cap for each run phase (relaxed solve, each refinement).
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Maximum number of coexisting phases per sample.
    #[serde(default = "default_n_el")]
    pub n_el: usize,
    #[serde(default)]
    pub gibbs: GibbsMode,
    #[serde(default = "one")]
    pub gibbs_rounds: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Density of the log grid relative to the measured grid.
    #[serde(default = "default_oversample")]
    pub oversample: f64,
}

impl SolverConfig {
    /// Defaults for everything except the basis count.
    pub fn new(k: usize) -> Self {
        SolverConfig {
            k,
            m: 1,
            sparsity: Sparsity::default(),
            conv_gap: DEFAULT_CONV_GAP,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
            n_el: default_n_el(),
            gibbs: GibbsMode::Off,
            gibbs_rounds: 1,
            epsilon: DEFAULT_EPSILON,
            oversample: 1.0,
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sparsity(mut self, gamma: f64) -> Self {
        self.sparsity = Sparsity::Uniform(gamma);
        self
    }

    pub fn with_gibbs(mut self, mode: GibbsMode, n_el: usize) -> Self {
        self.gibbs = mode;
        self.n_el = n_el;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_conv_gap(mut self, conv_gap: f64) -> Self {
        self.conv_gap = conv_gap;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.m < 1 {
            return bad("m must be at least 1".into());
        }
        if !(self.conv_gap > 0.0 && self.conv_gap.is_finite()) {
            return bad(format!("conv_gap must be positive, got {}", self.conv_gap));
        }
        if self.n_el < 1 {
            return bad("n_el must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.oversample > 0.0 && self.oversample.is_finite()) {
            return bad(format!("oversample must be positive, got {}", self.oversample));
        }
        if self.gibbs_rounds < 1 {
            return bad("gibbs_rounds must be at least 1".into());
        }
        let weights = match &self.sparsity {
            Sparsity::Uniform(g) => vec![*g],
            Sparsity::PerShift(g) => {
                if g.len() != self.m {
                    return bad(format!(
                        "sparsity has {} weights but m = {}",
                        g.len(),
                        self.m
                    ));
                }
                g.clone()
            }
        };
        if weights.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("sparsity weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Entry-level pins and optional initial values for `W` and `H`.
///
/// A `true` mask entry marks a frozen value; the pinned value is read from the
/// matching position of the values array. Frozen entries never change during
/// solving, rounding or normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreezeSpec {
    pub w_mask: Option<Array2<bool>>,
    pub w_values: Option<Array2<f64>>,
    pub h_mask: Option<Array3<bool>>,
    pub h_values: Option<Array3<f64>>,
    pub w_init: Option<Array2<f64>>,
    pub h_init: Option<Array3<f64>>,
}

impl FreezeSpec {
    pub fn is_empty(&self) -> bool {
        self == &FreezeSpec::default()
    }

    /// Pins column `k` of `W` (of `n_basis` columns) to `values`.
    pub fn pin_w_column(&mut self, n_basis: usize, k: usize, values: &[f64]) {
        let n = values.len();
        let mask = self
            .w_mask
            .get_or_insert_with(|| Array2::from_elem((n, n_basis), false));
        let pinned = self
            .w_values
            .get_or_insert_with(|| Array2::zeros((n, n_basis)));
        for (row, &v) in values.iter().enumerate() {
            mask[[row, k]] = true;
            pinned[[row, k]] = v;
        }
    }

    /// Releases every pin in column `k` of `W`.
    pub fn release_w_column(&mut self, k: usize) {
        if let Some(mask) = &mut self.w_mask {
            mask.column_mut(k).fill(false);
        }
    }

    /// Pins `H[m][k][j]` to `value` in a tensor of shape `shape`.
    pub fn pin_h(&mut self, shape: (usize, usize, usize), idx: (usize, usize, usize), value: f64) {
        let mask = self
            .h_mask
            .get_or_insert_with(|| Array3::from_elem(shape, false));
        let pinned = self.h_values.get_or_insert_with(|| Array3::zeros(shape));
        let (m, k, j) = idx;
        mask[[m, k, j]] = true;
        pinned[[m, k, j]] = value;
    }

    pub fn w_frozen(&self, row: usize, k: usize) -> bool {
        self.w_mask.as_ref().is_some_and(|m| m[[row, k]])
    }

    pub fn h_frozen(&self, m: usize, k: usize, j: usize) -> bool {
        self.h_mask.as_ref().is_some_and(|mask| mask[[m, k, j]])
    }

    /// Whether phase `k` has any frozen entry in `W` or `H`.
    pub fn phase_has_pins(&self, k: usize) -> bool {
        let in_w = self
            .w_mask
            .as_ref()
            .is_some_and(|m| m.column(k).iter().any(|&b| b));
        let in_h = self.h_mask.as_ref().is_some_and(|m| {
            m.index_axis(ndarray::Axis(1), k).iter().any(|&b| b)
        });
        in_w || in_h
    }

    /// Checks shapes against a model with `n_log` grid points, `k` bases,
    /// `m` shifts and `j` samples, and that every pinned or initial value is
    /// non-negative.
    pub fn validate(&self, n_log: usize, k: usize, m: usize, j: usize) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Freeze(msg));
        let w_shape = [n_log, k];
        let h_shape = [m, k, j];
        match (&self.w_mask, &self.w_values) {
            (None, None) => {}
            (Some(mask), Some(values)) => {
                if mask.shape() != w_shape || values.shape() != w_shape {
                    return bad(format!(
                        "W mask/values shape {:?}/{:?}, expected {:?}",
                        mask.shape(),
                        values.shape(),
                        w_shape
                    ));
                }
                if mask
                    .iter()
                    .zip(values.iter())
                    .any(|(&f, &v)| f && !(v.is_finite() && v >= 0.0))
                {
                    return bad("frozen W values must be non-negative".into());
                }
            }
            _ => return bad("w_mask and w_values must be given together".into()),
        }
        match (&self.h_mask, &self.h_values) {
            (None, None) => {}
            (Some(mask), Some(values)) => {
                if mask.shape() != h_shape || values.shape() != h_shape {
                    return bad(format!(
                        "H mask/values shape {:?}/{:?}, expected {:?}",
                        mask.shape(),
                        values.shape(),
                        h_shape
                    ));
                }
                if mask
                    .iter()
                    .zip(values.iter())
                    .any(|(&f, &v)| f && !(v.is_finite() && v >= 0.0))
                {
                    return bad("frozen H values must be non-negative".into());
                }
            }
            _ => return bad("h_mask and h_values must be given together".into()),
        }
        if let Some(init) = &self.w_init {
            if init.shape() != w_shape {
                return bad(format!(
                    "W init shape {:?}, expected {:?}",
                    init.shape(),
                    w_shape
                ));
            }
            if init.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("W init must be non-negative".into());
            }
        }
        if let Some(init) = &self.h_init {
            if init.shape() != h_shape {
                return bad(format!(
                    "H init shape {:?}, expected {:?}",
                    init.shape(),
                    h_shape
                ));
            }
            if init.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("H init must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Activation-weighted shift per phase and sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSummary {
    /// Fractional row offset `s = sum_m m*H[m] / sum_m H[m]`, `K x J`.
    pub shift: Array2<f64>,
    /// Multiplicative shift `exp(delta * s)`, `K x J`.
    pub lambda: Array2<f64>,
}

/// Converged factorization and everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub log_q: QGrid,
    pub w: Array2<f64>,
    pub h: Array3<f64>,
    pub r: Array2<f64>,
    /// Loss at initialization followed by the loss after every iteration;
    /// after each phase-rule rounding the post-rounding loss starts a new
    /// segment.
    pub loss_trace: Vec<f64>,
    /// Start index in `loss_trace` of every run phase.
    pub segments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub shift_summary: ShiftSummary,
    /// Presence at [`PRESENCE_THRESHOLD`], `K x J`.
    pub presence: Array2<bool>,
    pub config: SolverConfig,
}

impl Solution {
    pub fn delta(&self) -> f64 {
        self.log_q.delta().unwrap_or(0.0)
    }

    /// Loss values grouped by run phase.
    pub fn trace_segments(&self) -> Vec<&[f64]> {
        let mut bounds = self.segments.clone();
        bounds.push(self.loss_trace.len());
        bounds
            .windows(2)
            .map(|b| &self.loss_trace[b[0]..b[1]])
            .collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{InstanceDocument, SampleDocument};

    fn doc(composition: Vec<Vec<f64>>, intensity: Vec<Vec<f64>>) -> InstanceDocument {
        InstanceDocument {
            elements: vec!["A".into(), "B".into(), "C".into()],
            q: vec![1.0, 1.5, 2.0],
            samples: composition
                .into_iter()
                .zip(intensity)
                .enumerate()
                .map(|(i, (c, a))| SampleDocument {
                    id: format!("s{i}"),
                    composition: c,
                    intensity: a,
                })
                .collect(),
        }
    }

    #[test]
    fn well_formed_document_passes() {
        let d = doc(
            vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 1.0, 2.0], vec![3.0, 0.5, 0.0]],
        );
        let inst = validate_instance(d.clone()).unwrap();
        assert_eq!(inst.elements().len(), 3);
        assert_eq!(inst.n_samples(), 2);
        assert_eq!(inst.samples()[1].intensity, d.samples[1].intensity);
        assert_eq!(inst.q().kind(), GridKind::Linear);
    }

    #[test]
    fn composition_off_simplex_rejected() {
        let d = doc(vec![vec![0.5, 0.5, 0.1]], vec![vec![1.0, 1.0, 1.0]]);
        let err = validate_instance(d).unwrap_err();
        assert!(err.to_string().contains("composition not on simplex"));
    }

    #[test]
    fn tiny_negative_clamped() {
        let d = doc(vec![vec![0.5, 0.5, 0.0]], vec![vec![1.0, -1e-12, 0.3]]);
        let inst = validate_instance(d).unwrap();
        assert_eq!(inst.samples()[0].intensity, vec![1.0, 0.0, 0.3]);
    }

    #[test]
    fn negative_beyond_band_rejected() {
        let d = doc(vec![vec![0.5, 0.5, 0.0]], vec![vec![1.0, -1e-6, 0.3]]);
        assert!(matches!(
            validate_instance(d),
            Err(ModelError::NegativeIntensity { bin: 1, .. })
        ));
    }

    #[test]
    fn non_increasing_q_rejected() {
        let mut d = doc(vec![vec![1.0, 0.0, 0.0]], vec![vec![1.0, 1.0, 1.0]]);
        d.q = vec![1.0, 1.0, 2.0];
        assert_eq!(validate_instance(d), Err(ModelError::NonIncreasingQ(1)));
    }

    #[test]
    fn ragged_intensity_rejected() {
        let d = doc(vec![vec![1.0, 0.0, 0.0]], vec![vec![1.0, 1.0]]);
        assert!(matches!(
            validate_instance(d),
            Err(ModelError::Ragged {
                field: "intensity",
                ..
            })
        ));
    }

    #[test]
    fn grid_classification() {
        let g = QGrid::new(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(g.kind(), GridKind::Geometric);
        assert!((g.delta().unwrap() - 2f64.ln()).abs() < 1e-15);
        let g = QGrid::geometric(1.0, 7.0, 300).unwrap();
        assert_eq!(g.kind(), GridKind::Geometric);
        assert_eq!(g.last(), 7.0);
        let g = QGrid::linear(1.0, 2.0, 100).unwrap();
        assert_eq!(g.kind(), GridKind::Linear);
        assert!(g.delta().is_none());
        let g = QGrid::new(vec![1.0, 1.1, 3.0, 3.05]).unwrap();
        assert_eq!(g.kind(), GridKind::Irregular);
    }

    #[test]
    fn config_bounds() {
        assert!(SolverConfig::new(3).validate().is_ok());
        assert!(SolverConfig::new(0).validate().is_err());
        assert!(SolverConfig::new(2).with_m(0).validate().is_err());
        assert!(SolverConfig::new(2).with_conv_gap(0.0).validate().is_err());
        let mut c = SolverConfig::new(2).with_m(3);
        c.sparsity = Sparsity::PerShift(vec![0.1, 0.2]);
        assert!(c.validate().is_err());
        c.sparsity = Sparsity::PerShift(vec![0.1, 0.2, 0.0]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_defaults_from_json() {
        let c: SolverConfig = serde_json::from_str(r#"{"k": 4}"#).unwrap();
        assert_eq!(c, SolverConfig::new(4));
        assert_eq!(c.conv_gap, 2e-5);
        let c: SolverConfig =
            serde_json::from_str(r#"{"k": 4, "m": 2, "sparsity": [0.1, 0.2], "gibbs": "exact"}"#)
                .unwrap();
        assert_eq!(c.sparsity, Sparsity::PerShift(vec![0.1, 0.2]));
        assert_eq!(c.gibbs, GibbsMode::Exact);
    }

    #[test]
    fn freeze_shape_checked() {
        let mut f = FreezeSpec::default();
        f.pin_w_column(2, 1, &[1.0, 2.0, 3.0]);
        assert!(f.validate(3, 2, 1, 5).is_ok());
        assert!(f.validate(4, 2, 1, 5).is_err());
        assert!(f.w_frozen(2, 1));
        assert!(!f.w_frozen(2, 0));
        assert!(f.phase_has_pins(1));
        f.release_w_column(1);
        assert!(!f.phase_has_pins(1));
        f.pin_h((1, 2, 5), (0, 0, 4), -1.0);
        assert!(f.validate(3, 2, 1, 5).is_err());
    }
}
