//! Synthetic ternary libraries with known ground truth, and the two quality
//! metrics used to score solutions against them: the permutation-matched
//! normalized L2 loss and the fraction of samples obeying the phase rule.
//!
//! The generator places `K` anchor compositions on the ternary simplex (the
//! three corners first, then interior lattice points), triangulates them, and
//! mixes the phases of each sample's containing triangle with barycentric
//! weights, so no sample ever holds more than three phases. Each phase is a
//! sum of Gaussian peaks; its peaks move to higher q by a factor `lambda` that
//! grows linearly from 1 at the phase's anchor to `alloy_max` at unit
//! distance (the simplex edge length).

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::min_cost_assignment;
use crate::gibbs::{solution_presence, PresenceMatrix};
use crate::model::{Instance, ModelError, QGrid, Sample, Solution};
use crate::resample::ResamplePlan;
use crate::solver::phase_reconstruction;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;
const GEOMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("lattice with {grid} points per edge is too coarse to hold {k} anchors")]
    LatticeTooCoarse { grid: usize, k: usize },
    #[error("solution has {solution} phases, ground truth has {truth}")]
    PhaseCountMismatch { solution: usize, truth: usize },
    #[error("solution covers {solution} samples, ground truth has {truth}")]
    SampleCountMismatch { solution: usize, truth: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters of a synthetic ternary library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub k: usize,
    pub peaks_per_phase: usize,
    /// Lattice divisions per simplex edge; `(g+1)(g+2)/2` samples.
    pub grid_per_edge: usize,
    pub n_q: usize,
    pub q_min: f64,
    pub q_max: f64,
    /// Peak shift factor at unit distance from a phase's anchor.
    pub alloy_max: f64,
    /// Peak standard deviation as a fraction of the peak position.
    pub peak_width: f64,
    /// Standard deviation of additive Gaussian noise (clamped at zero).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            k: 3,
            peaks_per_phase: 4,
            grid_per_edge: 15,
            n_q: 300,
            q_min: 1.5,
            q_max: 5.0,
            alloy_max: 1.0,
            peak_width: 0.012,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Spec(m.to_string()));
        if self.k < 3 {
            return bad("k must be at least 3 (one anchor per simplex corner)");
        }
        if self.peaks_per_phase < 1 {
            return bad("peaks_per_phase must be at least 1");
        }
        if self.grid_per_edge < 1 {
            return bad("grid_per_edge must be at least 1");
        }
        if self.n_q < 2 {
            return bad("n_q must be at least 2");
        }
        if !(self.q_min > 0.0 && self.q_max > self.q_min && self.q_max.is_finite()) {
            return bad("need 0 < q_min < q_max");
        }
        if !(self.alloy_max >= 1.0 && self.alloy_max.is_finite()) {
            return bad("alloy_max must be at least 1");
        }
        if !(self.peak_width > 0.0 && self.peak_width.is_finite()) {
            return bad("peak_width must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.grid_per_edge + 1) * (self.grid_per_edge + 2) / 2
    }
}

/// What generated a synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub elements: Vec<String>,
    pub q: QGrid,
    /// Anchor composition of every phase.
    pub anchors: Vec<[f64; 3]>,
    /// Mixture weight of each phase at each sample, `K x J`.
    pub weights: Array2<f64>,
    /// Peak shift factor of each phase at each sample, `K x J`.
    pub lambda: Array2<f64>,
    /// Noiseless per-phase signal at each sample on `q`, `K x J x N`.
    pub signals: Array3<f64>,
    /// Sum of the instance intensities (including noise).
    pub intensity_total: f64,
}

impl GroundTruth {
    pub fn n_phases(&self) -> usize {
        self.signals.shape()[0]
    }

    /// Presence computed from the true per-phase signal mass.
    pub fn presence(&self, threshold: f64) -> PresenceMatrix {
        PresenceMatrix::from_contributions(self.signals.sum_axis(Axis(2)), threshold)
    }
}

fn cartesian(c: [f64; 3]) -> (f64, f64) {
    (c[1] + 0.5 * c[2], SQRT3_2 * c[2])
}

fn barycentric(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> [f64; 3] {
    let det = (b.1 - c.1) * (a.0 - c.0) + (c.0 - b.0) * (a.1 - c.1);
    let l1 = ((b.1 - c.1) * (p.0 - c.0) + (c.0 - b.0) * (p.1 - c.1)) / det;
    let l2 = ((c.1 - a.1) * (p.0 - c.0) + (a.0 - c.0) * (p.1 - c.1)) / det;
    [l1, l2, 1.0 - l1 - l2]
}

/// Triangulation of the simplex whose vertices are the anchors, built by
/// inserting interior anchors one at a time into the corner triangle.
fn triangulate(points: &[(f64, f64)]) -> Vec<[usize; 3]> {
    let mut tris = vec![[0usize, 1, 2]];
    for (p_idx, &p) in points.iter().enumerate().skip(3) {
        let mut next = Vec::with_capacity(tris.len() + 2);
        for tri in tris {
            let l = barycentric(p, points[tri[0]], points[tri[1]], points[tri[2]]);
            if l.iter().any(|&x| x < -GEOMETRY_TOLERANCE) {
                next.push(tri);
                continue;
            }
            match l.iter().position(|&x| x.abs() <= GEOMETRY_TOLERANCE) {
                None => {
                    next.push([tri[0], tri[1], p_idx]);
                    next.push([tri[1], tri[2], p_idx]);
                    next.push([tri[2], tri[0], p_idx]);
                }
                Some(opposite) => {
                    // p sits on the edge facing vertex `opposite`
                    let v = tri[opposite];
                    let u1 = tri[(opposite + 1) % 3];
                    let u2 = tri[(opposite + 2) % 3];
                    next.push([u1, p_idx, v]);
                    next.push([p_idx, u2, v]);
                }
            }
        }
        tris = next;
    }
    tris
}

/// Builds a synthetic instance and its ground truth. Deterministic per seed.
pub fn generate(spec: &SyntheticSpec) -> Result<(Instance, GroundTruth), EvalError> {
    spec.validate()?;
    let g = spec.grid_per_edge;
    let k = spec.k;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let lattice: Vec<[usize; 3]> = (0..=g)
        .flat_map(|a| (0..=g - a).map(move |b| [a, b, g - a - b]))
        .collect();
    let to_comp = |p: [usize; 3]| p.map(|x| x as f64 / g as f64);

    let mut anchors_idx = vec![[g, 0, 0], [0, g, 0], [0, 0, g]];
    let mut interior: Vec<[usize; 3]> = lattice
        .iter()
        .copied()
        .filter(|p| p.iter().all(|&x| x > 0))
        .collect();
    if interior.len() < k - 3 {
        return Err(EvalError::LatticeTooCoarse { grid: g, k });
    }
    interior.shuffle(&mut rng);
    anchors_idx.extend(interior.into_iter().take(k - 3));
    let anchors: Vec<[f64; 3]> = anchors_idx.iter().map(|&p| to_comp(p)).collect();
    let anchor_xy: Vec<(f64, f64)> = anchors.iter().map(|&c| cartesian(c)).collect();
    let tris = triangulate(&anchor_xy);

    let q = QGrid::linear(spec.q_min, spec.q_max, spec.n_q)?;
    let span = spec.q_max - spec.q_min;
    let peaks: Vec<Vec<(f64, f64)>> = (0..k)
        .map(|_| {
            (0..spec.peaks_per_phase)
                .map(|_| {
                    let center = spec.q_min + span * rng.random_range(0.1..0.8);
                    let amplitude = rng.random_range(0.3..1.0);
                    (center, amplitude)
                })
                .collect()
        })
        .collect();
    let pattern = |phase: usize, lambda: f64, x: f64| -> f64 {
        // P(x / lambda): every peak moves up by lambda and widens with it
        let y = x / lambda;
        peaks[phase]
            .iter()
            .map(|&(c, amp)| {
                let sigma = spec.peak_width * c;
                amp * (-(y - c) * (y - c) / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    };

    let j_count = lattice.len();
    let n = q.len();
    let mut weights = Array2::zeros((k, j_count));
    let mut lambda = Array2::zeros((k, j_count));
    let mut signals = Array3::zeros((k, j_count, n));
    for (j, &p) in lattice.iter().enumerate() {
        let comp = to_comp(p);
        let xy = cartesian(comp);
        let (tri, coords) = tris
            .iter()
            .find_map(|t| {
                let l = barycentric(xy, anchor_xy[t[0]], anchor_xy[t[1]], anchor_xy[t[2]]);
                l.iter().all(|&x| x >= -1e-9).then_some((*t, l))
            })
            .expect("triangulation covers the simplex");
        let mut coords = coords.map(|x| if x.abs() < GEOMETRY_TOLERANCE { 0.0 } else { x.max(0.0) });
        let total: f64 = coords.iter().sum();
        coords.iter_mut().for_each(|x| *x /= total);
        for (slot, &phase) in tri.iter().enumerate() {
            weights[[phase, j]] = coords[slot];
        }
        for phase in 0..k {
            let (ax, ay) = anchor_xy[phase];
            let dist = ((xy.0 - ax).powi(2) + (xy.1 - ay).powi(2)).sqrt();
            let lam = 1.0 + (spec.alloy_max - 1.0) * dist;
            lambda[[phase, j]] = lam;
            let wgt = weights[[phase, j]];
            if wgt == 0.0 {
                continue;
            }
            for (i, &x) in q.values().iter().enumerate() {
                signals[[phase, j, i]] = wgt * pattern(phase, lam, x);
            }
        }
    }

    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let mut samples = Vec::with_capacity(j_count);
    for (j, &p) in lattice.iter().enumerate() {
        let intensity: Vec<f64> = (0..n)
            .map(|i| {
                let clean: f64 = (0..k).map(|phase| signals[[phase, j, i]]).sum();
                match &noise {
                    Some(dist) => (clean + dist.sample(&mut rng)).max(0.0),
                    None => clean,
                }
            })
            .collect();
        samples.push(Sample {
            id: format!("{j:04}"),
            composition: to_comp(p).to_vec(),
            intensity,
        });
    }
    let elements: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let instance = Instance::new(elements.clone(), q.clone(), samples)?;
    let truth = GroundTruth {
        elements,
        q,
        anchors,
        weights,
        lambda,
        signals,
        intensity_total: instance.total_intensity(),
    };
    Ok((instance, truth))
}

/// Per-phase modeled signal of a solution on the measured grid `q`,
/// `K x J x N`.
pub fn solution_phase_signals(solution: &Solution, q: &QGrid) -> Array3<f64> {
    let plan = ResamplePlan::between(q, &solution.log_q);
    let (_, k, j) = solution.h.dim();
    let mut out = Array3::zeros((k, j, q.len()));
    for phase in 0..k {
        let on_log = phase_reconstruction(&solution.w, &solution.h, phase);
        let on_q = plan
            .from_log_columns(&on_log)
            .expect("solution grid matches its own factors");
        for jj in 0..j {
            for (i, v) in on_q.column(jj).iter().enumerate() {
                out[[phase, jj, i]] = *v;
            }
        }
    }
    out
}

/// Permutation-matched squared error between modeled and true per-phase
/// signals (both `K x J x N`), divided by `total`.
pub fn matched_l2_signals(model: &Array3<f64>, truth: &Array3<f64>, total: f64) -> Result<f64, EvalError> {
    let (km, jm, _) = model.dim();
    let (kt, jt, _) = truth.dim();
    if km != kt {
        return Err(EvalError::PhaseCountMismatch {
            solution: km,
            truth: kt,
        });
    }
    if jm != jt || model.dim() != truth.dim() {
        return Err(EvalError::SampleCountMismatch {
            solution: jm,
            truth: jt,
        });
    }
    let cost: Vec<Vec<f64>> = (0..km)
        .map(|a| {
            (0..kt)
                .map(|b| {
                    model
                        .index_axis(Axis(0), a)
                        .iter()
                        .zip(truth.index_axis(Axis(0), b).iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum()
                })
                .collect()
        })
        .collect();
    let (_, best) = min_cost_assignment(&cost);
    Ok(best / total)
}

/// Matched L2 loss of a solution against the ground truth that generated its
/// instance. The solution is mapped back to the measured grid first.
pub fn matched_l2(solution: &Solution, truth: &GroundTruth) -> Result<f64, EvalError> {
    let model = solution_phase_signals(solution, &truth.q);
    matched_l2_signals(&model, &truth.signals, truth.intensity_total)
}

/// Fraction of samples with at most `n_el` present phases.
pub fn gibbs_fraction(presence: &PresenceMatrix, n_el: usize) -> f64 {
    let counts = presence.counts();
    if counts.is_empty() {
        return 1.0;
    }
    counts.iter().filter(|&&c| c <= n_el).count() as f64 / counts.len() as f64
}

pub fn gibbs_percentage(solution: &Solution, n_el: usize, threshold: f64) -> f64 {
    gibbs_fraction(&solution_presence(solution, threshold), n_el)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_anchors_mix_by_composition() {
        let spec = SyntheticSpec {
            grid_per_edge: 6,
            n_q: 80,
            ..SyntheticSpec::default()
        };
        let (inst, truth) = generate(&spec).unwrap();
        assert_eq!(inst.n_samples(), 28);
        // with three corner anchors the barycentric weights are the composition
        let a = inst.intensity_matrix();
        for (j, sample) in inst.samples().iter().enumerate() {
            for phase in 0..3 {
                assert!((truth.weights[[phase, j]] - sample.composition[phase]).abs() < 1e-12);
            }
            // alloy_max = 1: every sample is the weighted sum of fixed patterns
            let corner = |phase: usize| {
                let idx = (0..inst.n_samples())
                    .find(|&jj| inst.samples()[jj].composition[phase] == 1.0)
                    .unwrap();
                a.column(idx).to_owned()
            };
            let expected = corner(0) * sample.composition[0]
                + corner(1) * sample.composition[1]
                + corner(2) * sample.composition[2];
            for (x, y) in a.column(j).iter().zip(expected.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn at_most_three_phases_per_sample() {
        for k in 3..=7 {
            let spec = SyntheticSpec {
                k,
                grid_per_edge: 10,
                n_q: 60,
                alloy_max: 1.05,
                seed: k as u64,
                ..SyntheticSpec::default()
            };
            let (inst, truth) = generate(&spec).unwrap();
            let counts = truth.presence(0.0).counts();
            assert!(counts.iter().all(|&c| c <= 3), "k={k}: {counts:?}");
            // ground-truth signals add up to the noiseless intensities
            let a = inst.intensity_matrix();
            let sum = truth.signals.sum_axis(Axis(0));
            for j in 0..inst.n_samples() {
                for i in 0..inst.q().len() {
                    assert!((sum[[j, i]] - a[[i, j]]).abs() < 1e-9);
                }
                let w: f64 = truth.weights.column(j).sum();
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec {
            k: 5,
            grid_per_edge: 8,
            n_q: 50,
            noise_sigma: 0.01,
            seed: 42,
            ..SyntheticSpec::default()
        };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn spec_errors() {
        let coarse = SyntheticSpec {
            k: 5,
            grid_per_edge: 3,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            generate(&coarse).unwrap_err(),
            EvalError::LatticeTooCoarse { grid: 3, k: 5 }
        );
        let low = SyntheticSpec {
            alloy_max: 0.9,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&low), Err(EvalError::Spec(_))));
    }

    #[test]
    fn lambda_grows_with_distance() {
        let spec = SyntheticSpec {
            grid_per_edge: 4,
            n_q: 40,
            alloy_max: 1.02,
            ..SyntheticSpec::default()
        };
        let (inst, truth) = generate(&spec).unwrap();
        for (j, s) in inst.samples().iter().enumerate() {
            if s.composition[0] == 1.0 {
                assert_eq!(truth.lambda[[0, j]], 1.0);
                assert!((truth.lambda[[1, j]] - 1.02).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangulation_splits_on_edges() {
        // fourth point on the centre, fifth on the edge between it and a corner
        let pts = vec![
            (0.0, 0.0),
            (1.0, 0.0),
            (0.5, SQRT3_2),
            (0.5, SQRT3_2 / 3.0),
            (0.25, SQRT3_2 / 6.0),
        ];
        let tris = triangulate(&pts);
        assert_eq!(tris.len(), 5);
        let area = |t: &[usize; 3]| {
            let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
            ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1)).abs() / 2.0
        };
        let total: f64 = tris.iter().map(area).sum();
        assert!((total - SQRT3_2 / 2.0).abs() < 1e-12);
    }
}
