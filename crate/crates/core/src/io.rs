//! JSON documents for instances, solutions, ground truth and freeze specs.
//!
//! Matrices are nested arrays in the crate's dimension convention: `W` is
//! `N_log x K`, `H` is `M x K x J` (shift-major, so an `M = 1` document is a
//! single `K x J` slice wrapped in one more array). Floats are written in the
//! shortest form that parses back to the identical `f64`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::GroundTruth;
use crate::model::{validate_instance, FreezeSpec, Instance, ModelError, QGrid, ShiftSummary, Solution, SolverConfig};
use crate::solver::reconstruct;

pub const SOLUTION_FORMAT: &str = "phasefd-solution/1";
pub const TRUTH_FORMAT: &str = "phasefd-truth/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("document shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDocument {
    pub id: String,
    pub composition: Vec<f64>,
    pub intensity: Vec<f64>,
}

/// Measured library as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub elements: Vec<String>,
    pub q: Vec<f64>,
    pub samples: Vec<SampleDocument>,
}

impl From<&Instance> for InstanceDocument {
    fn from(inst: &Instance) -> Self {
        InstanceDocument {
            elements: inst.elements().to_vec(),
            q: inst.q().values().to_vec(),
            samples: inst
                .samples()
                .iter()
                .map(|s| SampleDocument {
                    id: s.id.clone(),
                    composition: s.composition.clone(),
                    intensity: s.intensity.clone(),
                })
                .collect(),
        }
    }
}

impl InstanceDocument {
    pub fn validate(self) -> Result<Instance, ModelError> {
        validate_instance(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummaryDocument {
    pub shift: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

/// Solver output as stored on disk. The reconstruction is not stored; it is
/// recomputed from `W` and `H` when read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub format: String,
    pub log_q: Vec<f64>,
    pub delta: f64,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<Vec<f64>>>,
    pub loss_trace: Vec<f64>,
    pub segments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub shift_summary: ShiftSummaryDocument,
    pub presence: Vec<Vec<bool>>,
    pub config: SolverConfig,
}

impl From<&Solution> for SolutionDocument {
    fn from(s: &Solution) -> Self {
        SolutionDocument {
            format: SOLUTION_FORMAT.to_string(),
            log_q: s.log_q.values().to_vec(),
            delta: s.delta(),
            w: rows2(&s.w),
            h: rows3(&s.h),
            loss_trace: s.loss_trace.clone(),
            segments: s.segments.clone(),
            iterations: s.iterations,
            converged: s.converged,
            shift_summary: ShiftSummaryDocument {
                shift: rows2(&s.shift_summary.shift),
                lambda: rows2(&s.shift_summary.lambda),
            },
            presence: rows2(&s.presence),
            config: s.config.clone(),
        }
    }
}

impl SolutionDocument {
    pub fn into_solution(self) -> Result<Solution, IoError> {
        let log_q = QGrid::new(self.log_q)?;
        let w = array2(&self.w, "W")?;
        let h = array3(&self.h, "H")?;
        if w.nrows() != log_q.len() {
            return Err(IoError::Shape(format!(
                "W has {} rows, log_q has {} points",
                w.nrows(),
                log_q.len()
            )));
        }
        let r = reconstruct(&w, &h).map_err(|e| IoError::Shape(e.to_string()))?;
        Ok(Solution {
            log_q,
            w,
            h,
            r,
            loss_trace: self.loss_trace,
            segments: self.segments,
            iterations: self.iterations,
            converged: self.converged,
            shift_summary: ShiftSummary {
                shift: array2(&self.shift_summary.shift, "shift")?,
                lambda: array2(&self.shift_summary.lambda, "lambda")?,
            },
            presence: array2(&self.presence, "presence")?,
            config: self.config,
        })
    }
}

/// Ground truth of a synthetic instance as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDocument {
    pub format: String,
    pub elements: Vec<String>,
    pub q: Vec<f64>,
    pub anchors: Vec<[f64; 3]>,
    pub weights: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    /// `K x J x N`.
    pub signals: Vec<Vec<Vec<f64>>>,
    pub intensity_total: f64,
}

impl From<&GroundTruth> for GroundTruthDocument {
    fn from(t: &GroundTruth) -> Self {
        GroundTruthDocument {
            format: TRUTH_FORMAT.to_string(),
            elements: t.elements.clone(),
            q: t.q.values().to_vec(),
            anchors: t.anchors.clone(),
            weights: rows2(&t.weights),
            lambda: rows2(&t.lambda),
            signals: rows3(&t.signals),
            intensity_total: t.intensity_total,
        }
    }
}

impl GroundTruthDocument {
    pub fn into_truth(self) -> Result<GroundTruth, IoError> {
        Ok(GroundTruth {
            elements: self.elements,
            q: QGrid::new(self.q)?,
            anchors: self.anchors,
            weights: array2(&self.weights, "weights")?,
            lambda: array2(&self.lambda, "lambda")?,
            signals: array3(&self.signals, "signals")?,
            intensity_total: self.intensity_total,
        })
    }
}

/// Freeze settings as stored on disk; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FreezeDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_mask: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_mask: Option<Vec<Vec<Vec<bool>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_values: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_init: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_init: Option<Vec<Vec<Vec<f64>>>>,
}

impl From<&FreezeSpec> for FreezeDocument {
    fn from(f: &FreezeSpec) -> Self {
        FreezeDocument {
            w_mask: f.w_mask.as_ref().map(rows2),
            w_values: f.w_values.as_ref().map(rows2),
            h_mask: f.h_mask.as_ref().map(rows3),
            h_values: f.h_values.as_ref().map(rows3),
            w_init: f.w_init.as_ref().map(rows2),
            h_init: f.h_init.as_ref().map(rows3),
        }
    }
}

impl FreezeDocument {
    pub fn into_spec(self) -> Result<FreezeSpec, IoError> {
        Ok(FreezeSpec {
            w_mask: self.w_mask.as_deref().map(|v| array2(v, "w_mask")).transpose()?,
            w_values: self.w_values.as_deref().map(|v| array2(v, "w_values")).transpose()?,
            h_mask: self.h_mask.as_deref().map(|v| array3(v, "h_mask")).transpose()?,
            h_values: self.h_values.as_deref().map(|v| array3(v, "h_values")).transpose()?,
            w_init: self.w_init.as_deref().map(|v| array2(v, "w_init")).transpose()?,
            h_init: self.h_init.as_deref().map(|v| array3(v, "h_init")).transpose()?,
        })
    }
}

pub fn rows2<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn rows3<T: Clone>(a: &Array3<T>) -> Vec<Vec<Vec<T>>> {
    a.outer_iter().map(|s| rows2(&s.to_owned())).collect()
}

pub fn array2<T: Clone>(rows: &[Vec<T>], name: &str) -> Result<Array2<T>, IoError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(IoError::Shape(format!("{name} has ragged rows")));
    }
    let flat: Vec<T> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| IoError::Shape(format!("{name}: {e}")))
}

pub fn array3<T: Clone>(slabs: &[Vec<Vec<T>>], name: &str) -> Result<Array3<T>, IoError> {
    let nrows = slabs.first().map_or(0, Vec::len);
    let ncols = slabs.first().and_then(|s| s.first()).map_or(0, Vec::len);
    if slabs
        .iter()
        .any(|s| s.len() != nrows || s.iter().any(|r| r.len() != ncols))
    {
        return Err(IoError::Shape(format!("{name} is ragged")));
    }
    let flat: Vec<T> = slabs.iter().flatten().flatten().cloned().collect();
    Array3::from_shape_vec((slabs.len(), nrows, ncols), flat).map_err(|e| IoError::Shape(format!("{name}: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_instance(path: &Path) -> Result<Instance, IoError> {
    let doc: InstanceDocument = read_json(path)?;
    Ok(doc.validate()?)
}

pub fn write_instance(path: &Path, instance: &Instance) -> Result<(), IoError> {
    write_json(path, &InstanceDocument::from(instance))
}

pub fn read_solution(path: &Path) -> Result<Solution, IoError> {
    let doc: SolutionDocument = read_json(path)?;
    doc.into_solution()
}

pub fn write_solution(path: &Path, solution: &Solution) -> Result<(), IoError> {
    write_json(path, &SolutionDocument::from(solution))
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, IoError> {
    let doc: GroundTruthDocument = read_json(path)?;
    doc.into_truth()
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<(), IoError> {
    write_json(path, &GroundTruthDocument::from(truth))
}

pub fn read_freeze(path: &Path) -> Result<FreezeSpec, IoError> {
    let doc: FreezeDocument = read_json(path)?;
    doc.into_spec()
}

/// Either kind of document that carries per-phase signals.
#[derive(Debug, Clone)]
pub enum PhaseDocument {
    Solution(Box<Solution>),
    Truth(Box<GroundTruth>),
}

/// Reads a solution or a ground-truth document, telling them apart by their
/// `format` field.
pub fn read_phase_document(path: &Path) -> Result<PhaseDocument, IoError> {
    let value: serde_json::Value = read_json(path)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(TRUTH_FORMAT) => {
            let doc: GroundTruthDocument = serde_json::from_value(value)?;
            Ok(PhaseDocument::Truth(Box::new(doc.into_truth()?)))
        }
        _ => {
            let doc: SolutionDocument = serde_json::from_value(value)?;
            Ok(PhaseDocument::Solution(Box::new(doc.into_solution()?)))
        }
    }
}
