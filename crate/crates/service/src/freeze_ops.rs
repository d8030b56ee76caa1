//! Incremental edits to a [`FreezeSpec`] as sent by clients.

use phasefd::{FreezeSpec, Instance, ResamplePlan};
use serde::{Deserialize, Serialize};

/// Pin one basis column of `W`, either to explicit log-grid values or to a
/// sample's pattern resampled onto the log grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinColumn {
    pub basis: usize,
    #[serde(default)]
    pub sample_id: Option<String>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationRef {
    pub shift: usize,
    pub basis: usize,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinActivation {
    pub shift: usize,
    pub basis: usize,
    pub sample_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeOps {
    #[serde(default)]
    pub pin_w: Vec<PinColumn>,
    #[serde(default)]
    pub release_w: Vec<usize>,
    #[serde(default)]
    pub pin_h: Vec<PinActivation>,
    #[serde(default)]
    pub release_h: Vec<ActivationRef>,
}

/// Model dimensions the edits are checked against.
pub struct Dims<'a> {
    pub instance: &'a Instance,
    pub plan: &'a ResamplePlan,
    pub k: usize,
    pub m: usize,
}

impl FreezeOps {
    pub fn is_empty(&self) -> bool {
        self == &FreezeOps::default()
    }

    /// Applies releases first, then pins.
    pub fn apply(&self, spec: &mut FreezeSpec, dims: &Dims<'_>) -> Result<(), String> {
        let j_count = dims.instance.n_samples();
        let n_log = dims.plan.dst().len();
        let sample = |id: &str| dims.instance.sample_index(id).ok_or_else(|| format!("unknown sample {id:?}"));
        let basis = |k: usize| {
            if k < dims.k {
                Ok(k)
            } else {
                Err(format!("basis {k} out of range for K={}", dims.k))
            }
        };
        let shift = |m: usize| {
            if m < dims.m {
                Ok(m)
            } else {
                Err(format!("shift {m} out of range for M={}", dims.m))
            }
        };
        for &k in &self.release_w {
            spec.release_w_column(basis(k)?);
        }
        for r in &self.release_h {
            let idx = [shift(r.shift)?, basis(r.basis)?, sample(&r.sample_id)?];
            if let Some(mask) = &mut spec.h_mask {
                mask[idx] = false;
            }
        }
        for pin in &self.pin_w {
            let k = basis(pin.basis)?;
            let values = match (&pin.sample_id, &pin.values) {
                (Some(id), None) => {
                    let j = sample(id)?;
                    dims.plan
                        .to_log(&dims.instance.samples()[j].intensity)
                        .map_err(|e| e.to_string())?
                }
                (None, Some(v)) => v.clone(),
                _ => return Err("pin_w needs exactly one of sample_id or values".into()),
            };
            if values.len() != n_log {
                return Err(format!("pin_w values have {} entries, log grid has {n_log}", values.len()));
            }
            if spec.w_mask.as_ref().is_some_and(|mask| mask.dim() != (n_log, dims.k)) {
                return Err("existing W pins do not match the model shape".into());
            }
            spec.pin_w_column(dims.k, k, &values);
        }
        for pin in &self.pin_h {
            let idx = (shift(pin.shift)?, basis(pin.basis)?, sample(&pin.sample_id)?);
            if spec.h_mask.as_ref().is_some_and(|mask| mask.dim() != (dims.m, dims.k, j_count)) {
                return Err("existing H pins do not match the model shape".into());
            }
            spec.pin_h((dims.m, dims.k, j_count), idx, pin.value);
        }
        Ok(())
    }
}
