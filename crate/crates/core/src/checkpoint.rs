//! Checkpoint persistence: everything needed to reproduce a sampler.
//!
//! The file is JSON with row-major flat arrays of doubles per named weight,
//! the per-step binary masks, the two-entry scale gates ordered
//! [v_stack, x_stack], the integrator step size, and the seed the run was
//! launched with. Masks ride along because redrawing them would produce a
//! different (non-inverse-consistent) operator.

use crate::integrator::MaskSchedule;
use crate::nets::{Field, Layout, NetParams, Stack};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayField {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub n: usize,
    #[serde(rename = "M")]
    pub n_steps: usize,
    pub n_hidden: usize,
    pub masks: Vec<Vec<u8>>,
    pub v_stack: BTreeMap<String, ArrayField>,
    pub x_stack: BTreeMap<String, ArrayField>,
    /// Scale gates, ordered [v_stack, x_stack].
    pub lambda_s: [f64; 2],
    pub lambda_q: [f64; 2],
    pub epsilon: f64,
    pub seed: u64,
}

const WEIGHT_FIELDS: [Field; 12] = [
    Field::W1,
    Field::W2,
    Field::W3,
    Field::B1,
    Field::W4,
    Field::B4,
    Field::Ws,
    Field::Bs,
    Field::Wq,
    Field::Bq,
    Field::Wt,
    Field::Bt,
];

impl Checkpoint {
    pub fn from_params(params: &NetParams, masks: &MaskSchedule, seed: u64) -> Self {
        let layout = params.layout();
        let stack_map = |stack: Stack| {
            let mut map = BTreeMap::new();
            for &f in &WEIGHT_FIELDS {
                let (rows, cols) = layout.shape(f);
                let shape = if cols == 1 { vec![rows] } else { vec![rows, cols] };
                map.insert(
                    f.name().to_string(),
                    ArrayField { shape, data: params.field(stack, f).to_vec() },
                );
            }
            map
        };
        Checkpoint {
            version: 1,
            n: layout.n,
            n_steps: params.n_steps(),
            n_hidden: layout.n_hidden,
            masks: masks
                .rows()
                .iter()
                .map(|row| row.iter().map(|&m| m as u8).collect())
                .collect(),
            v_stack: stack_map(Stack::V),
            x_stack: stack_map(Stack::X),
            lambda_s: [
                params.field(Stack::V, Field::LambdaS)[0],
                params.field(Stack::X, Field::LambdaS)[0],
            ],
            lambda_q: [
                params.field(Stack::V, Field::LambdaQ)[0],
                params.field(Stack::X, Field::LambdaQ)[0],
            ],
            epsilon: params.step_size(),
            seed,
        }
    }

    pub fn into_params(&self) -> Result<(NetParams, MaskSchedule), CheckpointError> {
        if self.version != 1 {
            return Err(CheckpointError::Version(self.version));
        }
        if self.n == 0 || self.n_hidden == 0 || self.n_steps == 0 {
            return Err(CheckpointError::Malformed("zero dimension".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(CheckpointError::Malformed(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        let layout = Layout { n: self.n, n_hidden: self.n_hidden };
        let mut params = NetParams::init(self.n, self.n_hidden, self.n_steps, self.epsilon, 0);

        for (stack, map) in [(Stack::V, &self.v_stack), (Stack::X, &self.x_stack)] {
            for &f in &WEIGHT_FIELDS {
                let arr = map.get(f.name()).ok_or_else(|| {
                    CheckpointError::Malformed(format!("missing field {}", f.name()))
                })?;
                let expected = layout.field_len(f);
                let flat: usize = arr.shape.iter().product();
                if flat != expected || arr.data.len() != expected {
                    return Err(CheckpointError::Malformed(format!(
                        "field {} has {} values, expected {expected}",
                        f.name(),
                        arr.data.len()
                    )));
                }
                params.field_mut(stack, f).copy_from_slice(&arr.data);
            }
        }
        params.field_mut(Stack::V, Field::LambdaS)[0] = self.lambda_s[0];
        params.field_mut(Stack::X, Field::LambdaS)[0] = self.lambda_s[1];
        params.field_mut(Stack::V, Field::LambdaQ)[0] = self.lambda_q[0];
        params.field_mut(Stack::X, Field::LambdaQ)[0] = self.lambda_q[1];

        if self.masks.len() != self.n_steps {
            return Err(CheckpointError::Malformed(format!(
                "{} masks for {} steps",
                self.masks.len(),
                self.n_steps
            )));
        }
        let mut rows = Vec::with_capacity(self.masks.len());
        for (t, row) in self.masks.iter().enumerate() {
            if row.len() != self.n {
                return Err(CheckpointError::Malformed(format!(
                    "mask {t} has length {}, expected {}",
                    row.len(),
                    self.n
                )));
            }
            let ones = row.iter().filter(|&&m| m == 1).count();
            if ones != self.n / 2 || row.iter().any(|&m| m > 1) {
                return Err(CheckpointError::Malformed(format!(
                    "mask {t} must be binary with exactly {} ones",
                    self.n / 2
                )));
            }
            rows.push(row.iter().map(|&m| m as f64).collect());
        }
        Ok((params, MaskSchedule::from_rows(rows)))
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }
}
