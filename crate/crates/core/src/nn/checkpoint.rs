//! JSON checkpoint: network parameters, the time grid the outputs are bound
//! to, and the run metadata needed to reproduce it.
//!
//! ```text
//! { "format_version": 1,
//!   "dims": [3, 64, 128, 100],
//!   "activations": ["relu", "relu", "identity"],
//!   "weights": [[[w00, w01, ...], ...], ...],   // per layer, out × in rows
//!   "biases": [[b0, ...], ...],
//!   "time_grid": [0.0, ...],
//!   "metadata": { ... } }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::matrix::Matrix;
use super::mlp::{Activation, DenseLayer, Mlp};
use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    /// Always "f64".
    pub precision: String,
    /// SHA-256 of the training dataset's manifest JSON.
    pub dataset_manifest_sha256: String,
    pub m: f64,
    pub omega: f64,
    pub training_hbars: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub time_grid: TimeGrid,
    pub metadata: CheckpointMetadata,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format_version: u32,
    dims: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<&'a [f64]>,
    time_grid: &'a TimeGrid,
    metadata: &'a CheckpointMetadata,
}

#[derive(Deserialize)]
struct CheckpointIn {
    format_version: Option<u32>,
    dims: Option<Vec<usize>>,
    activations: Option<Vec<Activation>>,
    weights: Option<Vec<Vec<Vec<f64>>>>,
    biases: Option<Vec<Vec<f64>>>,
    time_grid: Option<Vec<f64>>,
    metadata: Option<CheckpointMetadata>,
}

fn missing(field: &str) -> Error {
    Error::validation(format!("checkpoint is missing field `{field}`"))
}

impl Checkpoint {
    pub fn new(mlp: Mlp, time_grid: TimeGrid, metadata: CheckpointMetadata) -> Result<Self> {
        if mlp.output_dim() != time_grid.len() {
            return Err(Error::validation(format!(
                "network has {} outputs but the time grid has {} points",
                mlp.output_dim(),
                time_grid.len()
            )));
        }
        Ok(Self {
            mlp,
            time_grid,
            metadata,
        })
    }

    pub fn to_json(&self) -> String {
        let out = CheckpointOut {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dims: self.mlp.dims(),
            activations: self.mlp.activations(),
            weights: self
                .mlp
                .layers()
                .iter()
                .map(|l| l.weights.to_rows())
                .collect(),
            biases: self
                .mlp
                .layers()
                .iter()
                .map(|l| l.biases.as_slice())
                .collect(),
            time_grid: &self.time_grid,
            metadata: &self.metadata,
        };
        let mut text = serde_json::to_string(&out).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: CheckpointIn = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("checkpoint is not valid JSON: {e}")))?;

        let version = raw
            .format_version
            .ok_or_else(|| missing("format_version"))?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "checkpoint field `format_version` is {version}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let dims = raw.dims.ok_or_else(|| missing("dims"))?;
        let activations = raw.activations.ok_or_else(|| missing("activations"))?;
        let weights = raw.weights.ok_or_else(|| missing("weights"))?;
        let biases = raw.biases.ok_or_else(|| missing("biases"))?;
        let grid_points = raw.time_grid.ok_or_else(|| missing("time_grid"))?;
        let metadata = raw.metadata.ok_or_else(|| missing("metadata"))?;

        if dims.len() < 2 {
            return Err(Error::validation(format!(
                "checkpoint field `dims` needs at least 2 entries, got {dims:?}"
            )));
        }
        let n_layers = dims.len() - 1;
        for (field, len) in [
            ("activations", activations.len()),
            ("weights", weights.len()),
            ("biases", biases.len()),
        ] {
            if len != n_layers {
                return Err(Error::validation(format!(
                    "checkpoint field `{field}` has {len} layers but `dims` implies {n_layers}"
                )));
            }
        }

        let mut layers = Vec::with_capacity(n_layers);
        for (k, ((w, b), act)) in weights.into_iter().zip(biases).zip(activations).enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            if w.len() != fan_out || w.iter().any(|row| row.len() != fan_in) {
                return Err(Error::validation(format!(
                    "checkpoint field `weights[{k}]` is not {fan_out}x{fan_in} as `dims` requires"
                )));
            }
            if b.len() != fan_out {
                return Err(Error::validation(format!(
                    "checkpoint field `biases[{k}]` has {} entries, `dims` requires {fan_out}",
                    b.len()
                )));
            }
            layers.push(DenseLayer::new(Matrix::from_rows(&w)?, b, act)?);
        }
        let mlp = Mlp::from_layers(layers)?;
        let time_grid = TimeGrid::new(grid_points).map_err(|e| {
            Error::validation(format!("checkpoint field `time_grid` is invalid: {e}"))
        })?;
        if time_grid.len() != mlp.output_dim() {
            return Err(Error::validation(format!(
                "checkpoint field `time_grid` has {} points but the output layer has {}",
                time_grid.len(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp,
            time_grid,
            metadata,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
