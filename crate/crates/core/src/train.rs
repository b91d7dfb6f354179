//! Mini-batch MSE + Adam training of the trajectory network.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{manifest_json, split_indices, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, mse_loss, Activation, AdamConfig, AdamState, Checkpoint, CheckpointMetadata, Matrix,
    Mlp,
};
use crate::rng::{stream, stream_rng};

/// Widths of the two hidden layers; input is (x₀, p₀, ħ), output one value
/// per time-grid point.
pub const HIDDEN_DIMS: [usize; 2] = [64, 128];
pub const INPUT_DIM: usize = 3;

/// Rows evaluated per forward pass in [`evaluate_loss`].
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.001,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            alpha: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::validation(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Sample-weighted mean of the batch losses seen during each epoch.
    pub train_loss: Vec<f64>,
    /// Loss on the held-out split after each epoch; `None` when it is empty.
    pub val_loss: Vec<Option<f64>>,
    pub adam_steps: u64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub wall_time_secs: f64,
    /// Where the final parameters were written, when they were.
    pub checkpoint: Option<String>,
    /// Per dataset index, how many gradient updates the sample took part in.
    #[serde(skip)]
    pub gradient_contributions: Vec<u32>,
}

/// The fixed architecture for a grid of `t_steps` points.
pub fn architecture(t_steps: usize) -> (Vec<usize>, Vec<Activation>) {
    let dims = vec![INPUT_DIM, HIDDEN_DIMS[0], HIDDEN_DIMS[1], t_steps];
    (
        dims,
        vec![Activation::Relu, Activation::Relu, Activation::Identity],
    )
}

/// Network inputs for the given samples, raw (x₀, p₀, ħ) rows.
pub fn input_matrix(dataset: &Dataset, indices: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(indices.len(), INPUT_DIM);
    for (r, &i) in indices.iter().enumerate() {
        let s = &dataset.samples()[i];
        m.row_mut(r).copy_from_slice(&[s.x0, s.p0, s.hbar]);
    }
    m
}

pub fn target_matrix(dataset: &Dataset, indices: &[usize]) -> Matrix {
    let t = dataset.time_grid().len();
    let mut m = Matrix::zeros(indices.len(), t);
    for (r, &i) in indices.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&dataset.samples()[i].label);
    }
    m
}

fn check_compatible(mlp: &Mlp, dataset: &Dataset) -> Result<()> {
    if mlp.input_dim() != INPUT_DIM {
        return Err(Error::validation(format!(
            "network takes {} inputs, expected {INPUT_DIM}",
            mlp.input_dim()
        )));
    }
    if mlp.output_dim() != dataset.time_grid().len() {
        return Err(Error::validation(format!(
            "network has {} outputs but the dataset grid has {} points",
            mlp.output_dim(),
            dataset.time_grid().len()
        )));
    }
    Ok(())
}

/// Mean squared error over every (sample, time point) entry of `dataset`.
pub fn evaluate_loss(mlp: &Mlp, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    check_compatible(mlp, dataset)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut weighted = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let pred = mlp.predict(&input_matrix(dataset, chunk))?;
        let (loss, _) = mse_loss(&pred, &target_matrix(dataset, chunk))?;
        weighted += loss * chunk.len() as f64;
    }
    Ok(weighted / dataset.len() as f64)
}

/// Trains a freshly initialised network on the training part of a
/// stratified split of `dataset`. The held-out part is only ever evaluated.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    let started = Instant::now();
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("cannot train on an empty dataset"));
    }
    let (train_idx, val_idx) = split_indices(dataset, config.val_fraction, config.seed)?;
    if config.batch_size > train_idx.len() {
        return Err(Error::validation(format!(
            "batch_size {} exceeds the {} training samples left after the split",
            config.batch_size,
            train_idx.len()
        )));
    }

    let (dims, acts) = architecture(dataset.time_grid().len());
    let mut mlp = Mlp::init(&dims, &acts, config.seed)?;
    check_compatible(&mlp, dataset)?;
    let mut adam = AdamState::for_mlp(config.adam(), &mlp)?;
    let val_set = dataset.subset(&val_idx);

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::with_capacity(config.epochs),
        adam_steps: 0,
        train_indices: train_idx.clone(),
        val_indices: val_idx,
        wall_time_secs: 0.0,
        checkpoint: None,
        gradient_contributions: vec![0; dataset.len()],
    };

    let mut order = train_idx;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, stream::SHUFFLE, epoch as u64));
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = input_matrix(dataset, batch);
            let y = target_matrix(dataset, batch);
            let (pred, cache) = mlp.forward(&x)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            let grads = mlp.backward(&cache, &grad)?;
            adam_step(&mut mlp, &grads, &mut adam)?;
            weighted += loss * batch.len() as f64;
            for &i in batch {
                report.gradient_contributions[i] += 1;
            }
        }
        let train_loss = weighted / order.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::validation(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        report.train_loss.push(train_loss);
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(&mlp, &val_set)?)
        };
        report.val_loss.push(val_loss);
        log::debug!(
            "epoch {:>4}: train {train_loss:.6e} val {val_loss:?}",
            epoch + 1
        );
    }
    report.adam_steps = adam.step();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((mlp, report))
}

pub fn manifest_sha256(dataset: &Dataset) -> String {
    Sha256::digest(manifest_json(dataset).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Bundles a trained network with the grid and run metadata.
pub fn make_checkpoint(mlp: Mlp, dataset: &Dataset, config: &TrainConfig) -> Result<Checkpoint> {
    let gen = &dataset.manifest().config;
    let metadata = CheckpointMetadata {
        seed: config.seed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        val_fraction: config.val_fraction,
        adam: config.adam(),
        precision: "f64".to_string(),
        dataset_manifest_sha256: manifest_sha256(dataset),
        m: gen.m,
        omega: gen.omega,
        training_hbars: gen.hbar_values.clone(),
    };
    Checkpoint::new(mlp, dataset.time_grid().clone(), metadata)
}
