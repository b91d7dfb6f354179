//! Labelled trajectory datasets: generation, stratified splitting, and the
//! CSV + JSON-manifest file pair.
//!
//! File layout for a dataset written to `name.csv`:
//!
//! - `name.csv`: header `x0,p0,hbar,x_t_000,...,x_t_{T-1}`, one sample per row.
//! - `name.manifest.json`: `format_version`, the generation config, the
//!   explicit time grid, the sample count and the generator string.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_trajectory, OscillatorParams, PhaseState, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub hbar_values: Vec<f64>,
    pub num_ic_per_hbar: usize,
    pub ic_low: f64,
    pub ic_high: f64,
    pub t_max: f64,
    pub t_steps: usize,
    pub m: f64,
    pub omega: f64,
    pub seed: u64,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hbar_values.is_empty() {
            return Err(Error::validation("hbar_values must not be empty"));
        }
        for (k, &h) in self.hbar_values.iter().enumerate() {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::validation(format!(
                    "hbar_values[{k}] must be finite and > 0, got {h}"
                )));
            }
            if self.hbar_values[..k].contains(&h) {
                return Err(Error::validation(format!("hbar_values contains {h} twice")));
            }
        }
        if self.num_ic_per_hbar == 0 {
            return Err(Error::validation("num_ic_per_hbar must be positive"));
        }
        if !(self.ic_low.is_finite() && self.ic_high.is_finite() && self.ic_low < self.ic_high) {
            return Err(Error::validation(format!(
                "initial-condition box needs finite ic_low < ic_high, got [{}, {})",
                self.ic_low, self.ic_high
            )));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::validation(format!(
                "t_max must be finite and > 0, got {}",
                self.t_max
            )));
        }
        if self.t_steps < 2 {
            return Err(Error::validation(format!(
                "t_steps must be at least 2, got {}",
                self.t_steps
            )));
        }
        OscillatorParams::new(self.m, self.omega, 0.0)?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::linspace(0.0, self.t_max, self.t_steps)
    }
}

/// Generation record shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenerationConfig,
    pub time_grid: TimeGrid,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x0: f64,
    pub p0: f64,
    pub hbar: f64,
    /// ⟨x̂(t)⟩ on the dataset's time grid.
    pub label: Vec<f64>,
}

impl Sample {
    pub fn trajectory(&self, grid: &TimeGrid) -> Result<Trajectory> {
        Trajectory::new(grid.clone(), self.label.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    manifest: Manifest,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, manifest: Manifest) -> Result<Self> {
        let t = manifest.time_grid.len();
        if t != manifest.config.t_steps {
            return Err(Error::validation(format!(
                "manifest time grid has {t} points but t_steps is {}",
                manifest.config.t_steps
            )));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.label.len() != t {
                return Err(Error::validation(format!(
                    "sample {k} label has {} values, expected {t}",
                    s.label.len()
                )));
            }
            let finite = s.x0.is_finite() && s.p0.is_finite() && s.hbar.is_finite();
            if !finite || s.label.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "sample {k} contains a non-finite value"
                )));
            }
        }
        Ok(Self { samples, manifest })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.manifest.time_grid
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same manifest, samples picked by index in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            manifest: self.manifest.clone(),
        }
    }

    /// Sample indices grouped by ħ, strata in order of first appearance.
    pub fn strata(&self) -> Vec<(f64, Vec<usize>)> {
        let mut order: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<u64, usize> = HashMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let k = *slot.entry(s.hbar.to_bits()).or_insert_with(|| {
                order.push((s.hbar, Vec::new()));
                order.len() - 1
            });
            order[k].1.push(i);
        }
        order
    }
}

/// `n` pairs with both coordinates drawn independently from `[low, high)`.
pub fn sample_initial_conditions<R: rand::Rng + ?Sized>(
    n: usize,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if !(low.is_finite() && high.is_finite() && low < high) {
        return Err(Error::validation(format!(
            "sampling box needs finite low < high, got [{low}, {high})"
        )));
    }
    let dist = Uniform::new(low, high);
    Ok((0..n)
        .map(|_| (dist.sample(rng), dist.sample(rng)))
        .collect())
}

fn generate_sample(config: &GenerationConfig, grid: &TimeGrid, index: usize) -> Result<Sample> {
    let hbar = config.hbar_values[index / config.num_ic_per_hbar];
    let mut rng = stream_rng(config.seed, stream::INITIAL_CONDITIONS, index as u64);
    let (x0, p0) = sample_initial_conditions(1, config.ic_low, config.ic_high, &mut rng)?[0];
    let params = OscillatorParams::new(config.m, config.omega, hbar)?;
    let label = integrate_trajectory(PhaseState::new(x0, p0), grid, &params)?.into_values();
    Ok(Sample {
        x0,
        p0,
        hbar,
        label,
    })
}

fn manifest_for(config: &GenerationConfig) -> Result<Manifest> {
    config.validate()?;
    Ok(Manifest {
        time_grid: config.time_grid()?,
        config: config.clone(),
        generator: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
    })
}

/// Sample `k` belongs to `hbar_values[k / num_ic_per_hbar]` and draws its
/// initial condition from its own stream keyed by `(seed, k)`, so every ħ
/// gets fresh initial conditions and the output does not depend on
/// scheduling.
pub fn generate(config: &GenerationConfig) -> Result<Dataset> {
    let manifest = manifest_for(config)?;
    let total = config.hbar_values.len() * config.num_ic_per_hbar;
    let samples = (0..total)
        .map(|k| generate_sample(config, &manifest.time_grid, k))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, manifest)
}

/// [`generate`] spread over `threads` workers; output is identical.
pub fn generate_parallel(config: &GenerationConfig, threads: usize) -> Result<Dataset> {
    if threads <= 1 {
        return generate(config);
    }
    let manifest = manifest_for(config)?;
    let total = config.hbar_values.len() * config.num_ic_per_hbar;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::validation(format!("cannot start {threads} worker threads: {e}")))?;
    let samples = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|k| generate_sample(config, &manifest.time_grid, k))
            .collect::<Result<Vec<_>>>()
    })?;
    Dataset::new(samples, manifest)
}

/// Stratified partition into (train, validation) sample indices, both
/// ascending. Each ħ stratum of size n contributes round(n·val_fraction)
/// samples to validation, chosen by a shuffle keyed by `(seed, stratum)`.
pub fn split_indices(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::validation(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, (_, mut members)) in dataset.strata().into_iter().enumerate() {
        let n_val = (members.len() as f64 * val_fraction).round() as usize;
        let mut rng = stream_rng(seed, stream::SPLIT, s as u64);
        members.shuffle(&mut rng);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset, val_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    num_samples: usize,
    #[serde(flatten)]
    manifest: Manifest,
}

/// `data.csv` → `data.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

fn label_column(k: usize, t_steps: usize) -> String {
    let width = (t_steps.saturating_sub(1)).to_string().len().max(3);
    format!("x_t_{k:0width$}")
}

pub fn header(t_steps: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["x0", "p0", "hbar"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..t_steps).map(|k| label_column(k, t_steps)));
    cols
}

/// Canonical manifest JSON, also used for the checkpoint's dataset hash.
pub fn manifest_json(dataset: &Dataset) -> String {
    let file = ManifestFile {
        format_version: DATASET_FORMAT_VERSION,
        num_samples: dataset.len(),
        manifest: dataset.manifest.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    text.push('\n');
    text
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let t_steps = dataset.manifest.config.t_steps;
    let mut out = String::with_capacity(dataset.len() * t_steps * 22);
    out.push_str(&header(t_steps).join(","));
    out.push('\n');
    // `{}` on f64 prints the shortest string that parses back to the same bits.
    for s in &dataset.samples {
        out.push_str(&format!("{},{},{}", s.x0, s.p0, s.hbar));
        for v in &s.label {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, manifest_json(dataset)).map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

pub fn read_manifest(csv_path: &Path) -> Result<(Manifest, usize)> {
    let mpath = manifest_path(csv_path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: mpath.clone(),
        source: e,
    })?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "{}: format_version {} is not supported (expected {DATASET_FORMAT_VERSION})",
            mpath.display(),
            file.format_version
        )));
    }
    file.manifest.config.validate()?;
    if file.manifest.time_grid.len() != file.manifest.config.t_steps {
        return Err(Error::validation(format!(
            "{}: time_grid has {} points but t_steps is {}",
            mpath.display(),
            file.manifest.time_grid.len(),
            file.manifest.config.t_steps
        )));
    }
    Ok((file.manifest, file.num_samples))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (manifest, num_samples) = read_manifest(path)?;
    let t_steps = manifest.config.t_steps;
    let parse_err = |line: u64, field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };

    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| parse_err(1, "header", e.to_string()))?
        .clone();
    if found.len() != t_steps + 3 {
        return Err(Error::validation(format!(
            "{}: header has {} trajectory columns but the manifest declares t_steps = {t_steps}",
            path.display(),
            found.len().saturating_sub(3)
        )));
    }
    let expected = header(t_steps);
    if let Some((got, want)) = found.iter().zip(&expected).find(|(g, w)| g != w) {
        return Err(Error::validation(format!(
            "{}: header column `{got}` does not match expected `{want}`",
            path.display()
        )));
    }

    let mut samples = Vec::with_capacity(num_samples);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, "row", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut values = Vec::with_capacity(record.len());
        for (field, name) in record.iter().zip(&expected) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| parse_err(line, name, format!("`{field}`: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, name, format!("non-finite value `{field}`")));
            }
            values.push(v);
        }
        samples.push(Sample {
            x0: values[0],
            p0: values[1],
            hbar: values[2],
            label: values.split_off(3),
        });
    }
    if samples.len() != num_samples {
        return Err(parse_err(
            samples.len() as u64 + 2,
            "row",
            format!(
                "file ends after {} rows, manifest declares {num_samples}",
                samples.len()
            ),
        ));
    }
    Dataset::new(samples, manifest)
}
