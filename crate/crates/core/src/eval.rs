//! ħ sweeps of a trained network against the classical trajectory, and the
//! CSV files behind the convergence plots.
//!
//! `emit_csv(table, "sweep.csv")` writes two files:
//!
//! - `sweep.csv`: header `t,classical,pred_hbar_<h>...`, one row per grid point.
//! - `sweep.summary.csv`: header `hbar,rmse,max_abs`, one row per ħ column,
//!   metrics taken over the table's rows.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::dynamics::{classical_closed_form, OscillatorParams, PhaseState, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Matrix};
use crate::train::input_matrix;

/// A ħ value together with the literal it was requested as, so that output
/// columns read `pred_hbar_5.0` when the user typed `5.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HbarValue {
    pub value: f64,
    pub literal: String,
}

impl From<f64> for HbarValue {
    fn from(value: f64) -> Self {
        let literal = if value.fract() == 0.0 && value.abs() < 1e15 {
            format!("{value:.1}")
        } else {
            value.to_string()
        };
        Self { value, literal }
    }
}

impl FromStr for HbarValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let literal = s.trim();
        let value: f64 = literal
            .parse()
            .map_err(|_| Error::validation(format!("`{literal}` is not a number")))?;
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::validation(format!(
                "hbar must be finite and >= 0, got `{literal}`"
            )));
        }
        Ok(Self {
            value,
            literal: literal.to_string(),
        })
    }
}

impl fmt::Display for HbarValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepColumn {
    pub hbar: HbarValue,
    pub predicted: Vec<f64>,
    pub rmse: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub grid: TimeGrid,
    pub classical: Vec<f64>,
    pub columns: Vec<SweepColumn>,
}

/// (RMSE, max |a − b|) over paired entries.
pub fn deviation(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (sq, max) = a.iter().zip(b).fold((0.0, 0.0f64), |(sq, max), (x, y)| {
        let d = x - y;
        (sq + d * d, max.max(d.abs()))
    });
    ((sq / a.len() as f64).sqrt(), max)
}

fn oscillator(checkpoint: &Checkpoint) -> Result<OscillatorParams> {
    OscillatorParams::new(checkpoint.metadata.m, checkpoint.metadata.omega, 0.0)
}

/// One forward pass of (x₀, p₀, ħ), bound to the checkpoint's time grid.
pub fn predict_trajectory(
    checkpoint: &Checkpoint,
    x0: f64,
    p0: f64,
    hbar: f64,
) -> Result<Trajectory> {
    if !(x0.is_finite() && p0.is_finite() && hbar.is_finite()) {
        return Err(Error::validation(format!(
            "prediction inputs must be finite, got ({x0}, {p0}, {hbar})"
        )));
    }
    let out = checkpoint
        .mlp
        .predict(&Matrix::from_rows(&[[x0, p0, hbar]])?)?;
    Trajectory::new(checkpoint.time_grid.clone(), out.row(0).to_vec())
}

pub fn hbar_sweep(
    checkpoint: &Checkpoint,
    x0: f64,
    p0: f64,
    hbars: &[HbarValue],
) -> Result<SweepTable> {
    if hbars.is_empty() {
        return Err(Error::validation("hbar sweep needs at least one value"));
    }
    let grid = checkpoint.time_grid.clone();
    let classical =
        classical_closed_form(PhaseState::new(x0, p0), &grid, &oscillator(checkpoint)?)?
            .into_values();
    let columns = hbars
        .iter()
        .map(|h| {
            let predicted = predict_trajectory(checkpoint, x0, p0, h.value)?.into_values();
            let (rmse, max_abs) = deviation(&predicted, &classical);
            Ok(SweepColumn {
                hbar: h.clone(),
                predicted,
                rmse,
                max_abs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        grid,
        classical,
        columns,
    })
}

/// Rows with `t_lo <= t <= t_hi`, metrics recomputed over them.
pub fn window(table: &SweepTable, t_lo: f64, t_hi: f64) -> Result<SweepTable> {
    if !(t_lo.is_finite() && t_hi.is_finite() && t_lo < t_hi) {
        return Err(Error::validation(format!(
            "window needs t_lo < t_hi, got [{t_lo}, {t_hi}]"
        )));
    }
    let keep: Vec<usize> = table
        .grid
        .points()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t_lo <= t && t <= t_hi)
        .map(|(k, _)| k)
        .collect();
    if keep.is_empty() {
        return Err(Error::validation(format!(
            "window [{t_lo}, {t_hi}] contains no grid points"
        )));
    }
    if keep.len() < 2 {
        return Err(Error::validation(format!(
            "window [{t_lo}, {t_hi}] contains a single grid point; at least 2 are needed"
        )));
    }
    let pick = |v: &[f64]| keep.iter().map(|&k| v[k]).collect::<Vec<f64>>();
    let classical = pick(&table.classical);
    let columns = table
        .columns
        .iter()
        .map(|c| {
            let predicted = pick(&c.predicted);
            let (rmse, max_abs) = deviation(&predicted, &classical);
            SweepColumn {
                hbar: c.hbar.clone(),
                predicted,
                rmse,
                max_abs,
            }
        })
        .collect();
    Ok(SweepTable {
        grid: TimeGrid::new(pick(table.grid.points()))?,
        classical,
        columns,
    })
}

/// `sweep.csv` → `sweep.summary.csv`.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.csv")
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from("t,classical");
    for c in &table.columns {
        out.push_str(&format!(",pred_hbar_{}", c.hbar));
    }
    out.push('\n');
    for (k, t) in table.grid.points().iter().enumerate() {
        out.push_str(&format!("{t},{}", table.classical[k]));
        for c in &table.columns {
            out.push_str(&format!(",{}", c.predicted[k]));
        }
        out.push('\n');
    }
    out
}

pub fn summary_csv(table: &SweepTable) -> String {
    let mut out = String::from("hbar,rmse,max_abs\n");
    for c in &table.columns {
        out.push_str(&format!("{},{},{}\n", c.hbar, c.rmse, c.max_abs));
    }
    out
}

pub fn emit_csv(table: &SweepTable, path: &Path) -> Result<()> {
    fs::write(path, sweep_csv(table)).map_err(|e| Error::io(path, e))?;
    let summary = summary_path(path);
    fs::write(&summary, summary_csv(table)).map_err(|e| Error::io(&summary, e))
}

/// Deviation of predictions from the classical closed form over one ħ
/// stratum of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumDeviation {
    pub hbar: f64,
    pub samples: usize,
    /// Over every (sample, time point) entry.
    pub rmse: f64,
    /// Largest RMSE across samples at any single time point.
    pub worst_time_rmse: f64,
    pub max_abs: f64,
}

pub fn classical_deviation_by_hbar(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
) -> Result<Vec<StratumDeviation>> {
    if checkpoint.time_grid != *dataset.time_grid() {
        return Err(Error::validation(
            "dataset time grid differs from the checkpoint's",
        ));
    }
    let params = oscillator(checkpoint)?;
    let t = checkpoint.time_grid.len();
    dataset
        .strata()
        .into_iter()
        .map(|(hbar, members)| {
            let pred = checkpoint.mlp.predict(&input_matrix(dataset, &members))?;
            let mut per_time = vec![0.0; t];
            let mut max_abs = 0.0f64;
            for (r, &i) in members.iter().enumerate() {
                let s = &dataset.samples()[i];
                let exact = classical_closed_form(
                    PhaseState::new(s.x0, s.p0),
                    &checkpoint.time_grid,
                    &params,
                )?;
                for (k, (&p, &c)) in pred.row(r).iter().zip(exact.x_values()).enumerate() {
                    let d = p - c;
                    per_time[k] += d * d;
                    max_abs = max_abs.max(d.abs());
                }
            }
            let n = members.len() as f64;
            let total: f64 = per_time.iter().sum();
            let worst = per_time.iter().fold(0.0f64, |m, &s| m.max((s / n).sqrt()));
            Ok(StratumDeviation {
                hbar,
                samples: members.len(),
                rmse: (total / (n * t as f64)).sqrt(),
                worst_time_rmse: worst,
                max_abs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, AdamConfig, CheckpointMetadata, DenseLayer, Mlp};

    fn metadata() -> CheckpointMetadata {
        CheckpointMetadata {
            seed: 0,
            epochs: 0,
            batch_size: 32,
            val_fraction: 0.1,
            adam: AdamConfig::default(),
            precision: "f64".into(),
            dataset_manifest_sha256: String::new(),
            m: 1.0,
            omega: 1.0,
            training_hbars: vec![5.0, 2.0, 1.0, 0.5, 0.1, 0.01],
        }
    }

    fn default_grid() -> TimeGrid {
        TimeGrid::linspace(0.0, 10.0, 100).unwrap()
    }

    fn random_checkpoint() -> Checkpoint {
        use Activation::*;
        let mlp = Mlp::init(&[3, 64, 128, 100], &[Relu, Relu, Identity], 4).unwrap();
        Checkpoint::new(mlp, default_grid(), metadata()).unwrap()
    }

    fn zero_checkpoint() -> Checkpoint {
        let layers = vec![
            DenseLayer::new(Matrix::zeros(4, 3), vec![0.0; 4], Activation::Relu).unwrap(),
            DenseLayer::new(Matrix::zeros(100, 4), vec![0.0; 100], Activation::Identity).unwrap(),
        ];
        Checkpoint::new(
            Mlp::from_layers(layers).unwrap(),
            default_grid(),
            metadata(),
        )
        .unwrap()
    }

    fn default_hbars() -> Vec<HbarValue> {
        ["5.0", "2.0", "1.0", "0.5", "0.1", "0.01"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    #[test]
    fn hbar_literals() {
        assert_eq!(HbarValue::from(5.0).literal, "5.0");
        assert_eq!(HbarValue::from(0.01).literal, "0.01");
        assert_eq!("0.010".parse::<HbarValue>().unwrap().literal, "0.010");
        assert!("abc".parse::<HbarValue>().is_err());
        assert!("-1".parse::<HbarValue>().is_err());
    }

    #[test]
    fn zero_network_predicts_zero() {
        let traj = predict_trajectory(&zero_checkpoint(), 1.0, 0.0, 0.01).unwrap();
        assert!(traj.x_values().iter().all(|&x| x == 0.0));
        assert!(predict_trajectory(&zero_checkpoint(), f64::NAN, 0.0, 0.01).is_err());
    }

    #[test]
    fn default_sweep_shape_and_classical_column() {
        let ck = random_checkpoint();
        let table = hbar_sweep(&ck, 1.0, 0.0, &default_hbars()).unwrap();
        assert_eq!(table.columns.len(), 6);
        assert_eq!(table.classical.len(), 100);
        for (t, c) in table.grid.points().iter().zip(&table.classical) {
            assert!((c - t.cos()).abs() <= 1e-12);
        }
        assert!(table
            .columns
            .iter()
            .all(|c| c.rmse >= 0.0 && c.max_abs >= c.rmse));
        let again = hbar_sweep(&ck, 1.0, 0.0, &default_hbars()).unwrap();
        assert_eq!(table, again);
        let other = hbar_sweep(&ck, 1.0, 0.0, &["0.3".parse().unwrap()]).unwrap();
        assert_eq!(other.classical, table.classical);
        assert!(hbar_sweep(&ck, 1.0, 0.0, &[]).is_err());
    }

    #[test]
    fn window_counts_and_errors() {
        let table = hbar_sweep(&random_checkpoint(), 1.0, 0.0, &default_hbars()).unwrap();
        // k·10/99 ∈ [2, 4] ⇔ k ∈ {20, ..., 39}
        let brute = (0..100)
            .filter(|&k| (2.0..=4.0).contains(&(k as f64 * 10.0 / 99.0)))
            .count();
        assert_eq!(brute, 20);
        let w = window(&table, 2.0, 4.0).unwrap();
        assert_eq!(w.grid.len(), 20);
        assert_eq!(w.classical.len(), 20);
        assert!(w.columns.iter().all(|c| c.predicted.len() == 20));
        assert_eq!(window(&table, 0.0, 10.0).unwrap(), table);
        assert!(window(&table, 100.0, 200.0).unwrap_err().is_validation());
        assert!(window(&table, 9.0, 1.0).unwrap_err().is_validation());
    }

    #[test]
    fn emitted_files_are_stable_and_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let table = hbar_sweep(&random_checkpoint(), 1.0, 0.0, &default_hbars()).unwrap();
        emit_csv(&table, &path).unwrap();
        let first = fs::read(&path).unwrap();
        emit_csv(&table, &path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());

        let text = String::from_utf8(first).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), 8);
        assert_eq!(header[0..3], ["t", "classical", "pred_hbar_5.0"]);
        assert_eq!(header[7], "pred_hbar_0.01");
        let rows: Vec<Vec<f64>> = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 100);

        let summary = fs::read_to_string(summary_path(&path)).unwrap();
        for (j, line) in summary.lines().skip(1).enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let rmse: f64 = cols[1].parse().unwrap();
            assert!(rmse >= 0.0);
            let recomputed =
                (rows.iter().map(|r| (r[2 + j] - r[1]).powi(2)).sum::<f64>() / 100.0).sqrt();
            assert!((recomputed - rmse).abs() <= 1e-12);
        }
    }
}
