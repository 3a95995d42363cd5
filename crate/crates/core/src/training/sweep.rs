use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;

use super::{evaluate, train_observed, Metrics, TrainConfig};
use crate::data::{split, Dataset};
use crate::entropy::LossSpec;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Run the per-alpha trainings concurrently.
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            train_fraction: 0.7,
            split_seed: 0,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub epochs: usize,
    /// Validation metrics, or the error that stopped this cell.
    pub outcome: std::result::Result<Metrics, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub alphas: Vec<f64>,
    pub epoch_counts: Vec<usize>,
    /// Epoch-major: every alpha for the first epoch count, then the next.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, alpha: f64, epochs: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.epochs == epochs)
    }

    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }

    /// `alpha,epochs,accuracy,sensitivity,specificity`; failed cells and
    /// undefined rates are left empty.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        w.write_record(["alpha", "epochs", "accuracy", "sensitivity", "specificity"])?;
        for c in &self.cells {
            let (acc, sens, spec) = match &c.outcome {
                Ok(m) => (Some(m.accuracy), m.sensitivity, m.specificity),
                Err(_) => (None, None, None),
            };
            w.write_record([
                format!("{:?}", c.alpha),
                c.epochs.to_string(),
                opt(acc),
                opt(sens),
                opt(spec),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Accuracy grid: one row per epoch count, one column per alpha.
    pub fn write_grid_csv(&self, path: &Path) -> Result<()> {
        let mut w = writer(path)?;
        let mut header = vec!["epochs".to_string()];
        header.extend(self.alphas.iter().map(|a| format!("{a:?}")));
        w.write_record(&header)?;
        for &n in &self.epoch_counts {
            let mut row = vec![n.to_string()];
            for &a in &self.alphas {
                let acc = self
                    .cell(a, n)
                    .and_then(|c| c.outcome.as_ref().ok())
                    .map(|m| m.accuracy);
                row.push(opt(acc));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `base` with its family and alpha replaced: Shannon at `alpha == 1`,
/// Havrda-Charvat otherwise.
pub fn loss_for_alpha(base: &LossSpec, alpha: f64) -> Result<LossSpec> {
    let spec = if alpha == 1.0 {
        LossSpec::shannon()
    } else {
        LossSpec::havrda_charvat(alpha)?
    };
    spec.with_measure(base.measure)?.with_epsilon(base.clamp_epsilon)
}

/// Trains a fresh model from `model_cfg` on a fresh split of `data` for every
/// `(alpha, epochs)` cell and records the final validation metrics.
///
/// Training is deterministic and epoch-indexed, so the first `N` epochs of a
/// longer run are exactly an `N`-epoch run: each alpha is trained once to the
/// largest epoch count and evaluated at every requested count on the way.
pub fn sweep(
    base: &TrainConfig,
    alphas: &[f64],
    epoch_counts: &[usize],
    data: &Dataset,
    model_cfg: &ModelConfig,
    opts: &SweepOptions,
) -> Result<SweepTable> {
    if alphas.is_empty() || epoch_counts.is_empty() {
        return Err(Error::config("sweep grids must not be empty"));
    }
    if epoch_counts.contains(&0) {
        return Err(Error::config("epoch counts must be positive"));
    }
    for &a in alphas {
        loss_for_alpha(&base.loss, a)?;
    }
    model_cfg.validate()?;
    let max_epochs = *epoch_counts.iter().max().expect("non-empty");

    let run = |&alpha: &f64| -> BTreeMap<usize, std::result::Result<Metrics, String>> {
        let mut found = BTreeMap::new();
        let result = (|| {
            let (train_ds, val_ds) = split(data, opts.train_fraction, opts.split_seed)?;
            let cfg = TrainConfig {
                epochs: max_epochs,
                loss: loss_for_alpha(&base.loss, alpha)?,
                ..base.clone()
            };
            train_observed(Model::build(model_cfg.clone())?, &train_ds, &val_ds, &cfg, |e, m: &Model| {
                if epoch_counts.contains(&e) {
                    found.insert(e, Ok(evaluate(m, &val_ds, cfg.threshold)?));
                }
                Ok(())
            })
        })();
        if let Err(e) = result {
            for &n in epoch_counts {
                found.entry(n).or_insert_with(|| Err(e.to_string()));
            }
        }
        found
    };
    let per_alpha: Vec<_> = if opts.parallel {
        alphas.par_iter().map(run).collect()
    } else {
        alphas.iter().map(run).collect()
    };

    let mut cells = Vec::with_capacity(alphas.len() * epoch_counts.len());
    for &n in epoch_counts {
        for (&alpha, found) in alphas.iter().zip(&per_alpha) {
            cells.push(SweepCell {
                alpha,
                epochs: n,
                outcome: found[&n].clone(),
            });
        }
    }
    Ok(SweepTable {
        alphas: alphas.to_vec(),
        epoch_counts: epoch_counts.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::entropy::EntropyFamily;
    use crate::training::train;

    fn tiny() -> (ModelConfig, TrainConfig, Dataset) {
        let model = ModelConfig {
            conv_channels: vec![2, 2, 2],
            pool_after: vec![true; 3],
            dense_sizes: vec![4],
            dropout_after_dense: 1,
            seed: 9,
            ..ModelConfig::default()
        };
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        (model, cfg, synth_generate(&SynthSpec::new(20, 4)).unwrap())
    }

    #[test]
    fn alpha_one_is_shannon() {
        let base = LossSpec::shannon();
        assert_eq!(loss_for_alpha(&base, 1.0).unwrap().family, EntropyFamily::Shannon);
        let hc = loss_for_alpha(&base, 1.3).unwrap();
        assert_eq!((hc.family, hc.alpha), (EntropyFamily::HavrdaCharvat, 1.3));
        assert!(loss_for_alpha(&base, 0.5).is_err());
    }

    #[test]
    fn single_cell_is_one_training_run() {
        let (mc, cfg, ds) = tiny();
        let opts = SweepOptions::default();
        let table = sweep(&cfg, &[1.3], &[2], &ds, &mc, &opts).unwrap();
        assert_eq!(table.cells.len(), 1);

        let (tr, va) = split(&ds, opts.train_fraction, opts.split_seed).unwrap();
        let direct = train(
            Model::build(mc).unwrap(),
            &tr,
            &va,
            &TrainConfig {
                epochs: 2,
                loss: LossSpec::havrda_charvat(1.3).unwrap(),
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(table.cells[0].outcome, Ok(direct.metrics));
    }

    #[test]
    fn shorter_cells_match_independent_runs() {
        let (mc, cfg, ds) = tiny();
        let opts = SweepOptions {
            parallel: false,
            ..SweepOptions::default()
        };
        let joint = sweep(&cfg, &[1.0], &[1, 3], &ds, &mc, &opts).unwrap();
        let alone = sweep(&cfg, &[1.0], &[1], &ds, &mc, &opts).unwrap();
        assert_eq!(joint.cell(1.0, 1), alone.cell(1.0, 1));
    }

    #[test]
    fn grid_shape_and_csvs() {
        let (mc, cfg, ds) = tiny();
        let table = sweep(&cfg, &[1.0, 2.0], &[1, 2], &ds, &mc, &SweepOptions::default()).unwrap();
        assert_eq!(table.cells.len(), 4);
        assert_eq!(table.succeeded(), 4);
        for c in &table.cells {
            let acc = c.outcome.as_ref().unwrap().accuracy;
            assert!((0.0..=1.0).contains(&acc));
        }
        let dir = tempfile::tempdir().unwrap();
        table.write_long_csv(&dir.path().join("long.csv")).unwrap();
        table.write_grid_csv(&dir.path().join("grid.csv")).unwrap();
        let long = std::fs::read_to_string(dir.path().join("long.csv")).unwrap();
        assert!(long.starts_with("alpha,epochs,accuracy,sensitivity,specificity\n"));
        assert_eq!(long.lines().count(), 5);
        let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
        let lines: Vec<&str> = grid.lines().collect();
        assert_eq!(lines[0], "epochs,1.0,2.0");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    }

    #[test]
    fn failing_cells_are_flagged_not_fatal() {
        // A model expecting 64x64 inputs cannot consume 128x128 frames.
        let (mc, cfg, ds) = tiny();
        let mc = ModelConfig { input_side: 64, ..mc };
        let table = sweep(&cfg, &[1.0], &[1, 2], &ds, &mc, &SweepOptions::default()).unwrap();
        assert_eq!(table.cells.len(), 2);
        assert_eq!(table.succeeded(), 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("long.csv");
        table.write_long_csv(&path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains("1.0,1,,,"));
    }

    #[test]
    fn empty_grids_are_rejected() {
        let (mc, cfg, ds) = tiny();
        assert!(sweep(&cfg, &[], &[1], &ds, &mc, &SweepOptions::default()).is_err());
        assert!(sweep(&cfg, &[1.0], &[], &ds, &mc, &SweepOptions::default()).is_err());
        assert!(sweep(&cfg, &[1.0], &[0], &ds, &mc, &SweepOptions::default()).is_err());
    }
}
