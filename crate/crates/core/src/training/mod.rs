//! The optimization loop, confusion metrics, the `alpha x epochs` sweep and
//! loss-curve analysis.

mod metrics;
mod optimizer;
mod overfit;
mod sweep;

use std::fs::File;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{decide, evaluate, Metrics};
pub use optimizer::{Optimizer, OptimizerKind};
pub use overfit::{detect_overfitting, DEFAULT_PATIENCE};
pub use sweep::{loss_for_alpha, sweep, SweepCell, SweepOptions, SweepTable};

use crate::data::{batches, Dataset, Sample};
use crate::entropy::LossSpec;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Gradients, Mode};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Stream offset separating dropout draws from the batch shuffle, which
/// shares `seed`.
const DROPOUT_SALT: u64 = 0x6472_6f70_6f75_7421;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub loss: LossSpec,
    pub optimizer: OptimizerKind,
    /// Zero is accepted and leaves every parameter untouched.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Drives batch order and dropout masks.
    pub seed: u64,
    /// Decision threshold on `p(informative)` for the recorded accuracies.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            loss: LossSpec::shannon(),
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        self.loss.validate()
    }
}

/// One row of a loss curve. `epoch` counts from 1; every field is measured
/// after that epoch's updates with dropout disabled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(rename = "train_acc")]
    pub train_accuracy: f64,
    #[serde(rename = "val_acc")]
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub model: Model,
    /// Validation metrics of the final model.
    pub metrics: Metrics,
}

/// Trains `model`, which is consumed and returned in the report. Fully
/// deterministic given the model and `cfg.seed`.
pub fn train(model: Model, train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_observed(model, train_ds, val_ds, cfg, |_, _| Ok(()))
}

/// [`train`], calling `observe(epoch, &model)` after every epoch.
pub fn train_observed<F>(
    mut model: Model,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    cfg.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut sample_counter = 0u64;
    for epoch in 1..=cfg.epochs {
        for (b, batch) in batches(train_ds, cfg.batch_size, cfg.seed, epoch as u64)?.iter().enumerate() {
            let diverged = |value| Error::NonFinite { epoch, batch: b, value };
            let loss = accumulate_batch(&mut model, batch, cfg, sample_counter)?.ok_or(diverged(f64::NAN))?;
            sample_counter += batch.len() as u64;
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            opt.step(&mut model)?;
            if let Some(&bad) = model.params().iter().flat_map(|p| p.data()).find(|v| !v.is_finite()) {
                return Err(diverged(bad));
            }
        }
        let (train_loss, train_m) = assess(&model, train_ds, &cfg.loss, cfg.threshold)?;
        let (val_loss, val_m) = assess(&model, val_ds, &cfg.loss, cfg.threshold)?;
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_accuracy: train_m.accuracy,
            val_accuracy: val_m.accuracy,
        });
        observe(epoch, &model)?;
    }
    let metrics = evaluate(&model, val_ds, cfg.threshold)?;
    Ok(TrainReport {
        records,
        model,
        metrics,
    })
}

/// Forward and backward over one batch, leaving the gradient of the mean
/// batch loss in the model's parameter slots. Returns that mean loss, or
/// `None` if some forward pass produced a non-finite output.
fn accumulate_batch(model: &mut Model, batch: &[&Sample], cfg: &TrainConfig, first: u64) -> Result<Option<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let weight = 1.0 / batch.len() as f64;
    let per_sample: Option<Vec<(f64, Gradients)>> = {
        let m = &*model;
        batch
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                // Each sample owns a dropout stream, so results do not depend
                // on how rayon schedules the batch.
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
                rng.set_stream(first + i as u64);
                let mut tape = m.tape();
                let out = m.forward(&mut tape, &s.image, Mode::Train, &mut rng)?;
                if !tape.value(out).data()[0].is_finite() {
                    return Ok(None);
                }
                let loss = tape.cross_entropy(out, s.target(), &cfg.loss, weight)?;
                let value = tape.value(loss).data()[0];
                Ok(Some((value, tape.backward(loss)?)))
            })
            .collect::<Result<_>>()?
    };
    let Some(per_sample) = per_sample else {
        return Ok(None);
    };
    model.zero_grads();
    let mut total = 0.0;
    for (value, grads) in &per_sample {
        total += value;
        model.accumulate_grads(grads)?;
    }
    Ok(Some(total))
}

/// Mean loss and confusion metrics over `ds`, dropout disabled.
fn assess(model: &Model, ds: &Dataset, spec: &LossSpec, threshold: f64) -> Result<(f64, Metrics)> {
    let outputs: Vec<_> = ds
        .samples()
        .par_iter()
        .map(|s| model.predict(&s.image).map(|p| (s, p)))
        .collect::<Result<_>>()?;
    let loss = outputs.iter().map(|(s, p)| spec.sample_loss(&s.target(), p)).sum::<f64>() / ds.len() as f64;
    let metrics = Metrics::from_predictions(outputs.iter().map(|(s, p)| (s.label, decide(p.p1(), threshold))));
    Ok((loss, metrics))
}

pub fn write_report_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synth_generate, SynthSpec};
    use crate::model::ModelConfig;

    fn small_model(seed: u64) -> Model {
        Model::build(ModelConfig {
            conv_channels: vec![4, 4, 4],
            pool_after: vec![true; 3],
            dense_sizes: vec![16, 8],
            dropout_after_dense: 1,
            seed,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn small_data(n: usize) -> (Dataset, Dataset) {
        let ds = synth_generate(&SynthSpec::new(n, 11)).unwrap();
        split(&ds, 0.7, 1).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn two_samples_one_epoch() {
        let ds = synth_generate(&SynthSpec::new(4, 2)).unwrap();
        let (a, b) = split(&ds, 0.5, 0).unwrap();
        let report = train(small_model(0), &a, &b, &cfg(1)).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].epoch, 1);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let (tr, va) = small_data(20);
        let model = small_model(1);
        let before = model.layer_params();
        let report = train(
            model,
            &tr,
            &va,
            &TrainConfig {
                learning_rate: 0.0,
                ..cfg(3)
            },
        )
        .unwrap();
        for (a, b) in report.model.layer_params().iter().zip(&before) {
            assert_eq!(a.weights.data(), b.weights.data());
            assert_eq!(a.bias.data(), b.bias.data());
        }
        let first = report.records[0].train_loss;
        assert!(report.records.iter().all(|r| r.train_loss == first));
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (tr, va) = small_data(24);
        let a = train(small_model(5), &tr, &va, &cfg(3)).unwrap();
        let b = train(small_model(5), &tr, &va, &cfg(3)).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.model.layer_params(), b.model.layer_params());
    }

    #[test]
    fn records_are_well_formed() {
        let (tr, va) = small_data(24);
        let report = train(small_model(2), &tr, &va, &cfg(4)).unwrap();
        for (i, r) in report.records.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert!(r.train_loss >= 0.0 && r.val_loss >= 0.0);
            assert!((0.0..=1.0).contains(&r.train_accuracy));
            assert!((0.0..=1.0).contains(&r.val_accuracy));
        }
        assert_eq!(report.metrics.total(), va.len());
    }

    #[test]
    fn observer_sees_every_epoch() {
        let (tr, va) = small_data(12);
        let mut seen = Vec::new();
        train_observed(small_model(0), &tr, &va, &cfg(3), |e, _| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, va) = small_data(16);
        let err = train(
            small_model(0),
            &tr,
            &va,
            &TrainConfig {
                learning_rate: f64::MAX,
                optimizer: OptimizerKind::Sgd,
                ..cfg(3)
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn bad_configs_are_rejected() {
        let (tr, va) = small_data(8);
        for bad in [
            TrainConfig { epochs: 0, ..cfg(1) },
            TrainConfig { batch_size: 0, ..cfg(1) },
            TrainConfig {
                learning_rate: -1.0,
                ..cfg(1)
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..cfg(1)
            },
        ] {
            assert!(matches!(train(small_model(0), &tr, &va, &bad), Err(Error::Config(_))));
        }
        assert!(matches!(
            train(small_model(0), &Dataset::default(), &va, &cfg(1)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn report_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let records = vec![
            EpochRecord {
                epoch: 1,
                train_loss: std::f64::consts::LN_2,
                val_loss: 0.7,
                train_accuracy: 0.5,
                val_accuracy: 0.25,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 1e-300,
                val_loss: 12.5,
                train_accuracy: 1.0,
                val_accuracy: 0.0,
            },
        ];
        write_report_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n"));
        assert_eq!(read_report_csv(&path).unwrap(), records);
    }
}
