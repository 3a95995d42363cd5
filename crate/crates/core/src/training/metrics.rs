use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::entropy::BinaryOutcome;
use crate::error::{Error, Result};
use crate::model::Model;

/// Confusion counts with informative frames as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// `None` when there are no informative frames.
    pub sensitivity: Option<f64>,
    /// `None` when there are no uninformative frames.
    pub specificity: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let total = tp + fp + tn + fn_;
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, total).unwrap_or(0.0),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }

    /// Tallies `(actual, predicted)` pairs.
    pub fn from_predictions<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (BinaryOutcome, BinaryOutcome)>,
    {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (actual, predicted) in pairs {
            match (actual, predicted) {
                (BinaryOutcome::Informative, BinaryOutcome::Informative) => tp += 1,
                (BinaryOutcome::Uninformative, BinaryOutcome::Informative) => fp += 1,
                (BinaryOutcome::Uninformative, BinaryOutcome::Uninformative) => tn += 1,
                (BinaryOutcome::Informative, BinaryOutcome::Uninformative) => fn_ += 1,
            }
        }
        Metrics::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Predicted label for `p(1)`: informative iff `p1 >= threshold`.
pub fn decide(p1: f64, threshold: f64) -> BinaryOutcome {
    if p1 >= threshold {
        BinaryOutcome::Informative
    } else {
        BinaryOutcome::Uninformative
    }
}

/// Confusion metrics of `model` on `ds`, dropout disabled.
pub fn evaluate(model: &Model, ds: &Dataset, threshold: f64) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = ds
        .samples()
        .iter()
        .map(|s| Ok((s.label, decide(model.predict(&s.image)?.p1(), threshold))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics::from_predictions(pairs))
}
