use super::EpochRecord;
use crate::error::{Error, Result};

pub const DEFAULT_PATIENCE: usize = 5;

/// Position of the first record `e` after which validation loss rises
/// strictly for `patience` consecutive epochs while training loss does not
/// rise over the same window.
pub fn detect_overfitting(records: &[EpochRecord], patience: usize) -> Result<Option<usize>> {
    if patience == 0 {
        return Err(Error::config("patience must be at least 1"));
    }
    if records.len() < patience + 1 {
        return Err(Error::InsufficientRecords {
            needed: patience + 1,
            got: records.len(),
        });
    }
    Ok((0..records.len() - patience).find(|&e| {
        records[e..=e + patience]
            .windows(2)
            .all(|w| w[1].val_loss > w[0].val_loss && w[1].train_loss <= w[0].train_loss)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(train: &[f64], val: &[f64]) -> Vec<EpochRecord> {
        train
            .iter()
            .zip(val)
            .enumerate()
            .map(|(i, (&t, &v))| EpochRecord {
                epoch: i + 1,
                train_loss: t,
                val_loss: v,
                train_accuracy: 0.5,
                val_accuracy: 0.5,
            })
            .collect()
    }

    #[test]
    fn hand_traced_onset() {
        let train = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
        let val = [1.0, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4];
        assert_eq!(detect_overfitting(&records(&train, &val), 5).unwrap(), Some(1));
    }

    #[test]
    fn monotone_and_flat_curves() {
        let down: Vec<f64> = (0..10).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(detect_overfitting(&records(&down, &down), 5).unwrap(), None);
        let flat = [0.5; 10];
        assert_eq!(detect_overfitting(&records(&flat, &flat), 5).unwrap(), None);
    }

    #[test]
    fn rising_train_loss_is_not_overfitting() {
        let up: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(detect_overfitting(&records(&up, &up), 5).unwrap(), None);
    }

    #[test]
    fn short_run_with_patience_one() {
        let r = records(&[1.0, 0.9], &[0.5, 0.6]);
        assert_eq!(detect_overfitting(&r, 1).unwrap(), Some(0));
    }

    #[test]
    fn too_few_records() {
        let r = records(&[1.0; 5], &[1.0; 5]);
        assert!(matches!(
            detect_overfitting(&r, 5),
            Err(Error::InsufficientRecords { needed: 6, got: 5 })
        ));
    }
}
