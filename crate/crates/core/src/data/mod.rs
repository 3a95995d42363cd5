//! Frames, datasets, on-disk layout, splitting and batching.
//!
//! On disk a dataset is a directory with `informative/` and `uninformative/`
//! subdirectories of grayscale PNGs, plus an optional `manifest.csv` with
//! columns `path,label,source_id` (paths relative to the root).

mod image_io;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use image_io::{load_image, resize_bilinear, save_png};
pub use synth::{laplacian_energy, synth_generate, threshold_baseline_accuracy, SynthSpec};

use crate::entropy::{BinaryOutcome, ProbabilityPair};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Side length every frame is normalized to.
pub const IMAGE_SIDE: usize = 128;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, 128, 128)`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: BinaryOutcome,
    pub source_id: String,
}

impl Sample {
    /// The Dirac distribution on the sample's label.
    pub fn target(&self) -> ProbabilityPair {
        ProbabilityPair::dirac(self.label)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_counts: (usize, usize),
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        let informative = samples
            .iter()
            .filter(|s| s.label == BinaryOutcome::Informative)
            .count();
        Dataset {
            class_counts: (samples.len() - informative, informative),
            samples,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(uninformative, informative)`.
    pub fn class_counts(&self) -> (usize, usize) {
        self.class_counts
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset::new(idx.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("train fraction must lie in (0, 1), got {fraction}")));
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(fraction * n)` samples train and the
/// rest validate.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_fraction(train_fraction)?;
    let n = ds.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::config(format!(
            "splitting {n} samples at {train_fraction} leaves a partition empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])))
}

/// Group key used by [`split_grouped`]: the part of a source id before its
/// first `_`, so frames `seq12_0001`, `seq12_0002` stay together.
pub fn source_prefix(source_id: &str) -> &str {
    source_id.split_once('_').map_or(source_id, |(p, _)| p)
}

/// Like [`split`] but never separates samples sharing a [`source_prefix`].
/// Groups are shuffled and assigned to the training side until it holds at
/// least `round(fraction * n)` samples.
pub fn split_grouped(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_fraction(train_fraction)?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        groups.entry(source_prefix(&s.source_id)).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = (train_fraction * ds.len() as f64).round() as usize;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for g in groups {
        if train.len() < target {
            train.extend(g);
        } else {
            val.extend(g);
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::config(format!(
            "grouped split at {train_fraction} leaves a partition empty"
        )));
    }
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Per-epoch shuffled mini-batches. The order depends only on `(seed, epoch)`;
/// the last batch may be short.
pub fn batches(ds: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<&Sample>>> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng);
    Ok(idx
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| &ds.samples[i]).collect())
        .collect())
}

fn class_dir(label: BinaryOutcome) -> &'static str {
    match label {
        BinaryOutcome::Informative => "informative",
        BinaryOutcome::Uninformative => "uninformative",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: BinaryOutcome,
    pub source_id: String,
}

/// Loads `<root>/informative/*.png` and `<root>/uninformative/*.png`, in file
/// name order within each class (uninformative first). The source id of a
/// frame is its file stem.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut samples = Vec::new();
    for label in BinaryOutcome::ALL {
        let dir = root.join(class_dir(label));
        for path in png_files(&dir)? {
            let source_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            samples.push(Sample {
                image: load_image(&path)?,
                label,
                source_id,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(samples))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes every sample as an 8-bit PNG under `root/<class>/<source_id>.png`
/// and a `manifest.csv` listing them. Returns the manifest entries.
pub fn export_dataset(ds: &Dataset, root: &Path) -> Result<Vec<ManifestEntry>> {
    for label in BinaryOutcome::ALL {
        let dir = root.join(class_dir(label));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let rel = format!("{}/{}.png", class_dir(s.label), s.source_id);
        save_png(&s.image, &root.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            label: s.label,
            source_id: s.source_id.clone(),
        });
    }
    write_manifest(&root.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
