//! Synthetic stand-in for endomicroscopy frames.
//!
//! Informative frames carry 3 to 8 bright, smooth curvilinear strokes
//! (quadratic Bezier curves with a Gaussian cross-section) over Gaussian
//! noise. Uninformative frames are either pure noise or noise over a
//! low-frequency illumination ramp, chosen with equal probability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, IMAGE_SIDE};
use crate::entropy::BinaryOutcome;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub informative_fraction: f64,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl SynthSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthSpec {
            n,
            informative_fraction: 0.5,
            seed,
            noise_sigma: 0.15,
        }
    }

    pub fn with_fraction(mut self, fraction: f64) -> Self {
        self.informative_fraction = fraction;
        self
    }

    /// Number of informative frames: `round(fraction * n)`, kept within
    /// `[1, n - 1]` so both classes are present.
    pub fn informative_count(&self) -> usize {
        ((self.informative_fraction * self.n as f64).round() as usize).clamp(1, self.n - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config(format!("need at least 2 samples, got {}", self.n)));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction < 1.0) {
            return Err(Error::config(format!(
                "informative fraction must lie in (0, 1), got {}",
                self.informative_fraction
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_inf = spec.informative_count();
    let mut labels: Vec<BinaryOutcome> = std::iter::repeat_n(BinaryOutcome::Informative, n_inf)
        .chain(std::iter::repeat_n(BinaryOutcome::Uninformative, spec.n - n_inf))
        .collect();
    labels.shuffle(&mut rng);

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut img = match label {
                BinaryOutcome::Informative => stroke_frame(&mut rng),
                BinaryOutcome::Uninformative => flat_frame(&mut rng),
            };
            for v in img.iter_mut() {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            Ok(Sample {
                image: Tensor::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], img)?,
                label,
                source_id: format!("synth_{i:05}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

fn stroke_frame<R: Rng>(rng: &mut R) -> Vec<f64> {
    let side = IMAGE_SIDE as f64;
    let base = rng.random_range(0.25..0.45);
    let mut strokes = vec![0.0f64; IMAGE_SIDE * IMAGE_SIDE];
    let count = rng.random_range(3..=8);
    for _ in 0..count {
        let mut pt = || (rng.random_range(0.0..side), rng.random_range(0.0..side));
        let (p0, p1, p2) = (pt(), pt(), pt());
        let width = rng.random_range(1.0..2.0);
        let amplitude = rng.random_range(0.3..0.6);
        draw_bezier(&mut strokes, p0, p1, p2, width, amplitude);
    }
    strokes.iter().map(|s| base + s).collect()
}

/// Max-composites a quadratic Bezier with Gaussian profile of standard
/// deviation `width` into `layer`.
fn draw_bezier(layer: &mut [f64], p0: (f64, f64), p1: (f64, f64), p2: (f64, f64), width: f64, amplitude: f64) {
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let length = dist(p0, p1) + dist(p1, p2);
    let steps = (length * 2.0).ceil().max(2.0) as usize;
    let reach = (3.0 * width).ceil() as isize;
    let inv = 1.0 / (2.0 * width * width);
    let n = IMAGE_SIDE as isize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let u = 1.0 - t;
        let cx = u * u * p0.0 + 2.0 * u * t * p1.0 + t * t * p2.0;
        let cy = u * u * p0.1 + 2.0 * u * t * p1.1 + t * t * p2.1;
        let (ix, iy) = (cx.floor() as isize, cy.floor() as isize);
        for y in (iy - reach).max(0)..=(iy + reach).min(n - 1) {
            for x in (ix - reach).max(0)..=(ix + reach).min(n - 1) {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let v = amplitude * (-(dx * dx + dy * dy) * inv).exp();
                let cell = &mut layer[(y * n + x) as usize];
                if v > *cell {
                    *cell = v;
                }
            }
        }
    }
}

fn flat_frame<R: Rng>(rng: &mut R) -> Vec<f64> {
    let base = rng.random_range(0.25..0.45);
    if rng.random_bool(0.5) {
        return vec![base; IMAGE_SIDE * IMAGE_SIDE];
    }
    // Illumination ramp across the frame in a random direction.
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let amplitude = rng.random_range(0.1..0.3);
    let (dx, dy) = (angle.cos(), angle.sin());
    let half = IMAGE_SIDE as f64 / 2.0;
    let mut img = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let proj = ((x as f64 - half) * dx + (y as f64 - half) * dy) / half;
            img.push(base + amplitude * 0.5 * proj);
        }
    }
    img
}

/// Mean absolute response of the 4-neighbour Laplacian over interior pixels
/// of a `(1, S, S)` image after 2x2 box downsampling.
///
/// Downsampling first suppresses pixel-level white noise so the statistic
/// responds to structures a few pixels wide.
pub fn laplacian_energy(image: &Tensor) -> f64 {
    let s = image.shape()[2];
    let h = s / 2;
    let d = image.data();
    let mut small = vec![0.0; h * h];
    for y in 0..h {
        for x in 0..h {
            let i = 2 * y * s + 2 * x;
            small[y * h + x] = 0.25 * (d[i] + d[i + 1] + d[i + s] + d[i + s + 1]);
        }
    }
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..h - 1 {
            let c = small[y * h + x];
            let lap = small[(y - 1) * h + x] + small[(y + 1) * h + x] + small[y * h + x - 1] + small[y * h + x + 1] - 4.0 * c;
            total += lap.abs();
        }
    }
    total / ((h - 2) * (h - 2)) as f64
}

/// Accuracy of the best single threshold on [`laplacian_energy`]
/// (high energy predicts informative).
pub fn threshold_baseline_accuracy(ds: &Dataset) -> f64 {
    let mut scored: Vec<(f64, bool)> = ds
        .samples()
        .iter()
        .map(|s| (laplacian_energy(&s.image), s.label == BinaryOutcome::Informative))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scored.len();
    let total_pos = scored.iter().filter(|s| s.1).count();
    // Threshold between position k-1 and k: everything from k up is positive.
    let mut neg_below = 0;
    let mut pos_below = 0;
    let mut best = total_pos;
    for (k, &(_, pos)) in scored.iter().enumerate() {
        if pos {
            pos_below += 1;
        } else {
            neg_below += 1;
        }
        let correct = neg_below + (total_pos - pos_below);
        if k + 1 < n && scored[k + 1].0 == scored[k].0 {
            continue;
        }
        best = best.max(correct);
    }
    best as f64 / n as f64
}
