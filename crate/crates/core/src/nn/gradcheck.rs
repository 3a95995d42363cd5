use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One sampled scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_relative_error: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the tape gradient of `objective` against central differences
/// `(f(x + step) - f(x - step)) / (2 step)` on `n_samples` scalar parameters
/// drawn without replacement (all of them if there are fewer).
pub fn grad_check<F>(
    params: &mut [Tensor],
    objective: F,
    n_samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    if n_samples == 0 {
        return Err(Error::config("grad_check needs at least one sample"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::domain(format!("finite-difference step must be positive, got {step}")));
    }
    let total: usize = params.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::config("model has no parameters to check"));
    }

    let analytic = {
        let mut tape = Tape::new(params.iter().collect());
        let loss = objective(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(params.iter().collect());
        let loss = objective(&mut tape)?;
        tape.value(loss)
            .item()
            .ok_or_else(|| Error::shape("objective must be a scalar"))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, n_samples.min(total)).into_vec();
    picks.sort_unstable();

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();

    let mut entries = Vec::with_capacity(picks.len());
    for flat in picks {
        let param = offsets.partition_point(|&o| o <= flat) - 1;
        let index = flat - offsets[param];
        let orig = params[param].data()[index];
        params[param].data_mut()[index] = orig + step;
        let up = eval(params);
        params[param].data_mut()[index] = orig - step;
        let down = eval(params);
        params[param].data_mut()[index] = orig;
        let numeric = (up? - down?) / (2.0 * step);
        let a = analytic.params[param][index];
        entries.push(GradCheckEntry {
            param,
            index,
            analytic: a,
            numeric,
            relative_error: relative_error(a, numeric),
        });
    }
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_relative_error,
    })
}
