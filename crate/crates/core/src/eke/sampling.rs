use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EkeError, DEFAULT_EPOCH_FRACTION};

/// Per-sample draw weights, normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub weights: Vec<f64>,
    pub epoch_fraction: f64,
}

impl SampleWeights {
    pub fn new(weights: Vec<f64>, epoch_fraction: f64) -> Result<Self, EkeError> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(EkeError::BadParams("weights must be positive and finite".into()));
        }
        if !(epoch_fraction > 0.0 && epoch_fraction <= 1.0) {
            return Err(EkeError::BadParams(format!("epoch fraction {epoch_fraction} not in (0, 1]")));
        }
        Ok(SampleWeights { weights, epoch_fraction })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Weights each value by the inverse of its histogram density over
/// `n_bins` equal-width bins spanning `[min, max]`.
pub fn inverse_density_weights(values: &[f64], n_bins: usize) -> Result<SampleWeights, EkeError> {
    if n_bins < 2 {
        return Err(EkeError::BadParams("need at least two bins".into()));
    }
    if values.len() < n_bins {
        return Err(EkeError::BadParams(format!(
            "{} samples is fewer than {n_bins} bins",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EkeError::DomainError("non-finite sample".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Err(EkeError::DegenerateRange);
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(n_bins - 1);
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        counts[bin_of(v)] += 1;
    }
    let n = values.len() as f64;
    let raw: Vec<f64> = values
        .iter()
        .map(|&v| {
            let density = counts[bin_of(v)] as f64 / (n * width);
            1.0 / density
        })
        .collect();
    let total: f64 = raw.iter().sum();
    SampleWeights::new(raw.into_iter().map(|w| w / total).collect(), DEFAULT_EPOCH_FRACTION)
}

/// Draws indices with replacement, proportionally to the weights.
pub struct WeightedSampler {
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WeightedSampler {
    pub fn new(weights: &SampleWeights, seed: u64) -> Result<Self, EkeError> {
        let index = WeightedIndex::new(&weights.weights)
            .map_err(|e| EkeError::BadParams(e.to_string()))?;
        Ok(WeightedSampler { index, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn draw(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.index.sample(&mut self.rng)).collect()
    }
}

/// Indices for one training epoch: `floor(fraction · n)` weighted draws
/// with replacement, reproducible for a given seed.
pub fn weighted_epoch_sample(
    n: usize,
    w: &SampleWeights,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, EkeError> {
    if n != w.len() {
        return Err(EkeError::BadParams(format!("{} weights for {n} samples", w.len())));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EkeError::BadParams(format!("fraction {fraction} not in (0, 1]")));
    }
    let count = (fraction * n as f64).floor() as usize;
    if count == 0 {
        return Err(EkeError::BadParams("fraction selects no samples".into()));
    }
    Ok(WeightedSampler::new(w, seed)?.draw(count))
}
