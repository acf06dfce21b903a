use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws items from named sources: a source is picked with probability
/// proportional to its weight, then an item uniformly within it. Draws are
/// independent, so the mixture holds in expectation rather than per batch.
#[derive(Debug, Clone)]
pub struct MixtureSampler<T> {
    names: Vec<String>,
    sources: Vec<Vec<T>>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<T: Clone> MixtureSampler<T> {
    /// `sources` pairs each name with its entries and nonnegative weight.
    pub fn new(sources: Vec<(String, Vec<T>, f64)>, seed: u64) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidConfig("mixture has no sources".into()));
        }
        for (name, items, w) in &sources {
            if items.is_empty() {
                return Err(Error::EmptySource(name.clone()));
            }
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidConfig(format!("weight of {name:?} must be finite and >= 0")));
            }
        }
        let total: f64 = sources.iter().map(|s| s.2).sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("mixture weights sum to zero".into()));
        }
        let weights: Vec<f64> = sources.iter().map(|s| s.2 / total).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let (names, sources) = sources.into_iter().map(|(n, items, _)| (n, items)).unzip();
        Ok(Self {
            names,
            sources,
            weights,
            index,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Normalized weights, summing to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn source_len(&self, source: usize) -> usize {
        self.sources[source].len()
    }

    /// `batch_size` independent draws as `(source index, item)`.
    pub fn sample_batch(&mut self, batch_size: usize) -> Vec<(usize, T)> {
        (0..batch_size)
            .map(|_| {
                let s = self.index.sample(&mut self.rng);
                let i = self.rng.random_range(0..self.sources[s].len());
                (s, self.sources[s][i].clone())
            })
            .collect()
    }
}
