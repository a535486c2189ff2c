use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::LineState;
use super::CacheError;

/// Victim selection rule applied when a miss finds its set full.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplacementPolicy {
    /// Uniform over all ways.
    TrueRandom { seed: u64 },
    Lru,
    Fifo,
    /// Proportional to per-way weights (positive, any scale).
    BiasedRandom { seed: u64, weights: Vec<f64> },
}

impl ReplacementPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TrueRandom { .. } => "true-random",
            Self::Lru => "lru",
            Self::Fifo => "fifo",
            Self::BiasedRandom { .. } => "biased-random",
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::Lru | Self::Fifo)
    }

    /// Same policy with its seed replaced; deterministic policies are returned unchanged.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Self::TrueRandom { .. } => Self::TrueRandom { seed },
            Self::BiasedRandom { weights, .. } => Self::BiasedRandom {
                seed,
                weights: weights.clone(),
            },
            other => other.clone(),
        }
    }

    /// Weights of 1.0 everywhere except `ways`, which get `1.0 - down_weight`.
    pub fn biased_dip(seed: u64, ways: u32, dipped: std::ops::RangeInclusive<u32>, down_weight: f64) -> Self {
        let weights = (0..ways)
            .map(|w| if dipped.contains(&w) { 1.0 - down_weight } else { 1.0 })
            .collect();
        Self::BiasedRandom { seed, weights }
    }

    pub(crate) fn selector(&self, ways: u32) -> Result<VictimSelector, CacheError> {
        Ok(match self {
            Self::TrueRandom { seed } => VictimSelector::Uniform(ChaCha8Rng::seed_from_u64(*seed)),
            Self::Lru => VictimSelector::Lru,
            Self::Fifo => VictimSelector::Fifo,
            Self::BiasedRandom { seed, weights } => {
                if weights.len() != ways as usize {
                    return Err(CacheError::Policy(format!(
                        "expected {ways} way weights, got {}",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(CacheError::Policy("way weights must be positive".into()));
                }
                let dist = WeightedIndex::new(weights)
                    .map_err(|e| CacheError::Policy(e.to_string()))?;
                VictimSelector::Weighted(ChaCha8Rng::seed_from_u64(*seed), dist)
            }
        })
    }
}

/// Runtime half of a [`ReplacementPolicy`]. The RNG only advances when a
/// victim is actually drawn.
#[derive(Debug, Clone)]
pub(crate) enum VictimSelector {
    Uniform(ChaCha8Rng),
    Weighted(ChaCha8Rng, WeightedIndex<f64>),
    Lru,
    Fifo,
}

impl VictimSelector {
    pub(crate) fn pick(&mut self, set: &[LineState]) -> usize {
        match self {
            Self::Uniform(rng) => rng.gen_range(0..set.len()),
            Self::Weighted(rng, dist) => dist.sample(rng),
            Self::Lru => argmin(set, |l| l.last_touch),
            Self::Fifo => argmin(set, |l| l.fill_order),
        }
    }

    pub(crate) fn rng_position(&self) -> u128 {
        match self {
            Self::Uniform(rng) | Self::Weighted(rng, _) => rng.get_word_pos(),
            Self::Lru | Self::Fifo => 0,
        }
    }
}

fn argmin(set: &[LineState], key: impl Fn(&LineState) -> u64) -> usize {
    set.iter()
        .enumerate()
        .min_by_key(|(_, l)| key(l))
        .map(|(w, _)| w)
        .unwrap_or(0)
}
