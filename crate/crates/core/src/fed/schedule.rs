use serde::Serialize;

use crate::error::{Error, Result};

/// Progressive-growth schedule: `T` rounds of `I` local steps, growing by
/// `q = L / c` blocks when the global step count `k = t·I` hits a threshold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthSchedule {
    pub rounds: u64,
    pub parts: usize,
    pub target_layers: usize,
    pub layers_per_growth: usize,
    pub local_iters: u64,
    /// Strictly increasing global-step thresholds `𝕂`.
    pub thresholds: Vec<u64>,
}

impl GrowthSchedule {
    /// `𝕂 = { j·(T/c)·I : j = 1 … c−1 }`.
    pub fn uniform(
        rounds: u64,
        parts: usize,
        target_layers: usize,
        local_iters: u64,
    ) -> Result<Self> {
        if parts == 0 || !rounds.is_multiple_of(parts as u64) {
            return Err(Error::Config(format!(
                "rounds ({rounds}) must be a positive multiple of growth parts ({parts})"
            )));
        }
        let stage = rounds / parts as u64;
        let thresholds = (1..parts as u64).map(|j| j * stage * local_iters).collect();
        Self::with_thresholds(rounds, parts, target_layers, local_iters, thresholds)
    }

    pub fn with_thresholds(
        rounds: u64,
        parts: usize,
        target_layers: usize,
        local_iters: u64,
        thresholds: Vec<u64>,
    ) -> Result<Self> {
        if rounds == 0 || local_iters == 0 {
            return Err(Error::Config(
                "rounds and local_iters must be positive".into(),
            ));
        }
        if parts == 0 || target_layers == 0 || !target_layers.is_multiple_of(parts) {
            return Err(Error::Config(format!(
                "target layers ({target_layers}) must be a positive multiple of parts ({parts})"
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "growth thresholds must be strictly increasing".into(),
            ));
        }
        if let Some(k) = thresholds.iter().find(|&&k| k == 0 || k % local_iters != 0) {
            return Err(Error::Config(format!(
                "growth threshold {k} is not a positive multiple of local_iters {local_iters}"
            )));
        }
        Ok(Self {
            rounds,
            parts,
            target_layers,
            layers_per_growth: target_layers / parts,
            local_iters,
            thresholds,
        })
    }

    pub fn initial_layers(&self) -> usize {
        self.layers_per_growth
    }

    /// Depth after the growth check of round `t`: `l + q` iff `t·I ∈ 𝕂` and
    /// `l < L`.
    pub fn maybe_grow(&self, round: u64, layers: usize) -> usize {
        let k = round * self.local_iters;
        if self.thresholds.binary_search(&k).is_ok() && layers < self.target_layers {
            layers + self.layers_per_growth
        } else {
            layers
        }
    }

    /// `l_t` for `t = 1 … T`.
    pub fn trace(&self) -> Vec<usize> {
        let mut l = self.initial_layers();
        (1..=self.rounds)
            .map(|t| {
                l = self.maybe_grow(t, l);
                l
            })
            .collect()
    }

    /// Rounds whose check adds layers.
    pub fn growth_rounds(&self) -> Vec<u64> {
        let mut l = self.initial_layers();
        let mut out = Vec::new();
        for t in 1..=self.rounds {
            let next = self.maybe_grow(t, l);
            if next != l {
                out.push(t);
            }
            l = next;
        }
        out
    }
}
