//! Federated averaging over a growable model: client sampling, local
//! training, weight averaging, payload sealing and byte metering.

mod client;
mod codec;
mod ledger;
mod schedule;
mod server;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use client::{train_step, Client, ClientReply, LocalTraining};
pub use codec::{seal, unseal, Codec, CodecKind, SEAL_OVERHEAD};
pub use ledger::{verify_ledger, CommLedger, LedgerRow, LedgerVerification};
pub use schedule::GrowthSchedule;
pub use server::{
    run_training, FederatedConfig, GrowthEvent, RoundReport, Server, TrainingOutcome,
};

use crate::error::{Error, Result};
use crate::model::{WeightEntry, WeightSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Fixed depth `L` from the first round.
    #[serde(rename = "fedt", alias = "FedT")]
    FedT,
    /// Starts at `L / c` and grows on schedule.
    #[serde(rename = "feddt", alias = "FedDT")]
    FedDT,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::FedT => "fedt",
            Mode::FedDT => "feddt",
        }
    }
}

/// `m` distinct client ids out of `0..n`, sorted ascending.
pub fn sample_clients(rng: &mut Rng, n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::Config(format!(
            "cannot sample {m} clients per round from a population of {n}"
        )));
    }
    let mut ids = if m == n {
        (0..n).collect()
    } else {
        index::sample(rng, n, m).into_vec()
    };
    ids.sort_unstable();
    Ok(ids)
}

/// Elementwise mean of weight sets with identical tensor tables, accumulated
/// in slice order. Computed as `a₀ + Σᵢ(aᵢ − a₀)/M` so that averaging
/// identical payloads returns them bit for bit.
pub fn aggregate(payloads: &[WeightSet]) -> Result<WeightSet> {
    let Some(first) = payloads.first() else {
        return Err(Error::Protocol("nothing to aggregate".into()));
    };
    for (i, p) in payloads.iter().enumerate().skip(1) {
        if !first.same_table(p) {
            return Err(Error::Protocol(format!(
                "payload {i} has a different tensor table than payload 0 \
                 ({} layers / {} tensors vs {} / {})",
                p.layers,
                p.entries.len(),
                first.layers,
                first.entries.len()
            )));
        }
    }
    let m = payloads.len() as f64;
    let entries = first
        .entries
        .iter()
        .enumerate()
        .map(|(t, base)| {
            let mut acc = vec![0.0; base.data.len()];
            for p in &payloads[1..] {
                for ((a, x), b) in acc.iter_mut().zip(&p.entries[t].data).zip(&base.data) {
                    *a += x - b;
                }
            }
            let data = base.data.iter().zip(acc).map(|(b, a)| b + a / m).collect();
            WeightEntry {
                name_hash: base.name_hash,
                dims: base.dims.clone(),
                data,
            }
        })
        .collect();
    Ok(WeightSet {
        layers: first.layers,
        entries,
        state: None,
    })
}
