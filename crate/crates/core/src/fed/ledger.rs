use serde::Serialize;

use crate::cost::{feddt_total_series, fedt_total, CostInputs};
use crate::error::{Error, Result};

use super::Mode;

/// Bytes moved in one round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub round: u64,
    /// Depth of the payloads exchanged this round.
    pub exchanged_layers: usize,
    pub clients: usize,
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
    /// `8 · exchanged_layers · (W1 + W2) · clients · 2`.
    pub block_bytes: u64,
    /// Everything else on the wire: headers, fixed tensors, sealing.
    pub fixed_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CommLedger {
    pub per_enc_block: u64,
    pub per_dec_block: u64,
    pub rows: Vec<LedgerRow>,
}

impl CommLedger {
    pub fn new(per_enc_block: u64, per_dec_block: u64) -> Self {
        Self {
            per_enc_block,
            per_dec_block,
            rows: Vec::new(),
        }
    }

    pub fn record(
        &mut self,
        round: u64,
        exchanged_layers: usize,
        clients: usize,
        downlink_bytes: u64,
        uplink_bytes: u64,
    ) -> &LedgerRow {
        let block_bytes = 8
            * exchanged_layers as u64
            * (self.per_enc_block + self.per_dec_block)
            * clients as u64
            * 2;
        self.rows.push(LedgerRow {
            round,
            exchanged_layers,
            clients,
            downlink_bytes,
            uplink_bytes,
            block_bytes,
            fixed_bytes: downlink_bytes + uplink_bytes - block_bytes,
        });
        self.rows.last().expect("just pushed")
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows
            .iter()
            .map(|r| r.downlink_bytes + r.uplink_bytes)
            .sum()
    }

    pub fn total_block_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.block_bytes).sum()
    }

    pub fn total_fixed_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.fixed_bytes).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerVerification {
    /// Block weight units per client per direction, summed over rounds.
    pub measured_units: u128,
    pub expected_units: u128,
    pub fixed_bytes: u64,
}

/// Checks a full-participation ledger against the closed-form totals in
/// exact integer arithmetic, round by round.
pub fn verify_ledger(
    ledger: &CommLedger,
    inputs: &CostInputs,
    mode: Mode,
) -> Result<LedgerVerification> {
    let w = u128::from(inputs.w1) + u128::from(inputs.w2);
    let mut measured = 0u128;
    for t in 1..=inputs.rounds {
        let Some(row) = ledger.rows.get(t as usize - 1) else {
            return Err(Error::Verification(format!(
                "ledger ends after round {}; round {t} is missing",
                ledger.rows.len()
            )));
        };
        if row.round != t {
            return Err(Error::Verification(format!(
                "ledger row {t} is labelled round {}",
                row.round
            )));
        }
        let per_copy = 8 * 2 * row.clients as u128;
        let bytes = u128::from(row.block_bytes);
        let depth = match mode {
            Mode::FedT => inputs.layers,
            Mode::FedDT => inputs.stage_depth(t),
        };
        let expected = u128::from(depth) * w;
        if per_copy == 0 || bytes % per_copy != 0 || bytes / per_copy != expected {
            return Err(Error::Verification(format!(
                "round {t}: ledger shows {bytes} block bytes over {} clients, expected {expected} \
                 weight units per client per direction",
                row.clients
            )));
        }
        measured += expected;
    }
    let expected = match mode {
        Mode::FedT => fedt_total(inputs),
        Mode::FedDT => feddt_total_series(inputs),
    };
    if measured != expected {
        return Err(Error::Verification(format!(
            "ledger total {measured} != closed form {expected}"
        )));
    }
    Ok(LedgerVerification {
        measured_units: measured,
        expected_units: expected,
        fixed_bytes: ledger.rows[..inputs.rounds as usize]
            .iter()
            .map(|r| r.fixed_bytes)
            .sum(),
    })
}
