use serde::{Deserialize, Serialize};

use super::client::{Client, LocalTraining};
use super::codec::{seal, unseal, Codec, CodecKind};
use super::ledger::CommLedger;
use super::schedule::GrowthSchedule;
use super::{aggregate, sample_clients, Mode};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{DynamicTransformer, ModelConfig, ParamCount, WeightSet};
use crate::optim::OptimizerKind;
use crate::rng;
use crate::tensor::Tensor;

/// Number of held-out samples used to probe hidden states across growth.
const PROBE_SAMPLES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederatedConfig {
    pub mode: Mode,
    pub num_clients: usize,
    /// Clients sampled per round (`M`); all of them when unset.
    pub clients_per_round: Option<usize>,
    pub rounds: u64,
    pub local_iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub codec: CodecKind,
    pub codec_key: u64,
    pub seed: u64,
    pub reset_moments_on_growth: bool,
    /// Global-step thresholds overriding the uniform schedule.
    pub growth_steps: Option<Vec<u64>>,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FedDT,
            num_clients: 3,
            clients_per_round: None,
            rounds: 120,
            local_iters: 3,
            batch_size: 16,
            lr: 1.6e-2,
            optimizer: OptimizerKind::Adam,
            codec: CodecKind::Sealed,
            codec_key: 0x5eed,
            seed: 2021,
            reset_moments_on_growth: false,
            growth_steps: None,
        }
    }
}

impl FederatedConfig {
    pub fn clients_per_round(&self) -> usize {
        self.clients_per_round.unwrap_or(self.num_clients)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config(
                "federated.num_clients must be positive".into(),
            ));
        }
        let m = self.clients_per_round();
        if m == 0 || m > self.num_clients {
            return Err(Error::Config(format!(
                "federated.clients_per_round ({m}) must be in 1..={}",
                self.num_clients
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("federated.rounds must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(
                "federated.batch_size must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "federated.lr must be a positive number, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// The model shape actually trained: FedT runs at full depth from the
    /// first round.
    pub fn effective_model(&self, model: &ModelConfig) -> ModelConfig {
        match self.mode {
            Mode::FedT => ModelConfig {
                growth_parts: 1,
                ..model.clone()
            },
            Mode::FedDT => model.clone(),
        }
    }

    /// Growth thresholds use `k = t·I`; with `local_iters = 0` they are laid
    /// out as if `I = 1`.
    pub fn schedule(&self, model: &ModelConfig) -> Result<GrowthSchedule> {
        let m = self.effective_model(model);
        let i = self.local_iters.max(1);
        match (&self.growth_steps, self.mode) {
            (Some(k), Mode::FedDT) => GrowthSchedule::with_thresholds(
                self.rounds,
                m.growth_parts,
                m.target_layers,
                i,
                k.clone(),
            ),
            _ => GrowthSchedule::uniform(self.rounds, m.growth_parts, m.target_layers, i),
        }
    }

    pub fn local_training(&self) -> LocalTraining {
        LocalTraining {
            local_iters: self.local_iters,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            reset_moments_on_growth: self.reset_moments_on_growth,
        }
    }

    pub fn codec(&self) -> Codec {
        match self.codec {
            CodecKind::Identity => Codec::Identity,
            CodecKind::Sealed => Codec::Sealed {
                key: self.codec_key,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: u64,
    /// Depth after this round's growth check.
    pub layers: usize,
    /// Depth of the weights exchanged during the round.
    pub exchanged_layers: usize,
    pub clients: Vec<usize>,
    pub mean_train_loss: f64,
    pub eval_loss: f64,
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
    pub cum_bytes: u64,
    pub block_bytes: u64,
    pub cum_block_bytes: u64,
    pub param_steps: u64,
    pub cum_param_steps: u64,
}

/// A verified growth step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthEvent {
    pub round: u64,
    pub from_layers: usize,
    pub to_layers: usize,
    /// Pre-existing tensors found bit-identical after growing.
    pub tensors_checked: usize,
    /// Pre-existing block outputs found bit-identical on the probe batch.
    pub hidden_states_checked: usize,
}

pub struct Server {
    fed: FederatedConfig,
    model_config: ModelConfig,
    schedule: GrowthSchedule,
    train: LocalTraining,
    codec: Codec,
    model: DynamicTransformer,
    clients: Vec<Client>,
    test: Vec<Sample>,
    round: u64,
    cum_bytes: u64,
    cum_block_bytes: u64,
    cum_param_steps: u64,
    ledger: CommLedger,
    reports: Vec<RoundReport>,
    growth_events: Vec<GrowthEvent>,
}

impl Server {
    pub fn new(
        model: &ModelConfig,
        fed: &FederatedConfig,
        shards: Vec<Vec<Sample>>,
        test: Vec<Sample>,
    ) -> Result<Self> {
        fed.validate()?;
        let model_config = fed.effective_model(model);
        model_config.validate()?;
        if shards.len() != fed.num_clients {
            return Err(Error::Config(format!(
                "federated.num_clients is {} but the split produced {} shards",
                fed.num_clients,
                shards.len()
            )));
        }
        if test.is_empty() {
            return Err(Error::Config("the held-out set is empty".into()));
        }
        let schedule = fed.schedule(model)?;
        let global = DynamicTransformer::new(
            model_config.clone(),
            rng::derive_seed(fed.seed, &[rng::STREAM_MODEL]),
        )?;
        let count = global.param_count();
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| Client::new(i, s, fed.seed))
            .collect();
        Ok(Self {
            train: fed.local_training(),
            codec: fed.codec(),
            fed: fed.clone(),
            model_config,
            schedule,
            model: global,
            clients,
            test,
            round: 0,
            cum_bytes: 0,
            cum_block_bytes: 0,
            cum_param_steps: 0,
            ledger: CommLedger::new(count.per_enc_block as u64, count.per_dec_block as u64),
            reports: Vec::new(),
            growth_events: Vec::new(),
        })
    }

    pub fn model(&self) -> &DynamicTransformer {
        &self.model
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn schedule(&self) -> &GrowthSchedule {
        &self.schedule
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn growth_events(&self) -> &[GrowthEvent] {
        &self.growth_events
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Replaces the global weights; the tensor table must match.
    pub fn set_weights(&mut self, ws: &WeightSet) -> Result<()> {
        self.model.load_weight_set(ws)
    }

    fn eval_loss(&self) -> Result<f64> {
        let batch: Vec<(&[u32], &Tensor)> = self
            .test
            .iter()
            .map(|s| (s.tokens.as_slice(), &s.frames))
            .collect();
        self.model.evaluate(&batch)
    }

    fn probe(&self, depth: usize) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for s in self.test.iter().take(PROBE_SAMPLES) {
            out.extend(
                self.model
                    .probe_hidden_states(&s.tokens, &s.frames, depth)?,
            );
        }
        Ok(out)
    }

    /// Grows the global model and checks that nothing learned so far moved.
    fn grow_verified(&mut self, round: u64, to: usize) -> Result<GrowthEvent> {
        let from = self.model.layers();
        let before = self.model.weights();
        let probe_before = self.probe(from)?;
        self.model.grow(to - from)?;
        let after = self.model.weights();
        for (i, (a, b)) in before.entries.iter().zip(&after.entries).enumerate() {
            let same = a.name_hash == b.name_hash
                && a.dims == b.dims
                && a.data
                    .iter()
                    .zip(&b.data)
                    .all(|(x, y)| x.to_bits() == y.to_bits());
            if !same {
                return Err(Error::Verification(format!(
                    "growth at round {round} changed pre-existing tensor {}",
                    self.model.param_names()[i]
                )));
            }
        }
        let probe_after = self.probe(from)?;
        if probe_before.len() != probe_after.len()
            || probe_before
                .iter()
                .zip(&probe_after)
                .any(|(a, b)| !a.bits_eq(b))
        {
            return Err(Error::Verification(format!(
                "growth at round {round} changed hidden states of the first {from} blocks"
            )));
        }
        Ok(GrowthEvent {
            round,
            from_layers: from,
            to_layers: to,
            tensors_checked: before.entries.len(),
            hidden_states_checked: probe_before.len(),
        })
    }

    fn nonce(round: u64, client: usize, uplink: bool) -> u64 {
        (round << 32) | ((client as u64) << 1) | u64::from(uplink)
    }

    /// One communication round: sample, dispatch at the current depth,
    /// train, collect, average, evaluate, then apply the growth check for
    /// `k = t·I`.
    pub fn run_round(&mut self) -> Result<&RoundReport> {
        let t = self.round + 1;
        if t > self.fed.rounds {
            return Err(Error::Contract(format!(
                "all {} rounds have already run",
                self.fed.rounds
            )));
        }
        let mut sampler = rng::stream(self.fed.seed, &[rng::STREAM_CLIENTS, t]);
        let ids = sample_clients(
            &mut sampler,
            self.fed.num_clients,
            self.fed.clients_per_round(),
        )?;
        let depth = self.model.layers();
        let payload = self.model.weights().encode();

        let (mut down, mut up, mut steps) = (0u64, 0u64, 0u64);
        let mut losses = Vec::with_capacity(ids.len());
        let mut sets = Vec::with_capacity(ids.len());
        for &i in &ids {
            let sealed = seal(&payload, self.codec, Self::nonce(t, i, false));
            down += sealed.len() as u64;
            let reply = self.clients[i].update(
                &sealed,
                depth,
                &self.model_config,
                &self.train,
                self.codec,
                Self::nonce(t, i, true),
            )?;
            up += reply.payload.len() as u64;
            let ws = WeightSet::decode(&unseal(&reply.payload, self.codec)?)?;
            if ws.layers as usize != depth {
                return Err(Error::Protocol(format!(
                    "client {i} replied with {} layers in a {depth}-layer round",
                    ws.layers
                )));
            }
            losses.push(reply.mean_loss);
            steps += reply.param_steps;
            sets.push(ws);
        }
        let avg = aggregate(&sets)?;
        self.model.load_weight_set(&avg)?;
        let eval_loss = self.eval_loss()?;

        let next = self.schedule.maybe_grow(t, depth);
        if next != depth {
            let event = self.grow_verified(t, next)?;
            self.growth_events.push(event);
        }

        let row = self.ledger.record(t, depth, ids.len(), down, up);
        let block_bytes = row.block_bytes;
        self.cum_bytes += down + up;
        self.cum_block_bytes += block_bytes;
        self.cum_param_steps += steps;
        self.round = t;
        self.reports.push(RoundReport {
            round: t,
            layers: self.model.layers(),
            exchanged_layers: depth,
            mean_train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            clients: ids,
            eval_loss,
            downlink_bytes: down,
            uplink_bytes: up,
            cum_bytes: self.cum_bytes,
            block_bytes,
            cum_block_bytes: self.cum_block_bytes,
            param_steps: steps,
            cum_param_steps: self.cum_param_steps,
        });
        Ok(self.reports.last().expect("just pushed"))
    }

    pub fn finish(self) -> TrainingOutcome {
        TrainingOutcome {
            param_count: self.model.param_count(),
            reports: self.reports,
            ledger: self.ledger,
            growth_events: self.growth_events,
            schedule: self.schedule,
            model: self.model,
        }
    }
}

pub struct TrainingOutcome {
    pub reports: Vec<RoundReport>,
    pub ledger: CommLedger,
    pub growth_events: Vec<GrowthEvent>,
    pub schedule: GrowthSchedule,
    pub param_count: ParamCount,
    pub model: DynamicTransformer,
}

/// Runs all `T` rounds.
pub fn run_training(
    model: &ModelConfig,
    fed: &FederatedConfig,
    shards: Vec<Vec<Sample>>,
    test: Vec<Sample>,
) -> Result<TrainingOutcome> {
    let mut server = Server::new(model, fed, shards, test)?;
    for _ in 0..fed.rounds {
        server.run_round()?;
    }
    Ok(server.finish())
}
