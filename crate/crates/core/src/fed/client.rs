use rand::seq::SliceRandom;

use super::codec::{seal, unseal, Codec};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{DynamicTransformer, ModelConfig, WeightSet};
use crate::optim::{adam_step, sgd_step, AdamState, OptimizerKind};
use crate::rng;
use crate::tensor::Tensor;

/// Local optimization settings shared by every client.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTraining {
    pub local_iters: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Zero every Adam moment when the received model is deeper than the
    /// last one; otherwise only the new blocks start from zero.
    pub reset_moments_on_growth: bool,
}

/// One optimizer step on `batch`. Returns the batch loss before the step.
pub fn train_step(
    model: &mut DynamicTransformer,
    batch: &[&Sample],
    optimizer: OptimizerKind,
    adam: &AdamState,
) -> Result<f64> {
    let pairs: Vec<(&[u32], &Tensor)> = batch
        .iter()
        .map(|s| (s.tokens.as_slice(), &s.frames))
        .collect();
    model.zero_grads();
    let loss = model.accumulate_batch_grads(&pairs)?;
    match optimizer {
        OptimizerKind::Adam => adam_step(model.params_mut(), adam),
        OptimizerKind::Sgd => sgd_step(model.params_mut(), adam.lr),
    }
    Ok(loss)
}

#[derive(Clone, Debug)]
struct Moments {
    layers: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

/// Result of one `ClientUpdate`.
#[derive(Clone, Debug)]
pub struct ClientReply {
    pub client: usize,
    pub payload: Vec<u8>,
    /// Mean batch loss over the local steps (NaN when `I = 0`).
    pub mean_loss: f64,
    /// Σ over local steps of the trainable parameter count.
    pub param_steps: u64,
}

/// A data owner: its shard, its batch cursor and its optimizer state.
/// Weights are not kept between rounds; the client rebuilds the model from
/// each received payload.
#[derive(Clone, Debug)]
pub struct Client {
    id: usize,
    shard: Vec<Sample>,
    seed: u64,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
    moments: Option<Moments>,
}

impl Client {
    pub fn new(id: usize, shard: Vec<Sample>, seed: u64) -> Self {
        Self {
            id,
            shard,
            seed,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
            moments: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shard(&self) -> &[Sample] {
        &self.shard
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.shard.len()).collect();
        self.order.shuffle(&mut rng::stream(
            self.seed,
            &[rng::STREAM_SHUFFLE, self.id as u64, self.epoch],
        ));
        self.cursor = 0;
    }

    /// Next `b` shard indices, cycling through a fresh seeded permutation
    /// each local epoch. Indices come back sorted so that gradient sums do
    /// not depend on the permutation within a batch.
    pub fn next_batch(&mut self, b: usize) -> Result<Vec<usize>> {
        if self.shard.is_empty() {
            return Err(Error::Data(format!(
                "client {} has an empty shard",
                self.id
            )));
        }
        if self.order.is_empty() {
            self.reshuffle();
        }
        let mut out = Vec::with_capacity(b);
        for _ in 0..b {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out.sort_unstable();
        Ok(out)
    }

    fn restore_moments(&self, model: &mut DynamicTransformer, train: &LocalTraining) {
        let Some(st) = &self.moments else {
            return;
        };
        if model.layers() > st.layers && train.reset_moments_on_growth {
            return;
        }
        for (p, ((m, v), &step)) in model
            .params_mut()
            .iter_mut()
            .zip(st.m.iter().zip(&st.v).zip(&st.steps))
        {
            p.m = m.clone();
            p.v = v.clone();
            p.step = step;
        }
    }

    /// Decodes the server payload, runs `I` local steps and returns the
    /// sealed weights-only reply.
    pub fn update(
        &mut self,
        sealed: &[u8],
        expected_layers: usize,
        config: &ModelConfig,
        train: &LocalTraining,
        codec: Codec,
        nonce: u64,
    ) -> Result<ClientReply> {
        let bytes = unseal(sealed, codec)?;
        let ws = WeightSet::decode(&bytes)?;
        if ws.layers as usize != expected_layers {
            return Err(Error::Protocol(format!(
                "client {} expected a {expected_layers}-layer payload, got {}",
                self.id, ws.layers
            )));
        }
        let mut model = DynamicTransformer::from_weight_set(config, &ws)?;
        self.restore_moments(&mut model, train);
        let adam = AdamState::new(train.lr);
        let per_step = model.param_count().total() as u64;
        let mut loss_sum = 0.0;
        for _ in 0..train.local_iters {
            let idx = self.next_batch(train.batch_size)?;
            let batch: Vec<&Sample> = idx.iter().map(|&i| &self.shard[i]).collect();
            loss_sum += train_step(&mut model, &batch, train.optimizer, &adam)?;
        }
        if train.optimizer == OptimizerKind::Adam {
            self.moments = Some(Moments {
                layers: model.layers(),
                m: model.params().iter().map(|p| p.m.clone()).collect(),
                v: model.params().iter().map(|p| p.v.clone()).collect(),
                steps: model.params().iter().map(|p| p.step).collect(),
            });
        }
        let reply = model.weights().encode();
        Ok(ClientReply {
            client: self.id,
            payload: seal(&reply, codec, nonce),
            mean_loss: loss_sum / train.local_iters as f64,
            param_steps: per_step * train.local_iters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SyntheticTask, TaskConfig};
    use crate::model::PayloadMode;

    fn small() -> (ModelConfig, Vec<Sample>) {
        let cfg = ModelConfig {
            vocab_size: 8,
            frame_dim: 4,
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            target_layers: 2,
            growth_parts: 2,
            max_seq_len: 16,
            literal_division: false,
        };
        let task = TaskConfig {
            min_len: 2,
            max_len: 4,
            ..TaskConfig::default()
        };
        let data = SyntheticTask::new(&task, 8, 4)
            .unwrap()
            .generate(10)
            .unwrap();
        (cfg, data)
    }

    fn training(iters: u64) -> LocalTraining {
        LocalTraining {
            local_iters: iters,
            batch_size: 4,
            lr: 1e-2,
            optimizer: OptimizerKind::Adam,
            reset_moments_on_growth: false,
        }
    }

    #[test]
    fn each_epoch_covers_the_shard_once() {
        let (_, data) = small();
        let mut c = Client::new(0, data, 7);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| c.next_batch(2).unwrap()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let again = c.next_batch(3).unwrap();
        assert!(again.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn batches_depend_on_seed_and_id() {
        let (_, data) = small();
        let draw = |id, seed| {
            let mut c = Client::new(id, data.clone(), seed);
            (0..4)
                .flat_map(|_| c.next_batch(3).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(0, 1), draw(0, 1));
        assert_ne!(draw(0, 1), draw(1, 1));
    }

    #[test]
    fn empty_shard_is_data_error() {
        let mut c = Client::new(3, Vec::new(), 0);
        assert!(matches!(c.next_batch(1), Err(Error::Data(_))));
    }

    #[test]
    fn zero_local_iters_echo_the_weights() {
        let (cfg, data) = small();
        let model = DynamicTransformer::new(cfg.clone(), 5).unwrap();
        let sent = model.serialize(PayloadMode::WeightsOnly);
        let codec = Codec::Sealed { key: 9 };
        let mut c = Client::new(0, data, 1);
        let reply = c
            .update(&seal(&sent, codec, 4), 1, &cfg, &training(0), codec, 5)
            .unwrap();
        assert_eq!(unseal(&reply.payload, codec).unwrap(), sent);
        assert!(reply.mean_loss.is_nan());
        assert_eq!(reply.param_steps, 0);
    }

    #[test]
    fn update_changes_weights_and_counts_steps() {
        let (cfg, data) = small();
        let model = DynamicTransformer::new(cfg.clone(), 5).unwrap();
        let sent = model.serialize(PayloadMode::WeightsOnly);
        let mut c = Client::new(0, data, 1);
        let reply = c
            .update(&sent, 1, &cfg, &training(2), Codec::Identity, 0)
            .unwrap();
        assert_ne!(reply.payload, sent);
        assert!(reply.mean_loss.is_finite());
        assert_eq!(reply.param_steps, 2 * model.param_count().total() as u64);
    }

    #[test]
    fn layer_mismatch_is_protocol_error() {
        let (cfg, data) = small();
        let sent = DynamicTransformer::new(cfg.clone(), 5)
            .unwrap()
            .serialize(PayloadMode::WeightsOnly);
        let mut c = Client::new(2, data, 1);
        let err = c
            .update(&sent, 2, &cfg, &training(1), Codec::Identity, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{err}");
    }

    #[test]
    fn kept_moments_survive_growth_for_old_blocks() {
        let (cfg, data) = small();
        let mut model = DynamicTransformer::new(cfg.clone(), 5).unwrap();
        let mut c = Client::new(0, data, 1);
        c.update(
            &model.serialize(PayloadMode::WeightsOnly),
            1,
            &cfg,
            &training(2),
            Codec::Identity,
            0,
        )
        .unwrap();
        let before = model.params().len();
        model.grow(1).unwrap();
        let mut grown = DynamicTransformer::from_weight_set(&cfg, &model.weights()).unwrap();
        c.restore_moments(&mut grown, &training(1));
        let steps: Vec<u64> = grown.params().iter().map(|p| p.step).collect();
        assert!(steps[..before].iter().all(|&s| s == 2));
        assert!(steps[before..].iter().all(|&s| s == 0));
        let mut fresh = DynamicTransformer::from_weight_set(&cfg, &model.weights()).unwrap();
        let reset = LocalTraining {
            reset_moments_on_growth: true,
            ..training(1)
        };
        c.restore_moments(&mut fresh, &reset);
        assert!(fresh.params().iter().all(|p| p.step == 0));
    }
}
