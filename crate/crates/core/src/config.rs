//! Run configuration: one TOML file with `[model]`, `[federated]`, `[task]`,
//! `[data]` and an optional `[split]` section. Unknown keys are rejected.
//!
//! ```toml
//! [model]
//! d_model = 32
//! target_layers = 6
//! growth_parts = 6
//!
//! [federated]
//! mode = "feddt"
//! num_clients = 3
//! rounds = 120
//!
//! [split]
//! kind = "ratios"
//! ratios = [1, 1, 3]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{holdout, split, Sample, SplitSpec, SyntheticTask, TaskConfig};
use crate::error::{Error, Result};
use crate::fed::FederatedConfig;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_test: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub federated: FederatedConfig,
    pub task: TaskConfig,
    pub data: DataConfig,
    /// Balanced over `federated.num_clients` when absent.
    pub split: Option<SplitSpec>,
}

/// Generated corpus and its partition.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Every generated sample, in generation order.
    pub corpus: Vec<Sample>,
    pub shards: Vec<Vec<Sample>>,
    pub test: Vec<Sample>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.split.clone().unwrap_or(SplitSpec::Balanced {
            n_clients: self.federated.num_clients,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.federated.validate()?;
        let t = &self.task;
        if t.min_len == 0 || t.min_len > t.max_len {
            return Err(Error::Config(format!(
                "task.min_len ({}) must be in 1..=task.max_len ({})",
                t.min_len, t.max_len
            )));
        }
        if t.frames_per_token == 0 {
            return Err(Error::Config(
                "task.frames_per_token must be positive".into(),
            ));
        }
        let longest = t.max_len * t.frames_per_token;
        if longest > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "task.max_len × task.frames_per_token = {longest} exceeds model.max_seq_len ({})",
                self.model.max_seq_len
            )));
        }
        if self.data.n_test == 0 {
            return Err(Error::Config("data.n_test must be positive".into()));
        }
        let spec = self.split_spec();
        spec.ratios()?;
        if spec.shards() != self.federated.num_clients {
            return Err(Error::Config(format!(
                "split has {} shards but federated.num_clients is {}",
                spec.shards(),
                self.federated.num_clients
            )));
        }
        if self.data.n_train < spec.shards() {
            return Err(Error::Config(format!(
                "data.n_train ({}) is smaller than the number of shards ({})",
                self.data.n_train,
                spec.shards()
            )));
        }
        let c = self.federated.effective_model(&self.model).growth_parts as u64;
        if self.federated.growth_steps.is_none() && !self.federated.rounds.is_multiple_of(c) {
            return Err(Error::Config(format!(
                "federated.rounds ({}) must be a multiple of model.growth_parts ({c})",
                self.federated.rounds
            )));
        }
        self.federated.schedule(&self.model)?;
        Ok(())
    }

    /// Generates `n_train + n_test` samples, holds out the test set and
    /// splits the rest into client shards.
    pub fn build_data(&self) -> Result<Dataset> {
        let task = SyntheticTask::new(&self.task, self.model.vocab_size, self.model.frame_dim)?;
        let corpus = task.generate(self.data.n_train + self.data.n_test)?;
        let (train, test) = holdout(&corpus, self.data.n_test, self.task.seed)?;
        let shards = split(&train, &self.split_spec(), self.task.seed)?;
        if let Some(i) = shards.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!(
                "split leaves client {i} with no samples"
            )));
        }
        Ok(Dataset {
            corpus,
            shards,
            test,
        })
    }

    /// Same task, data and split: the condition for comparing two runs.
    pub fn same_data(&self, other: &RunConfig) -> bool {
        self.task == other.task
            && self.data == other.data
            && self.split_spec() == other.split_spec()
            && self.model.vocab_size == other.model.vocab_size
            && self.model.frame_dim == other.model.frame_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fed::Mode;

    #[test]
    fn empty_file_is_the_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.federated.rounds, 120);
        assert_eq!(cfg.federated.batch_size, 16);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = RunConfig::from_toml_str("[federated]\nrounds = 12\nlocal_iter = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("local_iter"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        let err = RunConfig::from_toml_str("[model]\ntarget_layers = 5\n").unwrap_err();
        assert!(err.to_string().contains("model.target_layers"), "{err}");
        let err = RunConfig::from_toml_str("[federated]\nclients_per_round = 9\n").unwrap_err();
        assert!(err.to_string().contains("clients_per_round"), "{err}");
        let err = RunConfig::from_toml_str("[federated]\nrounds = 100\n").unwrap_err();
        assert!(err.to_string().contains("multiple"), "{err}");
        let err =
            RunConfig::from_toml_str("[split]\nkind = \"ratios\"\nratios = [1, 1]\n").unwrap_err();
        assert!(err.to_string().contains("shards"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.federated.mode = Mode::FedT;
        cfg.split = Some(SplitSpec::Ratios {
            ratios: vec![1, 1, 3],
        });
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn data_partition() {
        let cfg = RunConfig::default();
        let d = cfg.build_data().unwrap();
        assert_eq!(d.corpus.len(), 576);
        assert_eq!(d.test.len(), 64);
        let sizes: Vec<usize> = d.shards.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 512);
        let mut ids: Vec<u64> = d
            .shards
            .iter()
            .flatten()
            .chain(&d.test)
            .map(|s| s.id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..576).collect::<Vec<_>>());
    }
}
