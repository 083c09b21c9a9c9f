//! Synthetic token→frame regression corpus and client partitioning.
//!
//! The teacher maps position `j` of the frame sequence to the mean codebook
//! vector of the tokens in a width-3 window centered at token `⌊j / r⌋`,
//! optionally plus a fixed sinusoidal position bias.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::wire::Reader;
use crate::rng;
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: &[u8; 4] = b"FDTC";
pub const CORPUS_FORMAT_VERSION: u32 = 1;

/// Amplitude of the position bias added to every frame.
pub const POSITION_BIAS_SCALE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    pub position_bias: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            min_len: 8,
            max_len: 24,
            frames_per_token: 2,
            position_bias: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    pub position_bias: bool,
    codebook: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Index of the sample in its generating stream.
    pub id: u64,
    pub tokens: Vec<u32>,
    /// `[frames_per_token · len(tokens) × frame_dim]`
    pub frames: Tensor,
}

/// Fixed position bias for frame `j`, channel `e`.
pub fn position_bias(j: usize, e: usize) -> f64 {
    POSITION_BIAS_SCALE * (0.3 * j as f64 + e as f64).sin()
}

impl SyntheticTask {
    pub fn new(cfg: &TaskConfig, vocab_size: usize, frame_dim: usize) -> Result<Self> {
        if vocab_size == 0 || frame_dim == 0 {
            return Err(Error::Config(
                "task needs positive vocab_size and frame_dim".into(),
            ));
        }
        if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
            return Err(Error::Config(format!(
                "task length range [{}, {}] is invalid",
                cfg.min_len, cfg.max_len
            )));
        }
        if cfg.frames_per_token == 0 {
            return Err(Error::Config(
                "task.frames_per_token must be positive".into(),
            ));
        }
        let mut r = rng::stream(cfg.seed, &[rng::STREAM_CODEBOOK]);
        let data = (0..vocab_size * frame_dim)
            .map(|_| rng::standard_normal(&mut r))
            .collect();
        Ok(Self {
            seed: cfg.seed,
            vocab_size,
            frame_dim,
            min_len: cfg.min_len,
            max_len: cfg.max_len,
            frames_per_token: cfg.frames_per_token,
            position_bias: cfg.position_bias,
            codebook: Tensor::new(vec![vocab_size, frame_dim], data)?,
        })
    }

    pub fn codebook(&self) -> &Tensor {
        &self.codebook
    }

    /// Teacher frames for a token sequence.
    pub fn frames_for(&self, tokens: &[u32]) -> Tensor {
        let (s, r, fd) = (tokens.len(), self.frames_per_token, self.frame_dim);
        let mut out = Tensor::zeros(&[s * r, fd]);
        for j in 0..s * r {
            let center = j / r;
            let lo = center.saturating_sub(1);
            let hi = (center + 1).min(s - 1);
            let width = (hi - lo + 1) as f64;
            let row = &mut out.data_mut()[j * fd..(j + 1) * fd];
            for &tok in &tokens[lo..=hi] {
                let code = &self.codebook.data()[tok as usize * fd..(tok as usize + 1) * fd];
                for (o, c) in row.iter_mut().zip(code) {
                    *o += c;
                }
            }
            for (e, o) in row.iter_mut().enumerate() {
                *o /= width;
                if self.position_bias {
                    *o += position_bias(j, e);
                }
            }
        }
        out
    }

    pub fn sample(&self, id: u64) -> Sample {
        let mut r = rng::stream(self.seed, &[rng::STREAM_SAMPLE, id]);
        let len = r.gen_range(self.min_len..=self.max_len);
        let tokens: Vec<u32> = (0..len)
            .map(|_| r.gen_range(0..self.vocab_size as u32))
            .collect();
        Sample {
            id,
            frames: self.frames_for(&tokens),
            tokens,
        }
    }

    /// Samples `start .. start + n` of the task's stream.
    pub fn generate_range(&self, start: u64, n: usize) -> Vec<Sample> {
        (start..start + n as u64)
            .map(|id| self.sample(id))
            .collect()
    }

    pub fn generate(&self, n_samples: usize) -> Result<Vec<Sample>> {
        if n_samples == 0 {
            return Err(Error::Config("generate needs n_samples >= 1".into()));
        }
        Ok(self.generate_range(0, n_samples))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    Balanced { n_clients: usize },
    Ratios { ratios: Vec<usize> },
}

impl SplitSpec {
    pub fn ratios(&self) -> Result<Vec<usize>> {
        let r = match self {
            SplitSpec::Balanced { n_clients } => vec![1; *n_clients],
            SplitSpec::Ratios { ratios } => ratios.clone(),
        };
        if r.is_empty() {
            return Err(Error::Config("split needs at least one shard".into()));
        }
        if r.contains(&0) {
            return Err(Error::Config(format!(
                "split ratios must be positive, got {r:?}"
            )));
        }
        Ok(r)
    }

    pub fn shards(&self) -> usize {
        match self {
            SplitSpec::Balanced { n_clients } => *n_clients,
            SplitSpec::Ratios { ratios } => ratios.len(),
        }
    }
}

/// Shard sizes `⌊total·rᵢ/Σr⌋`, remainder to the largest ratio (lowest index
/// on ties).
pub fn split_sizes(total: usize, spec: &SplitSpec) -> Result<Vec<usize>> {
    let ratios = spec.ratios()?;
    let sum: usize = ratios.iter().sum();
    let mut sizes: Vec<usize> = ratios.iter().map(|&r| total * r / sum).collect();
    let rem = total - sizes.iter().sum::<usize>();
    let largest = ratios
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("non-empty");
    sizes[largest] += rem;
    Ok(sizes)
}

/// Partitions `items` into shards after a seeded permutation.
pub fn split<T: Clone>(items: &[T], spec: &SplitSpec, seed: u64) -> Result<Vec<Vec<T>>> {
    let sizes = split_sizes(items.len(), spec)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::STREAM_SPLIT]));
    let mut shards = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for n in sizes {
        shards.push(
            order[cursor..cursor + n]
                .iter()
                .map(|&i| items[i].clone())
                .collect(),
        );
        cursor += n;
    }
    Ok(shards)
}

/// Seeded random `(train, test)` partition with `n_test` test items. Both
/// halves keep the input order.
pub fn holdout<T: Clone>(items: &[T], n_test: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if n_test >= items.len() {
        return Err(Error::Config(format!(
            "holdout of {n_test} leaves no training data out of {}",
            items.len()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::STREAM_HOLDOUT]));
    let mut is_test = vec![false; items.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, t) in items.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

/// Flat corpus file:
/// `"FDTC" | version u32 | frame_dim u32 | count u32`, then per sample
/// `id u64 | S u32 | F u32 | S × token u32 | F·frame_dim × f64`.
pub fn encode_corpus(samples: &[Sample], frame_dim: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(frame_dim as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.extend_from_slice(&(s.tokens.len() as u32).to_le_bytes());
        out.extend_from_slice(&(s.frames.rows() as u32).to_le_bytes());
        for t in &s.tokens {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for x in s.frames.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_corpus(bytes: &[u8]) -> Result<(usize, Vec<Sample>)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != CORPUS_MAGIC {
        return Err(Error::format(
            "corpus magic",
            "FDTC",
            String::from_utf8_lossy(magic),
        ));
    }
    let version = r.u32()?;
    if version != CORPUS_FORMAT_VERSION {
        return Err(Error::format(
            "corpus format version",
            CORPUS_FORMAT_VERSION,
            version,
        ));
    }
    let frame_dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = r.u64()?;
        let s = r.u32()? as usize;
        let f = r.u32()? as usize;
        let tokens = (0..s).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let frames = Tensor::new(vec![f, frame_dim], r.f64s(f * frame_dim)?)?;
        samples.push(Sample { id, tokens, frames });
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            "corpus length",
            bytes.len() - r.remaining(),
            bytes.len(),
        ));
    }
    Ok((frame_dim, samples))
}
