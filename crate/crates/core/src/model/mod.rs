//! Growable pre-LN encoder/decoder mapping token sequences to frame
//! sequences.
//!
//! Every sublayer computes `x + Sublayer(LN(x))`; both stacks end in a final
//! layer norm. Blocks are appended on top of the stacks by [`grow`], which
//! never touches existing tensors.
//!
//! All trainable tensors live in one flat list ordered by creation: the fixed
//! pre-nets, norms and head first, then `enc.i`/`dec.i` pairs as the model
//! grows. That order is also the wire order.
//!
//! [`grow`]: DynamicTransformer::grow

mod config;
pub mod wire;

pub use config::ModelConfig;
pub use wire::{name_hash, FullState, WeightEntry, WeightSet};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::param::{init_normal, Param, Scaling};
use crate::rng;
use crate::tensor::{causal_mask, Tensor};

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Copy, Debug)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Clone, Copy, Debug)]
struct EncoderBlock {
    ln_attn: Norm,
    attn: Attention,
    ln_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Copy, Debug)]
struct DecoderBlock {
    ln_self: Norm,
    self_attn: Attention,
    ln_cross: Norm,
    cross_attn: Attention,
    ln_ffn: Norm,
    ffn: FeedForward,
}

#[derive(Clone, Copy, Debug)]
struct Fixed {
    embedding: usize,
    text_proj: Linear,
    mel: [Linear; 3],
    enc_norm: Norm,
    dec_norm: Norm,
    head: Linear,
}

/// Parameter inventory split the way the communication-cost model needs it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    /// Weights in all encoder and decoder blocks.
    pub block_params: usize,
    /// Pre-nets, final norms and the output head. Positional encodings are
    /// not trainable and not counted.
    pub fixed_params: usize,
    /// `W1`: weights in one encoder block.
    pub per_enc_block: usize,
    /// `W2`: weights in one decoder block.
    pub per_dec_block: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.block_params + self.fixed_params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadMode {
    /// Raw weights only; what travels between server and clients.
    WeightsOnly,
    /// Raw weights plus the growth seed and Adam moments.
    Full,
}

enum Init {
    Weight,
    Embedding,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct DynamicTransformer {
    config: ModelConfig,
    seed: u64,
    params: Vec<Param>,
    names: Vec<String>,
    fixed: Fixed,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    positions: Tensor,
}

fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe.data_mut()[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Decoder input for teacher forcing: a zero frame followed by all but the
/// last target frame.
pub fn shift_right(frames: &Tensor) -> Tensor {
    let cols = frames.cols();
    let mut out = Tensor::zeros(frames.shape());
    let n = frames.len();
    out.data_mut()[cols..].copy_from_slice(&frames.data()[..n - cols]);
    out
}

impl DynamicTransformer {
    /// A model at the initial depth `L / c`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut model = Self {
            positions: sinusoidal_positions(config.max_seq_len, config.d_model),
            config,
            seed,
            params: Vec::new(),
            names: Vec::new(),
            fixed: Fixed {
                embedding: 0,
                text_proj: Linear { w: 0, b: 0 },
                mel: [Linear { w: 0, b: 0 }; 3],
                enc_norm: Norm { gamma: 0, beta: 0 },
                dec_norm: Norm { gamma: 0, beta: 0 },
                head: Linear { w: 0, b: 0 },
            },
            encoder: Vec::new(),
            decoder: Vec::new(),
        };
        let (vocab, d, fd) = (
            model.config.vocab_size,
            model.config.d_model,
            model.config.frame_dim,
        );
        model.fixed = Fixed {
            embedding: model.add_param("text.embedding", &[vocab, d], 1, Init::Embedding),
            text_proj: model.linear("text.proj", d, d),
            mel: [
                model.linear("mel.fc0", fd, d),
                model.linear("mel.fc1", d, d),
                model.linear("mel.fc2", d, d),
            ],
            enc_norm: model.norm("enc.final_norm"),
            dec_norm: model.norm("dec.final_norm"),
            head: model.linear("head", d, fd),
        };
        let q = model.config.layers_per_growth();
        model.push_blocks(q);
        Ok(model)
    }

    fn add_param(&mut self, name: &str, shape: &[usize], fan_in: usize, init: Init) -> usize {
        let scaling = if self.config.literal_division {
            Scaling::EqualizedDivide
        } else {
            Scaling::Equalized
        };
        let tensor_seed = rng::derive_seed(self.seed, &[name_hash(name)]);
        let p = match init {
            Init::Weight => Param::new(init_normal(shape, tensor_seed), fan_in, scaling),
            Init::Embedding => Param::new(init_normal(shape, tensor_seed), 1, Scaling::Plain),
            Init::Zeros => Param::new(Tensor::zeros(shape), 1, Scaling::Plain),
            Init::Ones => Param::new(Tensor::full(shape, 1.0), 1, Scaling::Plain),
        };
        self.params.push(p);
        self.names.push(name.to_string());
        self.params.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.add_param(
                &format!("{name}.w"),
                &[fan_in, fan_out],
                fan_in,
                Init::Weight,
            ),
            b: self.add_param(&format!("{name}.b"), &[fan_out], 1, Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str) -> Norm {
        let d = self.config.d_model;
        Norm {
            gamma: self.add_param(&format!("{name}.gamma"), &[d], 1, Init::Ones),
            beta: self.add_param(&format!("{name}.beta"), &[d], 1, Init::Zeros),
        }
    }

    fn attention(&mut self, name: &str) -> Attention {
        let d = self.config.d_model;
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn feed_forward(&mut self, name: &str) -> FeedForward {
        let (d, f) = (self.config.d_model, self.config.ffn_dim);
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, f),
            down: self.linear(&format!("{name}.down"), f, d),
        }
    }

    fn push_blocks(&mut self, count: usize) {
        for _ in 0..count {
            let i = self.encoder.len();
            let enc = EncoderBlock {
                ln_attn: self.norm(&format!("enc.{i}.ln_attn")),
                attn: self.attention(&format!("enc.{i}.attn")),
                ln_ffn: self.norm(&format!("enc.{i}.ln_ffn")),
                ffn: self.feed_forward(&format!("enc.{i}.ffn")),
            };
            let dec = DecoderBlock {
                ln_self: self.norm(&format!("dec.{i}.ln_self")),
                self_attn: self.attention(&format!("dec.{i}.self_attn")),
                ln_cross: self.norm(&format!("dec.{i}.ln_cross")),
                cross_attn: self.attention(&format!("dec.{i}.cross_attn")),
                ln_ffn: self.norm(&format!("dec.{i}.ln_ffn")),
                ffn: self.feed_forward(&format!("dec.{i}.ffn")),
            };
            self.encoder.push(enc);
            self.decoder.push(dec);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Current depth `l` of each stack.
    pub fn layers(&self) -> usize {
        self.encoder.len()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Appends `q` fresh blocks on top of both stacks.
    pub fn grow(&mut self, q: usize) -> Result<()> {
        let (l, target) = (self.layers(), self.config.target_layers);
        if l + q > target {
            return Err(Error::GrowthCap {
                current: l,
                step: q,
                target,
            });
        }
        self.push_blocks(q);
        Ok(())
    }

    pub fn param_count(&self) -> ParamCount {
        let size = |ids: &[usize]| ids.iter().map(|&i| self.params[i].len()).sum::<usize>();
        let fixed_ids = self.fixed_ids();
        let (enc0, dec0) = self.block_ids(0);
        let per_enc_block = size(&enc0);
        let per_dec_block = size(&dec0);
        ParamCount {
            block_params: self.layers() * (per_enc_block + per_dec_block),
            fixed_params: size(&fixed_ids),
            per_enc_block,
            per_dec_block,
        }
    }

    fn fixed_ids(&self) -> Vec<usize> {
        let f = &self.fixed;
        let mut ids = vec![f.embedding, f.text_proj.w, f.text_proj.b];
        for m in &f.mel {
            ids.extend([m.w, m.b]);
        }
        ids.extend([
            f.enc_norm.gamma,
            f.enc_norm.beta,
            f.dec_norm.gamma,
            f.dec_norm.beta,
            f.head.w,
            f.head.b,
        ]);
        ids
    }

    fn block_ids(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        fn lin(l: &Linear) -> [usize; 2] {
            [l.w, l.b]
        }
        fn nrm(n: &Norm) -> [usize; 2] {
            [n.gamma, n.beta]
        }
        fn att(a: &Attention) -> Vec<usize> {
            [lin(&a.q), lin(&a.k), lin(&a.v), lin(&a.o)].concat()
        }
        fn ffn(f: &FeedForward) -> Vec<usize> {
            [lin(&f.up), lin(&f.down)].concat()
        }
        let e = &self.encoder[i];
        let d = &self.decoder[i];
        let enc = [
            nrm(&e.ln_attn).to_vec(),
            att(&e.attn),
            nrm(&e.ln_ffn).to_vec(),
            ffn(&e.ffn),
        ]
        .concat();
        let dec = [
            nrm(&d.ln_self).to_vec(),
            att(&d.self_attn),
            nrm(&d.ln_cross).to_vec(),
            att(&d.cross_attn),
            nrm(&d.ln_ffn).to_vec(),
            ffn(&d.ffn),
        ]
        .concat();
        (enc, dec)
    }

    /// Parameter indices of encoder block `i` followed by decoder block `i`.
    pub fn block_param_ids(&self, i: usize) -> Vec<usize> {
        let (mut e, d) = self.block_ids(i);
        e.extend(d);
        e
    }

    // ---- forward -------------------------------------------------------

    fn check_inputs(&self, tokens: &[u32], frames: usize) -> Result<()> {
        let max = self.config.max_seq_len;
        if tokens.is_empty() {
            return Err(Error::Data("empty token sequence".into()));
        }
        if frames == 0 {
            return Err(Error::Data("at least one frame is required".into()));
        }
        if tokens.len() > max || frames > max {
            return Err(Error::Data(format!(
                "sequence of {} tokens / {frames} frames exceeds max_seq_len {max}",
                tokens.len()
            )));
        }
        if let Some(&t) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::Data(format!(
                "token id {t} out of range for vocab {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn linear_fwd(&self, g: &mut Graph, x: Var, l: &Linear) -> Result<Var> {
        let w = g.param(l.w, &self.params[l.w]);
        let b = g.param(l.b, &self.params[l.b]);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    fn norm_fwd(&self, g: &mut Graph, x: Var, n: &Norm) -> Result<Var> {
        let gamma = g.param(n.gamma, &self.params[n.gamma]);
        let beta = g.param(n.beta, &self.params[n.beta]);
        g.layer_norm(x, gamma, beta)
    }

    fn attention_fwd(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        a: &Attention,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let h = self.config.heads;
        let q = self.linear_fwd(g, x, &a.q)?;
        let k = self.linear_fwd(g, memory, &a.k)?;
        let v = self.linear_fwd(g, memory, &a.v)?;
        let (q, k, v) = (
            g.split_heads(q, h)?,
            g.split_heads(k, h)?,
            g.split_heads(v, h)?,
        );
        let ctx = g.attention(q, k, v, mask)?;
        let ctx = g.merge_heads(ctx)?;
        self.linear_fwd(g, ctx, &a.o)
    }

    fn ffn_fwd(&self, g: &mut Graph, x: Var, f: &FeedForward) -> Result<Var> {
        let hidden = self.linear_fwd(g, x, &f.up)?;
        let hidden = g.relu(hidden);
        self.linear_fwd(g, hidden, &f.down)
    }

    fn add_positions(&self, g: &mut Graph, x: Var, len: usize) -> Result<Var> {
        let d = self.config.d_model;
        let pe = Tensor::new(vec![len, d], self.positions.data()[..len * d].to_vec())?;
        let pe = g.input(pe);
        g.add(x, pe)
    }

    fn encoder_block_fwd(&self, g: &mut Graph, x: Var, b: &EncoderBlock) -> Result<Var> {
        let n = self.norm_fwd(g, x, &b.ln_attn)?;
        let a = self.attention_fwd(g, n, n, &b.attn, None)?;
        let x = g.add(x, a)?;
        let n = self.norm_fwd(g, x, &b.ln_ffn)?;
        let f = self.ffn_fwd(g, n, &b.ffn)?;
        g.add(x, f)
    }

    fn decoder_block_fwd(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        mask: &Tensor,
        b: &DecoderBlock,
    ) -> Result<Var> {
        let n = self.norm_fwd(g, x, &b.ln_self)?;
        let a = self.attention_fwd(g, n, n, &b.self_attn, Some(mask))?;
        let x = g.add(x, a)?;
        let n = self.norm_fwd(g, x, &b.ln_cross)?;
        let c = self.attention_fwd(g, n, memory, &b.cross_attn, None)?;
        let x = g.add(x, c)?;
        let n = self.norm_fwd(g, x, &b.ln_ffn)?;
        let f = self.ffn_fwd(g, n, &b.ffn)?;
        g.add(x, f)
    }

    /// Encoder over the first `depth` blocks. Returns the final-normed memory
    /// and the output of each block.
    fn encode(&self, g: &mut Graph, tokens: &[u32], depth: usize) -> Result<(Var, Vec<Var>)> {
        let f = &self.fixed;
        let table = g.param(f.embedding, &self.params[f.embedding]);
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let x = g.embedding(table, &ids)?;
        let x = self.linear_fwd(g, x, &f.text_proj)?;
        let mut x = self.add_positions(g, x, tokens.len())?;
        let mut states = Vec::with_capacity(depth);
        for b in &self.encoder[..depth] {
            x = self.encoder_block_fwd(g, x, b)?;
            states.push(x);
        }
        let memory = self.norm_fwd(g, x, &f.enc_norm)?;
        Ok((memory, states))
    }

    /// Decoder over the first `depth` blocks on already shifted input
    /// frames. Returns predicted frames and the output of each block.
    fn decode(
        &self,
        g: &mut Graph,
        shifted: &Tensor,
        memory: Var,
        depth: usize,
    ) -> Result<(Var, Vec<Var>)> {
        let f = &self.fixed;
        let len = shifted.rows();
        let mut x = g.input(shifted.clone());
        for (i, l) in f.mel.iter().enumerate() {
            x = self.linear_fwd(g, x, l)?;
            if i < f.mel.len() - 1 {
                x = g.relu(x);
            }
        }
        let mut x = self.add_positions(g, x, len)?;
        let mask = causal_mask(len);
        let mut states = Vec::with_capacity(depth);
        for b in &self.decoder[..depth] {
            x = self.decoder_block_fwd(g, x, memory, &mask, b)?;
            states.push(x);
        }
        let x = self.norm_fwd(g, x, &f.dec_norm)?;
        let pred = self.linear_fwd(g, x, &f.head)?;
        Ok((pred, states))
    }

    /// Records the teacher-forced forward pass of one sequence on `g`.
    /// `target` is `[F×frame_dim]`; the result has the same shape.
    pub fn forward_graph(&self, g: &mut Graph, tokens: &[u32], target: &Tensor) -> Result<Var> {
        let fd = self.config.frame_dim;
        if target.shape().len() != 2 || target.cols() != fd {
            return Err(Error::Dimension(format!(
                "target frames must be [F x {fd}], got {:?}",
                target.shape()
            )));
        }
        self.check_inputs(tokens, target.rows())?;
        let (memory, _) = self.encode(g, tokens, self.layers())?;
        let (pred, _) = self.decode(g, &shift_right(target), memory, self.layers())?;
        Ok(pred)
    }

    /// Teacher-forced predictions for a batch of (possibly ragged) sequences.
    pub fn forward(&self, tokens: &[Vec<u32>], targets: &[Tensor]) -> Result<Vec<Tensor>> {
        if tokens.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "batch of {} token sequences but {} targets",
                tokens.len(),
                targets.len()
            )));
        }
        tokens
            .iter()
            .zip(targets)
            .map(|(t, y)| {
                let mut g = Graph::new();
                let p = self.forward_graph(&mut g, t, y)?;
                Ok(g.value(p).clone())
            })
            .collect()
    }

    /// Accumulates gradients of the batch MSE (mean over every element of
    /// every target) into the parameters and returns the loss.
    pub fn accumulate_batch_grads(&mut self, batch: &[(&[u32], &Tensor)]) -> Result<f64> {
        let total: usize = batch.iter().map(|(_, y)| y.len()).sum();
        if total == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let scale = 1.0 / total as f64;
        let mut loss = 0.0;
        for (tokens, target) in batch {
            let mut g = Graph::new();
            let pred = self.forward_graph(&mut g, tokens, target)?;
            let l = g.squared_error(pred, target, scale)?;
            loss += g.value(l).data()[0];
            g.backward(l)?.accumulate_into(&mut self.params);
        }
        Ok(loss)
    }

    /// Teacher-forced MSE over all elements of all samples.
    pub fn evaluate(&self, batch: &[(&[u32], &Tensor)]) -> Result<f64> {
        let mut sq = 0.0;
        let mut count = 0usize;
        for (tokens, target) in batch {
            let mut g = Graph::new();
            let pred = self.forward_graph(&mut g, tokens, target)?;
            let l = g.squared_error(pred, target, 1.0)?;
            sq += g.value(l).data()[0];
            count += target.len();
        }
        if count == 0 {
            return Err(Error::Data("empty evaluation set".into()));
        }
        Ok(sq / count as f64)
    }

    /// Greedy autoregressive generation of exactly `n_frames` frames from a
    /// zero start frame.
    pub fn infer(&self, tokens: &[u32], n_frames: usize) -> Result<Tensor> {
        if n_frames == 0 {
            return Err(Error::Data("n_frames must be at least 1".into()));
        }
        self.check_inputs(tokens, n_frames)?;
        let fd = self.config.frame_dim;
        let mut g = Graph::new();
        let (memory, _) = self.encode(&mut g, tokens, self.layers())?;
        let mut generated: Vec<f64> = Vec::with_capacity(n_frames * fd);
        for j in 0..n_frames {
            let mut input = vec![0.0; (j + 1) * fd];
            input[fd..].copy_from_slice(&generated);
            let input = Tensor::new(vec![j + 1, fd], input)?;
            let (pred, _) = self.decode(&mut g, &input, memory, self.layers())?;
            generated.extend_from_slice(&g.value(pred).data()[j * fd..(j + 1) * fd]);
        }
        Tensor::new(vec![n_frames, fd], generated)
    }

    /// Hidden states of the first `depth` blocks evaluated on their own: the
    /// encoder block outputs, then decoder block outputs attending to the
    /// memory produced by that truncated encoder.
    pub fn probe_hidden_states(
        &self,
        tokens: &[u32],
        target: &Tensor,
        depth: usize,
    ) -> Result<Vec<Tensor>> {
        if depth == 0 || depth > self.layers() {
            return Err(Error::Contract(format!(
                "probe depth {depth} outside 1..={}",
                self.layers()
            )));
        }
        self.check_inputs(tokens, target.rows())?;
        let mut g = Graph::new();
        let (memory, enc) = self.encode(&mut g, tokens, depth)?;
        let (_, dec) = self.decode(&mut g, &shift_right(target), memory, depth)?;
        Ok(enc
            .into_iter()
            .chain(dec)
            .map(|v| g.value(v).clone())
            .collect())
    }

    // ---- serialization -------------------------------------------------

    pub fn weights(&self) -> WeightSet {
        self.to_weight_set(PayloadMode::WeightsOnly)
    }

    pub fn to_weight_set(&self, mode: PayloadMode) -> WeightSet {
        let entries = self
            .params
            .iter()
            .zip(&self.names)
            .map(|(p, n)| WeightEntry {
                name_hash: name_hash(n),
                dims: p.raw.shape().iter().map(|&d| d as u32).collect(),
                data: p.raw.data().to_vec(),
            })
            .collect();
        let state = (mode == PayloadMode::Full).then(|| FullState {
            seed: self.seed,
            m: self.params.iter().map(|p| p.m.data().to_vec()).collect(),
            v: self.params.iter().map(|p| p.v.data().to_vec()).collect(),
            steps: self.params.iter().map(|p| p.step).collect(),
        });
        WeightSet {
            layers: self.layers() as u32,
            entries,
            state,
        }
    }

    pub fn serialize(&self, mode: PayloadMode) -> Vec<u8> {
        self.to_weight_set(mode).encode()
    }

    pub fn deserialize(bytes: &[u8], config: &ModelConfig) -> Result<Self> {
        Self::from_weight_set(config, &WeightSet::decode(bytes)?)
    }

    /// Rebuilds a model of the depth recorded in `ws`. Weights-only sets get
    /// growth seed 0.
    pub fn from_weight_set(config: &ModelConfig, ws: &WeightSet) -> Result<Self> {
        config.validate()?;
        let layers = ws.layers as usize;
        let q = config.layers_per_growth();
        if layers < q || layers > config.target_layers || !layers.is_multiple_of(q) {
            return Err(Error::format(
                "layer count",
                format!("a multiple of {q} in {q}..={}", config.target_layers),
                layers,
            ));
        }
        let seed = ws.state.as_ref().map_or(0, |s| s.seed);
        let mut model = Self::new(config.clone(), seed)?;
        model.push_blocks(layers - q);
        model.load_weight_set(ws)?;
        Ok(model)
    }

    /// Overwrites raw weights (and moments, for full sets) in place. The
    /// tensor table must match this model exactly.
    pub fn load_weight_set(&mut self, ws: &WeightSet) -> Result<()> {
        if ws.layers as usize != self.layers() {
            return Err(Error::format("layer count", self.layers(), ws.layers));
        }
        if ws.entries.len() != self.params.len() {
            return Err(Error::format(
                "tensor count",
                self.params.len(),
                ws.entries.len(),
            ));
        }
        for (i, (e, (p, name))) in ws
            .entries
            .iter()
            .zip(self.params.iter().zip(&self.names))
            .enumerate()
        {
            let dims: Vec<u32> = p.raw.shape().iter().map(|&d| d as u32).collect();
            if e.name_hash != name_hash(name) || e.dims != dims {
                return Err(Error::format(
                    format!("tensor {i}"),
                    format!("{name} {dims:?} (hash {:#018x})", name_hash(name)),
                    format!("{:?} (hash {:#018x})", e.dims, e.name_hash),
                ));
            }
        }
        for (i, (p, e)) in self.params.iter_mut().zip(&ws.entries).enumerate() {
            p.raw.data_mut().copy_from_slice(&e.data);
            if let Some(st) = &ws.state {
                p.m.data_mut().copy_from_slice(&st.m[i]);
                p.v.data_mut().copy_from_slice(&st.v[i]);
                p.step = st.steps[i];
            }
        }
        if let Some(st) = &ws.state {
            self.seed = st.seed;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 8,
            frame_dim: 4,
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            target_layers: 4,
            growth_parts: 4,
            max_seq_len: 16,
            literal_division: false,
        }
    }

    #[test]
    fn initial_depth_is_l_over_c() {
        let m = DynamicTransformer::new(ModelConfig::default(), 1).unwrap();
        assert_eq!(m.layers(), 1);
        let cfg = ModelConfig {
            target_layers: 4,
            growth_parts: 2,
            ..ModelConfig::default()
        };
        assert_eq!(DynamicTransformer::new(cfg, 1).unwrap().layers(), 2);
    }

    #[test]
    fn indivisible_growth_parts_is_config_error() {
        let cfg = ModelConfig {
            target_layers: 5,
            growth_parts: 2,
            ..ModelConfig::default()
        };
        assert!(matches!(
            DynamicTransformer::new(cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn per_block_counts_match_inventory() {
        let m = DynamicTransformer::new(tiny(), 3).unwrap();
        let c = m.param_count();
        // attention: 4 × (8·8 + 8); ffn: 8·16 + 16 + 16·8 + 8; norms: 2·8 each
        assert_eq!(c.per_enc_block, 4 * 72 + 280 + 2 * 16);
        assert_eq!(c.per_dec_block, 8 * 72 + 280 + 3 * 16);
        // embedding 8·8, text proj 72, mel 4·8+8 + 2·72, norms 2·16, head 8·4+4
        assert_eq!(c.fixed_params, 64 + 72 + 40 + 144 + 32 + 36);
        assert_eq!(c.block_params, c.per_enc_block + c.per_dec_block);
    }

    #[test]
    fn grow_preserves_and_caps() {
        let mut m = DynamicTransformer::new(tiny(), 5).unwrap();
        let before: Vec<Tensor> = m.params().iter().map(|p| p.raw.clone()).collect();
        let c0 = m.param_count();
        m.grow(1).unwrap();
        assert_eq!(m.layers(), 2);
        for (a, b) in before.iter().zip(m.params()) {
            assert!(a.bits_eq(&b.raw));
        }
        let c1 = m.param_count();
        assert_eq!(
            c1.block_params,
            c0.block_params + c0.per_enc_block + c0.per_dec_block
        );
        assert_eq!(c1.fixed_params, c0.fixed_params);
        let total: usize = m.params().iter().map(Param::len).sum();
        assert_eq!(total, c1.total());
        m.grow(2).unwrap();
        assert!(matches!(m.grow(1), Err(Error::GrowthCap { .. })));
        assert!(m.params()[before.len()..].iter().all(|p| p.m.sum() == 0.0));
    }

    #[test]
    fn grown_blocks_are_independent_of_growth_timing() {
        let mut a = DynamicTransformer::new(tiny(), 9).unwrap();
        a.grow(1).unwrap();
        a.grow(1).unwrap();
        let mut b = DynamicTransformer::new(tiny(), 9).unwrap();
        b.grow(2).unwrap();
        assert_eq!(
            a.serialize(PayloadMode::Full),
            b.serialize(PayloadMode::Full)
        );
    }

    #[test]
    fn probe_rejects_bad_depth() {
        let m = DynamicTransformer::new(tiny(), 1).unwrap();
        let y = Tensor::zeros(&[3, 4]);
        assert!(m.probe_hidden_states(&[1, 2], &y, 0).is_err());
        assert!(m.probe_hidden_states(&[1, 2], &y, 2).is_err());
    }

    #[test]
    fn data_errors() {
        let m = DynamicTransformer::new(tiny(), 1).unwrap();
        let y = Tensor::zeros(&[3, 4]);
        assert!(matches!(
            m.forward(&[vec![8]], std::slice::from_ref(&y)),
            Err(Error::Data(_))
        ));
        let long = vec![0u32; 17];
        assert!(matches!(m.forward(&[long], &[y]), Err(Error::Data(_))));
        assert!(matches!(m.infer(&[1], 0), Err(Error::Data(_))));
    }

    #[test]
    fn wrong_frame_width_is_dimension_error() {
        let m = DynamicTransformer::new(tiny(), 1).unwrap();
        let y = Tensor::zeros(&[3, 5]);
        assert!(matches!(
            m.forward(&[vec![1]], &[y]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn shift_right_moves_rows_down() {
        let y = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(shift_right(&y).data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}
