//! Post-LN transformer encoder and causal decoder built on [`Graph`].

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore, INIT_STD};
use crate::tensor::{Real, Tensor};
use crate::NnError;

/// Padding id shared by every vocabulary in the workspace.
pub const PAD_ID: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub segment_count: usize,
}

impl EncoderConfig {
    /// Small profile trainable on a laptop CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            max_positions: 128,
            vocab_size,
            segment_count: 2,
        }
    }

    /// BERT-base shape: 12 layers, 768 wide, 384 source tokens.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            layers: 12,
            model_dim: 768,
            heads: 12,
            ffn_dim: 3072,
            max_positions: 384,
            vocab_size,
            segment_count: 2,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(NnError::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.layers == 0 || self.ffn_dim == 0 || self.vocab_size == 0 || self.max_positions == 0
        {
            return Err(NnError::Config("encoder extents must be positive".into()));
        }
        if self.segment_count < 2 {
            return Err(NnError::Config("segment_count must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub target_vocab_size: usize,
    /// Width of the target-side token embeddings before projection.
    pub embed_dim: usize,
    pub max_target_len: usize,
}

impl DecoderConfig {
    pub fn desk(target_vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            target_vocab_size,
            embed_dim,
            max_target_len: 50,
        }
    }

    pub fn full(target_vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            layers: 6,
            model_dim: 768,
            heads: 8,
            ffn_dim: 2048,
            target_vocab_size,
            embed_dim,
            max_target_len: 50,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(NnError::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.max_target_len == 0 {
            return Err(NnError::Config("max_target_len must be at least 1".into()));
        }
        if self.layers == 0
            || self.ffn_dim == 0
            || self.target_vocab_size == 0
            || self.embed_dim == 0
        {
            return Err(NnError::Config("decoder extents must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Creates parameters (when given an rng) or binds to existing ones by name.
pub struct ParamBuilder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: Option<&'a mut dyn RngCore>,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn create(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore, prefix: &str) -> Self {
        Self {
            store,
            rng: Some(rng),
            prefix: prefix.to_string(),
        }
    }

    pub fn bind(store: &'a mut ParamStore<T>, prefix: &str) -> Self {
        Self {
            store,
            rng: None,
            prefix: prefix.to_string(),
        }
    }

    fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId, NnError> {
        let full = format!("{}{}", self.prefix, name);
        match self.rng.as_deref_mut() {
            Some(rng) => Ok(match init {
                Init::Normal => self.store.add_normal(full, shape, INIT_STD, rng),
                Init::Zeros => self.store.add_const(full, shape, 0.0),
                Init::Ones => self.store.add_const(full, shape, 1.0),
            }),
            None => self.store.expect(&full, shape),
        }
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Result<Linear, NnError> {
        Ok(Linear {
            w: self.get(&format!("{name}.weight"), &[input, output], Init::Normal)?,
            b: self.get(&format!("{name}.bias"), &[output], Init::Zeros)?,
        })
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm, NnError> {
        Ok(LayerNorm {
            gamma: self.get(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: self.get(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    fn attention(&mut self, name: &str, dim: usize) -> Result<Attention, NnError> {
        Ok(Attention {
            q: self.linear(&format!("{name}.query"), dim, dim)?,
            k: self.linear(&format!("{name}.key"), dim, dim)?,
            v: self.linear(&format!("{name}.value"), dim, dim)?,
            o: self.linear(&format!("{name}.output"), dim, dim)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    /// Multi-head scaled dot-product attention. `allowed` is a row-major
    /// `queries × keys` mask. Returns the projected output and the per-head
    /// attention probabilities.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        xq: Var,
        xkv: Var,
        allowed: &[bool],
        heads: usize,
    ) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, xq);
        let k = self.k.forward(g, xkv);
        let v = self.v.forward(g, xkv);
        self.heads(g, q, k, v, allowed, heads)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub ln_attn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln_ffn: LayerNorm,
}

impl EncoderLayer {
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        allowed: &[bool],
        heads: usize,
    ) -> (Var, Vec<Var>) {
        let (a, probs) = self.attn.forward(g, x, x, allowed, heads);
        let x = g.add(x, a);
        let x = self.ln_attn.forward(g, x);
        let h = self.ffn_in.forward(g, x);
        let h = g.gelu(h);
        let h = self.ffn_out.forward(g, h);
        let x2 = g.add(x, h);
        (self.ln_ffn.forward(g, x2), probs)
    }
}

pub struct EncoderOutput {
    /// `[len, model_dim]` contextual vectors.
    pub hidden: Var,
    /// Per layer, per head attention probabilities.
    pub attention: Vec<Vec<Var>>,
}

/// Token + segment + learned position embeddings followed by post-LN blocks.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_emb: ParamId,
    pub segment_emb: ParamId,
    pub position_emb: ParamId,
    pub emb_ln: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn init<T: Real>(
        config: EncoderConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self, NnError> {
        config.validate()?;
        Self::build(config, &mut ParamBuilder::create(store, rng, prefix))
    }

    pub fn bind<T: Real>(
        config: EncoderConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
    ) -> Result<Self, NnError> {
        config.validate()?;
        Self::build(config, &mut ParamBuilder::bind(store, prefix))
    }

    fn build<T: Real>(
        config: EncoderConfig,
        pb: &mut ParamBuilder<'_, T>,
    ) -> Result<Self, NnError> {
        let d = config.model_dim;
        let token_emb = pb.get("embeddings.token", &[config.vocab_size, d], Init::Normal)?;
        let segment_emb = pb.get(
            "embeddings.segment",
            &[config.segment_count, d],
            Init::Normal,
        )?;
        let position_emb = pb.get(
            "embeddings.position",
            &[config.max_positions, d],
            Init::Normal,
        )?;
        let emb_ln = pb.layer_norm("embeddings.ln", d)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            layers.push(EncoderLayer {
                attn: pb.attention(&format!("{p}.attention"), d)?,
                ln_attn: pb.layer_norm(&format!("{p}.attention.ln"), d)?,
                ffn_in: pb.linear(&format!("{p}.ffn.in"), d, config.ffn_dim)?,
                ffn_out: pb.linear(&format!("{p}.ffn.out"), config.ffn_dim, d)?,
                ln_ffn: pb.layer_norm(&format!("{p}.ffn.ln"), d)?,
            });
        }
        Ok(Self {
            config,
            token_emb,
            segment_emb,
            position_emb,
            emb_ln,
            layers,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[usize],
        segments: &[usize],
    ) -> Result<EncoderOutput, NnError> {
        let len = tokens.len();
        if len != segments.len() {
            return Err(NnError::Input(format!(
                "{} tokens but {} segment ids",
                len,
                segments.len()
            )));
        }
        if len == 0 {
            return Err(NnError::Input("empty encoder input".into()));
        }
        if len > self.config.max_positions {
            return Err(NnError::TooLong {
                len,
                max: self.config.max_positions,
            });
        }
        if let Some(t) = tokens.iter().find(|t| **t >= self.config.vocab_size) {
            return Err(NnError::Input(format!("token id {t} outside vocabulary")));
        }
        if let Some(s) = segments.iter().find(|s| **s >= self.config.segment_count) {
            return Err(NnError::Input(format!("segment id {s} outside range")));
        }
        let tok = g.param(self.token_emb);
        let seg = g.param(self.segment_emb);
        let pos = g.param(self.position_emb);
        let e_tok = g.gather(tok, tokens);
        let e_seg = g.gather(seg, segments);
        let positions: Vec<usize> = (0..len).collect();
        let e_pos = g.gather(pos, &positions);
        let x = g.add_n(&[e_tok, e_seg, e_pos]);
        let mut x = self.emb_ln.forward(g, x);

        let allowed = key_padding_mask(tokens, len);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, probs) = layer.forward(g, x, &allowed, self.config.heads);
            x = y;
            attention.push(probs);
        }
        Ok(EncoderOutput {
            hidden: x,
            attention,
        })
    }
}

/// `queries × keys` mask allowing every non-pad key.
pub fn key_padding_mask(keys: &[usize], queries: usize) -> Vec<bool> {
    let row: Vec<bool> = keys.iter().map(|t| *t != PAD_ID).collect();
    let mut out = Vec::with_capacity(queries * keys.len());
    for _ in 0..queries {
        out.extend_from_slice(&row);
    }
    out
}

/// Lower-triangular mask: query `i` may attend keys `0..=i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    let mut out = vec![false; len * len];
    for i in 0..len {
        for j in 0..=i {
            out[i * len + j] = true;
        }
    }
    out
}

/// Fixed sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions<T: Real>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, dim], |idx| {
        let pos = (idx / dim) as f64;
        let i = idx % dim;
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let v = if i % 2 == 0 {
            (pos * rate).sin()
        } else {
            (pos * rate).cos()
        };
        T::from_f64_lossy(v)
    })
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub ln_self: LayerNorm,
    pub cross_attn: Attention,
    pub ln_cross: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln_ffn: LayerNorm,
}

pub struct DecoderOutput {
    /// `[target_len, target_vocab]` next-token logits.
    pub logits: Var,
    /// Per layer, per head cross-attention probabilities `[target_len, source_len]`.
    pub cross_attention: Vec<Vec<Var>>,
}

/// Causal decoder over a target vocabulary whose embeddings have their own
/// width; a linear projection maps them into the encoder's model space.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub token_emb: ParamId,
    pub segment_emb: ParamId,
    pub projection: Linear,
    pub layers: Vec<DecoderLayer>,
    pub output: Linear,
}

impl Decoder {
    pub fn init<T: Real>(
        config: DecoderConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Self, NnError> {
        config.validate()?;
        Self::build(config, &mut ParamBuilder::create(store, rng, prefix))
    }

    pub fn bind<T: Real>(
        config: DecoderConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
    ) -> Result<Self, NnError> {
        config.validate()?;
        Self::build(config, &mut ParamBuilder::bind(store, prefix))
    }

    fn build<T: Real>(
        config: DecoderConfig,
        pb: &mut ParamBuilder<'_, T>,
    ) -> Result<Self, NnError> {
        let d = config.model_dim;
        let e = config.embed_dim;
        let token_emb = pb.get(
            "embeddings.token",
            &[config.target_vocab_size, e],
            Init::Normal,
        )?;
        let segment_emb = pb.get("embeddings.segment", &[2, e], Init::Normal)?;
        let projection = pb.linear("embeddings.projection", e, d)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            layers.push(DecoderLayer {
                self_attn: pb.attention(&format!("{p}.self_attention"), d)?,
                ln_self: pb.layer_norm(&format!("{p}.self_attention.ln"), d)?,
                cross_attn: pb.attention(&format!("{p}.cross_attention"), d)?,
                ln_cross: pb.layer_norm(&format!("{p}.cross_attention.ln"), d)?,
                ffn_in: pb.linear(&format!("{p}.ffn.in"), d, config.ffn_dim)?,
                ffn_out: pb.linear(&format!("{p}.ffn.out"), config.ffn_dim, d)?,
                ln_ffn: pb.layer_norm(&format!("{p}.ffn.ln"), d)?,
            });
        }
        let output = pb.linear("output", d, config.target_vocab_size)?;
        Ok(Self {
            config,
            token_emb,
            segment_emb,
            projection,
            layers,
            output,
        })
    }

    /// Teacher-forced pass over `inputs` (target ids starting with the facet
    /// bos) attending to `memory` (`[source_len, model_dim]`). `memory_keys`
    /// holds the source token ids so source padding can be masked.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        inputs: &[usize],
        memory: Var,
        memory_keys: &[usize],
    ) -> Result<DecoderOutput, NnError> {
        let len = inputs.len();
        if len == 0 {
            return Err(NnError::Input("empty decoder input".into()));
        }
        if let Some(t) = inputs.iter().find(|t| **t >= self.config.target_vocab_size) {
            return Err(NnError::Input(format!("target id {t} outside vocabulary")));
        }
        let mem_shape = g.value(memory).shape().to_vec();
        if mem_shape.len() != 2
            || mem_shape[0] != memory_keys.len()
            || mem_shape[1] != self.config.model_dim
        {
            return Err(NnError::Input(format!(
                "memory shape {:?} incompatible with {} keys of width {}",
                mem_shape,
                memory_keys.len(),
                self.config.model_dim
            )));
        }
        let tok = g.param(self.token_emb);
        let seg = g.param(self.segment_emb);
        let e_tok = g.gather(tok, inputs);
        let e_seg = g.gather(seg, &vec![0; len]);
        let e_pos = g.input(sinusoidal_positions(len, self.config.embed_dim));
        let x = g.add_n(&[e_tok, e_seg, e_pos]);
        let mut x = self.projection.forward(g, x);

        let self_mask = causal_mask(len);
        let cross_mask = key_padding_mask(memory_keys, len);
        let heads = self.config.heads;
        let mut cross_attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, _) = layer.self_attn.forward(g, x, x, &self_mask, heads);
            let y = g.add(x, a);
            let y = layer.ln_self.forward(g, y);
            let (c, probs) = layer.cross_attn.forward(g, y, memory, &cross_mask, heads);
            let z = g.add(y, c);
            let z = layer.ln_cross.forward(g, z);
            let h = layer.ffn_in.forward(g, z);
            let h = g.gelu(h);
            let h = layer.ffn_out.forward(g, h);
            let z2 = g.add(z, h);
            x = layer.ln_ffn.forward(g, z2);
            cross_attention.push(probs);
        }
        let logits = self.output.forward(g, x);
        Ok(DecoderOutput {
            logits,
            cross_attention,
        })
    }

    /// Cross-attention keys and values of `memory`, computed once per source.
    pub fn cross_memory<T: Real>(
        &self,
        store: &ParamStore<T>,
        memory: &Tensor<T>,
        memory_keys: &[usize],
    ) -> Result<CrossMemory<T>, NnError> {
        if memory.shape() != [memory_keys.len(), self.config.model_dim] {
            return Err(NnError::Input(format!(
                "memory shape {:?} does not match {} keys",
                memory.shape(),
                memory_keys.len()
            )));
        }
        let mut g = Graph::new(store);
        let m = g.input(memory.clone());
        let mut kv = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let k = layer.cross_attn.k.forward(&mut g, m);
            let v = layer.cross_attn.v.forward(&mut g, m);
            kv.push((g.value(k).clone(), g.value(v).clone()));
        }
        Ok(CrossMemory {
            kv,
            allowed: key_padding_mask(memory_keys, 1),
        })
    }

    /// Consume one more target token given the cache of the earlier ones.
    /// Equivalent to the last row of [`Decoder::forward`] over the whole
    /// prefix, but linear in the prefix length.
    pub fn step<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &DecoderCache<T>,
        token: usize,
        cross: &CrossMemory<T>,
    ) -> Result<DecoderStep<T>, NnError> {
        if token >= self.config.target_vocab_size {
            return Err(NnError::Input(format!(
                "target id {token} outside vocabulary"
            )));
        }
        let pos = cache.len;
        let e = self.config.embed_dim;
        let mut g = Graph::new(store);
        let tok = g.param(self.token_emb);
        let seg = g.param(self.segment_emb);
        let e_tok = g.gather(tok, &[token]);
        let e_seg = g.gather(seg, &[0]);
        let table = sinusoidal_positions::<T>(pos + 1, e);
        let e_pos = g.input(Tensor::matrix(1, e, table.row(pos).to_vec()));
        let x = g.add_n(&[e_tok, e_seg, e_pos]);
        let mut x = self.projection.forward(&mut g, x);

        let heads = self.config.heads;
        let mut next = Vec::with_capacity(self.layers.len());
        let mut cross_attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let k_new = layer.self_attn.k.forward(&mut g, x);
            let v_new = layer.self_attn.v.forward(&mut g, x);
            let keys = match cache.layers.get(l) {
                Some((k, _)) => append_row(k, g.value(k_new)),
                None => g.value(k_new).clone(),
            };
            let values = match cache.layers.get(l) {
                Some((_, v)) => append_row(v, g.value(v_new)),
                None => g.value(v_new).clone(),
            };
            let allowed = vec![true; pos + 1];
            let (a, _) = layer
                .self_attn
                .attend(&mut g, x, &keys, &values, &allowed, heads);
            next.push((keys, values));
            let y = g.add(x, a);
            let y = layer.ln_self.forward(&mut g, y);
            let (ck, cv) = &cross.kv[l];
            let (c, probs) = layer
                .cross_attn
                .attend(&mut g, y, ck, cv, &cross.allowed, heads);
            let z = g.add(y, c);
            let z = layer.ln_cross.forward(&mut g, z);
            let h = layer.ffn_in.forward(&mut g, z);
            let h = g.gelu(h);
            let h = layer.ffn_out.forward(&mut g, h);
            let z2 = g.add(z, h);
            x = layer.ln_ffn.forward(&mut g, z2);
            cross_attention.push(probs.iter().map(|p| g.value(*p).clone()).collect());
        }
        let logits = self.output.forward(&mut g, x);
        Ok(DecoderStep {
            cache: DecoderCache {
                layers: next,
                len: pos + 1,
            },
            logits: g.value(logits).data().to_vec(),
            cross_attention,
        })
    }
}

impl Attention {
    /// Attention of the rows of `xq` over precomputed keys and values.
    fn attend<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        xq: Var,
        keys: &Tensor<T>,
        values: &Tensor<T>,
        allowed: &[bool],
        heads: usize,
    ) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, xq);
        let k = g.input(keys.clone());
        let v = g.input(values.clone());
        self.heads(g, q, k, v, allowed, heads)
    }

    fn heads<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        q: Var,
        k: Var,
        v: Var,
        allowed: &[bool],
        heads: usize,
    ) -> (Var, Vec<Var>) {
        let dh = g.value(q).cols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let p = g.masked_softmax(scores, allowed);
            outs.push(g.matmul(p, vh));
            probs.push(p);
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        (self.o.forward(g, cat), probs)
    }
}

fn append_row<T: Real>(m: &Tensor<T>, row: &Tensor<T>) -> Tensor<T> {
    let mut data = Vec::with_capacity(m.len() + row.len());
    data.extend_from_slice(m.data());
    data.extend_from_slice(row.data());
    Tensor::matrix(m.rows() + 1, m.cols(), data)
}

/// Per-layer cross-attention keys and values for one source.
#[derive(Clone, Debug)]
pub struct CrossMemory<T: Real> {
    kv: Vec<(Tensor<T>, Tensor<T>)>,
    allowed: Vec<bool>,
}

/// Self-attention keys and values of the tokens consumed so far.
#[derive(Clone, Debug)]
pub struct DecoderCache<T: Real> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
    len: usize,
}

impl<T: Real> Default for DecoderCache<T> {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            len: 0,
        }
    }
}

impl<T: Real> DecoderCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub struct DecoderStep<T: Real> {
    pub cache: DecoderCache<T>,
    /// Next-token logits after the consumed token.
    pub logits: Vec<T>,
    /// Per layer, per head `[1, source_len]` cross-attention probabilities.
    pub cross_attention: Vec<Vec<Tensor<T>>>,
}

/// Mean over heads of attention probability matrices.
pub fn mean_heads<T: Real>(g: &Graph<'_, T>, heads: &[Var]) -> Tensor<T> {
    let mut acc = g.value(heads[0]).clone();
    for h in &heads[1..] {
        acc.add_assign(g.value(*h));
    }
    let inv = T::from_f64_lossy(1.0 / heads.len() as f64);
    for v in acc.data_mut() {
        *v *= inv;
    }
    acc
}
