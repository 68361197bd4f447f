//! Encoder–decoder Transformer for multilingual translation: sinusoidal
//! positions, post-norm residual blocks, multi-head attention with causal and
//! padding masks, training, greedy decoding and a data-size ablation harness.

mod ablation;
mod decode;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nmtdata::{Batch, Vocabulary};
pub use crate::tensor::Mode;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub use ablation::{
    ablation_csv, run_data_ablation, write_ablation_csv, AblationOptions, AblationRow,
};
pub use decode::{greedy_decode, EncodedSource, StepModel, Translator};
pub use train::{
    encode_corpus, evaluate_loss, split_pairs, train_translator, NmtTrainConfig, TrainedTranslator,
};

pub const CHECKPOINT_KIND: &str = "transformer";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub num_heads: usize,
    pub head_size: usize,
    pub ff_size: usize,
    pub dropout: f32,
    pub max_seq_len: usize,
    pub init_seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 512,
            num_encoder_layers: 6,
            num_decoder_layers: 6,
            num_heads: 8,
            head_size: 64,
            ff_size: 2048,
            dropout: 0.3,
            max_seq_len: 5000,
            init_seed: 0,
        }
    }
}

impl TransformerConfig {
    /// Desk-scale model: width 64, two encoder and two decoder layers, four heads.
    pub fn tiny() -> Self {
        TransformerConfig {
            d_model: 64,
            num_encoder_layers: 2,
            num_decoder_layers: 2,
            num_heads: 4,
            head_size: 16,
            ff_size: 256,
            dropout: 0.1,
            max_seq_len: 256,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model != self.num_heads * self.head_size {
            return Err(Error::Config(format!(
                "d_model {} must equal num_heads {} x head_size {}",
                self.d_model, self.num_heads, self.head_size
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!("d_model {} must be even", self.d_model)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.num_encoder_layers == 0 || self.num_decoder_layers == 0 || self.ff_size == 0 {
            return Err(Error::Config("layer counts and ff_size must be positive".into()));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        Ok(())
    }
}

/// `[max_len, d_model]` table: even columns `sin(pos / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut data = vec![0.0f32; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = angle.sin() as f32;
            data[pos * d_model + 2 * i + 1] = angle.cos() as f32;
        }
    }
    Ok(Tensor::new(&[max_len, d_model], data))
}

/// Closed-form trainable-parameter count; equals the instantiated model's.
pub fn count_parameters(cfg: &TransformerConfig, src_vocab: usize, tgt_vocab: usize) -> usize {
    let d = cfg.d_model;
    let attention = 4 * (d * d + d);
    let ffn = d * cfg.ff_size + cfg.ff_size + cfg.ff_size * d + d;
    let norm = 2 * d;
    let encoder = attention + ffn + 2 * norm;
    let decoder = 2 * attention + ffn + 3 * norm;
    (src_vocab + tgt_vocab) * d
        + cfg.num_encoder_layers * encoder
        + cfg.num_decoder_layers * decoder
        + d * tgt_vocab
        + tgt_vocab
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FeedForward {
    up: Dense,
    down: Dense,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    attn: Attention,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    self_attn: Attention,
    norm1: Norm,
    cross_attn: Attention,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

/// Vocabulary file reference stored in translator checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRef {
    pub path: String,
    pub sha256: String,
}

impl VocabRef {
    pub fn new(path: &Path, vocab: &Vocabulary) -> Self {
        VocabRef { path: path.display().to_string(), sha256: vocab.content_hash() }
    }
}

#[derive(Clone, Debug)]
pub struct Transformer {
    config: TransformerConfig,
    src_vocab_size: usize,
    tgt_vocab_size: usize,
    params: ParamStore,
    src_emb: ParamId,
    tgt_emb: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out: Dense,
    pe: Tensor,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Dense {
        let bound = 1.0 / (din as f32).sqrt();
        let w = self.store.add_uniform(format!("{name}.weight"), &[din, dout], bound, &mut self.rng);
        let b = self.store.add(format!("{name}.bias"), Tensor::zeros(&[dout]));
        Dense { w, b }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.dense(&format!("{name}.q"), d, d),
            k: self.dense(&format!("{name}.k"), d, d),
            v: self.dense(&format!("{name}.v"), d, d),
            o: self.dense(&format!("{name}.o"), d, d),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)),
            beta: self.store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, ff: usize) -> FeedForward {
        FeedForward { up: self.dense(&format!("{name}.up"), d, ff), down: self.dense(&format!("{name}.down"), ff, d) }
    }
}

fn dropout(g: &mut Graph, x: Var, p: f32, mode: &mut Mode) -> Var {
    match mode {
        Mode::Train(rng) => g.dropout(x, p, &mut **rng),
        Mode::Eval => x,
    }
}

impl Transformer {
    pub fn new(config: TransformerConfig, src_vocab_size: usize, tgt_vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let min = Vocabulary::reserved_len();
        if src_vocab_size < min || tgt_vocab_size < min {
            return Err(Error::Config(format!(
                "vocabularies need at least {min} entries, got {src_vocab_size} and {tgt_vocab_size}"
            )));
        }
        let d = config.d_model;
        let mut store = ParamStore::new();
        let mut b = Builder { store: &mut store, rng: ChaCha8Rng::seed_from_u64(config.init_seed) };
        // unit variance after the sqrt(d) embedding scale
        let emb_bound = (3.0 / d as f32).sqrt();
        let src_emb = b.store.add_uniform("src_emb", &[src_vocab_size, d], emb_bound, &mut b.rng);
        let tgt_emb = b.store.add_uniform("tgt_emb", &[tgt_vocab_size, d], emb_bound, &mut b.rng);
        let encoder = (0..config.num_encoder_layers)
            .map(|i| EncoderLayer {
                attn: b.attention(&format!("enc{i}.attn"), d),
                norm1: b.norm(&format!("enc{i}.norm1"), d),
                ffn: b.ffn(&format!("enc{i}.ffn"), d, config.ff_size),
                norm2: b.norm(&format!("enc{i}.norm2"), d),
            })
            .collect();
        let decoder = (0..config.num_decoder_layers)
            .map(|i| DecoderLayer {
                self_attn: b.attention(&format!("dec{i}.self"), d),
                norm1: b.norm(&format!("dec{i}.norm1"), d),
                cross_attn: b.attention(&format!("dec{i}.cross"), d),
                norm2: b.norm(&format!("dec{i}.norm2"), d),
                ffn: b.ffn(&format!("dec{i}.ffn"), d, config.ff_size),
                norm3: b.norm(&format!("dec{i}.norm3"), d),
            })
            .collect();
        let out = b.dense("out", d, tgt_vocab_size);
        // tables beyond a few thousand rows are built lazily per call
        let pe = positional_encoding(config.max_seq_len.min(1024), d)?;
        Ok(Transformer {
            config,
            src_vocab_size,
            tgt_vocab_size,
            params: store,
            src_emb,
            tgt_emb,
            encoder,
            decoder,
            out,
            pe,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn src_vocab_size(&self) -> usize {
        self.src_vocab_size
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.tgt_vocab_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.trainable_count()
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len > self.config.max_seq_len {
            return Err(Error::Validation(format!(
                "{what} length {len} exceeds max_seq_len {}",
                self.config.max_seq_len
            )));
        }
        Ok(())
    }

    fn check_ids(ids: &[u32], vocab: usize, what: &str) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= vocab) {
            Some(i) => Err(Error::Validation(format!("{what} id {i} outside vocabulary of {vocab}"))),
            None => Ok(()),
        }
    }

    /// Scaled embeddings plus positions, `[b, len, d]`.
    fn embed(&self, g: &mut Graph, table: ParamId, ids: &[u32], b: usize, len: usize, mode: &mut Mode) -> Var {
        let d = self.config.d_model;
        let t = g.param(&self.params, table);
        let e = g.embedding(t, ids, &[b, len]);
        let e = g.scale(e, (d as f32).sqrt());
        let mut pos = Vec::with_capacity(b * len * d);
        let long;
        let table = if len <= self.pe.shape()[0] {
            &self.pe
        } else {
            long = positional_encoding(len, d).expect("even width was validated");
            &long
        };
        for _ in 0..b {
            pos.extend_from_slice(&table.data()[..len * d]);
        }
        let p = g.input(Tensor::new(&[b, len, d], pos));
        let x = g.add(e, p);
        dropout(g, x, self.config.dropout, mode)
    }

    fn dense(&self, g: &mut Graph, x: Var, l: Dense) -> Var {
        let w = g.param(&self.params, l.w);
        let b = g.param(&self.params, l.b);
        g.linear(x, w, Some(b))
    }

    fn norm(&self, g: &mut Graph, x: Var, n: Norm) -> Var {
        let gamma = g.param(&self.params, n.gamma);
        let beta = g.param(&self.params, n.beta);
        g.layer_norm(x, gamma, beta)
    }

    /// `[b, len, d]` → `[b*h, len, head]`.
    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, len: usize) -> Var {
        let (h, hs) = (self.config.num_heads, self.config.head_size);
        let x = g.reshape(x, &[b, len, h, hs]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, &[b * h, len, hs])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        a: Attention,
        query: Var,
        memory: Var,
        b: usize,
        (tq, tk): (usize, usize),
        key_pad: &[bool],
        causal: bool,
    ) -> Var {
        let (h, hs) = (self.config.num_heads, self.config.head_size);
        let q = self.dense(g, query, a.q);
        let k = self.dense(g, memory, a.k);
        let v = self.dense(g, memory, a.v);
        let q = self.split_heads(g, q, b, tq);
        let k = self.split_heads(g, k, b, tk);
        let v = self.split_heads(g, v, b, tk);
        let scores = g.batch_matmul(q, k, false, true);
        let scores = g.scale(scores, 1.0 / (hs as f32).sqrt());
        let weights = g.masked_softmax(scores, Some(key_pad), causal, h);
        let ctx = g.batch_matmul(weights, v, false, false);
        let ctx = g.reshape(ctx, &[b, h, tq, hs]);
        let ctx = g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = g.reshape(ctx, &[b, tq, h * hs]);
        self.dense(g, ctx, a.o)
    }

    fn feed_forward(&self, g: &mut Graph, x: Var, f: FeedForward) -> Var {
        let y = self.dense(g, x, f.up);
        let y = g.relu(y);
        self.dense(g, y, f.down)
    }

    /// Residual, dropout on the sublayer output, then layer norm.
    fn residual(&self, g: &mut Graph, x: Var, sub: Var, n: Norm, mode: &mut Mode) -> Var {
        let sub = dropout(g, sub, self.config.dropout, mode);
        let s = g.add(x, sub);
        self.norm(g, s, n)
    }

    /// Encoder output `[b, s, d]` for row-major ids `[b, s]`.
    pub fn encode(&self, g: &mut Graph, src: &[u32], src_pad: &[bool], b: usize, s: usize, mode: &mut Mode) -> Result<Var> {
        self.check_len(s, "source")?;
        Self::check_ids(src, self.src_vocab_size, "source")?;
        if src.len() != b * s || src_pad.len() != b * s {
            return Err(Error::Validation("source ids and mask must both be batch x length".into()));
        }
        let mut x = self.embed(g, self.src_emb, src, b, s, mode);
        for l in &self.encoder {
            let a = self.attention(g, l.attn, x, x, b, (s, s), src_pad, false);
            x = self.residual(g, x, a, l.norm1, mode);
            let f = self.feed_forward(g, x, l.ffn);
            x = self.residual(g, x, f, l.norm2, mode);
        }
        Ok(x)
    }

    /// Target-vocabulary logits `[b, t, V]`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        memory: Var,
        src_pad: &[bool],
        dec_input: &[u32],
        tgt_pad: &[bool],
        b: usize,
        t: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        self.check_len(t, "target")?;
        Self::check_ids(dec_input, self.tgt_vocab_size, "target")?;
        if dec_input.len() != b * t || tgt_pad.len() != b * t {
            return Err(Error::Validation("decoder ids and mask must both be batch x length".into()));
        }
        let s = g.shape(memory)[1];
        let mut y = self.embed(g, self.tgt_emb, dec_input, b, t, mode);
        for l in &self.decoder {
            let a = self.attention(g, l.self_attn, y, y, b, (t, t), tgt_pad, true);
            y = self.residual(g, y, a, l.norm1, mode);
            let c = self.attention(g, l.cross_attn, y, memory, b, (t, s), src_pad, false);
            y = self.residual(g, y, c, l.norm2, mode);
            let f = self.feed_forward(g, y, l.ffn);
            y = self.residual(g, y, f, l.norm3, mode);
        }
        Ok(self.dense(g, y, self.out))
    }

    /// Logits `[batch, tgt_len, tgt_vocab]`.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, mut mode: Mode) -> Result<Var> {
        let (b, s, t) = (batch.batch_size, batch.src_len, batch.tgt_len);
        let memory = self.encode(g, &batch.src, &batch.src_pad, b, s, &mut mode)?;
        self.decode(g, memory, &batch.src_pad, &batch.dec_input, &batch.tgt_pad, b, t, &mut mode)
    }

    /// Token-mean cross-entropy against `dec_target`, pads excluded.
    pub fn loss(&self, g: &mut Graph, batch: &Batch, mode: Mode) -> Result<Var> {
        let logits = self.forward(g, batch, mode)?;
        let v = self.tgt_vocab_size;
        let flat = g.reshape(logits, &[batch.batch_size * batch.tgt_len, v]);
        Ok(g.cross_entropy(flat, &batch.dec_target, Vocabulary::PAD))
    }

    /// Eval-mode logits as a plain tensor.
    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        let mut g = Graph::inference();
        let l = self.forward(&mut g, batch, Mode::Eval)?;
        Ok(g.take_value(l))
    }

    pub fn to_checkpoint(&self, epoch: usize, best_val_loss: f64, vocabs: Option<(&VocabRef, &VocabRef)>) -> Checkpoint {
        let mut meta = serde_json::json!({
            "config": self.config,
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "epoch": epoch,
            "best_val_loss": best_val_loss,
        });
        if let Some((s, t)) = vocabs {
            meta["src_vocab"] = serde_json::to_value(s).expect("plain struct");
            meta["tgt_vocab"] = serde_json::to_value(t).expect("plain struct");
        }
        Checkpoint { kind: CHECKPOINT_KIND.into(), meta, params: self.params.clone() }
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, origin)?;
        let field = |k: &str| ck.meta.get(k).cloned().ok_or_else(|| Error::format(origin, format!("missing {k}")));
        let bad = |e: serde_json::Error| Error::format(origin, format!("bad translator metadata: {e}"));
        let config: TransformerConfig = serde_json::from_value(field("config")?).map_err(bad)?;
        let sv: usize = serde_json::from_value(field("src_vocab_size")?).map_err(bad)?;
        let tv: usize = serde_json::from_value(field("tgt_vocab_size")?).map_err(bad)?;
        let mut model = Transformer::new(config, sv, tv)?;
        model.params.copy_values_from(&ck.params).map_err(|e| Error::format(origin, e))?;
        Ok(model)
    }

    /// Vocabulary references recorded at training time, if any.
    pub fn vocab_refs(ck: &Checkpoint) -> Option<(VocabRef, VocabRef)> {
        let s = serde_json::from_value(ck.meta.get("src_vocab")?.clone()).ok()?;
        let t = serde_json::from_value(ck.meta.get("tgt_vocab")?.clone()).ok()?;
        Some((s, t))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}
