//! Small pre-norm decoder-only transformer with residual-stream hooks.
//!
//! Each block is
//!
//! ```text
//! h   = x + W_o · Attn(RMSNorm(x))
//! out = h + W_out · GELU(W_in · RMSNorm(h) + b_in) + b_out
//! ```
//!
//! and the model is processed one position at a time against a key/value
//! cache, which makes causality structural: position `j` never sees tokens
//! after `j`. The reverse-mode pass only runs for the last position above
//! the hook layer, since earlier positions' keys and values do not depend on
//! the last position's residual.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};
use crate::numerics::{axpy, dot, round_to_f32, softmax, RngState, Tensor2D, Vector};

pub const TOY_MAGIC: [u8; 4] = *b"XTOY";
pub const TOY_VERSION: u32 = 1;
const TOY_HEADER_LEN: usize = 32;
pub const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab_size: super::tokenizer::VOCAB_SIZE,
            d_model: 32,
            n_layers: 4,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 512,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_input!(self.vocab_size >= 4, "vocab size must be ≥ 4");
        ensure_input!(self.d_model >= 1 && self.n_layers >= 1 && self.n_heads >= 1, "zero-sized model");
        ensure_input!(
            self.d_model % self.n_heads == 0,
            "d_model {} not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure_input!(self.d_ff >= 1 && self.max_seq_len >= 1, "zero-sized MLP or context");
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Vector,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub mlp_norm: Vector,
    /// `d_ff × d_model`
    pub w_in: Tensor2D,
    pub b_in: Vector,
    /// `d_model × d_ff`
    pub w_out: Tensor2D,
    pub b_out: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformerParams {
    pub config: ToyConfig,
    /// `vocab × d_model`
    pub embed: Tensor2D,
    /// `max_seq_len × d_model`
    pub pos_embed: Tensor2D,
    pub blocks: Vec<Block>,
    pub final_norm: Vector,
    /// `vocab × d_model`
    pub unembed: Tensor2D,
    pub unembed_bias: Vector,
}

/// Scales for random initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScales {
    pub embed: f64,
    pub pos: f64,
    pub block: f64,
    pub unembed: f64,
}

impl Default for InitScales {
    fn default() -> Self {
        Self {
            embed: 1.0,
            pos: 0.3,
            block: 1.0,
            unembed: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Elementary pieces
// ---------------------------------------------------------------------------

/// `y = g ⊙ x / rms(x)`; also returns `rms(x) = sqrt(mean(x²) + eps)`.
pub(crate) fn rms_norm(x: &[f64], gain: &[f64]) -> (Vector, f64) {
    let r = (dot(x, x) / x.len() as f64 + NORM_EPS).sqrt();
    (x.iter().zip(gain).map(|(v, g)| g * v / r).collect(), r)
}

pub(crate) fn rms_norm_backward(x: &[f64], gain: &[f64], r: f64, dy: &[f64]) -> Vector {
    let n = x.len() as f64;
    let gdy: Vector = gain.iter().zip(dy).map(|(g, d)| g * d).collect();
    let s = dot(&gdy, x);
    let c = s / (n * r * r * r);
    gdy.iter().zip(x).map(|(a, xi)| a / r - c * xi).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + 0.044715 * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + 0.044715 * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * z * z)
}

// ---------------------------------------------------------------------------
// Cache, hooks and tapes
// ---------------------------------------------------------------------------

/// Per-layer keys and values of every processed position.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    keys: Vec<Vec<Vector>>,
    values: Vec<Vec<Vector>>,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            keys: vec![Vec::new(); n_layers],
            values: vec![Vec::new(); n_layers],
        }
    }

    /// Number of positions processed so far.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Callback run on the residual stream right after block `layer`, for every
/// position. It receives the position index and may modify the residual in place.
pub struct Hook<'a> {
    pub layer: usize,
    pub callback: &'a mut dyn FnMut(usize, &mut [f64]),
}

impl<'a> Hook<'a> {
    pub fn new(layer: usize, callback: &'a mut dyn FnMut(usize, &mut [f64])) -> Self {
        Self { layer, callback }
    }
}

struct BlockTape {
    x: Vector,
    r1: f64,
    q: Vector,
    k: Vector,
    v: Vector,
    /// Per head: attention weights over cached positions, then self.
    probs: Vec<Vector>,
    h1: Vector,
    r2: f64,
    z: Vector,
}

struct FinalTape {
    x: Vector,
    r: f64,
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

impl ToyTransformerParams {
    pub fn random(config: ToyConfig, scales: InitScales, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let std = |s: f64, fan_in: usize| s / (fan_in as f64).sqrt();
        let embed = Tensor2D::random_normal(config.vocab_size, d, std(scales.embed, d), rng);
        let pos_embed = Tensor2D::random_normal(config.max_seq_len, d, std(scales.pos, d), rng);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                attn_norm: vec![1.0; d],
                wq: Tensor2D::random_normal(d, d, std(scales.block, d), rng),
                wk: Tensor2D::random_normal(d, d, std(scales.block, d), rng),
                wv: Tensor2D::random_normal(d, d, std(scales.block, d), rng),
                wo: Tensor2D::random_normal(d, d, std(scales.block, d), rng),
                mlp_norm: vec![1.0; d],
                w_in: Tensor2D::random_normal(config.d_ff, d, std(scales.block, d), rng),
                b_in: (0..config.d_ff).map(|_| rng.normal() * 0.1 * scales.block).collect(),
                w_out: Tensor2D::random_normal(d, config.d_ff, std(scales.block, config.d_ff), rng),
                b_out: vec![0.0; d],
            })
            .collect();
        let unembed = Tensor2D::random_normal(config.vocab_size, d, std(scales.unembed, d), rng);
        let mut p = Self {
            config,
            embed,
            pos_embed,
            blocks,
            final_norm: vec![1.0; d],
            unembed,
            unembed_bias: vec![0.0; config.vocab_size],
        };
        p.round_to_f32();
        Ok(p)
    }

    /// Rounds every weight through f32 so the model survives a checkpoint round trip exactly.
    pub fn round_to_f32(&mut self) {
        for b in self.blocks_mut() {
            round_to_f32(b);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let d = c.d_model;
        let ok = self.embed.shape() == (c.vocab_size, d)
            && self.pos_embed.shape() == (c.max_seq_len, d)
            && self.blocks.len() == c.n_layers
            && self.final_norm.len() == d
            && self.unembed.shape() == (c.vocab_size, d)
            && self.unembed_bias.len() == c.vocab_size
            && self.blocks.iter().all(|b| {
                b.attn_norm.len() == d
                    && b.wq.shape() == (d, d)
                    && b.wk.shape() == (d, d)
                    && b.wv.shape() == (d, d)
                    && b.wo.shape() == (d, d)
                    && b.mlp_norm.len() == d
                    && b.w_in.shape() == (c.d_ff, d)
                    && b.b_in.len() == c.d_ff
                    && b.w_out.shape() == (d, c.d_ff)
                    && b.b_out.len() == d
            });
        ensure_input!(ok, "toy transformer parameter shapes disagree with config");
        if !self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite())) {
            return Err(Error::Numerical("toy transformer has non-finite weights".into()));
        }
        Ok(())
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embed.data(), self.pos_embed.data()];
        for b in &self.blocks {
            out.extend([
                &b.attn_norm[..],
                b.wq.data(),
                b.wk.data(),
                b.wv.data(),
                b.wo.data(),
                &b.mlp_norm[..],
                b.w_in.data(),
                &b.b_in[..],
                b.w_out.data(),
                &b.b_out[..],
            ]);
        }
        out.extend([&self.final_norm[..], self.unembed.data(), &self.unembed_bias[..]]);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.data_mut(), self.pos_embed.data_mut()];
        for b in &mut self.blocks {
            out.push(&mut b.attn_norm[..]);
            out.push(b.wq.data_mut());
            out.push(b.wk.data_mut());
            out.push(b.wv.data_mut());
            out.push(b.wo.data_mut());
            out.push(&mut b.mlp_norm[..]);
            out.push(b.w_in.data_mut());
            out.push(&mut b.b_in[..]);
            out.push(b.w_out.data_mut());
            out.push(&mut b.b_out[..]);
        }
        out.push(&mut self.final_norm[..]);
        out.push(self.unembed.data_mut());
        out.push(&mut self.unembed_bias[..]);
        out
    }

    fn check_token(&self, token: u32) -> Result<()> {
        ensure_input!(
            (token as usize) < self.config.vocab_size,
            "token id {token} ≥ vocab size {}",
            self.config.vocab_size
        );
        Ok(())
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        ensure_input!(!tokens.is_empty(), "token sequence must be nonempty");
        ensure_input!(
            tokens.len() <= self.config.max_seq_len,
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            self.config.max_seq_len
        );
        tokens.iter().try_for_each(|&t| self.check_token(t))
    }

    fn embed_token(&self, token: u32, position: usize) -> Vector {
        self.embed
            .row(token as usize)
            .iter()
            .zip(self.pos_embed.row(position))
            .map(|(a, b)| a + b)
            .collect()
    }

    fn block_forward(&self, l: usize, x: &[f64], keys: &[Vector], values: &[Vector]) -> (Vector, BlockTape) {
        let b = &self.blocks[l];
        let c = &self.config;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (u, r1) = rms_norm(x, &b.attn_norm);
        let q = b.wq.matvec(&u).unwrap();
        let k = b.wk.matvec(&u).unwrap();
        let v = b.wv.matvec(&u).unwrap();
        let mut o = vec![0.0; c.d_model];
        let mut probs = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let hs = h * dh..(h + 1) * dh;
            let qh = &q[hs.clone()];
            let mut scores: Vector = keys.iter().map(|kj| dot(qh, &kj[hs.clone()]) * scale).collect();
            scores.push(dot(qh, &k[hs.clone()]) * scale);
            let p = softmax(&scores);
            let oh = &mut o[hs.clone()];
            for (j, vj) in values.iter().enumerate() {
                axpy(p[j], &vj[hs.clone()], oh);
            }
            axpy(p[keys.len()], &v[hs.clone()], oh);
            probs.push(p);
        }
        let attn = b.wo.matvec(&o).unwrap();
        let h1: Vector = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
        let (w, r2) = rms_norm(&h1, &b.mlp_norm);
        let mut z = b.w_in.matvec(&w).unwrap();
        for (zi, bi) in z.iter_mut().zip(&b.b_in) {
            *zi += bi;
        }
        let a: Vector = z.iter().map(|&zi| gelu(zi)).collect();
        let m = b.w_out.matvec(&a).unwrap();
        let out: Vector = h1
            .iter()
            .zip(&m)
            .zip(&b.b_out)
            .map(|((h, m), bo)| h + m + bo)
            .collect();
        (
            out,
            BlockTape {
                x: x.to_vec(),
                r1,
                q,
                k,
                v,
                probs,
                h1,
                r2,
                z,
            },
        )
    }

    fn block_backward(&self, l: usize, t: &BlockTape, keys: &[Vector], values: &[Vector], d_out: &[f64]) -> Vector {
        let b = &self.blocks[l];
        let c = &self.config;
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        // MLP branch.
        let d_a = b.w_out.matvec_t(d_out).unwrap();
        let d_z: Vector = d_a.iter().zip(&t.z).map(|(da, &z)| da * gelu_grad(z)).collect();
        let d_w = b.w_in.matvec_t(&d_z).unwrap();
        let mut d_h1 = rms_norm_backward(&t.h1, &b.mlp_norm, t.r2, &d_w);
        for (dh1, d) in d_h1.iter_mut().zip(d_out) {
            *dh1 += d;
        }

        // Attention branch.
        let d_o = b.wo.matvec_t(&d_h1).unwrap();
        let mut d_q = vec![0.0; c.d_model];
        let mut d_k = vec![0.0; c.d_model];
        let mut d_v = vec![0.0; c.d_model];
        let n_prev = keys.len();
        for h in 0..c.n_heads {
            let hs = h * dh..(h + 1) * dh;
            let p = &t.probs[h];
            let d_oh = &d_o[hs.clone()];
            let mut d_p: Vector = values.iter().map(|vj| dot(d_oh, &vj[hs.clone()])).collect();
            d_p.push(dot(d_oh, &t.v[hs.clone()]));
            for (dv, g) in d_v[hs.clone()].iter_mut().zip(d_oh) {
                *dv += p[n_prev] * g;
            }
            let avg = dot(p, &d_p);
            let d_s: Vector = p.iter().zip(&d_p).map(|(pj, dpj)| pj * (dpj - avg)).collect();
            let dq = &mut d_q[hs.clone()];
            for (j, kj) in keys.iter().enumerate() {
                axpy(d_s[j] * scale, &kj[hs.clone()], dq);
            }
            axpy(d_s[n_prev] * scale, &t.k[hs.clone()], dq);
            axpy(d_s[n_prev] * scale, &t.q[hs.clone()], &mut d_k[hs.clone()]);
        }
        let mut d_u = b.wq.matvec_t(&d_q).unwrap();
        axpy(1.0, &b.wk.matvec_t(&d_k).unwrap(), &mut d_u);
        axpy(1.0, &b.wv.matvec_t(&d_v).unwrap(), &mut d_u);
        let mut d_x = rms_norm_backward(&t.x, &b.attn_norm, t.r1, &d_u);
        axpy(1.0, &d_h1, &mut d_x);
        d_x
    }

    fn final_forward(&self, x: &[f64]) -> (Vector, FinalTape) {
        let (y, r) = rms_norm(x, &self.final_norm);
        let mut logits = self.unembed.matvec(&y).unwrap();
        for (l, b) in logits.iter_mut().zip(&self.unembed_bias) {
            *l += b;
        }
        (logits, FinalTape { x: x.to_vec(), r })
    }

    /// Processes one more token against the cache and returns its logits.
    pub fn step(&self, cache: &mut KvCache, token: u32, mut hook: Option<&mut Hook<'_>>) -> Result<Vector> {
        self.check_token(token)?;
        let pos = cache.len();
        ensure_input!(
            pos < self.config.max_seq_len,
            "position {pos} exceeds max_seq_len {}",
            self.config.max_seq_len
        );
        if let Some(h) = hook.as_ref() {
            ensure_input!(
                h.layer < self.config.n_layers,
                "hook layer {} ≥ n_layers {}",
                h.layer,
                self.config.n_layers
            );
        }
        let mut x = self.embed_token(token, pos);
        for l in 0..self.config.n_layers {
            let (out, tape) = self.block_forward(l, &x, &cache.keys[l], &cache.values[l]);
            cache.keys[l].push(tape.k);
            cache.values[l].push(tape.v);
            x = out;
            if let Some(h) = hook.as_mut() {
                if h.layer == l {
                    (h.callback)(pos, &mut x);
                }
            }
        }
        Ok(self.final_forward(&x).0)
    }

    /// Logits for every position (`len × vocab`).
    pub fn forward(&self, tokens: &[u32], mut hook: Option<&mut Hook<'_>>) -> Result<Tensor2D> {
        self.check_tokens(tokens)?;
        let mut cache = KvCache::new(self.config.n_layers);
        let mut rows = Vec::with_capacity(tokens.len());
        for &t in tokens {
            rows.push(self.step(&mut cache, t, hook.as_deref_mut())?);
        }
        Tensor2D::from_rows(&rows)
    }

    /// Runs all but the last token through the full model, then the last
    /// token through blocks `0..=layer`. Returns the cache and the last
    /// position's residual right after block `layer`.
    pub(crate) fn prefix_to_hook(&self, tokens: &[u32], layer: usize) -> Result<(KvCache, Vector)> {
        self.check_tokens(tokens)?;
        ensure_input!(
            layer < self.config.n_layers,
            "hook layer {layer} ≥ n_layers {}",
            self.config.n_layers
        );
        let mut cache = KvCache::new(self.config.n_layers);
        let (last, prefix) = tokens.split_last().unwrap();
        for &t in prefix {
            self.step(&mut cache, t, None)?;
        }
        let pos = prefix.len();
        let mut x = self.embed_token(*last, pos);
        for l in 0..=layer {
            let (out, tape) = self.block_forward(l, &x, &cache.keys[l], &cache.values[l]);
            cache.keys[l].push(tape.k);
            cache.values[l].push(tape.v);
            x = out;
        }
        Ok((cache, x))
    }

    /// Final-position logits when the last position's residual after block
    /// `layer` is `residual`. `cache` must come from [`Self::prefix_to_hook`].
    pub(crate) fn logits_from_hook(&self, cache: &KvCache, layer: usize, residual: &[f64]) -> Vector {
        let pos = cache.keys[layer].len() - 1;
        let mut x = residual.to_vec();
        for l in layer + 1..self.config.n_layers {
            let keys = &cache.keys[l][..pos];
            let values = &cache.values[l][..pos];
            x = self.block_forward(l, &x, keys, values).0;
        }
        self.final_forward(&x).0
    }

    /// Gradient of `metric(softmax(logits))` at the last position with respect
    /// to the residual after block `layer`, given `d_metric/d_logits` as a
    /// function of the probabilities. Returns `(metric_value, gradient)`.
    pub(crate) fn grad_from_hook(
        &self,
        cache: &KvCache,
        layer: usize,
        residual: &[f64],
        d_logits_of: impl Fn(&[f64]) -> (f64, Vector),
    ) -> (f64, Vector) {
        let pos = cache.keys[layer].len() - 1;
        let mut x = residual.to_vec();
        let mut tapes = Vec::new();
        for l in layer + 1..self.config.n_layers {
            let (out, tape) = self.block_forward(l, &x, &cache.keys[l][..pos], &cache.values[l][..pos]);
            tapes.push((l, tape));
            x = out;
        }
        let (logits, ft) = self.final_forward(&x);
        let probs = softmax(&logits);
        let (metric, d_logits) = d_logits_of(&probs);
        let d_y = self.unembed.matvec_t(&d_logits).unwrap();
        let mut d_x = rms_norm_backward(&ft.x, &self.final_norm, ft.r, &d_y);
        for (l, tape) in tapes.iter().rev() {
            d_x = self.block_backward(*l, tape, &cache.keys[*l][..pos], &cache.values[*l][..pos], &d_x);
        }
        (metric, d_x)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// 0   4  magic "XTOY"
// 4   4  version u32 LE
// 8   4  vocab_size, 12 d_model, 16 n_layers, 20 n_heads, 24 d_ff, 28 max_seq_len (u32 LE)
// 32  .. f32 LE blocks: embed, pos_embed, per block (attn_norm, wq, wk, wv, wo,
//        mlp_norm, w_in, b_in, w_out, b_out), final_norm, unembed, unembed_bias

pub fn toy_checkpoint_bytes(p: &ToyTransformerParams) -> Vec<u8> {
    let c = &p.config;
    let mut out = Vec::new();
    out.extend_from_slice(&TOY_MAGIC);
    for v in [
        TOY_VERSION as usize,
        c.vocab_size,
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.d_ff,
        c.max_seq_len,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in p.blocks() {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_toy_checkpoint(path: &Path, p: &ToyTransformerParams) -> Result<()> {
    p.validate()?;
    fs::write(path, toy_checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn read_toy_checkpoint(path: &Path) -> Result<ToyTransformerParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < TOY_HEADER_LEN {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: TOY_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[0..4] != TOY_MAGIC {
        return Err(Error::format(path, "bad toy model magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != TOY_VERSION as usize {
        return Err(Error::format(path, format!("unsupported version {}", word(0))));
    }
    let config = ToyConfig {
        vocab_size: word(1),
        d_model: word(2),
        n_layers: word(3),
        n_heads: word(4),
        d_ff: word(5),
        max_seq_len: word(6),
    };
    config
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let d = config.d_model;
    let z = |r, c| Tensor2D::zeros(r, c);
    let mut p = ToyTransformerParams {
        config,
        embed: z(config.vocab_size, d),
        pos_embed: z(config.max_seq_len, d),
        blocks: (0..config.n_layers)
            .map(|_| Block {
                attn_norm: vec![0.0; d],
                wq: z(d, d),
                wk: z(d, d),
                wv: z(d, d),
                wo: z(d, d),
                mlp_norm: vec![0.0; d],
                w_in: z(config.d_ff, d),
                b_in: vec![0.0; config.d_ff],
                w_out: z(d, config.d_ff),
                b_out: vec![0.0; d],
            })
            .collect(),
        final_norm: vec![0.0; d],
        unembed: z(config.vocab_size, d),
        unembed_bias: vec![0.0; config.vocab_size],
    };
    let n: usize = p.blocks().iter().map(|b| b.len()).sum();
    let expected = TOY_HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut vals = bytes[TOY_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = vals.next().unwrap();
        }
    }
    p.validate()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64) -> ToyTransformerParams {
        let cfg = ToyConfig {
            vocab_size: 12,
            d_model: 8,
            n_layers: 3,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 32,
        };
        ToyTransformerParams::random(cfg, InitScales::default(), &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn rms_norm_backward_matches_finite_differences() {
        let mut rng = RngState::new(1);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..6).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        let dy: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let (_, r) = rms_norm(&x, &g);
        let analytic = rms_norm_backward(&x, &g, r, &dy);
        let eps = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (dot(&rms_norm(&xp, &g).0, &dy) - dot(&rms_norm(&xm, &g).0, &dy)) / (2.0 * eps);
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        for z in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(z + 1e-6) - gelu(z - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(z)).abs() < 1e-8);
        }
    }

    #[test]
    fn single_token_logits_shape() {
        let m = small_model(2);
        let logits = m.forward(&[3], None).unwrap();
        assert_eq!(logits.shape(), (1, 12));
    }

    #[test]
    fn forward_is_causal() {
        let m = small_model(3);
        let a = m.forward(&[1, 2, 3, 4], None).unwrap();
        let b = m.forward(&[1, 2, 3, 4, 5, 6], None).unwrap();
        let c = m.forward(&[1, 2, 3, 9], None).unwrap();
        for j in 0..4 {
            assert_eq!(a.row(j), b.row(j));
        }
        for j in 0..3 {
            assert_eq!(a.row(j), c.row(j));
        }
    }

    #[test]
    fn invalid_tokens_rejected() {
        let m = small_model(4);
        assert!(m.forward(&[], None).is_err());
        assert!(m.forward(&[1, 12], None).is_err());
    }

    #[test]
    fn tail_recompute_matches_full_forward() {
        let m = small_model(5);
        let tokens = [1, 5, 2, 7, 3];
        let full = m.forward(&tokens, None).unwrap();
        for layer in 0..3 {
            let (cache, x) = m.prefix_to_hook(&tokens, layer).unwrap();
            let logits = m.logits_from_hook(&cache, layer, &x);
            assert_eq!(&logits[..], full.row(4));
        }
    }

    #[test]
    fn toy_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xtoy");
        let m = small_model(6);
        write_toy_checkpoint(&path, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = read_toy_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        write_toy_checkpoint(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_toy_checkpoint(&path), Err(Error::Corruption { .. })));
    }
}
