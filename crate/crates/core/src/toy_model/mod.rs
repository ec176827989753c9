//! Toy base/reasoning transformer pair used as a desk-scale stand-in for a
//! real model pair: residual capture, patched forward passes, exact wait-metric
//! gradients at a hook layer, sampling and patchscope decoding.

mod fixture;
mod generate;
mod tokenizer;
mod transformer;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::activation_store::{ShardRecord, Stream, TokenMetadata};
use crate::error::{ensure_input, Error, Result};
use crate::numerics::{softmax, Tensor2D, Vector};

pub use fixture::{linear_bypass, synthetic_rollouts, LinearBypass, LinearBypassConfig};
pub use generate::{generate, sample_token, Generation, SamplingConfig, Steer};
pub use tokenizer::{ToyTokenizer, WaitSet, ALPHABET, VOCAB_SIZE, WAIT_FORMS};
pub use transformer::{
    read_toy_checkpoint, toy_checkpoint_bytes, write_toy_checkpoint, Block, Hook, InitScales, KvCache,
    ToyConfig, ToyTransformerParams, NORM_EPS, TOY_MAGIC,
};

/// Residual stream right after block `layer`, at `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HookPoint {
    pub layer: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub base: ToyTransformerParams,
    pub reasoning: ToyTransformerParams,
    pub tokenizer: ToyTokenizer,
}

impl ModelPair {
    pub fn new(base: ToyTransformerParams, reasoning: ToyTransformerParams) -> Result<Self> {
        base.validate()?;
        reasoning.validate()?;
        ensure_input!(
            base.config.vocab_size == reasoning.config.vocab_size
                && base.config.d_model == reasoning.config.d_model,
            "model pair must share vocabulary and d_model"
        );
        Ok(Self {
            base,
            reasoning,
            tokenizer: ToyTokenizer,
        })
    }

    pub fn model(&self, stream: Stream) -> &ToyTransformerParams {
        match stream {
            Stream::Base => &self.base,
            Stream::Reasoning => &self.reasoning,
        }
    }

    pub fn d_model(&self) -> usize {
        self.base.config.d_model
    }

    /// Writes `base.xtoy` and `reasoning.xtoy` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_toy_checkpoint(&dir.join("base.xtoy"), &self.base)?;
        write_toy_checkpoint(&dir.join("reasoning.xtoy"), &self.reasoning)
    }

    /// Paired hook-layer residuals for every token of every sequence.
    pub fn capture_records(&self, sequences: &[(u64, Vec<u32>)], layer: usize) -> Result<Vec<ShardRecord>> {
        let per: Vec<Vec<ShardRecord>> = sequences
            .par_iter()
            .map(|(id, tokens)| {
                let (_, base) = forward_with_capture(&self.base, tokens, layer)?;
                let (_, reasoning) = forward_with_capture(&self.reasoning, tokens, layer)?;
                Ok(tokens
                    .iter()
                    .zip(base.into_iter().zip(reasoning))
                    .enumerate()
                    .map(|(pos, (&t, (b, r)))| ShardRecord {
                        base: b.iter().map(|&x| x as f32).collect(),
                        reasoning: r.iter().map(|&x| x as f32).collect(),
                        meta: TokenMetadata {
                            sequence_id: *id,
                            position: pos as u32,
                            token_id: t,
                            token_text: self.tokenizer.token_text(t).unwrap_or_default().to_string(),
                        },
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(
            read_toy_checkpoint(&dir.join("base.xtoy"))?,
            read_toy_checkpoint(&dir.join("reasoning.xtoy"))?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchMode {
    Replace,
    Add,
}

/// Logits for every position (`len × vocab`).
pub fn forward(p: &ToyTransformerParams, tokens: &[u32]) -> Result<Tensor2D> {
    p.forward(tokens, None)
}

/// Forward pass that also returns the residual after `layer` at every position.
pub fn forward_with_capture(p: &ToyTransformerParams, tokens: &[u32], layer: usize) -> Result<(Tensor2D, Vec<Vector>)> {
    let mut captured = Vec::with_capacity(tokens.len());
    let mut cb = |_: usize, x: &mut [f64]| captured.push(x.to_vec());
    let logits = p.forward(tokens, Some(&mut Hook::new(layer, &mut cb)))?;
    Ok((logits, captured))
}

/// Softmax of the final position's logits.
pub fn next_token_distribution(p: &ToyTransformerParams, tokens: &[u32]) -> Result<Vector> {
    let logits = p.forward(tokens, None)?;
    Ok(softmax(logits.row(logits.rows() - 1)))
}

/// Total probability on the wait set.
pub fn metric_wait(probs: &[f64], w: &WaitSet) -> f64 {
    w.ids()
        .iter()
        .filter_map(|&i| probs.get(i as usize))
        .sum()
}

/// Forward pass with the residual after `layer` replaced by (or incremented
/// with) a payload at the listed positions.
pub fn patched_forward(
    p: &ToyTransformerParams,
    tokens: &[u32],
    layer: usize,
    mode: PatchMode,
    patches: &[(usize, Vector)],
) -> Result<Tensor2D> {
    p.check_tokens(tokens)?;
    for (pos, payload) in patches {
        ensure_input!(*pos < tokens.len(), "patch position {pos} outside sequence of {}", tokens.len());
        ensure_input!(
            payload.len() == p.config.d_model,
            "patch payload has dim {} but d_model is {}",
            payload.len(),
            p.config.d_model
        );
    }
    let mut cb = |pos: usize, x: &mut [f64]| {
        for (ppos, payload) in patches {
            if *ppos == pos {
                match mode {
                    PatchMode::Replace => x.copy_from_slice(payload),
                    PatchMode::Add => {
                        for (xi, d) in x.iter_mut().zip(payload) {
                            *xi += d;
                        }
                    }
                }
            }
        }
    };
    p.forward(tokens, Some(&mut Hook::new(layer, &mut cb)))
}

/// Last-position residual after `layer`.
pub fn residual_at_hook(p: &ToyTransformerParams, tokens: &[u32], layer: usize) -> Result<Vector> {
    Ok(p.prefix_to_hook(tokens, layer)?.1)
}

/// Wait metric of the next-token distribution when the last position's
/// residual after `layer` is replaced by `residual`.
pub fn metric_with_residual(
    p: &ToyTransformerParams,
    tokens: &[u32],
    layer: usize,
    residual: &[f64],
    w: &WaitSet,
) -> Result<f64> {
    let (cache, _) = p.prefix_to_hook(tokens, layer)?;
    ensure_input!(residual.len() == p.config.d_model, "residual has the wrong dimension");
    Ok(metric_wait(&softmax(&p.logits_from_hook(&cache, layer, residual)), w))
}

/// Same as [`metric_with_residual`] for several candidate residuals, sharing
/// one prefix pass.
pub fn metrics_with_residuals(
    p: &ToyTransformerParams,
    tokens: &[u32],
    layer: usize,
    residuals: &[Vector],
    w: &WaitSet,
) -> Result<Vec<f64>> {
    let (cache, _) = p.prefix_to_hook(tokens, layer)?;
    residuals
        .iter()
        .map(|r| {
            ensure_input!(r.len() == p.config.d_model, "residual has the wrong dimension");
            Ok(metric_wait(&softmax(&p.logits_from_hook(&cache, layer, r)), w))
        })
        .collect()
}

/// Exact gradient of the wait metric at the last position with respect to
/// the residual stream at `hook`, by reverse mode through the blocks above it.
pub fn grad_metric_wrt_residual(p: &ToyTransformerParams, tokens: &[u32], hook: HookPoint, w: &WaitSet) -> Result<Vector> {
    Ok(metric_and_grad(p, tokens, hook, w)?.1)
}

/// `(M, ∇_a M)` at the hook.
pub fn metric_and_grad(p: &ToyTransformerParams, tokens: &[u32], hook: HookPoint, w: &WaitSet) -> Result<(f64, Vector)> {
    w.validate(p.config.vocab_size)?;
    ensure_input!(
        !tokens.is_empty() && hook.position == tokens.len() - 1,
        "metric gradient is only defined at the last token (position {}, length {})",
        hook.position,
        tokens.len()
    );
    let (cache, x) = p.prefix_to_hook(tokens, hook.layer)?;
    let (m, g) = p.grad_from_hook(&cache, hook.layer, &x, |probs| {
        let m = metric_wait(probs, w);
        let d = probs
            .iter()
            .enumerate()
            .map(|(i, &pi)| pi * (if w.contains(i as u32) { 1.0 } else { 0.0 } - m))
            .collect();
        (m, d)
    });
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite metric gradient".into()));
    }
    Ok((m, g))
}

/// Next-token distribution of `carrier` with the residual after `layer` at
/// `insert_position` replaced by `vector`.
pub fn patchscope(
    p: &ToyTransformerParams,
    carrier: &[u32],
    layer: usize,
    vector: &[f64],
    insert_position: usize,
) -> Result<Vector> {
    ensure_input!(
        insert_position < carrier.len(),
        "insert position {insert_position} outside carrier prompt of {}",
        carrier.len()
    );
    let logits = patched_forward(p, carrier, layer, PatchMode::Replace, &[(insert_position, vector.to_vec())])?;
    Ok(softmax(logits.row(logits.rows() - 1)))
}
