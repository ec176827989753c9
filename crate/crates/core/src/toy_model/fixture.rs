//! The linear-bypass model pair.
//!
//! Both models share every weight except the token embeddings of a few
//! trigger tokens: in the reasoning model, sentence-ending punctuation carries
//! an extra `c_p·u_p` and `=` carries an extra `c_s·u_s`. The unembedding row
//! of the designated wait token reads `+β·u_p − β·u_s`, and the blocks are
//! kept small so the residual stream passes almost linearly from the hook to
//! the unembedding. `u_p` therefore promotes wait and `u_s` suppresses it,
//! giving analytic ground truth for attribution, steering and patchscope.

use super::tokenizer::{ToyTokenizer, WAIT_FORMS};
use super::transformer::{InitScales, ToyConfig, ToyTransformerParams};
use super::ModelPair;
use crate::crosscoder::CrosscoderParams;
use crate::error::Result;
use crate::numerics::{axpy, dot, round_to_f32, RngState, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearBypassConfig {
    pub seed: u64,
    pub config: ToyConfig,
    pub hook_layer: usize,
    /// Scale of attention/MLP weights relative to a standard init.
    pub block_scale: f64,
    /// `c_p`: planted promote component on sentence-ending punctuation.
    pub promote_strength: f64,
    /// `c_s`: planted suppress component on `=`.
    pub suppress_strength: f64,
    /// `β`: readout of the planted directions by the designated wait token.
    pub readout: f64,
    /// Unembedding bias of every wait token.
    pub wait_bias: f64,
    /// Norm of the unembedding rows of the other wait forms.
    pub wait_row_norm: f64,
}

impl Default for LinearBypassConfig {
    fn default() -> Self {
        let config = ToyConfig::default();
        Self {
            seed: 0,
            config,
            hook_layer: config.n_layers / 2,
            block_scale: 0.3,
            promote_strength: 0.5,
            suppress_strength: 0.5,
            readout: 4.0,
            wait_bias: -6.0,
            wait_row_norm: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBypass {
    pub pair: ModelPair,
    pub config: LinearBypassConfig,
    /// Unit vector `u_p`.
    pub promote_direction: Vector,
    /// Unit vector `u_s`, orthogonal to `u_p`.
    pub suppress_direction: Vector,
    /// Token id of `" Wait"`.
    pub designated_wait: u32,
    pub promote_triggers: Vec<u32>,
    pub suppress_triggers: Vec<u32>,
}

fn project_out(v: &mut [f64], unit: &[f64]) {
    let c = dot(v, unit);
    axpy(-c, unit, v);
}

/// Builds the linear-bypass pair.
pub fn linear_bypass(cfg: LinearBypassConfig) -> Result<LinearBypass> {
    let mut rng = RngState::new(cfg.seed);
    let scales = InitScales {
        block: cfg.block_scale,
        ..InitScales::default()
    };
    let mut base = ToyTransformerParams::random(cfg.config, scales, &mut rng)?;
    let d = cfg.config.d_model;

    let u_p = rng.unit_vector(d);
    let mut u_s = rng.unit_vector(d);
    project_out(&mut u_s, &u_p);
    let n = dot(&u_s, &u_s).sqrt();
    u_s.iter_mut().for_each(|x| *x /= n);

    // Keep the planted directions out of everything else.
    for t in 0..cfg.config.vocab_size {
        for u in [&u_p, &u_s] {
            project_out(base.embed.row_mut(t), u);
            project_out(base.unembed.row_mut(t), u);
        }
    }
    for p in 0..cfg.config.max_seq_len {
        for u in [&u_p, &u_s] {
            project_out(base.pos_embed.row_mut(p), u);
        }
    }

    let tok = ToyTokenizer;
    let designated_wait = tok.id_of(WAIT_FORMS[1]).expect("wait form");
    for w in tok.wait_set().ids() {
        base.unembed_bias[*w as usize] = cfg.wait_bias;
        if *w != designated_wait {
            let row = base.unembed.row_mut(*w as usize);
            let n = dot(row, row).sqrt();
            row.iter_mut().for_each(|x| *x *= cfg.wait_row_norm / n);
        }
    }
    {
        let row = base.unembed.row_mut(designated_wait as usize);
        axpy(cfg.readout, &u_p, row);
        axpy(-cfg.readout, &u_s, row);
    }

    let promote_triggers: Vec<u32> = [".", "?", "!"].iter().map(|c| tok.id_of(c).unwrap()).collect();
    let suppress_triggers: Vec<u32> = vec![tok.id_of("=").unwrap()];
    let mut reasoning = base.clone();
    for &t in &promote_triggers {
        axpy(cfg.promote_strength, &u_p, reasoning.embed.row_mut(t as usize));
    }
    for &t in &suppress_triggers {
        axpy(cfg.suppress_strength, &u_s, reasoning.embed.row_mut(t as usize));
    }
    base.round_to_f32();
    reasoning.round_to_f32();

    Ok(LinearBypass {
        pair: ModelPair::new(base, reasoning)?,
        config: cfg,
        promote_direction: u_p,
        suppress_direction: u_s,
        designated_wait,
        promote_triggers,
        suppress_triggers,
    })
}

impl LinearBypass {
    pub fn hook_layer(&self) -> usize {
        self.config.hook_layer
    }

    /// A hand-built crosscoder whose feature 0 is the promote direction and
    /// feature 1 the suppress direction (reasoning-only decoders), followed
    /// by `n_random` random shared features.
    pub fn planted_crosscoder(&self, n_random: usize, seed: u64) -> CrosscoderParams {
        let d = self.pair.d_model();
        let dc = 2 + n_random;
        let mut rng = RngState::new(seed);
        let mut p = CrosscoderParams::zeros(d, dc);
        for (k, u) in [&self.promote_direction, &self.suppress_direction].into_iter().enumerate() {
            p.enc_reasoning.row_mut(k).copy_from_slice(u);
            for (e, x) in p.enc_base.row_mut(k).iter_mut().zip(u) {
                *e = -x;
            }
            p.dec_reasoning.set_col(k, u);
        }
        for k in 2..dc {
            let v = rng.unit_vector(d);
            p.enc_base.row_mut(k).copy_from_slice(&v);
            p.enc_reasoning.row_mut(k).copy_from_slice(&v);
            p.enc_bias[k] = -0.5;
            p.dec_base.set_col(k, &v);
            p.dec_reasoning.set_col(k, &v);
        }
        for b in p.blocks_mut() {
            round_to_f32(b);
        }
        p
    }
}

/// Synthetic "reasoning" text over the toy alphabet: short sentences with
/// occasional wait forms, deterministic in `seed`.
pub fn synthetic_rollouts(n: usize, seed: u64) -> Vec<String> {
    const WORDS: &[&str] = &[
        "so", "then", "we", "know", "that", "x", "y", "is", "the", "answer", "let", "me", "check", "sum", "of",
        "and", "it", "must", "be", "I", "think", "ok", "but", "maybe", "not", "first", "next", "value", "total",
        "step", "add", "both", "sides", "gives", "again",
    ];
    let mut rng = RngState::new(seed);
    (0..n)
        .map(|_| {
            let mut text = String::new();
            let sentences = 2 + rng.below(4);
            for s in 0..sentences {
                if s > 0 {
                    text.push(' ');
                }
                let words = 3 + rng.below(6);
                for w in 0..words {
                    if w > 0 {
                        text.push(' ');
                    }
                    if rng.uniform() < 0.2 {
                        let var = ["x", "y", "a", "b"][rng.below(4)];
                        text.push_str(&format!("{var}={}", rng.below(50)));
                    } else {
                        text.push_str(WORDS[rng.below(WORDS.len())]);
                    }
                }
                text.push(['.', '.', '.', '?', '!'][rng.below(5)]);
                if rng.uniform() < 0.35 {
                    let form = ["Wait", "wait"][rng.below(2)];
                    text.push(' ');
                    text.push_str(form);
                    text.push(',');
                }
            }
            text
        })
        .collect()
}
