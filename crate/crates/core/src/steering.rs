//! Decoder-direction steering during generation and the strength sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::Stream;
use crate::crosscoder::CrosscoderParams;
use crate::error::{ensure_input, Error, Result};
use crate::numerics::{norm, Vector};
use crate::toy_model::{generate, Generation, ModelPair, SamplingConfig, Steer, ToyTokenizer, WaitSet, WAIT_FORMS};

pub const DEFAULT_STRENGTHS: [f64; 10] = [-1.5, -1.25, -1.0, -0.75, -0.5, 0.5, 0.75, 1.0, 1.25, 1.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub feature: usize,
    pub strength: f64,
    pub layer: usize,
    /// First steered position; `None` means the last prompt token.
    #[serde(default)]
    pub start_position: Option<usize>,
    /// Stop steering after this many generated tokens; `None` steers throughout.
    #[serde(default)]
    pub steer_tokens: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

/// `a + α·(‖a‖/‖v‖)·v`.
pub fn steering_delta(a: &[f64], v: &[f64], alpha: f64) -> Result<Vector> {
    let mut out = a.to_vec();
    apply_steering(&mut out, v, alpha)?;
    Ok(out)
}

fn apply_steering(a: &mut [f64], v: &[f64], alpha: f64) -> Result<()> {
    ensure_input!(a.len() == v.len(), "steering direction has dim {} but residual has {}", v.len(), a.len());
    let nv = norm(v);
    if nv < 1e-12 {
        return Err(Error::DegenerateFeature { feature: None, norm: nv });
    }
    let scale = alpha * norm(a) / nv;
    a.iter_mut().zip(v).for_each(|(x, d)| *x += scale * d);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeredRollout {
    pub tokens: Vec<u32>,
    pub text: String,
    pub wait_metric: Vec<f64>,
}

fn direction(cc: &CrosscoderParams, k: usize) -> Result<Vector> {
    ensure_input!(k < cc.d_crosscoder(), "feature {k} out of range for {} latents", cc.d_crosscoder());
    let v = cc.feature_direction(Stream::Reasoning, k);
    let n = norm(&v);
    if n < 1e-12 {
        return Err(Error::DegenerateFeature { feature: Some(k), norm: n });
    }
    Ok(v)
}

pub fn steered_generate(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    cfg: &SteeringConfig,
    prompt: &[u32],
    w: &WaitSet,
) -> Result<SteeredRollout> {
    ensure_input!(!prompt.is_empty(), "steering needs a nonempty prompt");
    ensure_input!(cc.d_model() == pair.d_model(), "crosscoder d_model {} does not match model {}", cc.d_model(), pair.d_model());
    let v = direction(cc, cfg.feature)?;
    let from = cfg.start_position.unwrap_or(prompt.len() - 1);
    let until = cfg.steer_tokens.map_or(usize::MAX, |n| prompt.len() + n);
    let mut failure = None;
    let mut cb = |pos: usize, x: &mut [f64]| {
        if pos < until {
            if let Err(e) = apply_steering(x, &v, cfg.strength) {
                failure.get_or_insert(e);
            }
        }
    };
    let g: Generation = generate(
        &pair.reasoning,
        prompt,
        &cfg.sampling,
        w,
        Some(Steer {
            layer: cfg.layer,
            from_position: Some(from),
            callback: &mut cb,
        }),
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(SteeredRollout {
        text: pair.tokenizer.decode(&g.tokens)?,
        tokens: g.tokens,
        wait_metric: g.wait_metric,
    })
}

/// Character index (Unicode scalars) of the earliest wait surface form.
pub fn chars_before_first_wait(text: &str, forms: &[&str]) -> Option<usize> {
    let byte = forms.iter().filter_map(|f| text.find(f)).min()?;
    Some(text[..byte].chars().count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strength: f64,
    pub text: String,
    pub chars_before_first_wait: Option<usize>,
    pub wait_metric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub feature: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// `strength, chars_before_first_wait, first_step_wait_metric`; absent
    /// waits are written as `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("strength\tchars_before_first_wait\tfirst_step_wait_metric\n");
        for r in &self.rows {
            let chars = r.chars_before_first_wait.map_or("NA".to_string(), |c| c.to_string());
            let m0 = r.wait_metric.first().map_or("NA".to_string(), |m| format!("{m:.9e}"));
            out.push_str(&format!("{}\t{chars}\t{m0}\n", r.strength));
        }
        out
    }
}

/// One steered continuation per strength, all with the same sampling seed.
pub fn strength_sweep(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    base: &SteeringConfig,
    strengths: &[f64],
    prompt: &[u32],
    w: &WaitSet,
) -> Result<SweepResult> {
    ensure_input!(!strengths.is_empty(), "strength sweep needs at least one strength");
    let rows = strengths
        .par_iter()
        .map(|&strength| {
            let cfg = SteeringConfig { strength, ..base.clone() };
            let r = steered_generate(pair, cc, &cfg, prompt, w)?;
            Ok(SweepRow {
                strength,
                chars_before_first_wait: chars_before_first_wait(&r.text, &WAIT_FORMS),
                text: r.text,
                wait_metric: r.wait_metric,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult { feature: base.feature, rows })
}

/// Unsteered baseline with the same sampling settings.
pub fn baseline_generate(pair: &ModelPair, prompt: &[u32], sampling: &SamplingConfig, w: &WaitSet) -> Result<SteeredRollout> {
    let g = generate(&pair.reasoning, prompt, sampling, w, None)?;
    Ok(SteeredRollout {
        text: ToyTokenizer.decode(&g.tokens)?,
        tokens: g.tokens,
        wait_metric: g.wait_metric,
    })
}
