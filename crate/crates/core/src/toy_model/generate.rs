//! Seeded autoregressive sampling with an optional residual-stream callback.

use serde::{Deserialize, Serialize};

use super::transformer::{Hook, KvCache, ToyTransformerParams};
use super::{metric_wait, WaitSet};
use crate::error::{ensure_input, Result};
use crate::numerics::{softmax, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// `≤ 0` means greedy argmax.
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: 200,
            seed: 0,
        }
    }
}

/// Residual callback for generation, applied after block `layer` at every
/// position `≥ from_position` (default: the last prompt token).
pub struct Steer<'a> {
    pub layer: usize,
    pub from_position: Option<usize>,
    pub callback: &'a mut dyn FnMut(usize, &mut [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Continuation only, without the prompt.
    pub tokens: Vec<u32>,
    /// Wait metric of the (temperature-free) next-token distribution before each sampled token.
    pub wait_metric: Vec<f64>,
}

/// Draws one token. Nucleus order is probability descending with ties by
/// ascending id; one uniform draw per call.
pub fn sample_token(logits: &[f64], cfg: &SamplingConfig, rng: &mut RngState) -> u32 {
    if cfg.temperature <= 0.0 {
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        return best as u32;
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
    let probs = softmax(&scaled);
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = 0;
    let mut mass = 0.0;
    for &i in &order {
        mass += probs[i];
        kept += 1;
        if mass >= cfg.top_p {
            break;
        }
    }
    let u = rng.uniform() * mass;
    let mut acc = 0.0;
    for &i in &order[..kept] {
        acc += probs[i];
        if u < acc {
            return i as u32;
        }
    }
    order[kept - 1] as u32
}

pub fn generate(
    p: &ToyTransformerParams,
    prompt: &[u32],
    sampling: &SamplingConfig,
    wait: &WaitSet,
    steer: Option<Steer<'_>>,
) -> Result<Generation> {
    p.check_tokens(prompt)?;
    let mut out = Generation {
        tokens: Vec::with_capacity(sampling.max_tokens),
        wait_metric: Vec::with_capacity(sampling.max_tokens),
    };
    if sampling.max_tokens == 0 {
        return Ok(out);
    }
    ensure_input!(
        prompt.len() + sampling.max_tokens - 1 <= p.config.max_seq_len,
        "prompt of {} plus {} new tokens exceeds max_seq_len {}",
        prompt.len(),
        sampling.max_tokens,
        p.config.max_seq_len
    );
    let mut rng = RngState::new(sampling.seed);
    let mut cache = KvCache::new(p.config.n_layers);

    let mut steer = steer;
    let from = steer
        .as_ref()
        .map(|s| s.from_position.unwrap_or(prompt.len() - 1))
        .unwrap_or(usize::MAX);
    let layer = steer.as_ref().map(|s| s.layer);
    let mut gated = |pos: usize, x: &mut [f64]| {
        if pos >= from {
            if let Some(s) = steer.as_mut() {
                (s.callback)(pos, x);
            }
        }
    };
    let mut hook = layer.map(|l| Hook::new(l, &mut gated));

    let mut logits = Vec::new();
    for &t in prompt {
        logits = p.step(&mut cache, t, hook.as_mut())?;
    }
    for i in 0..sampling.max_tokens {
        out.wait_metric.push(metric_wait(&softmax(&logits), wait));
        let tok = sample_token(&logits, sampling, &mut rng);
        out.tokens.push(tok);
        if i + 1 < sampling.max_tokens {
            logits = p.step(&mut cache, tok, hook.as_mut())?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_model::{next_token_distribution, InitScales, ToyConfig, ToyTokenizer};

    fn model() -> ToyTransformerParams {
        ToyTransformerParams::random(ToyConfig::default(), InitScales::default(), &mut RngState::new(11)).unwrap()
    }

    #[test]
    fn greedy_is_argmax() {
        let logits = [0.1, 2.0, -1.0, 2.0];
        let cfg = SamplingConfig { temperature: 0.0, ..SamplingConfig::default() };
        assert_eq!(sample_token(&logits, &cfg, &mut RngState::new(0)), 1);
    }

    #[test]
    fn zero_max_tokens_is_empty() {
        let m = model();
        let cfg = SamplingConfig { max_tokens: 0, ..SamplingConfig::default() };
        let g = generate(&m, &[1, 2], &cfg, &ToyTokenizer.wait_set(), None).unwrap();
        assert!(g.tokens.is_empty() && g.wait_metric.is_empty());
    }

    #[test]
    fn generation_is_seeded() {
        let m = model();
        let w = ToyTokenizer.wait_set();
        let prompt = ToyTokenizer.encode("so the answer").unwrap();
        let cfg = SamplingConfig { max_tokens: 40, seed: 9, temperature: 1.0, top_p: 0.95 };
        let a = generate(&m, &prompt, &cfg, &w, None).unwrap();
        let b = generate(&m, &prompt, &cfg, &w, None).unwrap();
        assert_eq!(a, b);
        let c = generate(&m, &prompt, &SamplingConfig { seed: 10, ..cfg }, &w, None).unwrap();
        assert_ne!(a.tokens, c.tokens);
    }

    #[test]
    fn greedy_generation_matches_repeated_forward() {
        let m = model();
        let w = ToyTokenizer.wait_set();
        let mut seq = ToyTokenizer.encode("abc").unwrap();
        let cfg = SamplingConfig { temperature: 0.0, max_tokens: 5, ..SamplingConfig::default() };
        let g = generate(&m, &seq, &cfg, &w, None).unwrap();
        for &t in &g.tokens {
            let p = next_token_distribution(&m, &seq).unwrap();
            let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(best as u32, t);
            seq.push(t);
        }
    }

    #[test]
    fn steer_callback_sees_last_prompt_token_onwards() {
        let m = model();
        let w = ToyTokenizer.wait_set();
        let prompt = ToyTokenizer.encode("abcd").unwrap();
        let mut seen = Vec::new();
        let mut cb = |pos: usize, _: &mut [f64]| seen.push(pos);
        let cfg = SamplingConfig { max_tokens: 3, ..SamplingConfig::default() };
        generate(&m, &prompt, &cfg, &w, Some(Steer { layer: 1, from_position: None, callback: &mut cb })).unwrap();
        assert_eq!(seen, vec![3, 4, 5]);
    }

    #[test]
    fn top_p_restricts_support() {
        let logits = [5.0, 4.0, -10.0, -10.0];
        let cfg = SamplingConfig { temperature: 1.0, top_p: 0.5, ..SamplingConfig::default() };
        let mut rng = RngState::new(3);
        for _ in 0..200 {
            assert_eq!(sample_token(&logits, &cfg, &mut rng), 0);
        }
    }
}
