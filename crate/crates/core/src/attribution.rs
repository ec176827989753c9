//! Feature attribution to the wait metric.
//!
//! The exact score of feature `k` is the drop in wait probability when `f_k`
//! is zeroed inside an error-preserving patch of the reasoning model's
//! last-token residual: the patched residual is `decode_R(f) + e` with
//! `e = a_R − decode_R(f)`. The approximate score is the first-order
//! estimate `(W_dec_Rᵀ ∇_a M) ⊙ f`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::Stream;
use crate::crosscoder::CrosscoderParams;
use crate::error::{ensure_input, Result};
use crate::numerics::Vector;
use crate::toy_model::{metric_and_grad, metrics_with_residuals, residual_at_hook, HookPoint, ModelPair, WaitSet};
use crate::wait_dataset::WaitPrefix;

pub const DEFAULT_TOP_K: usize = 50;

/// `m̂ = (W_dec_R)ᵀ g ⊙ f`.
pub fn approx_attribution(cc: &CrosscoderParams, g: &[f64], f: &[f64]) -> Result<Vector> {
    ensure_input!(
        g.len() == cc.d_model() && f.len() == cc.d_crosscoder(),
        "attribution expects g of dim {} and f of dim {}, got {} and {}",
        cc.d_model(),
        cc.d_crosscoder(),
        g.len(),
        f.len()
    );
    let proj = cc.dec_reasoning.matvec_t(g)?;
    Ok(proj.iter().zip(f).map(|(p, fk)| p * fk).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactAblationScore {
    pub feature: usize,
    pub value: f64,
}

/// Clean paired activations at the last token and their latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentContext {
    pub a_base: Vector,
    pub a_reasoning: Vector,
    pub f: Vector,
    pub reconstruction: Vector,
    pub error: Vector,
}

pub fn latent_context(pair: &ModelPair, cc: &CrosscoderParams, tokens: &[u32], layer: usize) -> Result<LatentContext> {
    ensure_input!(cc.d_model() == pair.d_model(), "crosscoder d_model {} does not match model {}", cc.d_model(), pair.d_model());
    let a_base = residual_at_hook(&pair.base, tokens, layer)?;
    let a_reasoning = residual_at_hook(&pair.reasoning, tokens, layer)?;
    let f = cc.encode(&a_base, &a_reasoning)?;
    let reconstruction = cc.decode(&f, Stream::Reasoning)?;
    let error = a_reasoning.iter().zip(&reconstruction).map(|(a, r)| a - r).collect();
    Ok(LatentContext {
        a_base,
        a_reasoning,
        f,
        reconstruction,
        error,
    })
}

fn patched_residual(cc: &CrosscoderParams, f: &[f64], error: &[f64]) -> Result<Vector> {
    let mut r = cc.decode(f, Stream::Reasoning)?;
    r.iter_mut().zip(error).for_each(|(x, e)| *x += e);
    Ok(r)
}

/// Exact scores for the listed features, sharing the prefix pass. Features
/// with `f_k = 0` score exactly zero without a forward pass.
pub fn exact_ablation_many(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    tokens: &[u32],
    layer: usize,
    w: &WaitSet,
    features: &[usize],
) -> Result<Vec<ExactAblationScore>> {
    let ctx = latent_context(pair, cc, tokens, layer)?;
    for &k in features {
        ensure_input!(k < cc.d_crosscoder(), "feature {k} out of range for {} latents", cc.d_crosscoder());
    }
    let active: Vec<usize> = features.iter().copied().filter(|&k| ctx.f[k] != 0.0).collect();
    let mut residuals = vec![patched_residual(cc, &ctx.f, &ctx.error)?];
    for &k in &active {
        let mut f = ctx.f.clone();
        f[k] = 0.0;
        residuals.push(patched_residual(cc, &f, &ctx.error)?);
    }
    let metrics = metrics_with_residuals(&pair.reasoning, tokens, layer, &residuals, w)?;
    let baseline = metrics[0];
    let mut ablated = metrics[1..].iter();
    Ok(features
        .iter()
        .map(|&k| {
            let value = if ctx.f[k] != 0.0 { baseline - ablated.next().unwrap() } else { 0.0 };
            ExactAblationScore { feature: k, value }
        })
        .collect())
}

pub fn exact_ablation(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    tokens: &[u32],
    layer: usize,
    w: &WaitSet,
    k: usize,
) -> Result<ExactAblationScore> {
    Ok(exact_ablation_many(pair, cc, tokens, layer, w, &[k])?[0])
}

/// Per-example latent code, metric gradient and approximate scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleAttribution {
    pub f: Vector,
    pub grad: Vector,
    pub metric: f64,
    pub scores: Vector,
}

pub fn attribute_example(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    tokens: &[u32],
    layer: usize,
    w: &WaitSet,
) -> Result<ExampleAttribution> {
    ensure_input!(!tokens.is_empty(), "cannot attribute an empty prefix");
    let a_base = residual_at_hook(&pair.base, tokens, layer)?;
    let hook = HookPoint {
        layer,
        position: tokens.len() - 1,
    };
    let a_reasoning = residual_at_hook(&pair.reasoning, tokens, layer)?;
    let f = cc.encode(&a_base, &a_reasoning)?;
    let (metric, grad) = metric_and_grad(&pair.reasoning, tokens, hook, w)?;
    let scores = approx_attribution(cc, &grad, &f)?;
    Ok(ExampleAttribution {
        f,
        grad,
        metric,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub dataset_id: String,
    pub n_examples: usize,
    pub means: Vector,
    pub top: Vec<usize>,
    pub bottom: Vec<usize>,
}

impl AttributionReport {
    /// `feature_id, mean_mhat, rank` with rank 1 for the largest mean.
    pub fn to_tsv(&self) -> String {
        let order = descending_order(&self.means);
        let mut rank = vec![0; self.means.len()];
        for (r, &k) in order.iter().enumerate() {
            rank[k] = r + 1;
        }
        let mut out = String::from("feature_id\tmean_mhat\trank\n");
        for (k, m) in self.means.iter().enumerate() {
            out.push_str(&format!("{k}\t{m:.9e}\t{}\n", rank[k]));
        }
        out
    }
}

fn descending_order(v: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..v.len()).collect();
    ids.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    ids
}

/// Top `k` by descending mean and bottom `k` by ascending mean, ties by
/// ascending id. The bottom list skips anything already in the top list.
pub fn select_top_bottom(means: &[f64], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    ensure_input!(2 * k <= means.len(), "k = {k} exceeds half of {} features", means.len());
    let top: Vec<usize> = descending_order(means).into_iter().take(k).collect();
    let mut asc: Vec<usize> = (0..means.len()).collect();
    asc.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let bottom = asc.into_iter().filter(|i| !top.contains(i)).take(k).collect();
    Ok((top, bottom))
}

pub fn attribute_dataset(
    pair: &ModelPair,
    cc: &CrosscoderParams,
    prefixes: &[WaitPrefix],
    layer: usize,
    w: &WaitSet,
    k: usize,
    dataset_id: &str,
) -> Result<AttributionReport> {
    ensure_input!(!prefixes.is_empty(), "attribution needs at least one prefix");
    let per: Vec<Vector> = prefixes
        .par_iter()
        .map(|p| attribute_example(pair, cc, &p.tokens, layer, w).map(|e| e.scores))
        .collect::<Result<_>>()?;
    let mut means = vec![0.0; cc.d_crosscoder()];
    for s in &per {
        means.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    let n = per.len() as f64;
    means.iter_mut().for_each(|m| *m /= n);
    let (top, bottom) = select_top_bottom(&means, k)?;
    Ok(AttributionReport {
        dataset_id: dataset_id.to_owned(),
        n_examples: per.len(),
        means,
        top,
        bottom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, RngState, Tensor2D};
    use crate::toy_model::{linear_bypass, LinearBypassConfig, ToyTokenizer};
    use crate::wait_dataset::PrefixScheme;

    fn random_cc(seed: u64) -> CrosscoderParams {
        CrosscoderParams::init_random(6, 10, &mut RngState::new(seed))
    }

    #[test]
    fn approx_matches_per_feature_loop() {
        let cc = random_cc(1);
        let mut rng = RngState::new(2);
        let g: Vector = (0..6).map(|_| rng.normal()).collect();
        let f: Vector = (0..10).map(|_| rng.normal().max(0.0)).collect();
        let got = approx_attribution(&cc, &g, &f).unwrap();
        for k in 0..10 {
            let v = cc.feature_direction(Stream::Reasoning, k);
            assert!((got[k] - dot(&v, &g) * f[k]).abs() < 1e-12);
        }
        assert!(approx_attribution(&cc, &g[..5], &f).is_err());
    }

    #[test]
    fn zero_code_and_orthogonal_gradient() {
        let mut cc = random_cc(3);
        let zero = approx_attribution(&cc, &[1.0; 6], &[0.0; 10]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
        cc.dec_reasoning = Tensor2D::zeros(6, 10);
        cc.dec_reasoning.set(0, 4, 1.0);
        let g = [0.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(approx_attribution(&cc, &g, &[1.0; 10]).unwrap()[4], 0.0);
    }

    #[test]
    fn top_bottom_selection() {
        let (top, bottom) = select_top_bottom(&[0.5; 10], 3).unwrap();
        assert_eq!(top, vec![0, 1, 2]);
        assert_eq!(bottom, vec![3, 4, 5]);
        let dec: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        let (top, bottom) = select_top_bottom(&dec, 2).unwrap();
        assert_eq!(top, vec![0, 1]);
        assert_eq!(bottom, vec![9, 8]);
        assert!(select_top_bottom(&dec, 6).is_err());
    }

    #[test]
    fn planted_feature_scores() {
        let lb = linear_bypass(LinearBypassConfig::default()).unwrap();
        let cc = lb.planted_crosscoder(14, 5);
        let w = ToyTokenizer.wait_set();
        let toks = ToyTokenizer.encode("so x is 2.").unwrap();
        let layer = lb.hook_layer();
        let exact = exact_ablation_many(&lb.pair, &cc, &toks, layer, &w, &(0..16).collect::<Vec<_>>()).unwrap();
        let ctx = latent_context(&lb.pair, &cc, &toks, layer).unwrap();
        assert!(ctx.f[0] > 0.0);
        assert!(exact[0].value > 0.0);
        for s in &exact {
            if ctx.f[s.feature] == 0.0 {
                assert_eq!(s.value, 0.0);
            }
        }
        let prefix = WaitPrefix {
            source_id: 0,
            wait_position: toks.len(),
            start: 0,
            tokens: toks.clone(),
            scheme: PrefixScheme::RolloutStart,
        };
        let single = attribute_dataset(&lb.pair, &cc, std::slice::from_ref(&prefix), layer, &w, 3, "one").unwrap();
        let example = attribute_example(&lb.pair, &cc, &toks, layer, &w).unwrap();
        assert_eq!(single.means, example.scores);
        assert_eq!(single.top[0], 0);
        let doubled = attribute_dataset(&lb.pair, &cc, &[prefix.clone(), prefix], layer, &w, 3, "two").unwrap();
        assert_eq!(doubled.means, single.means);
        assert!(attribute_dataset(&lb.pair, &cc, &[], layer, &w, 3, "none").is_err());
    }
}
