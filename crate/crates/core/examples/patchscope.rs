//! Read feature directions through the unembedding by inserting them into a
//! carrier prompt.

use xcoder::activation_store::Stream;
use xcoder::numerics::norm;
use xcoder::toy_model::{patchscope, residual_at_hook, linear_bypass, LinearBypassConfig, ToyTokenizer};

fn main() -> xcoder::Result<()> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let cc = lb.planted_crosscoder(4, 3);
    let tok = ToyTokenizer;
    let carrier = tok.encode("cat cat\n1135 1135\nhello hello\n?")?;
    let last = carrier.len() - 1;
    let a = residual_at_hook(&lb.pair.reasoning, &carrier, lb.hook_layer())?;

    for feature in 0..4 {
        let v = cc.feature_direction(Stream::Reasoning, feature);
        let scaled: Vec<f64> = v.iter().map(|x| 2.0 * norm(&a) * x / norm(&v)).collect();
        let probs = patchscope(&lb.pair.reasoning, &carrier, lb.hook_layer(), &scaled, last)?;
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]));
        let top: Vec<String> = order[..3]
            .iter()
            .map(|&i| format!("{:?} {:.3}", tok.token_text(i as u32).unwrap_or("?"), probs[i]))
            .collect();
        println!("feature {feature}: {}", top.join(", "));
    }
    Ok(())
}
