//! Steer the reasoning model along the planted wait-promoting and
//! wait-suppressing decoder directions over the standard strength sweep.

use xcoder::steering::{strength_sweep, SteeringConfig, DEFAULT_STRENGTHS};
use xcoder::toy_model::{linear_bypass, LinearBypassConfig, SamplingConfig, ToyTokenizer};

fn main() -> xcoder::Result<()> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let cc = lb.planted_crosscoder(8, 1);
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let prompt = tok.encode("so the answer is 4")?;

    for (feature, name) in [(0, "promote"), (1, "suppress")] {
        let cfg = SteeringConfig {
            feature,
            strength: 0.0,
            layer: lb.hook_layer(),
            start_position: None,
            steer_tokens: None,
            sampling: SamplingConfig { max_tokens: 80, seed: 2, ..SamplingConfig::default() },
        };
        let sweep = strength_sweep(&lb.pair, &cc, &cfg, &DEFAULT_STRENGTHS, &prompt, &w)?;
        println!("feature {feature} ({name})");
        for row in &sweep.rows {
            let chars = row.chars_before_first_wait.map_or("no wait".to_string(), |c| format!("{c} chars"));
            println!("  alpha {:+.2}: first-step M {:.4}, {chars}", row.strength, row.wait_metric[0]);
        }
    }
    Ok(())
}
