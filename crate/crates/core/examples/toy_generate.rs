//! Sample from both models of the linear-bypass pair and print the wait
//! metric before each generated token.

use xcoder::toy_model::{generate, linear_bypass, LinearBypassConfig, SamplingConfig, ToyTokenizer};

fn main() -> xcoder::Result<()> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let prompt = tok.encode("so x=2.")?;
    let sampling = SamplingConfig { max_tokens: 24, seed: 1, ..SamplingConfig::default() };

    for (name, model) in [("base", &lb.pair.base), ("reasoning", &lb.pair.reasoning)] {
        let g = generate(model, &prompt, &sampling, &w, None)?;
        println!("{name:>9}: so x=2.{:?}", tok.decode(&g.tokens)?);
        println!("           first-step wait metric {:.4}", g.wait_metric[0]);
    }
    Ok(())
}
