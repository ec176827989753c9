//! Rank crosscoder features by their linearised effect on the wait metric
//! and compare the leaders with exact zero-ablation.

use xcoder::attribution::{attribute_dataset, exact_ablation_many};
use xcoder::toy_model::{linear_bypass, synthetic_rollouts, LinearBypassConfig, ToyTokenizer};
use xcoder::wait_dataset::{build_prefixes, PrefixScheme, Rollout, SentenceRule};

fn main() -> xcoder::Result<()> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let cc = lb.planted_crosscoder(30, 5);
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let rollouts: Vec<Rollout> = synthetic_rollouts(80, 9)
        .iter()
        .enumerate()
        .map(|(i, t)| Rollout::from_text(i as u64, t, &tok))
        .collect::<xcoder::Result<_>>()?;
    let prefixes = build_prefixes(&rollouts, &w, PrefixScheme::RolloutStart, &SentenceRule::default(), &tok)?;

    let report = attribute_dataset(&lb.pair, &cc, &prefixes, lb.hook_layer(), &w, 5, "synthetic")?;
    println!("{} prefixes; feature 0 is the planted wait promoter, feature 1 the suppressor", report.n_examples);
    println!("top 5:    {:?}", report.top);
    println!("bottom 5: {:?}", report.bottom);

    let example = &prefixes[0];
    let exact = exact_ablation_many(&lb.pair, &cc, &example.tokens, lb.hook_layer(), &w, &report.top)?;
    println!("on {:?}:", tok.decode(&example.tokens)?);
    for s in exact {
        println!("  feature {:2}: mean linear score {:+.4}, exact ablation here {:+.4}", s.feature, report.means[s.feature], s.value);
    }
    Ok(())
}
