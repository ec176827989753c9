//! Locate wait tokens in rollouts and cut the two kinds of prefixes used
//! for attribution.

use xcoder::toy_model::ToyTokenizer;
use xcoder::wait_dataset::{
    extract_sentence_prefixes, find_wait_positions, truncate_before_first_wait, Rollout, SentenceRule,
};

fn main() -> xcoder::Result<()> {
    let tok = ToyTokenizer;
    let w = tok.wait_set();
    let texts = [
        "so x=2. Wait, x=3.",
        "first. second wait third. fourth wait",
        "the total is 12 wait no it is 13.",
        "no marker in this one.",
    ];
    for (i, text) in texts.iter().enumerate() {
        let r = Rollout::from_text(i as u64, text, &tok)?;
        println!("{text:?}");
        println!("  wait tokens at {:?}", find_wait_positions(&r, &w));
        match truncate_before_first_wait(&r, &w) {
            Some(p) => println!("  rollout-start prefix: {:?}", tok.decode(&p.tokens)?),
            None => println!("  rollout-start prefix: none"),
        }
        for p in extract_sentence_prefixes(&r, &w, &SentenceRule::default(), &tok)? {
            println!("  sentence prefix before token {}: {:?}", p.wait_position, tok.decode(&p.tokens)?);
        }
    }
    Ok(())
}
