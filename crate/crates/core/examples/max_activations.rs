//! Index the top activating tokens of each planted feature over captured
//! toy activations and render a snippet.

use xcoder::activation_store::ActivationDataset;
use xcoder::maxact::{metadata_index, render, scan_dataset};
use xcoder::toy_model::{linear_bypass, synthetic_rollouts, LinearBypassConfig, ToyTokenizer};

fn main() -> xcoder::Result<()> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let cc = lb.planted_crosscoder(6, 2);
    let sequences: Vec<(u64, Vec<u32>)> = synthetic_rollouts(40, 4)
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((i as u64, ToyTokenizer.encode(t)?)))
        .collect::<xcoder::Result<_>>()?;
    let records = lb.pair.capture_records(&sequences, lb.hook_layer())?;
    let ds = ActivationDataset::from_records(lb.pair.d_model(), &records)?;

    let index = scan_dataset(&ds, &cc, 5, 8)?;
    let meta = metadata_index(&ds.metadata);
    for feature in [0, 1] {
        let entries = &index.features[feature];
        let tokens: Vec<&str> = entries.iter().map(|e| meta[&(e.sequence_id, e.position)].token_text.as_str()).collect();
        println!("feature {feature}: top tokens {tokens:?}");
        if let Some(best) = entries.first() {
            print!("{}", render(best, &meta)?);
        }
    }
    Ok(())
}
