//! Capture paired hook activations from the toy pair, write them as shards,
//! build a checksummed manifest and load it back as a dataset.

use xcoder::activation_store::{write_shard, ActivationDataset, DatasetManifest, Stream};
use xcoder::toy_model::{linear_bypass, synthetic_rollouts, LinearBypassConfig, ToyTokenizer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lb = linear_bypass(LinearBypassConfig::default())?;
    let sequences: Vec<(u64, Vec<u32>)> = synthetic_rollouts(30, 7)
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((i as u64, ToyTokenizer.encode(t)?)))
        .collect::<xcoder::Result<_>>()?;

    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let mut files = Vec::new();
    for (i, chunk) in sequences.chunks(10).enumerate() {
        let records = lb.pair.capture_records(chunk, lb.hook_layer())?;
        let file = std::path::PathBuf::from(format!("shard-{i:03}.xcas"));
        let info = write_shard(&dir.join(&file), lb.pair.d_model(), &records)?;
        println!("wrote {} ({} tokens, sha256 {}…)", file.display(), records.len(), &info.sha256[..12]);
        files.push(file);
    }

    let manifest = DatasetManifest::build(dir, &files, lb.hook_layer(), "toy-base", "toy-reasoning")?;
    manifest.verify()?;
    manifest.save(&dir.join("manifest.json"))?;
    let ds = ActivationDataset::load(&manifest)?;
    println!("manifest: {} tokens, d_model {}", manifest.total_tokens, manifest.d_model);

    let first = &ds.metadata[0];
    println!(
        "token 0 of sequence {} is {:?}; reasoning activation starts {:?}",
        first.sequence_id,
        first.token_text,
        &ds.row(Stream::Reasoning, 0)[..3]
    );
    Ok(())
}
