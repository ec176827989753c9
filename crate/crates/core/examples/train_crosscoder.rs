//! Train a crosscoder on activations generated from a known sparse
//! dictionary and measure how many atoms the reasoning decoder recovers.

use xcoder::activation_store::{ActivationDataset, ShardRecord, TokenMetadata};
use xcoder::crosscoder::{train_on_dataset, TrainConfig};
use xcoder::numerics::{cosine, AdamConfig, RngState};

fn main() -> xcoder::Result<()> {
    let (d, n_atoms, active) = (32, 64, 3);
    let mut rng = RngState::new(11);
    let atoms: Vec<Vec<f64>> = (0..n_atoms).map(|_| rng.unit_vector(d)).collect();

    let records: Vec<ShardRecord> = (0..40_000u64)
        .map(|i| {
            let mut x = vec![0.0; d];
            let mut used = Vec::new();
            while used.len() < active {
                let a = rng.below(n_atoms);
                if !used.contains(&a) {
                    used.push(a);
                    let c = 0.5 + rng.uniform();
                    x.iter_mut().zip(&atoms[a]).for_each(|(xi, ai)| *xi += c * ai);
                }
            }
            let x: Vec<f32> = x.iter().map(|&v| v as f32).collect();
            ShardRecord {
                base: x.clone(),
                reasoning: x,
                meta: TokenMetadata { sequence_id: i, position: 0, token_id: 0, token_text: " ".into() },
            }
        })
        .collect();
    let ds = ActivationDataset::from_records(d, &records)?;

    let config = TrainConfig {
        d_crosscoder: 128,
        lambda: 0.1,
        steps: 8_000,
        batch_size: 128,
        adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let (cc, report) = train_on_dataset(&config, &ds)?;
    println!(
        "holdout loss {:.4} -> {:.4}, dead fraction {:.3}, {:.1}s",
        report.initial_holdout.total, report.final_holdout.total, report.dead_fraction, report.wall_clock_secs
    );

    let recovered = atoms
        .iter()
        .filter(|a| (0..cc.d_crosscoder()).any(|k| cosine(a, &cc.dec_reasoning.col(k)).abs() >= 0.9))
        .count();
    println!("{recovered}/{n_atoms} atoms have a decoder column with |cos| >= 0.9");
    Ok(())
}
