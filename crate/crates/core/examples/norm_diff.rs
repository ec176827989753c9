//! Plant base-only, reasoning-only and shared atoms, train a crosscoder and
//! classify its features by relative decoder norm.

use xcoder::activation_store::{ActivationDataset, ShardRecord, TokenMetadata};
use xcoder::crosscoder::{train_on_dataset, TrainConfig};
use xcoder::diffing::{classify_all, FeatureClass, Thresholds};
use xcoder::numerics::{AdamConfig, RngState};

fn main() -> xcoder::Result<()> {
    let d = 16;
    let mut rng = RngState::new(3);
    // 0..4 base-only, 4..8 reasoning-only, the rest shared.
    let atoms: Vec<Vec<f64>> = (0..24).map(|_| rng.unit_vector(d)).collect();
    let records: Vec<ShardRecord> = (0..30_000u64)
        .map(|i| {
            let (mut b, mut r) = (vec![0f32; d], vec![0f32; d]);
            for _ in 0..2 {
                let a = rng.below(atoms.len());
                let c = 0.5 + rng.uniform();
                for j in 0..d {
                    let v = (c * atoms[a][j]) as f32;
                    if a >= 4 {
                        r[j] += v;
                    }
                    if !(4..8).contains(&a) {
                        b[j] += v;
                    }
                }
            }
            ShardRecord {
                base: b,
                reasoning: r,
                meta: TokenMetadata { sequence_id: i, position: 0, token_id: 0, token_text: " ".into() },
            }
        })
        .collect();
    let ds = ActivationDataset::from_records(d, &records)?;
    let config = TrainConfig {
        d_crosscoder: 48,
        lambda: 0.1,
        steps: 6_000,
        batch_size: 128,
        adam: AdamConfig { learning_rate: 2e-3, ..AdamConfig::default() },
        ..TrainConfig::default()
    };
    let (cc, _) = train_on_dataset(&config, &ds)?;

    let report = classify_all(&cc, Thresholds::default())?;
    for class in FeatureClass::ALL {
        println!("{:>15}: {:3} features ({:.1}% of live)", class.as_str(), report.count(class), 100.0 * report.fraction(class));
    }
    let mirrored = classify_all(&cc.swapped(), Thresholds::default())?;
    println!("after swapping streams: {} base-only, {} finetuned-only", mirrored.base_only, mirrored.finetuned_only);
    Ok(())
}
