//! Max-activating examples: the top-`n` tokens per feature over a dataset,
//! with context windows for display.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationDataset, DatasetManifest, Stream, TokenMetadata};
use crate::crosscoder::CrosscoderParams;
use crate::error::{ensure_input, Error, Result};

pub const DEFAULT_TOP_N: usize = 100;
pub const DEFAULT_CONTEXT_RADIUS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxActEntry {
    pub feature: usize,
    pub activation: f64,
    pub sequence_id: u64,
    pub position: u32,
    /// Position of `context_tokens[0]` in the sequence.
    pub context_start: u32,
    pub context_tokens: Vec<u32>,
    /// The feature's activation at every context token.
    pub context_activations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxActIndex {
    pub top_n: usize,
    pub radius: usize,
    /// Per feature, descending by activation.
    pub features: Vec<Vec<MaxActEntry>>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    activation: f64,
    sequence_id: u64,
    position: u32,
}

impl Candidate {
    /// `Greater` means ranked ahead.
    fn rank(&self, other: &Self) -> Ordering {
        self.activation
            .total_cmp(&other.activation)
            .then(other.sequence_id.cmp(&self.sequence_id))
            .then(other.position.cmp(&self.position))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

type Heaps = Vec<BinaryHeap<Reverse<Candidate>>>;

fn offer(heap: &mut BinaryHeap<Reverse<Candidate>>, c: Candidate, n: usize) {
    if heap.len() < n {
        heap.push(Reverse(c));
    } else if let Some(Reverse(worst)) = heap.peek() {
        if c > *worst {
            heap.pop();
            heap.push(Reverse(c));
        }
    }
}

const CHUNK: usize = 1024;

pub fn scan(manifest: &DatasetManifest, cc: &CrosscoderParams, n: usize, radius: usize) -> Result<MaxActIndex> {
    ensure_input!(
        manifest.d_model == cc.d_model(),
        "manifest d_model {} does not match crosscoder d_model {}",
        manifest.d_model,
        cc.d_model()
    );
    scan_dataset(&ActivationDataset::load(manifest)?, cc, n, radius)
}

pub fn scan_dataset(ds: &ActivationDataset, cc: &CrosscoderParams, n: usize, radius: usize) -> Result<MaxActIndex> {
    ensure_input!(ds.d_model == cc.d_model(), "dataset d_model {} does not match crosscoder d_model {}", ds.d_model, cc.d_model());
    ensure_input!(n > 0, "top count must be positive");
    let dc = cc.d_crosscoder();

    let mut by_key = HashMap::with_capacity(ds.len());
    for (row, m) in ds.metadata.iter().enumerate() {
        if by_key.insert((m.sequence_id, m.position), row).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate token (sequence {}, position {}) in dataset",
                m.sequence_id, m.position
            )));
        }
    }

    let encode_row = |row: usize| cc.encode(&ds.row_f64(Stream::Base, row), &ds.row_f64(Stream::Reasoning, row));

    let partial: Vec<Heaps> = (0..ds.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut heaps: Heaps = (0..dc).map(|_| BinaryHeap::new()).collect();
            for row in c * CHUNK..((c + 1) * CHUNK).min(ds.len()) {
                let f = encode_row(row)?;
                let m = &ds.metadata[row];
                for (k, &a) in f.iter().enumerate() {
                    if a > 0.0 {
                        let cand = Candidate {
                            activation: a,
                            sequence_id: m.sequence_id,
                            position: m.position,
                        };
                        offer(&mut heaps[k], cand, n);
                    }
                }
            }
            Ok(heaps)
        })
        .collect::<Result<_>>()?;

    let mut merged: Heaps = (0..dc).map(|_| BinaryHeap::new()).collect();
    for heaps in partial {
        for (k, h) in heaps.into_iter().enumerate() {
            for Reverse(c) in h {
                offer(&mut merged[k], c, n);
            }
        }
    }

    let mut cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut features = Vec::with_capacity(dc);
    for (k, heap) in merged.into_iter().enumerate() {
        let mut cands: Vec<Candidate> = heap.into_iter().map(|Reverse(c)| c).collect();
        cands.sort_by(|a, b| b.cmp(a));
        let mut entries = Vec::with_capacity(cands.len());
        for c in cands {
            let lo = c.position.saturating_sub(radius as u32);
            let mut start = c.position;
            while start > lo && by_key.contains_key(&(c.sequence_id, start - 1)) {
                start -= 1;
            }
            let mut end = c.position;
            while end - c.position < radius as u32 && by_key.contains_key(&(c.sequence_id, end + 1)) {
                end += 1;
            }
            let mut context_tokens = Vec::new();
            let mut context_activations = Vec::new();
            for pos in start..=end {
                let row = by_key[&(c.sequence_id, pos)];
                context_tokens.push(ds.metadata[row].token_id);
                if !cache.contains_key(&row) {
                    cache.insert(row, encode_row(row)?);
                }
                context_activations.push(cache[&row][k]);
            }
            entries.push(MaxActEntry {
                feature: k,
                activation: c.activation,
                sequence_id: c.sequence_id,
                position: c.position,
                context_start: start,
                context_tokens,
                context_activations,
            });
        }
        features.push(entries);
    }
    Ok(MaxActIndex { top_n: n, radius, features })
}

impl MaxActIndex {
    /// One JSON object per entry, features in order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in self.features.iter().flatten() {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Lookup from `(sequence_id, position)` to token metadata.
pub fn metadata_index(meta: &[TokenMetadata]) -> HashMap<(u64, u32), &TokenMetadata> {
    meta.iter().map(|m| ((m.sequence_id, m.position), m)).collect()
}

/// Plain-text snippet: a header, the window with the activating token in
/// `[[ ]]`, then one line per token with its activation.
pub fn render(entry: &MaxActEntry, meta: &HashMap<(u64, u32), &TokenMetadata>) -> Result<String> {
    let mut inline = String::new();
    let mut table = String::new();
    for (i, (&tok, &act)) in entry.context_tokens.iter().zip(&entry.context_activations).enumerate() {
        let pos = entry.context_start + i as u32;
        let m = meta.get(&(entry.sequence_id, pos)).ok_or(Error::MissingMetadata {
            sequence_id: entry.sequence_id,
            position: pos,
        })?;
        if m.token_id != tok {
            return Err(Error::Validation(format!(
                "metadata token {} at (sequence {}, position {pos}) disagrees with entry token {tok}",
                m.token_id, entry.sequence_id
            )));
        }
        let marked = pos == entry.position;
        if marked {
            write!(inline, "[[{}]]", m.token_text).unwrap();
        } else {
            inline.push_str(&m.token_text);
        }
        writeln!(table, "{}{pos}\t{:?}\t{act:.6}", if marked { ">" } else { " " }, m.token_text).unwrap();
    }
    Ok(format!(
        "feature {} activation {:.6} sequence {} position {}\n{}\n{}",
        entry.feature,
        entry.activation,
        entry.sequence_id,
        entry.position,
        inline.escape_debug(),
        table
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation_store::ShardRecord;
    use crate::numerics::{RngState, Tensor2D};

    fn dataset(seqs: &[&str], d: usize, rng: &mut RngState) -> ActivationDataset {
        let mut records = Vec::new();
        for (s, text) in seqs.iter().enumerate() {
            for (p, ch) in text.chars().enumerate() {
                records.push(ShardRecord {
                    base: (0..d).map(|_| rng.normal() as f32).collect(),
                    reasoning: (0..d).map(|_| rng.normal() as f32).collect(),
                    meta: TokenMetadata {
                        sequence_id: s as u64,
                        position: p as u32,
                        token_id: p as u32,
                        token_text: ch.to_string(),
                    },
                });
            }
        }
        ActivationDataset::from_records(d, &records).unwrap()
    }

    #[test]
    fn dead_feature_has_no_entries_and_argmax_matches() {
        let mut rng = RngState::new(1);
        let ds = dataset(&["hello world", "abc"], 4, &mut rng);
        let mut cc = CrosscoderParams::init_random(4, 6, &mut rng);
        cc.enc_bias[2] = -1e6;
        let idx = scan_dataset(&ds, &cc, 1, 2).unwrap();
        assert!(idx.features[2].is_empty());
        for k in [0, 1, 3, 4, 5] {
            let best = (0..ds.len())
                .map(|r| cc.encode(&ds.row_f64(Stream::Base, r), &ds.row_f64(Stream::Reasoning, r)).unwrap()[k])
                .fold(0.0, f64::max);
            if best > 0.0 {
                assert_eq!(idx.features[k][0].activation, best);
            }
        }
    }

    #[test]
    fn ties_go_to_lower_sequence() {
        let mut rng = RngState::new(2);
        let ds = dataset(&["ab", "cd"], 2, &mut rng);
        let mut cc = CrosscoderParams::zeros(2, 2);
        cc.enc_bias[0] = 1.0;
        cc.enc_bias[1] = 1.0;
        let idx = scan_dataset(&ds, &cc, 3, 0).unwrap();
        let keys: Vec<(u64, u32)> = idx.features[0].iter().map(|e| (e.sequence_id, e.position)).collect();
        assert_eq!(keys, vec![(0, 0), (0, 1), (1, 0)]);
    }

    #[test]
    fn golden_snippet_and_windows() {
        let mut rng = RngState::new(3);
        let ds = dataset(&["so x=2. ok"], 1, &mut rng);
        let mut cc = CrosscoderParams::zeros(1, 2);
        cc.enc_reasoning = Tensor2D::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let idx = scan_dataset(&ds, &cc, 1, 2).unwrap();
        let meta = metadata_index(&ds.metadata);
        for entries in &idx.features {
            for e in entries {
                let text = render(e, &meta).unwrap();
                assert!(text.contains(&format!(">{}\t", e.position)));
            }
        }

        let entry = MaxActEntry {
            feature: 3,
            activation: 1.5,
            sequence_id: 0,
            position: 0,
            context_start: 0,
            context_tokens: vec![0, 1],
            context_activations: vec![1.5, 0.25],
        };
        let golden = "feature 3 activation 1.500000 sequence 0 position 0\n[[s]]o\n>0\t\"s\"\t1.500000\n 1\t\"o\"\t0.250000\n";
        assert_eq!(render(&entry, &meta).unwrap(), golden);

        let single = MaxActEntry { context_tokens: vec![0], context_activations: vec![1.5], ..entry.clone() };
        assert_eq!(render(&single, &meta).unwrap().lines().nth(1), Some("[[s]]"));

        let gap = MaxActEntry { sequence_id: 9, ..entry };
        assert!(matches!(render(&gap, &meta), Err(Error::MissingMetadata { sequence_id: 9, position: 0 })));
    }
}
