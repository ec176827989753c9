//! Locating wait tokens in rollouts and cutting the prefixes used for
//! attribution and steering.
//!
//! Two schemes are supported. `SentenceStart` emits, for every wait token, the
//! tokens from the start of its sentence up to (not including) the wait.
//! `RolloutStart` emits one prefix per rollout, from the first token up to the
//! first wait.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy_model::{ToyTokenizer, WaitSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub id: u64,
    pub tokens: Vec<u32>,
    pub text: String,
}

impl Rollout {
    pub fn from_text(id: u64, text: &str, tok: &ToyTokenizer) -> Result<Self> {
        Ok(Self {
            id,
            tokens: tok.encode(text)?,
            text: text.to_owned(),
        })
    }

    pub fn from_tokens(id: u64, tokens: Vec<u32>, tok: &ToyTokenizer) -> Result<Self> {
        let text = tok.decode(&tokens)?;
        Ok(Self { id, tokens, text })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixScheme {
    SentenceStart,
    RolloutStart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitPrefix {
    pub source_id: u64,
    /// Index of the wait token in the source rollout.
    pub wait_position: usize,
    /// Index in the source rollout of `tokens[0]`.
    pub start: usize,
    pub tokens: Vec<u32>,
    pub scheme: PrefixScheme,
}

/// A sentence ends at a terminator character that is immediately followed by
/// whitespace in the decoded text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentenceRule {
    pub terminators: String,
}

impl Default for SentenceRule {
    fn default() -> Self {
        Self {
            terminators: ".!?".into(),
        }
    }
}

pub fn find_wait_positions(r: &Rollout, w: &WaitSet) -> Vec<usize> {
    r.tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| w.contains(t))
        .map(|(i, _)| i)
        .collect()
}

pub fn truncate_before_first_wait(r: &Rollout, w: &WaitSet) -> Option<WaitPrefix> {
    let first = *find_wait_positions(r, w).first()?;
    (first > 0).then(|| WaitPrefix {
        source_id: r.id,
        wait_position: first,
        start: 0,
        tokens: r.tokens[..first].to_vec(),
        scheme: PrefixScheme::RolloutStart,
    })
}

/// Token index at which each sentence starts, given the decoded pieces of
/// every token. Always begins with 0.
fn sentence_starts(pieces: &[&str], rule: &SentenceRule) -> Vec<usize> {
    let mut starts = vec![0];
    for (i, piece) in pieces.iter().enumerate() {
        let mut chars = piece.chars().peekable();
        let mut ends_here = false;
        while let Some(c) = chars.next() {
            if rule.terminators.contains(c) {
                let next = chars
                    .peek()
                    .copied()
                    .or_else(|| pieces[i + 1..].iter().find_map(|p| p.chars().next()));
                ends_here = next.is_some_and(char::is_whitespace);
            }
        }
        if ends_here {
            let mut j = i + 1;
            while j < pieces.len() && !pieces[j].is_empty() && pieces[j].chars().all(char::is_whitespace) {
                j += 1;
            }
            starts.push(j);
        }
    }
    starts
}

pub fn extract_sentence_prefixes(r: &Rollout, w: &WaitSet, rule: &SentenceRule, tok: &ToyTokenizer) -> Result<Vec<WaitPrefix>> {
    let pieces: Vec<&str> = r
        .tokens
        .iter()
        .map(|&t| tok.token_text(t).ok_or_else(|| Error::InvalidInput(format!("token id {t} out of vocabulary"))))
        .collect::<Result<_>>()?;
    let starts = sentence_starts(&pieces, rule);
    Ok(find_wait_positions(r, w)
        .into_iter()
        .filter_map(|p| {
            let start = starts.iter().copied().filter(|&s| s <= p).max().unwrap_or(0);
            (start < p).then(|| WaitPrefix {
                source_id: r.id,
                wait_position: p,
                start,
                tokens: r.tokens[start..p].to_vec(),
                scheme: PrefixScheme::SentenceStart,
            })
        })
        .collect())
}

/// Applies a scheme to a corpus, keeping rollout order.
pub fn build_prefixes(
    rollouts: &[Rollout],
    w: &WaitSet,
    scheme: PrefixScheme,
    rule: &SentenceRule,
    tok: &ToyTokenizer,
) -> Result<Vec<WaitPrefix>> {
    let per: Vec<Vec<WaitPrefix>> = rollouts
        .par_iter()
        .map(|r| match scheme {
            PrefixScheme::RolloutStart => Ok(truncate_before_first_wait(r, w).into_iter().collect()),
            PrefixScheme::SentenceStart => extract_sentence_prefixes(r, w, rule, tok),
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Deserialize)]
struct RolloutRecord {
    #[serde(default)]
    id: Option<u64>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<u32>>,
}

/// Reads JSONL rollouts. Each line has `text`, `tokens`, or both (which must
/// agree); `id` defaults to the line index.
pub fn read_rollouts(path: &Path, tok: &ToyTokenizer) -> Result<Vec<Rollout>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RolloutRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let id = rec.id.unwrap_or(i as u64);
        let r = match (rec.text, rec.tokens) {
            (Some(text), None) => Rollout::from_text(id, &text, tok)?,
            (None, Some(tokens)) => Rollout::from_tokens(id, tokens, tok)?,
            (Some(text), Some(tokens)) => {
                let r = Rollout::from_tokens(id, tokens, tok)?;
                if r.text != text {
                    return Err(Error::Validation(format!(
                        "{}: line {}: tokens do not decode to text",
                        path.display(),
                        i + 1
                    )));
                }
                r
            }
            (None, None) => return Err(Error::format(path, format!("line {}: needs text or tokens", i + 1))),
        };
        out.push(r);
    }
    Ok(out)
}

pub fn write_rollouts(path: &Path, rollouts: &[Rollout]) -> Result<()> {
    write_jsonl(path, rollouts)
}

pub fn write_prefixes(path: &Path, prefixes: &[WaitPrefix]) -> Result<()> {
    write_jsonl(path, prefixes)
}

pub fn read_prefixes(path: &Path) -> Result<Vec<WaitPrefix>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
