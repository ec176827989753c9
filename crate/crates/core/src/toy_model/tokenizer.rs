//! Character-level tokenizer over a fixed 64-symbol alphabet, plus one
//! dedicated token per wait surface form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 64 single-character tokens, in id order.
pub const ALPHABET: &str =
    " \nabcdefghijklmnopqrstuvwxyz0123456789.,!?:;'\"()+-*/=<>ABCIOSTWN";

/// Wait surface forms, in id order after the alphabet.
pub const WAIT_FORMS: [&str; 4] = ["Wait", " Wait", " wait", "wait"];

pub const VOCAB_SIZE: usize = 68;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ToyTokenizer;

impl ToyTokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    /// Greedy left-to-right: a wait form wins over single characters, and the
    /// space-prefixed forms win over the bare ones.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(text.len());
        let mut rest = text;
        let mut offset = 0;
        'outer: while !rest.is_empty() {
            for (form, id) in [(" Wait", 65), (" wait", 66), ("Wait", 64), ("wait", 67)] {
                if rest.starts_with(form) {
                    ids.push(id);
                    rest = &rest[form.len()..];
                    offset += form.chars().count();
                    continue 'outer;
                }
            }
            let ch = rest.chars().next().unwrap();
            match ALPHABET.chars().position(|c| c == ch) {
                Some(id) => ids.push(id as u32),
                None => return Err(Error::Tokenize { ch, offset }),
            }
            rest = &rest[ch.len_utf8()..];
            offset += 1;
        }
        Ok(ids)
    }

    pub fn token_text(&self, id: u32) -> Option<&'static str> {
        let id = id as usize;
        if id < 64 {
            let start = ALPHABET.char_indices().nth(id)?.0;
            let len = ALPHABET[start..].chars().next()?.len_utf8();
            Some(&ALPHABET[start..start + len])
        } else {
            WAIT_FORMS.get(id - 64).copied()
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            match self.token_text(id) {
                Some(t) => out.push_str(t),
                None => return Err(Error::InvalidInput(format!("token id {id} out of vocabulary"))),
            }
        }
        Ok(out)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        (0..VOCAB_SIZE as u32).find(|&i| self.token_text(i) == Some(piece))
    }

    pub fn wait_set(&self) -> WaitSet {
        WaitSet::new(vec![64, 65, 66, 67]).expect("static wait set")
    }
}

/// Token ids counted by the wait metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitSet {
    ids: Vec<u32>,
}

impl WaitSet {
    pub fn new(mut ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("wait set must be nonempty".into()));
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(Self { ids })
    }

    /// Checks ids against a vocabulary size.
    pub fn validate(&self, vocab: usize) -> Result<()> {
        match self.ids.iter().find(|&&i| i as usize >= vocab) {
            Some(i) => Err(Error::InvalidInput(format!(
                "wait token {i} outside vocabulary of {vocab}"
            ))),
            None => Ok(()),
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}
