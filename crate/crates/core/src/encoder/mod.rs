//! Character-level tokenizer and transformer encoder.
//!
//! Text is split into characters and prefixed with `[CLS]`, so a chunk span
//! `[start, end)` in the source string maps to token rows `start..end` of
//! [`EncodedText::tokens`]; the `[CLS]` shift is absorbed by the encoder.

mod components;
mod model;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use components::{components_backward, extract_components, ComponentMatrix};
pub use model::{Encoder, ForwardCache, Layout, ParamBlock};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const RESERVED: u32 = 3;

/// Character vocabulary; ids 0..3 are `[PAD]`, `[CLS]`, `[UNK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Vocab {
    chars: Vec<char>,
    index: BTreeMap<char, u32>,
}

impl Vocab {
    /// Builds a vocabulary over the distinct characters of `texts`, in code point order.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        let mut set = alloc::collections::BTreeSet::new();
        for t in texts {
            set.extend(t.chars());
        }
        Self::from_chars(set.into_iter().collect())
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + RESERVED))
            .collect();
        Vocab { chars, index }
    }

    /// Total id count including the reserved tokens.
    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED as usize
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(UNK_ID)
    }
}

impl From<String> for Vocab {
    fn from(s: String) -> Self {
        Vocab::from_chars(s.chars().collect())
    }
}

impl From<Vocab> for String {
    fn from(v: Vocab) -> String {
        v.chars.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_out: usize,
    pub max_len: usize,
    /// Hidden width of the feed-forward sublayer.
    pub d_ff: usize,
    pub vocab: Vocab,
}

impl EncoderConfig {
    pub fn new(vocab: Vocab) -> Self {
        EncoderConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_out: 64,
            max_len: 64,
            d_ff: 512,
            vocab,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config { line: 0, message: m });
        if self.d_model == 0 || self.n_heads == 0 || self.d_out == 0 || self.d_ff == 0 {
            return bad("encoder widths must be positive".to_string());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_out > self.d_model {
            return bad(format!("d_out {} exceeds d_model {}", self.d_out, self.d_model));
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} must be at least 2", self.max_len));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    /// Set when the text exceeded `max_len - 1` characters and was cut.
    pub truncated: bool,
}

pub fn tokenize(text: &str, config: &EncoderConfig) -> Tokenized {
    let limit = config.max_len - 1;
    let mut ids = Vec::with_capacity(limit.min(text.len()) + 1);
    ids.push(CLS_ID);
    let mut truncated = false;
    for (i, c) in text.chars().enumerate() {
        if i == limit {
            truncated = true;
            break;
        }
        ids.push(config.vocab.id(c));
    }
    Tokenized { ids, truncated }
}

/// Encoder output for one text: the `[CLS]` vector and one row per character.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub source: String,
    pub cls: Vec<f64>,
    /// `n_tokens × d_out`, row-major.
    pub tokens: Vec<f64>,
    pub n_tokens: usize,
    pub d_out: usize,
    pub truncated: bool,
}

impl EncodedText {
    pub fn token(&self, row: usize) -> &[f64] {
        &self.tokens[row * self.d_out..(row + 1) * self.d_out]
    }

    /// Token row holding the character at `offset`, if it survived truncation.
    pub fn token_row(&self, offset: usize) -> Option<usize> {
        (offset < self.n_tokens).then_some(offset)
    }
}
