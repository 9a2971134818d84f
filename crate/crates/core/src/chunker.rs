//! Rule-based address chunking.
//!
//! [`Chunker`] segments a string greedily from left to right. At each offset
//! the longest gazetteer entry wins; failing that, the shortest span ending in
//! a registered suffix is taken (and widened when a longer suffix overlaps its
//! end, so `3号楼` is one house-number chunk rather than `3号` + `楼`).
//! Everything else is merged into maximal `ZZ` chunks. Offsets are in
//! characters, not bytes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::Error;
use crate::taxonomy::{Category, CategoryId, ChunkClass, ChunkTaxonomy};

/// Longest stem (characters before the suffix) a suffix rule may claim.
pub const MAX_SUFFIX_STEM: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub category: CategoryId,
    pub text: String,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A source string with an ordered, non-overlapping, fully covering chunk list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkedText {
    pub source: String,
    pub chunks: Vec<Chunk>,
}

impl ChunkedText {
    /// Builds from `(start, end, category)` spans, filling chunk text from `source`.
    pub fn from_spans(
        source: &str,
        spans: &[(usize, usize, CategoryId)],
        num_categories: usize,
    ) -> Result<Self, Error> {
        let chars: Vec<char> = source.chars().collect();
        let mut chunks = Vec::with_capacity(spans.len());
        for &(start, end, category) in spans {
            if !(start < end && end <= chars.len()) {
                return Err(Error::Validation(format!(
                    "chunk span [{start},{end}) out of range for text of {} characters",
                    chars.len()
                )));
            }
            chunks.push(Chunk {
                start,
                end,
                category,
                text: chars[start..end].iter().collect(),
            });
        }
        let chunked = ChunkedText {
            source: source.to_string(),
            chunks,
        };
        chunked.validate(num_categories)?;
        Ok(chunked)
    }

    pub fn char_len(&self) -> usize {
        self.source.chars().count()
    }

    /// Checks sortedness, full coverage and category range.
    pub fn validate(&self, num_categories: usize) -> Result<(), Error> {
        let chars: Vec<char> = self.source.chars().collect();
        let mut cursor = 0;
        for c in &self.chunks {
            if c.start != cursor {
                return Err(Error::Validation(format!(
                    "chunks must tile the text: expected a chunk starting at {cursor}, found {}",
                    c.start
                )));
            }
            if c.end <= c.start || c.end > chars.len() {
                return Err(Error::Validation(format!("invalid chunk span [{},{})", c.start, c.end)));
            }
            let text: String = chars[c.start..c.end].iter().collect();
            if text != c.text {
                return Err(Error::Validation(format!(
                    "chunk text `{}` does not match source span `{text}`",
                    c.text
                )));
            }
            if c.category.index() >= num_categories {
                return Err(Error::Validation(format!(
                    "chunk category {} outside taxonomy of {num_categories}",
                    c.category
                )));
            }
            cursor = c.end;
        }
        if cursor != chars.len() {
            return Err(Error::Validation(format!(
                "chunks cover {cursor} of {} characters",
                chars.len()
            )));
        }
        Ok(())
    }

    /// Category label for every character position.
    pub fn char_categories(&self) -> Vec<CategoryId> {
        let mut out = Vec::with_capacity(self.char_len());
        for c in &self.chunks {
            out.extend(core::iter::repeat_n(c.category, c.len()));
        }
        out
    }
}

/// Which segmentation feeds the component task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Gazetteer and suffix-rule address chunks.
    #[default]
    Geo,
    /// Fixed-width bigrams over a two-label taxonomy.
    Coarse,
}

impl core::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "geo" => Ok(Scheme::Geo),
            "coarse" => Ok(Scheme::Coarse),
            other => Err(Error::Validation(format!(
                "unknown chunk scheme `{other}` (expected geo or coarse)"
            ))),
        }
    }
}

impl core::fmt::Display for Scheme {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Scheme::Geo => "geo",
            Scheme::Coarse => "coarse",
        })
    }
}

/// Gazetteer/suffix chunker. Immutable after construction and `Sync`.
#[derive(Debug, Clone)]
pub struct Chunker {
    taxonomy: ChunkTaxonomy,
    /// Gazetteer entries keyed by first character, longest first.
    gazetteer: BTreeMap<char, Vec<(Vec<char>, CategoryId)>>,
    /// Suffixes longest first; rule order breaks length ties.
    suffixes: Vec<(Vec<char>, CategoryId)>,
    max_suffix_len: usize,
    unknown: CategoryId,
}

impl Chunker {
    /// Fails when the taxonomy has no `ZZ` category to absorb unmatched text.
    pub fn new(taxonomy: &ChunkTaxonomy) -> Result<Self, Error> {
        let unknown = taxonomy
            .unknown()
            .ok_or_else(|| Error::Validation("taxonomy needs a `ZZ` category for unmatched text".to_string()))?;
        let mut gazetteer: BTreeMap<char, Vec<(Vec<char>, CategoryId)>> = BTreeMap::new();
        for (id, entries) in taxonomy.gazetteers() {
            for e in entries {
                let chars: Vec<char> = e.chars().collect();
                if let Some(&first) = chars.first() {
                    gazetteer.entry(first).or_default().push((chars, *id));
                }
            }
        }
        for list in gazetteer.values_mut() {
            // Longest first; the lower category id wins when two gazetteers share an entry.
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        }
        let mut suffixes: Vec<(Vec<char>, CategoryId)> = taxonomy
            .suffix_rules()
            .iter()
            .map(|(s, id)| (s.chars().collect(), *id))
            .collect();
        suffixes.sort_by_key(|s| core::cmp::Reverse(s.0.len()));
        let max_suffix_len = suffixes.iter().map(|s| s.0.len()).max().unwrap_or(0);
        Ok(Chunker {
            taxonomy: taxonomy.clone(),
            gazetteer,
            suffixes,
            max_suffix_len,
            unknown,
        })
    }

    pub fn taxonomy(&self) -> &ChunkTaxonomy {
        &self.taxonomy
    }

    fn gazetteer_at(&self, chars: &[char], at: usize) -> Option<(usize, CategoryId)> {
        self.gazetteer
            .get(&chars[at])?
            .iter()
            .find(|(entry, _)| chars[at..].starts_with(entry))
            .map(|(entry, id)| (entry.len(), *id))
    }

    /// Longest suffix rule matching `chars[..end]` whose match starts after `min_start`.
    fn suffix_ending_at(&self, chars: &[char], end: usize, min_start: usize) -> Option<(usize, CategoryId)> {
        self.suffixes
            .iter()
            .find(|(s, _)| s.len() <= end && end - s.len() > min_start && chars[..end].ends_with(s))
            .map(|(s, id)| (end - s.len(), *id))
    }

    fn suffix_span(
        &self,
        chars: &[char],
        start: usize,
        gaz: &[Option<(usize, CategoryId)>],
    ) -> Option<(usize, CategoryId)> {
        if self.suffixes.is_empty() {
            return None;
        }
        let limit = chars.len().min(start + MAX_SUFFIX_STEM + self.max_suffix_len);
        for end in start + 2..=limit {
            let Some((suffix_start, category)) = self.suffix_ending_at(chars, end, start) else {
                continue;
            };
            // A gazetteer entry inside the stem means this span is not one chunk.
            if (start + 1..suffix_start).any(|k| gaz[k].is_some()) {
                return None;
            }
            let mut best = (end, category);
            let ext_limit = chars.len().min(end + self.max_suffix_len);
            for ext in end + 1..=ext_limit {
                if let Some((s2, cat2)) = self.suffix_ending_at(chars, ext, start) {
                    if s2 < end {
                        best = (ext, cat2);
                    }
                }
            }
            return Some(best);
        }
        None
    }

    pub fn chunk(&self, text: &str) -> ChunkedText {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let gaz: Vec<Option<(usize, CategoryId)>> = (0..n).map(|i| self.gazetteer_at(&chars, i)).collect();
        let mut chunks = Vec::new();
        let mut unknown_from: Option<usize> = None;
        let push = |chunks: &mut Vec<Chunk>, start: usize, end: usize, category: CategoryId| {
            chunks.push(Chunk {
                start,
                end,
                category,
                text: chars[start..end].iter().collect(),
            });
        };
        let mut i = 0;
        while i < n {
            let hit = gaz[i].or_else(|| self.suffix_span(&chars, i, &gaz).map(|(end, cat)| (end - i, cat)));
            match hit {
                Some((len, category)) => {
                    if let Some(s) = unknown_from.take() {
                        push(&mut chunks, s, i, self.unknown);
                    }
                    push(&mut chunks, i, i + len, category);
                    i += len;
                }
                None => {
                    unknown_from.get_or_insert(i);
                    i += 1;
                }
            }
        }
        if let Some(s) = unknown_from {
            push(&mut chunks, s, n, self.unknown);
        }
        ChunkedText {
            source: text.to_string(),
            chunks,
        }
    }
}

/// Chunks `text` with a one-off [`Chunker`] over `taxonomy`.
pub fn chunk(text: &str, taxonomy: &ChunkTaxonomy) -> Result<ChunkedText, Error> {
    Ok(Chunker::new(taxonomy)?.chunk(text))
}

pub const COARSE_TEXT: CategoryId = CategoryId(0);
pub const COARSE_NUMERIC: CategoryId = CategoryId(1);

/// Two-label taxonomy used by [`coarse_chunk`].
pub fn coarse_taxonomy() -> ChunkTaxonomy {
    ChunkTaxonomy::new(
        alloc::vec![
            Category {
                id: COARSE_TEXT,
                name: "text".to_string(),
                class: ChunkClass::General,
            },
            Category {
                id: COARSE_NUMERIC,
                name: "numeric".to_string(),
                class: ChunkClass::Specific,
            },
        ],
        BTreeMap::new(),
        Vec::new(),
        BTreeMap::new(),
    )
    .expect("coarse taxonomy is valid")
}

/// Fixed-width bigram segmentation; a bigram holding a digit is `numeric`.
pub fn coarse_chunk(text: &str) -> ChunkedText {
    let chars: Vec<char> = text.chars().collect();
    let chunks = chars
        .chunks(2)
        .enumerate()
        .map(|(k, pair)| Chunk {
            start: 2 * k,
            end: 2 * k + pair.len(),
            category: if pair.iter().any(|c| c.is_numeric()) {
                COARSE_NUMERIC
            } else {
                COARSE_TEXT
            },
            text: pair.iter().collect(),
        })
        .collect();
    ChunkedText {
        source: text.to_string(),
        chunks,
    }
}
