//! Ranking instances, corpus statistics and the synthetic address generator.
//!
//! The generator draws addresses from a fixed template of general
//! (administrative) and specific (street-level) chunks. Vocabularies grow from
//! general to specific categories, so specific chunks carry more entropy, and
//! hard negatives share the query's general prefix while differing in a
//! specific chunk.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::ChunkedText;
use crate::error::Error;
use crate::taxonomy::{CategoryId, ChunkClass, ChunkTaxonomy};

/// One query with its candidate list and the index of the gold candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingInstance {
    pub query: ChunkedText,
    pub candidates: Vec<ChunkedText>,
    pub gold_index: usize,
    /// Optional graded relevance per candidate; binary (gold = 1) when absent.
    pub relevance: Option<Vec<u32>>,
}

impl RankingInstance {
    pub fn validate(&self, num_categories: usize) -> Result<(), Error> {
        if self.candidates.len() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 candidates, found {}",
                self.candidates.len()
            )));
        }
        if self.gold_index >= self.candidates.len() {
            return Err(Error::Validation(format!(
                "gold_index {} out of range for {} candidates",
                self.gold_index,
                self.candidates.len()
            )));
        }
        if let Some(rel) = &self.relevance {
            if rel.len() != self.candidates.len() {
                return Err(Error::Validation(format!(
                    "{} relevance grades for {} candidates",
                    rel.len(),
                    self.candidates.len()
                )));
            }
            let max = rel.iter().copied().max().unwrap_or(0);
            if max == 0 || rel[self.gold_index] != max {
                return Err(Error::Validation(
                    "gold candidate must carry the maximum, positive relevance grade".to_string(),
                ));
            }
        }
        self.query.validate(num_categories)?;
        for c in &self.candidates {
            c.validate(num_categories)?;
        }
        Ok(())
    }

    /// Relevance grades, defaulting to binary labels with the gold at 1.
    pub fn grades(&self) -> Vec<u32> {
        match &self.relevance {
            Some(r) => r.clone(),
            None => (0..self.candidates.len())
                .map(|i| u32::from(i == self.gold_index))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_queries: usize,
    /// Distinct characters over queries and candidates.
    pub n_tokens: usize,
    /// Mean query length in characters.
    pub asl: f64,
    /// Candidates per query.
    pub cands: usize,
}

pub fn stats(instances: &[RankingInstance]) -> Result<CorpusStats, Error> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Domain("statistics of an empty corpus".to_string()))?;
    let cands = first.candidates.len();
    let mut chars = BTreeSet::new();
    let mut total_len = 0usize;
    for inst in instances {
        if inst.candidates.len() != cands {
            return Err(Error::Domain(format!(
                "candidate count varies across the split ({cands} vs {})",
                inst.candidates.len()
            )));
        }
        total_len += inst.query.source.chars().count();
        chars.extend(inst.query.source.chars());
        for c in &inst.candidates {
            chars.extend(c.source.chars());
        }
    }
    Ok(CorpusStats {
        n_queries: instances.len(),
        n_tokens: chars.len(),
        asl: total_len as f64 / instances.len() as f64,
        cands,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRates {
    /// Per specific chunk, probability a negative replaces its value.
    pub swap_specific: f64,
    /// Per general chunk, probability a negative replaces its value.
    pub swap_general: f64,
    /// Per general chunk, probability any candidate omits it.
    pub drop_chunk: f64,
}

impl Default for PerturbationRates {
    fn default() -> Self {
        PerturbationRates {
            swap_specific: 0.35,
            swap_general: 0.3,
            drop_chunk: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_queries: usize,
    pub n_candidates: usize,
    /// Distinct surface values per category name.
    pub vocab_sizes: BTreeMap<String, usize>,
    pub perturbation_rates: PerturbationRates,
    /// Emit graded relevance (gold 2, general-only variants 1, others 0).
    #[serde(default)]
    pub graded: bool,
}

/// Address template: category name and inclusion probability, in reading order.
const TEMPLATE: &[(&str, f64)] = &[
    ("country", 0.15),
    ("prov", 1.0),
    ("city", 1.0),
    ("district", 0.9),
    ("town", 0.4),
    ("road", 1.0),
    ("roadno", 0.9),
    ("poi", 0.8),
    ("subpoi", 0.3),
    ("houseno", 0.4),
    ("cellno", 0.5),
];

const NUMERIC_CATEGORIES: &[&str] = &["roadno", "houseno", "cellno", "floorno", "roomno", "busline"];

const STEM_CHARS: &str = "安白宝滨长辰春翠丹德鼎东方丰凤福富港高光广桂海汉禾和鸿华环徽吉佳嘉建江金锦景静九康兰蓝乐丽利莲良林临龙隆茂梅美民明宁平浦埔齐千庆秋泉仁荣瑞润森山尚胜盛石顺松泰滕天田同万旺维文武西熙祥翔欣新兴秀旭雅阳耀怡义银英永友余玉元源跃云泽振正中舟竹紫";

impl GeneratorConfig {
    pub fn default_vocab_sizes() -> BTreeMap<String, usize> {
        [
            ("country", 1),
            ("prov", 6),
            ("city", 12),
            ("district", 24),
            ("town", 32),
            ("road", 300),
            ("roadno", 120),
            ("poi", 400),
            ("subpoi", 48),
            ("houseno", 40),
            ("cellno", 40),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn new(seed: u64, n_queries: usize, n_candidates: usize) -> Self {
        GeneratorConfig {
            seed,
            n_queries,
            n_candidates,
            vocab_sizes: Self::default_vocab_sizes(),
            perturbation_rates: PerturbationRates::default(),
            graded: false,
        }
    }

    pub fn validate(&self, taxonomy: &ChunkTaxonomy) -> Result<(), Error> {
        let r = &self.perturbation_rates;
        for (name, p) in [
            ("swap_specific", r.swap_specific),
            ("swap_general", r.swap_general),
            ("drop_chunk", r.drop_chunk),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_candidates < 2 {
            return Err(Error::Validation("n_candidates must be at least 2".to_string()));
        }
        let mut max_general = 0;
        let mut min_specific = usize::MAX;
        for (name, &size) in &self.vocab_sizes {
            if size == 0 {
                return Err(Error::Validation(format!("vocab size for `{name}` must be positive")));
            }
            let id = taxonomy
                .resolve(name)
                .ok_or_else(|| Error::Validation(format!("unknown category `{name}`")))?;
            match taxonomy.class(id) {
                ChunkClass::General => max_general = max_general.max(size),
                ChunkClass::Specific => min_specific = min_specific.min(size),
            }
        }
        if min_specific != usize::MAX && min_specific < max_general {
            return Err(Error::Validation(format!(
                "vocab sizes must grow from general to specific (smallest specific {min_specific} < largest general {max_general})"
            )));
        }
        for (name, _) in TEMPLATE {
            if !self.vocab_sizes.contains_key(*name) {
                return Err(Error::Validation(format!("missing vocab size for `{name}`")));
            }
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::new(42, 1000, 20)
    }
}

struct Slot {
    category: CategoryId,
    class: ChunkClass,
    values: Vec<String>,
    include: f64,
}

fn stem_pool(taxonomy: &ChunkTaxonomy) -> Vec<char> {
    let mut banned = BTreeSet::new();
    for entries in taxonomy.gazetteers().values() {
        for e in entries {
            banned.extend(e.chars().next());
        }
    }
    for (s, _) in taxonomy.suffix_rules() {
        banned.extend(s.chars());
    }
    STEM_CHARS.chars().filter(|c| !banned.contains(c)).collect()
}

fn build_values(
    name: &str,
    id: CategoryId,
    size: usize,
    taxonomy: &ChunkTaxonomy,
    pool: &[char],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, Error> {
    let suffix = taxonomy
        .suffix_rules()
        .iter()
        .find(|(_, c)| *c == id)
        .map(|(s, _)| s.clone())
        .unwrap_or_default();
    if NUMERIC_CATEGORIES.contains(&name) {
        return Ok((1..=size).map(|n| format!("{n}{suffix}")).collect());
    }
    let mut values: Vec<String> = taxonomy
        .gazetteers()
        .get(&id)
        .map(|g| g.iter().cloned().collect())
        .unwrap_or_default();
    values.shuffle(rng);
    values.truncate(size);
    if values.len() < size && suffix.is_empty() {
        return Err(Error::Generation(format!(
            "category `{name}` has {} gazetteer entries and no suffix rule to synthesize {size} values",
            values.len()
        )));
    }
    let mut seen: BTreeSet<String> = values.iter().cloned().collect();
    let mut attempts = 0;
    while values.len() < size {
        attempts += 1;
        if attempts > 100 * size + 1000 {
            return Err(Error::Generation(format!(
                "cannot synthesize {size} distinct values for `{name}`"
            )));
        }
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let mut v = String::new();
        v.push(a);
        v.push(b);
        v.push_str(&suffix);
        if seen.insert(v.clone()) {
            values.push(v);
        }
    }
    Ok(values)
}

type Address = Vec<(usize, usize)>; // (slot, value index)

fn render(address: &Address, slots: &[Slot], num_categories: usize) -> ChunkedText {
    let mut source = String::new();
    let mut spans = Vec::with_capacity(address.len());
    let mut pos = 0;
    for &(slot, value) in address {
        let text = &slots[slot].values[value];
        let len = text.chars().count();
        source.push_str(text);
        spans.push((pos, pos + len, slots[slot].category));
        pos += len;
    }
    ChunkedText::from_spans(&source, &spans, num_categories).expect("generated spans tile the text")
}

fn other_value(current: usize, n: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
    if n < 2 {
        return None;
    }
    let v = rng.random_range(0..n - 1);
    Some(if v >= current { v + 1 } else { v })
}

/// Generates `n_queries` instances with one gold and `n_candidates - 1` negatives each.
pub fn generate_corpus(config: &GeneratorConfig, taxonomy: &ChunkTaxonomy) -> Result<Vec<RankingInstance>, Error> {
    config.validate(taxonomy)?;
    let m = taxonomy.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool = stem_pool(taxonomy);
    let mut slots = Vec::new();
    for (name, include) in TEMPLATE {
        let id = taxonomy
            .resolve(name)
            .ok_or_else(|| Error::Generation(format!("taxonomy lacks category `{name}`")))?;
        let size = config.vocab_sizes[*name];
        slots.push(Slot {
            category: id,
            class: taxonomy.class(id),
            values: build_values(name, id, size, taxonomy, &pool, &mut rng)?,
            include: *include,
        });
    }
    let cellno = TEMPLATE.iter().position(|(n, _)| *n == "cellno");
    let houseno = TEMPLATE.iter().position(|(n, _)| *n == "houseno");
    let rates = config.perturbation_rates;

    let mut instances = Vec::with_capacity(config.n_queries);
    for _ in 0..config.n_queries {
        let mut query: Address = Vec::new();
        for (k, slot) in slots.iter().enumerate() {
            if Some(k) == cellno && !query.iter().any(|(s, _)| Some(*s) == houseno) {
                continue;
            }
            if rng.random_bool(slot.include) {
                query.push((k, rng.random_range(0..slot.values.len())));
            }
        }

        let drop_generals = |addr: &Address, rng: &mut ChaCha8Rng| -> Address {
            addr.iter()
                .copied()
                .filter(|(s, _)| slots[*s].class == ChunkClass::Specific || !rng.random_bool(rates.drop_chunk))
                .collect()
        };

        let gold = drop_generals(&query, &mut rng);
        let mut seen: BTreeSet<String> = BTreeSet::new();
        seen.insert(render(&query, &slots, m).source);
        seen.insert(render(&gold, &slots, m).source);
        let mut candidates: Vec<(Address, u32)> = vec![(gold, 2)];
        let specific_positions: Vec<usize> = query
            .iter()
            .enumerate()
            .filter(|(_, (s, _))| slots[*s].class == ChunkClass::Specific)
            .map(|(i, _)| i)
            .collect();

        let mut attempts = 0;
        while candidates.len() < config.n_candidates {
            attempts += 1;
            if attempts > 200 * config.n_candidates {
                return Err(Error::Generation(format!(
                    "vocabulary too small to produce {} distinct candidates",
                    config.n_candidates
                )));
            }
            let mut neg = query.clone();
            let mut specific_changed = false;
            let mut changed = false;
            for entry in neg.iter_mut() {
                let slot = &slots[entry.0];
                let p = match slot.class {
                    ChunkClass::Specific => rates.swap_specific,
                    ChunkClass::General => rates.swap_general,
                };
                if rng.random_bool(p) {
                    if let Some(v) = other_value(entry.1, slot.values.len(), &mut rng) {
                        entry.1 = v;
                        changed = true;
                        specific_changed |= slot.class == ChunkClass::Specific;
                    }
                }
            }
            if !changed {
                let Some(&at) = specific_positions.get(rng.random_range(0..specific_positions.len().max(1))) else {
                    continue;
                };
                let slot = &slots[neg[at].0];
                match other_value(neg[at].1, slot.values.len(), &mut rng) {
                    Some(v) => {
                        neg[at].1 = v;
                        specific_changed = true;
                    }
                    None => continue,
                }
            }
            let neg = drop_generals(&neg, &mut rng);
            let text = render(&neg, &slots, m).source;
            if seen.insert(text) {
                candidates.push((neg, if specific_changed { 0 } else { 1 }));
            }
        }

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let gold_index = order.iter().position(|&i| i == 0).expect("gold present");
        let relevance = config.graded.then(|| order.iter().map(|&i| candidates[i].1).collect());
        instances.push(RankingInstance {
            query: render(&query, &slots, m),
            candidates: order.iter().map(|&i| render(&candidates[i].0, &slots, m)).collect(),
            gold_index,
            relevance,
        });
    }
    Ok(instances)
}
