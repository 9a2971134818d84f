//! Corpus and model analyses: per-category entropy, attention summaries and
//! rank correlation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::RankingInstance;
use crate::error::Error;
use crate::objective::{AttentionWeights, FusionMode};
use crate::taxonomy::{CategoryId, ChunkClass, ChunkTaxonomy};

/// Shannon entropy (bits) of the chunk surface strings of each category,
/// counted over queries and candidates. Unobserved categories are omitted.
pub fn entropy_by_category(instances: &[RankingInstance]) -> Result<BTreeMap<CategoryId, f64>, Error> {
    if instances.is_empty() {
        return Err(Error::Domain("entropy of an empty corpus".into()));
    }
    let mut counts: BTreeMap<CategoryId, BTreeMap<&str, u64>> = BTreeMap::new();
    for inst in instances {
        for text in core::iter::once(&inst.query).chain(&inst.candidates) {
            for ch in &text.chunks {
                *counts
                    .entry(ch.category)
                    .or_default()
                    .entry(ch.text.as_str())
                    .or_default() += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(cat, values)| {
            let total: u64 = values.values().sum();
            let h = values
                .values()
                .map(|&c| {
                    let p = c as f64 / total as f64;
                    -p * libm::log2(p)
                })
                .sum::<f64>();
            (cat, h + 0.0)
        })
        .collect())
}

/// Mean of `values` over the categories of one class; `None` if none present.
pub fn class_mean(values: &BTreeMap<CategoryId, f64>, taxonomy: &ChunkTaxonomy, class: ChunkClass) -> Option<f64> {
    let picked: Vec<f64> = values
        .iter()
        .filter(|(id, _)| taxonomy.class(**id) == class)
        .map(|(_, v)| *v)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Ranks starting at 1, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, Error> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::Validation(format!("need at least 3 pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in correlation input".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Domain("correlation undefined for a constant vector".into()));
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub name: String,
    pub class: ChunkClass,
    pub weight: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub weights: Vec<CategoryWeight>,
    pub general_mean: Option<f64>,
    pub specific_mean: Option<f64>,
    /// Strictly higher specific mean.
    pub specific_higher: bool,
}

/// Per-category weights with class means over the `observed` categories.
pub fn attention_report(
    weights: &AttentionWeights,
    fusion: FusionMode,
    taxonomy: &ChunkTaxonomy,
    observed: &[bool],
) -> Result<AttentionReport, Error> {
    if !fusion.uses_components() {
        return Err(Error::Validation(format!(
            "fusion `{fusion}` trains no attention weights; nothing to report"
        )));
    }
    if weights.len() != taxonomy.len() || observed.len() != taxonomy.len() {
        return Err(Error::Contract(format!(
            "{} weights and {} observed flags for {} categories",
            weights.len(),
            observed.len(),
            taxonomy.len()
        )));
    }
    let rows: Vec<CategoryWeight> = taxonomy
        .categories()
        .iter()
        .map(|c| CategoryWeight {
            name: c.name.clone(),
            class: c.class,
            weight: weights.w[c.id.index()],
            observed: observed[c.id.index()],
        })
        .collect();
    let mean = |class| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.observed && r.class == class)
            .map(|r| r.weight)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let general_mean = mean(ChunkClass::General);
    let specific_mean = mean(ChunkClass::Specific);
    let specific_higher = matches!((general_mean, specific_mean), (Some(g), Some(s)) if s > g);
    Ok(AttentionReport {
        weights: rows,
        general_mean,
        specific_mean,
        specific_higher,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkedText;
    use alloc::vec;

    fn inst(query: &[(&str, u16)], cands: &[&[(&str, u16)]]) -> RankingInstance {
        let text = |parts: &[(&str, u16)]| {
            let s: String = parts.iter().map(|p| p.0).collect();
            let mut spans = Vec::new();
            let mut at = 0;
            for (t, c) in parts {
                let n = t.chars().count();
                spans.push((at, at + n, CategoryId(*c)));
                at += n;
            }
            ChunkedText::from_spans(&s, &spans, 30).unwrap()
        };
        RankingInstance {
            query: text(query),
            candidates: cands.iter().map(|c| text(c)).collect(),
            gold_index: 0,
            relevance: None,
        }
    }

    #[test]
    fn entropy_examples() {
        let corpus = [inst(
            &[("浙江省", 1), ("采荷路", 15)],
            &[&[("浙江省", 1), ("解放路", 15)]],
        )];
        let h = entropy_by_category(&corpus).unwrap();
        assert_eq!(h[&CategoryId(1)], 0.0);
        assert_eq!(h[&CategoryId(15)], 1.0);
        assert!(!h.contains_key(&CategoryId(2)));
        assert!(entropy_by_category(&[]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        assert_eq!(spearman(&a, &[5.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&a, &[1.0, 3.0, 2.0, 5.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(spearman(&a, &[2.0; 4]), Err(Error::Domain(_))));
        assert!(spearman(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn ties_share_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn frozen_weights_report_no_ordering() {
        let tax = ChunkTaxonomy::builtin();
        let w = AttentionWeights::new(tax.len(), 1.0, 10.0, true).unwrap();
        let r = attention_report(&w, FusionMode::Fixed(1.0), &tax, &vec![true; tax.len()]).unwrap();
        assert!(r.weights.iter().all(|c| c.weight == 1.0));
        assert!(!r.specific_higher);
        assert!(attention_report(&w, FusionMode::None, &tax, &vec![true; tax.len()]).is_err());
    }

    #[test]
    fn class_means_skip_unobserved_categories() {
        let tax = ChunkTaxonomy::builtin();
        let mut w = AttentionWeights::new(tax.len(), 1.0, 10.0, false).unwrap();
        let mut observed = vec![false; tax.len()];
        let road = tax.resolve("road").unwrap().index();
        let city = tax.resolve("city").unwrap().index();
        observed[road] = true;
        observed[city] = true;
        w.w[road] = 2.0;
        w.w[city] = 1.5;
        let r = attention_report(&w, FusionMode::Multitask, &tax, &observed).unwrap();
        assert_eq!((r.general_mean, r.specific_mean), (Some(1.5), Some(2.0)));
        assert!(r.specific_higher);
    }
}
