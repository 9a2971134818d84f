//! Ranking metrics over scored candidate lists.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Candidate indices by descending score; ties keep their original order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// 1-based position of `gold` in `ranking`.
pub fn gold_position(ranking: &[usize], gold: usize) -> Result<usize, Error> {
    ranking
        .iter()
        .position(|&i| i == gold)
        .map(|p| p + 1)
        .ok_or_else(|| Error::Contract(format!("gold index {gold} not in ranking")))
}

fn check_position(p: usize) -> Result<(), Error> {
    if p == 0 {
        return Err(Error::Contract("rank positions are 1-based".into()));
    }
    Ok(())
}

pub fn hit_at_k(p: usize, k: usize) -> Result<f64, Error> {
    check_position(p)?;
    if k == 0 {
        return Err(Error::Contract("k must be at least 1".into()));
    }
    Ok(if p <= k { 1.0 } else { 0.0 })
}

pub fn mrr_at_3(p: usize) -> Result<f64, Error> {
    check_position(p)?;
    Ok(if p <= 3 { 1.0 / p as f64 } else { 0.0 })
}

/// `(2^rel(top) − 1) / (2^max(rel) − 1)` for grades listed in ranked order.
pub fn ndcg_at_1(ranked_grades: &[u32]) -> Result<f64, Error> {
    let top = *ranked_grades
        .first()
        .ok_or_else(|| Error::Domain("ndcg@1 of an empty ranking".into()))?;
    let best = ranked_grades.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return Err(Error::Domain("ndcg@1 undefined when every grade is zero".into()));
    }
    let gain = |g: u32| libm::exp2(g as f64) - 1.0;
    Ok(gain(top) / gain(best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub gold_position: usize,
    pub hit1: f64,
    pub hit3: f64,
    pub mrr3: f64,
    /// `None` when every grade is zero.
    pub ndcg1: Option<f64>,
}

/// Scores one query. `grades` are per candidate in original order.
pub fn query_metrics(scores: &[f64], gold: usize, grades: &[u32]) -> Result<QueryMetrics, Error> {
    if scores.len() != grades.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} grades",
            scores.len(),
            grades.len()
        )));
    }
    let ranking = rank_descending(scores);
    let p = gold_position(&ranking, gold)?;
    let ranked: Vec<u32> = ranking.iter().map(|&i| grades[i]).collect();
    Ok(QueryMetrics {
        gold_position: p,
        hit1: hit_at_k(p, 1)?,
        hit3: hit_at_k(p, 3)?,
        mrr3: mrr_at_3(p)?,
        ndcg1: ndcg_at_1(&ranked).ok(),
    })
}

/// Means over queries, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hit1: f64,
    pub hit3: f64,
    pub ndcg1: f64,
    pub mrr3: f64,
    pub n_queries: usize,
    /// Queries whose ndcg@1 was undefined and left out of its mean.
    pub ndcg_undefined: usize,
}

pub fn summarize(per_query: &[QueryMetrics]) -> Result<MetricSummary, Error> {
    if per_query.is_empty() {
        return Err(Error::Domain("no queries to summarize".into()));
    }
    let n = per_query.len() as f64;
    let (mut h1, mut h3, mut mrr, mut nd) = (0.0, 0.0, 0.0, 0.0);
    let mut defined = 0usize;
    for q in per_query {
        h1 += q.hit1;
        h3 += q.hit3;
        mrr += q.mrr3;
        if let Some(v) = q.ndcg1 {
            nd += v;
            defined += 1;
        }
    }
    Ok(MetricSummary {
        hit1: h1 / n,
        hit3: h3 / n,
        ndcg1: if defined > 0 { nd / defined as f64 } else { 0.0 },
        mrr3: mrr / n,
        n_queries: per_query.len(),
        ndcg_undefined: per_query.len() - defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hit_and_mrr_examples() {
        assert_eq!(hit_at_k(1, 1).unwrap(), 1.0);
        assert_eq!(hit_at_k(4, 3).unwrap(), 0.0);
        assert_eq!(mrr_at_3(2).unwrap(), 0.5);
        assert_eq!(mrr_at_3(4).unwrap(), 0.0);
        assert!(hit_at_k(0, 1).is_err());
        assert!(hit_at_k(1, 0).is_err());
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_1(&[3, 1, 0]).unwrap(), 1.0);
        assert!((ndcg_at_1(&[1, 3, 0]).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert!(matches!(ndcg_at_1(&[0, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn ties_keep_original_order() {
        assert_eq!(rank_descending(&[1.0, 2.0, 1.0, 2.0]), [1, 3, 0, 2]);
        assert_eq!(rank_descending(&[0.5]), [0]);
    }

    #[test]
    fn summary_over_two_queries() {
        let a = query_metrics(&[0.1, 0.9, 0.3], 1, &[0, 1, 0]).unwrap();
        let b = query_metrics(&[0.8, 0.1, 0.5], 2, &[0, 0, 1]).unwrap();
        let s = summarize(&[a, b]).unwrap();
        assert_eq!((s.hit1, s.hit3, s.mrr3, s.ndcg1), (0.5, 1.0, 0.75, 0.5));
    }

    proptest! {
        #[test]
        fn binary_ndcg_equals_hit1(scores in proptest::collection::vec(-3i32..3, 2..40), gold_seed in 0usize..1000) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let gold = gold_seed % scores.len();
            let grades: Vec<u32> = (0..scores.len()).map(|i| u32::from(i == gold)).collect();
            let q = query_metrics(&scores, gold, &grades).unwrap();
            prop_assert_eq!(q.ndcg1, Some(q.hit1));
            prop_assert!(q.hit1 <= q.mrr3 && q.mrr3 <= q.hit3);
        }
    }
}
