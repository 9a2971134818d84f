//! Training, evaluation, sweeps and analyses over files.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use georank_core::analysis::{attention_report, class_mean, entropy_by_category, spearman, AttentionReport};
use georank_core::corpus::RankingInstance;
use georank_core::metrics::MetricSummary;
use georank_core::train::{evaluate_summary, split_vocab, train_with_progress, EpochRecord};
use georank_core::{ChunkClass, ChunkTaxonomy, TrainReport};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_string;

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub seconds: f64,
}

pub fn run_training(
    train_set: &[RankingInstance],
    dev_set: &[RankingInstance],
    config: &RunConfig,
    taxonomy: &ChunkTaxonomy,
    progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let enc = config.shape.encoder_config(split_vocab(train_set));
    let (model, report) = train_with_progress(train_set, dev_set, &config.train, &enc, taxonomy, progress)?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, taxonomy),
        report,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn curves_csv(report: &TrainReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss", "loss_cls", "loss_u", "dev_hit1"])
        .expect("in-memory write");
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss.total.to_string(),
            e.loss.cls.to_string(),
            e.loss.component.to_string(),
            e.dev_hit1.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Writes `model.json`, `train_report.json` and `curves.csv` into `dir`.
pub fn save_training(dir: &Path, outcome: &TrainOutcome) -> Result<Vec<std::path::PathBuf>> {
    let model = outcome.checkpoint.save(dir)?;
    let report = dir.join("train_report.json");
    write_string(
        &report,
        &(serde_json::to_string_pretty(&outcome.report).expect("serializes") + "\n"),
    )?;
    let curves = dir.join("curves.csv");
    write_string(&curves, &curves_csv(&outcome.report))?;
    Ok(vec![model, report, curves])
}

/// Test-split metrics of the cls-only ranking, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hit1: f64,
    pub hit3: f64,
    pub ndcg1: f64,
    pub mrr3: f64,
    pub n_queries: usize,
    pub ndcg_undefined: usize,
}

impl From<MetricSummary> for EvalReport {
    fn from(s: MetricSummary) -> Self {
        EvalReport {
            hit1: s.hit1,
            hit3: s.hit3,
            ndcg1: s.ndcg1,
            mrr3: s.mrr3,
            n_queries: s.n_queries,
            ndcg_undefined: s.ndcg_undefined,
        }
    }
}

/// Report plus mean wall time per query in milliseconds.
pub fn evaluate(checkpoint: &Checkpoint, test: &[RankingInstance]) -> Result<(EvalReport, f64)> {
    let encoder = checkpoint.model.encoder()?;
    let start = Instant::now();
    let summary = evaluate_summary(&encoder, test)?;
    let ms = start.elapsed().as_secs_f64() * 1e3 / test.len() as f64;
    Ok((summary.into(), ms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub best_dev_hit1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

/// Distinct gammas in first-seen order, plus the duplicates that were dropped.
pub fn dedup_gammas(gammas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut seen = BTreeSet::new();
    let (mut keep, mut dropped) = (Vec::new(), Vec::new());
    for &g in gammas {
        if seen.insert(g.to_bits()) {
            keep.push(g);
        } else {
            dropped.push(g);
        }
    }
    (keep, dropped)
}

/// One training run per gamma with shared seeds; a failing arm records its
/// error and the others still run.
pub fn sweep_gamma(
    train_set: &[RankingInstance],
    dev_set: &[RankingInstance],
    gammas: &[f64],
    base: &RunConfig,
    taxonomy: &ChunkTaxonomy,
    mut warn: impl FnMut(&str),
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::Usage("no gamma values given".into()));
    }
    let (gammas, dropped) = dedup_gammas(gammas);
    for g in dropped {
        warn(&format!("duplicate gamma {g} ignored"));
    }
    Ok(gammas
        .into_iter()
        .map(|gamma| {
            let mut cfg = base.clone();
            cfg.train.gamma = gamma;
            match run_training(train_set, dev_set, &cfg, taxonomy, |_| {}) {
                Ok(o) => SweepRow {
                    gamma,
                    best_dev_hit1: Some(o.report.best_dev_hit1),
                    best_epoch: Some(o.report.best_epoch),
                    error: None,
                },
                Err(e) => {
                    warn(&format!("gamma {gamma} failed: {e}"));
                    SweepRow {
                        gamma,
                        best_dev_hit1: None,
                        best_epoch: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["gamma", "best_dev_hit1", "best_epoch", "error"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.best_dev_hit1.map(|v| v.to_string()).unwrap_or_default(),
            r.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// `category,class,entropy_bits` rows followed by class means.
pub fn entropy_csv(instances: &[RankingInstance], taxonomy: &ChunkTaxonomy) -> Result<String> {
    let h = entropy_by_category(instances)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "class", "entropy_bits"])
        .expect("in-memory write");
    for (id, bits) in &h {
        w.write_record([taxonomy.name(*id), taxonomy.class(*id).as_str(), &bits.to_string()])
            .expect("in-memory write");
    }
    for class in [ChunkClass::General, ChunkClass::Specific] {
        if let Some(m) = class_mean(&h, taxonomy, class) {
            w.write_record([&format!("mean:{}", class.as_str()), class.as_str(), &m.to_string()])
                .expect("in-memory write");
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))
}

pub fn checkpoint_attention(ck: &Checkpoint) -> Result<AttentionReport> {
    let tax = ck.taxonomy()?;
    Ok(attention_report(
        &ck.model.attention,
        ck.model.fusion,
        &tax,
        &ck.model.observed,
    )?)
}

pub fn attention_csv(report: &AttentionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "class", "weight", "observed"])
        .expect("in-memory write");
    for c in &report.weights {
        w.write_record([
            c.name.as_str(),
            c.class.as_str(),
            &c.weight.to_string(),
            &c.observed.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the t approximation with `n − 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman_with_p(a: &[f64], b: &[f64]) -> Result<Correlation> {
    let rho = spearman(a, b)?;
    let n = a.len();
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| georank_core::Error::Domain(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Correlation { rho, p_value, n })
}

/// Spearman correlation of two checkpoints' weights over categories both observed.
pub fn correlate_checkpoints(a: &Checkpoint, b: &Checkpoint) -> Result<Correlation> {
    if a.taxonomy != b.taxonomy {
        return Err(Error::Usage("checkpoints use different taxonomies".into()));
    }
    let (ra, rb) = (checkpoint_attention(a)?, checkpoint_attention(b)?);
    let (wa, wb): (Vec<f64>, Vec<f64>) = ra
        .weights
        .iter()
        .zip(&rb.weights)
        .filter(|(x, y)| x.observed && y.observed)
        .map(|(x, y)| (x.weight, y.weight))
        .unzip();
    spearman_with_p(&wa, &wb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gammas_are_deduplicated_in_order() {
        assert_eq!(dedup_gammas(&[10.0, 1.0, 10.0]), (vec![10.0, 1.0], vec![10.0]));
        assert_eq!(dedup_gammas(&[1.0]).0, [1.0]);
    }

    #[test]
    fn spearman_p_value_matches_reference() {
        // Σd² = 24 over n = 10: rho = 1 − 6·24/990; p from scipy.stats.spearmanr.
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b = [2.0, 0.0, 1.0, 5.0, 3.0, 4.0, 9.0, 6.0, 7.0, 8.0];
        let c = spearman_with_p(&a, &b).unwrap();
        assert!((c.rho - (1.0 - 144.0 / 990.0)).abs() < 1e-12);
        assert!((c.p_value - 0.0016368033159867143).abs() < 1e-9, "{}", c.p_value);
        let c = spearman_with_p(&a, &a).unwrap();
        assert_eq!((c.rho, c.p_value), (1.0, 0.0));
    }
}
