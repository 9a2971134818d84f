//! Training loop, re-ranking and split evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::Scheme;
use crate::corpus::RankingInstance;
use crate::encoder::{Encoder, EncoderConfig, Vocab};
use crate::error::Error;
use crate::linalg::dot;
use crate::metrics::{query_metrics, rank_descending, summarize, MetricSummary, QueryMetrics};
use crate::objective::{check_gamma, AttentionWeights, FusionMode};
use crate::optim::{GroupedOptimizer, OptimizerKind};
use crate::step::{instance_objective, LossParts};
use crate::taxonomy::ChunkTaxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub fusion: FusionMode,
    pub chunk_scheme: Scheme,
    pub attn_init: f64,
    pub freeze_attention: bool,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-4,
            gamma: 10.0,
            batch_size: 32,
            max_epochs: 10,
            early_stop_patience: 3,
            weight_decay: 0.02,
            seed: 42,
            fusion: FusionMode::Multitask,
            chunk_scheme: Scheme::Geo,
            attn_init: 1.0,
            freeze_attention: false,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config { line: 0, message: m });
        check_gamma(self.gamma)?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !self.attn_init.is_finite() {
            return bad(format!("attn_init must be finite, got {}", self.attn_init));
        }
        if let FusionMode::Fixed(v) = self.fusion {
            if !v.is_finite() {
                return bad(format!("fixed attention value must be finite, got {v}"));
            }
        }
        GroupedOptimizer::new(self.optimizer, self.base_lr, self.weight_decay).map(|_| ())
    }

    /// Initial attention weights for `num_categories` under this config.
    pub fn initial_weights(&self, num_categories: usize) -> Result<AttentionWeights, Error> {
        match self.fusion {
            FusionMode::Fixed(v) => AttentionWeights::new(num_categories, v, self.gamma, true),
            _ => AttentionWeights::new(num_categories, self.attn_init, self.gamma, self.freeze_attention),
        }
    }
}

/// A trained re-ranker with everything needed to score new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder_config: EncoderConfig,
    pub params: Vec<f64>,
    pub attention: AttentionWeights,
    pub fusion: FusionMode,
    pub scheme: Scheme,
    /// Categories seen in the training split.
    pub observed: Vec<bool>,
}

impl Model {
    pub fn encoder(&self) -> Result<Encoder, Error> {
        Encoder::from_params(self.encoder_config.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance losses over the epoch.
    pub loss: LossParts,
    pub dev_hit1: f64,
    /// Attention weights at the end of the epoch.
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    pub best_dev_hit1: f64,
    pub steps: u64,
    pub stopped_early: bool,
    /// Attention weights of the retained checkpoint.
    pub attention: Vec<f64>,
}

/// Cls dot-product scores of each candidate against the query.
pub fn cls_scores(encoder: &Encoder, query: &str, candidates: &[&str]) -> Vec<f64> {
    let q = encoder.encode(query);
    candidates.iter().map(|c| dot(&q.cls, &encoder.encode(c).cls)).collect()
}

/// Candidate indices by descending cls score with their scores; ties keep input order.
pub fn rerank(encoder: &Encoder, query: &str, candidates: &[&str]) -> Result<Vec<(usize, f64)>, Error> {
    if candidates.is_empty() {
        return Err(Error::Validation("rerank needs at least one candidate".into()));
    }
    let scores = cls_scores(encoder, query, candidates);
    Ok(rank_descending(&scores).into_iter().map(|i| (i, scores[i])).collect())
}

/// Per-query metrics of the cls-only ranking.
pub fn evaluate_split(encoder: &Encoder, instances: &[RankingInstance]) -> Result<Vec<QueryMetrics>, Error> {
    instances
        .iter()
        .map(|inst| {
            let cands: Vec<&str> = inst.candidates.iter().map(|c| c.source.as_str()).collect();
            let scores = cls_scores(encoder, &inst.query.source, &cands);
            query_metrics(&scores, inst.gold_index, &inst.grades())
        })
        .collect()
}

pub fn evaluate_summary(encoder: &Encoder, instances: &[RankingInstance]) -> Result<MetricSummary, Error> {
    summarize(&evaluate_split(encoder, instances)?)
}

/// Builds the character vocabulary of a split.
pub fn split_vocab(instances: &[RankingInstance]) -> Vocab {
    Vocab::from_texts(
        instances
            .iter()
            .flat_map(|i| core::iter::once(&i.query).chain(&i.candidates))
            .map(|t| t.source.as_str()),
    )
}

/// Trains on `train`, selecting the epoch with the best dev Hit@1.
///
/// `encoder_config.vocab` is used as given; see [`split_vocab`].
pub fn train(
    train_set: &[RankingInstance],
    dev_set: &[RankingInstance],
    config: &TrainConfig,
    encoder_config: &EncoderConfig,
    taxonomy: &ChunkTaxonomy,
) -> Result<(Model, TrainReport), Error> {
    train_with_progress(train_set, dev_set, config, encoder_config, taxonomy, |_| {})
}

pub fn train_with_progress(
    train_set: &[RankingInstance],
    dev_set: &[RankingInstance],
    config: &TrainConfig,
    encoder_config: &EncoderConfig,
    taxonomy: &ChunkTaxonomy,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainReport), Error> {
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::Validation("train and dev splits must be non-empty".into()));
    }
    config.validate()?;
    encoder_config.validate()?;
    let m = taxonomy.len();
    for inst in train_set.iter().chain(dev_set) {
        inst.validate(m)?;
    }
    let mut observed = vec![false; m];
    for inst in train_set {
        for t in core::iter::once(&inst.query).chain(&inst.candidates) {
            for ch in &t.chunks {
                observed[ch.category.index()] = true;
            }
        }
    }

    let mut encoder = Encoder::new(encoder_config.clone(), config.seed)?;
    let mut weights = config.initial_weights(m)?;
    let mut opt = GroupedOptimizer::new(config.optimizer, config.base_lr, config.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_5A1D);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let n_params = encoder.num_params();
    let mut grad = vec![0.0; n_params];
    let mut w_grad = vec![0.0; m];
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>, AttentionWeights)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            w_grad.iter_mut().for_each(|g| *g = 0.0);
            let step = opt.steps() + 1;
            let mut batch_loss = LossParts::default();
            for &i in batch {
                let parts = instance_objective(
                    &encoder,
                    &weights,
                    &train_set[i],
                    config.fusion,
                    Some((&mut grad, &mut w_grad)),
                )
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
                    other => other,
                })?;
                batch_loss.add(parts);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            w_grad.iter_mut().for_each(|g| *g *= inv);
            if grad.iter().chain(&w_grad).any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("step {step}: non-finite gradient")));
            }
            opt.step(encoder.params_mut(), &grad, &mut weights, &w_grad)?;
            sum.add(batch_loss);
        }
        sum.scale(1.0 / train_set.len() as f64);
        let dev_hit1 = evaluate_summary(&encoder, dev_set)?.hit1;
        let record = EpochRecord {
            epoch,
            loss: sum,
            dev_hit1,
            attention: weights.w.clone(),
        };
        progress(&record);
        epochs.push(record);
        if best.as_ref().is_none_or(|b| dev_hit1 > b.1) {
            best = Some((epoch, dev_hit1, encoder.params().to_vec(), weights.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (best_epoch, best_dev_hit1, params, attention) = best.expect("at least one epoch");
    let report = TrainReport {
        epochs,
        best_epoch,
        best_dev_hit1,
        steps: opt.steps(),
        stopped_early,
        attention: attention.w.clone(),
    };
    let model = Model {
        encoder_config: encoder_config.clone(),
        params,
        attention,
        fusion: config.fusion,
        scheme: config.chunk_scheme,
        observed,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GeneratorConfig};

    fn tiny() -> (Vec<RankingInstance>, EncoderConfig, ChunkTaxonomy) {
        let tax = ChunkTaxonomy::builtin();
        let corpus = generate_corpus(&GeneratorConfig::new(3, 24, 4), &tax).unwrap();
        let mut cfg = EncoderConfig::new(split_vocab(&corpus));
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.n_layers = 1;
        cfg.d_ff = 8;
        cfg.d_out = 8;
        (corpus, cfg, tax)
    }

    fn quick(fusion: FusionMode) -> TrainConfig {
        TrainConfig {
            fusion,
            batch_size: 8,
            max_epochs: 3,
            base_lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = TrainConfig::default();
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.early_stop_patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_and_keeps_the_best_epoch() {
        let (corpus, enc, tax) = tiny();
        let (train_set, dev) = corpus.split_at(16);
        let cfg = quick(FusionMode::Multitask);
        let a = train(train_set, dev, &cfg, &enc, &tax).unwrap();
        let b = train(train_set, dev, &cfg, &enc, &tax).unwrap();
        assert_eq!(a, b);
        let (model, report) = a;
        let max = report.epochs.iter().map(|e| e.dev_hit1).fold(f64::MIN, f64::max);
        assert_eq!(report.best_dev_hit1, max);
        assert_eq!(report.epochs[report.best_epoch - 1].dev_hit1, max);
        assert_eq!(evaluate_summary(&model.encoder().unwrap(), dev).unwrap().hit1, max);
    }

    #[test]
    fn ablations_leave_expected_traces() {
        let (corpus, enc, tax) = tiny();
        let (train_set, dev) = corpus.split_at(16);
        let (_, none) = train(train_set, dev, &quick(FusionMode::None), &enc, &tax).unwrap();
        assert!(none.epochs.iter().all(|e| e.loss.component == 0.0));
        let (model, fixed) = train(train_set, dev, &quick(FusionMode::Fixed(0.5)), &enc, &tax).unwrap();
        assert!(fixed.attention.iter().all(|w| w.to_bits() == 0.5f64.to_bits()));
        assert!(model.attention.frozen);
        let mut frozen = quick(FusionMode::Multitask);
        frozen.freeze_attention = true;
        let (_, r) = train(train_set, dev, &frozen, &enc, &tax).unwrap();
        assert!(r.attention.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (corpus, enc, tax) = tiny();
        let (train_set, dev) = corpus.split_at(16);
        let mut cfg = quick(FusionMode::None);
        cfg.max_epochs = 12;
        cfg.early_stop_patience = 1;
        cfg.base_lr = 1e-9;
        let (_, r) = train(train_set, dev, &cfg, &enc, &tax).unwrap();
        assert!(r.epochs.len() <= r.best_epoch + 1);
    }

    #[test]
    fn divergence_reports_the_step() {
        let (corpus, enc, tax) = tiny();
        let (train_set, dev) = corpus.split_at(16);
        let mut cfg = quick(FusionMode::Multitask);
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.base_lr = 1e300;
        cfg.weight_decay = 0.0;
        let err = train(train_set, dev, &cfg, &enc, &tax).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.starts_with("step ")), "{err}");
    }

    #[test]
    fn rerank_is_stable_and_total() {
        let (_, enc, _) = tiny();
        let e = Encoder::new(enc, 1).unwrap();
        assert_eq!(rerank(&e, "采荷路", &["西溪路"]).unwrap()[0].0, 0);
        let r = rerank(&e, "采荷路", &["西溪路", "西溪路", "采荷路"]).unwrap();
        let pos0 = r.iter().position(|x| x.0 == 0).unwrap();
        let pos1 = r.iter().position(|x| x.0 == 1).unwrap();
        assert!(pos0 < pos1);
        assert!(rerank(&e, "x", &[]).is_err());
    }
}
