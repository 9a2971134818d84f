//! Forward and backward pass of the joint objective for one ranking instance.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::RankingInstance;
use crate::encoder::{components_backward, extract_components, ComponentMatrix, EncodedText, Encoder, ForwardCache};
use crate::error::Error;
use crate::linalg::dot;
use crate::objective::{joint_loss, listwise_loss_with_grad, per_category_scores, AttentionWeights, FusionMode};

/// Loss terms for one instance (or a mean over a batch).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub component: f64,
}

impl LossParts {
    pub fn add(&mut self, other: LossParts) {
        self.total += other.total;
        self.cls += other.cls;
        self.component += other.component;
    }

    pub fn scale(&mut self, factor: f64) {
        self.total *= factor;
        self.cls *= factor;
        self.component *= factor;
    }
}

struct Side {
    encoded: EncodedText,
    cache: ForwardCache,
    components: Option<ComponentMatrix>,
}

fn encode_side(
    encoder: &Encoder,
    text: &crate::chunker::ChunkedText,
    num_categories: Option<usize>,
) -> Result<Side, Error> {
    let (encoded, cache) = encoder.forward(&text.source);
    let components = match num_categories {
        Some(m) => Some(extract_components(&encoded, text, m)?),
        None => None,
    };
    Ok(Side {
        encoded,
        cache,
        components,
    })
}

/// Evaluates the training loss of `instance` and, when `grads` is given,
/// accumulates `∂L/∂θ` and `∂L/∂w` into the two buffers.
///
/// The instance's chunks must use the taxonomy the weights were sized for.
/// For [`FusionMode::Concat`] the single combined loss is reported as `cls`.
pub fn instance_objective(
    encoder: &Encoder,
    weights: &AttentionWeights,
    instance: &RankingInstance,
    fusion: FusionMode,
    grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<LossParts, Error> {
    let m = weights.len();
    let with_components = fusion.uses_components().then_some(m);
    let query = encode_side(encoder, &instance.query, with_components)?;
    let cands = instance
        .candidates
        .iter()
        .map(|c| encode_side(encoder, c, with_components))
        .collect::<Result<Vec<_>, _>>()?;

    let cls_scores: Vec<f64> = cands.iter().map(|c| dot(&query.encoded.cls, &c.encoded.cls)).collect();
    let comp_scores: Vec<f64> = match with_components {
        Some(_) => {
            let uq = query.components.as_ref().expect("components");
            cands
                .iter()
                .map(|c| {
                    per_category_scores(uq, c.components.as_ref().expect("components"), weights).map(|v| v.iter().sum())
                })
                .collect::<Result<_, _>>()?
        }
        None => Vec::new(),
    };

    let gold = instance.gold_index;
    let (parts, d_cls_scores, d_comp_scores) = match fusion {
        FusionMode::None => {
            let (l, g) = listwise_loss_with_grad(&cls_scores, gold)?;
            (
                LossParts {
                    total: l,
                    cls: l,
                    component: 0.0,
                },
                g,
                None,
            )
        }
        FusionMode::Concat => {
            let summed: Vec<f64> = cls_scores.iter().zip(&comp_scores).map(|(a, b)| a + b).collect();
            let (l, g) = listwise_loss_with_grad(&summed, gold)?;
            (
                LossParts {
                    total: l,
                    cls: l,
                    component: 0.0,
                },
                g.clone(),
                Some(g),
            )
        }
        FusionMode::Multitask | FusionMode::Fixed(_) => {
            let (lc, gc) = listwise_loss_with_grad(&cls_scores, gold)?;
            let (lu, gu) = listwise_loss_with_grad(&comp_scores, gold)?;
            let total = joint_loss(lc, lu)?;
            (
                LossParts {
                    total,
                    cls: lc,
                    component: lu,
                },
                gc,
                Some(gu),
            )
        }
    };
    if !parts.total.is_finite() {
        return Err(Error::Numeric(alloc::format!("non-finite loss {}", parts.total)));
    }

    let Some((enc_grad, w_grad)) = grads else {
        return Ok(parts);
    };
    let d = encoder.config().d_out;

    let mut dq_cls = vec![0.0; d];
    let mut dq_tok = vec![0.0; query.encoded.tokens.len()];
    let mut dq_rows = with_components.map(|m| vec![0.0; m * d]);

    for (ci, cand) in cands.iter().enumerate() {
        let gs = d_cls_scores[ci];
        let mut dc_cls = vec![0.0; d];
        for k in 0..d {
            dq_cls[k] += gs * cand.encoded.cls[k];
            dc_cls[k] = gs * query.encoded.cls[k];
        }
        let mut dc_tok = vec![0.0; cand.encoded.tokens.len()];
        if let (Some(dcomp), Some(dq_rows)) = (&d_comp_scores, dq_rows.as_mut()) {
            let gu = dcomp[ci];
            let uq = query.components.as_ref().expect("components");
            let uc = cand.components.as_ref().expect("components");
            let mut dc_rows = vec![0.0; m * d];
            for i in 0..m {
                if !(uq.present[i] && uc.present[i]) || gu == 0.0 {
                    continue;
                }
                let wi = weights.w[i];
                let w2 = wi * wi;
                let (qr, cr) = (uq.row(i), uc.row(i));
                w_grad[i] += gu * 2.0 * wi * dot(qr, cr);
                for k in 0..d {
                    dq_rows[i * d + k] += gu * w2 * cr[k];
                    dc_rows[i * d + k] = gu * w2 * qr[k];
                }
            }
            components_backward(
                &instance.candidates[ci],
                uc,
                &dc_rows,
                cand.encoded.n_tokens,
                &mut dc_tok,
            );
        }
        encoder.backward(&cand.cache, &dc_cls, &dc_tok, enc_grad);
    }
    if let Some(dq_rows) = &dq_rows {
        components_backward(
            &instance.query,
            query.components.as_ref().expect("components"),
            dq_rows,
            query.encoded.n_tokens,
            &mut dq_tok,
        );
    }
    encoder.backward(&query.cache, &dq_cls, &dq_tok, enc_grad);
    Ok(parts)
}
