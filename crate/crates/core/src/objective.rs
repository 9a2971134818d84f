//! Scores and losses for the two training tasks.
//!
//! The primary task scores a candidate by the dot product of `[CLS]` vectors.
//! The auxiliary task scores it by `Σ_i w_i² ⟨u_i^q, u_i^c⟩` over chunk
//! categories, where `u_i` are mean-pooled component rows and `w` holds one
//! learnable scalar per category. Both are trained with softmax cross-entropy
//! over the candidate list; the joint loss is their unweighted sum.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{ComponentMatrix, EncodedText};
use crate::error::Error;
use crate::linalg::dot;

/// How the component task is combined with the `[CLS]` task during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FusionMode {
    /// `L = L_cls + L_u` with learnable weights.
    #[default]
    Multitask,
    /// Same losses with the weights frozen at the given value.
    Fixed(f64),
    /// One loss over the summed `[CLS]` and component scores, i.e. a dot
    /// product of concatenated `[cls; w⊙u]` features.
    Concat,
    /// `L_cls` only.
    None,
}

impl FusionMode {
    pub fn uses_components(self) -> bool {
        !matches!(self, FusionMode::None)
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "multitask" => Ok(FusionMode::Multitask),
            "concat" => Ok(FusionMode::Concat),
            "none" => Ok(FusionMode::None),
            other => {
                let value = other
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "unknown fusion mode `{other}` (expected multitask, fixed:<v>, concat or none)"
                        ))
                    })?;
                Ok(FusionMode::Fixed(value))
            }
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Multitask => f.write_str("multitask"),
            FusionMode::Fixed(v) => write!(f, "fixed:{v}"),
            FusionMode::Concat => f.write_str("concat"),
            FusionMode::None => f.write_str("none"),
        }
    }
}

impl TryFrom<String> for FusionMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<FusionMode> for String {
    fn from(m: FusionMode) -> String {
        m.to_string()
    }
}

/// One learnable scalar per chunk category, with its update multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub w: Vec<f64>,
    /// Learning-rate multiplier applied to this group.
    pub gamma: f64,
    pub frozen: bool,
    pub init_value: f64,
}

impl AttentionWeights {
    pub fn new(num_categories: usize, init_value: f64, gamma: f64, frozen: bool) -> Result<Self, Error> {
        check_gamma(gamma)?;
        Ok(AttentionWeights {
            w: vec![init_value; num_categories],
            gamma,
            frozen,
            init_value,
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<(), Error> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            line: 0,
            message: format!("gamma must be positive, got {gamma}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub cls_score: f64,
    pub component_score: f64,
    pub per_category: Vec<f64>,
}

fn check_components(uq: &ComponentMatrix, uc: &ComponentMatrix, w: &AttentionWeights) -> Result<(), Error> {
    if uq.num_categories() != uc.num_categories() || uq.num_categories() != w.len() || uq.dim != uc.dim {
        return Err(Error::Contract(format!(
            "component shapes differ: query {}×{}, candidate {}×{}, {} weights",
            uq.num_categories(),
            uq.dim,
            uc.num_categories(),
            uc.dim,
            w.len()
        )));
    }
    Ok(())
}

/// Per-category contributions `w_i² ⟨u_i^q, u_i^c⟩`; exactly zero where a
/// category is missing on either side.
pub fn per_category_scores(
    uq: &ComponentMatrix,
    uc: &ComponentMatrix,
    w: &AttentionWeights,
) -> Result<Vec<f64>, Error> {
    check_components(uq, uc, w)?;
    Ok((0..w.len())
        .map(|i| {
            if uq.present[i] && uc.present[i] {
                w.w[i] * w.w[i] * dot(uq.row(i), uc.row(i))
            } else {
                0.0
            }
        })
        .collect())
}

pub fn component_score(uq: &ComponentMatrix, uc: &ComponentMatrix, w: &AttentionWeights) -> Result<f64, Error> {
    Ok(per_category_scores(uq, uc, w)?.iter().sum())
}

/// Unnormalized dot product of the two `[CLS]` vectors.
pub fn cls_score(q: &EncodedText, c: &EncodedText) -> Result<f64, Error> {
    if q.cls.len() != c.cls.len() {
        return Err(Error::Contract(format!(
            "[CLS] widths differ: {} vs {}",
            q.cls.len(),
            c.cls.len()
        )));
    }
    Ok(dot(&q.cls, &c.cls))
}

pub fn score_breakdown(
    q: &EncodedText,
    c: &EncodedText,
    uq: &ComponentMatrix,
    uc: &ComponentMatrix,
    w: &AttentionWeights,
) -> Result<ScoreBreakdown, Error> {
    let per_category = per_category_scores(uq, uc, w)?;
    Ok(ScoreBreakdown {
        cls_score: cls_score(q, c)?,
        component_score: per_category.iter().sum(),
        per_category,
    })
}

/// Softmax cross-entropy of `scores` against `gold`, with `∂loss/∂scores`.
pub fn listwise_loss_with_grad(scores: &[f64], gold: usize) -> Result<(f64, Vec<f64>), Error> {
    if scores.len() < 2 {
        return Err(Error::Contract(format!(
            "listwise loss needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if gold >= scores.len() {
        return Err(Error::Contract(format!(
            "gold index {gold} out of range for {} scores",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {i} is {}", scores[i])));
    }
    let (argmax, max) =
        scores.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, s)| if s > acc.1 { (i, s) } else { acc },
        );
    let mut probs: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let rest: f64 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != argmax)
        .map(|(_, p)| p)
        .sum();
    let loss = libm::log1p(rest) + (max - scores[gold]);
    let total = 1.0 + rest;
    for p in &mut probs {
        *p /= total;
    }
    probs[gold] -= 1.0;
    Ok((loss, probs))
}

pub fn listwise_loss(scores: &[f64], gold: usize) -> Result<f64, Error> {
    listwise_loss_with_grad(scores, gold).map(|(l, _)| l)
}

/// `L = L_cls + L_u`.
pub fn joint_loss(cls_loss: f64, component_loss: f64) -> Result<f64, Error> {
    if !cls_loss.is_finite() || !component_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss term (L_cls = {cls_loss}, L_u = {component_loss})"
        )));
    }
    Ok(cls_loss + component_loss)
}

/// Plain-descent step on the attention weights at rate `base_lr · γ`.
///
/// Frozen weights are returned unchanged.
pub fn async_update(w: &AttentionWeights, grad: &[f64], base_lr: f64) -> Result<AttentionWeights, Error> {
    check_gamma(w.gamma)?;
    if grad.len() != w.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} weights",
            grad.len(),
            w.len()
        )));
    }
    let mut out = w.clone();
    if !w.frozen {
        let lr = base_lr * w.gamma;
        for (wi, g) in out.w.iter_mut().zip(grad) {
            *wi -= lr * g;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]], present: &[bool]) -> ComponentMatrix {
        let dim = rows[0].len();
        ComponentMatrix {
            rows: rows.iter().flat_map(|r| r.iter().copied()).collect(),
            present: present.to_vec(),
            counts: present.iter().map(|&p| usize::from(p)).collect(),
            dim,
        }
    }

    fn encoded(cls: &[f64]) -> EncodedText {
        EncodedText {
            source: String::new(),
            cls: cls.to_vec(),
            tokens: Vec::new(),
            n_tokens: 0,
            d_out: cls.len(),
            truncated: false,
        }
    }

    #[test]
    fn weighted_component_score() {
        let uq = matrix(&[&[1.0, 0.0], &[0.0, 2.0]], &[true, true]);
        let uc = matrix(&[&[1.0, 0.0], &[0.0, 1.0]], &[true, true]);
        let w = AttentionWeights {
            w: vec![1.0, 0.5],
            gamma: 1.0,
            frozen: false,
            init_value: 1.0,
        };
        assert_eq!(component_score(&uq, &uc, &w).unwrap(), 1.5);
        assert_eq!(per_category_scores(&uq, &uc, &w).unwrap(), [1.0, 0.5]);
    }

    #[test]
    fn empty_and_unaligned_components_contribute_nothing() {
        let w = AttentionWeights::new(2, 1.0, 1.0, false).unwrap();
        let zero = ComponentMatrix::zeros(2, 3);
        assert_eq!(component_score(&zero, &zero, &w).unwrap(), 0.0);
        let uq = matrix(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]], &[true, true]);
        let uc = matrix(&[&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]], &[true, false]);
        assert_eq!(per_category_scores(&uq, &uc, &w).unwrap()[1], 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_violation() {
        let w = AttentionWeights::new(3, 1.0, 1.0, false).unwrap();
        let m = ComponentMatrix::zeros(2, 3);
        assert!(matches!(component_score(&m, &m, &w), Err(Error::Contract(_))));
        assert!(matches!(
            cls_score(&encoded(&[1.0]), &encoded(&[1.0, 2.0])),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cls_dot_products() {
        assert_eq!(cls_score(&encoded(&[1.0, 0.0]), &encoded(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cls_score(&encoded(&[1.0, 0.0]), &encoded(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cls_score(&encoded(&[1.0, 2.0]), &encoded(&[3.0, -1.0])).unwrap(), 1.0);
    }

    #[test]
    fn listwise_loss_values() {
        let l = listwise_loss(&[0.0, 0.0], 0).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        // ln(1 + e^-20)
        let l = listwise_loss(&[10.0, -10.0], 0).unwrap();
        assert!((l - 2.061_153_620_314_381e-9).abs() < 1e-20, "{l}");
        assert!(matches!(listwise_loss(&[f64::NAN, 0.0], 0), Err(Error::Numeric(_))));
        assert!(listwise_loss(&[1.0], 0).is_err());
    }

    #[test]
    fn listwise_gradient_matches_differences() {
        let s = [0.3, -1.2, 2.0, 0.7];
        let (_, g) = listwise_loss_with_grad(&s, 1).unwrap();
        for i in 0..s.len() {
            let mut up = s;
            up[i] += 1e-6;
            let mut down = s;
            down[i] -= 1e-6;
            let num = (listwise_loss(&up, 1).unwrap() - listwise_loss(&down, 1).unwrap()) / 2e-6;
            assert!((num - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn joint_loss_adds() {
        assert_eq!(joint_loss(0.7, 0.3).unwrap(), 1.0);
        assert_eq!(joint_loss(0.42, 0.0).unwrap(), 0.42);
        assert!(joint_loss(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn async_update_scales_the_step() {
        let w = AttentionWeights::new(1, 1.0, 10.0, false).unwrap();
        let out = async_update(&w, &[0.5], 0.1).unwrap();
        assert!(((w.w[0] - out.w[0]).abs() - 0.5).abs() < 1e-15);
        assert!(out.w[0] < w.w[0]);

        let one = AttentionWeights::new(2, 1.0, 1.0, false).unwrap();
        let out = async_update(&one, &[0.25, -0.5], 0.2).unwrap();
        assert_eq!(out.w, [1.0 - 0.2 * 0.25, 1.0 + 0.2 * 0.5]);

        let frozen = AttentionWeights::new(2, 0.5, 10.0, true).unwrap();
        let mut cur = frozen.clone();
        for _ in 0..5 {
            cur = async_update(&cur, &[3.0, -2.0], 0.1).unwrap();
        }
        assert_eq!(cur.w, frozen.w);
        assert!(AttentionWeights::new(2, 1.0, 0.0, false).is_err());
    }

    #[test]
    fn fusion_mode_parsing() {
        assert_eq!("multitask".parse::<FusionMode>().unwrap(), FusionMode::Multitask);
        assert_eq!("fixed:0.5".parse::<FusionMode>().unwrap(), FusionMode::Fixed(0.5));
        assert_eq!("none".parse::<FusionMode>().unwrap(), FusionMode::None);
        assert_eq!("concat".parse::<FusionMode>().unwrap(), FusionMode::Concat);
        assert!("fixed:abc".parse::<FusionMode>().is_err());
        assert_eq!(FusionMode::Fixed(0.1).to_string(), "fixed:0.1");
    }

    proptest! {
        #[test]
        fn loss_is_shift_invariant(scores in proptest::collection::vec(-20.0f64..20.0, 2..12), shift in -50.0f64..50.0, pick in 0usize..100) {
            let gold = pick % scores.len();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let a = listwise_loss(&scores, gold).unwrap();
            let b = listwise_loss(&shifted, gold).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn loss_is_permutation_equivariant(scores in proptest::collection::vec(-20.0f64..20.0, 2..12), pick in 0usize..100, rot in 0usize..100) {
            let gold = pick % scores.len();
            let n = scores.len();
            let r = rot % n;
            let rotated: Vec<f64> = (0..n).map(|i| scores[(i + r) % n]).collect();
            let new_gold = (gold + n - r) % n;
            let a = listwise_loss(&scores, gold).unwrap();
            let b = listwise_loss(&rotated, new_gold).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn component_score_scales_quadratically(c in -3.0f64..3.0, seed in 0u64..500) {
            let v = |k: u64| ((seed * 13 + k * 7) % 11) as f64 - 5.0;
            let uq = matrix(&[&[v(0), v(1)], &[v(2), v(3)], &[v(4), v(5)]], &[true, true, false]);
            let uc = matrix(&[&[v(6), v(7)], &[v(8), v(9)], &[v(10), v(11)]], &[true, true, true]);
            let w = AttentionWeights { w: vec![0.3, 1.7, 0.9], gamma: 1.0, frozen: false, init_value: 1.0 };
            let mut scaled = w.clone();
            for x in &mut scaled.w { *x *= c; }
            let a = component_score(&uq, &uc, &w).unwrap();
            let b = component_score(&uq, &uc, &scaled).unwrap();
            prop_assert!((b - c * c * a).abs() <= 1e-9 * (1.0 + b.abs()));
            let parts = per_category_scores(&uq, &uc, &w).unwrap();
            prop_assert_eq!(parts[2], 0.0);
            prop_assert!((parts.iter().sum::<f64>() - a).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
