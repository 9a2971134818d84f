//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid by
//! command-line flags.

use std::path::Path;

use georank_core::encoder::{EncoderConfig, Vocab};
use georank_core::optim::OptimizerKind;
use georank_core::{FusionMode, Scheme, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_to_string;

/// Encoder dimensions; the vocabulary comes from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_out: usize,
    pub max_len: usize,
    pub d_ff: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = EncoderConfig::new(Vocab::from_chars(Vec::new()));
        ModelShape {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_out: c.d_out,
            max_len: c.max_len,
            d_ff: c.d_ff,
        }
    }
}

impl ModelShape {
    pub fn encoder_config(&self, vocab: Vocab) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_out: self.d_out,
            max_len: self.max_len,
            d_ff: self.d_ff,
            vocab,
        }
    }
}

/// Flat keys shared by the train, sweep and evaluate config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub base_lr: Option<f64>,
    pub gamma: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    pub fusion: Option<FusionMode>,
    pub chunk_scheme: Option<Scheme>,
    pub attn_init: Option<f64>,
    pub freeze_attention: Option<bool>,
    pub optimizer: Option<OptimizerKind>,
    pub d_model: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_out: Option<usize>,
    pub max_len: Option<usize>,
    pub d_ff: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Values in `top` win over values in `self`.
    pub fn overlay(self, top: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: top.$f.or(self.$f)),* } };
        }
        pick!(
            base_lr,
            gamma,
            batch_size,
            max_epochs,
            early_stop_patience,
            weight_decay,
            seed,
            fusion,
            chunk_scheme,
            attn_init,
            freeze_attention,
            optimizer,
            d_model,
            n_layers,
            n_heads,
            d_out,
            max_len,
            d_ff
        )
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let t = TrainConfig::default();
        let s = ModelShape::default();
        let train = TrainConfig {
            base_lr: self.base_lr.unwrap_or(t.base_lr),
            gamma: self.gamma.unwrap_or(t.gamma),
            batch_size: self.batch_size.unwrap_or(t.batch_size),
            max_epochs: self.max_epochs.unwrap_or(t.max_epochs),
            early_stop_patience: self.early_stop_patience.unwrap_or(t.early_stop_patience),
            weight_decay: self.weight_decay.unwrap_or(t.weight_decay),
            seed: self.seed.unwrap_or(t.seed),
            fusion: self.fusion.unwrap_or(t.fusion),
            chunk_scheme: self.chunk_scheme.unwrap_or(t.chunk_scheme),
            attn_init: self.attn_init.unwrap_or(t.attn_init),
            freeze_attention: self.freeze_attention.unwrap_or(t.freeze_attention),
            optimizer: self.optimizer.unwrap_or(t.optimizer),
        };
        let shape = ModelShape {
            d_model: self.d_model.unwrap_or(s.d_model),
            n_layers: self.n_layers.unwrap_or(s.n_layers),
            n_heads: self.n_heads.unwrap_or(s.n_heads),
            d_out: self.d_out.unwrap_or(s.d_out),
            max_len: self.max_len.unwrap_or(s.max_len),
            d_ff: self.d_ff.unwrap_or(s.d_ff),
        };
        train.validate()?;
        shape.encoder_config(Vocab::from_chars(Vec::new())).validate()?;
        Ok(RunConfig { train, shape })
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub shape: ModelShape,
}

/// Defaults, then the optional file, then flag overrides.
pub fn resolve(file: Option<&Path>, flags: FileConfig) -> Result<RunConfig> {
    let base = match file {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    base.overlay(flags).resolve()
}
