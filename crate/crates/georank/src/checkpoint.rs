//! Versioned JSON checkpoints.

use std::path::{Path, PathBuf};

use georank_core::{ChunkTaxonomy, Model};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_string};

pub const FORMAT: &str = "georank-checkpoint";
pub const VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Taxonomy in its text file format.
    pub taxonomy: String,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, taxonomy: &ChunkTaxonomy) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            taxonomy: taxonomy.to_source(),
            model,
        }
    }

    pub fn taxonomy(&self) -> Result<ChunkTaxonomy> {
        Ok(ChunkTaxonomy::parse(&self.taxonomy)?)
    }

    /// `path` is a checkpoint directory or the model file inside one.
    pub fn model_path(path: &Path) -> PathBuf {
        if path.extension().is_some_and(|e| e == "json") {
            path.to_path_buf()
        } else {
            path.join(MODEL_FILE)
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MODEL_FILE);
        write_string(&path, &serde_json::to_string(self).expect("checkpoint serializes"))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound {
                path: path.to_path_buf(),
            });
        }
        let file = Self::model_path(path);
        let text = read_to_string(&file)?;
        let parse = |line: usize, message: String| Error::Parse {
            path: file.clone(),
            line,
            message,
        };
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| parse(e.line(), e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(parse(
                1,
                format!(
                    "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                    ck.format, ck.version
                ),
            ));
        }
        ck.model.encoder()?;
        if ck.model.attention.len() != ck.taxonomy()?.len() {
            return Err(parse(1, "attention weights do not match the taxonomy".into()));
        }
        Ok(ck)
    }
}
