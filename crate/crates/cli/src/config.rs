//! Run configuration: one TOML document with a section per stage. Command
//! line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vgx_core::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ContextChoice {
    Model,
    Rule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JSONL of functions: {"project", "path", "name", "code"}.
    pub corpus: Option<PathBuf>,
    /// JSONL of labeled normal/vulnerable pairs.
    pub pairs: Option<PathBuf>,
    /// JSONL of pattern judgments.
    pub judgments: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    /// Mined patterns kept after ranking.
    pub top_k: usize,
}

impl Default for MineSection {
    fn default() -> Self {
        Self { top_k: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Add refactored variants of every fine-tuning sample.
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { augment: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub contextualizer: ContextChoice,
    /// Patterns tried per function; all when absent.
    pub top_k: Option<usize>,
    pub chunk: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            contextualizer: ContextChoice::Rule,
            top_k: None,
            chunk: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub limit: Option<usize>,
    pub paths: Paths,
    pub model: ModelConfig,
    pub mine: MineSection,
    pub train: TrainSection,
    pub generate: GenerateSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("a seed is required: pass --seed or set `seed` in the config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_default() {
        let c: RunConfig = toml::from_str(
            "seed = 3\n[paths]\ncorpus = \"c.jsonl\"\n[model]\nhidden_dim = 32\n[generate]\ncontextualizer = \"model\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.model.hidden_dim, 32);
        assert_eq!(c.model.num_heads, ModelConfig::default().num_heads);
        assert_eq!(c.generate.contextualizer, ContextChoice::Model);
        assert_eq!(c.mine.top_k, 300);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let back: RunConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
