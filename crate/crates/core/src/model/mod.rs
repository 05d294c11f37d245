//! Desk-scale encoder-decoder that reads code tokens plus a linearized AST
//! and emits the statement to inject into. Attention adds value-flow
//! position terms computed by a gated graph network over VFG sub-graphs.

pub mod attention;
pub mod checkpoint;
mod data;
pub mod ggnn;
mod locate;
mod net;
mod params;
pub mod tape;
mod train;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::SEP;

pub use attention::{attention_block, sinusoids, AttentionParams, Positions, VfgEncodings};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use data::{build_datasets, locate_samples, DataReport};
pub use ggnn::{encode_subgraph, encode_subgraphs, trigram_ids, GgnnParams, GraphInput};
pub use locate::{locate, rule_based_locate, statement_tokens, ContextPrediction};
pub use params::{Group, ParamStore};
pub use train::{
    default_schedule, evaluate, train, Datasets, LocateSample, LossRecord, LossTrace, Stage, Task,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("parameter {0} holds NaN or infinite values")]
    NonFinite(String),
    #[error("training diverged in stage {stage} at step {step} (loss {loss})")]
    Diverged {
        stage: String,
        step: usize,
        loss: f64,
    },
    #[error("no training samples for {0}")]
    EmptyDataset(String),
    #[error("function body has no statements")]
    NoStatement,
    #[error("no statement starts on line {0}")]
    NoStatementAt(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("preprocess: {0}")]
    Preprocess(#[from] crate::code::ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture and training hyperparameters. The vocabulary travels with
/// the model, not the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub ggnn_steps: usize,
    pub graph_dim: usize,
    pub trigram_buckets: usize,
    pub max_seq_len: usize,
    /// Relative positions are clipped to `[-rel_clip, rel_clip]`.
    pub rel_clip: usize,
    pub max_decode_len: usize,
    pub learning_rate: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_heads: 4,
            num_layers: 2,
            decoder_layers: 1,
            ffn_dim: 128,
            ggnn_steps: 2,
            graph_dim: 32,
            trigram_buckets: 1024,
            max_seq_len: 512,
            rel_clip: 16,
            max_decode_len: 48,
            learning_rate: 1e-3,
            pretrain_epochs: 1,
            finetune_epochs: 40,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("decoder_layers", self.decoder_layers),
            ("ffn_dim", self.ffn_dim),
            ("graph_dim", self.graph_dim),
            ("trigram_buckets", self.trigram_buckets),
            ("max_seq_len", self.max_seq_len),
            ("max_decode_len", self.max_decode_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(ModelError::Config(
                "learning_rate must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

/// Sentinels reserved in every vocabulary so pre-training targets are
/// always representable.
const RESERVED_SENTINELS: usize = 64;

/// Token to id mapping. Ids 0..4 are pad, unknown, begin and end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials, separator and sentinels, then every distinct token in
    /// sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all: Vec<String> = ["<pad>", "<unk>", "<bos>", "<eos>", SEP]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for k in 0..RESERVED_SENTINELS {
            all.push(crate::pretrain::msp_sentinel(k));
            all.push(crate::pretrain::mip_sentinel(k));
        }
        let fixed: BTreeSet<String> = all.iter().cloned().collect();
        let rest: BTreeSet<&str> = tokens.into_iter().filter(|t| !fixed.contains(*t)).collect();
        all.extend(rest.into_iter().map(str::to_string));
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Parameters, their layout and the vocabulary they were built for.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    layout: net::Layout,
}

impl Model {
    /// Freshly initialized from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        let (params, layout) = net::Layout::build(&config, vocab.len(), true);
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    /// Order-sensitive hash over the parameters of one group.
    pub fn checksum(&self, group: Group) -> String {
        self.params.checksum(group)
    }
}

#[cfg(test)]
mod tests;
