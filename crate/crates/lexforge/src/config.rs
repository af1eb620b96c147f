//! Pipeline configuration: one TOML file, every field optional, flags win.

use std::path::{Path, PathBuf};

use lexforge_core::{GenerationParams, LoraConfig, Stage, Strategy, TrainConfig, TransformerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub tokenizer: TokenizerSection,
    pub model: ModelSection,
    pub lpt: StageSection,
    pub lft: StageSection,
    pub generation: GenerationSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub lpt_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub context_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub max_new_tokens: usize,
    /// `greedy`, `temperature`, `top-k` or `top-p`.
    pub strategy: String,
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    /// Defaults to the pipeline seed.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("lexforge-out"),
            paths: Paths::default(),
            tokenizer: TokenizerSection::default(),
            model: ModelSection::default(),
            lpt: StageSection::from_train(&TrainConfig::lpt(0)),
            lft: StageSection::from_train(&TrainConfig::lft(0)),
            generation: GenerationSection::default(),
        }
    }
}

impl Default for TokenizerSection {
    fn default() -> Self {
        Self { vocab_size: 1200 }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            context_length: 128,
            layers: 2,
            heads: 8,
            embed_dim: 64,
            mlp_hidden_dim: 256,
        }
    }
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationParams::default();
        Self {
            max_new_tokens: g.max_new_tokens,
            strategy: "greedy".into(),
            temperature: 1.0,
            top_k: 40,
            top_p: 0.9,
            seed: None,
        }
    }
}

impl StageSection {
    fn from_train(t: &TrainConfig) -> Self {
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            rank: t.lora.rank,
            alpha: t.lora.alpha,
            dropout: t.lora.dropout,
            grad_clip: t.grad_clip,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn transformer(&self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            context_length: self.model.context_length,
            layers: self.model.layers,
            heads: self.model.heads,
            embed_dim: self.model.embed_dim,
            mlp_hidden_dim: self.model.mlp_hidden_dim,
        }
    }

    /// Stage defaults overlaid with the configured section; targets stay
    /// query and value.
    pub fn train(&self, stage: Stage) -> TrainConfig {
        let (mut t, s) = match stage {
            Stage::Lft => (TrainConfig::lft(self.seed), &self.lft),
            _ => (TrainConfig::lpt(self.seed), &self.lpt),
        };
        t.learning_rate = s.learning_rate;
        t.batch_size = s.batch_size;
        t.epochs = s.epochs;
        t.grad_clip = s.grad_clip;
        t.lora = LoraConfig {
            rank: s.rank,
            alpha: s.alpha,
            dropout: s.dropout,
            ..t.lora
        };
        t
    }

    pub fn generation(&self) -> Result<GenerationParams, ConfigError> {
        let g = &self.generation;
        let strategy = match g.strategy.as_str() {
            "greedy" => Strategy::Greedy,
            "temperature" => Strategy::Temperature(g.temperature),
            "top-k" => Strategy::TopK {
                k: g.top_k,
                temperature: g.temperature,
            },
            "top-p" => Strategy::TopP {
                p: g.top_p,
                temperature: g.temperature,
            },
            other => return Err(ConfigError::Parse(format!("unknown strategy `{other}`"))),
        };
        let params = GenerationParams {
            max_new_tokens: g.max_new_tokens,
            strategy,
            seed: g.seed.unwrap_or(self.seed),
        };
        params.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(params)
    }
}
