//! Pre-norm decoder-only transformer with learned position embeddings.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::lora::LoraAdapters;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    UnknownToken { id: u32, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
}

/// Which training stage produced a set of weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Base,
    /// Legal-oriented pre-training.
    Lpt,
    /// Legal-supervised fine-tuning.
    Lft,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Lpt => "lpt",
            Stage::Lft => "lft",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Stage::Base),
            "lpt" => Ok(Stage::Lpt),
            "lft" => Ok(Stage::Lft),
            other => Err(ModelError::InvalidConfig(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_hidden_dim: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.vocab_size,
            self.context_length,
            self.layers,
            self.heads,
            self.embed_dim,
            self.mlp_hidden_dim,
        ];
        if positive.contains(&0) {
            return Err(ModelError::InvalidConfig("all dimensions must be positive".into()));
        }
        if self.context_length < 2 {
            return Err(ModelError::InvalidConfig("context_length must be at least 2".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Canonical tensor names and shapes.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, t, d, h) = (
            self.vocab_size,
            self.context_length,
            self.embed_dim,
            self.mlp_hidden_dim,
        );
        let mut shapes = alloc::vec![
            ("tok_emb".into(), alloc::vec![v, d]),
            ("pos_emb".into(), alloc::vec![t, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            shapes.extend([
                (p("ln1.gain"), alloc::vec![d]),
                (p("ln1.bias"), alloc::vec![d]),
                (p("attn.wq"), alloc::vec![d, d]),
                (p("attn.wk"), alloc::vec![d, d]),
                (p("attn.wv"), alloc::vec![d, d]),
                (p("attn.wo"), alloc::vec![d, d]),
                (p("ln2.gain"), alloc::vec![d]),
                (p("ln2.bias"), alloc::vec![d]),
                (p("mlp.fc1.weight"), alloc::vec![h, d]),
                (p("mlp.fc1.bias"), alloc::vec![h]),
                (p("mlp.fc2.weight"), alloc::vec![d, h]),
                (p("mlp.fc2.bias"), alloc::vec![d]),
            ]);
        }
        shapes.extend([
            ("ln_f.gain".into(), alloc::vec![d]),
            ("ln_f.bias".into(), alloc::vec![d]),
            ("lm_head".into(), alloc::vec![v, d]),
        ]);
        shapes
    }
}

const LM_HEAD_STD: f64 = 0.5;

/// Named weights of one transformer plus the stage that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    config: TransformerConfig,
    stage: Stage,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParameters {
    /// Seeded random initialisation.
    ///
    /// Matrices are drawn from N(0, 1/fan_in); embeddings from N(0, 1); the
    /// output head from N(0, 0.25) so a frozen head still leaves adapters a
    /// usable logit range. Layer norms start at unit gain and zero bias.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.tensor_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::filled(&shape, 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name == "lm_head" {
                Tensor::normal(&shape, LM_HEAD_STD, &mut rng)
            } else if name.ends_with("_emb") {
                Tensor::normal(&shape, 1.0, &mut rng)
            } else {
                let fan_in = shape[1] as f64;
                Tensor::normal(&shape, 1.0 / libm::sqrt(fan_in), &mut rng)
            };
            tensors.insert(name, t);
        }
        Ok(Self {
            config,
            stage: Stage::Base,
            tensors,
        })
    }

    /// All-zero weights (layer-norm gains included).
    pub fn zeros(config: TransformerConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let tensors = config
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Ok(Self {
            config,
            stage: Stage::Base,
            tensors,
        })
    }

    /// Assembles parameters from loaded tensors, checking names and shapes.
    pub fn from_tensors(
        config: TransformerConfig,
        stage: Stage,
        mut tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut out = BTreeMap::new();
        for (name, shape) in config.tensor_shapes() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| ModelError::ShapeError(format!("missing tensor `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ShapeError(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            out.insert(name, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(ModelError::ShapeError(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config,
            stage,
            tensors: out,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Bitwise equality of every tensor and the stage tag.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stage == other.stage
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }
}

/// Forward-pass mode. Training mode applies adapter dropout.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// Which leaves of the graph carry gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    None,
    /// Only LoRA factors; the base stays frozen.
    Adapters,
    /// Base weights and LoRA factors.
    All,
}

/// A recorded forward pass, ready for a loss and `backward`.
pub struct Forward {
    pub graph: Graph,
    pub logits: Var,
    params: BTreeMap<String, Var>,
    adapters: BTreeMap<String, (Var, Var)>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(n, &v)| (n.clone(), self.graph.grad_or_zero(v)))
            .collect()
    }

    /// Gradients of `(A, B)` keyed by the adapted weight's name.
    pub fn adapter_grads(&self) -> BTreeMap<String, (Tensor, Tensor)> {
        self.adapters
            .iter()
            .map(|(n, &(a, b))| {
                (
                    n.clone(),
                    (self.graph.grad_or_zero(a), self.graph.grad_or_zero(b)),
                )
            })
            .collect()
    }
}

fn check_tokens(config: &TransformerConfig, tokens: &[u32]) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > config.context_length {
        return Err(ModelError::ContextOverflow {
            len: tokens.len(),
            max: config.context_length,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::UnknownToken {
            id,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

/// Records a full forward pass.
///
/// `key_valid` marks positions that may be attended to (padding is `false`);
/// `None` means every position is real.
pub fn forward_graph(
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    tokens: &[u32],
    key_valid: Option<&[bool]>,
    mut mode: Mode<'_>,
    grads: GradMode,
) -> Result<Forward, ModelError> {
    let cfg = &params.config;
    check_tokens(cfg, tokens)?;
    if let Some(ad) = adapters {
        ad.check_compatible(params)?;
    }
    let all_valid;
    let key_valid = match key_valid {
        Some(k) if k.len() == tokens.len() => k,
        Some(k) => {
            return Err(ModelError::ShapeError(format!(
                "key mask has {} entries for {} tokens",
                k.len(),
                tokens.len()
            )))
        }
        None => {
            all_valid = alloc::vec![true; tokens.len()];
            &all_valid
        }
    };

    let mut g = Graph::new();
    let base_rg = grads == GradMode::All;
    let adapter_rg = grads != GradMode::None;
    let mut pvars = BTreeMap::new();
    for (name, t) in &params.tensors {
        pvars.insert(name.clone(), g.leaf(t.clone(), base_rg));
    }
    let mut avars = BTreeMap::new();
    if let Some(ad) = adapters {
        for (name, pair) in ad.factors() {
            let a = g.leaf(pair.a.clone(), adapter_rg);
            let b = g.leaf(pair.b.clone(), adapter_rg);
            avars.insert(name.clone(), (a, b));
        }
    }
    let p = |n: &str| pvars[n];
    let scale = adapters.map(|a| a.scale()).unwrap_or(0.0);
    let dropout = adapters.map(|a| a.config().dropout).unwrap_or(0.0);

    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let tok = g.gather(p("tok_emb"), &ids);
    let pos = g.gather(p("pos_emb"), &positions);
    let mut h = g.add(tok, pos);

    for l in 0..cfg.layers {
        let name = |s: &str| format!("layers.{l}.{s}");
        let n = g.layer_norm(h, p(&name("ln1.gain")), p(&name("ln1.bias")));

        let mut project = |g: &mut Graph, weight: &str| -> Var {
            let base = g.matmul_t(n, p(weight));
            let Some(&(a, b)) = avars.get(weight) else {
                return base;
            };
            let input = match &mut mode {
                Mode::Train(rng) if dropout > 0.0 => {
                    let keep = 1.0 / (1.0 - dropout);
                    let len = g.value(n).len();
                    let mask = (0..len)
                        .map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep })
                        .collect();
                    g.dropout(n, mask)
                }
                _ => n,
            };
            let low = g.matmul_t(input, a);
            let up = g.matmul_t(low, b);
            let up = g.scale(up, scale);
            g.add(base, up)
        };
        let q = project(&mut g, &name("attn.wq"));
        let k = project(&mut g, &name("attn.wk"));
        let v = project(&mut g, &name("attn.wv"));
        let att = g.causal_attention(q, k, v, cfg.heads, key_valid);
        let att = g.matmul_t(att, p(&name("attn.wo")));
        h = g.add(h, att);

        let n2 = g.layer_norm(h, p(&name("ln2.gain")), p(&name("ln2.bias")));
        let m = g.matmul_t(n2, p(&name("mlp.fc1.weight")));
        let m = g.add_row(m, p(&name("mlp.fc1.bias")));
        let m = g.gelu(m);
        let m = g.matmul_t(m, p(&name("mlp.fc2.weight")));
        let m = g.add_row(m, p(&name("mlp.fc2.bias")));
        h = g.add(h, m);
    }

    let nf = g.layer_norm(h, p("ln_f.gain"), p("ln_f.bias"));
    let logits = g.matmul_t(nf, p("lm_head"));
    Ok(Forward {
        graph: g,
        logits,
        params: pvars,
        adapters: avars,
    })
}

/// Next-token logits (`tokens.len() x vocab_size`); row `i` depends only on
/// tokens `0..=i`.
pub fn forward(
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    tokens: &[u32],
    mode: Mode<'_>,
) -> Result<Tensor, ModelError> {
    let fwd = forward_graph(params, adapters, tokens, None, mode, GradMode::None)?;
    Ok(fwd.logits().clone())
}
