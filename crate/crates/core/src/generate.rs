//! Autoregressive decoding.
//!
//! Each step re-runs the full forward pass (no KV cache) and samples from the
//! last logits row. BOS and PAD are never produced; EOS ends the response and
//! is not returned. Temperature scaling happens before top-k/top-p truncation
//! and the kept probabilities are renormalised.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{render_test, DataError};
use crate::lora::LoraAdapters;
use crate::model::{forward, Mode, ModelError, ModelParameters};
use crate::tokenizer::{TokenSequence, TokenizerError, Vocabulary};
use crate::train::{Checkpoint, SpecialIds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Temperature(f64),
    TopK { k: usize, temperature: f64 },
    TopP { p: f64, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 128,
            strategy: Strategy::Greedy,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.max_new_tokens == 0 {
            return Err(GenerateError::InvalidParams("max_new_tokens must be positive"));
        }
        let temp_ok = |t: f64| t > 0.0 && t.is_finite();
        match self.strategy {
            Strategy::Greedy => Ok(()),
            Strategy::Temperature(t) if temp_ok(t) => Ok(()),
            Strategy::TopK { k, temperature } if k >= 1 && temp_ok(temperature) => Ok(()),
            Strategy::TopP { p, temperature } if p > 0.0 && p <= 1.0 && temp_ok(temperature) => Ok(()),
            _ => Err(GenerateError::InvalidParams("strategy parameters out of range")),
        }
    }
}

/// Weights to decode with: a base plus optional unmerged adapters.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub params: &'a ModelParameters,
    pub adapters: Option<&'a LoraAdapters>,
}

impl<'a> From<&'a Checkpoint> for Model<'a> {
    fn from(ckpt: &'a Checkpoint) -> Self {
        Self {
            params: &ckpt.params,
            adapters: ckpt.adapters.as_ref(),
        }
    }
}

impl<'a> From<&'a ModelParameters> for Model<'a> {
    fn from(params: &'a ModelParameters) -> Self {
        Self {
            params,
            adapters: None,
        }
    }
}

/// Seeded token sampler.
pub struct Sampler {
    strategy: Strategy,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Picks a token id from `logits`, never one listed in `banned`.
    pub fn sample(&mut self, logits: &[f64], banned: &[u32]) -> usize {
        let allowed = |i: usize| !banned.contains(&(i as u32));
        let temperature = match self.strategy {
            Strategy::Greedy => {
                let mut best = None;
                for (i, &v) in logits.iter().enumerate() {
                    if allowed(i) && best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                return best.map(|(i, _)| i).unwrap_or(0);
            }
            Strategy::Temperature(t) => t,
            Strategy::TopK { temperature, .. } | Strategy::TopP { temperature, .. } => temperature,
        };

        // Candidates sorted by descending probability; ties keep index order.
        let mut cand: Vec<(usize, f64)> = logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| allowed(i))
            .map(|(i, &v)| (i, v / temperature))
            .collect();
        if cand.is_empty() {
            return 0;
        }
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let max = cand[0].1;
        let mut total = 0.0;
        for c in cand.iter_mut() {
            c.1 = libm::exp(c.1 - max);
            total += c.1;
        }
        for c in cand.iter_mut() {
            c.1 /= total;
        }
        match self.strategy {
            Strategy::TopK { k, .. } => cand.truncate(k.max(1)),
            Strategy::TopP { p, .. } if p < 1.0 => {
                let mut cum = 0.0;
                let mut keep = cand.len();
                for (n, c) in cand.iter().enumerate() {
                    cum += c.1;
                    if cum >= p {
                        keep = n + 1;
                        break;
                    }
                }
                cand.truncate(keep);
            }
            _ => {}
        }
        let mass: f64 = cand.iter().map(|c| c.1).sum();
        let u = self.rng.random::<f64>() * mass;
        let mut cum = 0.0;
        for c in &cand {
            cum += c.1;
            if u < cum {
                return c.0;
            }
        }
        cand[cand.len() - 1].0
    }
}

/// Extends `prompt` one token at a time until EOS, `max_new_tokens`, or the
/// context is full. Returns only the new tokens, without EOS.
pub fn generate(
    model: Model<'_>,
    prompt: &[u32],
    gen: &GenerationParams,
    specials: SpecialIds,
) -> Result<TokenSequence, GenerateError> {
    gen.validate()?;
    if prompt.is_empty() {
        return Err(GenerateError::EmptyPrompt);
    }
    let context = model.params.config().context_length;
    if prompt.len() > context {
        return Err(ModelError::ContextOverflow {
            len: prompt.len(),
            max: context,
        }
        .into());
    }
    let mut sampler = Sampler::new(gen.strategy, gen.seed);
    let banned = [specials.bos, specials.pad];
    let mut tokens = prompt.to_vec();
    let mut out = TokenSequence::default();
    while out.len() < gen.max_new_tokens && tokens.len() < context {
        let logits = forward(model.params, model.adapters, &tokens, Mode::Eval)?;
        let next = sampler.sample(logits.row(tokens.len() - 1), &banned) as u32;
        if next == specials.eos {
            break;
        }
        tokens.push(next);
        out.push(next);
    }
    Ok(out)
}

/// The inference prompt: `[BOS] + encode(render_test(instruction))`.
pub fn encode_prompt(vocab: &Vocabulary, instruction: &str) -> Result<TokenSequence, GenerateError> {
    let mut prompt = TokenSequence::default();
    prompt.push(vocab.bos());
    prompt.extend_from_slice(&vocab.encode(&render_test(instruction)?));
    Ok(prompt)
}

/// Wraps the instruction, generates, and decodes the response.
pub fn answer(
    model: Model<'_>,
    vocab: &Vocabulary,
    instruction: &str,
    gen: &GenerationParams,
) -> Result<String, GenerateError> {
    let prompt = encode_prompt(vocab, instruction)?;
    let out = generate(model, &prompt, gen, SpecialIds::of(vocab))?;
    Ok(vocab.decode(&out)?)
}
