//! Two-stage LoRA training: pre-training on raw documents, then masked
//! instruction fine-tuning. Only adapter factors are updated; the base
//! weights passed in are never modified.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::lora::{LoraAdapters, LoraConfig};
use crate::loss::{lft_loss, LossError};
use crate::model::{forward_graph, GradMode, Mode, ModelError, ModelParameters, Stage};
use crate::optim::{clip_global_norm, AdamState, AdamW, OptimError};
use crate::tensor::Tensor;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("no training data")]
    NoData,
    #[error("stage {requested} needs weights from stage {expected}, got {found}")]
    StagePrecondition {
        requested: Stage,
        expected: Stage,
        found: Stage,
    },
    #[error("stage {0} cannot be trained")]
    UntrainableStage(Stage),
    #[error("fine-tuning needs instruction examples, not raw documents")]
    DocumentsForFineTuning,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lora: LoraConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    /// Pre-training defaults: lr 3e-4, batch 128, one epoch.
    pub fn lpt(seed: u64) -> Self {
        Self {
            stage: Stage::Lpt,
            lora: LoraConfig::lpt(),
            learning_rate: 3e-4,
            batch_size: 128,
            epochs: 1,
            seed,
            grad_clip: None,
        }
    }

    /// Fine-tuning defaults: lr 3e-4, batch 64, twenty epochs.
    pub fn lft(seed: u64) -> Self {
        Self {
            stage: Stage::Lft,
            lora: LoraConfig::lft(),
            learning_rate: 3e-4,
            batch_size: 64,
            epochs: 20,
            seed,
            grad_clip: None,
        }
    }

    pub fn defaults_for(stage: Stage, seed: u64) -> Option<Self> {
        match stage {
            Stage::Lpt => Some(Self::lpt(seed)),
            Stage::Lft => Some(Self::lft(seed)),
            Stage::Base => None,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive"));
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0 || c.is_nan()) {
            return Err(TrainError::InvalidConfig("gradient clip must be positive"));
        }
        self.lora.validate()?;
        Ok(())
    }
}

/// A tokenized training sequence and the positions whose tokens are predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub tokens: TokenSequence,
    /// Sorted, each index in `1..tokens.len()`.
    pub output_index_set: Vec<usize>,
}

impl TrainExample {
    /// An example whose every position after the first is a target.
    pub fn full(tokens: TokenSequence) -> Self {
        let output_index_set = (1..tokens.len()).collect();
        Self {
            tokens,
            output_index_set,
        }
    }
}

/// Token ids the training loop needs to know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
}

impl SpecialIds {
    pub fn of(vocab: &crate::tokenizer::Vocabulary) -> Self {
        Self {
            bos: vocab.bos(),
            eos: vocab.eos(),
            pad: vocab.pad(),
        }
    }
}

pub enum TrainData {
    /// Raw documents, without BOS. Split into context-sized windows.
    Documents(Vec<TokenSequence>),
    /// Instruction examples with output index sets.
    Examples(Vec<TrainExample>),
}

/// Trained (or untouched) weights plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    /// Base weights, exactly as passed to the stage.
    pub params: ModelParameters,
    pub adapters: Option<LoraAdapters>,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    /// A checkpoint holding untrained base weights.
    pub fn base(params: ModelParameters, seed: u64) -> Self {
        Self {
            stage: params.stage(),
            params,
            adapters: None,
            step: 0,
            seed,
        }
    }

    /// Folds any adapters into the weights.
    pub fn merged(&self) -> Result<Checkpoint, ModelError> {
        let params = match &self.adapters {
            Some(a) => crate::lora::merge_lora(&self.params, a)?,
            None => self.params.clone(),
        };
        Ok(Checkpoint {
            stage: self.stage,
            params,
            adapters: None,
            step: self.step,
            seed: self.seed,
        })
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.stage == other.stage
            && self.step == other.step
            && self.seed == other.seed
            && self.params.bit_eq(&other.params)
            && match (&self.adapters, &other.adapters) {
                (Some(a), Some(b)) => a.bit_eq(b),
                (None, None) => true,
                _ => false,
            }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub sequences: usize,
    pub dropped: usize,
    pub steps: u64,
    /// Mean loss of each optimizer step's batch.
    pub step_losses: Vec<f64>,
}

/// Splits a document into `[BOS] + chunk` windows of at most `context` tokens.
pub fn document_windows(doc: &[u32], context: usize, bos: u32) -> Vec<TrainExample> {
    doc.chunks(context - 1)
        .map(|chunk| {
            let mut tokens = TokenSequence::new(Vec::with_capacity(chunk.len() + 1));
            tokens.push(bos);
            tokens.extend_from_slice(chunk);
            TrainExample::full(tokens)
        })
        .collect()
}

fn prepare(
    stage: Stage,
    data: TrainData,
    context: usize,
    specials: SpecialIds,
) -> Result<(Vec<TrainExample>, usize), TrainError> {
    match data {
        TrainData::Documents(_) if stage == Stage::Lft => Err(TrainError::DocumentsForFineTuning),
        TrainData::Documents(docs) => Ok((
            docs.iter()
                .filter(|d| !d.is_empty())
                .flat_map(|d| document_windows(d, context, specials.bos))
                .collect(),
            0,
        )),
        TrainData::Examples(examples) => {
            let total = examples.len();
            let kept: Vec<TrainExample> = examples
                .into_iter()
                .filter(|e| e.tokens.len() <= context && e.tokens.len() >= 2)
                .map(|e| if stage == Stage::Lpt { TrainExample::full(e.tokens) } else { e })
                .collect();
            let dropped = total - kept.len();
            if dropped > 0 {
                log::warn!("dropped {dropped} of {total} examples longer than the context of {context} tokens");
            }
            Ok((kept, dropped))
        }
    }
}

fn adapter_tensors_mut(adapters: &mut LoraAdapters) -> Vec<&mut Tensor> {
    adapters
        .factors_mut()
        .values_mut()
        .flat_map(|p| [&mut p.a, &mut p.b])
        .collect()
}

/// Trains fresh adapters for `config.stage` on top of the frozen `init`.
///
/// Fine-tuning expects `init` to carry the pre-training stage tag, i.e. the
/// stage-one adapters have already been merged.
pub fn run_stage(
    config: &TrainConfig,
    data: TrainData,
    init: &ModelParameters,
    specials: SpecialIds,
) -> Result<(Checkpoint, StageReport), TrainError> {
    config.validate()?;
    let expected = match config.stage {
        Stage::Lpt => Stage::Base,
        Stage::Lft => Stage::Lpt,
        Stage::Base => return Err(TrainError::UntrainableStage(Stage::Base)),
    };
    if init.stage() != expected {
        return Err(TrainError::StagePrecondition {
            requested: config.stage,
            expected,
            found: init.stage(),
        });
    }
    let context = init.config().context_length;
    let (examples, dropped) = prepare(config.stage, data, context, specials)?;
    if examples.is_empty() {
        return Err(TrainError::NoData);
    }

    let mut adapters = LoraAdapters::new(init, config.lora.clone(), config.stage, config.seed)?;
    let sizes: Vec<usize> = adapter_tensors_mut(&mut adapters).iter().map(|t| t.len()).collect();
    let mut state = AdamState::new(&sizes);
    let optimizer = AdamW::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = StageReport {
        sequences: examples.len(),
        dropped,
        ..StageReport::default()
    };

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let max_len = batch.iter().map(|&i| examples[i].tokens.len()).max().unwrap_or(0);
            let weight = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = sizes.iter().map(|&n| Tensor::zeros(&[n])).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &examples[i];
                let mut row = ex.tokens.ids().to_vec();
                let mut valid = alloc::vec![true; row.len()];
                row.resize(max_len, specials.pad);
                valid.resize(max_len, false);
                let mut fwd = forward_graph(
                    init,
                    Some(&adapters),
                    &row,
                    Some(&valid),
                    Mode::Train(&mut rng),
                    GradMode::Adapters,
                )?;
                let loss = lft_loss(&mut fwd.graph, fwd.logits, &row, &ex.output_index_set)?;
                batch_loss += fwd.graph.value(loss).data()[0] * weight;
                fwd.graph.backward_with_seed(loss, weight)?;
                let slots = fwd.adapter_grads().into_values().flat_map(|(a, b)| [a, b]);
                for (acc, g) in grads.iter_mut().zip(slots) {
                    for (x, y) in acc.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            if let Some(max_norm) = config.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            let mut params = adapter_tensors_mut(&mut adapters);
            optimizer.step(&mut params, &grads, &mut state, config.learning_rate)?;
            report.steps += 1;
            report.step_losses.push(batch_loss);
        }
    }

    Ok((
        Checkpoint {
            stage: config.stage,
            params: init.clone(),
            adapters: Some(adapters),
            step: report.steps,
            seed: config.seed,
        },
        report,
    ))
}

/// Eval-mode mean of the per-example masked losses.
pub fn mean_masked_loss(
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    examples: &[TrainExample],
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut total = 0.0;
    for ex in examples {
        let mut fwd = forward_graph(params, adapters, &ex.tokens, None, Mode::Eval, GradMode::None)?;
        let loss = lft_loss(&mut fwd.graph, fwd.logits, &ex.tokens, &ex.output_index_set)?;
        total += fwd.graph.value(loss).data()[0];
    }
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransformerConfig;

    fn cfg() -> TransformerConfig {
        TransformerConfig {
            vocab_size: 16,
            context_length: 8,
            layers: 1,
            heads: 2,
            embed_dim: 8,
            mlp_hidden_dim: 8,
        }
    }

    const SPECIALS: SpecialIds = SpecialIds { bos: 13, eos: 14, pad: 15 };

    fn small(stage: Stage) -> TrainConfig {
        let mut c = TrainConfig::defaults_for(stage, 3).unwrap();
        c.lora.rank = 2;
        c.batch_size = 2;
        c.learning_rate = 1e-2;
        c
    }

    fn docs() -> TrainData {
        TrainData::Documents(alloc::vec![
            TokenSequence::new(alloc::vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
            TokenSequence::new(alloc::vec![4, 4, 4]),
        ])
    }

    #[test]
    fn defaults() {
        let lpt = TrainConfig::lpt(0);
        assert_eq!((lpt.learning_rate, lpt.batch_size, lpt.epochs), (3e-4, 128, 1));
        assert_eq!(lpt.lora, LoraConfig::lpt());
        let lft = TrainConfig::lft(0);
        assert_eq!((lft.learning_rate, lft.batch_size, lft.epochs), (3e-4, 64, 20));
        assert_eq!(lft.lora, LoraConfig::lft());
    }

    #[test]
    fn windows_are_non_overlapping_with_bos() {
        let w = document_windows(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], 4, 99);
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].tokens.ids(), &[99, 1, 2, 3]);
        assert_eq!(w[3].tokens.ids(), &[99, 10, 11]);
        assert_eq!(w[3].output_index_set, alloc::vec![1, 2]);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let init = ModelParameters::init(cfg(), 1).unwrap();
        let mut c = small(Stage::Lpt);
        c.epochs = 0;
        let (ckpt, report) = run_stage(&c, docs(), &init, SPECIALS).unwrap();
        assert!(ckpt.params.bit_eq(&init));
        assert_eq!(report.steps, 0);
        let fresh = LoraAdapters::new(&init, c.lora.clone(), Stage::Lpt, c.seed).unwrap();
        assert!(ckpt.adapters.unwrap().bit_eq(&fresh));
    }

    #[test]
    fn base_is_frozen_and_runs_repeat() {
        let init = ModelParameters::init(cfg(), 1).unwrap();
        let c = small(Stage::Lpt);
        let (a, ra) = run_stage(&c, docs(), &init, SPECIALS).unwrap();
        let (b, _) = run_stage(&c, docs(), &init, SPECIALS).unwrap();
        assert!(a.params.bit_eq(&init));
        assert!(a.bit_eq(&b));
        assert_eq!(a.stage, Stage::Lpt);
        assert_eq!(ra.sequences, 3);
        assert_eq!(ra.steps, 2);
        // Adapters actually moved.
        let fresh = LoraAdapters::new(&init, c.lora.clone(), Stage::Lpt, c.seed).unwrap();
        assert!(!a.adapters.unwrap().bit_eq(&fresh));
    }

    #[test]
    fn stage_preconditions() {
        let init = ModelParameters::init(cfg(), 1).unwrap();
        let err = run_stage(&small(Stage::Lft), TrainData::Examples(alloc::vec![]), &init, SPECIALS);
        assert!(matches!(err, Err(TrainError::StagePrecondition { found: Stage::Base, .. })));
        let err = run_stage(&small(Stage::Lpt), TrainData::Documents(alloc::vec![]), &init, SPECIALS);
        assert_eq!(err.unwrap_err(), TrainError::NoData);
        let lpt = init.clone().with_stage(Stage::Lpt);
        let err = run_stage(&small(Stage::Lft), docs(), &lpt, SPECIALS);
        assert_eq!(err.unwrap_err(), TrainError::DocumentsForFineTuning);
    }

    #[test]
    fn long_examples_are_dropped() {
        let init = ModelParameters::init(cfg(), 1).unwrap().with_stage(Stage::Lpt);
        let ok = TrainExample {
            tokens: TokenSequence::new(alloc::vec![13, 1, 2, 3, 14]),
            output_index_set: alloc::vec![3, 4],
        };
        let long = TrainExample {
            tokens: TokenSequence::new(alloc::vec![13; 9]),
            output_index_set: alloc::vec![8],
        };
        let (_, report) =
            run_stage(&small(Stage::Lft), TrainData::Examples(alloc::vec![ok, long]), &init, SPECIALS).unwrap();
        assert_eq!(report.dropped, 1);
        assert_eq!(report.sequences, 1);
    }

    #[test]
    fn padding_does_not_change_gradients() {
        // One batch with a short and a long example must match the sum of
        // the two examples trained one at a time with the same weights.
        let init = ModelParameters::init(cfg(), 2).unwrap().with_stage(Stage::Lpt);
        let mut adapters = LoraAdapters::new(&init, LoraConfig { rank: 2, dropout: 0.0, ..LoraConfig::lft() }, Stage::Lft, 0).unwrap();
        for p in adapters.factors_mut().values_mut() {
            p.b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * i as f64);
        }
        let short = [13u32, 1, 2];
        let padded = [13u32, 1, 2, 15, 15];
        let grad = |tokens: &[u32], valid: Option<&[bool]>| {
            let mut fwd = forward_graph(&init, Some(&adapters), tokens, valid, Mode::Eval, GradMode::Adapters).unwrap();
            let loss = lft_loss(&mut fwd.graph, fwd.logits, tokens, &[1, 2]).unwrap();
            fwd.graph.backward(loss).unwrap();
            (fwd.graph.value(loss).data()[0], fwd.adapter_grads())
        };
        let (la, ga) = grad(&short, None);
        let (lb, gb) = grad(&padded, Some(&[true, true, true, false, false]));
        assert_eq!(la, lb);
        for (name, (a, b)) in &ga {
            assert!(a.max_abs_diff(&gb[name].0) < 1e-15);
            assert!(b.max_abs_diff(&gb[name].1) < 1e-15);
        }
    }
}
