//! Allocation-only core of the lexforge pipeline.
//!
//! Everything here is pure computation over in-memory values: byte-level BPE,
//! a small reverse-mode autodiff tape, a pre-norm decoder-only transformer with
//! LoRA adapters, the two training objectives and AdamW, prompt templates and
//! instruction datasets, autoregressive sampling, and task scoring. File
//! formats, the augmentation ingest path and the CLI live in the `lexforge`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod generate;
pub mod lora;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use autodiff::{AutodiffError, Graph, Var};
pub use data::{InstructionRecord, Subset};
pub use generate::{GenerationParams, Strategy};
pub use lora::{LoraAdapters, LoraConfig, LoraTarget};
pub use model::{ModelParameters, Stage, TransformerConfig};
pub use tensor::Tensor;
pub use tokenizer::{TokenSequence, Vocabulary};
pub use train::{Checkpoint, TrainConfig, TrainExample};
