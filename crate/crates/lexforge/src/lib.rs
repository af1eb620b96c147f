//! File formats, the augmentation round trip, toy data and the command-line
//! driver around `lexforge-core`.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod fixtures;
pub mod report;
pub mod toy;
pub mod vocab_io;
