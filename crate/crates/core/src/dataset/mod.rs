//! Dataset loading, statistics, synthetic generation and fine-tune export.

use std::path::PathBuf;

use thiserror::Error;

use crate::model::{DocumentId, EventId, ValidationReport};

pub mod finetune;
pub mod io;
pub mod stats;
pub mod synth;

pub use finetune::{export_finetune_records, write_finetune_records, FinetuneOptions, FinetuneRecord};
pub use io::{
    load_dataset, load_dataset_from, temporal_split, write_dataset, DatasetManifest,
    SplitBoundaries,
};
pub use stats::{compute_stats, DatasetStats};
pub use synth::{generate_synthetic, PatternMix, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("duplicate event_id {0}")]
    DuplicateEventId(EventId),
    #[error("duplicate doc_id {0}")]
    DuplicateDocId(DocumentId),
    #[error("dataset failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Domain(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Bank(#[from] crate::question_bank::BankError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
}
