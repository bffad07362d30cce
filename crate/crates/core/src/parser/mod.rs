//! Deep biaffine dependency parser over POS tags, with optional typology
//! input features and selective-sharing arc biases.

mod checkpoint;
mod config;
mod features;
mod model;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::decode::DecodeError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SavedTrainer, CHECKPOINT_VERSION};
pub use config::{ParserConfig, TypologyMode};
pub use features::{Direction, SelectiveFeatures, TEMPLATES};
pub(crate) use model::argmax;
pub use model::{LanguageInputs, ParserParameters, ScoreMatrices};
pub use train::{
    finetune, FinetuneOutcome, LanguageSampler, LogRow, Trainer, TrainerState, TrainingData,
    FINETUNE_SENTENCES,
};

#[derive(Debug, Error)]
pub enum ParserError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0}")]
    Argument(String),
    #[error("label {0} not in the inventory")]
    Label(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
