//! End-to-end orchestration: prompt assembly, adapter training against the
//! frozen backend, evaluation with accuracy and token-efficiency metrics,
//! ablation switches, synthetic benchmark generation and the command-line
//! interface.

pub mod answers;
pub mod bench;
pub mod cli;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod synth;
pub mod template;
pub mod train;

pub use answers::{hits_at_1, normalize_answer, parse_answer_list};
pub use bench::{
    pretrain_backend, run_mode, standard_benchmark, standard_synth_config, standard_train_config,
    AblationMode, ModeRun,
};
pub use cli::cli;
pub use config::{LossReduction, Schedule, TrainConfig};
pub use eval::{evaluate, EvalReport, QuestionTrace};
pub use gradcheck::{run_all as run_gradcheck, GradcheckReport};
pub use synth::{build_pretrain_corpus, generate as gen_synthetic, SynthConfig, SynthData};
pub use template::{render_paths_text, PromptTemplate};
pub use train::{train_adapter, StepLog, TrainLog, TrainOutcome};

use thiserror::Error;

use crate::adapter::AdapterError;
use crate::kg::KgError;
use crate::lm::LmError;
use crate::numerics::NumericsError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("template is missing the `{which}` placeholder")]
    MissingPlaceholder { which: String },
    #[error("template contains the `{which}` placeholder more than once")]
    DuplicatePlaceholder { which: String },
    #[error("gold answer set must be non-empty")]
    EmptyGold,
    #[error("training set is empty (or no question produced a reasoning graph)")]
    EmptyTrainset,
    #[error("evaluation set is empty")]
    EmptyTestset,
    #[error("training question `{0}` has no gold answers")]
    QuestionWithoutAnswers(String),
    #[error("question `{0}` has no gold hop count")]
    QuestionWithoutHops(String),
    #[error("frozen backend parameters changed during training")]
    FrozenLmViolation,
    #[error("incompatible components: {0}")]
    DimIncompatible(String),
    #[error("bad config: {detail}")]
    BadConfig { detail: String },
    #[error("cannot satisfy synthetic benchmark request: {detail}")]
    UnsatisfiableSynth { detail: String },
    #[error("bad report document: {detail}")]
    BadReport { detail: String },
    #[error("io error for {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
