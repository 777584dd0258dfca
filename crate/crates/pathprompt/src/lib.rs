//! Knowledge-graph question answering with per-path soft prompts.
//!
//! The pipeline answers a natural-language question against an in-memory
//! triple store in three stages:
//!
//! 1. **Retrieve** ([`retrieval`], [`kg`]) — predict how many hops the
//!    question needs, enumerate relation links from its anchor entities with
//!    a depth-bounded search, rank the links against the question and
//!    instantiate the top links into concrete reasoning paths.
//! 2. **Embed** ([`adapter`], [`numerics`]) — a trainable knowledge adapter
//!    fuses each path's label text with its translational structure and
//!    compresses the path into a single vector, projected into the language
//!    model's embedding space. One soft token per path.
//! 3. **Reason** ([`lm`], [`harness`]) — the soft tokens are spliced into a
//!    hard prompt template and a frozen decoder language model generates the
//!    answer. Only the adapter (and the hop classifier) ever train.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example load_and_search      # triple store + link enumeration
//! cargo run --release --example hop_classifier       # question-to-hop-count classifier
//! cargo run --release --example retrieval_pipeline   # full retrieval stage on synthetic data
//! cargo run --release --example encode_paths         # knowledge adapter shapes and struct modes
//! cargo run --release --example soft_prompt_lm       # frozen LM with injected soft tokens
//! cargo run --release --example train_and_evaluate   # end-to-end training and evaluation
//! cargo run --release --example ablations            # no-struct / random-retrieve comparisons
//! cargo run --release --example gradcheck            # finite-difference gradient audit
//! ```
//!
//! The `pathprompt` binary wraps the same entry points behind subcommands
//! (`gen-data`, `pretrain-lm`, `train-hop`, `train-adapter`, `eval`,
//! `ablate`, `gradcheck`); see [`harness::cli`].

pub mod adapter;
pub mod harness;
pub mod kg;
pub mod lm;
pub mod numerics;
pub mod retrieval;

pub use adapter::{AdapterConfig, KnowledgeEmbedder, StructMode};
pub use harness::{EvalReport, PromptTemplate, TrainConfig};
pub use kg::{EntityId, KnowledgeGraph, ReasoningPath, RelationId, RelationLink, Triple};
pub use lm::{FrozenLM, MixedPrompt, Tokenizer};
pub use retrieval::{HopClassifier, Question, ReasoningGraph, ScoredLink};
