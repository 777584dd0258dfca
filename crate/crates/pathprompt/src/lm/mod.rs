//! Small frozen decoder-only language model: tokenizer, soft-token
//! injection at the embedding layer, greedy generation and the answer
//! negative-log-likelihood used to train the knowledge adapter.

pub mod model;
pub mod pretrain;
pub mod tokenizer;

pub use model::{FrozenLM, LmConfig, MixedPrompt, SoftInput};
pub use pretrain::{pretrain_lm, LmTrainConfig};
pub use tokenizer::{Tokenizer, BOS, EOS, GRAPH_SLOT, UNK};

use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::numerics::{gradcheck, NumericsError, Reduction, Tensor};
use crate::retrieval::{LinkScorer, Question, RetrievalError};
use crate::kg::RelationLink;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("bad model config: {detail}")]
    BadConfig { detail: String },
    #[error("mixed prompt must contain exactly one graph slot, found {found}")]
    SlotCount { found: usize },
    #[error("soft vector has dimension {got}, model expects {expected}")]
    SoftDim { expected: usize, got: usize },
    #[error("mixed prompt has no soft vectors and hard-only fallback is not enabled")]
    NoSoftVectors,
    #[error("sequence of {len} embeddings exceeds the context window of {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("answer must be non-empty")]
    EmptyAnswer,
    #[error("cannot run the model on an empty sequence")]
    EmptySequence,
    #[error("token id {id} is outside the vocabulary")]
    UnknownToken { id: u32 },
    #[error("pretraining corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary file {path} is invalid: {detail}")]
    BadVocab { path: String, detail: String },
    #[error("io error for {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Scores a link by the mean log-likelihood of its relation labels read as a
/// continuation of the question. An alternative to the lexical scorer,
/// behind the same contract.
pub struct LmLikelihoodScorer<'a> {
    pub lm: &'a FrozenLM,
}

impl LinkScorer for LmLikelihoodScorer<'_> {
    fn score(&self, question: &Question, link: &RelationLink, kg: &KnowledgeGraph) -> Result<f64, RetrievalError> {
        let labels = kg.link_labels(link)?;
        let text = labels.join(" ");
        let tok = self.lm.tokenizer();
        let mut prefix = vec![BOS];
        prefix.extend(tok.encode(&question.text));
        let continuation = tok.encode(&text);
        if continuation.is_empty() {
            return Ok(f64::MIN / 2.0);
        }
        let mut ids = prefix.clone();
        ids.extend_from_slice(&continuation);
        let table = &self.lm.params().get("tok.table").map_err(NumericsError::from_unknown)?.value;
        let d = self.lm.d_model();
        let embeds: Vec<Vec<f64>> =
            ids.iter().map(|&id| table.data()[id as usize * d..(id as usize + 1) * d].to_vec()).collect();
        let logits = self.lm.forward(&embeds).map_err(|e| RetrievalError::BadQuestionRecord {
            line: 0,
            reason: format!("lm scorer failed: {e}"),
        })?;
        let mut total = 0.0;
        for (i, &target) in continuation.iter().enumerate() {
            let row = &logits[prefix.len() + i - 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += row[target as usize] - lse;
        }
        Ok(total / continuation.len() as f64)
    }
}

impl NumericsError {
    fn from_unknown(e: NumericsError) -> RetrievalError {
        RetrievalError::Numerics(e)
    }
}

/// Gradient-check the answer loss with respect to injected soft vectors on
/// a tiny model.
pub fn gradcheck_suite(seed: u64, cases: usize) -> Result<Vec<gradcheck::CheckResult>, LmError> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let corpus = vec![
        "alpha beta gamma delta".to_string(),
        "delta gamma beta alpha".to_string(),
        "alpha gamma alpha beta".to_string(),
    ];
    let cfg = LmConfig { d_model: 8, blocks: 2, heads: 2, context: 24 };
    let (lm, _) = pretrain_lm(&corpus, cfg, &LmTrainConfig { epochs: 2, lr0: 1e-3, seed, noise_std: 0.0 })?;
    let tok = lm.tokenizer().clone();

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let n_soft = rng.random_range(1..3usize);
        let softs: Vec<Tensor> = (0..n_soft)
            .map(|_| {
                let data: Vec<f64> = (0..lm.d_model()).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::vector(&data).expect("finite")
            })
            .collect();
        let mut hard = vec![BOS, tok.id("alpha").unwrap(), GRAPH_SLOT, tok.id("beta").unwrap()];
        if rng.random_bool(0.5) {
            hard.push(tok.id("gamma").unwrap());
        }
        let answer = vec![tok.id("delta").unwrap(), EOS];
        let err = gradcheck::check_grads(&softs, |g, vars| {
            let binding = lm.bind(g);
            lm.nll_on_graph(g, &binding, &hard, SoftInput::Vars(vars), &answer, Reduction::Mean, false)
                .map_err(|e| NumericsError::ShapeMismatch { op: "lm_nll".into(), detail: e.to_string() })
        })?;
        worst = worst.max(err);
    }
    Ok(vec![gradcheck::CheckResult { name: "lm_answer_nll_wrt_soft".into(), cases, max_rel_err: worst }])
}
