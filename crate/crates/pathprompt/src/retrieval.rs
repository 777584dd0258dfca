//! Retrieval stage: predict the hop count from the question, enumerate
//! relation links from the anchor entities, rank the links against the
//! question and instantiate the top links into a reasoning graph.
//!
//! All operations are pure given a graph and trained parameters, so
//! questions may be processed concurrently. Training itself is
//! single-threaded and seed-deterministic.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::kg::{EntityId, Fnv1a, KgError, KnowledgeGraph, ReasoningPath, RelationLink};
use crate::numerics::{checkpoint, cosine_lr, Adam, Graph, NumericsError, Optimizer, ParamSet, Reduction};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("question has no tokens after whitespace tokenization: `{0}`")]
    EmptyQuestion(String),
    #[error("question `{0}` is missing its gold hop count")]
    MissingGoldHops(String),
    #[error("cannot score an empty link set")]
    EmptyLinkSet,
    #[error("scorer produced a non-finite score for link {0:?}")]
    NonFiniteScore(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("question {line}: anchor `{label}` does not resolve in the graph")]
    UnresolvedAnchor { line: usize, label: String },
    #[error("question {line}: {reason}")]
    BadQuestionRecord { line: usize, reason: String },
    #[error("question must list at least one anchor entity")]
    NoAnchors,
    #[error("gold hop count {hops} exceeds the configured maximum {max}")]
    HopsOutOfRange { hops: usize, max: usize },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A dataset question: text, anchor entities resolved against the graph,
/// gold answer strings, and (for training data) the gold hop count.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub text: String,
    pub anchors: Vec<EntityId>,
    pub gold_answers: Vec<String>,
    pub gold_hops: Option<usize>,
}

#[derive(Deserialize)]
struct QuestionRecord {
    text: String,
    anchors: Vec<String>,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    hops: Option<usize>,
}

/// Load questions from JSON lines: `{"text":..,"anchors":[..],"answers":[..],"hops":..}`.
/// Anchor labels must resolve in `kg`.
pub fn load_questions_jsonl<R: BufRead>(reader: R, kg: &KnowledgeGraph) -> Result<Vec<Question>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QuestionRecord = serde_json::from_str(&line)
            .map_err(|e| RetrievalError::BadQuestionRecord { line: i + 1, reason: e.to_string() })?;
        if rec.anchors.is_empty() {
            return Err(RetrievalError::BadQuestionRecord { line: i + 1, reason: "no anchors".into() });
        }
        let mut anchors = Vec::with_capacity(rec.anchors.len());
        for label in &rec.anchors {
            let id = kg
                .entity_id(label)
                .ok_or_else(|| RetrievalError::UnresolvedAnchor { line: i + 1, label: label.clone() })?;
            anchors.push(id);
        }
        out.push(Question { text: rec.text, anchors, gold_answers: rec.answers, gold_hops: rec.hops });
    }
    Ok(out)
}

/// Lowercased whitespace tokens of a question.
pub fn question_tokens(text: &str) -> Vec<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}

/// Lowercased tokens of relation labels, split on '.', '_', '-' and whitespace.
/// Freebase-style labels are dot/underscore-delimited, so this exposes their
/// content words.
pub fn relation_label_tokens(labels: &[String]) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    for label in labels {
        for tok in label.to_lowercase().split(|c: char| c == '.' || c == '_' || c == '-' || c.is_whitespace()) {
            if !tok.is_empty() {
                tokens.insert(tok.to_string());
            }
        }
    }
    tokens
}

// ── hop classifier ───────────────────────────────────────────────────────

/// Bag-of-words question encoder with a linear softmax head over hop counts
/// `1..=max_hops`. The encoder is deliberately small; anything that produces
/// a fixed-width question vector can replace it behind `encode_question`.
#[derive(Debug, Clone)]
pub struct HopClassifier {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    params: ParamSet,
    d_q: usize,
    max_hops: usize,
}

/// Reserved id for out-of-vocabulary question tokens.
const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone)]
pub struct HopTrainConfig {
    pub d_q: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub max_hops: usize,
}

impl Default for HopTrainConfig {
    fn default() -> Self {
        HopTrainConfig { d_q: 32, epochs: 40, batch_size: 8, lr0: 2e-3, seed: 0, max_hops: 2 }
    }
}

impl HopClassifier {
    /// Freshly initialized classifier with a vocabulary built from `questions`.
    pub fn init(questions: &[Question], cfg: &HopTrainConfig) -> Result<Self, RetrievalError> {
        let mut vocab = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::from([(UNK_TOKEN.to_string(), 0usize)]);
        for q in questions {
            for tok in question_tokens(&q.text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), vocab.len());
                    vocab.push(tok);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        params.insert_uniform("q.table", vec![vocab.len(), cfg.d_q], cfg.d_q, &mut rng)?;
        params.insert_uniform("q.head.w", vec![cfg.d_q, cfg.max_hops], cfg.d_q, &mut rng)?;
        params.insert_zeros("q.head.b", vec![cfg.max_hops])?;
        Ok(HopClassifier { vocab, index, params, d_q: cfg.d_q, max_hops: cfg.max_hops })
    }

    pub fn max_hops(&self) -> usize {
        self.max_hops
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn token_ids(&self, text: &str) -> Result<Vec<usize>, RetrievalError> {
        let tokens = question_tokens(text);
        if tokens.is_empty() {
            return Err(RetrievalError::EmptyQuestion(text.to_string()));
        }
        Ok(tokens.iter().map(|t| self.index.get(t).copied().unwrap_or(0)).collect())
    }

    /// Mean of the question's token embedding rows.
    pub fn encode_question(&self, q: &Question) -> Result<Vec<f64>, RetrievalError> {
        let ids = self.token_ids(&q.text)?;
        let table = &self.params.get("q.table")?.value;
        let mut mean = vec![0.0; self.d_q];
        for &id in &ids {
            for c in 0..self.d_q {
                mean[c] += table.at(id, c);
            }
        }
        for v in mean.iter_mut() {
            *v /= ids.len() as f64;
        }
        Ok(mean)
    }

    /// Argmax hop count in `1..=max_hops`; ties break toward fewer hops.
    pub fn predict_hops(&self, q: &Question) -> Result<usize, RetrievalError> {
        let v = self.encode_question(q)?;
        let w = &self.params.get("q.head.w")?.value;
        let b = &self.params.get("q.head.b")?.value;
        let mut best = 0usize;
        let mut best_logit = f64::NEG_INFINITY;
        for h in 0..self.max_hops {
            let mut logit = b.data()[h];
            for c in 0..self.d_q {
                logit += v[c] * w.at(c, h);
            }
            if logit > best_logit {
                best_logit = logit;
                best = h;
            }
        }
        Ok(best + 1)
    }

    /// Fraction of `questions` whose gold hop count the classifier predicts.
    pub fn accuracy(&self, questions: &[Question]) -> Result<f64, RetrievalError> {
        let mut hits = 0usize;
        for q in questions {
            let gold = q.gold_hops.ok_or_else(|| RetrievalError::MissingGoldHops(q.text.clone()))?;
            if self.predict_hops(q)? == gold {
                hits += 1;
            }
        }
        Ok(hits as f64 / questions.len().max(1) as f64)
    }

    pub fn save(&self, ckpt_path: &Path, vocab_path: &Path) -> Result<(), RetrievalError> {
        let meta = vec![
            ("d_q".to_string(), self.d_q.to_string()),
            ("max_hops".to_string(), self.max_hops.to_string()),
        ];
        checkpoint::save(&self.params, &meta, ckpt_path)?;
        std::fs::write(vocab_path, self.vocab.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(ckpt_path: &Path, vocab_path: &Path) -> Result<Self, RetrievalError> {
        let ck = checkpoint::load(ckpt_path)?;
        let parse = |key: &str| -> Result<usize, RetrievalError> {
            ck.meta_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| RetrievalError::BadQuestionRecord { line: 0, reason: format!("checkpoint missing meta `{key}`") })
        };
        let d_q = parse("d_q")?;
        let max_hops = parse("max_hops")?;
        let vocab: Vec<String> =
            std::fs::read_to_string(vocab_path)?.lines().map(str::to_string).collect();
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut params = ParamSet::new();
        params.insert_zeros("q.table", vec![vocab.len(), d_q])?;
        params.insert_zeros("q.head.w", vec![d_q, max_hops])?;
        params.insert_zeros("q.head.b", vec![max_hops])?;
        ck.restore_into(&mut params)?;
        Ok(HopClassifier { vocab, index, params, d_q, max_hops })
    }
}

/// Train the hop classifier with cross-entropy, Adam and cosine annealing.
/// Returns the classifier and its final training-set accuracy.
pub fn train_hop_classifier(
    questions: &[Question],
    cfg: &HopTrainConfig,
) -> Result<(HopClassifier, f64), RetrievalError> {
    if questions.is_empty() {
        return Err(RetrievalError::EmptyDataset);
    }
    for q in questions {
        let hops = q.gold_hops.ok_or_else(|| RetrievalError::MissingGoldHops(q.text.clone()))?;
        if hops == 0 || hops > cfg.max_hops {
            return Err(RetrievalError::HopsOutOfRange { hops, max: cfg.max_hops });
        }
    }
    let mut clf = HopClassifier::init(questions, cfg)?;
    let token_ids: Vec<Vec<usize>> =
        questions.iter().map(|q| clf.token_ids(&q.text)).collect::<Result<_, _>>()?;
    let targets: Vec<usize> = questions.iter().map(|q| q.gold_hops.unwrap() - 1).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let mut order: Vec<usize> = (0..questions.len()).collect();
    let steps_per_epoch = questions.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut optimizer = Adam::default();
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let binding = clf.params.bind(&mut g);
            let table = binding.var("q.table")?;
            let head_w = binding.var("q.head.w")?;
            let head_b = binding.var("q.head.b")?;
            let mut rows = Vec::with_capacity(chunk.len());
            let mut batch_targets = Vec::with_capacity(chunk.len());
            for &qi in chunk {
                let emb = g.gather_rows(table, &token_ids[qi])?;
                let mean = g.mean_rows(emb)?;
                rows.push(g.reshape(mean, vec![1, clf.d_q])?);
                batch_targets.push(targets[qi]);
            }
            let x = g.concat(0, &rows)?;
            let logits = g.matmul(x, head_w)?;
            let logits = g.add_row(logits, head_b)?;
            let loss = g.cross_entropy_logits(logits, &batch_targets, Reduction::Mean)?;
            g.backward(loss)?;
            clf.params.accumulate_grads(&g, &binding)?;
            let lr = cosine_lr(step, total_steps, cfg.lr0)?;
            optimizer.step(&mut clf.params, lr)?;
            step += 1;
        }
    }
    let accuracy = clf.accuracy(questions)?;
    Ok((clf, accuracy))
}

// ── link scoring ─────────────────────────────────────────────────────────

/// A relation link with its question-relevance score (higher is better).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLink {
    pub link: RelationLink,
    pub score: f64,
}

/// Scores a relation link's relevance to a question.
pub trait LinkScorer {
    fn score(&self, question: &Question, link: &RelationLink, kg: &KnowledgeGraph) -> Result<f64, RetrievalError>;
}

/// Lexical overlap: `|tokens(question) ∩ tokens(link labels)| / |tokens(link labels)|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl LinkScorer for OverlapScorer {
    fn score(&self, question: &Question, link: &RelationLink, kg: &KnowledgeGraph) -> Result<f64, RetrievalError> {
        let labels = kg.link_labels(link)?;
        let label_tokens = relation_label_tokens(&labels);
        if label_tokens.is_empty() {
            return Ok(0.0);
        }
        let q_tokens: BTreeSet<String> = question_tokens(&question.text).into_iter().collect();
        let overlap = label_tokens.intersection(&q_tokens).count();
        Ok(overlap as f64 / label_tokens.len() as f64)
    }
}

/// Seeded uniform scores, independent of the question's semantics. Used by
/// the random-retrieval ablation; selection becomes a deterministic random
/// choice while every structural invariant of the pipeline still holds.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl LinkScorer for RandomScorer {
    fn score(&self, question: &Question, link: &RelationLink, _kg: &KnowledgeGraph) -> Result<f64, RetrievalError> {
        let mut h = Fnv1a::new();
        h.update(&self.seed.to_le_bytes());
        h.update(question.text.as_bytes());
        for r in link.relations() {
            h.update(&r.0.to_le_bytes());
        }
        Ok((h.finish() >> 11) as f64 / (1u64 << 53) as f64)
    }
}

/// Score and sort links descending; ties break lexicographically on the
/// link's relation-label sequence.
pub fn score_links(
    question: &Question,
    links: &[RelationLink],
    scorer: &dyn LinkScorer,
    kg: &KnowledgeGraph,
) -> Result<Vec<ScoredLink>, RetrievalError> {
    if links.is_empty() {
        return Err(RetrievalError::EmptyLinkSet);
    }
    let mut scored = Vec::with_capacity(links.len());
    for link in links {
        let score = scorer.score(question, link, kg)?;
        if !score.is_finite() {
            return Err(RetrievalError::NonFiniteScore(format!("{:?}", kg.link_labels(link)?)));
        }
        scored.push((kg.link_labels(link)?, ScoredLink { link: link.clone(), score }));
    }
    scored.sort_by(|(la, a), (lb, b)| {
        b.score.partial_cmp(&a.score).expect("finite scores").then_with(|| la.cmp(lb))
    });
    Ok(scored.into_iter().map(|(_, s)| s).collect())
}

// ── reasoning graph ──────────────────────────────────────────────────────

/// The per-question retrieval result: ranked selected links and the
/// reasoning paths instantiating them, in rank order.
#[derive(Debug, Clone)]
pub struct ReasoningGraph {
    pub question: Question,
    pub predicted_hops: usize,
    pub selected_links: Vec<ScoredLink>,
    pub paths: Vec<ReasoningPath>,
}

/// Enumerate links from every anchor up to `hops`, rank them, keep the top
/// `k` and instantiate at most `cap` paths per selected link, in rank order.
/// No links within the bound is a valid empty result, not an error.
pub fn retrieve_paths(
    kg: &KnowledgeGraph,
    question: &Question,
    hops: usize,
    scorer: &dyn LinkScorer,
    k: usize,
    cap: usize,
) -> Result<(Vec<ScoredLink>, Vec<ReasoningPath>), RetrievalError> {
    if question.anchors.is_empty() {
        return Err(RetrievalError::NoAnchors);
    }
    let mut union: BTreeSet<RelationLink> = BTreeSet::new();
    for &anchor in &question.anchors {
        union.extend(kg.enumerate_relation_links(anchor, hops)?);
    }
    if union.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let links: Vec<RelationLink> = union.into_iter().collect();
    let ranked = score_links(question, &links, scorer, kg)?;
    let selected: Vec<ScoredLink> = ranked.into_iter().take(k).collect();

    let mut paths = Vec::new();
    for scored in &selected {
        let mut per_link = Vec::new();
        for &anchor in &question.anchors {
            if per_link.len() >= cap {
                break;
            }
            let budget = cap - per_link.len();
            per_link.extend(kg.instantiate_paths(anchor, &scored.link, budget)?);
        }
        paths.extend(per_link);
    }
    Ok((selected, paths))
}

/// Compose the retrieval stage: hop prediction, link enumeration over all
/// anchors, scoring, top-`k` selection and path instantiation (at most `cap`
/// paths per link). Finding no links within the predicted hop bound yields
/// an empty reasoning graph rather than an error; the caller falls back to a
/// hard-prompt-only question.
pub fn build_reasoning_graph(
    kg: &KnowledgeGraph,
    question: &Question,
    classifier: &HopClassifier,
    scorer: &dyn LinkScorer,
    k: usize,
    cap: usize,
) -> Result<ReasoningGraph, RetrievalError> {
    let hops = classifier.predict_hops(question)?;
    let (selected_links, paths) = retrieve_paths(kg, question, hops, scorer, k, cap)?;
    Ok(ReasoningGraph { question: question.clone(), predicted_hops: hops, selected_links, paths })
}
