//! End-to-end evaluation: retrieval, soft-prompt encoding, generation,
//! answer parsing and the accuracy/efficiency report.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::KnowledgeEmbedder;
use crate::kg::KnowledgeGraph;
use crate::lm::{FrozenLM, MixedPrompt};
use crate::retrieval::{build_reasoning_graph, HopClassifier, Question};

use super::answers::{hits_at_1, parse_answer_list};
use super::template::{render_paths_text, PromptTemplate};
use super::train::scorer_for;
use super::{HarnessError, TrainConfig};

/// Everything observed while answering one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTrace {
    pub question: String,
    pub predicted_hops: usize,
    pub selected_links: Vec<String>,
    pub n_paths: usize,
    /// Length of the embedding sequence actually passed to the backend.
    pub prompt_tokens: usize,
    /// Length the prompt would have had with paths rendered as label text.
    pub baseline_prompt_tokens: usize,
    pub fallback_hard_only: bool,
    pub generated: String,
    pub parsed_answers: Vec<String>,
    pub hit: bool,
}

/// Aggregate accuracy and efficiency metrics, plus per-question traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hits_at_1: f64,
    pub token_used: u64,
    pub requests: u64,
    /// `token_used / requests`.
    pub npr: f64,
    pub time_cost_ms: u64,
    /// Total prompt tokens of the textualized-paths baseline.
    pub textual_baseline_tokens: u64,
    pub empty_graph_fallbacks: u64,
    pub traces: Vec<QuestionTrace>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::BadReport { detail: e.to_string() })
    }

    /// The report without its traces, for the main report document.
    pub fn summary(&self) -> EvalReport {
        EvalReport { traces: Vec::new(), ..self.clone() }
    }

    /// Canonical form for determinism comparisons: wall-clock time is the
    /// one field allowed to vary between identical runs.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.time_cost_ms = 0;
        canon.to_json()
    }

    /// One trace per line.
    pub fn traces_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.traces {
            out.push_str(&serde_json::to_string(t).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

/// Run the full pipeline over `testset`. One generation request per
/// question; counted tokens equal the rendered embedding-sequence length.
pub fn evaluate(
    kg: &KnowledgeGraph,
    testset: &[Question],
    lm: &FrozenLM,
    adapter: &KnowledgeEmbedder,
    classifier: &HopClassifier,
    template: &PromptTemplate,
    cfg: &TrainConfig,
) -> Result<EvalReport, HarnessError> {
    if testset.is_empty() {
        return Err(HarnessError::EmptyTestset);
    }
    if adapter.config().d_lm != lm.d_model() {
        return Err(HarnessError::DimIncompatible(format!(
            "adapter emits {}-wide soft tokens, backend expects {}",
            adapter.config().d_lm,
            lm.d_model()
        )));
    }
    if adapter.vocab_hash() != kg.vocab_hash() {
        return Err(HarnessError::DimIncompatible(
            "adapter was trained against a different graph vocabulary".into(),
        ));
    }
    if classifier.max_hops() != cfg.max_hops {
        return Err(HarnessError::DimIncompatible(format!(
            "classifier predicts 1..={} hops, config expects 1..={}",
            classifier.max_hops(),
            cfg.max_hops
        )));
    }

    let scorer = scorer_for(cfg);
    let started = Instant::now();
    let mut hits = 0u64;
    let mut token_used = 0u64;
    let mut requests = 0u64;
    let mut textual_baseline_tokens = 0u64;
    let mut empty_graph_fallbacks = 0u64;
    let mut traces = Vec::with_capacity(testset.len());

    for q in testset {
        let rg = build_reasoning_graph(kg, q, classifier, scorer.as_ref(), cfg.k, cfg.path_cap)?;
        let fallback = rg.paths.is_empty();
        if fallback {
            empty_graph_fallbacks += 1;
        }
        let soft = if fallback { Vec::new() } else { adapter.encode_soft_prompt(&rg.paths)? };
        let hard = template.assemble(lm.tokenizer(), q)?;
        let prompt = MixedPrompt { hard, soft, allow_hard_fallback: fallback };
        let prompt_tokens = prompt.rendered_len();

        let generated_ids = lm.generate_greedy(&prompt, cfg.max_new_tokens)?;
        let generated = lm.tokenizer().decode(&generated_ids);
        let parsed = parse_answer_list(&generated);
        let hit = hits_at_1(&parsed, &q.gold_answers)? == 1;

        let graph_text = render_paths_text(kg, &rg.paths)?;
        let baseline_text = template.render_text(&q.text, &graph_text);
        let baseline_prompt_tokens = 1 + lm.tokenizer().encode(&baseline_text).len();

        hits += hit as u64;
        token_used += prompt_tokens as u64;
        requests += 1;
        textual_baseline_tokens += baseline_prompt_tokens as u64;

        let selected_links: Vec<String> = rg
            .selected_links
            .iter()
            .map(|s| kg.link_labels(&s.link).map(|l| l.join(" -> ")))
            .collect::<Result<_, _>>()?;
        traces.push(QuestionTrace {
            question: q.text.clone(),
            predicted_hops: rg.predicted_hops,
            selected_links,
            n_paths: rg.paths.len(),
            prompt_tokens,
            baseline_prompt_tokens,
            fallback_hard_only: fallback,
            generated,
            parsed_answers: parsed,
            hit,
        });
    }

    Ok(EvalReport {
        hits_at_1: hits as f64 / requests as f64,
        token_used,
        requests,
        npr: token_used as f64 / requests as f64,
        time_cost_ms: started.elapsed().as_millis() as u64,
        textual_baseline_tokens,
        empty_graph_fallbacks,
        traces,
    })
}
