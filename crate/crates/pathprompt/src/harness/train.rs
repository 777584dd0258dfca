//! Adapter training against a frozen generation backend.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterConfig, KnowledgeEmbedder};
use crate::kg::KnowledgeGraph;
use crate::lm::{FrozenLM, SoftInput, EOS};
use crate::numerics::{cosine_lr, Adam, Graph, Optimizer};
use crate::retrieval::{
    build_reasoning_graph, train_hop_classifier, HopClassifier, HopTrainConfig, LinkScorer,
    OverlapScorer, Question, RandomScorer, ReasoningGraph,
};

use super::answers::normalize_answer;
use super::config::Schedule;
use super::template::PromptTemplate;
use super::{HarnessError, TrainConfig};

#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub hop_accuracy: f64,
    /// Trainable adapter + classifier parameter count, reported against the
    /// (much larger) frozen backend parameter count.
    pub trainable_params: usize,
    pub lm_params: usize,
    pub skipped_empty_graphs: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub adapter: KnowledgeEmbedder,
    pub classifier: HopClassifier,
    pub log: TrainLog,
}

pub(crate) fn scorer_for(cfg: &TrainConfig) -> Box<dyn LinkScorer> {
    if cfg.random_retrieve {
        Box::new(RandomScorer { seed: cfg.seed })
    } else {
        Box::new(OverlapScorer)
    }
}

/// Warm-start the adapter so its untrained output already lives where the
/// backend reads token content.
///
/// * The label table becomes the backend's token embeddings (mean over each
///   label's tokens) — the stand-in for a pretrained text encoder.
/// * The text projection selects the fused tail-entity vector, the readout
///   token, aggregator and encoder feed-forward start silent, and the
///   attention value/output projections start as identities, so the encoder
///   initially passes `LN(mean of tail embeddings)` to the projector.
/// * The projector starts as a scaled near-identity, sized so soft tokens
///   match the magnitude of real token embeddings.
///
/// For a 1-hop path the initial soft token is then a scaled copy of the
/// answer entity's own embedding; training only has to refine from there
/// instead of discovering the read-out channel from random weights.
fn warm_start_adapter(
    adapter: &mut KnowledgeEmbedder,
    kg: &KnowledgeGraph,
    lm: &FrozenLM,
) -> Result<(), HarnessError> {
    let d = lm.d_model();
    let tok = lm.tokenizer();
    let table = lm.params().get("tok.table")?.value.clone();
    let mean_of_tokens = |label: &str| -> Vec<f64> {
        let ids = tok.encode(label);
        let mut mean = vec![0.0; d];
        for &id in &ids {
            for c in 0..d {
                mean[c] += table.at(id as usize, c);
            }
        }
        if !ids.is_empty() {
            for v in mean.iter_mut() {
                *v /= ids.len() as f64;
            }
        }
        mean
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(kg.entity_count() + kg.relation_count());
    for label in kg.entity_labels() {
        rows.push(mean_of_tokens(label));
    }
    for label in kg.relation_labels() {
        rows.push(mean_of_tokens(label));
    }
    let blocks = adapter.config().enc_blocks;
    let d_ff = adapter.config().d_ff;
    let params = adapter.params_mut();
    {
        let embed = params.get_mut("embed.table")?;
        for (r, row) in rows.iter().enumerate() {
            embed.value.data_mut()[r * d..(r + 1) * d].copy_from_slice(row);
        }
    }

    // Aggregator silent: structure joins in through training.
    params.get_mut("agg.w")?.value.data_mut().fill(0.0);
    // Text projection selects the tail-role block of [z_h ‖ z_r ‖ z_t].
    {
        let w = params.get_mut("enc.in.w")?;
        w.value.data_mut().fill(0.0);
        for c in 0..d {
            w.value.data_mut()[(2 * d + c) * d + c] = 1.0;
        }
    }
    params.get_mut("enc.readout")?.value.data_mut().fill(0.0);
    for b in 0..blocks {
        for name in [format!("enc.blk{b}.attn.wv"), format!("enc.blk{b}.attn.wo")] {
            let w = params.get_mut(&name)?;
            w.value.data_mut().fill(0.0);
            for c in 0..d {
                w.value.data_mut()[c * d + c] = 1.0;
            }
        }
        params.get_mut(&format!("enc.blk{b}.ff.w2"))?.value.data_mut().fill(0.0);
    }

    // Near-identity projector scaled to the token-embedding magnitude. The
    // encoder output is roughly LN(z_tail) / 3, with row norm sqrt(d), and
    // the first half of the hidden layer carries 0.5x through tanh.
    let mean_norm = {
        let mut total = 0.0;
        for r in 0..table.rows() {
            total += table.data()[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        total / table.rows() as f64
    };
    let target_norm = 1.5 * mean_norm;
    let gain = 3.0 * target_norm / (0.5 * (d as f64).sqrt());
    {
        let w1 = params.get_mut("proj.w1")?;
        for r in 0..d {
            for c in 0..d.min(d_ff) {
                w1.value.data_mut()[r * d_ff + c] = if r == c { 0.5 } else { 0.0 };
            }
        }
    }
    {
        let w2 = params.get_mut("proj.w2")?;
        w2.value.data_mut().fill(0.0);
        for r in 0..d.min(d_ff) {
            w2.value.data_mut()[r * d + r] = gain;
        }
    }
    Ok(())
}

/// Teacher-forcing target: the first retrieved path's terminal when it is a
/// gold answer (the knowledge the soft prompt actually carries), otherwise
/// the first gold answer.
fn target_answer(kg: &KnowledgeGraph, rg: &ReasoningGraph, question: &Question) -> Result<String, HarnessError> {
    if let Some(first) = rg.paths.first() {
        let label = kg.entity_label(first.terminal())?;
        let normalized = normalize_answer(label);
        if question.gold_answers.iter().any(|g| normalize_answer(g) == normalized) {
            return Ok(label.to_string());
        }
    }
    Ok(question.gold_answers[0].clone())
}

/// Train the hop classifier and the knowledge adapter on `trainset`,
/// leaving the backend untouched (verified by digest). Only adapter and
/// classifier parameters change.
pub fn train_adapter(
    kg: &KnowledgeGraph,
    trainset: &[Question],
    lm: &FrozenLM,
    template: &PromptTemplate,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if trainset.is_empty() {
        return Err(HarnessError::EmptyTrainset);
    }
    for q in trainset {
        if q.gold_answers.is_empty() {
            return Err(HarnessError::QuestionWithoutAnswers(q.text.clone()));
        }
    }
    let digest_before = lm.freeze_digest();

    let hop_cfg = HopTrainConfig {
        d_q: cfg.hop_d,
        epochs: cfg.hop_epochs,
        batch_size: 8,
        lr0: 2e-3,
        seed: cfg.seed,
        max_hops: cfg.max_hops,
    };
    let (classifier, hop_accuracy) = train_hop_classifier(trainset, &hop_cfg)?;

    let adapter_cfg = AdapterConfig {
        d: cfg.adapter_d,
        d_ff: cfg.adapter_ff,
        d_lm: lm.d_model(),
        max_hops: cfg.max_hops,
        heads: cfg.adapter_heads,
        enc_blocks: cfg.adapter_blocks,
        struct_mode: cfg.struct_mode,
        use_struct: !cfg.no_struct,
    };
    let mut adapter = KnowledgeEmbedder::new(kg, adapter_cfg, cfg.seed.wrapping_add(1))?;
    if cfg.init_labels_from_lm && cfg.adapter_d == lm.d_model() {
        warm_start_adapter(&mut adapter, kg, lm)?;
    }
    if !cfg.tune_label_table {
        adapter.params_mut().set_trainable_by_prefix("embed.table", false);
    }
    if cfg.no_train_encoder {
        adapter.freeze_encoder();
    }
    let scorer = scorer_for(cfg);

    // Retrieval is deterministic given the trained classifier, so reasoning
    // graphs, prompts and targets are computed once per question.
    struct Prepared {
        rg: ReasoningGraph,
        hard: Vec<u32>,
        answer_ids: Vec<u32>,
        /// Indices of paths whose terminal is a gold answer; any of them may
        /// lead the soft prompt (with the target following) when
        /// `rotate_gold_paths` is on.
        gold_paths: Vec<usize>,
    }
    let mut prepared: Vec<Prepared> = Vec::with_capacity(trainset.len());
    let mut skipped_empty_graphs = 0usize;
    for q in trainset {
        let rg = build_reasoning_graph(kg, q, &classifier, scorer.as_ref(), cfg.k, cfg.path_cap)?;
        if rg.paths.is_empty() {
            skipped_empty_graphs += 1;
            continue;
        }
        let hard = template.assemble(lm.tokenizer(), q)?;
        let mut answer_ids = lm.tokenizer().encode(&target_answer(kg, &rg, q)?);
        answer_ids.push(EOS);
        let gold_normalized: Vec<String> = q.gold_answers.iter().map(|g| normalize_answer(g)).collect();
        let mut gold_paths = Vec::new();
        for (i, p) in rg.paths.iter().enumerate() {
            let label = normalize_answer(kg.entity_label(p.terminal())?);
            if gold_normalized.iter().any(|g| *g == label) {
                gold_paths.push(i);
            }
        }
        prepared.push(Prepared { rg, hard, answer_ids, gold_paths });
    }
    if prepared.is_empty() {
        return Err(HarnessError::EmptyTrainset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7f4a_7c15);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let steps_per_epoch = prepared.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut optimizer = Adam::default();
    let mut steps = Vec::with_capacity(total_steps);
    let mut step = 0usize;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let adapter_vars = adapter.bind(&mut g);
            let lm_vars = lm.bind(&mut g);
            let mut losses = Vec::with_capacity(chunk.len());
            for &qi in chunk {
                let p = &prepared[qi];
                let mut soft = adapter.soft_prompt_on_graph(&mut g, &adapter_vars, &p.rg.paths)?;
                let mut answer_ids = p.answer_ids.clone();
                if cfg.rotate_gold_paths && p.gold_paths.len() > 1 {
                    let lead = p.gold_paths[rng.random_range(0..p.gold_paths.len())];
                    soft.swap(0, lead);
                    let label = kg.entity_label(p.rg.paths[lead].terminal())?;
                    answer_ids = lm.tokenizer().encode(label);
                    answer_ids.push(EOS);
                }
                let loss = lm.nll_on_graph(
                    &mut g,
                    &lm_vars,
                    &p.hard,
                    SoftInput::Vars(&soft),
                    &answer_ids,
                    cfg.loss_reduction.as_reduction(),
                    false,
                )?;
                losses.push(loss);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = g.add(total, l)?;
            }
            let batch_loss = g.scale(total, 1.0 / losses.len() as f64)?;
            g.backward(batch_loss)?;
            adapter.params_mut().accumulate_grads(&g, &adapter_vars)?;
            let lr = match cfg.schedule {
                Schedule::Cosine => cosine_lr(step, total_steps, cfg.lr0)?,
                Schedule::Constant => cfg.lr0,
            };
            optimizer.step(adapter.params_mut(), lr)?;
            steps.push(StepLog { step, lr, loss: g.value(batch_loss).item() });
            step += 1;
        }
    }

    if lm.freeze_digest() != digest_before {
        return Err(HarnessError::FrozenLmViolation);
    }

    let trainable_params = adapter.params().num_trainable_values() + classifier.params().num_values();
    let lm_params = lm.params().num_values();
    Ok(TrainOutcome {
        adapter,
        classifier,
        log: TrainLog { steps, hop_accuracy, trainable_params, lm_params, skipped_empty_graphs },
    })
}
