//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `--nocapture`). Heavy artifacts (pretrained backend,
//! trained adapters) are built once per seed and shared across criteria.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use pathprompt::adapter::{AdapterConfig, KnowledgeEmbedder, StructMode};
use pathprompt::harness::{
    pretrain_backend, run_gradcheck, run_mode, standard_benchmark, standard_train_config,
    AblationMode, ModeRun, PromptTemplate, SynthData, TrainConfig,
};
use pathprompt::kg::{EntityId, KnowledgeGraph, ReasoningPath, RelationLink};
use pathprompt::lm::{FrozenLM, SoftInput, EOS};
use pathprompt::numerics::{Graph, Reduction, Tensor};
use pathprompt::retrieval::{train_hop_classifier, HopTrainConfig, Question};

// ── shared artifacts ─────────────────────────────────────────────────────

struct SeedArtifacts {
    data: SynthData,
    lm: FrozenLM,
    template: PromptTemplate,
    cfg: TrainConfig,
    backend_secs: f64,
}

struct TimedRun {
    run: ModeRun,
    train_secs: f64,
}

fn backend_cache() -> &'static Mutex<HashMap<u64, Arc<SeedArtifacts>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<SeedArtifacts>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn run_cache() -> &'static Mutex<HashMap<(u64, &'static str), Arc<TimedRun>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u64, &'static str), Arc<TimedRun>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn artifacts(seed: u64) -> Arc<SeedArtifacts> {
    let mut cache = backend_cache().lock().unwrap();
    if let Some(a) = cache.get(&seed) {
        return Arc::clone(a);
    }
    let started = Instant::now();
    let data = standard_benchmark(seed).expect("benchmark generation");
    let template = PromptTemplate::default_template();
    let cfg = standard_train_config(seed);
    let lm = pretrain_backend(&data, &template, &cfg).expect("backend pretraining");
    let a = Arc::new(SeedArtifacts {
        data,
        lm,
        template,
        cfg,
        backend_secs: started.elapsed().as_secs_f64(),
    });
    cache.insert(seed, Arc::clone(&a));
    a
}

fn trained(seed: u64, mode: AblationMode) -> Arc<TimedRun> {
    {
        let cache = run_cache().lock().unwrap();
        if let Some(r) = cache.get(&(seed, mode.as_str())) {
            return Arc::clone(r);
        }
    }
    let a = artifacts(seed);
    let started = Instant::now();
    let run = run_mode(&a.data, &a.lm, &a.template, &a.cfg, mode).expect("training run");
    let timed = Arc::new(TimedRun { run, train_secs: started.elapsed().as_secs_f64() });
    run_cache().lock().unwrap().insert((seed, mode.as_str()), Arc::clone(&timed));
    timed
}

fn verdict(criterion: usize, name: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {criterion} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

// ── criterion 1: retrieval oracle equivalence ────────────────────────────

/// Enumerate every path of length <= depth by scanning the raw triple list,
/// never touching the adjacency index.
fn brute_force_paths(kg: &KnowledgeGraph, anchor: EntityId, depth: usize) -> Vec<ReasoningPath> {
    let mut complete = Vec::new();
    let mut frontier = vec![ReasoningPath { origin: anchor, steps: vec![] }];
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &frontier {
            let at = p.terminal();
            for t in kg.triples() {
                if t.head == at {
                    let mut steps = p.steps.clone();
                    steps.push((t.relation, t.tail));
                    next.push(ReasoningPath { origin: anchor, steps });
                }
            }
        }
        complete.extend(next.iter().cloned());
        frontier = next;
    }
    complete
}

fn brute_force_links(kg: &KnowledgeGraph, anchor: EntityId, depth: usize) -> Vec<RelationLink> {
    let mut links: Vec<RelationLink> =
        brute_force_paths(kg, anchor, depth).iter().map(|p| p.link()).collect();
    links.sort_unstable_by(|a, b| (a.len(), &a.0).cmp(&(b.len(), &b.0)));
    links.dedup();
    links
}

#[test]
fn criterion_1_retrieval_matches_brute_force_oracle() {
    use rand::{Rng, SeedableRng};
    let started = Instant::now();
    let mut graphs = 0usize;
    let mut checked_links = 0usize;
    for seed in 0..120u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_e = rng.random_range(2..=10usize);
        let n_r = rng.random_range(1..=3usize);
        let n_t = rng.random_range(1..=(3 * n_e));
        let mut text = String::new();
        for _ in 0..n_t {
            text.push_str(&format!(
                "e{}\tr{}\te{}\n",
                rng.random_range(0..n_e),
                rng.random_range(0..n_r),
                rng.random_range(0..n_e)
            ));
        }
        let kg = KnowledgeGraph::load_triples(std::io::Cursor::new(text)).unwrap();
        let anchor = EntityId(0);
        let fast = kg.enumerate_relation_links(anchor, 3).unwrap();
        let slow = brute_force_links(&kg, anchor, 3);
        assert_eq!(fast, slow, "link sets differ on graph seed {seed}");

        let all_paths = brute_force_paths(&kg, anchor, 3);
        for link in &fast {
            let mut got = kg.instantiate_paths(anchor, link, usize::MAX).unwrap();
            let mut want: Vec<ReasoningPath> =
                all_paths.iter().filter(|p| &p.link() == link).cloned().collect();
            got.sort_unstable();
            want.sort_unstable();
            want.dedup();
            assert_eq!(got, want, "paths differ on graph seed {seed} link {link:?}");
            checked_links += 1;
        }
        graphs += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        1,
        "retrieval oracle equivalence",
        graphs >= 100 && secs < 60.0,
        &format!("{graphs} graphs, {checked_links} links, exact match, {secs:.1}s"),
    );
}

// ── criterion 2: gradient correctness ────────────────────────────────────

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let started = Instant::now();
    let report = run_gradcheck(17, 20).expect("gradcheck");
    let secs = started.elapsed().as_secs_f64();
    let pass = report.max_rel_err < 1e-4 && secs < 120.0;
    verdict(
        2,
        "gradient correctness",
        pass,
        &format!(
            "{} suites, max rel err {:.3e} (tolerance 1e-4), {secs:.1}s",
            report.results.len(),
            report.max_rel_err
        ),
    );
}

// ── criterion 3: frozen backend guarantee ────────────────────────────────

#[test]
fn criterion_3_backend_frozen_and_adapter_gradients_flow() {
    let a = artifacts(0);
    let digest_before = a.lm.freeze_digest();
    let run = trained(0, AblationMode::Full);
    let digest_after = a.lm.freeze_digest();
    let frozen = digest_before == digest_after;

    // Gradient partition on a generic batch: a fresh all-trainable adapter
    // shows nonzero gradients in every parameter group, while the frozen
    // backend's leaves never grow gradient buffers.
    let adapter = KnowledgeEmbedder::new(
        &a.data.kg,
        AdapterConfig {
            d: a.cfg.adapter_d,
            d_ff: a.cfg.adapter_ff,
            d_lm: a.lm.d_model(),
            max_hops: a.cfg.max_hops,
            heads: a.cfg.adapter_heads,
            enc_blocks: a.cfg.adapter_blocks,
            struct_mode: StructMode::HPlusRMinusT,
            use_struct: true,
        },
        99,
    )
    .unwrap();
    let mut g = Graph::new();
    let adapter_vars = adapter.bind(&mut g);
    let lm_vars = a.lm.bind(&mut g);
    let mut loss = None;
    for q in a.data.train.iter().take(4) {
        let rg = pathprompt::retrieval::build_reasoning_graph(
            &a.data.kg,
            q,
            &run.run.outcome.classifier,
            &pathprompt::retrieval::OverlapScorer,
            a.cfg.k,
            a.cfg.path_cap,
        )
        .unwrap();
        if rg.paths.is_empty() {
            continue;
        }
        let soft = adapter.soft_prompt_on_graph(&mut g, &adapter_vars, &rg.paths).unwrap();
        let hard = a.template.assemble(a.lm.tokenizer(), q).unwrap();
        let mut answer = a.lm.tokenizer().encode(&q.gold_answers[0]);
        answer.push(EOS);
        let nll = a
            .lm
            .nll_on_graph(&mut g, &lm_vars, &hard, SoftInput::Vars(&soft), &answer, Reduction::Mean, false)
            .unwrap();
        loss = Some(match loss {
            None => nll,
            Some(prev) => g.add(prev, nll).unwrap(),
        });
    }
    g.backward(loss.expect("batch produced a loss")).unwrap();

    let groups = ["embed.", "agg.", "enc.in", "enc.readout", "enc.blk0", "proj."];
    let mut all_nonzero = true;
    let mut norms = Vec::new();
    for group in groups {
        let mut norm = 0.0f64;
        for p in adapter.params().iter().filter(|p| p.name.starts_with(group)) {
            if let Some(grad) = g.grad(adapter_vars.var(&p.name).unwrap()) {
                norm += grad.data().iter().map(|x| x * x).sum::<f64>();
            }
        }
        norms.push(format!("{group}={:.2e}", norm.sqrt()));
        all_nonzero &= norm > 0.0 && norm.is_finite();
    }
    let mut lm_has_no_grads = true;
    for p in a.lm.params().iter() {
        lm_has_no_grads &= g.grad(lm_vars.var(&p.name).unwrap()).is_none();
    }

    verdict(
        3,
        "frozen backend guarantee",
        frozen && all_nonzero && lm_has_no_grads,
        &format!(
            "digest {} over {} steps, adapter grad norms [{}], backend grad buffers absent: {}",
            if frozen { "unchanged" } else { "CHANGED" },
            run.run.outcome.log.steps.len(),
            norms.join(", "),
            lm_has_no_grads
        ),
    );
}

// ── criterion 4: structure-encoder ablation mechanics ────────────────────

#[test]
fn criterion_4_struct_modes_reversal_behavior() {
    use rand::{Rng, SeedableRng};
    let kg = KnowledgeGraph::from_labeled_triples([("a", "r", "b")].into_iter());
    let additive = KnowledgeEmbedder::new(
        &kg,
        AdapterConfig { d: 8, d_ff: 8, d_lm: 8, max_hops: 2, heads: 2, enc_blocks: 1, struct_mode: StructMode::HPlusRPlusT, use_struct: true },
        0,
    )
    .unwrap();
    let translational = KnowledgeEmbedder::new(
        &kg,
        AdapterConfig { d: 8, d_ff: 8, d_lm: 8, max_hops: 2, heads: 2, enc_blocks: 1, struct_mode: StructMode::HPlusRMinusT, use_struct: true },
        0,
    )
    .unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut cases = 0usize;
    for _ in 0..200 {
        let rand_vec = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()
        };
        let (h, r, t) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
        let mut g = Graph::new();
        let vh = g.constant(Tensor::vector(&h).unwrap());
        let vr = g.constant(Tensor::vector(&r).unwrap());
        let vt = g.constant(Tensor::vector(&t).unwrap());

        // Additive mode: exactly invariant under reversal.
        let fwd = additive.struct_embed(&mut g, vh, vr, vt).unwrap();
        let rev = additive.struct_embed(&mut g, vt, vr, vh).unwrap();
        assert_eq!(g.value(fwd).data(), g.value(rev).data(), "additive mode broke reversal invariance");

        // Translational mode: differs whenever h != t (difference is 2(h-t)).
        let fwd = translational.struct_embed(&mut g, vh, vr, vt).unwrap();
        let rev = translational.struct_embed(&mut g, vt, vr, vh).unwrap();
        assert_ne!(g.value(fwd).data(), g.value(rev).data(), "translational mode ignored order");
        for i in 0..8 {
            let diff = g.value(fwd).data()[i] - g.value(rev).data()[i];
            assert!((diff - 2.0 * (h[i] - t[i])).abs() < 1e-12);
        }

        // Equal endpoints collapse both modes to symmetry.
        let same = translational.struct_embed(&mut g, vh, vr, vh).unwrap();
        let same_rev = translational.struct_embed(&mut g, vh, vr, vh).unwrap();
        assert_eq!(g.value(same).data(), g.value(same_rev).data());
        cases += 1;
    }
    verdict(4, "structure-encoder reversal mechanics", cases == 200, &format!("{cases} seeded instances verified exactly"));
}

// ── criterion 5: end-to-end overfit and margin over random retrieval ─────

#[test]
fn criterion_5_end_to_end_overfit_beats_random_retrieval() {
    let full = trained(0, AblationMode::Full);
    let random = trained(0, AblationMode::RandomRetrieve);
    let a = artifacts(0);
    let steps = full.run.outcome.log.steps.len();
    let train_hits = full.run.train_report.hits_at_1;
    let margin = full.run.test_report.hits_at_1 - random.run.test_report.hits_at_1;
    let build_secs = a.backend_secs + full.train_secs + random.train_secs;
    let pass = steps <= 300 && train_hits >= 0.9 && margin >= 0.15 && build_secs < 600.0;
    verdict(
        5,
        "end-to-end overfit",
        pass,
        &format!(
            "{steps} steps, train hits@1 {train_hits:.3} (need >= 0.9), test {:.3} vs random {:.3} (margin {margin:.3}, need >= 0.15), build {build_secs:.0}s",
            full.run.test_report.hits_at_1, random.run.test_report.hits_at_1
        ),
    );
}

// ── criterion 6: ablation ordering across seeds ──────────────────────────

#[test]
fn criterion_6_ablation_ordering_majority() {
    let mut satisfied = 0usize;
    let mut detail = Vec::new();
    for seed in [0u64, 1, 2] {
        let full = trained(seed, AblationMode::Full).run.test_report.hits_at_1;
        let no_struct = trained(seed, AblationMode::NoStruct).run.test_report.hits_at_1;
        let random = trained(seed, AblationMode::RandomRetrieve).run.test_report.hits_at_1;
        let ok = full >= no_struct && no_struct >= random;
        satisfied += ok as usize;
        detail.push(format!("seed {seed}: full {full:.2} >= no-struct {no_struct:.2} >= random {random:.2} [{}]", if ok { "ok" } else { "violated" }));
    }
    verdict(
        6,
        "ablation ordering (majority of 3 seeds)",
        satisfied >= 2,
        &format!("{satisfied}/3 seeds ordered; {}", detail.join("; ")),
    );
}

// ── criterion 7: token efficiency ────────────────────────────────────────

#[test]
fn criterion_7_token_efficiency() {
    let a = artifacts(0);
    let full = trained(0, AblationMode::Full);
    let report = &full.run.test_report;

    // Per-question accounting: rendered tokens = hard tokens (sans slot) + N,
    // with N bounded by k * cap.
    let mut accounting_ok = true;
    for (q, trace) in a.data.test.iter().zip(&report.traces) {
        let hard = a.template.assemble(a.lm.tokenizer(), q).unwrap();
        let expected = hard.len() - 1 + trace.n_paths;
        accounting_ok &= trace.prompt_tokens == expected;
        accounting_ok &= trace.n_paths <= a.cfg.k * a.cfg.path_cap;
    }

    let reduction = 1.0 - report.token_used as f64 / report.textual_baseline_tokens as f64;
    let npr_exact = (672.0_f64 / 3.0 - 224.0).abs() == 0.0 && report.npr == report.token_used as f64 / report.requests as f64;

    let pass = accounting_ok && reduction >= 0.80 && npr_exact;
    verdict(
        7,
        "token efficiency",
        pass,
        &format!(
            "accounting exact: {accounting_ok}; {} soft-prompt tokens vs {} textualized ({:.1}% fewer, need >= 80%); npr arithmetic exact",
            report.token_used,
            report.textual_baseline_tokens,
            reduction * 100.0
        ),
    );
}

// ── criterion 8: hop classifier on a separable dataset ───────────────────

#[test]
fn criterion_8_hop_classifier_separable_dataset() {
    use rand::{Rng, SeedableRng};
    let started = Instant::now();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let fillers = ["who", "did", "the", "band", "city", "river", "record", "play", "visit", "own"];
    let dataset: Vec<Question> = (0..200)
        .map(|i| {
            let hops = if i % 2 == 0 { 1 } else { 2 };
            let marker = if hops == 1 { "direct" } else { "chained" };
            let mut words = vec![marker.to_string()];
            for _ in 0..rng.random_range(4..9) {
                words.push(fillers[rng.random_range(0..fillers.len())].to_string());
            }
            Question { text: words.join(" "), anchors: vec![EntityId(0)], gold_answers: vec![], gold_hops: Some(hops) }
        })
        .collect();
    let cfg = HopTrainConfig { max_hops: 2, seed: 21, ..HopTrainConfig::default() };
    let (_, accuracy) = train_hop_classifier(&dataset, &cfg).expect("training");
    let secs = started.elapsed().as_secs_f64();
    verdict(
        8,
        "hop classifier",
        accuracy >= 0.95 && secs < 60.0,
        &format!("200 samples, training accuracy {accuracy:.3} (need >= 0.95), {secs:.1}s"),
    );
}

// ── criterion 9: evaluation determinism ──────────────────────────────────

#[test]
fn criterion_9_eval_determinism() {
    let a = artifacts(0);
    let full = trained(0, AblationMode::Full);
    let once = pathprompt::harness::evaluate(
        &a.data.kg,
        &a.data.test,
        &a.lm,
        &full.run.outcome.adapter,
        &full.run.outcome.classifier,
        &a.template,
        &a.cfg,
    )
    .unwrap();
    let twice = pathprompt::harness::evaluate(
        &a.data.kg,
        &a.data.test,
        &a.lm,
        &full.run.outcome.adapter,
        &full.run.outcome.classifier,
        &a.template,
        &a.cfg,
    )
    .unwrap();
    let same = once.fingerprint() == twice.fingerprint();
    verdict(
        9,
        "evaluation determinism",
        same,
        &format!(
            "two runs, identical reports modulo time_cost ({} traces, hits@1 {:.3})",
            once.traces.len(),
            once.hits_at_1
        ),
    );
}
