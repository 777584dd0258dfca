//! Full finite-difference audit: every primitive, the composed adapter
//! path, the backend answer loss, and the end-to-end composition of both.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapter::{AdapterConfig, KnowledgeEmbedder, StructMode};
use crate::kg::KnowledgeGraph;
use crate::lm::{pretrain_lm, LmConfig, LmTrainConfig, SoftInput, BOS, EOS, GRAPH_SLOT};
use crate::numerics::gradcheck::{check_grads, CheckResult};
use crate::numerics::{gradcheck, Binding, NumericsError, Reduction, Tensor};

use super::HarnessError;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// End-to-end check: perturb adapter parameters, flow through path
/// encoding, projection, soft-token injection and the frozen backend's
/// answer loss.
fn end_to_end_suite(seed: u64, cases: usize) -> Result<Vec<CheckResult>, HarnessError> {
    let kg = KnowledgeGraph::from_labeled_triples(
        [
            ("mill", "kind.of", "shop"),
            ("mill", "next.to", "barn"),
            ("barn", "kind.of", "shed"),
            ("shop", "next.to", "mill"),
            ("shed", "kind.of", "hut"),
        ]
        .into_iter(),
    );
    let corpus = vec![
        "mill kind of shop".to_string(),
        "barn kind of shed".to_string(),
        "question mill answer shop".to_string(),
    ];
    let lm_cfg = LmConfig { d_model: 8, blocks: 1, heads: 2, context: 32 };
    let (lm, _) = pretrain_lm(&corpus, lm_cfg, &LmTrainConfig { epochs: 2, lr0: 1e-3, seed, noise_std: 0.0 })?;

    let adapter_cfg = AdapterConfig {
        d: 6,
        d_ff: 10,
        d_lm: 8,
        max_hops: 2,
        heads: 2,
        enc_blocks: 1,
        struct_mode: StructMode::HPlusRMinusT,
        use_struct: true,
    };
    let adapter = KnowledgeEmbedder::new(&kg, adapter_cfg, seed)?;
    let names: Vec<String> = adapter.params().iter().map(|p| p.name.clone()).collect();
    let values: Vec<Tensor> = adapter.params().iter().map(|p| p.value.clone()).collect();

    let tok = lm.tokenizer();
    let hard = vec![BOS, tok.id("question").unwrap(), GRAPH_SLOT, tok.id("answer").unwrap()];
    let answer = vec![tok.id("shop").unwrap(), EOS];
    let anchor = kg.entity_id("mill").unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x00e2_e3f1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..cases {
        let links = kg.enumerate_relation_links(anchor, 2)?;
        let link = &links[rng.random_range(0..links.len())];
        let paths = kg.instantiate_paths(anchor, link, 2)?;
        if paths.is_empty() {
            continue;
        }
        let err = check_grads(&values, |g, vars| {
            let binding = Binding::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let soft = adapter
                .soft_prompt_on_graph(g, &binding, &paths)
                .map_err(|e| NumericsError::ShapeMismatch { op: "adapter".into(), detail: e.to_string() })?;
            let lm_vars = lm.bind(g);
            lm.nll_on_graph(g, &lm_vars, &hard, SoftInput::Vars(&soft), &answer, Reduction::Mean, false)
                .map_err(|e| NumericsError::ShapeMismatch { op: "lm".into(), detail: e.to_string() })
        })?;
        worst = worst.max(err);
        checked += 1;
    }
    Ok(vec![CheckResult { name: "end_to_end_adapter_lm_nll".into(), cases: checked, max_rel_err: worst }])
}

/// Run every finite-difference suite.
pub fn run_all(seed: u64, cases: usize) -> Result<GradcheckReport, HarnessError> {
    let mut results = gradcheck::primitive_suite(seed, cases)?;
    results.extend(crate::adapter::gradcheck_suite(seed, cases)?);
    results.extend(crate::lm::gradcheck_suite(seed, cases)?);
    results.extend(end_to_end_suite(seed, cases)?);
    let max_rel_err = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    Ok(GradcheckReport { results, max_rel_err })
}
