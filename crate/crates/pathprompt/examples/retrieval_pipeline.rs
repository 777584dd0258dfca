//! Full retrieval stage on a generated benchmark: hop prediction, link
//! enumeration, lexical ranking, and reasoning-graph sampling.
//!
//! ```bash
//! cargo run --release --example retrieval_pipeline
//! ```

use anyhow::Result;
use pathprompt::harness::{gen_synthetic, SynthConfig};
use pathprompt::retrieval::{build_reasoning_graph, train_hop_classifier, HopTrainConfig, OverlapScorer};

fn main() -> Result<()> {
    let data = gen_synthetic(&SynthConfig {
        seed: 11,
        entities: 30,
        relations: 8,
        train_questions: 40,
        test_questions: 6,
        max_hops: 2,
    })?;
    println!("graph: {} triples; {} train questions", data.kg.triple_count(), data.train.len());

    let hop_cfg = HopTrainConfig { max_hops: 2, seed: 11, ..HopTrainConfig::default() };
    let (classifier, accuracy) = train_hop_classifier(&data.train, &hop_cfg)?;
    println!("hop classifier training accuracy: {accuracy:.3}\n");

    for q in data.test.iter().take(3) {
        let rg = build_reasoning_graph(&data.kg, q, &classifier, &OverlapScorer, 4, 8)?;
        println!("question: {}", q.text);
        println!("  predicted hops: {} (gold {:?})", rg.predicted_hops, q.gold_hops);
        for scored in &rg.selected_links {
            println!(
                "  link {:.3}  {}",
                scored.score,
                data.kg.link_labels(&scored.link)?.join(" -> ")
            );
        }
        println!("  {} paths; first terminals:", rg.paths.len());
        for p in rg.paths.iter().take(4) {
            println!("    ... -> {}", data.kg.entity_label(p.terminal())?);
        }
        println!("  gold answers: {:?}\n", q.gold_answers);
    }
    Ok(())
}
