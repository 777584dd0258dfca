//! Knowledge-adapter anatomy: label embeddings, structural vectors under
//! both modes, aggregation, text fusion and the one-token-per-path output.
//!
//! ```bash
//! cargo run --release --example encode_paths
//! ```

use anyhow::Result;
use pathprompt::adapter::{AdapterConfig, KnowledgeEmbedder, StructMode};
use pathprompt::kg::KnowledgeGraph;
use pathprompt::numerics::{Graph, Tensor};

fn main() -> Result<()> {
    let kg = KnowledgeGraph::from_labeled_triples(
        [
            ("eric_ries", "founded", "imvu"),
            ("imvu", "based_in", "san_francisco"),
            ("eric_ries", "wrote", "lean_startup"),
        ]
        .into_iter(),
    );
    let cfg = AdapterConfig { d: 16, d_ff: 32, d_lm: 24, max_hops: 2, ..AdapterConfig::default() };
    let adapter = KnowledgeEmbedder::new(&kg, cfg, 7)?;

    let anchor = kg.entity_id("eric_ries").unwrap();
    let mut paths = Vec::new();
    for link in kg.enumerate_relation_links(anchor, 2)? {
        paths.extend(kg.instantiate_paths(anchor, &link, 4)?);
    }
    println!("{} reasoning paths from eric_ries", paths.len());

    let soft = adapter.encode_soft_prompt(&paths)?;
    println!("soft prompt: {} tokens of width {} (one per path)", soft.len(), soft[0].len());

    // Structural modes on a concrete triple: the additive combination cannot
    // tell (eric_ries, founded, imvu) from its reversal; the translational
    // one can.
    for mode in [StructMode::HPlusRPlusT, StructMode::HPlusRMinusT] {
        let cfg = AdapterConfig { d: 4, d_ff: 8, d_lm: 8, max_hops: 2, heads: 1, struct_mode: mode, ..AdapterConfig::default() };
        let probe = KnowledgeEmbedder::new(&kg, cfg, 7)?;
        let mut g = Graph::new();
        let h = g.constant(Tensor::vector(&[1.0, 0.5, -0.25, 2.0])?);
        let r = g.constant(Tensor::vector(&[0.1, 0.2, 0.3, 0.4])?);
        let t = g.constant(Tensor::vector(&[-1.0, 1.5, 0.75, 0.0])?);
        let fwd = probe.struct_embed(&mut g, h, r, t)?;
        let rev = probe.struct_embed(&mut g, t, r, h)?;
        println!(
            "{:<7} struct(h,r,t) == struct(t,r,h)? {}",
            mode.as_str(),
            g.value(fwd).data() == g.value(rev).data()
        );
    }
    Ok(())
}
