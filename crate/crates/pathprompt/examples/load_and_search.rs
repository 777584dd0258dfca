//! Build a knowledge graph from tab-separated triples, enumerate relation
//! links from an anchor with the depth-bounded search, and instantiate the
//! links into concrete reasoning paths.
//!
//! ```bash
//! cargo run --release --example load_and_search
//! ```

use std::io::Cursor;

use anyhow::Result;
use pathprompt::kg::KnowledgeGraph;

const TRIPLES: &str = "\
eric_ries\tbusiness.company.founder_of\timvu\n\
eric_ries\tpeople.person.author_of\tlean_startup\n\
imvu\tbusiness.company.based_in\tsan_francisco\n\
lean_startup\tmedia.book.topic_of\tentrepreneurship\n\
san_francisco\tlocation.city.part_of\tcalifornia\n\
imvu\tbusiness.company.founder_of\teric_ries\n";

fn main() -> Result<()> {
    let kg = KnowledgeGraph::load_triples(Cursor::new(TRIPLES))?;
    println!(
        "loaded {} triples, {} entities, {} relations",
        kg.triple_count(),
        kg.entity_count(),
        kg.relation_count()
    );

    let anchor = kg.entity_id("eric_ries").expect("anchor exists");
    for depth in 1..=2 {
        let links = kg.enumerate_relation_links(anchor, depth)?;
        println!("\nrelation links from eric_ries within {depth} hop(s):");
        for link in &links {
            println!("  {}", kg.link_labels(&link)?.join(" -> "));
        }
    }

    let links = kg.enumerate_relation_links(anchor, 2)?;
    println!("\ninstantiated paths:");
    for link in &links {
        for path in kg.instantiate_paths(anchor, link, 4)? {
            let mut pretty = kg.entity_label(path.origin)?.to_string();
            for (r, e) in &path.steps {
                pretty.push_str(&format!(" --{}--> {}", kg.relation_label(*r)?, kg.entity_label(*e)?));
            }
            println!("  {pretty}");
        }
    }
    Ok(())
}
