//! Train the bag-of-words hop classifier on questions whose phrasing
//! determines the hop count, then inspect its predictions.
//!
//! ```bash
//! cargo run --release --example hop_classifier
//! ```

use anyhow::Result;
use pathprompt::kg::EntityId;
use pathprompt::retrieval::{train_hop_classifier, HopTrainConfig, Question};

fn q(text: &str, hops: usize) -> Question {
    Question {
        text: text.to_string(),
        anchors: vec![EntityId(0)],
        gold_answers: vec![],
        gold_hops: Some(hops),
    }
}

fn main() -> Result<()> {
    let mut dataset = Vec::new();
    for name in ["colette", "marlow", "ingrid", "soren", "petra", "aldous"] {
        dataset.push(q(&format!("where was {name} born"), 1));
        dataset.push(q(&format!("what company does {name} work for"), 1));
        dataset.push(q(&format!("what country is the birthplace of {name} in"), 2));
        dataset.push(q(&format!("who founded the employer of {name}"), 2));
    }

    let cfg = HopTrainConfig { max_hops: 2, seed: 5, epochs: 60, ..HopTrainConfig::default() };
    let (clf, accuracy) = train_hop_classifier(&dataset, &cfg)?;
    println!("trained on {} questions, training accuracy {accuracy:.3}", dataset.len());

    for text in [
        "where was vivian born",
        "who founded the employer of vivian",
        "what country is the birthplace of casimir in",
    ] {
        let question = q(text, 1);
        println!("{text:>45} -> {} hop(s)", clf.predict_hops(&question)?);
    }
    Ok(())
}
