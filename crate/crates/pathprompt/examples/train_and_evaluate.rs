//! End-to-end run on the standard synthetic benchmark: generate data,
//! pretrain and freeze the backend, train the knowledge adapter, then
//! evaluate accuracy and token efficiency on both splits.
//!
//! ```bash
//! cargo run --release --example train_and_evaluate
//! ```

use anyhow::Result;
use pathprompt::harness::{
    evaluate, pretrain_backend, standard_benchmark, standard_train_config, train_adapter,
    PromptTemplate,
};

fn main() -> Result<()> {
    let seed = 0;
    let data = standard_benchmark(seed)?;
    println!(
        "benchmark: {} triples, {} train / {} test questions",
        data.kg.triple_count(),
        data.train.len(),
        data.test.len()
    );

    let template = PromptTemplate::default_template();
    let cfg = standard_train_config(seed);

    let lm = pretrain_backend(&data, &template, &cfg)?;
    println!(
        "backend frozen: vocab {}, {} params, digest {}",
        lm.tokenizer().vocab_size(),
        lm.params().num_values(),
        &lm.freeze_digest()[..12]
    );

    let outcome = train_adapter(&data.kg, &data.train, &lm, &template, &cfg)?;
    let log = &outcome.log;
    println!(
        "adapter: {} steps, loss {:.4} -> {:.4}, hop accuracy {:.3}, trainable {} vs frozen {}",
        log.steps.len(),
        log.steps.first().map(|s| s.loss).unwrap_or(f64::NAN),
        log.steps.last().map(|s| s.loss).unwrap_or(f64::NAN),
        log.hop_accuracy,
        log.trainable_params,
        log.lm_params
    );

    for (name, split) in [("train", &data.train), ("test", &data.test)] {
        let report = evaluate(&data.kg, split, &lm, &outcome.adapter, &outcome.classifier, &template, &cfg)?;
        println!(
            "{name}: hits@1 {:.3}, tokens {}, npr {:.1}, textual baseline {}, reduction {:.1}%",
            report.hits_at_1,
            report.token_used,
            report.npr,
            report.textual_baseline_tokens,
            100.0 * (1.0 - report.token_used as f64 / report.textual_baseline_tokens as f64)
        );
    }
    Ok(())
}
