//! Train and evaluate the ablation variants on the standard benchmark:
//! full pipeline, no structural vectors, untrained knowledge encoder, and
//! random link retrieval.
//!
//! ```bash
//! cargo run --release --example ablations
//! ```

use anyhow::Result;
use pathprompt::harness::{
    pretrain_backend, run_mode, standard_benchmark, standard_train_config, AblationMode,
    PromptTemplate,
};

fn main() -> Result<()> {
    let seed = 0;
    let data = standard_benchmark(seed)?;
    let template = PromptTemplate::default_template();
    let cfg = standard_train_config(seed);
    let lm = pretrain_backend(&data, &template, &cfg)?;
    println!("shared frozen backend, digest {}\n", &lm.freeze_digest()[..12]);

    println!("{:<18} {:>11} {:>10} {:>8}", "mode", "train@1", "test@1", "npr");
    for mode in AblationMode::ALL {
        let run = run_mode(&data, &lm, &template, &cfg, mode)?;
        println!(
            "{:<18} {:>11.3} {:>10.3} {:>8.1}",
            mode.as_str(),
            run.train_report.hits_at_1,
            run.test_report.hits_at_1,
            run.test_report.npr
        );
    }
    Ok(())
}
