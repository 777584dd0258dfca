//! Pretrain the tiny decoder backend, freeze it, splice soft vectors into a
//! hard prompt at the graph slot, and generate greedily.
//!
//! ```bash
//! cargo run --release --example soft_prompt_lm
//! ```

use anyhow::Result;
use pathprompt::lm::{pretrain_lm, LmConfig, LmTrainConfig, MixedPrompt, BOS, GRAPH_SLOT};

fn main() -> Result<()> {
    let corpus: Vec<String> = [
        "the keeper of the north gate is bramble",
        "the keeper of the south gate is fennick",
        "question : who keeps the north gate ? graphs : bramble answer : bramble",
        "question : who keeps the south gate ? graphs : fennick answer : fennick",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let cfg = LmConfig { d_model: 32, blocks: 2, heads: 2, context: 64 };
    let (lm, log) = pretrain_lm(&corpus, cfg, &LmTrainConfig { epochs: 120, lr0: 1e-3, seed: 3, noise_std: 0.02 })?;
    println!(
        "backend: vocab {}, {} params, pretrain loss {:.3} -> {:.3}, digest {}",
        lm.tokenizer().vocab_size(),
        lm.params().num_values(),
        log.first().unwrap(),
        log.last().unwrap(),
        &lm.freeze_digest()[..12]
    );

    // Hard prompt with the reserved slot; the soft vector injected at the
    // slot is the embedding a knowledge adapter would emit. Here we borrow
    // the token embedding of "bramble" to show the injection mechanics.
    let tok = lm.tokenizer();
    let mut hard = vec![BOS];
    hard.extend(tok.encode("question : who keeps the north gate ? graphs :"));
    hard.push(GRAPH_SLOT);
    hard.extend(tok.encode("answer :"));

    let d = lm.d_model();
    let table = &lm.params().get("tok.table")?.value;
    let bramble = tok.id("bramble").unwrap() as usize;
    let soft = vec![table.data()[bramble * d..(bramble + 1) * d].to_vec()];

    let prompt = MixedPrompt::new(hard, soft);
    println!("rendered prompt: {} embeddings ({} hard tokens + 1 soft)", prompt.rendered_len(), prompt.hard.len() - 1);
    let out = lm.generate_greedy(&prompt, 4)?;
    println!("greedy answer: `{}`", tok.decode(&out));
    println!("digest after use: {} (unchanged)", &lm.freeze_digest()[..12]);
    Ok(())
}
