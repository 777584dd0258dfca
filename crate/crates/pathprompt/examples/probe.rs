//! Scratch diagnostics for the training pipeline (not a shipped example).

use anyhow::Result;
use pathprompt::harness::{
    evaluate, pretrain_backend, standard_benchmark, standard_train_config, train_adapter,
    PromptTemplate,
};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(12);
    let noise: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let rotate: bool = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(true);
    let tune_table: bool = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(false);
    let lm_epochs: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(30);
    let seed: u64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mode: String = args.get(8).cloned().unwrap_or_else(|| "full".into());

    let data = standard_benchmark(seed)?;
    let template = PromptTemplate::default_template();
    let mut cfg = standard_train_config(seed);
    cfg.lr0 = lr;
    cfg.epochs = epochs;
    cfg.lm_noise_std = noise;
    cfg.rotate_gold_paths = rotate;
    cfg.tune_label_table = tune_table;
    cfg.lm_epochs = lm_epochs;
    pathprompt::harness::AblationMode::parse(&mode).unwrap().apply(&mut cfg);

    let lm = pretrain_backend(&data, &template, &cfg)?;
    let outcome = train_adapter(&data.kg, &data.train, &lm, &template, &cfg)?;
    let tr = evaluate(&data.kg, &data.train, &lm, &outcome.adapter, &outcome.classifier, &template, &cfg)?;
    let te = evaluate(&data.kg, &data.test, &lm, &outcome.adapter, &outcome.classifier, &template, &cfg)?;
    println!("seed {seed} mode {mode} lr {lr} ep {epochs} noise {noise} rot {rotate} tune {tune_table} lmep {lm_epochs}: train {:.3} test {:.3} loss {:.3}", tr.hits_at_1, te.hits_at_1, outcome.log.steps.last().unwrap().loss);

    if std::env::var("TRACES").is_err() { return Ok(()); }
    println!("--- test traces ---");
    for (q, t) in data.test.iter().zip(&te.traces) {
        println!(
            "hops {} paths {:>2} gen `{}` gold {:?} hit {}",
            t.predicted_hops, t.n_paths, t.generated, q.gold_answers, t.hit
        );
    }
    println!("--- sample train traces ---");
    for t in tr.traces.iter().take(8) {
        println!("hops {} paths {:>2} gen `{}` hit {}", t.predicted_hops, t.n_paths, t.generated, t.hit);
    }

    // Cosine of each first-path soft vector against the LM embedding of the
    // path's terminal token, train vs test.
    let d = lm.d_model();
    let table = lm.params().get("tok.table")?.value.clone();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb).max(1e-12)
    };
    for (name, split) in [("train", &data.train), ("test", &data.test)] {
        let mut sims = Vec::new();
        for q in split.iter().take(30) {
            let rg = pathprompt::retrieval::build_reasoning_graph(
                &data.kg, q, &outcome.classifier, &pathprompt::retrieval::OverlapScorer, cfg.k, cfg.path_cap,
            )?;
            if rg.paths.is_empty() {
                continue;
            }
            let soft = outcome.adapter.encode_soft_prompt(&rg.paths)?;
            let term = data.kg.entity_label(rg.paths[0].terminal())?;
            let id = lm.tokenizer().id(term).unwrap() as usize;
            let emb = &table.data()[id * d..(id + 1) * d];
            sims.push(cos(&soft[0], emb));
        }
        let mean: f64 = sims.iter().sum::<f64>() / sims.len() as f64;
        println!("{name}: mean cos(soft0, emb(terminal)) = {mean:.3} over {} qs", sims.len());
    }
    Ok(())
}
