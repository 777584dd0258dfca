use anyhow::Result;
use pathprompt::harness::{build_pretrain_corpus, standard_benchmark, standard_train_config, train_adapter, PromptTemplate};
use pathprompt::lm::{pretrain_lm, LmConfig, LmTrainConfig, MixedPrompt, EOS};
use pathprompt::retrieval::{retrieve_paths, OverlapScorer};

fn main() -> Result<()> {
    let data = standard_benchmark(0)?;
    let template = PromptTemplate::default_template();
    let mut cfg = standard_train_config(0);
    cfg.epochs = 1; // one pass: we want the UNtrained-ish adapter state? we need step-0 — use epochs 1 then inspect cos anyway

    for noise in [0.0, 0.25, 0.5] {
        let corpus = build_pretrain_corpus(&data.kg, &data.train, &template, &cfg)?;
        let lm_cfg = LmConfig { d_model: 64, blocks: 2, heads: 2, context: 256 };
        let (lm, _) = pretrain_lm(&corpus, lm_cfg, &LmTrainConfig { epochs: cfg.lm_epochs, lr0: cfg.lm_lr0, seed: 0, noise_std: noise })?;
        let tok = lm.tokenizer().clone();
        let d = lm.d_model();
        let table = lm.params().get("tok.table")?.value.clone();
        let mean_norm: f64 = (0..table.rows())
            .map(|r| table.data()[r*d..(r+1)*d].iter().map(|v| v*v).sum::<f64>().sqrt())
            .sum::<f64>() / table.rows() as f64;
        let pos = lm.params().get("pos.table")?.value.clone();
        let pos_norm: f64 = (0..40).map(|r| pos.data()[r*d..(r+1)*d].iter().map(|v| v*v).sum::<f64>().sqrt()).sum::<f64>() / 40.0;

        // Oracle-hint accuracy with exact embeddings.
        let mut oracle_nll = 0.0;
        let mut count = 0;
        for q in data.train.iter().take(40) {
            let hops = q.gold_hops.unwrap();
            let (_, paths) = retrieve_paths(&data.kg, q, hops, &OverlapScorer, cfg.k, cfg.path_cap)?;
            if paths.is_empty() { continue; }
            let soft: Vec<Vec<f64>> = paths.iter().map(|p| {
                let id = tok.id(data.kg.entity_label(p.terminal()).unwrap()).unwrap() as usize;
                table.data()[id*d..(id+1)*d].to_vec()
            }).collect();
            let hard = template.assemble(&tok, q)?;
            let target = data.kg.entity_label(paths[0].terminal())?.to_string();
            let mut ids = tok.encode(&target); ids.push(EOS);
            oracle_nll += lm.answer_nll(&MixedPrompt::new(hard, soft), &ids)?;
            count += 1;
        }
        // LN-normalized-scaled oracle: soft = 1.5*mean_norm*LN(emb) — what the warm adapter emits at init.
        let mut ln_nll = 0.0;
        for q in data.train.iter().take(40) {
            let hops = q.gold_hops.unwrap();
            let (_, paths) = retrieve_paths(&data.kg, q, hops, &OverlapScorer, cfg.k, cfg.path_cap)?;
            if paths.is_empty() { continue; }
            let soft: Vec<Vec<f64>> = paths.iter().map(|p| {
                let id = tok.id(data.kg.entity_label(p.terminal()).unwrap()).unwrap() as usize;
                let e = &table.data()[id*d..(id+1)*d];
                let mu: f64 = e.iter().sum::<f64>() / d as f64;
                let var: f64 = e.iter().map(|v| (v-mu)*(v-mu)).sum::<f64>() / d as f64;
                let s = 1.5 * mean_norm / (var.sqrt() * (d as f64).sqrt());
                e.iter().map(|v| (v - mu) * s).collect()
            }).collect();
            let hard = template.assemble(&tok, q)?;
            let target = data.kg.entity_label(paths[0].terminal())?.to_string();
            let mut ids = tok.encode(&target); ids.push(EOS);
            ln_nll += lm.answer_nll(&MixedPrompt::new(hard, soft), &ids)?;
        }
        println!("noise {noise}: tok-norm {:.2} pos-norm {:.2} oracle-nll {:.3} LN-scaled-nll {:.3}",
            mean_norm, pos_norm, oracle_nll / count as f64, ln_nll / count as f64);
    }

    // Warm-started adapter, cos at (almost) init: epochs=1 batch=200 => 1 step.
    cfg.epochs = 1;
    cfg.batch_size = 200;
    let lm = pathprompt::harness::pretrain_backend(&data, &template, &cfg)?;
    let outcome = train_adapter(&data.kg, &data.train, &lm, &template, &cfg)?;
    println!("near-init step losses: {:?}", outcome.log.steps.iter().map(|s| (s.loss*100.0).round()/100.0).collect::<Vec<_>>());
    let d = lm.d_model();
    let table = lm.params().get("tok.table")?.value.clone();
    let mut sims = Vec::new();
    for q in data.train.iter().take(20) {
        let rg = pathprompt::retrieval::build_reasoning_graph(&data.kg, q, &outcome.classifier, &OverlapScorer, cfg.k, cfg.path_cap)?;
        if rg.paths.is_empty() { continue; }
        let soft = outcome.adapter.encode_soft_prompt(&rg.paths)?;
        let term = data.kg.entity_label(rg.paths[0].terminal())?;
        let id = lm.tokenizer().id(term).unwrap() as usize;
        let e = &table.data()[id*d..(id+1)*d];
        let dot: f64 = soft[0].iter().zip(e).map(|(a,b)| a*b).sum();
        let na: f64 = soft[0].iter().map(|x| x*x).sum::<f64>().sqrt();
        let nb: f64 = e.iter().map(|x| x*x).sum::<f64>().sqrt();
        sims.push(dot/(na*nb));
    }
    println!("near-init cos(soft0, emb(term)): mean {:.3}", sims.iter().sum::<f64>()/sims.len() as f64);
    Ok(())
}
