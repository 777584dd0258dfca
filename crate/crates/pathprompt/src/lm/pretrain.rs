//! Next-token pretraining for the generation backend.
//!
//! The backend trains briefly on a small corpus so generation is
//! non-degenerate, then freezes. Each corpus line becomes one training
//! sequence `<bos> tokens... <eos>`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{cosine_lr, Adam, Graph, Optimizer, Reduction};

use super::model::{init_lm_params, transformer_logits, FrozenLM, LmConfig};
use super::tokenizer::{Tokenizer, BOS, EOS};
use super::LmError;

#[derive(Debug, Clone)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub seed: u64,
    /// Gaussian noise added to every input embedding during pretraining.
    /// Teaches the model to read slightly off-manifold embeddings, which is
    /// what injected soft tokens are.
    pub noise_std: f64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig { epochs: 30, lr0: 1e-3, seed: 0, noise_std: 0.0 }
    }
}

/// Per-epoch mean training loss, for logging.
pub type PretrainLog = Vec<f64>;

/// Box-Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Build a tokenizer from `corpus`, train a fresh decoder on next-token
/// prediction, and return it frozen.
pub fn pretrain_lm(
    corpus: &[String],
    cfg: LmConfig,
    train: &LmTrainConfig,
) -> Result<(FrozenLM, PretrainLog), LmError> {
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let tokenizer = Tokenizer::from_corpus(corpus.iter().map(String::as_str));
    let mut params = init_lm_params(&cfg, tokenizer.vocab_size(), train.seed)?;

    let mut sequences: Vec<Vec<usize>> = Vec::new();
    for line in corpus {
        let mut ids: Vec<usize> = vec![BOS as usize];
        ids.extend(tokenizer.encode(line).iter().map(|&t| t as usize));
        ids.push(EOS as usize);
        ids.truncate(cfg.context);
        if ids.len() >= 2 {
            sequences.push(ids);
        }
    }
    if sequences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5851_f42d);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let total_steps = train.epochs * sequences.len();
    let mut optimizer = Adam::default();
    let mut log = Vec::with_capacity(train.epochs);
    let mut step = 0usize;

    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &si in &order {
            let ids = &sequences[si];
            let mut g = Graph::new();
            let binding = params.bind(&mut g);
            let table = binding.var("tok.table")?;
            let mut x = g.gather_rows(table, &ids[..ids.len() - 1])?;
            if train.noise_std > 0.0 {
                let numel = (ids.len() - 1) * cfg.d_model;
                let noise: Vec<f64> =
                    (0..numel).map(|_| gaussian(&mut rng) * train.noise_std).collect();
                let noise = g.constant(crate::numerics::Tensor::new(
                    vec![ids.len() - 1, cfg.d_model],
                    noise,
                )?);
                x = g.add(x, noise)?;
            }
            let logits = transformer_logits(&cfg, &mut g, &binding, x)?;
            let loss = g.cross_entropy_logits(logits, &ids[1..], Reduction::Mean)?;
            epoch_loss += g.value(loss).item();
            g.backward(loss)?;
            params.accumulate_grads(&g, &binding)?;
            let lr = cosine_lr(step, total_steps, train.lr0)?;
            optimizer.step(&mut params, lr)?;
            step += 1;
        }
        log.push(epoch_loss / sequences.len() as f64);
    }

    Ok((FrozenLM::from_parts(cfg, tokenizer, params), log))
}
