//! Frozen decoder-only language model with soft-token injection.
//!
//! The model is a small pre-norm causal transformer with learned positional
//! embeddings and an output projection tied to the token-embedding table.
//! Once constructed (by pretraining or from a checkpoint) no public
//! operation mutates its parameters; [`FrozenLM::freeze_digest`] witnesses
//! that across training runs. Inference is pure, so one model may serve
//! concurrent questions.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{checkpoint, Binding, Graph, ParamSet, Reduction, Tensor, Var};

use super::tokenizer::{Tokenizer, EOS, GRAPH_SLOT};
use super::LmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub context: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { d_model: 64, blocks: 2, heads: 2, context: 256 }
    }
}

impl LmConfig {
    fn validate(&self) -> Result<(), LmError> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(LmError::BadConfig {
                detail: format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads),
            });
        }
        Ok(())
    }
}

/// Hard-prompt token ids containing exactly one `<graph>` slot, plus the
/// soft vectors that replace the slot when the prompt renders.
#[derive(Debug, Clone)]
pub struct MixedPrompt {
    pub hard: Vec<u32>,
    pub soft: Vec<Vec<f64>>,
    /// With no soft vectors, render as a pure hard prompt (slot removed)
    /// instead of failing. Set when retrieval found nothing.
    pub allow_hard_fallback: bool,
}

impl MixedPrompt {
    pub fn new(hard: Vec<u32>, soft: Vec<Vec<f64>>) -> Self {
        MixedPrompt { hard, soft, allow_hard_fallback: false }
    }

    /// Rendered sequence length: hard tokens (minus the slot) plus one
    /// position per soft vector.
    pub fn rendered_len(&self) -> usize {
        self.hard.len() - 1 + self.soft.len()
    }
}

/// Build the language-model parameter set.
pub(crate) fn init_lm_params(cfg: &LmConfig, vocab_size: usize, seed: u64) -> Result<ParamSet, LmError> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.insert_uniform("tok.table", vec![vocab_size, d], d, &mut rng)?;
    p.insert_uniform("pos.table", vec![cfg.context, d], d, &mut rng)?;
    for b in 0..cfg.blocks {
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert_uniform(&format!("blk{b}.attn.{w}"), vec![d, d], d, &mut rng)?;
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            p.insert_zeros(&format!("blk{b}.attn.{bias}"), vec![d])?;
        }
        p.insert_ones(&format!("blk{b}.ln1.gain"), vec![d])?;
        p.insert_zeros(&format!("blk{b}.ln1.bias"), vec![d])?;
        p.insert_uniform(&format!("blk{b}.ff.w1"), vec![d, 4 * d], d, &mut rng)?;
        p.insert_zeros(&format!("blk{b}.ff.b1"), vec![4 * d])?;
        p.insert_uniform(&format!("blk{b}.ff.w2"), vec![4 * d, d], 4 * d, &mut rng)?;
        p.insert_zeros(&format!("blk{b}.ff.b2"), vec![d])?;
        p.insert_ones(&format!("blk{b}.ln2.gain"), vec![d])?;
        p.insert_zeros(&format!("blk{b}.ln2.bias"), vec![d])?;
    }
    p.insert_ones("final.ln.gain", vec![d])?;
    p.insert_zeros("final.ln.bias", vec![d])?;
    Ok(p)
}

fn ln_affine(g: &mut Graph, b: &Binding, x: Var, prefix: &str) -> Result<Var, LmError> {
    let normed = g.layer_norm(x)?;
    let scaled = g.mul_row(normed, b.var(&format!("{prefix}.gain"))?)?;
    Ok(g.add_row(scaled, b.var(&format!("{prefix}.bias"))?)?)
}

fn decoder_block(cfg: &LmConfig, g: &mut Graph, b: &Binding, x: Var, idx: usize) -> Result<Var, LmError> {
    let d = cfg.d_model;
    let hd = d / cfg.heads;
    let pre = ln_affine(g, b, x, &format!("blk{idx}.ln1"))?;
    let q = g.matmul(pre, b.var(&format!("blk{idx}.attn.wq"))?)?;
    let q = g.add_row(q, b.var(&format!("blk{idx}.attn.bq"))?)?;
    let k = g.matmul(pre, b.var(&format!("blk{idx}.attn.wk"))?)?;
    let k = g.add_row(k, b.var(&format!("blk{idx}.attn.bk"))?)?;
    let v = g.matmul(pre, b.var(&format!("blk{idx}.attn.wv"))?)?;
    let v = g.add_row(v, b.var(&format!("blk{idx}.attn.bv"))?)?;

    let mut head_outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let attn = g.causal_softmax(scores)?;
        head_outs.push(g.matmul(attn, vh)?);
    }
    let ctx = g.concat(1, &head_outs)?;
    let attn_out = g.matmul(ctx, b.var(&format!("blk{idx}.attn.wo"))?)?;
    let attn_out = g.add_row(attn_out, b.var(&format!("blk{idx}.attn.bo"))?)?;
    let x = g.add(x, attn_out)?;

    let pre2 = ln_affine(g, b, x, &format!("blk{idx}.ln2"))?;
    let ff = g.matmul(pre2, b.var(&format!("blk{idx}.ff.w1"))?)?;
    let ff = g.add_row(ff, b.var(&format!("blk{idx}.ff.b1"))?)?;
    let ff = g.tanh(ff)?;
    let ff = g.matmul(ff, b.var(&format!("blk{idx}.ff.w2"))?)?;
    let ff = g.add_row(ff, b.var(&format!("blk{idx}.ff.b2"))?)?;
    Ok(g.add(x, ff)?)
}

/// Full causal forward pass from an `(L, d)` embedding matrix to `(L, V)`
/// logits. Adds positional embeddings internally; the output projection is
/// the transposed token-embedding table.
pub(crate) fn transformer_logits(cfg: &LmConfig, g: &mut Graph, b: &Binding, x: Var) -> Result<Var, LmError> {
    let len = g.value(x).rows();
    if len > cfg.context {
        return Err(LmError::ContextOverflow { len, limit: cfg.context });
    }
    let pos = b.var("pos.table")?;
    let pos = g.slice_rows(pos, 0, len)?;
    let mut h = g.add(x, pos)?;
    for idx in 0..cfg.blocks {
        h = decoder_block(cfg, g, b, h, idx)?;
    }
    let h = ln_affine(g, b, h, "final.ln")?;
    let table_t = g.transpose(b.var("tok.table")?)?;
    Ok(g.matmul(h, table_t)?)
}

/// Soft-vector source when assembling a mixed sequence on a graph: live
/// graph nodes during adapter training, plain values during inference.
pub enum SoftInput<'a> {
    Vars(&'a [Var]),
    Values(&'a [Vec<f64>]),
}

impl SoftInput<'_> {
    fn len(&self) -> usize {
        match self {
            SoftInput::Vars(v) => v.len(),
            SoftInput::Values(v) => v.len(),
        }
    }
}

/// The frozen generation backend. Anything honoring this surface (embedding
/// width, forward, greedy generation) can replace it behind the harness.
#[derive(Debug, Clone)]
pub struct FrozenLM {
    cfg: LmConfig,
    tokenizer: Tokenizer,
    params: ParamSet,
}

impl FrozenLM {
    /// Wrap pretrained parts. All parameters are marked non-trainable, so
    /// binding them into any graph never allocates gradient buffers.
    pub(crate) fn from_parts(cfg: LmConfig, tokenizer: Tokenizer, mut params: ParamSet) -> Self {
        params.set_trainable_by_prefix("", false);
        FrozenLM { cfg, tokenizer, params }
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    pub fn d_model(&self) -> usize {
        self.cfg.d_model
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Bind the frozen parameters into a graph (never grad-requiring).
    pub fn bind(&self, g: &mut Graph) -> Binding {
        self.params.bind_frozen(g)
    }

    /// Order-stable checksum over every parameter tensor.
    pub fn freeze_digest(&self) -> String {
        self.params.digest()
    }

    fn check_soft_dims(&self, soft: &[Vec<f64>]) -> Result<(), LmError> {
        for v in soft {
            if v.len() != self.cfg.d_model {
                return Err(LmError::SoftDim { expected: self.cfg.d_model, got: v.len() });
            }
        }
        Ok(())
    }

    fn slot_position(&self, hard: &[u32]) -> Result<usize, LmError> {
        let slots: Vec<usize> =
            hard.iter().enumerate().filter(|(_, &id)| id == GRAPH_SLOT).map(|(i, _)| i).collect();
        if slots.len() != 1 {
            return Err(LmError::SlotCount { found: slots.len() });
        }
        Ok(slots[0])
    }

    /// Render a mixed prompt to its embedding sequence: hard tokens map
    /// through the embedding table, the slot expands to the soft vectors
    /// verbatim. Positional embeddings are added later, in `forward`.
    pub fn embed_mixed(&self, prompt: &MixedPrompt) -> Result<Vec<Vec<f64>>, LmError> {
        self.check_soft_dims(&prompt.soft)?;
        let slot = self.slot_position(&prompt.hard)?;
        if prompt.soft.is_empty() && !prompt.allow_hard_fallback {
            return Err(LmError::NoSoftVectors);
        }
        let table = &self.params.get("tok.table")?.value;
        let d = self.cfg.d_model;
        let mut rows = Vec::with_capacity(prompt.rendered_len());
        let lookup = |id: u32| -> Result<Vec<f64>, LmError> {
            if id as usize >= table.rows() {
                return Err(LmError::UnknownToken { id });
            }
            Ok(table.data()[id as usize * d..(id as usize + 1) * d].to_vec())
        };
        for &id in &prompt.hard[..slot] {
            rows.push(lookup(id)?);
        }
        for v in &prompt.soft {
            rows.push(v.clone());
        }
        for &id in &prompt.hard[slot + 1..] {
            rows.push(lookup(id)?);
        }
        if rows.is_empty() {
            return Err(LmError::EmptySequence);
        }
        Ok(rows)
    }

    /// Assemble the same mixed sequence on a live graph, keeping soft
    /// vectors as graph nodes so gradients can flow back into them.
    pub fn assemble_on_graph(
        &self,
        g: &mut Graph,
        binding: &Binding,
        hard: &[u32],
        soft: SoftInput<'_>,
        allow_hard_fallback: bool,
    ) -> Result<Var, LmError> {
        let slot = self.slot_position(hard)?;
        if soft.len() == 0 && !allow_hard_fallback {
            return Err(LmError::NoSoftVectors);
        }
        let table = binding.var("tok.table")?;
        let d = self.cfg.d_model;
        let mut parts: Vec<Var> = Vec::new();
        let prefix: Vec<usize> = hard[..slot].iter().map(|&id| id as usize).collect();
        if !prefix.is_empty() {
            parts.push(g.gather_rows(table, &prefix)?);
        }
        match soft {
            SoftInput::Vars(vars) => {
                for &v in vars {
                    if g.value(v).numel() != d {
                        return Err(LmError::SoftDim { expected: d, got: g.value(v).numel() });
                    }
                    parts.push(g.reshape(v, vec![1, d])?);
                }
            }
            SoftInput::Values(vals) => {
                self.check_soft_dims(vals)?;
                for v in vals {
                    let t = Tensor::matrix(1, d, v.clone())?;
                    parts.push(g.constant(t));
                }
            }
        }
        let suffix: Vec<usize> = hard[slot + 1..].iter().map(|&id| id as usize).collect();
        if !suffix.is_empty() {
            parts.push(g.gather_rows(table, &suffix)?);
        }
        if parts.is_empty() {
            return Err(LmError::EmptySequence);
        }
        Ok(g.concat(0, &parts)?)
    }

    /// Causal forward pass over a raw embedding sequence.
    pub fn forward(&self, embeds: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LmError> {
        if embeds.is_empty() {
            return Err(LmError::EmptySequence);
        }
        self.check_soft_dims(embeds)?;
        let d = self.cfg.d_model;
        let mut g = Graph::new();
        let binding = self.bind(&mut g);
        let data: Vec<f64> = embeds.iter().flatten().copied().collect();
        let x = g.constant(Tensor::matrix(embeds.len(), d, data)?);
        let logits = transformer_logits(&self.cfg, &mut g, &binding, x)?;
        let t = g.value(logits);
        let v = t.cols();
        Ok((0..t.rows()).map(|r| t.data()[r * v..(r + 1) * v].to_vec()).collect())
    }

    /// Teacher-forced negative log-likelihood of `answer_ids` after the
    /// rendered prompt. Only answer positions enter the loss.
    pub fn nll_on_graph(
        &self,
        g: &mut Graph,
        binding: &Binding,
        hard: &[u32],
        soft: SoftInput<'_>,
        answer_ids: &[u32],
        reduction: Reduction,
        allow_hard_fallback: bool,
    ) -> Result<Var, LmError> {
        if answer_ids.is_empty() {
            return Err(LmError::EmptyAnswer);
        }
        let prompt_rows = self.assemble_on_graph(g, binding, hard, soft, allow_hard_fallback)?;
        let table = binding.var("tok.table")?;
        let answer_usize: Vec<usize> = answer_ids.iter().map(|&id| id as usize).collect();
        let answer_rows = g.gather_rows(table, &answer_usize)?;
        let full = g.concat(0, &[prompt_rows, answer_rows])?;
        let prompt_len = g.value(prompt_rows).rows();
        let logits = transformer_logits(&self.cfg, g, binding, full)?;
        let answer_logits = g.slice_rows(logits, prompt_len - 1, prompt_len + answer_ids.len() - 1)?;
        Ok(g.cross_entropy_logits(answer_logits, &answer_usize, reduction)?)
    }

    /// Convenience wrapper over [`FrozenLM::nll_on_graph`] with the prompt's
    /// soft vectors as constants, loss averaged per answer token.
    pub fn answer_nll(&self, prompt: &MixedPrompt, answer_ids: &[u32]) -> Result<f64, LmError> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g);
        let loss = self.nll_on_graph(
            &mut g,
            &binding,
            &prompt.hard,
            SoftInput::Values(&prompt.soft),
            answer_ids,
            Reduction::Mean,
            prompt.allow_hard_fallback,
        )?;
        Ok(g.value(loss).item())
    }

    /// Greedy decoding: iterated argmax until `<eos>` or `max_new` tokens.
    /// Ties break toward the smaller token id; the `<graph>` slot id is
    /// never emitted.
    pub fn generate_greedy(&self, prompt: &MixedPrompt, max_new: usize) -> Result<Vec<u32>, LmError> {
        let rendered = prompt.rendered_len();
        if rendered + max_new > self.cfg.context {
            return Err(LmError::ContextOverflow { len: rendered + max_new, limit: self.cfg.context });
        }
        let mut generated: Vec<u32> = Vec::new();
        for _ in 0..max_new {
            let mut g = Graph::new();
            let binding = self.bind(&mut g);
            let mut hard = prompt.hard.clone();
            hard.extend_from_slice(&generated);
            let rows = self.assemble_on_graph(
                &mut g,
                &binding,
                &hard,
                SoftInput::Values(&prompt.soft),
                prompt.allow_hard_fallback,
            )?;
            let logits = transformer_logits(&self.cfg, &mut g, &binding, rows)?;
            let t = g.value(logits);
            let last = t.rows() - 1;
            let mut best = 0u32;
            let mut best_logit = f64::NEG_INFINITY;
            for c in 0..t.cols() {
                if c as u32 == GRAPH_SLOT {
                    continue;
                }
                let l = t.at(last, c);
                if l > best_logit {
                    best_logit = l;
                    best = c as u32;
                }
            }
            if best == EOS {
                break;
            }
            generated.push(best);
        }
        Ok(generated)
    }

    pub fn save(&self, ckpt_path: &Path, vocab_path: &Path) -> Result<(), LmError> {
        let meta = vec![
            ("d_model".to_string(), self.cfg.d_model.to_string()),
            ("blocks".to_string(), self.cfg.blocks.to_string()),
            ("heads".to_string(), self.cfg.heads.to_string()),
            ("context".to_string(), self.cfg.context.to_string()),
        ];
        checkpoint::save(&self.params, &meta, ckpt_path)?;
        self.tokenizer.save(vocab_path)
    }

    pub fn load(ckpt_path: &Path, vocab_path: &Path) -> Result<Self, LmError> {
        let tokenizer = Tokenizer::load(vocab_path)?;
        let ck = checkpoint::load(ckpt_path)?;
        let parse = |key: &str| -> Result<usize, LmError> {
            ck.meta_value(key).and_then(|v| v.parse().ok()).ok_or_else(|| LmError::BadConfig {
                detail: format!("checkpoint {} missing meta `{key}`", ckpt_path.display()),
            })
        };
        let cfg = LmConfig {
            d_model: parse("d_model")?,
            blocks: parse("blocks")?,
            heads: parse("heads")?,
            context: parse("context")?,
        };
        let mut params = init_lm_params(&cfg, tokenizer.vocab_size(), 0)?;
        ck.restore_into(&mut params)?;
        Ok(FrozenLM::from_parts(cfg, tokenizer, params))
    }
}
