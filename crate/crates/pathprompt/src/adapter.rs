//! The knowledge adapter: encodes each reasoning path's textual and
//! structural content into one fused vector and projects the sequence of
//! path vectors into the language model's embedding space — one soft-prompt
//! token per path.
//!
//! Per path the adapter computes, over its triples `(h_i, r_i, t_i)`:
//! label embeddings from a trainable lookup table; per-triple structural
//! vectors (`h + r - t` by default, `h + r + t` as the order-blind
//! alternative); a global structural vector via zero-padding to the hop
//! bound and one affine layer; role-wise fused text vectors (arithmetic
//! means of heads, relations, tails); their concatenation; and a small
//! pre-norm transformer encoder with a learned readout token that fuses the
//! text and structure vectors into a single `d`-vector. A two-layer MLP
//! projector then maps each path vector to the LM embedding width.
//!
//! Encoding with fixed parameters is pure and safe to run concurrently;
//! training confines parameters and tape to a single thread.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kg::{EntityId, KgError, KnowledgeGraph, ReasoningPath, RelationId};
use crate::numerics::{
    checkpoint, gradcheck, Binding, Graph, NumericsError, ParamSet, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("entity id {0} is outside the adapter's vocabulary")]
    UnknownEntity(u32),
    #[error("relation id {0} is outside the adapter's vocabulary")]
    UnknownRelation(u32),
    #[error("path has {got} hops but the adapter aggregates at most {max}")]
    TooManyHops { got: usize, max: usize },
    #[error("cannot encode an empty reasoning path")]
    EmptyPath,
    #[error("fuse_text requires a non-empty vector list")]
    EmptyFuseInput,
    #[error("project_soft_prompt requires at least one path vector")]
    EmptyProjection,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("checkpoint was trained against a different graph (vocab hash {expected:x}, graph has {found:x})")]
    VocabMismatch { expected: u64, found: u64 },
    #[error("bad adapter checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// How a triple's structural vector combines its member embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StructMode {
    /// `h + r - t`: translational, order-sensitive.
    #[default]
    HPlusRMinusT,
    /// `h + r + t`: additive, blind to triple direction.
    HPlusRPlusT,
}

impl StructMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StructMode::HPlusRMinusT => "h+r-t",
            StructMode::HPlusRPlusT => "h+r+t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "h+r-t" => Some(StructMode::HPlusRMinusT),
            "h+r+t" => Some(StructMode::HPlusRPlusT),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterConfig {
    /// Internal embedding width.
    pub d: usize,
    /// Projector hidden width.
    pub d_ff: usize,
    /// Output width; must equal the LM embedding width.
    pub d_lm: usize,
    /// Hop bound the aggregator pads to.
    pub max_hops: usize,
    /// Encoder attention heads.
    pub heads: usize,
    /// Encoder depth.
    pub enc_blocks: usize,
    pub struct_mode: StructMode,
    /// When false, the structural vector is replaced by zeros (the
    /// "no-struct" ablation).
    pub use_struct: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            d: 64,
            d_ff: 128,
            d_lm: 64,
            max_hops: 2,
            heads: 2,
            enc_blocks: 1,
            struct_mode: StructMode::default(),
            use_struct: true,
        }
    }
}

/// A label the adapter can embed: entities and relations share one table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Entity(EntityId),
    Relation(RelationId),
}

/// The trainable adapter. Parameters live in a [`ParamSet`]; vocabulary
/// geometry is pinned to the graph the adapter was built against.
#[derive(Debug, Clone)]
pub struct KnowledgeEmbedder {
    cfg: AdapterConfig,
    params: ParamSet,
    n_entities: usize,
    n_relations: usize,
    vocab_hash: u64,
}

impl KnowledgeEmbedder {
    pub fn new(kg: &KnowledgeGraph, cfg: AdapterConfig, seed: u64) -> Result<Self, AdapterError> {
        if cfg.d == 0 || cfg.heads == 0 || cfg.d % cfg.heads != 0 {
            return Err(AdapterError::DimMismatch(format!(
                "d {} must be a positive multiple of heads {}",
                cfg.d, cfg.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let vocab = kg.entity_count() + kg.relation_count();
        let mut p = ParamSet::new();
        p.insert_uniform("embed.table", vec![vocab.max(1), d], d, &mut rng)?;
        p.insert_uniform("agg.w", vec![cfg.max_hops * d, d], cfg.max_hops * d, &mut rng)?;
        p.insert_zeros("agg.b", vec![d])?;
        p.insert_uniform("enc.in.w", vec![3 * d, d], 3 * d, &mut rng)?;
        p.insert_zeros("enc.in.b", vec![d])?;
        p.insert_uniform("enc.readout", vec![d], d, &mut rng)?;
        for b in 0..cfg.enc_blocks {
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert_uniform(&format!("enc.blk{b}.attn.{w}"), vec![d, d], d, &mut rng)?;
            }
            for bias in ["bq", "bk", "bv", "bo"] {
                p.insert_zeros(&format!("enc.blk{b}.attn.{bias}"), vec![d])?;
            }
            p.insert_ones(&format!("enc.blk{b}.ln1.gain"), vec![d])?;
            p.insert_zeros(&format!("enc.blk{b}.ln1.bias"), vec![d])?;
            p.insert_uniform(&format!("enc.blk{b}.ff.w1"), vec![d, 4 * d], d, &mut rng)?;
            p.insert_zeros(&format!("enc.blk{b}.ff.b1"), vec![4 * d])?;
            p.insert_uniform(&format!("enc.blk{b}.ff.w2"), vec![4 * d, d], 4 * d, &mut rng)?;
            p.insert_zeros(&format!("enc.blk{b}.ff.b2"), vec![d])?;
            p.insert_ones(&format!("enc.blk{b}.ln2.gain"), vec![d])?;
            p.insert_zeros(&format!("enc.blk{b}.ln2.bias"), vec![d])?;
        }
        p.insert_uniform("proj.w1", vec![d, cfg.d_ff], d, &mut rng)?;
        p.insert_zeros("proj.b1", vec![cfg.d_ff])?;
        p.insert_uniform("proj.w2", vec![cfg.d_ff, cfg.d_lm], cfg.d_ff, &mut rng)?;
        p.insert_zeros("proj.b2", vec![cfg.d_lm])?;
        Ok(KnowledgeEmbedder {
            cfg,
            params: p,
            n_entities: kg.entity_count(),
            n_relations: kg.relation_count(),
            vocab_hash: kg.vocab_hash(),
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    /// Exclude the knowledge-encoder block (readout, input projection and
    /// transformer weights) from optimization: the "no-train" ablation.
    pub fn freeze_encoder(&mut self) {
        self.params.set_trainable_by_prefix("enc.", false);
    }

    pub fn bind(&self, g: &mut Graph) -> Binding {
        self.params.bind(g)
    }

    fn label_row(&self, label: Label) -> Result<usize, AdapterError> {
        match label {
            Label::Entity(e) => {
                if (e.0 as usize) < self.n_entities {
                    Ok(e.0 as usize)
                } else {
                    Err(AdapterError::UnknownEntity(e.0))
                }
            }
            Label::Relation(r) => {
                if (r.0 as usize) < self.n_relations {
                    Ok(self.n_entities + r.0 as usize)
                } else {
                    Err(AdapterError::UnknownRelation(r.0))
                }
            }
        }
    }

    /// Trainable table row for an entity or relation label, shape `(d,)`.
    pub fn embed_label(&self, g: &mut Graph, b: &Binding, label: Label) -> Result<Var, AdapterError> {
        let row = self.label_row(label)?;
        let picked = g.gather_rows(b.var("embed.table")?, &[row])?;
        Ok(g.reshape(picked, vec![self.cfg.d])?)
    }

    /// Structural vector of one triple from its member embeddings.
    pub fn struct_embed(&self, g: &mut Graph, e_h: Var, e_r: Var, e_t: Var) -> Result<Var, AdapterError> {
        for v in [e_h, e_r, e_t] {
            if g.value(v).numel() != self.cfg.d || !g.value(v).is_vector() {
                return Err(AdapterError::DimMismatch(format!(
                    "struct_embed expects ({},) vectors, got {:?}",
                    self.cfg.d,
                    g.value(v).shape()
                )));
            }
        }
        let out = match self.cfg.struct_mode {
            StructMode::HPlusRMinusT => {
                let hr = g.add(e_h, e_r)?;
                g.sub(hr, e_t)?
            }
            // Summing the entity pair first keeps the result bit-exact under
            // head/tail exchange (float + is commutative, not associative).
            StructMode::HPlusRPlusT => {
                let ht = g.add(e_h, e_t)?;
                g.add(ht, e_r)?
            }
        };
        Ok(out)
    }

    /// Aggregate per-triple structural vectors into the path-global vector:
    /// zero-pad to `max_hops` slots, concatenate, one affine layer.
    pub fn aggregate_struct(&self, g: &mut Graph, b: &Binding, s: &[Var]) -> Result<Var, AdapterError> {
        let d = self.cfg.d;
        let h = self.cfg.max_hops;
        if s.is_empty() {
            return Err(AdapterError::EmptyPath);
        }
        if s.len() > h {
            return Err(AdapterError::TooManyHops { got: s.len(), max: h });
        }
        let mut parts: Vec<Var> = s.to_vec();
        if s.len() < h {
            parts.push(g.constant(Tensor::zeros(vec![(h - s.len()) * d])));
        }
        let stacked = g.concat(0, &parts)?;
        let row = g.reshape(stacked, vec![1, h * d])?;
        let out = g.matmul(row, b.var("agg.w")?)?;
        let out = g.add_row(out, b.var("agg.b")?)?;
        Ok(g.reshape(out, vec![d])?)
    }

    /// Arithmetic mean of same-role label embeddings along the path.
    pub fn fuse_text(&self, g: &mut Graph, vectors: &[Var]) -> Result<Var, AdapterError> {
        if vectors.is_empty() {
            return Err(AdapterError::EmptyFuseInput);
        }
        let d = g.value(vectors[0]).numel();
        let mut rows = Vec::with_capacity(vectors.len());
        for &v in vectors {
            rows.push(g.reshape(v, vec![1, d])?);
        }
        let stacked = g.concat(0, &rows)?;
        Ok(g.mean_rows(stacked)?)
    }

    /// Concatenate the head, relation and tail text vectors, in that order.
    pub fn consolidate(&self, g: &mut Graph, z_h: Var, z_r: Var, z_t: Var) -> Result<Var, AdapterError> {
        let d = g.value(z_h).numel();
        for v in [z_r, z_t] {
            if g.value(v).numel() != d {
                return Err(AdapterError::DimMismatch(format!(
                    "consolidate expects equal widths, got {:?} vs {:?}",
                    g.value(z_h).shape(),
                    g.value(v).shape()
                )));
            }
        }
        Ok(g.concat(0, &[z_h, z_r, z_t])?)
    }

    /// Fuse the consolidated text vector `(3d,)` with the structural vector
    /// `(d,)` into one path vector `(d,)`: project text to width `d`, run
    /// the 3-token sequence `[readout, text, struct]` through the pre-norm
    /// encoder and return the readout position.
    pub fn encode_knowledge(&self, g: &mut Graph, b: &Binding, z_text: Var, z_struct: Var) -> Result<Var, AdapterError> {
        let d = self.cfg.d;
        if g.value(z_text).numel() != 3 * d || g.value(z_struct).numel() != d {
            return Err(AdapterError::DimMismatch(format!(
                "encode_knowledge expects ({},) and ({},), got {:?} and {:?}",
                3 * d,
                d,
                g.value(z_text).shape(),
                g.value(z_struct).shape()
            )));
        }
        let text_row = g.reshape(z_text, vec![1, 3 * d])?;
        let text_proj = g.matmul(text_row, b.var("enc.in.w")?)?;
        let text_proj = g.add_row(text_proj, b.var("enc.in.b")?)?;
        let readout = g.reshape(b.var("enc.readout")?, vec![1, d])?;
        let struct_row = g.reshape(z_struct, vec![1, d])?;
        let mut x = g.concat(0, &[readout, text_proj, struct_row])?;
        for blk in 0..self.cfg.enc_blocks {
            x = self.encoder_block(g, b, x, blk)?;
        }
        let out = g.slice_rows(x, 0, 1)?;
        Ok(g.reshape(out, vec![d])?)
    }

    fn encoder_block(&self, g: &mut Graph, b: &Binding, x: Var, idx: usize) -> Result<Var, AdapterError> {
        let d = self.cfg.d;
        let hd = d / self.cfg.heads;
        let ln = |g: &mut Graph, x: Var, tag: &str| -> Result<Var, AdapterError> {
            let n = g.layer_norm(x)?;
            let n = g.mul_row(n, b.var(&format!("enc.blk{idx}.{tag}.gain"))?)?;
            Ok(g.add_row(n, b.var(&format!("enc.blk{idx}.{tag}.bias"))?)?)
        };
        let pre = ln(g, x, "ln1")?;
        let q = g.matmul(pre, b.var(&format!("enc.blk{idx}.attn.wq"))?)?;
        let q = g.add_row(q, b.var(&format!("enc.blk{idx}.attn.bq"))?)?;
        let k = g.matmul(pre, b.var(&format!("enc.blk{idx}.attn.wk"))?)?;
        let k = g.add_row(k, b.var(&format!("enc.blk{idx}.attn.bk"))?)?;
        let v = g.matmul(pre, b.var(&format!("enc.blk{idx}.attn.wv"))?)?;
        let v = g.add_row(v, b.var(&format!("enc.blk{idx}.attn.bv"))?)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
            let attn = g.softmax(scores)?;
            heads.push(g.matmul(attn, vh)?);
        }
        let ctx = g.concat(1, &heads)?;
        let attn_out = g.matmul(ctx, b.var(&format!("enc.blk{idx}.attn.wo"))?)?;
        let attn_out = g.add_row(attn_out, b.var(&format!("enc.blk{idx}.attn.bo"))?)?;
        let x = g.add(x, attn_out)?;
        let pre2 = ln(g, x, "ln2")?;
        let ff = g.matmul(pre2, b.var(&format!("enc.blk{idx}.ff.w1"))?)?;
        let ff = g.add_row(ff, b.var(&format!("enc.blk{idx}.ff.b1"))?)?;
        let ff = g.tanh(ff)?;
        let ff = g.matmul(ff, b.var(&format!("enc.blk{idx}.ff.w2"))?)?;
        let ff = g.add_row(ff, b.var(&format!("enc.blk{idx}.ff.b2"))?)?;
        Ok(g.add(x, ff)?)
    }

    /// Encode one reasoning path into its fused `(d,)` vector by composing
    /// the component operations over the path's triples.
    pub fn encode_path(&self, g: &mut Graph, b: &Binding, path: &ReasoningPath) -> Result<Var, AdapterError> {
        let triples = path.triples();
        if triples.is_empty() {
            return Err(AdapterError::EmptyPath);
        }
        if triples.len() > self.cfg.max_hops {
            return Err(AdapterError::TooManyHops { got: triples.len(), max: self.cfg.max_hops });
        }
        let mut heads = Vec::with_capacity(triples.len());
        let mut rels = Vec::with_capacity(triples.len());
        let mut tails = Vec::with_capacity(triples.len());
        let mut structs = Vec::with_capacity(triples.len());
        for t in &triples {
            let e_h = self.embed_label(g, b, Label::Entity(t.head))?;
            let e_r = self.embed_label(g, b, Label::Relation(t.relation))?;
            let e_t = self.embed_label(g, b, Label::Entity(t.tail))?;
            structs.push(self.struct_embed(g, e_h, e_r, e_t)?);
            heads.push(e_h);
            rels.push(e_r);
            tails.push(e_t);
        }
        let z_struct = if self.cfg.use_struct {
            self.aggregate_struct(g, b, &structs)?
        } else {
            g.constant(Tensor::zeros(vec![self.cfg.d]))
        };
        let z_h = self.fuse_text(g, &heads)?;
        let z_r = self.fuse_text(g, &rels)?;
        let z_t = self.fuse_text(g, &tails)?;
        let z_text = self.consolidate(g, z_h, z_r, z_t)?;
        self.encode_knowledge(g, b, z_text, z_struct)
    }

    /// Apply the two-layer projector to each path vector independently,
    /// preserving order: one `(d_lm,)` soft token per path.
    pub fn project_soft_prompt(&self, g: &mut Graph, b: &Binding, path_vectors: &[Var]) -> Result<Vec<Var>, AdapterError> {
        if path_vectors.is_empty() {
            return Err(AdapterError::EmptyProjection);
        }
        let mut out = Vec::with_capacity(path_vectors.len());
        for &z in path_vectors {
            if g.value(z).numel() != self.cfg.d {
                return Err(AdapterError::DimMismatch(format!(
                    "projector expects ({},) inputs, got {:?}",
                    self.cfg.d,
                    g.value(z).shape()
                )));
            }
            let row = g.reshape(z, vec![1, self.cfg.d])?;
            let hidden = g.matmul(row, b.var("proj.w1")?)?;
            let hidden = g.add_row(hidden, b.var("proj.b1")?)?;
            let hidden = g.tanh(hidden)?;
            let proj = g.matmul(hidden, b.var("proj.w2")?)?;
            let proj = g.add_row(proj, b.var("proj.b2")?)?;
            out.push(g.reshape(proj, vec![self.cfg.d_lm])?);
        }
        Ok(out)
    }

    /// Encode paths and project soft tokens on a caller-supplied graph,
    /// keeping every output differentiable. Returns one `Var` per path.
    pub fn soft_prompt_on_graph(&self, g: &mut Graph, b: &Binding, paths: &[ReasoningPath]) -> Result<Vec<Var>, AdapterError> {
        let mut vectors = Vec::with_capacity(paths.len());
        for p in paths {
            vectors.push(self.encode_path(g, b, p)?);
        }
        self.project_soft_prompt(g, b, &vectors)
    }

    /// Inference convenience: encode paths to plain soft vectors on a fresh
    /// internal graph, without gradients.
    pub fn encode_soft_prompt(&self, paths: &[ReasoningPath]) -> Result<Vec<Vec<f64>>, AdapterError> {
        let mut g = Graph::new();
        let binding = self.params.bind_frozen(&mut g);
        let soft = self.soft_prompt_on_graph(&mut g, &binding, paths)?;
        Ok(soft.into_iter().map(|v| g.value(v).data().to_vec()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), AdapterError> {
        let meta = vec![
            ("d".to_string(), self.cfg.d.to_string()),
            ("d_ff".to_string(), self.cfg.d_ff.to_string()),
            ("d_lm".to_string(), self.cfg.d_lm.to_string()),
            ("max_hops".to_string(), self.cfg.max_hops.to_string()),
            ("heads".to_string(), self.cfg.heads.to_string()),
            ("enc_blocks".to_string(), self.cfg.enc_blocks.to_string()),
            ("struct_mode".to_string(), self.cfg.struct_mode.as_str().to_string()),
            ("use_struct".to_string(), self.cfg.use_struct.to_string()),
            ("vocab_hash".to_string(), format!("{:x}", self.vocab_hash)),
            ("n_entities".to_string(), self.n_entities.to_string()),
            ("n_relations".to_string(), self.n_relations.to_string()),
        ];
        checkpoint::save(&self.params, &meta, path)?;
        Ok(())
    }

    /// Load an adapter checkpoint, refusing graphs whose vocabulary hash
    /// differs from the one the adapter was trained against.
    pub fn load(path: &Path, kg: &KnowledgeGraph) -> Result<Self, AdapterError> {
        let ck = checkpoint::load(path)?;
        let get = |key: &str| -> Result<String, AdapterError> {
            ck.meta_value(key)
                .map(str::to_string)
                .ok_or_else(|| AdapterError::BadCheckpoint(format!("missing meta `{key}`")))
        };
        let parse_usize = |key: &str| -> Result<usize, AdapterError> {
            get(key)?.parse().map_err(|_| AdapterError::BadCheckpoint(format!("bad meta `{key}`")))
        };
        let expected = u64::from_str_radix(&get("vocab_hash")?, 16)
            .map_err(|_| AdapterError::BadCheckpoint("bad meta `vocab_hash`".into()))?;
        let found = kg.vocab_hash();
        if expected != found {
            return Err(AdapterError::VocabMismatch { expected, found });
        }
        let cfg = AdapterConfig {
            d: parse_usize("d")?,
            d_ff: parse_usize("d_ff")?,
            d_lm: parse_usize("d_lm")?,
            max_hops: parse_usize("max_hops")?,
            heads: parse_usize("heads")?,
            enc_blocks: parse_usize("enc_blocks")?,
            struct_mode: StructMode::parse(&get("struct_mode")?)
                .ok_or_else(|| AdapterError::BadCheckpoint("bad meta `struct_mode`".into()))?,
            use_struct: get("use_struct")? == "true",
        };
        let mut fresh = KnowledgeEmbedder::new(kg, cfg, 0)?;
        ck.restore_into(&mut fresh.params)?;
        Ok(fresh)
    }
}

/// Gradient-check the composed path encoding and projection with respect to
/// every adapter parameter, on a tiny seeded instance.
pub fn gradcheck_suite(seed: u64, cases: usize) -> Result<Vec<gradcheck::CheckResult>, AdapterError> {
    use rand::Rng;
    let kg = fixture_graph();
    let cfg = AdapterConfig {
        d: 6,
        d_ff: 10,
        d_lm: 8,
        max_hops: 2,
        heads: 2,
        enc_blocks: 1,
        struct_mode: StructMode::HPlusRMinusT,
        use_struct: true,
    };
    let emb = KnowledgeEmbedder::new(&kg, cfg, seed)?;
    let names: Vec<String> = emb.params.iter().map(|p| p.name.clone()).collect();
    let values: Vec<Tensor> = emb.params.iter().map(|p| p.value.clone()).collect();

    let anchor = kg.entity_id("a").expect("fixture entity");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..cases {
        let links = kg.enumerate_relation_links(anchor, 2)?;
        let link = &links[rng.random_range(0..links.len())];
        let paths = kg.instantiate_paths(anchor, link, 2)?;
        if paths.is_empty() {
            continue;
        }
        let weights: Vec<f64> = (0..cfg_d_lm(&emb)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Tensor::vector(&weights).expect("finite");
        let err = gradcheck::check_grads(&values, |g, vars| {
            let binding = Binding::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let soft = emb
                .soft_prompt_on_graph(g, &binding, &paths)
                .map_err(|e| NumericsError::ShapeMismatch { op: "adapter".into(), detail: e.to_string() })?;
            let wv = g.constant(w.clone());
            let mut acc = None;
            for s in soft {
                let weighted = g.mul(s, wv)?;
                let total = g.sum_all(weighted)?;
                acc = Some(match acc {
                    None => total,
                    Some(prev) => g.add(prev, total)?,
                });
            }
            Ok(acc.expect("at least one path"))
        })?;
        worst = worst.max(err);
        checked += 1;
    }
    Ok(vec![gradcheck::CheckResult {
        name: "adapter_encode_and_project".into(),
        cases: checked,
        max_rel_err: worst,
    }])
}

fn cfg_d_lm(emb: &KnowledgeEmbedder) -> usize {
    emb.cfg.d_lm
}

/// Small fixed graph shared by the gradcheck suite and the unit tests.
fn fixture_graph() -> KnowledgeGraph {
    KnowledgeGraph::from_labeled_triples(
        [
            ("a", "r0", "b"),
            ("a", "r0", "c"),
            ("a", "r1", "b"),
            ("b", "r1", "c"),
            ("b", "r0", "a"),
            ("c", "r1", "a"),
        ]
        .into_iter(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(mode: StructMode) -> AdapterConfig {
        AdapterConfig {
            d: 6,
            d_ff: 10,
            d_lm: 8,
            max_hops: 2,
            heads: 2,
            enc_blocks: 1,
            struct_mode: mode,
            use_struct: true,
        }
    }

    fn setup(mode: StructMode) -> (KnowledgeGraph, KnowledgeEmbedder) {
        let kg = fixture_graph();
        let emb = KnowledgeEmbedder::new(&kg, tiny_cfg(mode), 7).unwrap();
        (kg, emb)
    }

    fn vector(g: &Graph, v: Var) -> Vec<f64> {
        g.value(v).data().to_vec()
    }

    #[test]
    fn embed_label_returns_the_table_row() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let e0 = emb.embed_label(&mut g, &b, Label::Entity(EntityId(0))).unwrap();
        assert_eq!(g.value(e0).shape(), &[6]);
        let expect: Vec<f64> = (0..6).map(|c| emb.params().get("embed.table").unwrap().value.at(0, c)).collect();
        assert_eq!(vector(&g, e0), expect);

        let again = emb.embed_label(&mut g, &b, Label::Entity(EntityId(0))).unwrap();
        assert_eq!(vector(&g, e0), vector(&g, again));

        let other = emb.embed_label(&mut g, &b, Label::Entity(EntityId(1))).unwrap();
        assert_ne!(vector(&g, e0), vector(&g, other), "seeded rows collide");

        assert!(matches!(
            emb.embed_label(&mut g, &b, Label::Entity(EntityId(99))),
            Err(AdapterError::UnknownEntity(99))
        ));
    }

    #[test]
    fn struct_embed_zero_inputs_give_zero_in_both_modes() {
        for mode in [StructMode::HPlusRMinusT, StructMode::HPlusRPlusT] {
            let (_, emb) = setup(mode);
            let mut g = Graph::new();
            let z = g.constant(Tensor::zeros(vec![6]));
            let s = emb.struct_embed(&mut g, z, z, z).unwrap();
            assert_eq!(vector(&g, s), vec![0.0; 6]);
        }
    }

    #[test]
    fn additive_mode_cannot_distinguish_triple_order() {
        let (_, emb) = setup(StructMode::HPlusRPlusT);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap());
        let y = g.constant(Tensor::vector(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let z = g.constant(Tensor::vector(&[-1.0, 4.0, 2.0, -0.5, 1.5, 2.5]).unwrap());
        let fwd = emb.struct_embed(&mut g, x, y, z).unwrap();
        let rev = emb.struct_embed(&mut g, z, y, x).unwrap();
        assert_eq!(vector(&g, fwd), vector(&g, rev));
    }

    #[test]
    fn translational_mode_distinguishes_order_whenever_ends_differ() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap());
        let y = g.constant(Tensor::vector(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let z = g.constant(Tensor::vector(&[-1.0, 4.0, 2.0, -0.5, 1.5, 2.5]).unwrap());
        let fwd = emb.struct_embed(&mut g, x, y, z).unwrap();
        let rev = emb.struct_embed(&mut g, z, y, x).unwrap();
        let diff: Vec<f64> = vector(&g, fwd).iter().zip(vector(&g, rev)).map(|(a, b)| a - b).collect();
        // fwd - rev = 2 (x - z).
        let expect: Vec<f64> = vector(&g, x).iter().zip(vector(&g, z)).map(|(a, b)| 2.0 * (a - b)).collect();
        for (d, e) in diff.iter().zip(&expect) {
            assert!((d - e).abs() < 1e-12);
        }
        assert!(diff.iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn aggregate_pads_with_zero_slots() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let b = emb.bind(&mut g);

        // All-zero structural vectors with the zero-initialized bias give zero.
        let z1 = g.constant(Tensor::zeros(vec![6]));
        let z2 = g.constant(Tensor::zeros(vec![6]));
        let out = emb.aggregate_struct(&mut g, &b, &[z1, z2]).unwrap();
        assert_eq!(vector(&g, out), vec![0.0; 6]);

        // m = 1, max_hops = 2: equals the affine layer applied to [s1 || 0].
        let s1 = g.constant(Tensor::vector(&[0.5, -1.0, 2.0, 0.0, 1.0, -0.5]).unwrap());
        let padded = emb.aggregate_struct(&mut g, &b, &[s1]).unwrap();
        let w = &emb.params().get("agg.w").unwrap().value;
        let bias = &emb.params().get("agg.b").unwrap().value;
        let s1_data = [0.5, -1.0, 2.0, 0.0, 1.0, -0.5];
        let mut expect = vec![0.0; 6];
        for (c, e) in expect.iter_mut().enumerate() {
            *e = bias.data()[c];
            for (r, s) in s1_data.iter().enumerate() {
                *e += s * w.at(r, c); // rows 6..12 multiply the zero padding
            }
        }
        let got = vector(&g, padded);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        // Too many hops errors.
        let s3 = g.constant(Tensor::zeros(vec![6]));
        assert!(matches!(
            emb.aggregate_struct(&mut g, &b, &[z1, z2, s3]),
            Err(AdapterError::TooManyHops { got: 3, max: 2 })
        ));
    }

    #[test]
    fn fuse_text_is_a_symmetric_mean() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let single = emb.fuse_text(&mut g, &[v]).unwrap();
        assert_eq!(vector(&g, single), vector(&g, v));

        let neg = g.scale(v, -1.0).unwrap();
        let zero = emb.fuse_text(&mut g, &[v, neg]).unwrap();
        assert!(vector(&g, zero).iter().all(|x| x.abs() < 1e-12));

        let w = g.constant(Tensor::vector(&[0.5, 0.5, -1.0, 2.0, 0.0, 1.0]).unwrap());
        let ab = emb.fuse_text(&mut g, &[v, w]).unwrap();
        let ba = emb.fuse_text(&mut g, &[w, v]).unwrap();
        assert_eq!(vector(&g, ab), vector(&g, ba));

        assert!(matches!(emb.fuse_text(&mut g, &[]), Err(AdapterError::EmptyFuseInput)));
    }

    #[test]
    fn consolidate_orders_head_relation_tail() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let cfg = tiny_cfg(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let h = g.constant(Tensor::vector(&[1.0; 6]).unwrap());
        let r = g.constant(Tensor::vector(&[2.0; 6]).unwrap());
        let t = g.constant(Tensor::vector(&[3.0; 6]).unwrap());
        let z = emb.consolidate(&mut g, h, r, t).unwrap();
        assert_eq!(g.value(z).numel(), 3 * cfg.d);
        let data = vector(&g, z);
        assert!(data[..6].iter().all(|x| *x == 1.0));
        assert!(data[6..12].iter().all(|x| *x == 2.0));
        assert!(data[12..].iter().all(|x| *x == 3.0));
        let swapped = emb.consolidate(&mut g, t, r, h).unwrap();
        assert_ne!(vector(&g, z), vector(&g, swapped));
    }

    #[test]
    fn consolidate_small_example() {
        let kg = fixture_graph();
        let cfg = AdapterConfig { d: 2, d_ff: 4, d_lm: 4, heads: 1, ..tiny_cfg(StructMode::HPlusRMinusT) };
        let emb = KnowledgeEmbedder::new(&kg, cfg, 0).unwrap();
        let mut g = Graph::new();
        let h = g.constant(Tensor::vector(&[1.0, 2.0]).unwrap());
        let r = g.constant(Tensor::vector(&[3.0, 4.0]).unwrap());
        let t = g.constant(Tensor::vector(&[5.0, 6.0]).unwrap());
        let z = emb.consolidate(&mut g, h, r, t).unwrap();
        assert_eq!(vector(&g, z), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn encode_knowledge_shape_and_struct_sensitivity() {
        let (_, emb) = setup(StructMode::HPlusRMinusT);
        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let zt = g.constant(Tensor::vector(&(0..18).map(|i| 0.1 * i as f64).collect::<Vec<_>>()).unwrap());
        let zs1 = g.constant(Tensor::vector(&[0.3; 6]).unwrap());
        let zs2 = g.constant(Tensor::vector(&[-0.9, 0.4, 0.0, 1.2, -0.3, 0.8]).unwrap());
        let f1 = emb.encode_knowledge(&mut g, &b, zt, zs1).unwrap();
        let f2 = emb.encode_knowledge(&mut g, &b, zt, zs2).unwrap();
        assert_eq!(g.value(f1).shape(), &[6]);
        assert_ne!(vector(&g, f1), vector(&g, f2), "structure vector must matter");
    }

    #[test]
    fn encode_path_decomposes_into_triples() {
        let (kg, emb) = setup(StructMode::HPlusRMinusT);
        let a = kg.entity_id("a").unwrap();
        let links = kg.enumerate_relation_links(a, 2).unwrap();
        let two_hop = links.iter().find(|l| l.len() == 2).unwrap();
        let paths = kg.instantiate_paths(a, two_hop, 1).unwrap();
        let path = &paths[0];
        assert_eq!(path.triples().len(), 2);
        assert_eq!(path.triples()[0].tail, path.triples()[1].head);

        // Composing the public component ops reproduces encode_path exactly.
        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let direct = emb.encode_path(&mut g, &b, path).unwrap();
        let mut heads = vec![];
        let mut rels = vec![];
        let mut tails = vec![];
        let mut structs = vec![];
        for t in path.triples() {
            let eh = emb.embed_label(&mut g, &b, Label::Entity(t.head)).unwrap();
            let er = emb.embed_label(&mut g, &b, Label::Relation(t.relation)).unwrap();
            let et = emb.embed_label(&mut g, &b, Label::Entity(t.tail)).unwrap();
            structs.push(emb.struct_embed(&mut g, eh, er, et).unwrap());
            heads.push(eh);
            rels.push(er);
            tails.push(et);
        }
        let zs = emb.aggregate_struct(&mut g, &b, &structs).unwrap();
        let zh = emb.fuse_text(&mut g, &heads).unwrap();
        let zr = emb.fuse_text(&mut g, &rels).unwrap();
        let zt_ = emb.fuse_text(&mut g, &tails).unwrap();
        let ztext = emb.consolidate(&mut g, zh, zr, zt_).unwrap();
        let manual = emb.encode_knowledge(&mut g, &b, ztext, zs).unwrap();
        assert_eq!(vector(&g, direct), vector(&g, manual));
    }

    #[test]
    fn encode_path_is_deterministic() {
        let (kg, emb) = setup(StructMode::HPlusRMinusT);
        let a = kg.entity_id("a").unwrap();
        let link = &kg.enumerate_relation_links(a, 1).unwrap()[0];
        let path = &kg.instantiate_paths(a, link, 1).unwrap()[0];
        let s1 = emb.encode_soft_prompt(std::slice::from_ref(path)).unwrap();
        let s2 = emb.encode_soft_prompt(std::slice::from_ref(path)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn one_soft_token_per_path_in_order() {
        let (kg, emb) = setup(StructMode::HPlusRMinusT);
        let a = kg.entity_id("a").unwrap();
        let links = kg.enumerate_relation_links(a, 2).unwrap();
        let mut paths = Vec::new();
        for l in &links {
            paths.extend(kg.instantiate_paths(a, l, 2).unwrap());
        }
        assert!(paths.len() >= 3);
        let soft = emb.encode_soft_prompt(&paths).unwrap();
        assert_eq!(soft.len(), paths.len());
        assert!(soft.iter().all(|v| v.len() == 8));

        // Permuting input paths permutes output tokens identically.
        let mut permuted = paths.clone();
        permuted.rotate_left(1);
        let soft_p = emb.encode_soft_prompt(&permuted).unwrap();
        for (i, v) in soft_p.iter().enumerate() {
            assert_eq!(*v, soft[(i + 1) % paths.len()]);
        }
    }

    #[test]
    fn reversing_triples_in_additive_mode_leaves_struct_unchanged() {
        let kg = fixture_graph();
        let a = kg.entity_id("a").unwrap();
        let link = &kg.enumerate_relation_links(a, 2).unwrap()[0];
        let path = &kg.instantiate_paths(a, link, 1).unwrap()[0];

        let cfg = tiny_cfg(StructMode::HPlusRPlusT);
        let emb = KnowledgeEmbedder::new(&kg, cfg, 3).unwrap();
        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let compute_zs = |g: &mut Graph, triples: &[crate::kg::Triple]| {
            let mut structs = vec![];
            for t in triples {
                let eh = emb.embed_label(g, &b, Label::Entity(t.head)).unwrap();
                let er = emb.embed_label(g, &b, Label::Relation(t.relation)).unwrap();
                let et = emb.embed_label(g, &b, Label::Entity(t.tail)).unwrap();
                structs.push(emb.struct_embed(g, eh, er, et).unwrap());
            }
            emb.aggregate_struct(g, &b, &structs).unwrap()
        };
        let forward = path.triples();
        let reversed: Vec<crate::kg::Triple> = forward
            .iter()
            .map(|t| crate::kg::Triple { head: t.tail, relation: t.relation, tail: t.head })
            .collect();
        let zs_f = compute_zs(&mut g, &forward);
        let zs_r = compute_zs(&mut g, &reversed);
        assert_eq!(vector(&g, zs_f), vector(&g, zs_r), "additive mode must be order-blind");
    }

    #[test]
    fn every_parameter_group_receives_gradient() {
        let (kg, emb) = setup(StructMode::HPlusRMinusT);
        let a = kg.entity_id("a").unwrap();
        let links = kg.enumerate_relation_links(a, 2).unwrap();
        let mut paths = Vec::new();
        for l in &links {
            paths.extend(kg.instantiate_paths(a, l, 2).unwrap());
        }
        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let soft = emb.soft_prompt_on_graph(&mut g, &b, &paths).unwrap();
        let mut acc = None;
        for s in soft {
            let sq = g.mul(s, s).unwrap();
            let total = g.sum_all(sq).unwrap();
            acc = Some(match acc {
                None => total,
                Some(prev) => g.add(prev, total).unwrap(),
            });
        }
        g.backward(acc.unwrap()).unwrap();
        let groups = ["embed.", "agg.", "enc.in", "enc.readout", "enc.blk0", "proj."];
        for group in groups {
            let mut norm = 0.0;
            for p in emb.params().iter().filter(|p| p.name.starts_with(group)) {
                let var = b.var(&p.name).unwrap();
                if let Some(grad) = g.grad(var) {
                    norm += grad.data().iter().map(|x| x * x).sum::<f64>();
                }
            }
            assert!(norm > 0.0, "group {group} received no gradient");
        }
    }

    #[test]
    fn no_struct_ablation_zeroes_the_aggregator_path() {
        let kg = fixture_graph();
        let mut cfg = tiny_cfg(StructMode::HPlusRMinusT);
        cfg.use_struct = false;
        let emb = KnowledgeEmbedder::new(&kg, cfg, 7).unwrap();
        let a = kg.entity_id("a").unwrap();
        let link = &kg.enumerate_relation_links(a, 1).unwrap()[0];
        let paths = kg.instantiate_paths(a, link, 1).unwrap();

        let mut g = Graph::new();
        let b = emb.bind(&mut g);
        let soft = emb.soft_prompt_on_graph(&mut g, &b, &paths).unwrap();
        let sq = g.mul(soft[0], soft[0]).unwrap();
        let loss = g.sum_all(sq).unwrap();
        g.backward(loss).unwrap();
        let agg_w = b.var("agg.w").unwrap();
        let grad = g.grad(agg_w).unwrap();
        assert!(grad.data().iter().all(|x| *x == 0.0), "aggregator must be disconnected");
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        let results = gradcheck_suite(5, 3).unwrap();
        for r in &results {
            assert!(r.max_rel_err < 1e-4, "{} err {:.3e}", r.name, r.max_rel_err);
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_graph_guard() {
        let (kg, emb) = setup(StructMode::HPlusRMinusT);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.ckpt");
        emb.save(&path).unwrap();
        let loaded = KnowledgeEmbedder::load(&path, &kg).unwrap();
        assert_eq!(loaded.config(), emb.config());

        // A different graph (different vocabulary) must be refused.
        let other = KnowledgeGraph::from_labeled_triples([("x", "q", "y")].into_iter());
        match KnowledgeEmbedder::load(&path, &other) {
            Err(AdapterError::VocabMismatch { .. }) => {}
            other => panic!("expected vocab mismatch, got {other:?}"),
        }
    }

    #[test]
    fn freeze_encoder_marks_only_encoder_weights() {
        let (_, mut emb) = setup(StructMode::HPlusRMinusT);
        emb.freeze_encoder();
        for p in emb.params().iter() {
            if p.name.starts_with("enc.") {
                assert!(!p.trainable, "{} should be frozen", p.name);
            } else {
                assert!(p.trainable, "{} should stay trainable", p.name);
            }
        }
    }
}
