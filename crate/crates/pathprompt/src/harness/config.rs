//! Training/evaluation configuration, loadable from a plain-text
//! `key = value` file with flag overrides layered on top. No environment
//! variables are consulted anywhere.

use std::path::Path;

use crate::adapter::StructMode;
use crate::numerics::Reduction;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

impl LossReduction {
    pub fn as_reduction(&self) -> Reduction {
        match self {
            LossReduction::Mean => Reduction::Mean,
            LossReduction::Sum => Reduction::Sum,
        }
    }
}

/// Every knob of the pipeline. Field defaults follow the reference training
/// recipe: one epoch, batches of 4, initial learning rate 2e-3 on a cosine
/// schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Top-k relation links kept per question.
    pub k: usize,
    /// Maximum instantiated paths per selected link.
    pub path_cap: usize,
    pub struct_mode: StructMode,
    pub loss_reduction: LossReduction,
    pub max_hops: usize,
    // Ablation switches; independent of each other.
    pub no_struct: bool,
    pub no_train_encoder: bool,
    pub random_retrieve: bool,
    // Adapter geometry.
    pub adapter_d: usize,
    pub adapter_ff: usize,
    pub adapter_heads: usize,
    pub adapter_blocks: usize,
    /// Warm-start the adapter's label table from the frozen backend's token
    /// embeddings (mean over each label's tokens). Applies only when
    /// `adapter_d` equals the backend width.
    pub init_labels_from_lm: bool,
    /// Keep the label table trainable. With a warm-started table, freezing
    /// it treats label embedding as a fixed pretrained encoder; only the
    /// aggregator, knowledge encoder and projector tune.
    pub tune_label_table: bool,
    // Hop-classifier training.
    pub hop_d: usize,
    pub hop_epochs: usize,
    // Generation backend geometry and pretraining.
    pub lm_d_model: usize,
    pub lm_blocks: usize,
    pub lm_heads: usize,
    pub lm_context: usize,
    pub lm_epochs: usize,
    pub lm_lr0: f64,
    /// Embedding-noise level during backend pretraining.
    pub lm_noise_std: f64,
    /// During adapter training, rotate which gold-terminal path leads the
    /// soft prompt (the target follows it). Multiplies the distinct
    /// (leading path, answer) pairs the adapter sees without ever training
    /// on a wrong answer.
    pub rotate_gold_paths: bool,
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr0: 2e-3,
            schedule: Schedule::Cosine,
            seed: 0,
            k: 4,
            path_cap: 8,
            struct_mode: StructMode::HPlusRMinusT,
            loss_reduction: LossReduction::Mean,
            max_hops: 2,
            no_struct: false,
            no_train_encoder: false,
            random_retrieve: false,
            adapter_d: 64,
            adapter_ff: 128,
            adapter_heads: 2,
            adapter_blocks: 1,
            init_labels_from_lm: true,
            tune_label_table: false,
            hop_d: 32,
            hop_epochs: 40,
            lm_d_model: 64,
            lm_blocks: 2,
            lm_heads: 2,
            lm_context: 256,
            lm_epochs: 30,
            lm_lr0: 1e-3,
            lm_noise_std: 0.02,
            rotate_gold_paths: true,
            max_new_tokens: 4,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::BadConfig { detail: format!("`{key}` expects a boolean, got `{value}`") }),
    }
}

impl TrainConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let bad = |detail: String| HarnessError::BadConfig { detail };
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("`{key}` expects an integer, got `{v}`")));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("`{key}` expects a number, got `{v}`")));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("`{key}` expects an integer, got `{v}`")));
        match key {
            "epochs" => self.epochs = parse_usize(value)?,
            "batch_size" => self.batch_size = parse_usize(value)?,
            "lr0" => self.lr0 = parse_f64(value)?,
            "schedule" => {
                self.schedule = match value {
                    "cosine" => Schedule::Cosine,
                    "constant" => Schedule::Constant,
                    _ => return Err(bad(format!("`schedule` must be cosine|constant, got `{value}`"))),
                }
            }
            "seed" => self.seed = parse_u64(value)?,
            "k" => self.k = parse_usize(value)?,
            "path_cap" => self.path_cap = parse_usize(value)?,
            "struct_mode" => {
                self.struct_mode = StructMode::parse(value)
                    .ok_or_else(|| bad(format!("`struct_mode` must be h+r-t|h+r+t, got `{value}`")))?
            }
            "loss_reduction" => {
                self.loss_reduction = match value {
                    "mean" => LossReduction::Mean,
                    "sum" => LossReduction::Sum,
                    _ => return Err(bad(format!("`loss_reduction` must be mean|sum, got `{value}`"))),
                }
            }
            "max_hops" => self.max_hops = parse_usize(value)?,
            "no_struct" => self.no_struct = parse_bool(key, value)?,
            "no_train_encoder" => self.no_train_encoder = parse_bool(key, value)?,
            "random_retrieve" => self.random_retrieve = parse_bool(key, value)?,
            "adapter_d" => self.adapter_d = parse_usize(value)?,
            "adapter_ff" => self.adapter_ff = parse_usize(value)?,
            "adapter_heads" => self.adapter_heads = parse_usize(value)?,
            "adapter_blocks" => self.adapter_blocks = parse_usize(value)?,
            "init_labels_from_lm" => self.init_labels_from_lm = parse_bool(key, value)?,
            "tune_label_table" => self.tune_label_table = parse_bool(key, value)?,
            "hop_d" => self.hop_d = parse_usize(value)?,
            "hop_epochs" => self.hop_epochs = parse_usize(value)?,
            "lm_d_model" => self.lm_d_model = parse_usize(value)?,
            "lm_blocks" => self.lm_blocks = parse_usize(value)?,
            "lm_heads" => self.lm_heads = parse_usize(value)?,
            "lm_context" => self.lm_context = parse_usize(value)?,
            "lm_epochs" => self.lm_epochs = parse_usize(value)?,
            "lm_lr0" => self.lm_lr0 = parse_f64(value)?,
            "lm_noise_std" => self.lm_noise_std = parse_f64(value)?,
            "rotate_gold_paths" => self.rotate_gold_paths = parse_bool(key, value)?,
            "max_new_tokens" => self.max_new_tokens = parse_usize(value)?,
            _ => return Err(bad(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Defaults overlaid with `key = value` lines. `#` starts a comment.
    pub fn from_kv_file(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg = TrainConfig::default();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::BadConfig {
                detail: format!("{}:{}: expected `key = value`, got `{raw}`", path.display(), i + 1),
            })?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let positives = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("path_cap", self.path_cap),
            ("max_hops", self.max_hops),
            ("adapter_d", self.adapter_d),
            ("adapter_ff", self.adapter_ff),
            ("adapter_heads", self.adapter_heads),
            ("adapter_blocks", self.adapter_blocks),
            ("hop_d", self.hop_d),
            ("hop_epochs", self.hop_epochs),
            ("lm_d_model", self.lm_d_model),
            ("lm_blocks", self.lm_blocks),
            ("lm_heads", self.lm_heads),
            ("lm_context", self.lm_context),
            ("lm_epochs", self.lm_epochs),
            ("max_new_tokens", self.max_new_tokens),
        ];
        for (name, value) in positives {
            if value == 0 {
                return Err(HarnessError::BadConfig { detail: format!("`{name}` must be positive") });
            }
        }
        if !(self.lr0 > 0.0) || !(self.lm_lr0 > 0.0) {
            return Err(HarnessError::BadConfig { detail: "learning rates must be positive".into() });
        }
        Ok(())
    }
}
