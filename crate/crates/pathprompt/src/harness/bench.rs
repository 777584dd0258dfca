//! The standard synthetic benchmark and the ablation runner.
//!
//! "Standard" pins the whole recipe to a seed: 50 entities, 10 relations,
//! 100 train / 20 test questions, 2-hop ceiling, 300 adapter steps
//! (12 epochs x 25 batches of 4).

use crate::lm::{pretrain_lm, FrozenLM, LmConfig, LmTrainConfig};

use super::eval::{evaluate, EvalReport};
use super::synth::{build_pretrain_corpus, generate, SynthConfig, SynthData};
use super::template::PromptTemplate;
use super::train::{train_adapter, TrainOutcome};
use super::{HarnessError, TrainConfig};

pub fn standard_synth_config(seed: u64) -> SynthConfig {
    SynthConfig { seed, entities: 50, relations: 10, train_questions: 100, test_questions: 20, max_hops: 2 }
}

pub fn standard_train_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, epochs: 12, lr0: 8e-4, ..TrainConfig::default() }
}

/// The ablation axes reported by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Full,
    NoStruct,
    NoTrainEncoder,
    RandomRetrieve,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] =
        [AblationMode::Full, AblationMode::NoStruct, AblationMode::NoTrainEncoder, AblationMode::RandomRetrieve];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoStruct => "no-struct",
            AblationMode::NoTrainEncoder => "no-train-encoder",
            AblationMode::RandomRetrieve => "random-retrieve",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(AblationMode::Full),
            "no-struct" => Some(AblationMode::NoStruct),
            "no-train-encoder" => Some(AblationMode::NoTrainEncoder),
            "random-retrieve" => Some(AblationMode::RandomRetrieve),
            _ => None,
        }
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        cfg.no_struct = false;
        cfg.no_train_encoder = false;
        cfg.random_retrieve = false;
        match self {
            AblationMode::Full => {}
            AblationMode::NoStruct => cfg.no_struct = true,
            AblationMode::NoTrainEncoder => cfg.no_train_encoder = true,
            AblationMode::RandomRetrieve => cfg.random_retrieve = true,
        }
    }
}

/// Generate the standard benchmark data for a seed.
pub fn standard_benchmark(seed: u64) -> Result<SynthData, HarnessError> {
    generate(&standard_synth_config(seed))
}

/// Pretrain (then freeze) the generation backend for a dataset.
pub fn pretrain_backend(
    data: &SynthData,
    template: &PromptTemplate,
    cfg: &TrainConfig,
) -> Result<FrozenLM, HarnessError> {
    let corpus = build_pretrain_corpus(&data.kg, &data.train, template, cfg)?;
    let lm_cfg = LmConfig {
        d_model: cfg.lm_d_model,
        blocks: cfg.lm_blocks,
        heads: cfg.lm_heads,
        context: cfg.lm_context,
    };
    let (lm, _) = pretrain_lm(
        &corpus,
        lm_cfg,
        &LmTrainConfig { epochs: cfg.lm_epochs, lr0: cfg.lm_lr0, seed: cfg.seed, noise_std: cfg.lm_noise_std },
    )?;
    Ok(lm)
}

/// Train under one ablation mode and evaluate on both splits.
pub struct ModeRun {
    pub mode: AblationMode,
    pub outcome: TrainOutcome,
    pub train_report: EvalReport,
    pub test_report: EvalReport,
}

pub fn run_mode(
    data: &SynthData,
    lm: &FrozenLM,
    template: &PromptTemplate,
    base_cfg: &TrainConfig,
    mode: AblationMode,
) -> Result<ModeRun, HarnessError> {
    let mut cfg = base_cfg.clone();
    mode.apply(&mut cfg);
    let outcome = train_adapter(&data.kg, &data.train, lm, template, &cfg)?;
    let train_report = evaluate(&data.kg, &data.train, lm, &outcome.adapter, &outcome.classifier, template, &cfg)?;
    let test_report = evaluate(&data.kg, &data.test, lm, &outcome.adapter, &outcome.classifier, template, &cfg)?;
    Ok(ModeRun { mode, outcome, train_report, test_report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_configs_are_pinned() {
        let s = standard_synth_config(0);
        assert_eq!((s.entities, s.relations, s.train_questions, s.test_questions, s.max_hops), (50, 10, 100, 20, 2));
        let t = standard_train_config(0);
        assert_eq!(t.epochs, 12);
        assert_eq!(t.batch_size, 4);
        assert_eq!(t.lr0, 8e-4);
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in AblationMode::ALL {
            assert_eq!(AblationMode::parse(mode.as_str()), Some(mode));
        }
        assert_eq!(AblationMode::parse("bogus"), None);
    }

    #[test]
    fn modes_set_exactly_one_flag() {
        let mut cfg = TrainConfig::default();
        AblationMode::RandomRetrieve.apply(&mut cfg);
        assert!(cfg.random_retrieve && !cfg.no_struct && !cfg.no_train_encoder);
        AblationMode::Full.apply(&mut cfg);
        assert!(!cfg.random_retrieve && !cfg.no_struct && !cfg.no_train_encoder);
    }
}
