//! Command-line interface.
//!
//! Subcommands: `gen-data`, `pretrain-lm`, `train-hop`, `train-adapter`,
//! `eval`, `ablate`, `gradcheck`. Configuration comes from an optional
//! plain-text `key = value` file plus flag overrides; all randomness sits
//! behind `--seed`. Environment variables are never consulted.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapter::KnowledgeEmbedder;
use crate::kg::KnowledgeGraph;
use crate::lm::FrozenLM;
use crate::retrieval::{load_questions_jsonl, train_hop_classifier, HopClassifier, HopTrainConfig, Question};

use super::bench::{run_mode, AblationMode};
use super::eval::evaluate;
use super::synth::{build_pretrain_corpus, generate, SynthConfig, SynthData};
use super::template::PromptTemplate;
use super::train::train_adapter;
use super::{HarnessError, TrainConfig};

#[derive(Parser)]
#[command(
    name = "pathprompt",
    version,
    about = "Knowledge-graph question answering with per-path soft prompts and a frozen language model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Plain-text config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key: `--set epochs=12` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_kv_file(path)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| HarnessError::BadConfig {
                detail: format!("--set expects KEY=VALUE, got `{kv}`"),
            })?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark: kg.tsv, train.jsonl, test.jsonl.
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        entities: usize,
        #[arg(long, default_value_t = 10)]
        relations: usize,
        #[arg(long, default_value_t = 100)]
        train_questions: usize,
        #[arg(long, default_value_t = 20)]
        test_questions: usize,
        /// Hop ceiling (2 or 4).
        #[arg(long, default_value_t = 2)]
        max_hops: usize,
    },
    /// Pretrain the generation backend on the dataset corpus, then freeze it.
    PretrainLm {
        /// Dataset directory (kg.tsv + train.jsonl).
        #[arg(long)]
        data: PathBuf,
        /// Model directory to write lm.ckpt and lm.vocab into.
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train only the hop classifier.
    TrainHop {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the knowledge adapter (and the hop classifier) against the
    /// frozen backend.
    TrainAdapter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Ablation mode: full, no-struct, no-train-encoder, random-retrieve.
        #[arg(long, default_value = "full")]
        mode: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate saved components on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Which split to evaluate: train or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the report document (JSON, no traces) here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-question traces (JSON lines) here.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Ablation mode the components were trained under.
        #[arg(long, default_value = "full")]
        mode: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate one ablation mode in a single run.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// full, no-struct, no-train-encoder or random-retrieve.
        #[arg(long)]
        mode: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every finite-difference gradient suite and print the worst
    /// relative error.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeded cases per suite.
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

struct ModelPaths {
    lm_ckpt: PathBuf,
    lm_vocab: PathBuf,
    hop_ckpt: PathBuf,
    hop_vocab: PathBuf,
    adapter_ckpt: PathBuf,
}

impl ModelPaths {
    fn in_dir(dir: &Path) -> Self {
        ModelPaths {
            lm_ckpt: dir.join("lm.ckpt"),
            lm_vocab: dir.join("lm.vocab"),
            hop_ckpt: dir.join("hop.ckpt"),
            hop_vocab: dir.join("hop.vocab"),
            adapter_ckpt: dir.join("adapter.ckpt"),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

fn load_kg(data: &Path) -> Result<KnowledgeGraph, HarnessError> {
    let path = data.join("kg.tsv");
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    Ok(KnowledgeGraph::load_triples(BufReader::new(file))?)
}

fn load_split(data: &Path, split: &str, kg: &KnowledgeGraph) -> Result<Vec<Question>, HarnessError> {
    let path = data.join(format!("{split}.jsonl"));
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    Ok(load_questions_jsonl(BufReader::new(file), kg)?)
}

fn parse_mode(s: &str) -> Result<AblationMode, HarnessError> {
    AblationMode::parse(s).ok_or_else(|| HarnessError::BadConfig {
        detail: format!("unknown mode `{s}` (expected full, no-struct, no-train-encoder or random-retrieve)"),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn print_report(label: &str, report: &super::EvalReport) {
    println!(
        "{label}: hits@1 {:.4}  tokens {}  requests {}  npr {:.2}  baseline-tokens {}  fallbacks {}  time {} ms",
        report.hits_at_1,
        report.token_used,
        report.requests,
        report.npr,
        report.textual_baseline_tokens,
        report.empty_graph_fallbacks,
        report.time_cost_ms
    );
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::GenData { out, seed, entities, relations, train_questions, test_questions, max_hops } => {
            let cfg = SynthConfig { seed, entities, relations, train_questions, test_questions, max_hops };
            let data = generate(&cfg)?;
            let paths = data.write(&out)?;
            println!(
                "wrote {} ({} triples), {} ({} questions), {} ({} questions)",
                paths.kg.display(),
                data.kg.triple_count(),
                paths.train.display(),
                data.train.len(),
                paths.test.display(),
                data.test.len()
            );
            Ok(())
        }
        Command::PretrainLm { data, models, config } => {
            let cfg = config.resolve()?;
            let kg = load_kg(&data)?;
            let train = load_split(&data, "train", &kg)?;
            let template = PromptTemplate::default_template();
            let corpus = build_pretrain_corpus(&kg, &train, &template, &cfg)?;
            let lm_cfg = crate::lm::LmConfig {
                d_model: cfg.lm_d_model,
                blocks: cfg.lm_blocks,
                heads: cfg.lm_heads,
                context: cfg.lm_context,
            };
            let (lm, log) = crate::lm::pretrain_lm(
                &corpus,
                lm_cfg,
                &crate::lm::LmTrainConfig {
                    epochs: cfg.lm_epochs,
                    lr0: cfg.lm_lr0,
                    seed: cfg.seed,
                    noise_std: cfg.lm_noise_std,
                },
            )?;
            ensure_dir(&models)?;
            let paths = ModelPaths::in_dir(&models);
            lm.save(&paths.lm_ckpt, &paths.lm_vocab)?;
            println!(
                "pretrained backend on {} lines (vocab {}, {} params); loss {:.4} -> {:.4}; frozen digest {}",
                corpus.len(),
                lm.tokenizer().vocab_size(),
                lm.params().num_values(),
                log.first().copied().unwrap_or(f64::NAN),
                log.last().copied().unwrap_or(f64::NAN),
                &lm.freeze_digest()[..12]
            );
            println!("wrote {} and {}", paths.lm_ckpt.display(), paths.lm_vocab.display());
            Ok(())
        }
        Command::TrainHop { data, models, config } => {
            let cfg = config.resolve()?;
            let kg = load_kg(&data)?;
            let train = load_split(&data, "train", &kg)?;
            let hop_cfg = HopTrainConfig {
                d_q: cfg.hop_d,
                epochs: cfg.hop_epochs,
                batch_size: 8,
                lr0: 2e-3,
                seed: cfg.seed,
                max_hops: cfg.max_hops,
            };
            let (clf, accuracy) = train_hop_classifier(&train, &hop_cfg)?;
            ensure_dir(&models)?;
            let paths = ModelPaths::in_dir(&models);
            clf.save(&paths.hop_ckpt, &paths.hop_vocab)?;
            println!("hop classifier training accuracy {accuracy:.4}; wrote {}", paths.hop_ckpt.display());
            Ok(())
        }
        Command::TrainAdapter { data, models, mode, config } => {
            let mut cfg = config.resolve()?;
            parse_mode(&mode)?.apply(&mut cfg);
            let kg = load_kg(&data)?;
            let train = load_split(&data, "train", &kg)?;
            let paths = ModelPaths::in_dir(&models);
            let lm = FrozenLM::load(&paths.lm_ckpt, &paths.lm_vocab)?;
            let template = PromptTemplate::default_template();
            let outcome = train_adapter(&kg, &train, &lm, &template, &cfg)?;
            ensure_dir(&models)?;
            outcome.adapter.save(&paths.adapter_ckpt)?;
            outcome.classifier.save(&paths.hop_ckpt, &paths.hop_vocab)?;
            let log = &outcome.log;
            println!(
                "mode {mode}: {} steps, loss {:.4} -> {:.4}; hop accuracy {:.4}; trainable params {} vs frozen {}; skipped {} empty graphs",
                log.steps.len(),
                log.steps.first().map(|s| s.loss).unwrap_or(f64::NAN),
                log.steps.last().map(|s| s.loss).unwrap_or(f64::NAN),
                log.hop_accuracy,
                log.trainable_params,
                log.lm_params,
                log.skipped_empty_graphs
            );
            println!("wrote {}", paths.adapter_ckpt.display());
            Ok(())
        }
        Command::Eval { data, models, split, report, traces, mode, config } => {
            let mut cfg = config.resolve()?;
            parse_mode(&mode)?.apply(&mut cfg);
            if split != "train" && split != "test" {
                return Err(HarnessError::BadConfig { detail: format!("--split must be train or test, got `{split}`") });
            }
            let kg = load_kg(&data)?;
            let questions = load_split(&data, &split, &kg)?;
            let paths = ModelPaths::in_dir(&models);
            let lm = FrozenLM::load(&paths.lm_ckpt, &paths.lm_vocab)?;
            let adapter = KnowledgeEmbedder::load(&paths.adapter_ckpt, &kg)?;
            let clf = HopClassifier::load(&paths.hop_ckpt, &paths.hop_vocab)?;
            let template = PromptTemplate::default_template();
            let result = evaluate(&kg, &questions, &lm, &adapter, &clf, &template, &cfg)?;
            print_report(&format!("eval[{split}]"), &result);
            if let Some(path) = report {
                std::fs::write(&path, result.summary().to_json()).map_err(|e| io_err(&path, e))?;
                println!("wrote report {}", path.display());
            }
            if let Some(path) = traces {
                std::fs::write(&path, result.traces_jsonl()).map_err(|e| io_err(&path, e))?;
                println!("wrote traces {}", path.display());
            }
            Ok(())
        }
        Command::Ablate { data, models, mode, config } => {
            let cfg = config.resolve()?;
            let mode = parse_mode(&mode)?;
            let kg = load_kg(&data)?;
            let train = load_split(&data, "train", &kg)?;
            let test = load_split(&data, "test", &kg)?;
            let paths = ModelPaths::in_dir(&models);
            let lm = FrozenLM::load(&paths.lm_ckpt, &paths.lm_vocab)?;
            let template = PromptTemplate::default_template();
            let bundle = SynthData { kg, train, test };
            let run = run_mode(&bundle, &lm, &template, &cfg, mode)?;
            print_report(&format!("ablate[{}][train]", mode.as_str()), &run.train_report);
            print_report(&format!("ablate[{}][test]", mode.as_str()), &run.test_report);
            Ok(())
        }
        Command::Gradcheck { seed, cases } => {
            let report = super::gradcheck::run_all(seed, cases)?;
            for r in &report.results {
                println!("gradcheck {:<28} cases {:>3}  max rel err {:.3e}", r.name, r.cases, r.max_rel_err);
            }
            println!("gradcheck max relative error: {:.3e}", report.max_rel_err);
            if !report.passed(1e-4) {
                return Err(HarnessError::BadConfig {
                    detail: format!("gradient check failed: max rel err {:.3e} >= 1e-4", report.max_rel_err),
                });
            }
            Ok(())
        }
    }
}

/// Entry point behind the thin binary: parse `argv` (including the program
/// name), run, and map outcomes to an exit code. Usage errors print help
/// and exit 2; runtime failures print a message and exit 1.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(p) => p,
        Err(e) => {
            // clap renders its own help/version output.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(cli(["pathprompt", "frobnicate"]), 2);
        assert_eq!(cli(["pathprompt", "eval", "--bogus-flag"]), 2);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(cli(["pathprompt", "--help"]), 0);
    }

    #[test]
    fn eval_with_missing_checkpoint_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        generate(&SynthConfig { seed: 0, entities: 12, relations: 5, train_questions: 4, test_questions: 2, max_hops: 2 })
            .unwrap()
            .write(&data)
            .unwrap();
        let models = dir.path().join("models");
        std::fs::create_dir_all(&models).unwrap();
        let code = cli([
            "pathprompt",
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--models",
            models.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        // The error path is also visible through the library call.
        let paths = ModelPaths::in_dir(&models);
        let err = FrozenLM::load(&paths.lm_ckpt, &paths.lm_vocab).unwrap_err();
        assert!(err.to_string().contains("lm.vocab") || err.to_string().contains("lm.ckpt"), "{err}");
    }

    #[test]
    fn gen_data_writes_the_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bench");
        let code = cli([
            "pathprompt",
            "gen-data",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
            "--entities",
            "12",
            "--relations",
            "5",
            "--train-questions",
            "4",
            "--test-questions",
            "2",
        ]);
        assert_eq!(code, 0);
        for name in ["kg.tsv", "train.jsonl", "test.jsonl"] {
            assert!(out.join(name).exists(), "{name} missing");
        }
    }
}
