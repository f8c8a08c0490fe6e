//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 model-service
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thinkguard_core::corpus::{
    build_prompt, corpus_stats, generate_synthetic, MemeRecord, Split,
};
use thinkguard_core::policy::{ToyPolicy, Vocabulary};
use thinkguard_core::rng::{derive_rng, stage};
use thinkguard_core::trainer::eval::{evaluate, EvalReport};
use thinkguard_core::trainer::grpo::GrpoTrainer;
use thinkguard_core::trainer::infer::infer_best_of_n;
use thinkguard_core::trainer::sft::{sft_examples, SftTrainer, SftVariant};
use thinkguard_core::trainer::telemetry::{default_window, CollapseMonitor};
use thinkguard_core::trainer::prompt_items;
use thinkguard_core::metrics::AgreementMode;

use crate::checkpoint::{load_json, save_json, Checkpoint, Stage};
use crate::config::RunConfig;
use crate::jsonl::{load_jsonl, write_jsonl};
use crate::manifest::{sha256_hex, RunManifest};
use crate::modelsvc::ratings::save_ratings;
use crate::modelsvc::{
    aggregate_judgments, distill_cot, judge_explanation, map_concurrent, Bounded, HttpClient, JudgeScore,
    MockJudge, MockTeacher, ModelClient, ModelSvcError, RUBRIC_VERSION,
};
use crate::plot;
use crate::telemetry::{read_telemetry, sft_csv, CompletionRow, CompletionWriter, TelemetryError, TelemetryWriter};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SERVICE: i32 = 3;

/// Think-length collapse threshold, as a fraction of the early average.
const COLLAPSE_FRACTION: f64 = 0.5;

#[derive(Debug, Parser)]
#[command(name = "thinkguard", version, about = "Structured hateful-meme classification: SFT warm-up, GRPO, evaluation")]
pub struct Cli {
    /// JSON or `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set grpo.kl_beta=0.04`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Global seed; takes precedence over RUN_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic trigger corpus.
    Synth(SynthArgs),
    /// Supervised warm-up.
    Sft(SftArgs),
    /// GRPO post-training.
    Grpo(GrpoArgs),
    /// Decode a split and score it.
    Eval(EvalArgs),
    /// Add teacher reasoning traces to a corpus.
    Distill(DistillArgs),
    /// Score explanations with judge models.
    Judge(JudgeArgs),
    /// Chart a GRPO telemetry CSV.
    Plot(PlotArgs),
    /// Classify one text.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub hateful_ratio: Option<f64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SftArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "runs/sft")]
    pub out: PathBuf,
    /// cls_exp_no_cot, cls_fg_exp_no_cot or cls_fg_exp_cotd.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Checkpoint to continue fine-tuning, e.g. a No-CoT model before the distilled variant.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("start").required(true).args(["init", "cold_start"])))]
pub struct GrpoArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "runs/grpo")]
    pub out: PathBuf,
    /// Checkpoint to start from, usually the SFT output.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Start from the uniform policy.
    #[arg(long)]
    pub cold_start: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub resume: bool,
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus file to decode.
    #[arg(long)]
    pub data: PathBuf,
    /// Keep only records of this split.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub best_of: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics CSV to append a row to; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use the offline mock teacher.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Eval report whose predicted explanations are judged; without it the
    /// gold explanations are judged.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub mock: bool,
    /// Number of mock judges.
    #[arg(long, default_value_t = 2)]
    pub judges: usize,
    /// Give each mock judge its own seed instead of sharing the run seed.
    #[arg(long)]
    pub distinct_seeds: bool,
    /// Judge endpoint; repeat for several judges.
    #[arg(long = "judge-endpoint")]
    pub endpoints: Vec<String>,
    #[arg(long, default_value = RUBRIC_VERSION)]
    pub rubric: String,
    #[arg(long, value_parser = parse_mode, default_value = "per_item")]
    pub agreement: AgreementMode,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<AgreementMode, String> {
    match s {
        "per_item" => Ok(AgreementMode::PerItem),
        "judge_means" => Ok(AgreementMode::JudgeMeans),
        _ => Err(format!("`{s}` is not per_item or judge_means")),
    }
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub telemetry: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub best_of: Option<usize>,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Service(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Service(_) => EXIT_SERVICE,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

type CmdResult = Result<(), Failure>;

macro_rules! fail {
    ($($t:tt)*) => {
        return Err(Failure::Usage(anyhow!($($t)*)))
    };
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Service(e)) = &f;
            eprintln!("error: {e:#}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    let mut overrides = cli.set.clone();
    match &cli.command {
        Command::Synth(a) => {
            push(&mut overrides, "synth.n_train", a.n_train);
            push(&mut overrides, "synth.n_dev", a.n_dev);
            push(&mut overrides, "synth.n_test", a.n_test);
            push(&mut overrides, "synth.hateful_ratio", a.hateful_ratio);
            push(&mut overrides, "synth.vocab_size", a.vocab_size);
        }
        Command::Sft(a) => {
            if let Some(v) = &a.variant {
                let parsed: SftVariant = v.parse().map_err(|_| anyhow!("unknown SFT variant `{v}`"))?;
                overrides.push(format!("sft.variant={}", parsed.as_str()));
            }
            push(&mut overrides, "sft.epochs", a.epochs);
        }
        Command::Grpo(a) => push(&mut overrides, "grpo.steps", a.steps),
        Command::Eval(a) => push(&mut overrides, "eval.best_of", a.best_of),
        Command::Infer(a) => push(&mut overrides, "eval.best_of", a.best_of),
        Command::Plot(a) => push(&mut overrides, "plot.window", a.window),
        Command::Distill(_) | Command::Judge(_) => {}
    }
    push(&mut overrides, "seed", cli.seed);
    let env_seed = std::env::var("RUN_SEED").ok();
    let config = RunConfig::load(cli.config.as_deref(), env_seed.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&config, &a),
        Command::Sft(a) => cmd_sft(&config, &a),
        Command::Grpo(a) => cmd_grpo(&config, &a),
        Command::Eval(a) => cmd_eval(&config, &a),
        Command::Distill(a) => cmd_distill(&config, &a),
        Command::Judge(a) => cmd_judge(&config, &a),
        Command::Plot(a) => cmd_plot(&config, &a),
        Command::Infer(a) => cmd_infer(&config, &a),
    }
}

fn push<T: ToString>(overrides: &mut Vec<String>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        overrides.push(format!("{key}={}", v.to_string()));
    }
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<MemeRecord>> {
    let loaded = load_jsonl(path).with_context(|| format!("cannot read corpus {}", path.display()))?;
    if !loaded.is_clean() {
        for d in &loaded.diagnostics {
            eprintln!("{}: {d}", path.display());
        }
        bail!("{}: {} invalid line(s)", path.display(), loaded.diagnostics.len());
    }
    if !loaded.missing_explanation.is_empty() {
        eprintln!(
            "warning: {}: {} record(s) have no explanation: {}",
            path.display(),
            loaded.missing_explanation.len(),
            loaded.missing_explanation.join(", ")
        );
    }
    Ok(loaded.records)
}

/// Training records must carry the gold explanation the reward compares against.
fn require_explanations(records: &[MemeRecord], path: &Path) -> anyhow::Result<()> {
    let missing = records.iter().filter(|r| r.gold_explanation.trim().is_empty()).count();
    if missing > 0 {
        bail!("{}: {missing} record(s) lack the explanation needed for training", path.display());
    }
    Ok(())
}

fn fresh_policy(config: &RunConfig) -> anyhow::Result<ToyPolicy> {
    let synth = config.synth_config();
    let vocab = Vocabulary::new(synth.vocabulary_words())?;
    Ok(ToyPolicy::new(vocab, synth.trigger_tokens)?)
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn cmd_synth(config: &RunConfig, a: &SynthArgs) -> CmdResult {
    let records = generate_synthetic(&config.synth_config())?;
    ensure_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("synth", config);
    for split in Split::ALL {
        let path = a.out_dir.join(format!("{split}.jsonl"));
        let part: Vec<MemeRecord> = records.iter().filter(|r| r.split == *split).cloned().collect();
        write_jsonl(&path, &part)?;
        manifest = manifest.output(&path)?;
    }
    manifest.save(&a.out_dir.join("synth_manifest.json"))?;
    print!("{}", corpus_stats(&records));
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn cmd_sft(config: &RunConfig, a: &SftArgs) -> CmdResult {
    let sft = config.sft_config();
    let train = load_corpus(&a.train)?;
    let dev = load_corpus(&a.dev)?;
    require_explanations(&train, &a.train)?;
    require_explanations(&dev, &a.dev)?;
    if sft.variant.uses_cot() {
        let missing = train.iter().chain(&dev).filter(|r| r.cot_trace.is_none()).count();
        if missing > 0 {
            fail!("MissingCotTrace: {missing} record(s) have no cot field, required by {}", sft.variant);
        }
    }
    let policy = match &a.init {
        Some(path) => Checkpoint::load(path)?.policy,
        None => fresh_policy(config)?,
    };
    let ctx = config.prompt_context()?;
    let train_ex = sft_examples(&policy, &prompt_items(&policy, &train, &ctx)?, &sft)?;
    let dev_ex = sft_examples(&policy, &prompt_items(&policy, &dev, &ctx)?, &sft)?;
    ensure_dir(&a.out)?;
    let state_path = a.out.join("sft_state.json");
    let telemetry_path = a.out.join("sft_telemetry.csv");

    let mut trainer = if a.resume && state_path.exists() {
        let t: SftTrainer = load_json(&state_path)?;
        if t.config != sft {
            fail!("{}: saved state was produced with a different SFT config", state_path.display());
        }
        println!("resuming SFT after epoch {}", t.epochs_done);
        t
    } else {
        SftTrainer::new(policy, sft.clone(), train_ex.len(), &dev_ex)?
    };
    fs::write(&telemetry_path, sft_csv(&trainer.history))?;
    let mut ran = 0;
    while !trainer.is_finished() {
        if a.stop_after.is_some_and(|n| ran >= n) {
            println!("stopped after {ran} epoch(s); rerun with --resume to continue");
            return Ok(());
        }
        let r = trainer.run_epoch(&train_ex, &dev_ex)?;
        ran += 1;
        println!("epoch {} train_loss {:.4} dev_loss {:.4}", r.epoch, r.train_loss.unwrap_or(f64::NAN), r.dev_loss);
        fs::write(&telemetry_path, sft_csv(&trainer.history))?;
        save_json(&state_path, &trainer)?;
    }
    let variant = trainer.config.variant;
    let outcome = trainer.finish();
    let ckpt_path = a.out.join("sft.ckpt.json");
    Checkpoint::new(Stage::Sft, variant, outcome.policy).save(&ckpt_path)?;
    let mut manifest = RunManifest::new("sft", config).input(&a.train)?.input(&a.dev)?;
    if let Some(init) = &a.init {
        manifest = manifest.input(init)?;
    }
    manifest
        .output(&ckpt_path)?
        .output(&telemetry_path)?
        .save(&a.out.join("manifest.json"))?;
    println!("best epoch {} dev loss {:.4}; wrote {}", outcome.best_epoch, outcome.best_dev_loss, ckpt_path.display());
    Ok(())
}

fn cmd_grpo(config: &RunConfig, a: &GrpoArgs) -> CmdResult {
    let (policy, variant) = match &a.init {
        Some(path) => {
            let c = Checkpoint::load(path)?;
            (c.policy, c.variant)
        }
        None => (fresh_policy(config)?, config.sft.variant),
    };
    let grpo = config.grpo_config_for(variant);
    let train = load_corpus(&a.train)?;
    let dev = load_corpus(&a.dev)?;
    require_explanations(&train, &a.train)?;
    require_explanations(&dev, &a.dev)?;
    let ctx = config.prompt_context()?;
    let train_items = prompt_items(&policy, &train, &ctx)?;
    let dev_items = prompt_items(&policy, &dev, &ctx)?;
    ensure_dir(&a.out)?;
    let state_path = a.out.join("grpo_state.json");
    let telemetry_path = a.out.join("telemetry.csv");
    let completions_path = a.out.join("completions.csv");

    let mut trainer = if a.resume && state_path.exists() {
        let t: GrpoTrainer = load_json(&state_path)?;
        if t.config != grpo {
            fail!("{}: saved state was produced with a different GRPO config", state_path.display());
        }
        println!("resuming GRPO after step {}", t.steps_done);
        t
    } else {
        GrpoTrainer::new(policy, grpo.clone(), &dev_items)?
    };
    let mut telemetry = TelemetryWriter::create(&telemetry_path, &trainer.telemetry)?;
    let mut completions = CompletionWriter::create(&completions_path, trainer.steps_done)?;
    let mut monitor = CollapseMonitor::new(default_window(grpo.steps), COLLAPSE_FRACTION);
    for r in &trainer.telemetry {
        monitor.observe(r.mean_think_len);
    }
    let mut warned = monitor.flagged_at().is_some();
    let mut ran = 0;
    while !trainer.is_finished() {
        if a.stop_after.is_some_and(|n| ran >= n) {
            println!("stopped after {ran} step(s); rerun with --resume to continue");
            return Ok(());
        }
        let step = trainer.steps_done + 1;
        let ids = trainer.batch_indices(step, train_items.len());
        let out = trainer.step(&train_items, &dev_items)?;
        ran += 1;
        telemetry.append(&out.record)?;
        let mut rows = Vec::new();
        for (p, (batch, &idx)) in out.batches.iter().zip(&ids).enumerate() {
            for (k, (c, adv)) in batch.completions.iter().zip(&batch.advantages).enumerate() {
                rows.push(CompletionRow {
                    step,
                    prompt: p,
                    sample: k,
                    id: train[idx].id.clone(),
                    r_fmt: c.reward.r_fmt,
                    r_lbl: c.reward.r_lbl,
                    r_len: c.reward.r_len,
                    r_met: c.reward.r_met,
                    total: c.reward.total,
                    advantage: *adv,
                    tokens: c.trajectory.tokens.len(),
                    text: c.text.clone(),
                });
            }
        }
        completions.append(&rows)?;
        if monitor.observe(out.record.mean_think_len) && !warned {
            warned = true;
            eprintln!("warning: mean think length collapsed below {COLLAPSE_FRACTION} of its early average at step {step}");
        }
        save_json(&state_path, &trainer)?;
        if step.is_multiple_of(grpo.eval_every as u64) || trainer.is_finished() {
            let r = &out.record;
            println!("step {step} mean_reward {:.4} kl {:.5} clip_frac {:.3}", r.mean_reward, r.kl, r.clip_frac);
        }
    }
    let outcome = trainer.finish();
    let ckpt_path = a.out.join("grpo.ckpt.json");
    Checkpoint::new(Stage::Grpo, variant, outcome.policy).save(&ckpt_path)?;
    let mut manifest = RunManifest::new("grpo", config).input(&a.train)?.input(&a.dev)?;
    if let Some(init) = &a.init {
        manifest = manifest.input(init)?;
    }
    manifest
        .output(&ckpt_path)?
        .output(&telemetry_path)?
        .output(&completions_path)?
        .save(&a.out.join("manifest.json"))?;
    println!(
        "best step {} dev reward {:.4}; wrote {}",
        outcome.best_step,
        outcome.best_dev_reward,
        ckpt_path.display()
    );
    Ok(())
}

/// Eval report file: the metrics plus digests of what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub tool_version: String,
    pub checkpoint_sha256: String,
    pub data_sha256: String,
    pub split: Option<String>,
    pub seed: u64,
    pub report: EvalReport,
}

pub const EVAL_CSV_HEADER: &str = "checkpoint_sha256,split,n,best_of,accuracy,weighted_f1,macro_f1,mean_meteor,parse_failures";

fn cmd_eval(config: &RunConfig, a: &EvalArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut records = load_corpus(&a.data)?;
    if let Some(s) = &a.split {
        let split: Split = s.parse().map_err(|_| anyhow!("unknown split `{s}`"))?;
        records.retain(|r| r.split == split);
    }
    if records.is_empty() {
        fail!("{}: no records to evaluate", a.data.display());
    }
    let ctx = config.prompt_context()?;
    let items = prompt_items(&ckpt.policy, &records, &ctx)?;
    let report = evaluate(&ckpt.policy, &items, &config.eval_config(ckpt.variant, None))?;
    let file = EvalFile {
        tool_version: crate::manifest::version_string(),
        checkpoint_sha256: sha256_hex(&fs::read(&a.checkpoint)?),
        data_sha256: sha256_hex(&fs::read(&a.data)?),
        split: a.split.clone(),
        seed: config.seed,
        report,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_json(&a.out, &file)?;
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    let fresh = !csv_path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(&csv_path)?;
    if fresh {
        writeln!(f, "{EVAL_CSV_HEADER}")?;
    }
    let r = &file.report;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{}",
        file.checkpoint_sha256,
        a.split.as_deref().unwrap_or("all"),
        r.n,
        r.best_of,
        r.classification.accuracy,
        r.classification.weighted_f1,
        r.classification.macro_f1,
        r.mean_meteor,
        r.parse_failures
    )?;
    println!(
        "n {} best_of {} accuracy {:.4} weighted_f1 {:.4} macro_f1 {:.4} meteor {:.4} parse_failures {}",
        r.n,
        r.best_of,
        r.classification.accuracy,
        r.classification.weighted_f1,
        r.classification.macro_f1,
        r.mean_meteor,
        r.parse_failures
    );
    Ok(())
}

fn failure_log(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".failures.txt");
    out.with_file_name(name)
}

fn write_failures(out: &Path, failures: &[(String, String)]) -> anyhow::Result<PathBuf> {
    let path = failure_log(out);
    let mut text = String::new();
    for (id, e) in failures {
        text.push_str(&format!("{id}\t{e}\n"));
    }
    fs::write(&path, text)?;
    Ok(path)
}

fn cmd_distill(config: &RunConfig, a: &DistillArgs) -> CmdResult {
    let mut records = load_corpus(&a.corpus)?;
    let guidelines = config.prompt_context()?.guidelines;
    let svc = &config.modelsvc;
    let inner: Box<dyn ModelClient> = if a.mock {
        Box::new(MockTeacher::new(config.seed, config.synth.trigger_tokens.clone()))
    } else {
        if svc.endpoint.is_empty() {
            fail!("no teacher endpoint: set modelsvc.endpoint or pass --mock");
        }
        Box::new(HttpClient::new("teacher", svc))
    };
    let client = Bounded::new(inner, svc.max_concurrency);
    let retry = svc.retry_policy();
    let todo: Vec<usize> = (0..records.len()).filter(|&i| records[i].cot_trace.is_none()).collect();
    let results = map_concurrent(&todo, svc.max_concurrency, |&i| {
        distill_cot(&client, &svc.model, &records[i], &guidelines, &retry)
    });
    let mut failures = Vec::new();
    let mut retried = 0;
    let mut service_down = false;
    for (&i, r) in todo.iter().zip(results) {
        match r {
            Ok(d) => {
                retried += u32::from(d.attempts > 1);
                records[i].cot_trace = Some(d.trace);
            }
            Err(e) => {
                service_down |= e.is_service_failure();
                failures.push((records[i].id.clone(), e.to_string()));
            }
        }
    }
    write_jsonl(&a.out, &records)?;
    println!(
        "distilled {} of {} pending trace(s), {} needed retries; wrote {}",
        todo.len() - failures.len(),
        todo.len(),
        retried,
        a.out.display()
    );
    if !failures.is_empty() {
        let log = write_failures(&a.out, &failures)?;
        let e = anyhow!("{} item(s) failed, listed in {}", failures.len(), log.display());
        return Err(if service_down { Failure::Service(e) } else { Failure::Usage(e) });
    }
    Ok(())
}

fn explanation_of(text: &str) -> String {
    thinkguard_core::trainer::infer::lenient_output(text).map(|o| o.explanation).unwrap_or_default()
}

fn cmd_judge(config: &RunConfig, a: &JudgeArgs) -> CmdResult {
    let records = load_corpus(&a.corpus)?;
    let explanations: BTreeMap<String, String> = match &a.predictions {
        Some(path) => {
            let file: EvalFile = load_json(path)?;
            file.report.predictions.iter().map(|p| (p.id.clone(), explanation_of(&p.text))).collect()
        }
        None => records.iter().map(|r| (r.id.clone(), r.gold_explanation.clone())).collect(),
    };
    let svc = &config.modelsvc;
    let judges: Vec<Bounded<Box<dyn ModelClient>>> = if a.mock {
        (0..a.judges)
            .map(|j| {
                let seed = if a.distinct_seeds { config.seed + j as u64 } else { config.seed };
                let c: Box<dyn ModelClient> = Box::new(MockJudge::new(format!("judge-{}", j + 1), seed));
                Bounded::new(c, svc.max_concurrency)
            })
            .collect()
    } else {
        if a.endpoints.is_empty() {
            fail!("no judges: pass --mock or --judge-endpoint");
        }
        a.endpoints
            .iter()
            .enumerate()
            .map(|(j, url)| {
                let c: Box<dyn ModelClient> =
                    Box::new(HttpClient::new(format!("judge-{}", j + 1), svc).with_endpoint(url.clone()));
                Bounded::new(c, svc.max_concurrency)
            })
            .collect()
    };
    let judged: Vec<&MemeRecord> = records.iter().filter(|r| explanations.contains_key(&r.id)).collect();
    let jobs: Vec<(usize, &MemeRecord)> =
        (0..judges.len()).flat_map(|j| judged.iter().map(move |r| (j, *r))).collect();
    let retry = svc.retry_policy();
    let results = map_concurrent(&jobs, svc.max_concurrency * judges.len().max(1), |(j, r)| {
        judge_explanation(&judges[*j], &svc.model, r, &explanations[&r.id], &a.rubric, &retry)
    });
    let mut scores: Vec<JudgeScore> = Vec::new();
    let mut failures = Vec::new();
    let mut service_down = false;
    for ((j, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(s) => scores.push(s),
            Err(ModelSvcError::UnknownRubric(v)) => fail!("unknown rubric version `{v}`"),
            Err(e) => {
                service_down |= e.is_service_failure();
                failures.push((r.id.clone(), format!("{}: {e}", judges[*j].id())));
            }
        }
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_ratings(&a.out, &scores)?;
    println!("rubric {}; {} rating(s) written to {}", a.rubric, scores.len(), a.out.display());
    if !failures.is_empty() {
        let log = write_failures(&a.out, &failures)?;
        let e = anyhow!("{} judgment(s) failed, listed in {}", failures.len(), log.display());
        return Err(if service_down { Failure::Service(e) } else { Failure::Usage(e) });
    }
    if judges.len() >= 2 && !scores.is_empty() {
        let table = aggregate_judgments(&scores, a.agreement)?;
        println!("{table}");
        save_json(&a.out.with_extension("table.json"), &table)?;
    }
    Ok(())
}

fn cmd_plot(config: &RunConfig, a: &PlotArgs) -> CmdResult {
    let records = match read_telemetry(&a.telemetry) {
        Ok(r) => r,
        Err(e @ TelemetryError::HeaderMismatch { .. }) => fail!("{}: {e}", a.telemetry.display()),
        Err(e) => return Err(anyhow::Error::from(e).context(a.telemetry.display().to_string()).into()),
    };
    let chart = plot::render(&records, config.plot.window)?;
    for w in &chart.warnings {
        eprintln!("warning: {w}");
    }
    fs::write(&a.out, &chart.svg)?;
    println!("window {}; wrote {}", chart.window, a.out.display());
    Ok(())
}

fn cmd_infer(config: &RunConfig, a: &InferArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let record = MemeRecord {
        id: "input".into(),
        image_ref: String::new(),
        ocr_text: a.text.clone(),
        label: thinkguard_core::Label::NonHateful,
        protected_categories: Default::default(),
        attack_types: Default::default(),
        gold_explanation: String::new(),
        cot_trace: None,
        split: Split::Test,
    };
    let prompt = ckpt.policy.encode_prompt(&build_prompt(&record, &config.prompt_context()?)?);
    let eval = config.eval_config(ckpt.variant, None);
    let mut rng = derive_rng(config.seed, &[stage::INFER]);
    match infer_best_of_n(&ckpt.policy, &prompt, eval.best_of, &eval.decode, &eval.reward, &mut rng) {
        Ok(b) => {
            println!("{}", b.candidates[b.selection.index]);
            println!(
                "label {} votes hateful {} not_hateful {} compliant {}",
                b.output.label, b.selection.votes[0], b.selection.votes[1], b.compliant
            );
            Ok(())
        }
        Err(e) => fail!("{e}"),
    }
}
