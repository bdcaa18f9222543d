//! `senti` — command-line front end for the sentiment experiment pipeline.
//!
//! Every verb reads the run configuration file named by `--config`, applies
//! the global overrides (`--seed`, `--out-dir`, `--backend`), and exits 0 on
//! success, 2 on a missing file or a configuration/parse problem, and 1 on
//! any other failure. Given the same configuration and inputs, every command
//! produces identical artifacts on repeat runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use senti_core::backend::{backend_by_name, ModelBackend, ModelHandle, PredictionVector};
use senti_core::config::{cache_dir, MappingRef, RunConfig};
use senti_core::corpus::{
    deduplicate, load_external, load_split, map_external_labels, merge_external, write_split,
    DatasetSplit, Example, LabelMapping, SplitName,
};
use senti_core::ensemble::{
    ensemble_predict, read_predictions_tsv, write_predictions_tsv, PredictionSet,
};
use senti_core::error::{Error, Result};
use senti_core::metrics::MetricsReport;
use senti_core::textprep::{
    normalizer_by_name, replace_urls_users, tokenizer_by_name, TextNormalizer, Tokenizer,
};
use senti_core::training::{collect_records, write_atomic, RunRecord, Runner, TrainOutcome};

#[derive(Parser)]
#[command(
    name = "senti",
    version,
    about = "Reproducible 3-class sentiment experiment pipeline",
    propagate_version = true
)]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "FILE", default_value = "senti.cfg")]
    config: PathBuf,

    /// Override the configured master seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Override the configured backend.
    #[arg(long, global = true, value_name = "NAME")]
    backend: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean the configured splits: placeholder substitution, normalization,
    /// and duplicate removal on train/dev; writes TSVs plus a stats JSON.
    Preprocess {
        /// Directory for the cleaned files (default: <out_dir>/preprocessed).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },

    /// Map an external corpus's labels onto the three task classes.
    #[command(name = "map-labels")]
    MapLabels {
        /// External corpus TSV (id/text/label).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Label mapping file (`original<TAB>mapped` per line); without it
        /// the built-in conversion table is used.
        #[arg(long, value_name = "FILE")]
        mapping: Option<PathBuf>,
        /// Number of label classes the corpus declares.
        #[arg(long, value_name = "N")]
        classes: usize,
        /// Source name recorded on each example (default: input file stem).
        #[arg(long, value_name = "NAME")]
        name: Option<String>,
        /// Where to write the mapped TSV.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },

    /// Fine-tune on the training split.
    Train {
        /// Warm-start from a saved model instead of fresh weights.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },

    /// Two-stage fine-tuning: mapped external corpora first, then the
    /// training split warm-started from stage 1.
    #[command(name = "train-2ft")]
    Train2ft,

    /// Masked-token pre-training over the deduplicated training texts.
    Tapt,

    /// Predict labels for a split with a saved model.
    Predict {
        /// Saved model file.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Which configured split to predict (train|dev|dev_test|test).
        #[arg(long, value_name = "SPLIT")]
        split: String,
        /// Output TSV (default: <out_dir>/preds/<split>.tsv).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },

    /// Majority-vote over prediction files; the first file breaks ties.
    Ensemble {
        /// Prediction TSVs in priority order (repeatable; first = best).
        #[arg(long = "model-pred", value_name = "FILE", required = true)]
        model_pred: Vec<PathBuf>,
        /// Where to write the combined predictions.
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Labeled split to score against (writes metrics JSON next to the
        /// output, or to --metrics).
        #[arg(long, value_name = "SPLIT")]
        gold: Option<String>,
        /// Metrics JSON path (default: <output>.metrics.json).
        #[arg(long, value_name = "FILE")]
        metrics: Option<PathBuf>,
    },

    /// Score a prediction file against a labeled split.
    Evaluate {
        /// Prediction TSV.
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Labeled split to score against.
        #[arg(long, value_name = "SPLIT")]
        split: String,
        /// Optional metrics JSON output path.
        #[arg(long, value_name = "FILE")]
        metrics: Option<PathBuf>,
    },

    /// Repeat the fine-tuning run across the configured seeds and report
    /// per-seed and mean scores.
    #[command(name = "seed-sweep")]
    SeedSweep,

    /// Summarize all stored runs as markdown + JSON, grouped by backend.
    Report {
        /// Directory for report.md / report.json (default: <out_dir>).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for missing files and configuration/parse problems, 1 otherwise.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::DuplicateId { .. }
        | Error::UnknownLabel { .. }
        | Error::Config(_)
        | Error::Json(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::SweepSeed { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess { out } => cmd_preprocess(cli, out.as_deref()),
        Command::MapLabels {
            input,
            mapping,
            classes,
            name,
            output,
        } => cmd_map_labels(input, mapping.as_deref(), *classes, name.as_deref(), output),
        Command::Train { init } => cmd_train(cli, init.as_deref()),
        Command::Train2ft => cmd_train_2ft(cli),
        Command::Tapt => cmd_tapt(cli),
        Command::Predict {
            model,
            split,
            output,
        } => cmd_predict(cli, model, split, output.as_deref()),
        Command::Ensemble {
            model_pred,
            output,
            gold,
            metrics,
        } => cmd_ensemble(cli, model_pred, output, gold.as_deref(), metrics.as_deref()),
        Command::Evaluate {
            pred,
            split,
            metrics,
        } => cmd_evaluate(cli, pred, split, metrics.as_deref()),
        Command::SeedSweep => cmd_seed_sweep(cli),
        Command::Report { out } => cmd_report(cli, out.as_deref()),
    }
}

/// Loaded configuration plus the pluggable components it names.
struct Pipeline {
    cfg: RunConfig,
    backend: Box<dyn ModelBackend>,
    tokenizer: Box<dyn Tokenizer>,
    normalizer: Box<dyn TextNormalizer>,
}

impl Pipeline {
    fn new(cli: &Cli) -> Result<Pipeline> {
        let mut cfg = RunConfig::load(&cli.config)?;
        if let Some(seed) = cli.seed {
            cfg.master_seed = seed;
        }
        if let Some(dir) = &cli.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(name) = &cli.backend {
            cfg.backend = name.clone();
        }
        let backend = backend_by_name(&cfg.backend)?;
        let tokenizer = tokenizer_by_name(&cfg.tokenizer, cfg.vocab_size)?;
        let normalizer = normalizer_by_name(&cfg.normalizer)?;
        let caches = cache_dir();
        std::fs::create_dir_all(&caches)
            .map_err(|e| Error::io(caches.display().to_string(), e))?;
        log::debug!("cache directory: {}", caches.display());
        Ok(Pipeline {
            cfg,
            backend,
            tokenizer,
            normalizer,
        })
    }

    fn runner(&self) -> Runner<'_> {
        Runner::new(
            self.backend.as_ref(),
            self.tokenizer.as_ref(),
            self.normalizer.as_ref(),
            &self.cfg.out_dir,
            self.cfg.master_seed,
        )
    }

    fn split_path(&self, name: SplitName) -> Result<&Path> {
        let path = match name {
            SplitName::Train => &self.cfg.data.train,
            SplitName::Dev => &self.cfg.data.dev,
            SplitName::DevTest => &self.cfg.data.dev_test,
            SplitName::Test => &self.cfg.data.test,
        };
        path.as_deref()
            .ok_or_else(|| Error::config(format!("[data] {name} is not configured")))
    }

    fn load(&self, name: SplitName) -> Result<DatasetSplit> {
        load_split(self.split_path(name)?, name)
    }

    /// The training split with exact-duplicate texts removed, as training
    /// always consumes it.
    fn load_train(&self) -> Result<DatasetSplit> {
        let raw = self.load(SplitName::Train)?;
        let outcome = deduplicate(&raw);
        if outcome.removed > 0 {
            println!(
                "training split: removed {} duplicate text(s) of {} rows",
                outcome.removed,
                raw.len()
            );
        }
        Ok(outcome.split)
    }

    /// All configured held-out splits, for the leakage check.
    fn heldout(&self) -> Result<Vec<DatasetSplit>> {
        let mut splits = Vec::new();
        for name in [SplitName::Dev, SplitName::DevTest, SplitName::Test] {
            if self.split_path(name).is_ok() {
                splits.push(self.load(name)?);
            }
        }
        Ok(splits)
    }

    /// Loads, label-maps, and merges every configured external corpus.
    fn merged_externals(&self) -> Result<DatasetSplit> {
        let mut mapped = Vec::new();
        for spec in &self.cfg.externals {
            let raw = load_external(&spec.data, &spec.name, spec.declared_class_count)?;
            let mapping = match &spec.mapping {
                MappingRef::Default => LabelMapping::default_conversions(),
                MappingRef::File(path) => LabelMapping::load(path)?,
            };
            mapped.push(map_external_labels(&raw, &mapping)?);
        }
        let merged = merge_external(&mapped);
        if merged.removed > 0 {
            println!(
                "external corpora: removed {} duplicate text(s) while merging",
                merged.removed
            );
        }
        Ok(merged.split)
    }

    /// Scores a fresh model on the dev split when one is configured,
    /// persisting predictions and metrics into the run directory.
    fn score_on_dev(&self, outcome: &TrainOutcome) -> Result<()> {
        if self.split_path(SplitName::Dev).is_err() {
            return Ok(());
        }
        let dev = self.load(SplitName::Dev)?;
        let runner = self.runner();
        let preds = runner.predict_split(&outcome.model, &dev, self.cfg.finetune.max_length)?;
        write_predictions_tsv(outcome.run_dir.join("preds").join("dev.tsv"), &preds)?;
        let report = runner.evaluate(&preds, &dev)?;
        write_atomic(
            &outcome.run_dir.join("metrics.json"),
            report.to_json_string()?.as_bytes(),
        )?;
        println!("dev micro-F1: {:.4}", report.micro_f1);
        Ok(())
    }
}

/// Per-split accounting reported by `preprocess`.
#[derive(serde::Serialize)]
struct PreprocessStats {
    rows_in: usize,
    rows_out: usize,
    duplicates_removed: usize,
    urls_replaced: usize,
    users_replaced: usize,
}

fn cmd_preprocess(cli: &Cli, out: Option<&Path>) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| pipe.cfg.out_dir.join("preprocessed"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    // duplicates are removed from the training and development sets only;
    // evaluation sets keep every row
    let plan = [
        (SplitName::Train, true),
        (SplitName::Dev, true),
        (SplitName::DevTest, false),
        (SplitName::Test, false),
    ];
    let mut stats = BTreeMap::new();
    for (name, dedup) in plan {
        if pipe.split_path(name).is_err() {
            continue;
        }
        let split = pipe.load(name)?;
        let rows_in = split.len();
        let mut urls = 0;
        let mut users = 0;
        let cleaned: Vec<Example> = split
            .examples
            .iter()
            .map(|ex| {
                let (text, reps) = replace_urls_users(&ex.text);
                urls += reps.urls;
                users += reps.users;
                let text = pipe.normalizer.normalize(&text)?;
                Ok(Example {
                    text,
                    ..ex.clone()
                })
            })
            .collect::<Result<_>>()?;
        let cleaned = DatasetSplit::new(name.as_str(), cleaned);
        let (split, removed) = if dedup {
            let outcome = deduplicate(&cleaned);
            (outcome.split, outcome.removed)
        } else {
            (cleaned, 0)
        };
        write_split(out_dir.join(format!("{name}.tsv")), &split)?;
        println!(
            "{name}: {rows_in} rows in, {} out ({removed} duplicates removed, {urls} URLs, {users} mentions replaced)",
            split.len()
        );
        stats.insert(
            name.as_str(),
            PreprocessStats {
                rows_in,
                rows_out: split.len(),
                duplicates_removed: removed,
                urls_replaced: urls,
                users_replaced: users,
            },
        );
    }
    if stats.is_empty() {
        return Err(Error::config("no [data] splits configured to preprocess"));
    }
    let json = serde_json::to_string_pretty(&stats)? + "\n";
    write_atomic(&out_dir.join("stats.json"), json.as_bytes())?;
    println!("wrote cleaned splits to {}", out_dir.display());
    Ok(())
}

fn cmd_map_labels(
    input: &Path,
    mapping: Option<&Path>,
    classes: usize,
    name: Option<&str>,
    output: &Path,
) -> Result<()> {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("external")
        .to_string();
    let name = name.unwrap_or(&stem);
    let raw = load_external(input, name, classes)?;
    let mapping = match mapping {
        Some(path) => LabelMapping::load(path)?,
        None => LabelMapping::default_conversions(),
    };
    let mapped = map_external_labels(&raw, &mapping)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in &mapped.examples {
        if let Some(label) = ex.label {
            *counts.entry(label.as_str()).or_default() += 1;
        }
    }
    write_split(output, &mapped)?;
    let breakdown = counts
        .iter()
        .map(|(label, n)| format!("{label}={n}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!(
        "mapped {} rows from {} ({breakdown}) -> {}",
        mapped.len(),
        input.display(),
        output.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, init: Option<&Path>) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let train = pipe.load_train()?;
    let init = init.map(ModelHandle::load).transpose()?;
    let outcome = pipe
        .runner()
        .finetune(&pipe.cfg.finetune, &train, init.as_ref())?;
    println!(
        "run {}: fine-tuned on {} examples",
        outcome.record.run_id,
        train.len()
    );
    pipe.score_on_dev(&outcome)
}

fn cmd_train_2ft(cli: &Cli) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let train = pipe.load_train()?;
    let external = pipe.merged_externals()?;
    let heldout = pipe.heldout()?;
    let heldout_refs: Vec<&DatasetSplit> = heldout.iter().collect();
    let outcome = pipe.runner().two_stage_finetune(
        &pipe.cfg.stage1,
        &external,
        &pipe.cfg.finetune,
        &train,
        &heldout_refs,
        pipe.cfg.reset_head,
    )?;
    println!(
        "run {}: stage 1 on {} external examples, stage 2 on {} training examples",
        outcome.record.run_id,
        external.len(),
        train.len()
    );
    pipe.score_on_dev(&outcome)
}

fn cmd_tapt(cli: &Cli) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let train = pipe.load(SplitName::Train)?;
    let corpus = deduplicate(&train).split;
    let outcome = pipe.runner().tapt_pretrain(&pipe.cfg.tapt, &corpus)?;
    let rate = outcome
        .record
        .metrics
        .get("observed_mask_rate")
        .copied()
        .unwrap_or(f64::NAN);
    println!(
        "run {}: pre-trained on {} texts (observed mask rate {rate:.4})",
        outcome.record.run_id,
        corpus.len()
    );
    Ok(())
}

fn parse_split_name(s: &str) -> Result<SplitName> {
    SplitName::parse(s).ok_or_else(|| {
        Error::config(format!(
            "unknown split `{s}` (expected train, dev, dev_test, or test)"
        ))
    })
}

fn cmd_predict(cli: &Cli, model: &Path, split: &str, output: Option<&Path>) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let name = parse_split_name(split)?;
    let data = pipe.load(name)?;
    let model = ModelHandle::load(model)?;
    let preds = pipe
        .runner()
        .predict_split(&model, &data, pipe.cfg.finetune.max_length)?;
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| pipe.cfg.out_dir.join("preds").join(format!("{name}.tsv")));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    write_predictions_tsv(&path, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), path.display());
    Ok(())
}

fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    write_atomic(path, report.to_json_string()?.as_bytes())
}

fn cmd_ensemble(
    cli: &Cli,
    model_pred: &[PathBuf],
    output: &Path,
    gold: Option<&str>,
    metrics: Option<&Path>,
) -> Result<()> {
    let mut sets: Vec<(String, PredictionVector)> = Vec::with_capacity(model_pred.len());
    for path in model_pred {
        sets.push((path.display().to_string(), read_predictions_tsv(path)?));
    }
    let set = PredictionSet::new(sets)?;
    let combined = ensemble_predict(&set)?;
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    write_predictions_tsv(output, &combined)?;
    println!(
        "ensembled {} model(s) over {} examples -> {}",
        set.n_models(),
        set.n_examples(),
        output.display()
    );
    if let Some(gold) = gold {
        let pipe = Pipeline::new(cli)?;
        let name = parse_split_name(gold)?;
        let gold_split = pipe.load(name)?;
        let report = pipe.runner().evaluate(&combined, &gold_split)?;
        let metrics_path = metrics
            .map(Path::to_path_buf)
            .unwrap_or_else(|| append_extension(output, "metrics.json"));
        write_metrics(&metrics_path, &report)?;
        println!("ensemble micro-F1 on {name}: {:.4}", report.micro_f1);
    }
    Ok(())
}

/// `preds.tsv` -> `preds.tsv.metrics.json` (never replaces the extension).
fn append_extension(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_evaluate(cli: &Cli, pred: &Path, split: &str, metrics: Option<&Path>) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let name = parse_split_name(split)?;
    let gold = pipe.load(name)?;
    let preds = read_predictions_tsv(pred)?;
    let report = pipe.runner().evaluate(&preds, &gold)?;
    println!("micro-F1 on {name}: {:.4} over {} examples", report.micro_f1, report.n);
    let recalls = [
        ("Negative", report.per_class_recall.negative),
        ("Neutral", report.per_class_recall.neutral),
        ("Positive", report.per_class_recall.positive),
    ];
    for (label, recall) in recalls {
        match recall {
            Some(r) => println!("  {label} recall: {r:.4}"),
            None => println!("  {label} recall: undefined (no gold examples)"),
        }
    }
    if let Some(path) = metrics {
        write_metrics(path, &report)?;
        println!("wrote metrics to {}", path.display());
    }
    Ok(())
}

fn cmd_seed_sweep(cli: &Cli) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    if pipe.cfg.sweep_seeds.is_empty() {
        return Err(Error::config("config has no [sweep] seeds"));
    }
    let train = pipe.load_train()?;
    // variance is reported on the evaluation split when present, else dev
    let eval_name = if pipe.split_path(SplitName::DevTest).is_ok() {
        SplitName::DevTest
    } else {
        SplitName::Dev
    };
    let eval_split = pipe.load(eval_name)?;
    let (sweep, record) = pipe.runner().seed_sweep(
        &pipe.cfg.finetune,
        &pipe.cfg.sweep_seeds,
        &train,
        &eval_split,
    )?;
    println!("run {}: swept {} seeds on {eval_name}", record.run_id, sweep.entries.len());
    print!("{}", sweep.to_markdown(&pipe.cfg.backend));
    Ok(())
}

fn cmd_report(cli: &Cli, out: Option<&Path>) -> Result<()> {
    let pipe = Pipeline::new(cli)?;
    let records = collect_records(&pipe.cfg.out_dir)?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or(pipe.cfg.out_dir.clone());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut by_backend: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for record in &records {
        by_backend.entry(&record.backend).or_default().push(record);
    }

    let mut md = String::from("# Run report\n");
    if records.is_empty() {
        md.push_str("\n_No runs recorded._\n");
    }
    for (backend, runs) in &by_backend {
        md.push_str(&format!("\n## Backend `{backend}`\n\n"));
        md.push_str("| run id | kind | seed | metrics |\n|---|---|---:|---|\n");
        for run in runs {
            let summary = run
                .metrics
                .iter()
                .map(|(k, v)| {
                    if v.fract() == 0.0 && v.abs() < 1e15 {
                        format!("{k}={v:.0}")
                    } else {
                        format!("{k}={v:.4}")
                    }
                })
                .collect::<Vec<_>>()
                .join(", ");
            md.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                run.run_id, run.kind, run.seed, summary
            ));
        }
        // sweeps additionally get the per-seed layout with the mean row
        for run in runs.iter().filter(|r| r.kind == "sweep") {
            md.push_str(&format!("\n### Seed sweep `{}`\n\n", run.run_id));
            md.push_str("| seed | micro-F1 |\n|---:|---:|\n");
            let mut seeds: Vec<(u64, f64)> = run
                .metrics
                .iter()
                .filter_map(|(k, v)| {
                    k.strip_prefix("seed_")
                        .and_then(|s| s.parse::<u64>().ok())
                        .map(|seed| (seed, *v))
                })
                .collect();
            seeds.sort_unstable_by_key(|(seed, _)| *seed);
            for (seed, score) in &seeds {
                md.push_str(&format!("| {seed} | {score:.4} |\n"));
            }
            if let Some(mean) = run.metrics.get("mean") {
                md.push_str(&format!("| avg | {mean:.4} |\n"));
            }
        }
    }

    let json = serde_json::json!({ "backends": by_backend });
    let json = serde_json::to_string_pretty(&json)? + "\n";
    write_atomic(&out_dir.join("report.md"), md.as_bytes())?;
    write_atomic(&out_dir.join("report.json"), json.as_bytes())?;
    print!("{md}");
    println!("\nwrote report.md and report.json to {}", out_dir.display());
    Ok(())
}
