//! Experiment orchestration: hyperparameter configs, run records, and the
//! runner driving single-stage fine-tuning, 2-stage fine-tuning, denoising
//! pretraining, and seed sweeps.
//!
//! A run directory (`runs/<run-id>/`) holds the immutable `record.json`,
//! the trained `model.bin`, and any evaluation artifacts. Run ids are
//! deterministic functions of configuration and seed, so repeating a run
//! lands in the same place with the same bytes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::mix_seeds;
use crate::backend::{EncodedDataset, EncodedExample, ModelBackend, ModelHandle, PredictionVector, PretrainStats};
use crate::corpus::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix3, MetricsReport, SeedSweepResult, SweepEntry};
use crate::textprep::{encode_truncate, preprocess_text, TextNormalizer, Tokenizer};

/// Supervised fine-tuning hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    /// Learning-rate schedule; only `linear` exists.
    pub lr_scheduler: String,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub weight_decay: f64,
    /// Fraction of content tokens randomly dropped per example per epoch.
    pub token_drop_ratio: f64,
    pub classifier_dropout: f64,
    pub max_length: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    /// The tuned base-model settings.
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 2e-5,
            lr_scheduler: "linear".into(),
            warmup_ratio: 0.0,
            batch_size: 16,
            epochs: 3,
            weight_decay: 0.01,
            token_drop_ratio: 0.2,
            classifier_dropout: 0.1,
            max_length: 128,
            seed: 1234,
        }
    }
}

impl FinetuneConfig {
    /// The larger-batch, longer-schedule variant used for the multilingual
    /// model.
    pub fn xlm_roberta() -> FinetuneConfig {
        FinetuneConfig {
            batch_size: 32,
            epochs: 5,
            ..FinetuneConfig::default()
        }
    }

    /// Checks every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.lr_scheduler != "linear" {
            problems.push(format!("lr_scheduler must be `linear`, got `{}`", self.lr_scheduler));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            problems.push(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.token_drop_ratio) {
            problems.push(format!("token_drop_ratio must lie in [0, 1), got {}", self.token_drop_ratio));
        }
        if !(0.0..1.0).contains(&self.classifier_dropout) {
            problems.push(format!("classifier_dropout must lie in [0, 1), got {}", self.classifier_dropout));
        }
        if self.max_length < 3 {
            problems.push(format!("max_length must be at least 3, got {}", self.max_length));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Denoising pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaptConfig {
    /// Weight of the discriminator term in the combined pretraining loss.
    pub lambda_disc: f64,
    pub mlm_probability: f64,
    pub learning_rate: f64,
    pub lr_scheduler: String,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub weight_decay: f64,
    pub token_drop_ratio: f64,
    pub max_length: usize,
    pub seed: u64,
}

impl Default for TaptConfig {
    /// The tuned pretraining settings.
    fn default() -> Self {
        TaptConfig {
            lambda_disc: 50.0,
            mlm_probability: 0.25,
            learning_rate: 1e-4,
            lr_scheduler: "linear".into(),
            warmup_ratio: 0.06,
            batch_size: 64,
            epochs: 100,
            weight_decay: 0.01,
            token_drop_ratio: 0.2,
            max_length: 128,
            seed: 1234,
        }
    }
}

impl TaptConfig {
    /// Checks every field, reporting all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lambda_disc.is_finite() && self.lambda_disc > 0.0) {
            problems.push(format!("lambda_disc must be positive, got {}", self.lambda_disc));
        }
        if !(self.mlm_probability > 0.0 && self.mlm_probability <= 1.0) {
            problems.push(format!("mlm_probability must lie in (0, 1], got {}", self.mlm_probability));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.lr_scheduler != "linear" {
            problems.push(format!("lr_scheduler must be `linear`, got `{}`", self.lr_scheduler));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            problems.push(format!("warmup_ratio must lie in [0, 1], got {}", self.warmup_ratio));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            problems.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.token_drop_ratio) {
            problems.push(format!("token_drop_ratio must lie in [0, 1), got {}", self.token_drop_ratio));
        }
        if self.max_length < 3 {
            problems.push(format!("max_length must be at least 3, got {}", self.max_length));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// The immutable description of one completed run, persisted as
/// `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// What kind of run this was: `finetune`, `2ft`, `tapt`, or `sweep`.
    pub kind: String,
    pub backend: String,
    /// Training-history tags of the produced model, in stage order.
    pub stage_tags: Vec<String>,
    /// Full configuration snapshot (JSON).
    pub config: serde_json::Value,
    /// SHA-256 of the canonical config snapshot.
    pub config_hash: String,
    /// Seed as configured.
    pub seed: u64,
    /// Seed actually used after mixing in the master seed.
    pub effective_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    /// Named scalar results (e.g. per-split scores, mask statistics).
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl RunRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(path.as_ref(), json.as_bytes())
    }

    /// Loads a record, verifying that the stored hash still matches the
    /// stored config snapshot.
    pub fn load(path: impl AsRef<Path>) -> Result<RunRecord> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let record: RunRecord = serde_json::from_slice(&bytes)?;
        let expected = config_hash(&record.config)?;
        if record.config_hash != expected {
            return Err(Error::Integrity {
                path: path.display().to_string(),
                message: "config hash does not match stored config".into(),
            });
        }
        Ok(record)
    }
}

/// SHA-256 hex digest of a config value's canonical JSON (object keys
/// sorted).
pub fn config_hash(config: &serde_json::Value) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

/// Writes bytes through a temp file and rename so readers never observe a
/// half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp~");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(bytes).map_err(|e| Error::io(display.clone(), e))?;
    file.sync_all().map_err(|e| Error::io(display.clone(), e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(display, e))
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// A finished training run: the model, its record, and where both live.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelHandle,
    pub record: RunRecord,
    pub run_dir: PathBuf,
}

/// Drives experiments end to end: preprocessing, encoding, backend calls,
/// and artifact persistence under `out_dir/runs/`.
pub struct Runner<'a> {
    pub backend: &'a dyn ModelBackend,
    pub tokenizer: &'a dyn Tokenizer,
    pub normalizer: &'a dyn TextNormalizer,
    pub out_dir: PathBuf,
    /// Mixed into every configured seed; one knob re-randomizes everything.
    pub master_seed: u64,
}

impl<'a> Runner<'a> {
    pub fn new(
        backend: &'a dyn ModelBackend,
        tokenizer: &'a dyn Tokenizer,
        normalizer: &'a dyn TextNormalizer,
        out_dir: impl Into<PathBuf>,
        master_seed: u64,
    ) -> Runner<'a> {
        Runner {
            backend,
            tokenizer,
            normalizer,
            out_dir: out_dir.into(),
            master_seed,
        }
    }

    /// The seed a run actually uses: configured seed mixed with the master
    /// seed.
    pub fn effective_seed(&self, configured: u64) -> u64 {
        mix_seeds(self.master_seed, configured)
    }

    /// Folds the master seed into a run's hashed settings: the master seed
    /// changes every effective seed, so the same settings under a different
    /// master seed must map to a different run identity rather than silently
    /// reusing (and overwriting) an existing run directory.
    fn scoped_config(&self, config: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "master_seed": self.master_seed,
            "run": config,
        })
    }

    /// Preprocesses (placeholder substitution + normalization) and encodes
    /// a split for the backend.
    pub fn encode_split(&self, split: &DatasetSplit, max_length: usize) -> Result<EncodedDataset> {
        let mut examples = Vec::with_capacity(split.len());
        for ex in &split.examples {
            let text = preprocess_text(&ex.text, self.normalizer)?;
            let seq = encode_truncate(&text, self.tokenizer, max_length).map_err(|e| match e {
                Error::EmptyText { .. } => Error::EmptyText { id: Some(ex.id.clone()) },
                other => other,
            })?;
            examples.push(EncodedExample {
                id: ex.id.clone(),
                seq,
                label: ex.label,
            });
        }
        Ok(EncodedDataset {
            examples,
            vocab_size: self.tokenizer.vocab_size(),
        })
    }

    fn run_dir(&self, run_id: &str) -> PathBuf {
        self.out_dir.join("runs").join(run_id)
    }

    fn persist(&self, run_id: &str, model: Option<&ModelHandle>, record: &RunRecord) -> Result<PathBuf> {
        let dir = self.run_dir(run_id);
        fs::create_dir_all(dir.join("preds"))
            .map_err(|e| Error::io(dir.display().to_string(), e))?;
        if let Some(model) = model {
            model.save(dir.join("model.bin"))?;
        }
        record.save(dir.join("record.json"))?;
        Ok(dir)
    }

    fn make_record(
        &self,
        kind: &str,
        config: serde_json::Value,
        seed: u64,
        stage_tags: &[String],
        started_at: String,
        metrics: BTreeMap<String, f64>,
        notes: Vec<String>,
    ) -> Result<RunRecord> {
        let hash = config_hash(&config)?;
        let run_id = format!("{kind}-{}-s{seed}", &hash[..8]);
        Ok(RunRecord {
            run_id,
            kind: kind.to_string(),
            backend: self.backend.name().to_string(),
            stage_tags: stage_tags.to_vec(),
            config,
            config_hash: hash,
            seed,
            effective_seed: self.effective_seed(seed),
            started_at,
            finished_at: now_rfc3339(),
            metrics,
            notes,
        })
    }

    /// Single-stage supervised fine-tuning on a labeled split.
    pub fn finetune(
        &self,
        cfg: &FinetuneConfig,
        train: &DatasetSplit,
        init: Option<&ModelHandle>,
    ) -> Result<TrainOutcome> {
        cfg.validate()?;
        if !train.labeled {
            return Err(Error::config(format!(
                "training split `{}` must be fully labeled",
                train.name
            )));
        }
        let started_at = now_rfc3339();
        let encoded = self.encode_split(train, cfg.max_length)?;
        let model = self
            .backend
            .train(cfg, &encoded, init, self.effective_seed(cfg.seed))?;
        // warm-started runs fold the init model's identity into the hashed
        // config so they never collide with a fresh run's id
        let config = self.scoped_config(match init {
            None => serde_json::to_value(cfg)?,
            Some(parent) => serde_json::json!({
                "finetune": serde_json::to_value(cfg)?,
                "init": {
                    "config_hash": parent.config_hash,
                    "stage_tags": parent.stage_tags,
                },
            }),
        });
        let hash = config_hash(&config)?;
        let model = model.with_stage("FT", hash);
        let mut metrics = BTreeMap::new();
        metrics.insert("train_examples".into(), encoded.len() as f64);
        let record = self.make_record(
            "finetune",
            config,
            cfg.seed,
            &model.stage_tags,
            started_at,
            metrics,
            vec![format!("trained on split `{}`", train.name)],
        )?;
        let run_dir = self.persist(&record.run_id, Some(&model), &record)?;
        Ok(TrainOutcome { model, record, run_dir })
    }

    /// 2-stage fine-tuning: stage 1 on label-mapped external data only,
    /// stage 2 on the task training set, warm-started from stage 1.
    ///
    /// Before anything runs, every external text is checked (after
    /// preprocessing) against the held-out splits; any exact match aborts
    /// with a leakage error. With an empty external set the operation
    /// degenerates to plain fine-tuning, with a warning.
    pub fn two_stage_finetune(
        &self,
        stage1_cfg: &FinetuneConfig,
        external: &DatasetSplit,
        stage2_cfg: &FinetuneConfig,
        train: &DatasetSplit,
        heldout: &[&DatasetSplit],
        reset_head: bool,
    ) -> Result<TrainOutcome> {
        stage1_cfg.validate()?;
        stage2_cfg.validate()?;
        self.check_leakage(external, heldout)?;
        let started_at = now_rfc3339();

        let mut notes = Vec::new();
        let stage1_model = if external.is_empty() {
            log::warn!("external set is empty; 2-stage fine-tuning degenerates to plain fine-tuning");
            notes.push("stage 1 skipped: external set empty".into());
            None
        } else {
            if !external.labeled {
                return Err(Error::config("external split must be fully labeled"));
            }
            let encoded = self.encode_split(external, stage1_cfg.max_length)?;
            let model = self.backend.train(
                stage1_cfg,
                &encoded,
                None,
                self.effective_seed(stage1_cfg.seed),
            )?;
            let hash = config_hash(&self.scoped_config(serde_json::to_value(stage1_cfg)?))?;
            Some(model.with_stage("2FT-stage1", hash))
        };

        let stage1_model = match (stage1_model, reset_head) {
            (Some(m), true) => {
                // the linear head is this model's entire parameter set, so a
                // head reset keeps only the stage provenance
                notes.push("reset_head: stage-2 weights re-initialized".into());
                Some(ModelHandle {
                    weights: vec![0.0; m.weights.len()],
                    ..m
                })
            }
            (m, _) => m,
        };

        if !train.labeled {
            return Err(Error::config(format!(
                "training split `{}` must be fully labeled",
                train.name
            )));
        }
        let encoded = self.encode_split(train, stage2_cfg.max_length)?;
        let model = self.backend.train(
            stage2_cfg,
            &encoded,
            stage1_model.as_ref(),
            self.effective_seed(stage2_cfg.seed),
        )?;

        let config = self.scoped_config(serde_json::json!({
            "stage1": serde_json::to_value(stage1_cfg)?,
            "stage2": serde_json::to_value(stage2_cfg)?,
            "reset_head": reset_head,
        }));
        let hash = config_hash(&config)?;
        let model = model.with_stage("2FT", hash);
        let mut metrics = BTreeMap::new();
        metrics.insert("external_examples".into(), external.len() as f64);
        metrics.insert("train_examples".into(), train.len() as f64);
        let record = self.make_record(
            "2ft",
            config,
            stage2_cfg.seed,
            &model.stage_tags,
            started_at,
            metrics,
            notes,
        )?;
        let run_dir = self.persist(&record.run_id, Some(&model), &record)?;
        Ok(TrainOutcome { model, record, run_dir })
    }

    /// Fails if any external text (after preprocessing) appears verbatim in
    /// a held-out split.
    fn check_leakage(&self, external: &DatasetSplit, heldout: &[&DatasetSplit]) -> Result<()> {
        let mut forbidden: BTreeMap<String, &str> = BTreeMap::new();
        for split in heldout {
            for ex in &split.examples {
                forbidden.insert(preprocess_text(&ex.text, self.normalizer)?, &split.name);
            }
        }
        for ex in &external.examples {
            let text = preprocess_text(&ex.text, self.normalizer)?;
            if let Some(&split) = forbidden.get(&text) {
                return Err(Error::Leakage {
                    id: ex.id.clone(),
                    split: split.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Task-adaptive denoising pretraining on unlabeled texts.
    pub fn tapt_pretrain(&self, cfg: &TaptConfig, texts: &DatasetSplit) -> Result<TrainOutcome> {
        cfg.validate()?;
        if !self.backend.supports_pretraining() {
            return Err(Error::Capability {
                backend: self.backend.name().to_string(),
                capability: "pretraining".into(),
            });
        }
        if texts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let started_at = now_rfc3339();
        let encoded = self.encode_split(texts, cfg.max_length)?;
        let (model, stats) = self
            .backend
            .pretrain(cfg, &encoded, self.effective_seed(cfg.seed))?;
        let config = self.scoped_config(serde_json::to_value(cfg)?);
        let hash = config_hash(&config)?;
        let mut model = model;
        model.config_hash = hash;
        let record = self.make_record(
            "tapt",
            config,
            cfg.seed,
            &model.stage_tags,
            started_at,
            pretrain_metrics(&stats),
            vec![format!("pretraining corpus `{}`", texts.name)],
        )?;
        let run_dir = self.persist(&record.run_id, Some(&model), &record)?;
        Ok(TrainOutcome { model, record, run_dir })
    }

    /// Predicts a split with an existing model.
    pub fn predict_split(
        &self,
        model: &ModelHandle,
        split: &DatasetSplit,
        max_length: usize,
    ) -> Result<PredictionVector> {
        let encoded = self.encode_split(split, max_length)?;
        self.backend.predict(model, &encoded)
    }

    /// Scores predictions against a labeled split, pairing entries by
    /// position and demanding id agreement.
    pub fn evaluate(&self, preds: &PredictionVector, gold: &DatasetSplit) -> Result<MetricsReport> {
        let cm = confusion_against(preds, gold)?;
        MetricsReport::from_confusion(&cm)
    }

    /// Trains and evaluates one configuration under several seeds,
    /// persisting each run plus a sweep summary; returns the per-seed
    /// scores and their mean.
    pub fn seed_sweep(
        &self,
        cfg: &FinetuneConfig,
        seeds: &[u64],
        train: &DatasetSplit,
        eval_split: &DatasetSplit,
    ) -> Result<(SeedSweepResult, RunRecord)> {
        if seeds.is_empty() {
            return Err(Error::config("seed sweep needs at least one seed"));
        }
        let distinct: HashSet<u64> = seeds.iter().copied().collect();
        if distinct.len() != seeds.len() {
            return Err(Error::config("seed sweep seeds must be distinct"));
        }
        let started_at = now_rfc3339();
        let mut entries = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let seeded = FinetuneConfig { seed, ..cfg.clone() };
            let result = self
                .finetune(&seeded, train, None)
                .and_then(|outcome| {
                    let preds = self.predict_split(&outcome.model, eval_split, seeded.max_length)?;
                    let cm = confusion_against(&preds, eval_split)?;
                    cm.micro_f1()
                });
            match result {
                Ok(score) => entries.push(SweepEntry { seed, micro_f1: score }),
                Err(source) => {
                    return Err(Error::SweepSeed {
                        seed,
                        completed: entries.len(),
                        source: Box::new(source),
                    })
                }
            }
        }
        let sweep = SeedSweepResult::new(entries)?;

        let config = self.scoped_config(serde_json::json!({
            "base": serde_json::to_value(cfg)?,
            "seeds": seeds,
            "eval_split": eval_split.name,
        }));
        let mut metrics = BTreeMap::new();
        for e in &sweep.entries {
            metrics.insert(format!("seed_{}", e.seed), e.micro_f1);
        }
        metrics.insert("mean".into(), sweep.mean);
        let record = self.make_record(
            "sweep",
            config,
            cfg.seed,
            &[],
            started_at,
            metrics,
            vec![],
        )?;
        let run_dir = self.persist(&record.run_id, None, &record)?;
        let mut sweep_json = serde_json::to_string_pretty(&sweep)?;
        sweep_json.push('\n');
        write_atomic(&run_dir.join("sweep.json"), sweep_json.as_bytes())?;
        Ok((sweep, record))
    }
}

/// Builds the confusion matrix of predictions against a labeled split,
/// insisting on positional id alignment.
pub fn confusion_against(preds: &PredictionVector, gold: &DatasetSplit) -> Result<ConfusionMatrix3> {
    if preds.len() != gold.len() {
        return Err(Error::MisalignedPredictions(format!(
            "{} predictions against {} gold examples",
            preds.len(),
            gold.len()
        )));
    }
    let mut cm = ConfusionMatrix3::zero();
    for (p, g) in preds.entries().iter().zip(&gold.examples) {
        if p.id != g.id {
            return Err(Error::MisalignedPredictions(format!(
                "prediction id `{}` does not match gold id `{}`",
                p.id, g.id
            )));
        }
        let gold_label = g.label.ok_or_else(|| {
            Error::config(format!("gold split `{}` has unlabeled example `{}`", gold.name, g.id))
        })?;
        cm.add(gold_label, p.label);
    }
    Ok(cm)
}

fn pretrain_metrics(stats: &PretrainStats) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("pretrain_examples".into(), stats.examples as f64);
    m.insert("content_tokens".into(), stats.content_tokens as f64);
    m.insert("masked_tokens".into(), stats.masked_tokens as f64);
    m.insert("observed_mask_rate".into(), stats.observed_rate);
    m
}

/// Reads every `runs/*/record.json` under `out_dir`, sorted by run id.
pub fn collect_records(out_dir: &Path) -> Result<Vec<RunRecord>> {
    let runs = out_dir.join("runs");
    if !runs.is_dir() {
        return Ok(Vec::new());
    }
    let mut records = Vec::new();
    let entries = fs::read_dir(&runs).map_err(|e| Error::io(runs.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(runs.display().to_string(), e))?;
        let record_path = entry.path().join("record.json");
        if record_path.is_file() {
            records.push(RunRecord::load(&record_path)?);
        }
    }
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ToyBackend;
    use crate::corpus::{DatasetSplit, Example, SentimentLabel};
    use crate::textprep::{NfcNormalizer, ToyTokenizer};

    fn toy_split(name: &str, n_per_class: usize) -> DatasetSplit {
        let keywords = ["kharap baje", "thik achhe", "bhalo darun"];
        let mut examples = Vec::new();
        for (c, kw) in keywords.iter().enumerate() {
            for i in 0..n_per_class {
                examples.push(Example {
                    id: format!("{name}-c{c}e{i}"),
                    // split name in the text keeps splits text-disjoint
                    text: format!("ami {name} aj {kw} bollam katha {i}"),
                    label: SentimentLabel::from_index(c),
                    source: name.into(),
                });
            }
        }
        DatasetSplit::new(name, examples)
    }

    struct Fixture {
        backend: ToyBackend,
        tokenizer: ToyTokenizer,
        normalizer: NfcNormalizer,
        dir: tempfile::TempDir,
    }

    impl Fixture {
        fn new() -> Fixture {
            Fixture {
                backend: ToyBackend::new(),
                tokenizer: ToyTokenizer::new(2048).unwrap(),
                normalizer: NfcNormalizer,
                dir: tempfile::tempdir().unwrap(),
            }
        }

        fn runner(&self, master_seed: u64) -> Runner<'_> {
            Runner::new(
                &self.backend,
                &self.tokenizer,
                &self.normalizer,
                self.dir.path(),
                master_seed,
            )
        }
    }

    #[test]
    fn finetune_config_defaults_validate() {
        FinetuneConfig::default().validate().unwrap();
        FinetuneConfig::xlm_roberta().validate().unwrap();
        TaptConfig::default().validate().unwrap();
        let xlmr = FinetuneConfig::xlm_roberta();
        assert_eq!((xlmr.batch_size, xlmr.epochs), (32, 5));
    }

    #[test]
    fn validation_collects_all_problems() {
        let cfg = FinetuneConfig {
            learning_rate: -1.0,
            warmup_ratio: 2.0,
            epochs: 0,
            ..FinetuneConfig::default()
        };
        match cfg.validate().unwrap_err() {
            Error::Config(problems) => {
                assert_eq!(problems.len(), 3, "{problems:?}");
                assert!(problems.iter().any(|p| p.contains("learning_rate")));
                assert!(problems.iter().any(|p| p.contains("warmup_ratio")));
                assert!(problems.iter().any(|p| p.contains("epochs")));
            }
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn tapt_config_rejects_zero_mlm_probability() {
        let cfg = TaptConfig {
            mlm_probability: 0.0,
            ..TaptConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TaptConfig {
            lambda_disc: 0.0,
            ..TaptConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn finetune_persists_run_artifacts() {
        let fx = Fixture::new();
        let runner = fx.runner(1303);
        let train = toy_split("train", 8);
        let cfg = FinetuneConfig { epochs: 2, ..FinetuneConfig::default() };
        let outcome = runner.finetune(&cfg, &train, None).unwrap();
        assert!(outcome.run_dir.join("record.json").is_file());
        assert!(outcome.run_dir.join("model.bin").is_file());
        assert!(outcome.run_dir.join("preds").is_dir());
        assert_eq!(outcome.model.stage_tags, vec!["FT".to_string()]);
        assert_eq!(outcome.record.seed, cfg.seed);
        assert_ne!(outcome.record.effective_seed, cfg.seed);

        let loaded = RunRecord::load(outcome.run_dir.join("record.json")).unwrap();
        assert_eq!(loaded.run_id, outcome.record.run_id);
        assert_eq!(loaded.config_hash, outcome.record.config_hash);
    }

    #[test]
    fn finetune_rejects_unlabeled_split() {
        let fx = Fixture::new();
        let runner = fx.runner(1);
        let mut train = toy_split("train", 2);
        train.examples[0].label = None;
        let split = DatasetSplit::new("train", train.examples);
        assert!(runner.finetune(&FinetuneConfig::default(), &split, None).is_err());
    }

    #[test]
    fn finetune_is_prediction_deterministic() {
        let fx = Fixture::new();
        let runner = fx.runner(77);
        let train = toy_split("train", 8);
        let dev = toy_split("dev", 3);
        let cfg = FinetuneConfig { epochs: 2, ..FinetuneConfig::default() };
        let a = runner.finetune(&cfg, &train, None).unwrap();
        let b = runner.finetune(&cfg, &train, None).unwrap();
        assert_eq!(a.model.weights, b.model.weights);
        let pa = runner.predict_split(&a.model, &dev, cfg.max_length).unwrap();
        let pb = runner.predict_split(&b.model, &dev, cfg.max_length).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn two_stage_uses_stage1_init_and_tags() {
        let fx = Fixture::new();
        let runner = fx.runner(5);
        let external = toy_split("external", 10);
        let train = toy_split("train", 10);
        let dev = toy_split("dev", 3);
        let cfg = FinetuneConfig { epochs: 2, ..FinetuneConfig::default() };
        let outcome = runner
            .two_stage_finetune(&cfg, &external, &cfg, &train, &[&dev], false)
            .unwrap();
        assert_eq!(
            outcome.model.stage_tags,
            vec!["2FT-stage1".to_string(), "2FT".to_string()]
        );
        // learned something: predicts its own training data well
        let preds = runner.predict_split(&outcome.model, &train, cfg.max_length).unwrap();
        let correct = preds
            .entries()
            .iter()
            .zip(&train.examples)
            .filter(|(p, e)| Some(p.label) == e.label)
            .count();
        assert!(correct * 10 >= train.len() * 9);
    }

    #[test]
    fn two_stage_empty_external_degenerates_to_finetune() {
        let fx = Fixture::new();
        let runner = fx.runner(5);
        let external = DatasetSplit::new("external", vec![]);
        let train = toy_split("train", 8);
        let cfg = FinetuneConfig { epochs: 2, ..FinetuneConfig::default() };
        let two = runner
            .two_stage_finetune(&cfg, &external, &cfg, &train, &[], false)
            .unwrap();
        let one = runner.finetune(&cfg, &train, None).unwrap();
        // prediction-identical to the plain run
        let dev = toy_split("dev", 4);
        let p2 = runner.predict_split(&two.model, &dev, cfg.max_length).unwrap();
        let p1 = runner.predict_split(&one.model, &dev, cfg.max_length).unwrap();
        let l2: Vec<_> = p2.entries().iter().map(|e| e.label).collect();
        let l1: Vec<_> = p1.entries().iter().map(|e| e.label).collect();
        assert_eq!(l1, l2);
        assert!(two.record.notes.iter().any(|n| n.contains("stage 1 skipped")));
    }

    #[test]
    fn two_stage_detects_heldout_leakage() {
        let fx = Fixture::new();
        let runner = fx.runner(5);
        let mut external = toy_split("external", 4);
        let dev_test = toy_split("dev_test", 4);
        // inject one held-out text verbatim
        external.examples[2].text = dev_test.examples[0].text.clone();
        let external = DatasetSplit::new("external", external.examples);
        let train = toy_split("train", 4);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let err = runner
            .two_stage_finetune(&cfg, &external, &cfg, &train, &[&dev_test], false)
            .unwrap_err();
        match err {
            Error::Leakage { id, split } => {
                assert_eq!(id, external.examples[2].id);
                assert_eq!(split, "dev_test");
            }
            other => panic!("expected Leakage, got {other:?}"),
        }
    }

    #[test]
    fn leakage_check_sees_through_preprocessing() {
        // same text modulo URL form and unicode composition still trips
        let fx = Fixture::new();
        let runner = fx.runner(5);
        let external = DatasetSplit::new(
            "external",
            vec![Example {
                id: "x1".into(),
                text: "dekho https://a.example cafe\u{301} khabo".into(),
                label: Some(SentimentLabel::Positive),
                source: "external".into(),
            }],
        );
        let dev = DatasetSplit::new(
            "dev",
            vec![Example {
                id: "d1".into(),
                text: "dekho http://b.example caf\u{e9} khabo".into(),
                label: Some(SentimentLabel::Positive),
                source: "dev".into(),
            }],
        );
        let train = toy_split("train", 2);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let err = runner
            .two_stage_finetune(&cfg, &external, &cfg, &train, &[&dev], false)
            .unwrap_err();
        assert!(matches!(err, Error::Leakage { .. }));
    }

    #[test]
    fn tapt_records_stats_and_lambda() {
        let fx = Fixture::new();
        let runner = fx.runner(9);
        let train = toy_split("train", 10);
        let cfg = TaptConfig::default();
        let outcome = runner.tapt_pretrain(&cfg, &train).unwrap();
        assert_eq!(outcome.model.stage_tags, vec!["TAPT".to_string()]);
        assert_eq!(outcome.record.config["run"]["lambda_disc"], 50.0);
        assert_eq!(outcome.record.config["master_seed"], 9);
        assert!(outcome.record.metrics.contains_key("observed_mask_rate"));
        assert!(outcome.run_dir.join("model.bin").is_file());
    }

    #[test]
    fn tapt_rejects_empty_corpus_and_missing_capability() {
        let fx = Fixture::new();
        let runner = fx.runner(9);
        assert!(matches!(
            runner.tapt_pretrain(&TaptConfig::default(), &DatasetSplit::new("train", vec![])),
            Err(Error::EmptyDataset)
        ));

        let no_pt = ToyBackend::without_pretraining();
        let runner = Runner::new(&no_pt, &fx.tokenizer, &fx.normalizer, fx.dir.path(), 9);
        let err = runner
            .tapt_pretrain(&TaptConfig::default(), &toy_split("train", 2))
            .unwrap_err();
        assert!(matches!(err, Error::Capability { .. }));
    }

    #[test]
    fn seed_sweep_scores_each_seed() {
        let fx = Fixture::new();
        let runner = fx.runner(1303);
        let train = toy_split("train", 8);
        let dev = toy_split("dev", 4);
        let cfg = FinetuneConfig { epochs: 2, ..FinetuneConfig::default() };
        let (sweep, record) = runner.seed_sweep(&cfg, &[1234, 42, 747], &train, &dev).unwrap();
        assert_eq!(sweep.entries.len(), 3);
        let mean = sweep.entries.iter().map(|e| e.micro_f1).sum::<f64>() / 3.0;
        assert!((sweep.mean - mean).abs() < 1e-9);
        assert!(record.metrics.contains_key("seed_42"));
        assert!(runner.run_dir(&record.run_id).join("sweep.json").is_file());
    }

    #[test]
    fn seed_sweep_rejects_bad_seed_lists() {
        let fx = Fixture::new();
        let runner = fx.runner(1);
        let train = toy_split("train", 2);
        let dev = toy_split("dev", 2);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        assert!(runner.seed_sweep(&cfg, &[], &train, &dev).is_err());
        assert!(runner.seed_sweep(&cfg, &[7, 7], &train, &dev).is_err());
    }

    #[test]
    fn seed_sweep_propagates_failure_with_progress() {
        let fx = Fixture::new();
        let runner = fx.runner(1);
        let train = toy_split("train", 2);
        let bad_dev = DatasetSplit::new("dev", vec![]); // prediction on empty split fails
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let err = runner.seed_sweep(&cfg, &[11, 22], &train, &bad_dev).unwrap_err();
        match err {
            Error::SweepSeed { seed, completed, .. } => {
                assert_eq!(seed, 11);
                assert_eq!(completed, 0);
            }
            other => panic!("expected SweepSeed, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_demands_alignment() {
        let fx = Fixture::new();
        let runner = fx.runner(3);
        let train = toy_split("train", 4);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let outcome = runner.finetune(&cfg, &train, None).unwrap();
        let preds = runner.predict_split(&outcome.model, &train, cfg.max_length).unwrap();

        let report = runner.evaluate(&preds, &train).unwrap();
        assert_eq!(report.n, train.len() as u64);

        let mut shuffled = train.clone();
        shuffled.examples.swap(0, 1);
        assert!(matches!(
            runner.evaluate(&preds, &shuffled),
            Err(Error::MisalignedPredictions(_))
        ));

        let mut short = train.clone();
        short.examples.pop();
        let short = DatasetSplit::new("train", short.examples);
        assert!(matches!(
            runner.evaluate(&preds, &short),
            Err(Error::MisalignedPredictions(_))
        ));
    }

    #[test]
    fn run_ids_are_deterministic_and_seed_scoped() {
        let fx = Fixture::new();
        let runner = fx.runner(10);
        let train = toy_split("train", 4);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let a = runner.finetune(&cfg, &train, None).unwrap();
        let b = runner.finetune(&cfg, &train, None).unwrap();
        assert_eq!(a.record.run_id, b.record.run_id);
        let other = FinetuneConfig { seed: 99, ..cfg.clone() };
        let c = runner.finetune(&other, &train, None).unwrap();
        assert_ne!(a.record.run_id, c.record.run_id);

        // a different master seed changes the artifacts, so it must also
        // change the run identity — not overwrite the original run dir
        let fx2 = Fixture::new();
        let d = fx2.runner(11).finetune(&cfg, &train, None).unwrap();
        assert_ne!(a.record.run_id, d.record.run_id);
    }

    #[test]
    fn collect_records_reads_all_runs() {
        let fx = Fixture::new();
        let runner = fx.runner(10);
        let train = toy_split("train", 4);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        runner.finetune(&cfg, &train, None).unwrap();
        runner
            .finetune(&FinetuneConfig { seed: 2, ..cfg.clone() }, &train, None)
            .unwrap();
        let records = collect_records(fx.dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records.windows(2).all(|w| w[0].run_id <= w[1].run_id));

        let empty = tempfile::tempdir().unwrap();
        assert!(collect_records(empty.path()).unwrap().is_empty());
    }

    #[test]
    fn record_load_detects_tampering() {
        let fx = Fixture::new();
        let runner = fx.runner(10);
        let train = toy_split("train", 2);
        let cfg = FinetuneConfig { epochs: 1, ..FinetuneConfig::default() };
        let outcome = runner.finetune(&cfg, &train, None).unwrap();
        let path = outcome.run_dir.join("record.json");
        let text = fs::read_to_string(&path).unwrap();
        let tampered = text.replace("\"epochs\": 1", "\"epochs\": 7");
        assert_ne!(text, tampered);
        fs::write(&path, tampered).unwrap();
        assert!(matches!(RunRecord::load(&path), Err(Error::Integrity { .. })));
    }

    #[test]
    fn master_seed_changes_effective_seed() {
        let fx = Fixture::new();
        let r1 = fx.runner(1303);
        let r2 = fx.runner(1304);
        assert_ne!(r1.effective_seed(42), r2.effective_seed(42));
        assert_ne!(r1.effective_seed(42), r1.effective_seed(43));
    }
}
