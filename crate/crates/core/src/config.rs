//! Run configuration files: a flat `key = value` format with `[section]`
//! headers, chosen for diff-friendliness in experiment tracking.
//!
//! Sections:
//! - `[pipeline]`: backend, tokenizer, vocab_size, normalizer, master_seed,
//!   out_dir
//! - `[data]`: train/dev/dev_test/test TSV paths
//! - `[external:<name>]`: one per external corpus — data path, mapping
//!   (`default` or a file path), declared class count
//! - `[finetune]`: supervised training hyperparameters
//! - `[stage1]`: optional overrides for stage 1 of 2-stage fine-tuning,
//!   plus `reset_head`
//! - `[tapt]`: pretraining hyperparameters
//! - `[sweep]`: `seeds = <comma list>`
//! - `[ensemble]`: `priority = <comma list of model names>`
//!
//! Unknown sections and keys are rejected; all problems in a file are
//! reported together. Relative paths resolve against the config file's
//! directory, so a config works from any working directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::{FinetuneConfig, TaptConfig};

/// Where an external corpus finds its label mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappingRef {
    /// The built-in emotion/abuse conversion table.
    Default,
    /// A two-column `original<TAB>mapped` file.
    File(PathBuf),
}

/// One `[external:<name>]` block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalSpec {
    pub name: String,
    pub data: PathBuf,
    pub mapping: MappingRef,
    pub declared_class_count: usize,
}

/// Task split paths from `[data]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub dev_test: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// A fully parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: String,
    pub tokenizer: String,
    pub vocab_size: u32,
    pub normalizer: String,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub data: DataPaths,
    pub externals: Vec<ExternalSpec>,
    pub finetune: FinetuneConfig,
    /// Stage-1 hyperparameters for 2-stage fine-tuning; defaults to the
    /// `[finetune]` values when no `[stage1]` section overrides them.
    pub stage1: FinetuneConfig,
    /// Whether stage 2 re-initializes the classifier head instead of
    /// warm-starting it from stage 1.
    pub reset_head: bool,
    pub tapt: TaptConfig,
    pub sweep_seeds: Vec<u64>,
    pub ensemble_priority: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: "toy".into(),
            tokenizer: "toy".into(),
            vocab_size: 50_004,
            normalizer: "nfc".into(),
            master_seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataPaths::default(),
            externals: Vec::new(),
            finetune: FinetuneConfig::default(),
            stage1: FinetuneConfig::default(),
            reset_head: false,
            tapt: TaptConfig::default(),
            sweep_seeds: Vec::new(),
            ensemble_priority: Vec::new(),
        }
    }
}

/// One parsed `key = value` line.
struct RawEntry {
    line: usize,
    key: String,
    value: String,
}

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

fn parse_raw(text: &str, problems: &mut Vec<String>) -> Vec<RawSection> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            sections.push(RawSection {
                name: name.trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {line_no}: expected `key = value` or `[section]`"));
            continue;
        };
        let Some(section) = sections.last_mut() else {
            problems.push(format!("line {line_no}: `{}` appears before any [section]", key.trim()));
            continue;
        };
        section.entries.push(RawEntry {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    sections
}

/// Typed accessor over one section's entries that tracks which keys were
/// consumed and accumulates problems instead of failing fast.
struct SectionReader<'a> {
    section: &'a RawSection,
    consumed: BTreeSet<&'a str>,
    problems: &'a mut Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a RawSection, problems: &'a mut Vec<String>) -> SectionReader<'a> {
        SectionReader {
            section,
            consumed: BTreeSet::new(),
            problems,
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a RawEntry> {
        self.consumed.insert(key);
        let mut found = None;
        for entry in &self.section.entries {
            if entry.key == key {
                if found.is_some() {
                    self.problems.push(format!(
                        "line {}: duplicate key `{key}` in [{}]",
                        entry.line, self.section.name
                    ));
                }
                found = Some(entry);
            }
        }
        found
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'static str, target: &mut T, type_name: &str) {
        if let Some(entry) = self.raw(key) {
            match entry.value.parse::<T>() {
                Ok(v) => *target = v,
                Err(_) => self.problems.push(format!(
                    "line {}: `{key}` in [{}] must be {type_name}, got `{}`",
                    entry.line, self.section.name, entry.value
                )),
            }
        }
    }

    fn string(&mut self, key: &'static str, target: &mut String) {
        if let Some(entry) = self.raw(key) {
            *target = entry.value.clone();
        }
    }

    fn path(&mut self, key: &'static str, base: &Path) -> Option<PathBuf> {
        self.raw(key).map(|entry| resolve(base, &entry.value))
    }

    /// Flags any key that no accessor asked about.
    fn finish(mut self) {
        let consumed = std::mem::take(&mut self.consumed);
        for entry in &self.section.entries {
            if !consumed.contains(entry.key.as_str()) {
                self.problems.push(format!(
                    "line {}: unknown key `{}` in [{}]",
                    entry.line, entry.key, self.section.name
                ));
            }
        }
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_finetune(reader: &mut SectionReader<'_>, cfg: &mut FinetuneConfig) {
    reader.parse("learning_rate", &mut cfg.learning_rate, "a number");
    reader.string("lr_scheduler", &mut cfg.lr_scheduler);
    reader.parse("warmup_ratio", &mut cfg.warmup_ratio, "a number");
    reader.parse("batch_size", &mut cfg.batch_size, "a positive integer");
    reader.parse("epochs", &mut cfg.epochs, "a positive integer");
    reader.parse("weight_decay", &mut cfg.weight_decay, "a number");
    reader.parse("token_drop_ratio", &mut cfg.token_drop_ratio, "a number");
    reader.parse("classifier_dropout", &mut cfg.classifier_dropout, "a number");
    reader.parse("max_length", &mut cfg.max_length, "a positive integer");
    reader.parse("seed", &mut cfg.seed, "an unsigned integer");
}

fn read_tapt(reader: &mut SectionReader<'_>, cfg: &mut TaptConfig) {
    reader.parse("lambda_disc", &mut cfg.lambda_disc, "a number");
    reader.parse("mlm_probability", &mut cfg.mlm_probability, "a number");
    reader.parse("learning_rate", &mut cfg.learning_rate, "a number");
    reader.string("lr_scheduler", &mut cfg.lr_scheduler);
    reader.parse("warmup_ratio", &mut cfg.warmup_ratio, "a number");
    reader.parse("batch_size", &mut cfg.batch_size, "a positive integer");
    reader.parse("epochs", &mut cfg.epochs, "a positive integer");
    reader.parse("weight_decay", &mut cfg.weight_decay, "a number");
    reader.parse("token_drop_ratio", &mut cfg.token_drop_ratio, "a number");
    reader.parse("max_length", &mut cfg.max_length, "a positive integer");
    reader.parse("seed", &mut cfg.seed, "an unsigned integer");
}

fn parse_u64_list(raw: &RawEntry, section: &str, problems: &mut Vec<String>) -> Vec<u64> {
    let mut out = Vec::new();
    for part in raw.value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.parse::<u64>() {
            Ok(v) => out.push(v),
            Err(_) => problems.push(format!(
                "line {}: `{}` in [{section}] must be a comma-separated list of unsigned integers, got `{part}`",
                raw.line, raw.key
            )),
        }
    }
    out
}

impl RunConfig {
    /// Parses and validates a config file, reporting every problem at once.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        RunConfig::parse(&text, &base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig> {
        let mut problems = Vec::new();
        let sections = parse_raw(text, &mut problems);
        let mut cfg = RunConfig::default();
        let mut stage1_overrides = false;

        for section in &sections {
            match section.name.as_str() {
                "pipeline" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    reader.string("backend", &mut cfg.backend);
                    reader.string("tokenizer", &mut cfg.tokenizer);
                    reader.parse("vocab_size", &mut cfg.vocab_size, "a positive integer");
                    reader.string("normalizer", &mut cfg.normalizer);
                    reader.parse("master_seed", &mut cfg.master_seed, "an unsigned integer");
                    if let Some(p) = reader.path("out_dir", base) {
                        cfg.out_dir = p;
                    }
                    reader.finish();
                }
                "data" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    cfg.data.train = reader.path("train", base).or(cfg.data.train.take());
                    cfg.data.dev = reader.path("dev", base).or(cfg.data.dev.take());
                    cfg.data.dev_test = reader.path("dev_test", base).or(cfg.data.dev_test.take());
                    cfg.data.test = reader.path("test", base).or(cfg.data.test.take());
                    reader.finish();
                }
                "finetune" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    read_finetune(&mut reader, &mut cfg.finetune);
                    reader.finish();
                }
                "stage1" => {
                    stage1_overrides = true;
                    let mut reader = SectionReader::new(section, &mut problems);
                    read_finetune(&mut reader, &mut cfg.stage1);
                    reader.parse("reset_head", &mut cfg.reset_head, "true or false");
                    reader.finish();
                }
                "tapt" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    read_tapt(&mut reader, &mut cfg.tapt);
                    reader.finish();
                }
                "sweep" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    if let Some(raw) = reader.raw("seeds") {
                        cfg.sweep_seeds = parse_u64_list(raw, "sweep", reader.problems);
                    }
                    reader.finish();
                }
                "ensemble" => {
                    let mut reader = SectionReader::new(section, &mut problems);
                    if let Some(raw) = reader.raw("priority") {
                        cfg.ensemble_priority = raw
                            .value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect();
                    }
                    reader.finish();
                }
                other => {
                    if let Some(name) = other.strip_prefix("external:") {
                        let name = name.trim();
                        if name.is_empty() {
                            problems.push(format!(
                                "line {}: external section needs a name: [external:<name>]",
                                section.line
                            ));
                            continue;
                        }
                        let mut reader = SectionReader::new(section, &mut problems);
                        let data = reader.path("data", base);
                        let mapping = reader.raw("mapping").map(|e| {
                            if e.value == "default" {
                                MappingRef::Default
                            } else {
                                MappingRef::File(resolve(base, &e.value))
                            }
                        });
                        let mut classes = 0usize;
                        reader.parse("classes", &mut classes, "a positive integer");
                        reader.finish();
                        match data {
                            Some(data) => cfg.externals.push(ExternalSpec {
                                name: name.to_string(),
                                data,
                                mapping: mapping.unwrap_or(MappingRef::Default),
                                declared_class_count: classes.max(1),
                            }),
                            None => problems.push(format!(
                                "line {}: [external:{name}] needs a `data` path",
                                section.line
                            )),
                        }
                        if classes == 0 {
                            problems.push(format!(
                                "line {}: [external:{name}] needs `classes` (its original class count)",
                                section.line
                            ));
                        }
                    } else {
                        problems.push(format!("line {}: unknown section [{other}]", section.line));
                    }
                }
            }
        }

        if !stage1_overrides {
            cfg.stage1 = cfg.finetune.clone();
        }

        // semantic validation, appended to whatever parsing found
        if let Err(Error::Config(more)) = cfg.finetune.validate() {
            problems.extend(more.into_iter().map(|p| format!("[finetune] {p}")));
        }
        if let Err(Error::Config(more)) = cfg.stage1.validate() {
            problems.extend(more.into_iter().map(|p| format!("[stage1] {p}")));
        }
        if let Err(Error::Config(more)) = cfg.tapt.validate() {
            problems.extend(more.into_iter().map(|p| format!("[tapt] {p}")));
        }
        if cfg.vocab_size <= crate::textprep::RESERVED_IDS {
            problems.push(format!(
                "[pipeline] vocab_size must exceed {}, got {}",
                crate::textprep::RESERVED_IDS,
                cfg.vocab_size
            ));
        }
        let distinct: BTreeSet<u64> = cfg.sweep_seeds.iter().copied().collect();
        if distinct.len() != cfg.sweep_seeds.len() {
            problems.push("[sweep] seeds must be distinct".into());
        }
        let mut names = BTreeSet::new();
        for ext in &cfg.externals {
            if !names.insert(ext.name.as_str()) {
                problems.push(format!("duplicate external dataset name `{}`", ext.name));
            }
        }

        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Cache directory for tokenizer/model assets: `SENTI_CACHE_DIR` when set,
/// otherwise a `senti` directory under the system temp dir. The built-in
/// backend caches nothing; this exists for backends that do.
pub fn cache_dir() -> PathBuf {
    match std::env::var_os("SENTI_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => std::env::temp_dir().join("senti-cache"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# experiment: toy pipeline
[pipeline]
backend = toy
tokenizer = toy
vocab_size = 4100
normalizer = nfc
master_seed = 1303
out_dir = out

[data]
train = data/train.tsv
dev = data/dev.tsv
dev_test = data/dev_test.tsv
test = data/test.tsv

[external:emotions]
data = data/ext_emotions.tsv
mapping = default
classes = 6

[external:reviews]
data = data/ext_reviews.tsv
mapping = maps/reviews.tsv
classes = 3

[finetune]
learning_rate = 2e-5
lr_scheduler = linear
warmup_ratio = 0.0
batch_size = 16
epochs = 3
weight_decay = 0.01
token_drop_ratio = 0.2
classifier_dropout = 0.1
max_length = 128
seed = 1234

[stage1]
epochs = 2
reset_head = false

[tapt]
lambda_disc = 50
mlm_probability = 0.25
learning_rate = 1e-4
warmup_ratio = 0.06
batch_size = 64
epochs = 100

[sweep]
seeds = 1234, 42, 747

[ensemble]
priority = m-2ft, m-ft, m-tapt
";

    #[test]
    fn full_config_parses() {
        let cfg = RunConfig::parse(FULL, Path::new("/cfgs")).unwrap();
        assert_eq!(cfg.backend, "toy");
        assert_eq!(cfg.vocab_size, 4100);
        assert_eq!(cfg.master_seed, 1303);
        assert_eq!(cfg.out_dir, PathBuf::from("/cfgs/out"));
        assert_eq!(cfg.data.train, Some(PathBuf::from("/cfgs/data/train.tsv")));
        assert_eq!(cfg.externals.len(), 2);
        assert_eq!(cfg.externals[0].name, "emotions");
        assert_eq!(cfg.externals[0].mapping, MappingRef::Default);
        assert_eq!(cfg.externals[0].declared_class_count, 6);
        assert_eq!(
            cfg.externals[1].mapping,
            MappingRef::File(PathBuf::from("/cfgs/maps/reviews.tsv"))
        );
        assert_eq!(cfg.finetune.epochs, 3);
        assert_eq!(cfg.stage1.epochs, 2); // override applied
        assert_eq!(cfg.stage1.batch_size, 16); // inherited
        assert!(!cfg.reset_head);
        assert_eq!(cfg.tapt.lambda_disc, 50.0);
        assert_eq!(cfg.sweep_seeds, vec![1234, 42, 747]);
        assert_eq!(cfg.ensemble_priority, vec!["m-2ft", "m-ft", "m-tapt"]);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("[pipeline]\nmaster_seed = 7\n", Path::new(".")).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.finetune, FinetuneConfig::default());
        assert_eq!(cfg.stage1, cfg.finetune);
        assert!(cfg.externals.is_empty());
        assert!(cfg.sweep_seeds.is_empty());
    }

    #[test]
    fn stage1_defaults_to_finetune_values() {
        let text = "[finetune]\nepochs = 4\nbatch_size = 8\n";
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.stage1.epochs, 4);
        assert_eq!(cfg.stage1.batch_size, 8);
    }

    #[test]
    fn unknown_sections_and_keys_rejected() {
        let text = "[pipline]\nbackend = toy\n\n[finetune]\nlearning_rte = 1\n";
        match RunConfig::parse(text, Path::new(".")).unwrap_err() {
            Error::Config(problems) => {
                assert!(problems.iter().any(|p| p.contains("unknown section [pipline]")), "{problems:?}");
                assert!(problems.iter().any(|p| p.contains("unknown key `learning_rte`")), "{problems:?}");
            }
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn all_problems_reported_together() {
        let text = "\
[pipeline]
vocab_size = nope

[finetune]
warmup_ratio = -1
epochs = 0

[sweep]
seeds = 7, 7
";
        match RunConfig::parse(text, Path::new(".")).unwrap_err() {
            Error::Config(problems) => {
                assert!(problems.len() >= 4, "{problems:?}");
                assert!(problems.iter().any(|p| p.contains("vocab_size")));
                assert!(problems.iter().any(|p| p.contains("warmup_ratio")));
                assert!(problems.iter().any(|p| p.contains("epochs")));
                assert!(problems.iter().any(|p| p.contains("distinct")));
            }
            other => panic!("expected Config, got {other:?}"),
        }
    }

    #[test]
    fn key_before_section_rejected() {
        assert!(RunConfig::parse("backend = toy\n", Path::new(".")).is_err());
    }

    #[test]
    fn duplicate_keys_rejected() {
        let text = "[pipeline]\nmaster_seed = 1\nmaster_seed = 2\n";
        assert!(matches!(
            RunConfig::parse(text, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn external_without_data_rejected() {
        let text = "[external:emo]\nmapping = default\nclasses = 6\n";
        assert!(RunConfig::parse(text, Path::new(".")).is_err());
    }

    #[test]
    fn absolute_paths_kept_verbatim() {
        let text = "[data]\ntrain = /abs/train.tsv\n";
        let cfg = RunConfig::parse(text, Path::new("/cfgs")).unwrap();
        assert_eq!(cfg.data.train, Some(PathBuf::from("/abs/train.tsv")));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# top\n\n[pipeline]\n# inner\nbackend = toy\n\n";
        assert!(RunConfig::parse(text, Path::new(".")).is_ok());
    }

    #[test]
    fn cache_dir_honors_env_var() {
        // run serially in one test to avoid env races
        std::env::set_var("SENTI_CACHE_DIR", "/tmp/senti-test-cache");
        assert_eq!(cache_dir(), PathBuf::from("/tmp/senti-test-cache"));
        std::env::remove_var("SENTI_CACHE_DIR");
        assert!(cache_dir().ends_with("senti-cache"));
    }
}
