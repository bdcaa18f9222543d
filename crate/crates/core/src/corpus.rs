//! Dataset loading, validation, deduplication, and label mapping.
//!
//! Datasets are TSV (UTF-8, header `id\ttext\tlabel`). Task splits carry the
//! closed label set `Negative|Neutral|Positive`; external corpora carry free
//! original labels that are projected onto the task labels through a
//! [`LabelMapping`] before use.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// The task's closed 3-class label set.
///
/// Ordering is fixed (Negative < Neutral < Positive) and doubles as the
/// axis order of confusion matrices and the tie-break order of the toy
/// backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    /// Axis index: Negative=0, Neutral=1, Positive=2.
    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Negative => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Positive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<SentimentLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
        }
    }

    /// Strict parse of the task label spelling (`Negative|Neutral|Positive`).
    pub fn parse(s: &str) -> Option<SentimentLabel> {
        match s {
            "Negative" => Some(SentimentLabel::Negative),
            "Neutral" => Some(SentimentLabel::Neutral),
            "Positive" => Some(SentimentLabel::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One text with an optional gold label; the atom of every pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    /// Opaque id, unique within its containing dataset.
    pub id: String,
    /// Non-empty unicode text.
    pub text: String,
    /// Gold label; `None` only for unlabeled (test) data.
    pub label: Option<SentimentLabel>,
    /// Provenance tag: the dataset this example came from.
    pub source: String,
}

/// Official task split names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitName {
    Train,
    Dev,
    DevTest,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [
        SplitName::Train,
        SplitName::Dev,
        SplitName::DevTest,
        SplitName::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::DevTest => "dev_test",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<SplitName> {
        match s {
            "train" => Some(SplitName::Train),
            "dev" => Some(SplitName::Dev),
            "dev_test" => Some(SplitName::DevTest),
            "test" => Some(SplitName::Test),
            _ => None,
        }
    }

    /// Sample count of the official task file for this split.
    pub fn official_size(self) -> usize {
        match self {
            SplitName::Train => 32566,
            SplitName::Dev => 3934,
            SplitName::DevTest => 3426,
            SplitName::Test => 6707,
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An ordered collection of examples with split metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    /// Split name: an official name for task data, free-form for merged or
    /// external material (e.g. `external`).
    pub name: String,
    pub examples: Vec<Example>,
    /// True when every example carries a label.
    pub labeled: bool,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> DatasetSplit {
        let labeled = examples.iter().all(|e| e.label.is_some());
        DatasetSplit {
            name: name.into(),
            examples,
            labeled,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Asserts that this split has the official sample count for `name`.
    pub fn validate_official_size(&self, name: SplitName) -> Result<()> {
        let expected = name.official_size();
        if self.len() != expected {
            return Err(Error::config(format!(
                "split `{}` has {} examples; official {} file has {expected}",
                self.name,
                self.len(),
                name
            )));
        }
        Ok(())
    }
}

/// A raw external-corpus row before label mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawExample {
    pub id: String,
    pub text: String,
    pub original_label: String,
}

/// An external corpus with free-string labels and declared class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalDataset {
    pub name: String,
    pub examples: Vec<RawExample>,
    pub declared_class_count: usize,
}

impl ExternalDataset {
    pub fn new(
        name: impl Into<String>,
        examples: Vec<RawExample>,
        declared_class_count: usize,
    ) -> Result<ExternalDataset> {
        if declared_class_count == 0 {
            return Err(Error::config("declared_class_count must be positive"));
        }
        Ok(ExternalDataset {
            name: name.into(),
            examples,
            declared_class_count,
        })
    }
}

/// Case-insensitive projection from external label spellings onto the task
/// label set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMapping {
    entries: HashMap<String, SentimentLabel>,
}

impl LabelMapping {
    /// The default conversion table. Nine rows; the `Sad/Sadness` row maps
    /// both spellings, so the table yields ten lookup keys.
    pub fn default_conversions() -> LabelMapping {
        use SentimentLabel::{Negative, Neutral, Positive};
        let rows: [(&str, SentimentLabel); 10] = [
            ("Love", Positive),
            ("Joy", Positive),
            ("Anger", Negative),
            ("Sad", Negative),
            ("Sadness", Negative),
            ("Fear", Negative),
            ("Disgust", Negative),
            ("Surprise", Neutral),
            ("Abusive", Negative),
            ("Non-Abusive", Positive),
        ];
        let entries = rows
            .iter()
            .map(|(k, v)| (k.to_lowercase(), *v))
            .collect();
        LabelMapping { entries }
    }

    pub fn empty() -> LabelMapping {
        LabelMapping {
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, original: &str, mapped: SentimentLabel) {
        self.entries.insert(original.to_lowercase(), mapped);
    }

    /// Case-insensitive lookup.
    pub fn get(&self, original: &str) -> Option<SentimentLabel> {
        self.entries.get(&original.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a mapping file: one `original<TAB>mapped` row per line, no
    /// header. `mapped` must spell a task label exactly.
    pub fn load(path: impl AsRef<Path>) -> Result<LabelMapping> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut mapping = LabelMapping::empty();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let line = strip_bom_if_first(&line, i);
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (original, mapped) = match (parts.next(), parts.next(), parts.next()) {
                (Some(o), Some(m), None) => (o, m),
                _ => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: "expected exactly two tab-separated fields".into(),
                    })
                }
            };
            let label = SentimentLabel::parse(mapped.trim()).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("`{mapped}` is not one of Negative|Neutral|Positive"),
            })?;
            mapping.insert(original.trim(), label);
        }
        Ok(mapping)
    }
}

impl Default for LabelMapping {
    fn default() -> Self {
        LabelMapping::default_conversions()
    }
}

fn strip_bom_if_first(line: &str, index: usize) -> &str {
    if index == 0 {
        line.strip_prefix('\u{feff}').unwrap_or(line)
    } else {
        line
    }
}

/// Shared TSV row reader: header check, field count, id uniqueness, non-empty
/// text. `parse_label` turns the optional third column into the row payload.
fn read_tsv<T>(
    path: &Path,
    expect_label_column: bool,
    mut make_row: impl FnMut(usize, String, String, Option<&str>) -> Result<T>,
) -> Result<Vec<T>> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut rows = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(Error::io(display, e)),
        None => {
            return Err(Error::Parse {
                path: display,
                line: 1,
                message: "missing header row".into(),
            })
        }
    };
    let header = strip_bom_if_first(header.trim_end_matches('\r'), 0);
    let expected_header = if expect_label_column {
        "id\ttext\tlabel"
    } else {
        "id\ttext"
    };
    if header != expected_header && header != "id\ttext\tlabel" {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("header must be `{}`", expected_header.replace('\t', "\\t")),
        });
    }
    let has_label_column = header == "id\ttext\tlabel";

    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let (id, text, label) = match (has_label_column, fields.as_slice()) {
            (true, [id, text, label]) => (*id, *text, Some(*label)),
            (false, [id, text]) => (*id, *text, None),
            _ => {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: line_no,
                    message: format!(
                        "expected {} tab-separated fields, found {}",
                        if has_label_column { 3 } else { 2 },
                        fields.len()
                    ),
                })
            }
        };
        if text.trim().is_empty() {
            return Err(Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("empty text for id `{id}`"),
            });
        }
        if !seen_ids.insert(id.to_string()) {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                path: display.clone(),
                line: line_no,
            });
        }
        rows.push(make_row(line_no, id.to_string(), text.to_string(), label)?);
    }
    Ok(rows)
}

/// Loads an official task split. The label column is required unless
/// `name` is [`SplitName::Test`], whose file may use the two-column header
/// `id\ttext`.
pub fn load_split(path: impl AsRef<Path>, name: SplitName) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let require_label = name != SplitName::Test;
    let examples = read_tsv(path, require_label, |line_no, id, text, label| {
        let label = match label {
            Some(raw) => Some(SentimentLabel::parse(raw).ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("`{raw}` is not one of Negative|Neutral|Positive"),
            })?),
            None => None,
        };
        Ok(Example {
            id,
            text,
            label,
            source: name.as_str().to_string(),
        })
    })?;
    Ok(DatasetSplit::new(name.as_str(), examples))
}

/// Loads an external corpus with free-string labels.
pub fn load_external(
    path: impl AsRef<Path>,
    name: &str,
    declared_class_count: usize,
) -> Result<ExternalDataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let examples = read_tsv(path, true, |line_no, id, text, label| {
        let original_label = label
            .ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: line_no,
                message: "missing label field".into(),
            })?
            .trim()
            .to_string();
        if original_label.is_empty() {
            return Err(Error::Parse {
                path: display.clone(),
                line: line_no,
                message: format!("empty label for id `{id}`"),
            });
        }
        Ok(RawExample {
            id,
            text,
            original_label,
        })
    })?;
    ExternalDataset::new(name, examples, declared_class_count)
}

/// Two examples that shared a text but disagreed on the label; the first
/// occurrence was kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelConflict {
    pub kept_id: String,
    pub dropped_id: String,
}

/// Result of [`deduplicate`]: the surviving split plus what was removed.
#[derive(Debug, Clone)]
pub struct DedupOutcome {
    pub split: DatasetSplit,
    /// Number of examples removed.
    pub removed: usize,
    /// Removed duplicates whose label differed from the kept copy.
    pub label_conflicts: Vec<LabelConflict>,
}

/// Dedup key: the raw text after unicode NFC normalization.
fn dedup_key(text: &str) -> String {
    text.nfc().collect()
}

/// Removes exact-duplicate texts, keeping the first occurrence in original
/// order. Duplicates with a conflicting label are dropped the same way but
/// reported (and logged) as label conflicts.
pub fn deduplicate(split: &DatasetSplit) -> DedupOutcome {
    let mut seen: HashMap<String, (usize, Option<SentimentLabel>)> = HashMap::new();
    let mut survivors = Vec::with_capacity(split.examples.len());
    let mut removed = 0usize;
    let mut label_conflicts = Vec::new();

    for ex in &split.examples {
        let key = dedup_key(&ex.text);
        match seen.get(&key) {
            None => {
                seen.insert(key, (survivors.len(), ex.label));
                survivors.push(ex.clone());
            }
            Some(&(kept_idx, kept_label)) => {
                removed += 1;
                if kept_label != ex.label {
                    let kept_id = survivors[kept_idx].id.clone();
                    log::warn!(
                        "dropping duplicate `{}` of `{}` with conflicting label",
                        ex.id,
                        kept_id
                    );
                    label_conflicts.push(LabelConflict {
                        kept_id,
                        dropped_id: ex.id.clone(),
                    });
                }
            }
        }
    }

    DedupOutcome {
        split: DatasetSplit::new(split.name.clone(), survivors),
        removed,
        label_conflicts,
    }
}

/// Projects an external dataset onto the task labels. Order and provenance
/// are preserved; every original label must be present in `mapping`.
pub fn map_external_labels(
    dataset: &ExternalDataset,
    mapping: &LabelMapping,
) -> Result<DatasetSplit> {
    let mut examples = Vec::with_capacity(dataset.examples.len());
    for (row, raw) in dataset.examples.iter().enumerate() {
        let label = mapping.get(&raw.original_label).ok_or_else(|| Error::UnknownLabel {
            label: raw.original_label.clone(),
            id: raw.id.clone(),
            row: row + 1,
        })?;
        examples.push(Example {
            id: raw.id.clone(),
            text: raw.text.clone(),
            label: Some(label),
            source: dataset.name.clone(),
        });
    }
    Ok(DatasetSplit::new(dataset.name.clone(), examples))
}

/// Concatenates label-mapped external splits in the given order, re-prefixes
/// ids as `<source>:<original-id>` to keep them collision-free, then
/// deduplicates.
pub fn merge_external(datasets: &[DatasetSplit]) -> DedupOutcome {
    let mut merged = Vec::new();
    for ds in datasets {
        for ex in &ds.examples {
            merged.push(Example {
                id: format!("{}:{}", ex.source, ex.id),
                ..ex.clone()
            });
        }
    }
    deduplicate(&DatasetSplit::new("external", merged))
}

/// Writes a split back out in the TSV interchange format.
pub fn write_split(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = String::new();
    out.push_str(if split.labeled { "id\ttext\tlabel\n" } else { "id\ttext\n" });
    for ex in &split.examples {
        match (split.labeled, ex.label) {
            (true, Some(label)) => {
                out.push_str(&format!("{}\t{}\t{}\n", ex.id, ex.text, label));
            }
            _ => out.push_str(&format!("{}\t{}\n", ex.id, ex.text)),
        }
    }
    let mut file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(display, e))
}
