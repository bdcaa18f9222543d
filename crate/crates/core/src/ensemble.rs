//! Majority-vote ensembling of per-model predictions.
//!
//! Models are ordered by priority (index 0 = best individual model). Each
//! example takes the strict-plurality label of the model votes; whenever
//! the maximum vote count is shared, the best model's label wins.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::backend::{PredictionEntry, PredictionVector};
use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::training::write_atomic;

/// Ordered per-model predictions over the same examples; index 0 is the
/// highest-priority model.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    models: Vec<(String, PredictionVector)>,
}

impl PredictionSet {
    /// Validates the alignment invariants: at least one model, equal
    /// lengths, and pairwise-identical id order.
    pub fn new(models: Vec<(String, PredictionVector)>) -> Result<PredictionSet> {
        let Some((first_name, first)) = models.first() else {
            return Err(Error::config("ensemble needs at least one model"));
        };
        for (name, preds) in &models[1..] {
            if preds.len() != first.len() {
                return Err(Error::MisalignedPredictions(format!(
                    "model `{name}` has {} predictions, `{first_name}` has {}",
                    preds.len(),
                    first.len()
                )));
            }
            for (a, b) in first.entries().iter().zip(preds.entries()) {
                if a.id != b.id {
                    return Err(Error::MisalignedPredictions(format!(
                        "id `{}` of `{first_name}` does not match id `{}` of `{name}`",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(PredictionSet { models })
    }

    pub fn models(&self) -> &[(String, PredictionVector)] {
        &self.models
    }

    pub fn n_models(&self) -> usize {
        self.models.len()
    }

    pub fn n_examples(&self) -> usize {
        self.models[0].1.len()
    }
}

/// Resolves one example's votes. Returns the strict-plurality label; when
/// the maximum count is shared by two or more labels (1-1-1 as well as
/// 2-2-1 patterns), returns the first — highest-priority — vote.
pub fn vote(labels: &[SentimentLabel]) -> Result<SentimentLabel> {
    if labels.is_empty() {
        return Err(Error::config("vote needs at least one label"));
    }
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let max = *counts.iter().max().unwrap();
    let winners = counts.iter().filter(|&&c| c == max).count();
    if winners == 1 {
        let idx = counts.iter().position(|&c| c == max).unwrap();
        Ok(SentimentLabel::from_index(idx).unwrap())
    } else {
        Ok(labels[0])
    }
}

/// Applies [`vote`] per example. Output scores are vote-count fractions per
/// class, so the winning label always attains the maximum score.
pub fn ensemble_predict(ps: &PredictionSet) -> Result<PredictionVector> {
    let n_models = ps.n_models() as f64;
    let mut entries = Vec::with_capacity(ps.n_examples());
    for i in 0..ps.n_examples() {
        let votes: Vec<SentimentLabel> = ps
            .models
            .iter()
            .map(|(_, preds)| preds.entries()[i].label)
            .collect();
        let label = vote(&votes)?;
        let mut counts = [0usize; 3];
        for v in &votes {
            counts[v.index()] += 1;
        }
        let mut scores = [0.0f64; 3];
        for (s, &c) in scores.iter_mut().zip(&counts) {
            *s = c as f64 / n_models;
        }
        // a tie resolved by priority can point at a non-max fraction; lift
        // the winner to the shared maximum so score consistency holds
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        scores[label.index()] = max;
        entries.push(PredictionEntry {
            id: ps.models[0].1.entries()[i].id.clone(),
            label,
            scores,
        });
    }
    PredictionVector::new(entries)
}

/// Writes predictions as a two-column TSV (`id\tlabel`, with header).
pub fn write_predictions_tsv(path: impl AsRef<Path>, preds: &PredictionVector) -> Result<()> {
    let mut out = String::from("id\tlabel\n");
    for e in preds.entries() {
        out.push_str(&format!("{}\t{}\n", e.id, e.label));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Reads a prediction TSV back into a vector; scores become one-hot on the
/// stored label.
pub fn read_predictions_tsv(path: impl AsRef<Path>) -> Result<PredictionVector> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    match lines.next() {
        Some((_, Ok(h))) => {
            let h = h.trim_end_matches('\r');
            let h = h.strip_prefix('\u{feff}').unwrap_or(h);
            if h != "id\tlabel" {
                return Err(Error::Parse {
                    path: display,
                    line: 1,
                    message: "header must be `id\\tlabel`".into(),
                });
            }
        }
        Some((_, Err(e))) => return Err(Error::io(display, e)),
        None => {
            return Err(Error::Parse {
                path: display,
                line: 1,
                message: "missing header row".into(),
            })
        }
    }

    let mut entries = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (id, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(label), None) => (id, label),
            _ => {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: i + 1,
                    message: "expected exactly two tab-separated fields".into(),
                })
            }
        };
        let label = SentimentLabel::parse(label).ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: i + 1,
            message: format!("`{label}` is not one of Negative|Neutral|Positive"),
        })?;
        let mut scores = [0.0f64; 3];
        scores[label.index()] = 1.0;
        entries.push(PredictionEntry {
            id: id.to_string(),
            label,
            scores,
        });
    }
    PredictionVector::new(entries)
}
