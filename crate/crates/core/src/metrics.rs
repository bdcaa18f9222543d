//! Evaluation: confusion matrices, micro-averaged F1, per-class recall,
//! seed-sweep aggregation, and report rendering.
//!
//! For single-label multi-class prediction, micro-averaged F1 equals plain
//! accuracy (every false positive is simultaneously a false negative), so
//! `micro_f1` is computed as the trace of the confusion matrix over its
//! total. Reports round to four decimal places with banker's rounding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};

/// 3x3 confusion matrix; rows are gold labels, columns predictions, both in
/// Negative/Neutral/Positive axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3(pub [[u64; 3]; 3]);

impl ConfusionMatrix3 {
    pub fn zero() -> ConfusionMatrix3 {
        ConfusionMatrix3([[0; 3]; 3])
    }

    /// Tallies aligned gold/predicted label pairs.
    pub fn from_labels(pairs: &[(SentimentLabel, SentimentLabel)]) -> ConfusionMatrix3 {
        let mut m = ConfusionMatrix3::zero();
        for &(gold, pred) in pairs {
            m.0[gold.index()][pred.index()] += 1;
        }
        m
    }

    pub fn add(&mut self, gold: SentimentLabel, pred: SentimentLabel) {
        self.0[gold.index()][pred.index()] += 1;
    }

    /// Total number of counted examples.
    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// Sum of the diagonal: correctly predicted examples.
    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.0[i][i]).sum()
    }

    /// Micro-averaged F1 = trace / total. Errors on an empty matrix.
    pub fn micro_f1(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Recall per class in axis order; `None` where the class has no gold
    /// examples.
    pub fn per_class_recall(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for (i, row) in self.0.iter().enumerate() {
            let support: u64 = row.iter().sum();
            if support > 0 {
                out[i] = Some(row[i] as f64 / support as f64);
            }
        }
        out
    }

    /// Renders the matrix as a markdown table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| gold \\ pred | Negative | Neutral | Positive |\n");
        s.push_str("|---|---|---|---|\n");
        for (i, row) in self.0.iter().enumerate() {
            let label = SentimentLabel::from_index(i).unwrap();
            s.push_str(&format!("| {} | {} | {} | {} |\n", label, row[0], row[1], row[2]));
        }
        s
    }
}

/// Rounds to `dp` decimal places with round-half-to-even tie breaking.
pub fn round_dp_half_even(x: f64, dp: u32) -> f64 {
    let scale = 10f64.powi(dp as i32);
    (x * scale).round_ties_even() / scale
}

/// Per-class recall block of a metrics report; `None` serializes as null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClassRecall {
    pub negative: Option<f64>,
    pub neutral: Option<f64>,
    pub positive: Option<f64>,
}

/// The on-disk evaluation summary (`metrics.json`). Scores are rounded to
/// four decimal places; the confusion matrix stays exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub micro_f1: f64,
    pub per_class_recall: PerClassRecall,
    pub confusion: [[u64; 3]; 3],
    /// Number of evaluated examples.
    pub n: u64,
}

impl MetricsReport {
    /// Builds the rounded report from an exact confusion matrix.
    pub fn from_confusion(m: &ConfusionMatrix3) -> Result<MetricsReport> {
        let micro = m.micro_f1()?;
        let recalls = m.per_class_recall();
        let round = |v: Option<f64>| v.map(|x| round_dp_half_even(x, 4));
        Ok(MetricsReport {
            micro_f1: round_dp_half_even(micro, 4),
            per_class_recall: PerClassRecall {
                negative: round(recalls[0]),
                neutral: round(recalls[1]),
                positive: round(recalls[2]),
            },
            confusion: m.0,
            n: m.total(),
        })
    }

    /// Serializes as pretty JSON with a trailing newline — the exact bytes
    /// written to `metrics.json`.
    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One seed's score in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub micro_f1: f64,
}

/// Scores of a model trained under several seeds, plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSweepResult {
    pub entries: Vec<SweepEntry>,
    /// Unrounded arithmetic mean of the entry scores.
    pub mean: f64,
}

impl SeedSweepResult {
    pub fn new(entries: Vec<SweepEntry>) -> Result<SeedSweepResult> {
        if entries.is_empty() {
            return Err(Error::config("seed sweep needs at least one entry"));
        }
        let mean = entries.iter().map(|e| e.micro_f1).sum::<f64>() / entries.len() as f64;
        Ok(SeedSweepResult { entries, mean })
    }

    /// Mean rounded to four decimal places, as displayed in tables.
    pub fn mean_rounded(&self) -> f64 {
        round_dp_half_even(self.mean, 4)
    }

    /// Renders `| seed | micro-F1 |` rows plus an average row.
    pub fn to_markdown(&self, model_name: &str) -> String {
        let mut s = format!("| {model_name} seed | micro-F1 |\n|---|---|\n");
        for e in &self.entries {
            s.push_str(&format!("| {} | {:.4} |\n", e.seed, round_dp_half_even(e.micro_f1, 4)));
        }
        s.push_str(&format!("| **avg** | **{:.4}** |\n", self.mean_rounded()));
        s
    }
}

/// Renders a results overview: one row per named score, three decimals.
pub fn results_table_markdown(rows: &BTreeMap<String, f64>) -> String {
    let mut s = String::from("| model | micro-F1 |\n|---|---|\n");
    for (name, score) in rows {
        s.push_str(&format!("| {name} | {:.3} |\n", round_dp_half_even(*score, 3)));
    }
    s
}
