//! Confusion tables per held-out subject and their pooled summary.

use std::fmt;
use std::str::FromStr;

use psl_core::{Error, Result};
use psl_models::PainLabel;
use serde::{Deserialize, Serialize};

/// Which labels take part and how they map to class indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    /// No pain against very severe pain.
    #[serde(rename = "binary", alias = "BINARY", alias = "np_vs_p4")]
    Binary,
    /// All five pain levels.
    #[serde(rename = "mc", alias = "MC", alias = "multiclass")]
    Multiclass,
}

impl Task {
    pub fn labels(self) -> &'static [PainLabel] {
        match self {
            Task::Binary => &[PainLabel::Np, PainLabel::P4],
            Task::Multiclass => &PainLabel::ALL,
        }
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }

    /// Class index of `label`, or `None` when the task ignores that label.
    pub fn class_of(self, label: PainLabel) -> Option<usize> {
        self.labels().iter().position(|&l| l == label)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Binary => "BINARY",
            Task::Multiclass => "MC",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "np_vs_p4" => Ok(Task::Binary),
            "mc" | "multiclass" => Ok(Task::Multiclass),
            _ => Err(Error::config(format!("unknown task `{s}` (expected binary or mc)"))),
        }
    }
}

/// Test-set confusion counts for one held-out subject; `confusion[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldResult {
    pub subject_id: String,
    pub task: Task,
    pub confusion: Vec<Vec<u64>>,
}

impl FoldResult {
    pub fn new(subject_id: impl Into<String>, task: Task) -> Self {
        let k = task.num_classes();
        Self {
            subject_id: subject_id.into(),
            task,
            confusion: vec![vec![0; k]; k],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.confusion[truth][predicted] += 1;
    }

    pub fn n_test(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn n_correct(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.n_correct() as f64 / self.n_test() as f64
    }

    fn validate(&self) -> Result<()> {
        let k = self.task.num_classes();
        if self.confusion.len() != k || self.confusion.iter().any(|row| row.len() != k) {
            return Err(Error::contract(format!(
                "fold `{}`: confusion table is not {k}×{k}",
                self.subject_id
            )));
        }
        if self.n_test() == 0 {
            return Err(Error::contract(format!("fold `{}` has no test samples", self.subject_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub support: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Macro recall and F1 of one confusion table, plus the classes left out because
/// they have no true samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScores>,
    pub excluded: Vec<usize>,
}

pub fn macro_scores(confusion: &[Vec<u64>]) -> MacroScores {
    let k = confusion.len();
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    let (mut recall_sum, mut f1_sum) = (0.0, 0.0);
    for c in 0..k {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let scores = ClassScores {
            support,
            recall: ratio(tp, support),
            precision: ratio(tp, predicted),
            f1: ratio(2 * tp, support + predicted),
        };
        if support == 0 {
            excluded.push(c);
        } else {
            recall_sum += scores.recall;
            f1_sum += scores.f1;
        }
        per_class.push(scores);
    }
    let n = (k - excluded.len()) as f64;
    MacroScores {
        recall: if n > 0.0 { recall_sum / n } else { 0.0 },
        f1: if n > 0.0 { f1_sum / n } else { 0.0 },
        per_class,
        excluded,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n_samples: u64,
    pub n_correct: u64,
    /// Correct over total, pooled across folds.
    pub accuracy: f64,
    /// Mean of the per-fold accuracies.
    pub accuracy_fold_mean: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
    /// Classes with no true samples in any fold; left out of the macro averages.
    pub excluded_classes: Vec<String>,
}

/// Pools the fold tables. Macro recall and F1 come from the summed confusion table.
pub fn compute_metrics(folds: &[FoldResult]) -> Result<MetricsReport> {
    let first = folds.first().ok_or_else(|| Error::contract("compute_metrics needs at least one fold"))?;
    let task = first.task;
    let k = task.num_classes();
    let mut pooled = vec![vec![0u64; k]; k];
    for fold in folds {
        if fold.task != task {
            return Err(Error::contract(format!(
                "fold `{}` is a {} fold among {} folds",
                fold.subject_id, fold.task, task
            )));
        }
        fold.validate()?;
        for (dst, src) in pooled.iter_mut().zip(&fold.confusion) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let n_samples: u64 = pooled.iter().flatten().sum();
    let n_correct: u64 = (0..k).map(|i| pooled[i][i]).sum();
    let scores = macro_scores(&pooled);
    let excluded: Vec<String> = scores.excluded.iter().map(|&c| task.labels()[c].to_string()).collect();
    if !excluded.is_empty() {
        log::warn!(
            "classes {} have no samples in any fold and are left out of macro recall/F1",
            excluded.join(", ")
        );
    }
    Ok(MetricsReport {
        task,
        n_samples,
        n_correct,
        accuracy: n_correct as f64 / n_samples as f64,
        accuracy_fold_mean: folds.iter().map(FoldResult::accuracy).sum::<f64>() / folds.len() as f64,
        recall_macro: scores.recall,
        f1_macro: scores.f1,
        confusion: pooled,
        per_class: scores.per_class,
        excluded_classes: excluded,
    })
}
