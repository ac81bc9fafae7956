//! Classification metrics, confusion matrices and the class-frequency sweep.
//!
//! Top-k F1 has no standard definition. Here it is F1 over *effective*
//! predictions: the truth when it appears among the k best-ranked labels,
//! otherwise the top-1 label. At k = 1 this is ordinary F1. Micro-F1 over
//! effective predictions equals top-k accuracy, so [`EvaluationReport::topk_f1`]
//! is the macro variant and the micro variant is reported separately.
//!
//! For single-label classification where every example gets a prediction,
//! micro-F1 equals accuracy.

mod export;
mod sweep;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use export::{confusion_csv, heatmap_image, text_table, write_heatmap_png};
pub use sweep::{sweep_csv, threshold_sweep, PipelineFactory, SweepRow};

use crate::classifier::PredictionResult;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 2;

/// Which labels macro-F1 averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroOver {
    /// Labels that occur among the truths.
    #[default]
    Truth,
    /// Labels that occur among the truths or the predictions.
    Union,
}

impl FromStr for MacroOver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(MacroOver::Truth),
            "union" => Ok(MacroOver::Union),
            other => Err(Error::validation(format!("macro-over must be truth or union, not {other:?}"))),
        }
    }
}

impl fmt::Display for MacroOver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MacroOver::Truth => "truth",
            MacroOver::Union => "union",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub macro_over: MacroOver,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: DEFAULT_K,
            macro_over: MacroOver::Truth,
        }
    }
}

impl EvalOptions {
    pub fn with_k(k: usize) -> Self {
        EvalOptions {
            k,
            ..EvalOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_examples: usize,
    pub k: usize,
    pub macro_over: MacroOver,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub topk_accuracy: f64,
    /// Macro-F1 over effective top-k predictions.
    pub topk_f1: f64,
    /// Micro-F1 over effective top-k predictions; equals `topk_accuracy`.
    pub topk_micro_f1: f64,
    /// Sorted union of true and top-1 predicted labels; indexes `confusion`.
    pub labels: Vec<String>,
    /// `confusion[i][j]` counts examples of true label `labels[i]` whose
    /// top-1 prediction is `labels[j]`.
    pub confusion: Vec<Vec<u64>>,
    /// F1 of every label in `labels`, from top-1 predictions.
    pub per_label_f1: BTreeMap<String, f64>,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl Counts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

struct F1Summary {
    micro: f64,
    macro_: f64,
    per_label: BTreeMap<String, f64>,
}

fn f1_summary(truths: &[&str], predicted: &[&str], macro_over: MacroOver) -> F1Summary {
    let mut counts: BTreeMap<&str, Counts> = BTreeMap::new();
    for (&t, &p) in truths.iter().zip(predicted) {
        if t == p {
            counts.entry(t).or_default().tp += 1;
        } else {
            counts.entry(t).or_default().fn_ += 1;
            counts.entry(p).or_default().fp += 1;
        }
    }
    let pooled = counts.values().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let per_label: BTreeMap<String, f64> = counts.iter().map(|(l, c)| (l.to_string(), c.f1())).collect();
    let averaged: Vec<f64> = counts
        .iter()
        .filter(|(_, c)| macro_over == MacroOver::Union || c.tp + c.fn_ > 0)
        .map(|(_, c)| c.f1())
        .collect();
    F1Summary {
        micro: pooled.f1(),
        macro_: averaged.iter().sum::<f64>() / averaged.len() as f64,
        per_label,
    }
}

/// Score `predictions` against `truths`.
pub fn evaluate<S: AsRef<str>>(truths: &[S], predictions: &[PredictionResult], options: EvalOptions) -> Result<EvaluationReport> {
    if truths.is_empty() {
        return Err(Error::validation("cannot evaluate an empty prediction set"));
    }
    if truths.len() != predictions.len() {
        return Err(Error::validation(format!(
            "{} truths but {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    if options.k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let truths: Vec<&str> = truths.iter().map(AsRef::as_ref).collect();
    let top1: Vec<&str> = predictions.iter().map(PredictionResult::top1).collect();
    let effective: Vec<&str> = truths
        .iter()
        .zip(predictions)
        .map(|(&t, p)| if p.top_k(options.k).contains(&t) { t } else { p.top1() })
        .collect();
    let n = truths.len() as f64;
    let correct = truths.iter().zip(&top1).filter(|(t, p)| t == p).count();
    let topk_hits = truths.iter().zip(&effective).filter(|(t, e)| t == e).count();

    let plain = f1_summary(&truths, &top1, options.macro_over);
    let topk = f1_summary(&truths, &effective, options.macro_over);

    let labels: Vec<String> = truths
        .iter()
        .chain(&top1)
        .map(|l| l.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut confusion = vec![vec![0u64; labels.len()]; labels.len()];
    for (t, p) in truths.iter().zip(&top1) {
        let i = labels.binary_search_by(|l| l.as_str().cmp(t)).expect("truth label indexed");
        let j = labels.binary_search_by(|l| l.as_str().cmp(p)).expect("predicted label indexed");
        confusion[i][j] += 1;
    }

    Ok(EvaluationReport {
        n_examples: truths.len(),
        k: options.k,
        macro_over: options.macro_over,
        accuracy: correct as f64 / n,
        micro_f1: plain.micro,
        macro_f1: plain.macro_,
        topk_accuracy: topk_hits as f64 / n,
        topk_f1: topk.macro_,
        topk_micro_f1: topk.micro,
        labels,
        confusion,
        per_label_f1: plain.per_label,
    })
}

/// The `n` largest off-diagonal confusion cells as `(true, predicted, count)`,
/// by descending count, ties by true then predicted label.
pub fn confusion_top_pairs(report: &EvaluationReport, n: usize) -> Vec<(String, String, u64)> {
    let mut cells: Vec<(String, String, u64)> = Vec::new();
    for (i, row) in report.confusion.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if i != j && count > 0 {
                cells.push((report.labels[i].clone(), report.labels[j].clone(), count));
            }
        }
    }
    cells.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)).then_with(|| a.1.cmp(&b.1)));
    cells.truncate(n);
    cells
}
