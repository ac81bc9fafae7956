use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, EvaluationReport};
use crate::classifier::PredictionResult;
use crate::corpus::{filter_by_threshold, stratified_split, Corpus, SplitSpec};
use crate::error::{Error, Result};

/// Trains a model on one corpus and predicts pathology for another.
pub trait PipelineFactory: Sync {
    fn fit_predict(&self, train: &Corpus, test: &Corpus) -> Result<Vec<PredictionResult>>;
}

impl<F> PipelineFactory for F
where
    F: Fn(&Corpus, &Corpus) -> Result<Vec<PredictionResult>> + Sync,
{
    fn fit_predict(&self, train: &Corpus, test: &Corpus) -> Result<Vec<PredictionResult>> {
        self(train, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: usize,
    /// Labels with at least `threshold` reports.
    pub n_classes: usize,
    pub n_reports: usize,
    pub report: Option<EvaluationReport>,
    /// Why no model was trained for this threshold.
    pub skipped: Option<String>,
}

/// For every threshold: keep labels with at least that many reports, split,
/// train through `factory` and evaluate on the held-out part. Thresholds
/// that leave fewer than two classes produce a skipped row. Rows are computed
/// in parallel and returned in threshold order.
pub fn threshold_sweep(
    corpus: &Corpus,
    thresholds: &[usize],
    factory: &dyn PipelineFactory,
    split: &SplitSpec,
    options: EvalOptions,
) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        return Err(Error::validation("threshold list is empty"));
    }
    if thresholds.contains(&0) {
        return Err(Error::validation("thresholds must be at least 1"));
    }
    if split.fractions.len() != 2 {
        return Err(Error::validation("sweep split needs exactly two fractions (train, test)"));
    }
    split.validate()?;
    thresholds
        .par_iter()
        .map(|&t| sweep_row(corpus, t, factory, split, options).map_err(|e| e.context(format!("threshold {t}"))))
        .collect()
}

fn sweep_row(
    corpus: &Corpus,
    threshold: usize,
    factory: &dyn PipelineFactory,
    split: &SplitSpec,
    options: EvalOptions,
) -> Result<SweepRow> {
    let n_classes = corpus.label_counts().values().filter(|&&c| c >= threshold).count();
    if n_classes < 2 {
        let n_reports = corpus
            .label_counts()
            .values()
            .filter(|&&c| c >= threshold)
            .sum();
        return Ok(SweepRow {
            threshold,
            n_classes,
            n_reports,
            report: None,
            skipped: Some(format!("{n_classes} classes have at least {threshold} reports; need 2")),
        });
    }
    let kept = filter_by_threshold(corpus, threshold)?;
    let parts = stratified_split(&kept, split)?;
    let (train, test) = (&parts[0], &parts[1]);
    if test.is_empty() {
        return Ok(SweepRow {
            threshold,
            n_classes,
            n_reports: kept.len(),
            report: None,
            skipped: Some("test split is empty".to_owned()),
        });
    }
    let predictions = factory.fit_predict(train, test)?;
    let truths: Vec<&str> = test.reports().iter().map(|r| r.pathology.as_str()).collect();
    let report = evaluate(&truths, &predictions, options)?;
    Ok(SweepRow {
        threshold,
        n_classes,
        n_reports: kept.len(),
        report: Some(report),
        skipped: None,
    })
}

/// One line per row; metric columns are empty for skipped rows.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "threshold",
        "n_classes",
        "n_reports",
        "status",
        "accuracy",
        "micro_f1",
        "macro_f1",
        "topk_accuracy",
        "topk_f1",
    ])?;
    for row in rows {
        let mut record = vec![row.threshold.to_string(), row.n_classes.to_string(), row.n_reports.to_string()];
        match (&row.report, &row.skipped) {
            (Some(r), _) => {
                record.push("ok".to_owned());
                for m in [r.accuracy, r.micro_f1, r.macro_f1, r.topk_accuracy, r.topk_f1] {
                    record.push(m.to_string());
                }
            }
            (None, reason) => {
                record.push(format!("skipped: {}", reason.as_deref().unwrap_or("")));
                record.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
