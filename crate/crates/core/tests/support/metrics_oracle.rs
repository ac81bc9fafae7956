//! Brute-force reference for the evaluation metrics. Deliberately naive:
//! per-label scans, precision/recall F1, argmax-by-selection top-k.

use std::collections::BTreeSet;

use dermcascade::classifier::PredictionResult;
use dermcascade::eval::{EvaluationReport, MacroOver};
use rand::Rng;

pub type Distribution = Vec<(String, f64)>;

pub struct Expected {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub topk_accuracy: f64,
    pub topk_f1: f64,
    pub topk_micro_f1: f64,
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_label_f1: Vec<(String, f64)>,
}

/// Random instance: up to `max_examples` examples over up to `max_labels`
/// labels. Probabilities are coarse so ties are common.
pub fn random_instance(rng: &mut impl Rng, max_examples: usize, max_labels: usize) -> (Vec<String>, Vec<Distribution>) {
    let n_labels = rng.random_range(1..=max_labels);
    let n = rng.random_range(1..=max_examples);
    let names: Vec<String> = (0..n_labels).map(|i| format!("label_{i:02}")).collect();
    let mut truths = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for _ in 0..n {
        truths.push(names[rng.random_range(0..n_labels)].clone());
        let mut dist: Distribution = Vec::new();
        for name in &names {
            if rng.random_bool(0.7) {
                dist.push((name.clone(), rng.random_range(0..6) as f64));
            }
        }
        if dist.is_empty() {
            dist.push((names[rng.random_range(0..n_labels)].clone(), 1.0));
        }
        let total: f64 = dist.iter().map(|(_, w)| w).sum();
        if total == 0.0 {
            let share = 1.0 / dist.len() as f64;
            dist.iter_mut().for_each(|(_, w)| *w = share);
        } else {
            dist.iter_mut().for_each(|(_, w)| *w /= total);
        }
        dists.push(dist);
    }
    (truths, dists)
}

pub fn to_prediction(dist: &Distribution) -> PredictionResult {
    let labels: Vec<String> = dist.iter().map(|(l, _)| l.clone()).collect();
    let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
    PredictionResult::new(&labels, &probs).unwrap()
}

/// Highest probability first, ties to the smaller label, by repeated
/// selection.
pub fn top_k(dist: &Distribution, k: usize) -> Vec<String> {
    let mut remaining = dist.clone();
    let mut out = Vec::new();
    while out.len() < k && !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            let (l, p) = &remaining[i];
            let (bl, bp) = &remaining[best];
            if p > bp || (p == bp && l < bl) {
                best = i;
            }
        }
        out.push(remaining.remove(best).0);
    }
    out
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

struct Scores {
    micro: f64,
    macro_: f64,
    per_label: Vec<(String, f64)>,
}

fn scores(truths: &[String], predicted: &[String], macro_over: MacroOver) -> Scores {
    let labels: BTreeSet<&String> = truths.iter().chain(predicted).collect();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut per_label = Vec::new();
    let mut averaged = Vec::new();
    for label in labels {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for i in 0..truths.len() {
            let t = &truths[i] == label;
            let p = &predicted[i] == label;
            match (t, p) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let score = f1(tp, fp, fn_);
        per_label.push((label.clone(), score));
        if macro_over == MacroOver::Union || truths.contains(label) {
            averaged.push(score);
        }
    }
    Scores {
        micro: f1(tp_all, fp_all, fn_all),
        macro_: averaged.iter().sum::<f64>() / averaged.len() as f64,
        per_label,
    }
}

pub fn brute_force(truths: &[String], dists: &[Distribution], k: usize, macro_over: MacroOver) -> Expected {
    let n = truths.len() as f64;
    let top1: Vec<String> = dists.iter().map(|d| top_k(d, 1).remove(0)).collect();
    let effective: Vec<String> = truths
        .iter()
        .zip(dists)
        .map(|(t, d)| if top_k(d, k).contains(t) { t.clone() } else { top_k(d, 1).remove(0) })
        .collect();
    let plain = scores(truths, &top1, macro_over);
    let topk = scores(truths, &effective, macro_over);
    let labels: Vec<String> = truths.iter().chain(&top1).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let confusion = labels
        .iter()
        .map(|row| {
            labels
                .iter()
                .map(|col| (0..truths.len()).filter(|&i| &truths[i] == row && &top1[i] == col).count() as u64)
                .collect()
        })
        .collect();
    Expected {
        accuracy: (0..truths.len()).filter(|&i| truths[i] == top1[i]).count() as f64 / n,
        micro_f1: plain.micro,
        macro_f1: plain.macro_,
        topk_accuracy: (0..truths.len()).filter(|&i| top_k(&dists[i], k).contains(&truths[i])).count() as f64 / n,
        topk_f1: topk.macro_,
        topk_micro_f1: topk.micro,
        labels,
        confusion,
        per_label_f1: plain.per_label,
    }
}

/// Every mismatch between `report` and `expected` beyond `tol`.
pub fn mismatches(report: &EvaluationReport, expected: &Expected, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let mut close = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > tol {
            out.push(format!("{name}: got {got}, expected {want}"));
        }
    };
    close("accuracy", report.accuracy, expected.accuracy);
    close("micro_f1", report.micro_f1, expected.micro_f1);
    close("macro_f1", report.macro_f1, expected.macro_f1);
    close("topk_accuracy", report.topk_accuracy, expected.topk_accuracy);
    close("topk_f1", report.topk_f1, expected.topk_f1);
    close("topk_micro_f1", report.topk_micro_f1, expected.topk_micro_f1);
    let per_label: Vec<(String, f64)> = report.per_label_f1.iter().map(|(l, f)| (l.clone(), *f)).collect();
    if per_label.len() != expected.per_label_f1.len() {
        out.push(format!("per-label F1 covers {} labels, expected {}", per_label.len(), expected.per_label_f1.len()));
    } else {
        for ((gl, gf), (el, ef)) in per_label.iter().zip(&expected.per_label_f1) {
            if gl != el || (gf - ef).abs() > tol {
                out.push(format!("per-label F1 {gl}={gf}, expected {el}={ef}"));
            }
        }
    }
    if report.labels != expected.labels {
        out.push("confusion labels differ".to_owned());
    }
    if report.confusion != expected.confusion {
        out.push("confusion matrix differs".to_owned());
    }
    out
}
