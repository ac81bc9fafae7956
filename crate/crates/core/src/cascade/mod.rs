//! Cascaded classification.
//!
//! A cascade predicts the relations of a report one at a time in a fixed
//! order, appending each decoded value to the text seen by the next stage,
//! and finally predicts the pathology. Training uses the true relation values
//! at every stage. At inference the appended values are either supplied
//! ([`Mode::Oracle`]) or predicted by the stage models ([`Mode::Predictive`]).

mod bundle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bundle::{load_pipeline, save_pipeline, BundleManifest, BUNDLE_FORMAT_VERSION};

use crate::classifier::{Backend, BackendSpec, ClassifierModel, Hyperparams, LabeledText, PredictionResult, SEPARATOR};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvaluationReport};
use crate::ontology::Relation;
use crate::seed;

/// Sequence of distinct relations predicted one after another.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Relation>", into = "Vec<Relation>")]
pub struct CascadeOrder(Vec<Relation>);

impl CascadeOrder {
    pub fn new(stages: Vec<Relation>) -> Result<Self> {
        if stages.is_empty() || stages.len() > Relation::ALL.len() {
            return Err(Error::validation(format!(
                "a cascade order has 1 to 3 stages, got {}",
                stages.len()
            )));
        }
        for (i, r) in stages.iter().enumerate() {
            if stages[..i].contains(r) {
                return Err(Error::validation(format!("relation {r} appears twice in the cascade order")));
            }
        }
        Ok(CascadeOrder(stages))
    }

    pub fn stages(&self) -> &[Relation] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<Relation>> for CascadeOrder {
    type Error = Error;

    fn try_from(stages: Vec<Relation>) -> Result<Self> {
        CascadeOrder::new(stages)
    }
}

impl From<CascadeOrder> for Vec<Relation> {
    fn from(order: CascadeOrder) -> Self {
        order.0
    }
}

/// Short tags joined by commas, e.g. `t,sit,gr`.
impl fmt::Display for CascadeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<&str> = self.0.iter().map(|r| r.short()).collect();
        f.write_str(&tags.join(","))
    }
}

impl FromStr for CascadeOrder {
    type Err = Error;

    /// Accepts relation names or short tags separated by `,`, `>` or `->`.
    fn from_str(s: &str) -> Result<Self> {
        let stages = s
            .replace("->", ",")
            .replace(['>', '→'], ",")
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<Relation>().map_err(Error::validation))
            .collect::<Result<Vec<_>>>()?;
        CascadeOrder::new(stages)
    }
}

/// Every non-repeating sequence of 1 to |relations| distinct relations.
/// Shorter orders come first; orders of equal length are lexicographic in
/// the canonical relation order (type, severity, site).
pub fn enumerate_orders(relations: &[Relation]) -> Result<Vec<CascadeOrder>> {
    let mut pool: Vec<Relation> = relations.to_vec();
    pool.sort();
    pool.dedup();
    if pool.is_empty() {
        return Err(Error::validation("no relations to order"));
    }
    fn extend(pool: &[Relation], prefix: &mut Vec<Relation>, len: usize, out: &mut Vec<CascadeOrder>) {
        if prefix.len() == len {
            out.push(CascadeOrder(prefix.clone()));
            return;
        }
        for &r in pool {
            if !prefix.contains(&r) {
                prefix.push(r);
                extend(pool, prefix, len, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    for len in 1..=pool.len() {
        extend(&pool, &mut Vec::new(), len, &mut out);
    }
    Ok(out)
}

/// `text ⟐ relation=value ...`, one segment per known relation, in order.
/// Spaces inside values become `_`. Separator characters in `text` are
/// replaced by spaces so the appended segments can always be recovered.
pub fn augment_input(text: &str, known: &[(Relation, &str)]) -> Result<String> {
    if known.is_empty() {
        return Ok(text.to_owned());
    }
    let mut out = text.replace(SEPARATOR, " ");
    out.push(' ');
    out.push(SEPARATOR);
    for (relation, value) in known {
        let value = value.trim();
        if value.is_empty() || value.contains(['_', '=', SEPARATOR]) || value.contains(|c: char| c.is_whitespace() && c != ' ') {
            return Err(Error::validation(format!("relation value {value:?} cannot be appended to text")));
        }
        out.push(' ');
        out.push_str(relation.as_str());
        out.push('=');
        out.push_str(&value.replace(' ', "_"));
    }
    Ok(out)
}

/// Inverse of [`augment_input`]: the (separator-free) text and the appended
/// segments. Text without a separator has no segments.
pub fn parse_augmented(augmented: &str) -> Result<(String, Vec<(Relation, String)>)> {
    let marker = format!(" {SEPARATOR}");
    let Some((text, tail)) = augmented.rsplit_once(&marker) else {
        return Ok((augmented.to_owned(), Vec::new()));
    };
    let segments = tail
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|segment| {
            let (name, value) = segment
                .split_once('=')
                .ok_or_else(|| Error::validation(format!("malformed segment {segment:?}")))?;
            let relation = name.parse::<Relation>().map_err(Error::validation)?;
            Ok((relation, value.replace('_', " ")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((text.to_owned(), segments))
}

/// What a cascade model is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Relation(Relation),
    Pathology,
}

impl Target {
    fn seed_label(self) -> String {
        match self {
            Target::Relation(r) => format!("cascade/{}", r.as_str()),
            Target::Pathology => "cascade/pathology".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Oracle,
    #[default]
    Predictive,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "oracle" | "or" => Ok(Mode::Oracle),
            "predictive" | "pr" => Ok(Mode::Predictive),
            other => Err(Error::validation(format!("mode must be oracle or predictive, not {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Oracle => "oracle",
            Mode::Predictive => "predictive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CascadePipeline {
    pub order: CascadeOrder,
    pub stage_models: Vec<ClassifierModel>,
    pub final_model: ClassifierModel,
    pub backend: BackendSpec,
}

/// Stage-by-stage output of one inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    /// Stage predictions; empty in oracle mode.
    pub stages: Vec<(Relation, PredictionResult)>,
    pub pathology: PredictionResult,
}

fn relation_value(report_relations: &BTreeMap<Relation, String>, relation: Relation, id: &str) -> Result<String> {
    report_relations
        .get(&relation)
        .cloned()
        .ok_or_else(|| Error::validation(format!("report {id:?} has no {relation} relation")))
}

/// Train a cascade with teacher forcing: stage `i` sees the text augmented
/// with the true values of stages `1..i`; the final model sees all of them.
pub fn train_cascade(train: &Corpus, order: &CascadeOrder, backend: &Backend, hp: &Hyperparams) -> Result<CascadePipeline> {
    train_cascade_observed(train, order, backend, hp, |_, _| ())
}

/// [`train_cascade`] with a hook that sees every model's training examples
/// before the model is trained.
pub fn train_cascade_observed(
    train: &Corpus,
    order: &CascadeOrder,
    backend: &Backend,
    hp: &Hyperparams,
    mut observe: impl FnMut(Target, &[LabeledText]),
) -> Result<CascadePipeline> {
    if train.is_empty() {
        return Err(Error::validation("cannot train a cascade on an empty corpus"));
    }
    let mut truths: Vec<Vec<(Relation, String)>> = Vec::with_capacity(train.len());
    for report in train.reports() {
        let values = order
            .stages()
            .iter()
            .map(|&r| relation_value(&report.relations, r, &report.id).map(|v| (r, v)))
            .collect::<Result<Vec<_>>>()?;
        truths.push(values);
    }
    let examples_for = |prefix: usize, label: &dyn Fn(usize) -> String| -> Result<Vec<LabeledText>> {
        train
            .reports()
            .iter()
            .zip(&truths)
            .enumerate()
            .map(|(i, (report, values))| {
                let known: Vec<(Relation, &str)> = values[..prefix].iter().map(|(r, v)| (*r, v.as_str())).collect();
                Ok(LabeledText::new(augment_input(&report.text, &known)?, label(i)))
            })
            .collect()
    };

    let mut stage_models = Vec::with_capacity(order.len());
    for (i, &relation) in order.stages().iter().enumerate() {
        let target = Target::Relation(relation);
        let examples = examples_for(i, &|j| truths[j][i].1.clone())?;
        observe(target, &examples);
        let vocab: Vec<String> = relation.vocabulary().into_iter().map(str::to_owned).collect();
        let model = backend
            .train_with_labels(&examples, Some(&vocab), &stage_hyperparams(hp, target))
            .map_err(|e| e.context(format!("training {relation} stage of order {order}")))?;
        stage_models.push(model);
    }
    let examples = examples_for(order.len(), &|j| train.reports()[j].pathology.clone())?;
    observe(Target::Pathology, &examples);
    let final_model = backend
        .train(&examples, &stage_hyperparams(hp, Target::Pathology))
        .map_err(|e| e.context(format!("training final model of order {order}")))?;
    Ok(CascadePipeline {
        order: order.clone(),
        stage_models,
        final_model,
        backend: backend.spec(),
    })
}

fn stage_hyperparams(hp: &Hyperparams, target: Target) -> Hyperparams {
    hp.with_seed(seed::derive(hp.seed, &target.seed_label()))
}

/// A single pathology classifier on raw text, seeded like a cascade's final
/// model so that comparisons differ only in the augmentation.
pub fn train_vanilla(train: &Corpus, backend: &Backend, hp: &Hyperparams) -> Result<ClassifierModel> {
    let examples: Vec<LabeledText> = train
        .reports()
        .iter()
        .map(|r| LabeledText::new(r.text.clone(), r.pathology.clone()))
        .collect();
    backend.train(&examples, &stage_hyperparams(hp, Target::Pathology))
}

impl CascadePipeline {
    /// Run the cascade on one text. Oracle mode needs `oracle` to hold a value
    /// for every stage relation.
    pub fn infer(&self, text: &str, mode: Mode, oracle: Option<&BTreeMap<Relation, String>>) -> Result<PredictionResult> {
        let oracle_batch = oracle.map(std::slice::from_ref);
        Ok(self.infer_batch(&[text], mode, oracle_batch)?.remove(0).pathology)
    }

    /// Run the cascade on many texts, one batched call per stage.
    pub fn infer_batch(
        &self,
        texts: &[&str],
        mode: Mode,
        oracle: Option<&[BTreeMap<Relation, String>]>,
    ) -> Result<Vec<CascadeOutput>> {
        let mut known: Vec<Vec<(Relation, String)>> = vec![Vec::new(); texts.len()];
        let mut stages: Vec<Vec<(Relation, PredictionResult)>> = vec![Vec::new(); texts.len()];
        match mode {
            Mode::Oracle => {
                let oracle = oracle.ok_or_else(|| Error::validation("oracle mode requires relation values"))?;
                if oracle.len() != texts.len() {
                    return Err(Error::validation("one oracle relation map is needed per text"));
                }
                for (values, given) in known.iter_mut().zip(oracle) {
                    for &relation in self.order.stages() {
                        let value = given.get(&relation).ok_or_else(|| {
                            Error::validation(format!("oracle mode is missing a {relation} value"))
                        })?;
                        values.push((relation, value.clone()));
                    }
                }
            }
            Mode::Predictive => {
                for (&relation, model) in self.order.stages().iter().zip(&self.stage_models) {
                    let inputs = augmented(texts, &known)?;
                    let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
                    let predictions = model.predict_batch(&refs)?;
                    for ((values, trail), p) in known.iter_mut().zip(&mut stages).zip(predictions) {
                        values.push((relation, p.top1().to_owned()));
                        trail.push((relation, p));
                    }
                }
            }
        }
        let inputs = augmented(texts, &known)?;
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let finals = self.final_model.predict_batch(&refs)?;
        Ok(stages
            .into_iter()
            .zip(finals)
            .map(|(stages, pathology)| CascadeOutput { stages, pathology })
            .collect())
    }

    /// Pathology predictions for every report of `corpus`, taking oracle
    /// values from the report annotations.
    pub fn predict_corpus(&self, corpus: &Corpus, mode: Mode) -> Result<Vec<CascadeOutput>> {
        let texts: Vec<&str> = corpus.reports().iter().map(|r| r.text.as_str()).collect();
        match mode {
            Mode::Predictive => self.infer_batch(&texts, mode, None),
            Mode::Oracle => {
                let oracle: Vec<BTreeMap<Relation, String>> =
                    corpus.reports().iter().map(|r| r.relations.clone()).collect();
                self.infer_batch(&texts, mode, Some(&oracle))
            }
        }
    }

    /// Pathology evaluation on `corpus` in the given mode.
    pub fn evaluate(&self, corpus: &Corpus, mode: Mode, options: EvalOptions) -> Result<EvaluationReport> {
        let outputs = self.predict_corpus(corpus, mode)?;
        let truths: Vec<&str> = corpus.reports().iter().map(|r| r.pathology.as_str()).collect();
        let predictions: Vec<PredictionResult> = outputs.into_iter().map(|o| o.pathology).collect();
        evaluate(&truths, &predictions, options)
    }

    /// Per-stage relation evaluation of a predictive run on `corpus`.
    pub fn evaluate_stages(&self, corpus: &Corpus, options: EvalOptions) -> Result<Vec<(Relation, EvaluationReport)>> {
        let outputs = self.predict_corpus(corpus, Mode::Predictive)?;
        self.order
            .stages()
            .iter()
            .enumerate()
            .map(|(i, &relation)| {
                let truths = corpus
                    .reports()
                    .iter()
                    .map(|r| relation_value(&r.relations, relation, &r.id))
                    .collect::<Result<Vec<_>>>()?;
                let predictions: Vec<PredictionResult> = outputs.iter().map(|o| o.stages[i].1.clone()).collect();
                Ok((relation, evaluate(&truths, &predictions, options)?))
            })
            .collect()
    }
}

fn augmented(texts: &[&str], known: &[Vec<(Relation, String)>]) -> Result<Vec<String>> {
    texts
        .iter()
        .zip(known)
        .map(|(text, values)| {
            let refs: Vec<(Relation, &str)> = values.iter().map(|(r, v)| (*r, v.as_str())).collect();
            augment_input(text, &refs)
        })
        .collect()
}

/// Metric used to pick the best order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Accuracy,
    MacroF1,
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Selection::Accuracy),
            "macro_f1" | "macro-f1" => Ok(Selection::MacroF1),
            other => Err(Error::validation(format!("selection must be accuracy or macro_f1, not {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrderSearch {
    pub best: CascadeOrder,
    pub best_pipeline: CascadePipeline,
    /// Predictive-mode validation report of every order, in input order.
    pub reports: IndexMap<CascadeOrder, EvaluationReport>,
}

/// Train one pipeline per order (in parallel), evaluate each on `validation`
/// in predictive mode and return the best. Ties go to the earliest order.
pub fn select_best_order(
    train: &Corpus,
    validation: &Corpus,
    orders: &[CascadeOrder],
    backend: &Backend,
    hp: &Hyperparams,
    selection: Selection,
    options: EvalOptions,
) -> Result<OrderSearch> {
    if orders.is_empty() {
        return Err(Error::validation("no cascade orders to compare"));
    }
    let results: Vec<(CascadePipeline, EvaluationReport)> = orders
        .par_iter()
        .map(|order| {
            let pipeline = train_cascade(train, order, backend, hp)?;
            let report = pipeline
                .evaluate(validation, Mode::Predictive, options)
                .map_err(|e| e.context(format!("evaluating order {order}")))?;
            Ok((pipeline, report))
        })
        .collect::<Result<_>>()?;
    let score = |r: &EvaluationReport| match selection {
        Selection::Accuracy => r.accuracy,
        Selection::MacroF1 => r.macro_f1,
    };
    let mut best = 0;
    for (i, (_, report)) in results.iter().enumerate() {
        if score(report) > score(&results[best].1) {
            best = i;
        }
    }
    let best_pipeline = results[best].0.clone();
    let reports = orders.iter().cloned().zip(results.into_iter().map(|(_, r)| r)).collect();
    Ok(OrderSearch {
        best: orders[best].clone(),
        best_pipeline,
        reports,
    })
}
