//! Multiclass text classification.
//!
//! The builtin backend is TF-IDF features feeding multinomial logistic
//! regression. External backends speak the line-delimited JSON protocol in
//! [`protocol`]; both are used through [`Backend`] and [`ClassifierModel`].

mod logreg;
pub mod protocol;
mod tfidf;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use logreg::{softmax_in_place, LogisticRegression, LossGradient};
pub use protocol::{Endpoint, ExternalClient};
pub use tfidf::{featurize, fit_vocabulary, SparseVec, Vocabulary};
pub use tokenize::{tokenize, SEPARATOR};

use crate::error::{Error, Result};

/// Version tag written into every serialized model.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the `l2 / 2 * ||W||^2` penalty.
    pub l2: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch_size: 64,
            learning_rate: 0.001,
            epochs: 10,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::validation("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be a positive finite number"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::validation("l2 must be a non-negative finite number"));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Hyperparams { seed, ..self }
    }
}

/// A probability distribution over labels, stored in ranking order: by
/// descending probability, ties broken by lexicographic label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    ranked: Vec<(String, f64)>,
}

impl PredictionResult {
    pub fn new(labels: &[String], probabilities: &[f64]) -> Result<Self> {
        if labels.is_empty() || labels.len() != probabilities.len() {
            return Err(Error::validation(format!(
                "{} labels but {} probabilities",
                labels.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation("probabilities must be finite and non-negative"));
        }
        let mut ranked: Vec<(String, f64)> = labels.iter().cloned().zip(probabilities.iter().copied()).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(PredictionResult { ranked })
    }

    pub fn top1(&self) -> &str {
        &self.ranked[0].0
    }

    /// The first `min(k, n)` labels of the ranking.
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        self.ranked.iter().take(k).map(|(l, _)| l.as_str()).collect()
    }

    pub fn ranked(&self) -> &[(String, f64)] {
        &self.ranked
    }

    pub fn probability(&self, label: &str) -> Option<f64> {
        self.ranked.iter().find(|(l, _)| l == label).map(|(_, p)| *p)
    }

    pub fn distribution(&self) -> BTreeMap<&str, f64> {
        self.ranked.iter().map(|(l, p)| (l.as_str(), *p)).collect()
    }

    /// Probability mass for the model's labels, in the order given.
    pub fn probabilities_for(&self, labels: &[String]) -> Vec<f64> {
        labels.iter().map(|l| self.probability(l).unwrap_or(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

impl LabeledText {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledText {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Serializable description of where models are trained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    #[default]
    Builtin,
    External {
        endpoint: Endpoint,
    },
}

/// A live backend. External backends share one protocol connection.
#[derive(Debug, Clone)]
pub enum Backend {
    Builtin,
    External(Arc<ExternalClient>),
}

impl Backend {
    pub fn connect(spec: &BackendSpec) -> Result<Self> {
        match spec {
            BackendSpec::Builtin => Ok(Backend::Builtin),
            BackendSpec::External { endpoint } => Ok(Backend::External(Arc::new(ExternalClient::connect(endpoint)?))),
        }
    }

    pub fn spec(&self) -> BackendSpec {
        match self {
            Backend::Builtin => BackendSpec::Builtin,
            Backend::External(client) => BackendSpec::External {
                endpoint: client.endpoint().clone(),
            },
        }
    }

    pub fn train(&self, examples: &[LabeledText], hp: &Hyperparams) -> Result<ClassifierModel> {
        self.train_with_labels(examples, None, hp)
    }

    /// Train over an explicit label set, which must include every example
    /// label. Labels without examples receive (near) zero probability.
    pub fn train_with_labels(
        &self,
        examples: &[LabeledText],
        labels: Option<&[String]>,
        hp: &Hyperparams,
    ) -> Result<ClassifierModel> {
        hp.validate()?;
        if examples.is_empty() {
            return Err(Error::validation("cannot train on an empty example set"));
        }
        let labels = resolve_labels(examples, labels)?;
        match self {
            Backend::Builtin => BuiltinModel::fit(examples, labels, hp, |_, _| ()).map(ClassifierModel::Builtin),
            Backend::External(client) => {
                let (model_id, trained) = client.train(examples, hp)?;
                if let Some(extra) = trained.iter().find(|l| !labels.contains(l)) {
                    return Err(Error::backend(format!("backend reported unexpected label {extra:?}")));
                }
                Ok(ClassifierModel::External(ExternalModel {
                    client: Arc::clone(client),
                    model_id,
                    labels,
                }))
            }
        }
    }
}

/// The model label set: `requested` if given (checked for duplicates and
/// coverage), else the sorted distinct example labels.
fn resolve_labels(examples: &[LabeledText], requested: Option<&[String]>) -> Result<Vec<String>> {
    let seen: BTreeSet<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    let Some(requested) = requested else {
        return Ok(seen.into_iter().map(str::to_owned).collect());
    };
    let distinct: BTreeSet<&str> = requested.iter().map(String::as_str).collect();
    if distinct.len() != requested.len() {
        return Err(Error::validation("label set contains duplicates"));
    }
    if let Some(missing) = seen.iter().find(|l| !distinct.contains(*l)) {
        return Err(Error::validation(format!("example label {missing:?} is not in the label set")));
    }
    Ok(requested.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModel {
    pub labels: Vec<String>,
    pub vocabulary: Vocabulary,
    pub regression: LogisticRegression,
    pub hyperparams: Hyperparams,
}

impl BuiltinModel {
    pub fn train(examples: &[LabeledText], hp: &Hyperparams) -> Result<Self> {
        let labels = resolve_labels(examples, None)?;
        Self::fit(examples, labels, hp, |_, _| ())
    }

    /// Train over `labels`, calling `on_epoch` after every epoch.
    pub fn fit(
        examples: &[LabeledText],
        labels: Vec<String>,
        hp: &Hyperparams,
        on_epoch: impl FnMut(usize, &LogisticRegression),
    ) -> Result<Self> {
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        let vocabulary = fit_vocabulary(&texts)?;
        let xs: Vec<SparseVec> = texts.iter().map(|t| featurize(&vocabulary, t)).collect();
        let ys: Vec<usize> = examples
            .iter()
            .map(|e| {
                index
                    .get(e.label.as_str())
                    .copied()
                    .ok_or_else(|| Error::validation(format!("example label {:?} is not in the label set", e.label)))
            })
            .collect::<Result<_>>()?;
        let regression = LogisticRegression::fit(&xs, &ys, labels.len(), vocabulary.len(), hp, on_epoch)?;
        Ok(BuiltinModel {
            labels,
            vocabulary,
            regression,
            hyperparams: *hp,
        })
    }

    pub fn predict(&self, text: &str) -> PredictionResult {
        let p = self.regression.predict_proba(&featurize(&self.vocabulary, text));
        PredictionResult::new(&self.labels, &p).expect("softmax output is a valid distribution")
    }

    fn check(&self) -> Result<()> {
        self.vocabulary.check()?;
        self.regression.check()?;
        if self.labels.is_empty() || self.labels.iter().collect::<BTreeSet<_>>().len() != self.labels.len() {
            return Err(Error::validation("model label set is empty or has duplicates"));
        }
        if self.labels.len() != self.regression.n_classes || self.vocabulary.len() != self.regression.n_features {
            return Err(Error::validation("model labels or vocabulary do not match parameter shapes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExternalModel {
    client: Arc<ExternalClient>,
    pub model_id: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum ClassifierModel {
    Builtin(BuiltinModel),
    External(ExternalModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
enum ModelFile {
    Builtin {
        format_version: u32,
        #[serde(flatten)]
        model: BuiltinModel,
    },
    External {
        format_version: u32,
        endpoint: Endpoint,
        model_id: String,
        labels: Vec<String>,
    },
}

impl ClassifierModel {
    pub fn labels(&self) -> &[String] {
        match self {
            ClassifierModel::Builtin(m) => &m.labels,
            ClassifierModel::External(m) => &m.labels,
        }
    }

    pub fn predict(&self, text: &str) -> Result<PredictionResult> {
        Ok(self.predict_batch(&[text])?.remove(0))
    }

    pub fn predict_batch(&self, texts: &[&str]) -> Result<Vec<PredictionResult>> {
        match self {
            ClassifierModel::Builtin(m) => Ok(texts.par_iter().map(|t| m.predict(t)).collect()),
            ClassifierModel::External(m) => {
                let probs = m.client.predict(&m.model_id, texts, &m.labels)?;
                probs.iter().map(|p| PredictionResult::new(&m.labels, p)).collect()
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            ClassifierModel::Builtin(m) => ModelFile::Builtin {
                format_version: MODEL_FORMAT_VERSION,
                model: m.clone(),
            },
            ClassifierModel::External(m) => ModelFile::External {
                format_version: MODEL_FORMAT_VERSION,
                endpoint: m.client.endpoint().clone(),
                model_id: m.model_id.clone(),
                labels: m.labels.clone(),
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parse a serialized model. External models are rebound to `backend`,
    /// which must talk to the endpoint the model was trained on.
    pub fn from_json(data: &str, backend: &Backend) -> Result<Self> {
        match serde_json::from_str::<ModelFile>(data)? {
            ModelFile::Builtin { format_version, model } => {
                check_version(format_version)?;
                model.check()?;
                Ok(ClassifierModel::Builtin(model))
            }
            ModelFile::External {
                format_version,
                endpoint,
                model_id,
                labels,
            } => {
                check_version(format_version)?;
                match backend {
                    Backend::External(client) if *client.endpoint() == endpoint => {
                        Ok(ClassifierModel::External(ExternalModel {
                            client: Arc::clone(client),
                            model_id,
                            labels,
                        }))
                    }
                    _ => Err(Error::validation(format!(
                        "model {model_id:?} belongs to external endpoint {endpoint}, which is not connected"
                    ))),
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, backend: &Backend) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&data, backend)
    }
}

fn check_version(version: u32) -> Result<()> {
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported model format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    Ok(())
}
