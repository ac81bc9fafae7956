//! On-disk pipeline bundles.
//!
//! A bundle directory holds `order.json`, one model file per stage,
//! `final.json` and `manifest.json`. The manifest records the SHA-256 of
//! every other file plus fingerprints of the training corpus and its label
//! set; loading refuses bundles whose files do not match.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CascadeOrder, CascadePipeline};
use crate::classifier::{Backend, BackendSpec, ClassifierModel};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::text::fingerprint;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const ORDER: &str = "order.json";
const FINAL: &str = "final.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub order: CascadeOrder,
    pub backend: BackendSpec,
    pub stage_files: Vec<String>,
    pub final_file: String,
    /// SHA-256 of every bundle file except the manifest.
    pub files: BTreeMap<String, String>,
    pub train_fingerprint: String,
    pub label_fingerprint: String,
    pub pathology_labels: Vec<String>,
}

fn stage_file(index: usize, order: &CascadeOrder) -> String {
    format!("stage_{}_{}.json", index + 1, order.stages()[index].as_str())
}

fn write(dir: &Path, name: &str, data: &str, files: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
    files.insert(name.to_owned(), fingerprint(data.as_bytes()));
    Ok(())
}

/// Write `pipeline`, trained on `train`, into `dir` (created if needed).
pub fn save_pipeline(pipeline: &CascadePipeline, train: &Corpus, dir: &Path) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    write(dir, ORDER, &serde_json::to_string(&pipeline.order)?, &mut files)?;
    let mut stage_files = Vec::new();
    for (i, model) in pipeline.stage_models.iter().enumerate() {
        let name = stage_file(i, &pipeline.order);
        write(dir, &name, &model.to_json()?, &mut files)?;
        stage_files.push(name);
    }
    write(dir, FINAL, &pipeline.final_model.to_json()?, &mut files)?;
    let manifest = BundleManifest {
        format_version: BUNDLE_FORMAT_VERSION,
        order: pipeline.order.clone(),
        backend: pipeline.backend.clone(),
        stage_files,
        final_file: FINAL.to_owned(),
        files,
        train_fingerprint: train.fingerprint(),
        label_fingerprint: train.label_fingerprint(),
        pathology_labels: pipeline.final_model.labels().to_vec(),
    };
    let path = dir.join(MANIFEST);
    let data = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, data + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &BundleManifest) -> Result<String> {
    let path = dir.join(name);
    let data = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    match manifest.files.get(name) {
        Some(expected) if *expected == fingerprint(data.as_bytes()) => Ok(data),
        Some(_) => Err(Error::validation(format!("{name} does not match the bundle manifest"))),
        None => Err(Error::validation(format!("{name} is not listed in the bundle manifest"))),
    }
}

/// Load a bundle. External models are bound to `backend`, or to a fresh
/// connection to the manifest's backend when `backend` is `None`.
pub fn load_pipeline(dir: &Path, backend: Option<&Backend>) -> Result<(CascadePipeline, BundleManifest)> {
    let path = dir.join(MANIFEST);
    let data = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&data)?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::validation(format!(
            "unsupported bundle format version {}",
            manifest.format_version
        )));
    }
    let order: CascadeOrder = serde_json::from_str(&read_checked(dir, ORDER, &manifest)?)?;
    if order != manifest.order || manifest.stage_files.len() != order.len() {
        return Err(Error::validation("order.json disagrees with the bundle manifest"));
    }
    let connected;
    let backend = match backend {
        Some(b) => b,
        None => {
            connected = Backend::connect(&manifest.backend)?;
            &connected
        }
    };
    let mut stage_models = Vec::new();
    for (name, &relation) in manifest.stage_files.iter().zip(order.stages()) {
        let model = ClassifierModel::from_json(&read_checked(dir, name, &manifest)?, backend)?;
        let got: BTreeSet<&str> = model.labels().iter().map(String::as_str).collect();
        let expected: BTreeSet<&str> = relation.vocabulary().into_iter().collect();
        if got != expected {
            return Err(Error::validation(format!("{name} does not predict the {relation} vocabulary")));
        }
        stage_models.push(model);
    }
    let final_model = ClassifierModel::from_json(&read_checked(dir, &manifest.final_file, &manifest)?, backend)?;
    if final_model.labels() != manifest.pathology_labels.as_slice() {
        return Err(Error::validation("final model labels disagree with the bundle manifest"));
    }
    let pipeline = CascadePipeline {
        order,
        stage_models,
        final_model,
        backend: manifest.backend.clone(),
    };
    Ok((pipeline, manifest))
}
