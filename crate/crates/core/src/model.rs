//! Trained gesture models and the versioned JSON model file.
//!
//! A model file is `{"version":1,"models":[...]}`. When every model uses the
//! same spherical codebook it is stored once under `"shared_codebook"` and
//! the per-model `"codebook"` entries are omitted. Numbers are written with
//! shortest round-trip precision, so a load reproduces every field exactly.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookShape};
use crate::error::{Error, Result};
use crate::error_model::GmmErrorModel;
use crate::hmm::Hmm;

pub const MODEL_FILE_VERSION: u64 = 1;
const PRIOR_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GestureModel {
    pub label: String,
    pub codebook: Arc<Codebook>,
    pub hmm: Hmm,
    pub error_model: GmmErrorModel,
    pub prior: f64,
}

impl GestureModel {
    pub fn new(
        label: impl Into<String>,
        codebook: Arc<Codebook>,
        hmm: Hmm,
        error_model: GmmErrorModel,
        prior: f64,
    ) -> Result<Self> {
        let m = GestureModel { label: label.into(), codebook, hmm, error_model, prior };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hmm.n_symbols() != self.codebook.len() {
            return Err(Error::invalid(format!(
                "`{}`: HMM has {} symbols but the codebook has {} codewords",
                self.label,
                self.hmm.n_symbols(),
                self.codebook.len()
            )));
        }
        if self.error_model.len() != self.codebook.len() {
            return Err(Error::invalid(format!("`{}`: error model does not match the codebook", self.label)));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::invalid(format!("`{}`: prior {} outside [0, 1]", self.label, self.prior)));
        }
        Ok(())
    }
}

/// Checks a model set: non-empty, unique labels, priors summing to one.
pub fn validate_model_set(models: &[GestureModel]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::invalid("model set is empty"));
    }
    for (i, m) in models.iter().enumerate() {
        m.validate()?;
        if models[..i].iter().any(|o| o.label == m.label) {
            return Err(Error::invalid(format!("duplicate gesture label `{}`", m.label)));
        }
    }
    let total: f64 = models.iter().map(|m| m.prior).sum();
    if (total - 1.0).abs() > PRIOR_TOL {
        return Err(Error::invalid(format!("priors sum to {total}, expected 1")));
    }
    Ok(())
}

/// The codebook shared by every model, if there is exactly one spherical one.
pub fn shared_codebook(models: &[GestureModel]) -> Option<Arc<Codebook>> {
    let first = &models.first()?.codebook;
    let shared = first.shape() == CodebookShape::Spherical
        && models.iter().all(|m| Arc::ptr_eq(&m.codebook, first) || *m.codebook == **first);
    shared.then(|| Arc::clone(first))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shared_codebook: Option<Codebook>,
    models: Vec<ModelEntry>,
}

#[derive(Serialize, Deserialize)]
struct ModelEntry {
    label: String,
    prior: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    codebook: Option<Codebook>,
    hmm: Hmm,
    error_model: GmmErrorModel,
}

pub fn models_to_json(models: &[GestureModel]) -> Result<String> {
    validate_model_set(models)?;
    let shared = shared_codebook(models);
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        shared_codebook: shared.as_deref().cloned(),
        models: models
            .iter()
            .map(|m| ModelEntry {
                label: m.label.clone(),
                prior: m.prior,
                codebook: if shared.is_some() { None } else { Some((*m.codebook).clone()) },
                hmm: m.hmm.clone(),
                error_model: m.error_model.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn models_from_json(text: &str) -> Result<Vec<GestureModel>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Format("missing `version`".into()))?;
    if version != MODEL_FILE_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: MODEL_FILE_VERSION });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let shared = file.shared_codebook.map(Arc::new);
    let models = file
        .models
        .into_iter()
        .map(|e| {
            let codebook = match (e.codebook, &shared) {
                (Some(c), _) => Arc::new(c),
                (None, Some(s)) => Arc::clone(s),
                (None, None) => return Err(Error::Format(format!("model `{}` has no codebook", e.label))),
            };
            GestureModel::new(e.label, codebook, e.hmm, e.error_model, e.prior)
        })
        .collect::<Result<Vec<_>>>()?;
    validate_model_set(&models)?;
    Ok(models)
}

pub fn save_models(models: &[GestureModel], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, models_to_json(models)?)?;
    Ok(())
}

pub fn load_models(path: impl AsRef<Path>) -> Result<Vec<GestureModel>> {
    models_from_json(&fs::read_to_string(path)?)
}
