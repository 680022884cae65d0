//! On-disk formats: the JSON model document and the split manifest.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AggregateError, MagModel, SelectedHyperparams};
use crate::domain::{DomainError, SplitAssignment, SplitPart};
use crate::svm::{KernelSpec, SvmError, SvmModel};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_HEADER: [&str; 2] = ["patient_id", "split"];

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("unsupported model format_version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model: {0}")]
    Svm(#[from] SvmError),
    #[error("model: {0}")]
    Aggregate(#[from] AggregateError),
    #[error("model: selected_hyperparams disagree with kernel and c")]
    HyperparamMismatch,
    #[error("manifest line {line}: {reason}")]
    Manifest { line: u64, reason: String },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Domain(#[from] DomainError),
}

/// Provenance recorded alongside a trained model. No timestamps, so that
/// identical runs write identical files.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainedOn {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub patch_threshold: f64,
    pub candidates_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kernel: KernelSpec,
    pub c: f64,
    pub bias: f64,
    pub dim: usize,
    pub support_vectors: Vec<Vec<f64>>,
    pub coefs: Vec<f64>,
    pub bins: usize,
    pub selected_hyperparams: SelectedHyperparams,
    pub validation_bacc: f64,
    pub trained_on: TrainedOn,
}

impl ModelDocument {
    pub fn from_model(model: &MagModel, trained_on: TrainedOn) -> Self {
        let svm = model.svm();
        Self {
            format_version: FORMAT_VERSION,
            kernel: *svm.kernel(),
            c: svm.c(),
            bias: svm.bias(),
            dim: svm.dim(),
            support_vectors: svm.support_vectors().to_vec(),
            coefs: svm.coefs().to_vec(),
            bins: model.bin_count(),
            selected_hyperparams: model.selected_hyperparams(),
            validation_bacc: model.validation_bacc(),
            trained_on,
        }
    }

    pub fn into_model(self) -> Result<(MagModel, TrainedOn), PersistError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PersistError::UnsupportedVersion(self.format_version));
        }
        let svm = SvmModel::new(self.kernel, self.support_vectors, self.coefs, self.bias, self.c)?;
        if svm.dim() != self.dim {
            return Err(SvmError::DimensionMismatch {
                expected: self.dim,
                got: svm.dim(),
            }
            .into());
        }
        let model = MagModel::new(svm, self.bins, self.validation_bacc)?;
        if model.selected_hyperparams() != self.selected_hyperparams {
            return Err(PersistError::HyperparamMismatch);
        }
        Ok((model, self.trained_on))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PersistError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn model_to_json(model: &MagModel, trained_on: TrainedOn) -> String {
    ModelDocument::from_model(model, trained_on).to_json()
}

pub fn model_from_json(text: &str) -> Result<(MagModel, TrainedOn), PersistError> {
    ModelDocument::from_json(text)?.into_model()
}

/// `patient_id,split` rows ordered by patient id.
pub fn manifest_csv(split: &SplitAssignment) -> String {
    let mut out = MANIFEST_HEADER.join(",");
    out.push('\n');
    for (id, part) in split.entries() {
        out.push_str(id);
        out.push(',');
        out.push_str(part.as_str());
        out.push('\n');
    }
    out
}

pub fn parse_manifest<R: Read>(source: R) -> Result<SplitAssignment, PersistError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rec = csv::StringRecord::new();
    if !rdr.read_record(&mut rec)? || rec.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(PersistError::Manifest {
            line: 1,
            reason: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut parts: [BTreeSet<String>; 3] = Default::default();
    let mut seen = BTreeSet::new();
    while rdr.read_record(&mut rec)? {
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[0].is_empty() {
            return Err(PersistError::Manifest {
                line,
                reason: "expected `patient_id,split`".into(),
            });
        }
        let part: SplitPart = rec[1]
            .parse()
            .map_err(|reason| PersistError::Manifest { line, reason })?;
        if !seen.insert(rec[0].to_string()) {
            return Err(PersistError::Manifest {
                line,
                reason: format!("patient {} listed twice", &rec[0]),
            });
        }
        parts[part as usize].insert(rec[0].to_string());
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment::new(train, val, test)?)
}
