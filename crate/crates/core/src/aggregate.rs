//! Patient-level aggregation: counting and averaging baselines, and MAg
//! (histogram features classified by an SVM) with its grid search.

use std::cmp::Ordering;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ClassLabel, PatientRecord};
use crate::eval;
use crate::features::{self, FeatureError};
use crate::svm::{self, KernelKind, KernelSpec, SmoParams, SvmError, SvmModel};

pub const DEFAULT_PATCH_THRESHOLD: f64 = 0.5;
pub const DEFAULT_PATIENT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("no probabilities to aggregate")]
    EmptyInput,
    #[error("training set contains a single class")]
    SingleClass,
    #[error("training set is empty")]
    EmptyTraining,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("patient {0} is unlabeled")]
    UnlabeledRecord(String),
    #[error("every grid candidate failed to train")]
    AllCandidatesFailed,
    #[error("model expects {expected} bins, got {got}")]
    BinMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Fraction of patches with probability at or above `patch_threshold`.
pub fn counting_score(probs: &[f64], patch_threshold: f64) -> Result<f64, AggregateError> {
    if probs.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let hits = probs.iter().filter(|&&p| p >= patch_threshold).count();
    Ok(hits as f64 / probs.len() as f64)
}

/// Mean patch probability.
pub fn averaging_score(probs: &[f64]) -> Result<f64, AggregateError> {
    if probs.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

pub fn threshold_decide(score: f64, patient_threshold: f64) -> ClassLabel {
    if score >= patient_threshold {
        ClassLabel::MsiMut
    } else {
        ClassLabel::Mss
    }
}

/// Hyperparameter grid. Linear candidates ignore `gamma_values`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    c_values: Vec<f64>,
    gamma_values: Vec<f64>,
    kernels: Vec<KernelKind>,
}

impl HyperGrid {
    pub fn new(
        c_values: Vec<f64>,
        gamma_values: Vec<f64>,
        mut kernels: Vec<KernelKind>,
    ) -> Result<Self, AggregateError> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&c_values) {
            return Err(AggregateError::InvalidGrid("C values must be non-empty and positive".into()));
        }
        if !positive(&gamma_values) {
            return Err(AggregateError::InvalidGrid(
                "gamma values must be non-empty and positive".into(),
            ));
        }
        kernels.sort_unstable();
        kernels.dedup();
        if kernels.is_empty() {
            return Err(AggregateError::InvalidGrid("no kernels".into()));
        }
        Ok(Self {
            c_values,
            gamma_values,
            kernels,
        })
    }

    pub fn c_values(&self) -> &[f64] {
        &self.c_values
    }

    pub fn gamma_values(&self) -> &[f64] {
        &self.gamma_values
    }

    pub fn kernels(&self) -> &[KernelKind] {
        &self.kernels
    }

    /// Candidates in a fixed order: kernels (linear first), then C, then gamma.
    pub fn candidates(&self) -> Vec<(f64, KernelSpec)> {
        let mut out = Vec::new();
        for kind in &self.kernels {
            for &c in &self.c_values {
                match kind {
                    KernelKind::Linear => out.push((c, KernelSpec::Linear)),
                    KernelKind::Rbf => {
                        out.extend(self.gamma_values.iter().map(|&g| (c, KernelSpec::Rbf { gamma: g })))
                    }
                }
            }
        }
        out
    }
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            gamma_values: vec![0.1, 1.0, 10.0],
            kernels: vec![KernelKind::Linear, KernelKind::Rbf],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedHyperparams {
    pub kernel: KernelKind,
    pub c: f64,
    pub gamma: Option<f64>,
}

/// Trained MAg classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MagModel {
    svm: SvmModel,
    bin_count: usize,
    validation_bacc: f64,
}

impl MagModel {
    pub fn new(svm: SvmModel, bin_count: usize, validation_bacc: f64) -> Result<Self, AggregateError> {
        if svm.dim() != bin_count {
            return Err(AggregateError::BinMismatch {
                expected: bin_count,
                got: svm.dim(),
            });
        }
        if !(0.0..=1.0).contains(&validation_bacc) {
            return Err(AggregateError::InvalidGrid(format!(
                "validation BACC {validation_bacc} outside [0, 1]"
            )));
        }
        Ok(Self {
            svm,
            bin_count,
            validation_bacc,
        })
    }

    pub fn svm(&self) -> &SvmModel {
        &self.svm
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn validation_bacc(&self) -> f64 {
        self.validation_bacc
    }

    pub fn selected_hyperparams(&self) -> SelectedHyperparams {
        let k = self.svm.kernel();
        SelectedHyperparams {
            kernel: k.kind(),
            c: self.svm.c(),
            gamma: k.gamma(),
        }
    }
}

/// Validation score of one grid candidate.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub c: f64,
    pub kernel: KernelSpec,
    pub bacc: f64,
    pub f1: f64,
}

impl CandidateScore {
    /// Higher BACC, then higher F1, then smaller C, then smaller gamma
    /// (linear counts as gamma 0), then linear before rbf.
    fn rank(&self, other: &Self) -> Ordering {
        let gamma = |k: &KernelSpec| k.gamma().unwrap_or(0.0);
        other
            .bacc
            .total_cmp(&self.bacc)
            .then(other.f1.total_cmp(&self.f1))
            .then(self.c.total_cmp(&other.c))
            .then(gamma(&self.kernel).total_cmp(&gamma(&other.kernel)))
            .then(self.kernel.kind().cmp(&other.kernel.kind()))
    }
}

fn labeled(records: &[PatientRecord]) -> Result<Vec<ClassLabel>, AggregateError> {
    records
        .iter()
        .map(|r| {
            r.label()
                .ok_or_else(|| AggregateError::UnlabeledRecord(r.patient_id().to_string()))
        })
        .collect()
}

fn feature_matrix(records: &[PatientRecord], bin_count: usize) -> Result<Vec<Vec<f64>>, AggregateError> {
    records
        .iter()
        .map(|r| Ok(features::featurize(r, bin_count)?.bins().to_vec()))
        .collect()
}

fn label_for(decision: f64) -> ClassLabel {
    if decision >= 0.0 {
        ClassLabel::MsiMut
    } else {
        ClassLabel::Mss
    }
}

/// Balanced accuracy over the truth classes actually present, so a
/// one-class validation set still yields a usable score.
fn validation_bacc(preds: &[ClassLabel], truths: &[ClassLabel]) -> f64 {
    let cm = eval::confusion(preds, truths).expect("non-empty, equal-length validation vectors");
    let mut recalls = Vec::with_capacity(2);
    if cm.positives() > 0 {
        recalls.push(cm.tp as f64 / cm.positives() as f64);
    }
    if cm.negatives() > 0 {
        recalls.push(cm.tn as f64 / cm.negatives() as f64);
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

/// Fits one SVM per grid candidate and returns the best on validation.
pub fn mag_train(
    train: &[PatientRecord],
    val: &[PatientRecord],
    grid: &HyperGrid,
    bin_count: usize,
    seed: u64,
) -> Result<MagModel, AggregateError> {
    grid_search(train, val, grid, bin_count, seed).map(|(m, _)| m)
}

/// Like `mag_train`, also returning the validation score of every candidate
/// that converged.
///
/// Candidates are trained in parallel; the winner is chosen by
/// `CandidateScore::rank`, which does not depend on completion order. The
/// seed is recorded for provenance; the solver itself draws no random
/// numbers.
pub fn grid_search(
    train: &[PatientRecord],
    val: &[PatientRecord],
    grid: &HyperGrid,
    bin_count: usize,
    _seed: u64,
) -> Result<(MagModel, Vec<CandidateScore>), AggregateError> {
    if train.is_empty() {
        return Err(AggregateError::EmptyTraining);
    }
    if val.is_empty() {
        return Err(AggregateError::EmptyValidation);
    }
    let train_labels = labeled(train)?;
    let val_labels = labeled(val)?;
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        return Err(AggregateError::SingleClass);
    }
    let x_train = feature_matrix(train, bin_count)?;
    let x_val = feature_matrix(val, bin_count)?;
    let y_train: Vec<f64> = train_labels.iter().map(|l| l.sign()).collect();

    let outcomes: Vec<Result<(SvmModel, CandidateScore), SvmError>> = grid
        .candidates()
        .into_par_iter()
        .map(|(c, kernel)| {
            let model = svm::smo_train(&x_train, &y_train, &SmoParams::new(c, kernel))?;
            let preds = x_val
                .iter()
                .map(|x| model.decision(x).map(label_for))
                .collect::<Result<Vec<_>, _>>()?;
            let cm = eval::confusion(&preds, &val_labels).expect("validation set is non-empty");
            let score = CandidateScore {
                c,
                kernel,
                bacc: validation_bacc(&preds, &val_labels),
                f1: eval::f1(&cm).value,
            };
            Ok((model, score))
        })
        .collect();

    let mut fitted = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(pair) => fitted.push(pair),
            Err(SvmError::NonConvergence { iterations, gap, best }) => warn!(
                "skipping C={} kernel={:?}: no convergence after {iterations} iterations (gap {gap:.3e})",
                best.c(),
                best.kernel()
            ),
            Err(e) => return Err(e.into()),
        }
    }
    let scores: Vec<CandidateScore> = fitted.iter().map(|(_, s)| s.clone()).collect();
    let (model, best) = fitted
        .into_iter()
        .min_by(|a, b| a.1.rank(&b.1))
        .ok_or(AggregateError::AllCandidatesFailed)?;
    Ok((MagModel::new(model, bin_count, best.bacc)?, scores))
}

/// Label and raw SVM decision value for one patient; ties go to MSIMUT.
pub fn mag_predict(model: &MagModel, record: &PatientRecord) -> Result<(ClassLabel, f64), AggregateError> {
    mag_predict_probs(model, record.probs())
}

pub fn mag_predict_probs(model: &MagModel, probs: &[f64]) -> Result<(ClassLabel, f64), AggregateError> {
    let f = features::featurize_probs(probs, model.bin_count).map_err(|e| match e {
        FeatureError::EmptyInput => AggregateError::EmptyInput,
        other => other.into(),
    })?;
    let d = model.svm.decision(f.bins())?;
    Ok((label_for(d), d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: ClassLabel, probs: Vec<f64>) -> PatientRecord {
        PatientRecord::new(id, Some(label), probs).unwrap()
    }

    /// MSIMUT patients with every prob >= 0.9, MSS with every prob <= 0.1.
    pub(crate) fn separable(prefix: &str, n: usize) -> Vec<PatientRecord> {
        let mut out = Vec::new();
        for i in 0..n {
            let k = 5 + i % 7;
            let hi: Vec<f64> = (0..k).map(|j| 0.9 + 0.1 * (j as f64 / k as f64)).collect();
            let lo: Vec<f64> = (0..k).map(|j| 0.1 * (j as f64 / k as f64)).collect();
            out.push(rec(&format!("{prefix}msi{i}"), ClassLabel::MsiMut, hi));
            out.push(rec(&format!("{prefix}mss{i}"), ClassLabel::Mss, lo));
        }
        out
    }

    #[test]
    fn counting() {
        assert!((counting_score(&[0.2, 0.6, 0.7], 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(counting_score(&[0.5], 0.5).unwrap(), 1.0);
        assert_eq!(counting_score(&[0.49, 0.49], 0.5).unwrap(), 0.0);
        assert!(matches!(counting_score(&[], 0.5), Err(AggregateError::EmptyInput)));
    }

    #[test]
    fn averaging() {
        assert!((averaging_score(&[0.2, 0.6, 0.7]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(averaging_score(&[1.0]).unwrap(), 1.0);
        assert_eq!(averaging_score(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(averaging_score(&[]), Err(AggregateError::EmptyInput)));
    }

    #[test]
    fn thresholding() {
        assert_eq!(threshold_decide(0.5, 0.5), ClassLabel::MsiMut);
        assert_eq!(threshold_decide(0.4999, 0.5), ClassLabel::Mss);
        assert_eq!(threshold_decide(1.0, 0.5), ClassLabel::MsiMut);
    }

    #[test]
    fn grid_validation_and_order() {
        assert!(HyperGrid::new(vec![], vec![1.0], vec![KernelKind::Rbf]).is_err());
        assert!(HyperGrid::new(vec![1.0], vec![-1.0], vec![KernelKind::Rbf]).is_err());
        assert!(HyperGrid::new(vec![1.0], vec![1.0], vec![]).is_err());
        let g = HyperGrid::default();
        let cands = g.candidates();
        assert_eq!(cands.len(), 4 + 4 * 3);
        assert_eq!(cands[0], (0.1, KernelSpec::Linear));
        assert_eq!(cands[4], (0.1, KernelSpec::Rbf { gamma: 0.1 }));
    }

    #[test]
    fn ranking_tie_breaks() {
        let s = |bacc, f1, c, kernel| CandidateScore { c, kernel, bacc, f1 };
        let rbf = |g| KernelSpec::Rbf { gamma: g };
        let mut v = [
            s(0.9, 0.8, 1.0, rbf(1.0)),
            s(0.9, 0.8, 1.0, KernelSpec::Linear),
            s(0.9, 0.8, 1.0, rbf(0.1)),
            s(0.9, 0.8, 0.1, rbf(10.0)),
            s(0.9, 0.9, 100.0, rbf(10.0)),
            s(0.95, 0.1, 100.0, rbf(10.0)),
        ];
        v.sort_by(|a, b| a.rank(b));
        let keys: Vec<(f64, f64, f64, Option<f64>)> =
            v.iter().map(|s| (s.bacc, s.f1, s.c, s.kernel.gamma())).collect();
        assert_eq!(
            keys,
            vec![
                (0.95, 0.1, 100.0, Some(10.0)),
                (0.9, 0.9, 100.0, Some(10.0)),
                (0.9, 0.8, 0.1, Some(10.0)),
                (0.9, 0.8, 1.0, None),
                (0.9, 0.8, 1.0, Some(0.1)),
                (0.9, 0.8, 1.0, Some(1.0)),
            ]
        );
    }

    #[test]
    fn separable_training_and_prediction() {
        let train = separable("t", 10);
        let val = separable("v", 5);
        let (model, scores) = grid_search(&train, &val, &HyperGrid::default(), 10, 42).unwrap();
        assert_eq!(scores.len(), 16);
        assert_eq!(model.validation_bacc(), 1.0);
        assert_eq!(model.bin_count(), 10);
        assert_eq!(model.svm().dim(), 10);
        let hi = rec("x", ClassLabel::Mss, vec![0.95; 20]);
        let lo = rec("y", ClassLabel::Mss, vec![0.05; 20]);
        assert_eq!(mag_predict(&model, &hi).unwrap().0, ClassLabel::MsiMut);
        assert_eq!(mag_predict(&model, &lo).unwrap().0, ClassLabel::Mss);

        let again = mag_train(&train, &val, &HyperGrid::default(), 10, 42).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn training_preconditions() {
        let all_mss: Vec<_> = separable("t", 4).into_iter().filter(|r| r.label() == Some(ClassLabel::Mss)).collect();
        let val = separable("v", 2);
        assert!(matches!(
            mag_train(&all_mss, &val, &HyperGrid::default(), 10, 0),
            Err(AggregateError::SingleClass)
        ));
        assert!(matches!(
            mag_train(&separable("t", 2), &[], &HyperGrid::default(), 10, 0),
            Err(AggregateError::EmptyValidation)
        ));
        let unlabeled = vec![PatientRecord::new("u", None, vec![0.1]).unwrap()];
        assert!(matches!(
            mag_train(&separable("t", 2), &unlabeled, &HyperGrid::default(), 10, 0),
            Err(AggregateError::UnlabeledRecord(_))
        ));
    }

    #[test]
    fn boundary_decision_is_positive() {
        // f(x) = 1.0 * x[0] - 0.5, zero for a record with half its mass in bin 0
        let mut sv = vec![0.0; 10];
        sv[0] = 1.0;
        let svm = SvmModel::new(KernelSpec::Linear, vec![sv], vec![1.0], -0.5, 1.0).unwrap();
        let model = MagModel::new(svm, 10, 1.0).unwrap();
        let (label, d) = mag_predict_probs(&model, &[0.05, 0.95]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(label, ClassLabel::MsiMut);
        assert!(matches!(mag_predict_probs(&model, &[]), Err(AggregateError::EmptyInput)));
    }

    #[test]
    fn bin_count_must_match_svm_dim() {
        let svm = SvmModel::new(KernelSpec::Linear, vec![vec![1.0, 0.0]], vec![1.0], 0.0, 1.0).unwrap();
        assert!(matches!(MagModel::new(svm, 10, 0.5), Err(AggregateError::BinMismatch { .. })));
    }
}
