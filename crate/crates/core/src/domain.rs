//! Value types shared across the pipeline.
//!
//! Every constructor validates its inputs, so an instance that exists is an
//! instance that satisfies its invariants.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("empty patient id")]
    EmptyPatientId,
    #[error("empty patch id")]
    EmptyPatchId,
    #[error("probability {0} is outside [0, 1]")]
    ProbOutOfRange(f64),
    #[error("patient {0} has no patches")]
    NoPatches(String),
    #[error("unknown label {0:?} (expected MSS or MSIMUT)")]
    UnknownLabel(String),
    #[error("patient {0} assigned to more than one split")]
    OverlappingSplit(String),
}

/// Patient-level class. `MsiMut` is the positive class for every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "MSS")]
    Mss,
    #[serde(rename = "MSIMUT")]
    MsiMut,
}

impl ClassLabel {
    pub fn is_positive(self) -> bool {
        self == ClassLabel::MsiMut
    }

    /// +1 for MSIMUT, -1 for MSS.
    pub fn sign(self) -> f64 {
        match self {
            ClassLabel::MsiMut => 1.0,
            ClassLabel::Mss => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Mss => "MSS",
            ClassLabel::MsiMut => "MSIMUT",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = DomainError;

    /// Case-insensitive; surrounding whitespace is not accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("MSS") {
            Ok(ClassLabel::Mss)
        } else if s.eq_ignore_ascii_case("MSIMUT") {
            Ok(ClassLabel::MsiMut)
        } else {
            Err(DomainError::UnknownLabel(s.to_string()))
        }
    }
}

pub(crate) fn check_prob(p: f64) -> Result<f64, DomainError> {
    // NaN fails both comparisons
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(DomainError::ProbOutOfRange(p))
    }
}

/// One patch's MSI probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    patient_id: String,
    patch_id: String,
    prob: f64,
}

impl PatchPrediction {
    pub fn new(
        patient_id: impl Into<String>,
        patch_id: impl Into<String>,
        prob: f64,
    ) -> Result<Self, DomainError> {
        let patient_id = patient_id.into();
        let patch_id = patch_id.into();
        if patient_id.is_empty() {
            return Err(DomainError::EmptyPatientId);
        }
        if patch_id.is_empty() {
            return Err(DomainError::EmptyPatchId);
        }
        Ok(Self {
            patient_id,
            patch_id,
            prob: check_prob(prob)?,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn patch_id(&self) -> &str {
        &self.patch_id
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }
}

/// A patient's (optional) label and its patch probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    patient_id: String,
    label: Option<ClassLabel>,
    probs: Vec<f64>,
}

impl PatientRecord {
    pub fn new(
        patient_id: impl Into<String>,
        label: Option<ClassLabel>,
        probs: Vec<f64>,
    ) -> Result<Self, DomainError> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(DomainError::EmptyPatientId);
        }
        if probs.is_empty() {
            return Err(DomainError::NoPatches(patient_id));
        }
        for &p in &probs {
            check_prob(p)?;
        }
        Ok(Self {
            patient_id,
            label,
            probs,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn label(&self) -> Option<ClassLabel> {
        self.label
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of patches, N_i.
    pub fn patch_count(&self) -> usize {
        self.probs.len()
    }

    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        self
    }
}

/// Normalized histogram of a patient's patch probabilities.
///
/// Keeps the exact integer counts alongside the normalized bins so that
/// tail masses can be computed with a single division.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramFeature {
    counts: Vec<u64>,
    total: u64,
    bins: Vec<f64>,
}

impl HistogramFeature {
    /// Built by `features::normalize_histogram`, which has already checked
    /// that `total` is the positive sum of `counts` and `counts.len() >= 2`.
    pub(crate) fn from_counts(counts: Vec<u64>, total: u64) -> Self {
        let n = total as f64;
        let bins = counts.iter().map(|&a| a as f64 / n).collect();
        Self {
            counts,
            total,
            bins,
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Fraction of patches falling in bins `from..B`, as one exact-count
    /// division.
    pub fn tail_mass(&self, from: usize) -> f64 {
        let tail: u64 = self.counts.iter().skip(from).sum();
        tail as f64 / self.total as f64
    }

    /// Mean estimate using bin midpoints.
    pub fn midpoint_mean(&self) -> f64 {
        let b = self.bins.len() as f64;
        self.bins
            .iter()
            .enumerate()
            .map(|(k, w)| w * (k as f64 + 0.5) / b)
            .sum()
    }
}

/// Disjoint train / validation / test patient sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    train: BTreeSet<String>,
    val: BTreeSet<String>,
    test: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

impl FromStr for SplitPart {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl SplitAssignment {
    pub fn new(
        train: BTreeSet<String>,
        val: BTreeSet<String>,
        test: BTreeSet<String>,
    ) -> Result<Self, DomainError> {
        for id in &train {
            if val.contains(id) || test.contains(id) {
                return Err(DomainError::OverlappingSplit(id.clone()));
            }
        }
        if let Some(id) = val.intersection(&test).next() {
            return Err(DomainError::OverlappingSplit(id.clone()));
        }
        Ok(Self { train, val, test })
    }

    pub fn train(&self) -> &BTreeSet<String> {
        &self.train
    }

    pub fn val(&self) -> &BTreeSet<String> {
        &self.val
    }

    pub fn test(&self) -> &BTreeSet<String> {
        &self.test
    }

    pub fn part(&self, part: SplitPart) -> &BTreeSet<String> {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn part_of(&self, patient_id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .into_iter()
            .find(|&p| self.part(p).contains(patient_id))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All assignments ordered by patient id.
    pub fn entries(&self) -> Vec<(&str, SplitPart)> {
        let mut out: Vec<(&str, SplitPart)> = self
            .train
            .iter()
            .map(|s| (s.as_str(), SplitPart::Train))
            .chain(self.val.iter().map(|s| (s.as_str(), SplitPart::Val)))
            .chain(self.test.iter().map(|s| (s.as_str(), SplitPart::Test)))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Binary confusion counts with MSIMUT as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}
