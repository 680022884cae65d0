//! Patient-level MSI/MSS aggregation from patch-level probability scores.
//!
//! A patient's patch probabilities are summarized as a normalized histogram
//! and classified by a kernel SVM trained with sequential minimal
//! optimization. The counting and averaging baselines are provided for
//! comparison, along with F1 and balanced-accuracy evaluation.

pub mod aggregate;
pub mod cli;
pub mod domain;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod persist;
pub mod rng;
pub mod svm;
pub mod synth;

pub use aggregate::{
    averaging_score, counting_score, mag_predict, mag_train, threshold_decide, HyperGrid, MagModel,
};
pub use domain::{
    ClassLabel, ConfusionMatrix, HistogramFeature, PatchPrediction, PatientRecord, SplitAssignment,
};
pub use eval::{bacc, compare, confusion, f1, EvalReport};
pub use features::{featurize, normalize_histogram, raw_histogram};
pub use svm::{kernel_eval, kkt_max_violation, smo_train, KernelSpec, SmoParams, SvmModel};
