//! Confusion matrices, F1, balanced accuracy, and the method comparison
//! report.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::aggregate::{self, AggregateError, MagModel};
use crate::domain::{ClassLabel, ConfusionMatrix, PatientRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {truths} truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("truth labels contain no {0} patients")]
    MissingClass(ClassLabel),
    #[error("patient {0} is unlabeled")]
    UnlabeledRecord(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

pub fn confusion(preds: &[ClassLabel], truths: &[ClassLabel]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truths) {
        match (p.is_positive(), t.is_positive()) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// F1 value plus a flag set when `2tp + fp + fn = 0` and the value is a
/// convention rather than a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Score {
    pub value: f64,
    pub degenerate: bool,
}

pub fn f1(cm: &ConfusionMatrix) -> F1Score {
    let denom = 2 * cm.tp + cm.fp + cm.fn_;
    if denom == 0 {
        F1Score {
            value: 0.0,
            degenerate: true,
        }
    } else {
        F1Score {
            value: (2 * cm.tp) as f64 / denom as f64,
            degenerate: false,
        }
    }
}

/// Mean of sensitivity and specificity. Both truth classes must be present.
pub fn bacc(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.positives() == 0 {
        return Err(EvalError::MissingClass(ClassLabel::MsiMut));
    }
    if cm.negatives() == 0 {
        return Err(EvalError::MissingClass(ClassLabel::Mss));
    }
    let tpr = cm.tp as f64 / cm.positives() as f64;
    let tnr = cm.tn as f64 / cm.negatives() as f64;
    Ok((tpr + tnr) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Counting,
    Averaging,
    Mag,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Counting, Method::Averaging, Method::Mag];

    pub fn title(self) -> &'static str {
        match self {
            Method::Counting => "Counting",
            Method::Averaging => "Averaging",
            Method::Mag => "MAg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub f1: f64,
    pub f1_degenerate: bool,
    pub bacc: f64,
    pub confusion: ConfusionMatrix,
}

impl MethodResult {
    fn from_confusion(confusion: ConfusionMatrix) -> Result<Self, EvalError> {
        let f = f1(&confusion);
        Ok(Self {
            f1: f.value,
            f1_degenerate: f.degenerate,
            bacc: bacc(&confusion)?,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResults {
    pub counting: MethodResult,
    pub averaging: MethodResult,
    pub mag: MethodResult,
}

impl MethodResults {
    pub fn get(&self, m: Method) -> &MethodResult {
        match m {
            Method::Counting => &self.counting,
            Method::Averaging => &self.averaging,
            Method::Mag => &self.mag,
        }
    }
}

/// Per-method metrics over one test cohort.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cohort_size: usize,
    pub positive_count: usize,
    pub methods: MethodResults,
}

impl EvalReport {
    /// Rows are metrics, columns are methods.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Patients: {} ({} MSIMUT, {} MSS)",
            self.cohort_size,
            self.positive_count,
            self.cohort_size - self.positive_count
        );
        let header: Vec<String> = Method::ALL.iter().map(|m| format!("{:>10}", m.title())).collect();
        let _ = writeln!(out, "{:<8}|{}", "Metric", header.join(" "));
        let _ = writeln!(out, "{}", "-".repeat(8 + 1 + 11 * Method::ALL.len() - 1));
        let row = |name: &str, f: &dyn Fn(&MethodResult) -> f64| {
            let cells: Vec<String> = Method::ALL
                .iter()
                .map(|&m| format!("{:>10.4}", f(self.methods.get(m))))
                .collect();
            format!("{name:<8}|{}", cells.join(" "))
        };
        let _ = writeln!(out, "{}", row("F1", &|r| r.f1));
        let _ = writeln!(out, "{}", row("BACC", &|r| r.bacc));
        out
    }
}

/// Runs counting, averaging, and MAg over the test cohort.
///
/// Records are evaluated in patient-id order, so the input order does not
/// affect the report.
pub fn compare(
    test: &[PatientRecord],
    mag: &MagModel,
    patch_threshold: f64,
    patient_threshold: f64,
) -> Result<EvalReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut ordered: Vec<&PatientRecord> = test.iter().collect();
    ordered.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));

    let truths = ordered
        .iter()
        .map(|r| {
            r.label()
                .ok_or_else(|| EvalError::UnlabeledRecord(r.patient_id().to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let positive_count = truths.iter().filter(|l| l.is_positive()).count();
    if positive_count == 0 {
        return Err(EvalError::MissingClass(ClassLabel::MsiMut));
    }
    if positive_count == truths.len() {
        return Err(EvalError::MissingClass(ClassLabel::Mss));
    }

    let mut counting = Vec::with_capacity(ordered.len());
    let mut averaging = Vec::with_capacity(ordered.len());
    let mut mag_preds = Vec::with_capacity(ordered.len());
    for r in &ordered {
        let probs = r.probs();
        counting.push(aggregate::threshold_decide(
            aggregate::counting_score(probs, patch_threshold)?,
            patient_threshold,
        ));
        averaging.push(aggregate::threshold_decide(
            aggregate::averaging_score(probs)?,
            patient_threshold,
        ));
        mag_preds.push(aggregate::mag_predict(mag, r)?.0);
    }

    Ok(EvalReport {
        cohort_size: ordered.len(),
        positive_count,
        methods: MethodResults {
            counting: MethodResult::from_confusion(confusion(&counting, &truths)?)?,
            averaging: MethodResult::from_confusion(confusion(&averaging, &truths)?)?,
            mag: MethodResult::from_confusion(confusion(&mag_preds, &truths)?)?,
        },
    })
}
