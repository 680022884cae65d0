//! CSV ingestion, patient grouping, and seeded stratified splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;

use thiserror::Error;

use crate::domain::{ClassLabel, DomainError, PatchPrediction, PatientRecord, SplitAssignment};
use crate::rng::SeededRng;

pub const PREDICTIONS_HEADER: [&str; 3] = ["patient_id", "patch_id", "prob"];
pub const LABELS_HEADER: [&str; 2] = ["patient_id", "label"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        line: u64,
        expected: String,
        found: String,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: probability {value} is outside [0, 1]")]
    OutOfRangeProb { line: u64, value: f64 },
    #[error("line {line}: duplicate patch ({patient_id}, {patch_id})")]
    DuplicatePatch {
        line: u64,
        patient_id: String,
        patch_id: String,
    },
    #[error("line {line}: unknown label {label:?} (expected MSS or MSIMUT)")]
    UnknownLabel { line: u64, label: String },
    #[error("line {line}: duplicate patient {patient_id}")]
    DuplicatePatient { line: u64, patient_id: String },
    #[error("patient {0} has predictions but no label")]
    MissingLabel(String),
    #[error("patient {0} is unlabeled")]
    UnlabeledRecord(String),
    #[error("no {0} patients to split")]
    EmptyClass(ClassLabel),
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Train / validation / test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    train: f64,
    val: f64,
    test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, IngestError> {
        for r in [train, val, test] {
            if !(r > 0.0 && r < 1.0) {
                return Err(IngestError::InvalidRatios(format!(
                    "{r} is not in (0, 1)"
                )));
            }
        }
        let sum = train + val + test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidRatios(format!(
                "ratios sum to {sum}, not 1"
            )));
        }
        Ok(Self { train, val, test })
    }

    pub fn train(&self) -> f64 {
        self.train
    }

    pub fn val(&self) -> f64 {
        self.val
    }

    pub fn test(&self) -> f64 {
        self.test
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.2,
            test: 0.3,
        }
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source)
}

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    expected: &[&str],
) -> Result<(), IngestError> {
    let mut rec = csv::StringRecord::new();
    if !rdr.read_record(&mut rec)? {
        return Err(IngestError::BadHeader {
            line: 1,
            expected: expected.join(","),
            found: String::new(),
        });
    }
    if rec.iter().ne(expected.iter().copied()) {
        return Err(IngestError::BadHeader {
            line: 1,
            expected: expected.join(","),
            found: rec.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Parses `patient_id,patch_id,prob` rows in file order.
pub fn parse_predictions<R: Read>(source: R) -> Result<Vec<PatchPrediction>, IngestError> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &PREDICTIONS_HEADER)?;

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 3 columns, found {}", rec.len()),
            });
        }
        let (patient_id, patch_id, raw) = (&rec[0], &rec[1], &rec[2]);
        if patient_id.is_empty() || patch_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "empty identifier".into(),
            });
        }
        let prob: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("cannot parse probability {raw:?}"),
        })?;
        let pred = PatchPrediction::new(patient_id, patch_id, prob)
            .map_err(|_| IngestError::OutOfRangeProb { line, value: prob })?;
        if !seen.insert((patient_id.to_string(), patch_id.to_string())) {
            return Err(IngestError::DuplicatePatch {
                line,
                patient_id: patient_id.to_string(),
                patch_id: patch_id.to_string(),
            });
        }
        out.push(pred);
    }
    Ok(out)
}

/// Parses `patient_id,label` rows; labels are case-folded.
pub fn parse_labels<R: Read>(source: R) -> Result<BTreeMap<String, ClassLabel>, IngestError> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &LABELS_HEADER)?;

    let mut out = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec)? {
        let line = line_of(&rec);
        if rec.len() != 2 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let patient_id = &rec[0];
        if patient_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "empty patient id".into(),
            });
        }
        let label: ClassLabel = rec[1].parse().map_err(|_| IngestError::UnknownLabel {
            line,
            label: rec[1].to_string(),
        })?;
        if out.insert(patient_id.to_string(), label).is_some() {
            return Err(IngestError::DuplicatePatient {
                line,
                patient_id: patient_id.to_string(),
            });
        }
    }
    Ok(out)
}

/// Groups predictions into one record per patient, sorted by patient id.
///
/// With `strict`, a patient without a label is an error; otherwise the
/// record is emitted unlabeled.
pub fn group_by_patient(
    preds: &[PatchPrediction],
    labels: &BTreeMap<String, ClassLabel>,
    strict: bool,
) -> Result<Vec<PatientRecord>, IngestError> {
    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in preds {
        grouped.entry(p.patient_id()).or_default().push(p.prob());
    }
    grouped
        .into_iter()
        .map(|(id, probs)| {
            let label = labels.get(id).copied();
            if strict && label.is_none() {
                return Err(IngestError::MissingLabel(id.to_string()));
            }
            Ok(PatientRecord::new(id, label, probs)?)
        })
        .collect()
}

/// Largest-remainder allocation of `n` items over `ratios`; ties in the
/// fractional part go to the earlier slot (train, then val, then test).
pub fn allocate_counts(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let quotas = ratios.as_array().map(|r| r * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    // stable sort keeps train > val > test on equal remainders
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &slot in order.iter().take(n.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Stratified, seeded split.
///
/// Classes are processed MSIMUT first, then MSS, from one `SeededRng`
/// stream. Within a class, patient ids are sorted, shuffled, and cut into
/// train / val / test by `allocate_counts`.
pub fn split_patients(
    records: &[PatientRecord],
    ratios: &SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, IngestError> {
    let mut by_class: BTreeMap<ClassLabel, Vec<&str>> = BTreeMap::new();
    for r in records {
        let label = r
            .label()
            .ok_or_else(|| IngestError::UnlabeledRecord(r.patient_id().to_string()))?;
        by_class.entry(label).or_default().push(r.patient_id());
    }

    let mut rng = SeededRng::new(seed);
    let mut parts: [BTreeSet<String>; 3] = Default::default();
    for class in [ClassLabel::MsiMut, ClassLabel::Mss] {
        let mut ids = by_class.remove(&class).ok_or(IngestError::EmptyClass(class))?;
        ids.sort_unstable();
        ids.dedup();
        rng.shuffle(&mut ids);
        let counts = allocate_counts(ids.len(), ratios);
        let mut rest = ids.as_slice();
        for (part, &k) in parts.iter_mut().zip(counts.iter()) {
            let (head, tail) = rest.split_at(k);
            part.extend(head.iter().map(|s| s.to_string()));
            rest = tail;
        }
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment::new(train, val, test)?)
}
