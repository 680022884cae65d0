//! Seeded synthetic cohorts of patch probabilities.
//!
//! Each patient gets a uniform patch count in `[patches_min, patches_max]`
//! and i.i.d. Beta-distributed patch probabilities. Beta variates are built
//! as `X / (X + Y)` with `X ~ Gamma(α)`, `Y ~ Gamma(β)`; the gamma sampler is
//! Marsaglia & Tsang (2000), with the `U^(1/α)` boost for shapes below one.

use std::fmt::Write as _;

use thiserror::Error;

use crate::domain::{ClassLabel, PatientRecord};
use crate::rng::SeededRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn is_valid(&self) -> bool {
        self.alpha.is_finite() && self.alpha > 0.0 && self.beta.is_finite() && self.beta > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortSpec {
    pub n_msi: usize,
    pub n_mss: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub msi_dist: BetaParams,
    pub mss_dist: BetaParams,
    pub seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_msi == 0 || self.n_mss == 0 {
            return Err(SynthError::InvalidSpec("both classes need at least one patient".into()));
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return Err(SynthError::InvalidSpec(format!(
                "patch range [{}, {}] is empty or starts at zero",
                self.patches_min, self.patches_max
            )));
        }
        if !self.msi_dist.is_valid() || !self.mss_dist.is_valid() {
            return Err(SynthError::InvalidSpec("Beta parameters must be positive".into()));
        }
        Ok(())
    }
}

/// MSIMUT ~ Beta(0.5, 0.5), MSS ~ Beta(5, 5): equal means, different shapes.
pub fn equal_mean_scenario(seed: u64) -> CohortSpec {
    CohortSpec {
        n_msi: 60,
        n_mss: 60,
        patches_min: 100,
        patches_max: 300,
        msi_dist: BetaParams::new(0.5, 0.5),
        mss_dist: BetaParams::new(5.0, 5.0),
        seed,
    }
}

/// MSIMUT ~ Beta(40, 2), MSS ~ Beta(2, 40): every method separates these.
pub fn separable_scenario(seed: u64) -> CohortSpec {
    CohortSpec {
        n_msi: 30,
        n_mss: 30,
        patches_min: 50,
        patches_max: 150,
        msi_dist: BetaParams::new(40.0, 2.0),
        mss_dist: BetaParams::new(2.0, 40.0),
        seed,
    }
}

pub fn sample_gamma(rng: &mut SeededRng, shape: f64) -> f64 {
    if shape < 1.0 {
        let boost = rng.open_unit_f64().powf(1.0 / shape);
        return sample_gamma(rng, shape + 1.0) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.open_unit_f64();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

pub fn sample_beta(rng: &mut SeededRng, params: BetaParams) -> f64 {
    loop {
        let x = sample_gamma(rng, params.alpha);
        let y = sample_gamma(rng, params.beta);
        let s = x + y;
        if s > 0.0 {
            return (x / s).clamp(0.0, 1.0);
        }
    }
}

/// Patient ids are `msi_NNNN` / `mss_NNNN`. All MSIMUT patients are drawn
/// first, then all MSS patients, from one stream seeded by `spec.seed`.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<PatientRecord>, SynthError> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let mut out = Vec::with_capacity(spec.n_msi + spec.n_mss);
    let groups = [
        ("msi", ClassLabel::MsiMut, spec.n_msi, spec.msi_dist),
        ("mss", ClassLabel::Mss, spec.n_mss, spec.mss_dist),
    ];
    for (prefix, label, count, dist) in groups {
        for i in 0..count {
            let n = rng.range_inclusive(spec.patches_min as u64, spec.patches_max as u64) as usize;
            let probs: Vec<f64> = (0..n).map(|_| sample_beta(&mut rng, dist)).collect();
            let record = PatientRecord::new(format!("{prefix}_{i:04}"), Some(label), probs)
                .expect("generated probabilities lie in [0, 1]");
            out.push(record);
        }
    }
    Ok(out)
}

/// Predictions CSV (`patient_id,patch_id,prob`) for a cohort.
pub fn predictions_csv(records: &[PatientRecord]) -> String {
    let mut out = String::from("patient_id,patch_id,prob\n");
    for r in records {
        for (j, p) in r.probs().iter().enumerate() {
            let _ = writeln!(out, "{},patch_{j:04},{p}", r.patient_id());
        }
    }
    out
}

/// Labels CSV (`patient_id,label`); unlabeled records are skipped.
pub fn labels_csv(records: &[PatientRecord]) -> String {
    let mut out = String::from("patient_id,label\n");
    for r in records {
        if let Some(label) = r.label() {
            let _ = writeln!(out, "{},{label}", r.patient_id());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::featurize;

    fn pooled_mean(params: BetaParams, seed: u64, n: usize) -> f64 {
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| sample_beta(&mut rng, params)).sum::<f64>() / n as f64
    }

    #[test]
    fn beta_means_match_theory() {
        for params in [
            BetaParams::new(0.5, 0.5),
            BetaParams::new(5.0, 5.0),
            BetaParams::new(1.0, 1.0),
            BetaParams::new(40.0, 2.0),
            BetaParams::new(2.0, 40.0),
            BetaParams::new(0.3, 2.0),
        ] {
            let m = pooled_mean(params, 99, 100_000);
            assert!((m - params.mean()).abs() < 0.01, "{params:?}: {m}");
        }
    }

    #[test]
    fn gamma_mean_and_variance() {
        let mut rng = SeededRng::new(5);
        for shape in [0.5, 1.0, 3.0] {
            let xs: Vec<f64> = (0..100_000).map(|_| sample_gamma(&mut rng, shape)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!((mean - shape).abs() < 0.03 * shape.max(1.0), "shape {shape}: mean {mean}");
            assert!((var - shape).abs() < 0.06 * shape.max(1.0), "shape {shape}: var {var}");
        }
    }

    #[test]
    fn uniform_cohort_histograms_are_flat() {
        let spec = CohortSpec {
            n_msi: 3,
            n_mss: 3,
            patches_min: 500,
            patches_max: 800,
            msi_dist: BetaParams::new(1.0, 1.0),
            mss_dist: BetaParams::new(1.0, 1.0),
            seed: 17,
        };
        let cohort = generate_cohort(&spec).unwrap();
        for r in &cohort {
            assert!(r.patch_count() >= 500);
            for &b in featurize(r, 10).unwrap().bins() {
                assert!((b - 0.1).abs() <= 0.1, "{b}");
            }
        }
    }

    #[test]
    fn cohort_shape_and_determinism() {
        let spec = equal_mean_scenario(3);
        let a = generate_cohort(&spec).unwrap();
        assert_eq!(a.len(), 120);
        assert_eq!(a.iter().filter(|r| r.label() == Some(ClassLabel::MsiMut)).count(), 60);
        assert!(a.iter().all(|r| (100..=300).contains(&r.patch_count())));
        assert!(a.iter().flat_map(|r| r.probs()).all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(a, generate_cohort(&spec).unwrap());
        assert_ne!(a, generate_cohort(&equal_mean_scenario(4)).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let mut s = equal_mean_scenario(0);
        s.n_msi = 0;
        assert!(generate_cohort(&s).is_err());
        let mut s = equal_mean_scenario(0);
        s.patches_min = 10;
        s.patches_max = 5;
        assert!(generate_cohort(&s).is_err());
        let mut s = equal_mean_scenario(0);
        s.mss_dist.beta = 0.0;
        assert!(generate_cohort(&s).is_err());
    }

    #[test]
    fn separable_preset_is_separated_at_one_half() {
        for seed in 0..3 {
            for r in generate_cohort(&separable_scenario(seed)).unwrap() {
                let positive = r.label() == Some(ClassLabel::MsiMut);
                assert!(r.probs().iter().all(|&p| (p >= 0.5) == positive));
            }
        }
    }

    #[test]
    fn csv_output_round_trips_through_ingest() {
        let cohort = generate_cohort(&separable_scenario(1)).unwrap();
        let preds = crate::ingest::parse_predictions(predictions_csv(&cohort).as_bytes()).unwrap();
        let labels = crate::ingest::parse_labels(labels_csv(&cohort).as_bytes()).unwrap();
        let back = crate::ingest::group_by_patient(&preds, &labels, true).unwrap();
        assert_eq!(back, cohort);
    }
}
