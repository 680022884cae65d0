//! Histogram featurization of patch probabilities.
//!
//! Bins are left-closed and right-open, `[k/B, (k+1)/B)`, except the last
//! bin which also holds `p = 1.0`. A probability of exactly 0.5 therefore
//! lands in the upper half at `B = 10`.

use thiserror::Error;

use crate::domain::{HistogramFeature, PatientRecord};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("no probabilities to featurize")]
    EmptyInput,
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("histogram holds {sum} patches but n = {n}")]
    ZeroPatches { sum: u64, n: u64 },
}

/// Bin index of `p` for `bin_count` equal-width bins over [0, 1].
///
/// Membership is decided against the rounded boundary `k as f64 / B`, so
/// `p >= k / B` holds exactly for every `p` in bin `k` or above.
pub fn bin_index(p: f64, bin_count: usize) -> usize {
    let b = bin_count as f64;
    let lower = |k: usize| k as f64 / b;
    let mut k = ((p * b).floor() as usize).min(bin_count - 1);
    if k > 0 && p < lower(k) {
        k -= 1;
    } else if k + 1 < bin_count && p >= lower(k + 1) {
        k += 1;
    }
    k
}

/// Per-bin patch counts (the unnormalized histogram).
pub fn raw_histogram(probs: &[f64], bin_count: usize) -> Result<Vec<u64>, FeatureError> {
    if bin_count < 2 {
        return Err(FeatureError::TooFewBins(bin_count));
    }
    if probs.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let mut counts = vec![0u64; bin_count];
    for &p in probs {
        counts[bin_index(p, bin_count)] += 1;
    }
    Ok(counts)
}

/// Divides the counts by `n`, which must equal their (positive) sum.
pub fn normalize_histogram(raw: &[u64], n: u64) -> Result<HistogramFeature, FeatureError> {
    if raw.len() < 2 {
        return Err(FeatureError::TooFewBins(raw.len()));
    }
    let sum: u64 = raw.iter().sum();
    if n == 0 || sum != n {
        return Err(FeatureError::ZeroPatches { sum, n });
    }
    Ok(HistogramFeature::from_counts(raw.to_vec(), n))
}

pub fn featurize(record: &PatientRecord, bin_count: usize) -> Result<HistogramFeature, FeatureError> {
    featurize_probs(record.probs(), bin_count)
}

pub fn featurize_probs(probs: &[f64], bin_count: usize) -> Result<HistogramFeature, FeatureError> {
    let raw = raw_histogram(probs, bin_count)?;
    normalize_histogram(&raw, probs.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn raw_bins() {
        assert_eq!(
            raw_histogram(&[0.05, 0.15, 0.95, 0.97], 10).unwrap(),
            vec![1, 1, 0, 0, 0, 0, 0, 0, 0, 2]
        );
        assert_eq!(raw_histogram(&[1.0], 10).unwrap()[9], 1);
        let half = raw_histogram(&[0.5], 10).unwrap();
        assert_eq!(half[5], 1);
        assert_eq!(half.iter().sum::<u64>(), 1);
        assert_eq!(raw_histogram(&[], 10), Err(FeatureError::EmptyInput));
        assert_eq!(raw_histogram(&[0.5], 1), Err(FeatureError::TooFewBins(1)));
    }

    #[test]
    fn boundaries_are_left_closed() {
        for k in 0..10 {
            let p = k as f64 / 10.0;
            assert_eq!(bin_index(p, 10), k, "p = {p}");
        }
        assert_eq!(bin_index(0.0999999, 10), 0);
        assert_eq!(bin_index(0.25, 2), 0);
        assert_eq!(bin_index(0.5, 2), 1);
        assert_eq!(bin_index(1.0, 2), 1);
        let below_half = f64::from_bits(0.5f64.to_bits() - 1);
        assert_eq!(bin_index(below_half, 10), 4);
        for k in 1..7 {
            let edge = k as f64 / 7.0;
            assert_eq!(bin_index(edge, 7), k);
            assert_eq!(bin_index(f64::from_bits(edge.to_bits() - 1), 7), k - 1);
        }
    }

    #[test]
    fn normalization() {
        let f = normalize_histogram(&[1, 1, 0, 0, 0, 0, 0, 0, 0, 2], 4).unwrap();
        assert_eq!(f.bins(), &[0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let mut single = vec![0u64; 10];
        single[0] = 3;
        assert_eq!(normalize_histogram(&single, 3).unwrap().bins()[0], 1.0);
        assert_eq!(
            normalize_histogram(&[1, 1], 3),
            Err(FeatureError::ZeroPatches { sum: 2, n: 3 })
        );
        assert!(matches!(
            normalize_histogram(&[0, 0], 0),
            Err(FeatureError::ZeroPatches { .. })
        ));
    }

    #[test]
    fn featurize_records() {
        let r = PatientRecord::new("p", None, vec![0.0, 0.0]).unwrap();
        let f = featurize(&r, 10).unwrap();
        assert_eq!(f.bins()[0], 1.0);
        assert!(f.bins()[1..].iter().all(|&b| b == 0.0));

        let r = PatientRecord::new("p", None, vec![0.05, 0.15, 0.95, 0.97]).unwrap();
        assert_eq!(
            featurize(&r, 10).unwrap().bins(),
            &[0.25, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]
        );
    }

    #[test]
    fn uniform_draws_fill_bins_evenly() {
        let mut rng = SeededRng::new(2024);
        let probs: Vec<f64> = (0..1000).map(|_| rng.unit_f64()).collect();
        let f = featurize_probs(&probs, 10).unwrap();
        // frozen from seed 2024
        assert_eq!(f.counts(), &[87, 81, 116, 119, 106, 88, 101, 101, 99, 102]);
        for &b in f.bins() {
            assert!((b - 0.1).abs() <= 0.05, "{b}");
        }
    }
}
