//! Accuracy, NLL, reliability bins / ECE, and predictive entropy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

/// Probabilities at or below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub label: usize,
    pub confidence: f64,
}

impl PredictionRecord {
    /// Validates the probability vector and derives prediction and confidence.
    /// Ties go to the lowest class index.
    pub fn new(probs: Vec<f64>, label: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Data("empty probability vector".into()));
        }
        if label >= probs.len() {
            return Err(Error::Data(format!("label {label} out of range for {} classes", probs.len())));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Numeric("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {total}, not 1")));
        }
        let mut predicted = 0;
        for (c, &p) in probs.iter().enumerate() {
            if p > probs[predicted] {
                predicted = c;
            }
        }
        let confidence = probs[predicted];
        Ok(Self {
            probs,
            predicted,
            label,
            confidence,
        })
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

/// Builds records from a `[n, classes]` probability tensor, renormalizing
/// each row in double precision.
pub fn records_from<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Vec<PredictionRecord>> {
    if probs.shape().len() != 2 || probs.batch() != labels.len() {
        return Err(Error::Data(format!("{:?} probabilities for {} labels", probs.shape(), labels.len())));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row: Vec<f64> = probs.item(i).iter().map(|p| p.as_f64()).collect();
            let total: f64 = row.iter().sum();
            // single-precision rows drift from 1 by a few ulps
            PredictionRecord::new(row.iter().map(|p| p / total).collect(), y)
        })
        .collect()
}

fn non_empty(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        Err(Error::Data("no prediction records".into()))
    } else {
        Ok(())
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Mean `-ln p(true class)` with probabilities clamped at [`PROB_FLOOR`].
pub fn nll(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    let sum: f64 = records.iter().map(|r| -r.probs[r.label].max(PROB_FLOOR).ln()).sum();
    Ok(sum / records.len() as f64)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn mean_entropy(records: &[PredictionRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().map(|r| entropy(&r.probs)).sum::<f64>() / records.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReliabilityBins {
    pub bins: Vec<Bin>,
    pub ece: f64,
}

/// Equal-width confidence bins on `[0, 1]`; bin `b` holds `(b/B, (b+1)/B]`,
/// with confidence 0 going to the first bin.
pub fn reliability(records: &[PredictionRecord], n_bins: usize) -> Result<ReliabilityBins> {
    if n_bins == 0 {
        return Err(Error::Config("need at least one reliability bin".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for r in records {
        let b = bin_index(r.confidence, n_bins);
        count[b] += 1;
        conf[b] += r.confidence;
        hits[b] += usize::from(r.correct());
    }
    let n = records.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                let c = count[b] as f64;
                (conf[b] / c, hits[b] as f64 / c)
            };
            if count[b] > 0 {
                ece += count[b] as f64 / n * (accuracy - mean_confidence).abs();
            }
            Bin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityBins { bins, ece })
}

fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let scaled = (confidence * n_bins as f64).ceil() as usize;
    scaled.clamp(1, n_bins) - 1
}

/// Summary metrics of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub mean_entropy: f64,
    pub n: usize,
}

pub fn summarize(records: &[PredictionRecord], n_bins: usize) -> Result<(Metrics, ReliabilityBins)> {
    let rel = reliability(records, n_bins)?;
    Ok((
        Metrics {
            accuracy: accuracy(records)?,
            nll: nll(records)?,
            ece: rel.ece,
            mean_entropy: mean_entropy(records)?,
            n: records.len(),
        },
        rel,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(probs: &[f64], label: usize) -> PredictionRecord {
        PredictionRecord::new(probs.to_vec(), label).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let rs = [rec(&[0.9, 0.1], 0), rec(&[0.2, 0.8], 1), rec(&[0.6, 0.4], 0), rec(&[0.3, 0.7], 0)];
        assert_eq!(accuracy(&rs).unwrap(), 0.75);
        assert!(accuracy(&[]).is_err());
        assert!(nll(&[]).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(rec(&[0.25, 0.5, 0.25, 0.0].map(|p| p), 1).predicted, 1);
        assert_eq!(rec(&[0.5, 0.5], 1).predicted, 0);
    }

    #[test]
    fn nll_values() {
        let uniform = vec![0.1; 10];
        assert!((nll(&[rec(&uniform, 3)]).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert_eq!(nll(&[rec(&[1.0, 0.0], 0)]).unwrap(), 0.0);
        assert!((nll(&[rec(&[1.0, 0.0], 1)]).unwrap() + 1e-12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_values() {
        let mut one_hot = vec![0.0; 10];
        one_hot[2] = 1.0;
        let uniform = vec![0.1; 10];
        assert_eq!(mean_entropy(&[rec(&one_hot, 2)]).unwrap(), 0.0);
        let both = mean_entropy(&[rec(&one_hot, 2), rec(&uniform, 0)]).unwrap();
        assert!((both - 10f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ece_hand_cases() {
        let confident = [rec(&[1.0, 0.0], 0), rec(&[0.0, 1.0], 1)];
        assert_eq!(reliability(&confident, 10).unwrap().ece, 0.0);
        let rs = [rec(&[0.8, 0.2], 0), rec(&[0.8, 0.2], 1)];
        let r = reliability(&rs, 10).unwrap();
        assert!((r.ece - 0.3).abs() < 1e-15);
        assert_eq!(r.bins[7].count, 2);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 2);
    }

    #[test]
    fn bins_are_half_open_on_the_left() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.100001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
    }

    #[test]
    fn record_validation() {
        assert!(PredictionRecord::new(vec![0.5, 0.4], 0).is_err());
        assert!(PredictionRecord::new(vec![0.5, 0.5], 2).is_err());
        assert!(PredictionRecord::new(vec![], 0).is_err());
    }
}
