//! Accuracy, Brier score, and expected calibration error.

use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("probability and label vectors must have equal, non-zero length")]
    BadLength,
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("bin count must be at least 1")]
    BadBins,
}

/// How predictions are assigned to calibration bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinningMode {
    /// Bin by the positive-class probability Ψ itself (bin m covers
    /// `((m-1)/M, m/M]`, with Ψ = 0 in bin 1).
    Psi,
    /// Bin by the predicted-class confidence `max(Ψ, 1-Ψ)`.
    MaxConfidence,
}

/// One calibration bin: member count, mean confidence, mean accuracy.
#[derive(Debug, Clone, Serialize)]
pub struct BinRecord {
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

/// Brier score plus binned calibration error.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub brier: f64,
    pub ece: f64,
    pub n_bins: usize,
    pub binning: BinningMode,
    pub bins: Vec<BinRecord>,
}

fn validate(psi: &[f64], y: &[bool]) -> Result<(), MetricsError> {
    if psi.is_empty() || psi.len() != y.len() {
        return Err(MetricsError::BadLength);
    }
    if let Some(&bad) = psi.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::BadProbability(bad));
    }
    Ok(())
}

/// Mean squared error between predicted probabilities and binary labels.
pub fn brier(psi: &[f64], y: &[bool]) -> Result<f64, MetricsError> {
    validate(psi, y)?;
    let n = psi.len() as f64;
    Ok(psi
        .iter()
        .zip(y)
        .map(|(&p, &label)| {
            let target = f64::from(u8::from(label));
            (p - target) * (p - target)
        })
        .sum::<f64>()
        / n)
}

/// Fraction of predictions equal to their labels.
pub fn accuracy(predictions: &[bool], y: &[bool]) -> Result<f64, MetricsError> {
    if predictions.is_empty() || predictions.len() != y.len() {
        return Err(MetricsError::BadLength);
    }
    let hits = predictions.iter().zip(y).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Predicted label at the fixed 0.5 threshold; ties go to the negative class.
pub fn threshold_label(psi: f64) -> bool {
    psi > 0.5
}

/// Expected calibration error with the default Ψ binning.
pub fn ece(psi: &[f64], y: &[bool], n_bins: usize) -> Result<CalibrationReport, MetricsError> {
    ece_binned(psi, y, n_bins, BinningMode::Psi)
}

/// Expected calibration error under the chosen binning key. Per-bin accuracy
/// always compares the thresholded prediction to the label, and per-bin
/// confidence is the mean of `max(Ψ, 1-Ψ)`; the weighted absolute gaps are
/// summed. The Brier score of the same predictions rides along.
pub fn ece_binned(
    psi: &[f64],
    y: &[bool],
    n_bins: usize,
    binning: BinningMode,
) -> Result<CalibrationReport, MetricsError> {
    validate(psi, y)?;
    if n_bins == 0 {
        return Err(MetricsError::BadBins);
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sums = vec![0.0; n_bins];
    let mut hit_sums = vec![0.0; n_bins];
    for (&p, &label) in psi.iter().zip(y) {
        let key = match binning {
            BinningMode::Psi => p,
            BinningMode::MaxConfidence => p.max(1.0 - p),
        };
        // bin m (1-indexed) covers ((m-1)/M, m/M]; key 0 goes to bin 1
        let mut bin = (key * n_bins as f64).ceil() as usize;
        bin = bin.clamp(1, n_bins) - 1;
        counts[bin] += 1;
        conf_sums[bin] += p.max(1.0 - p);
        hit_sums[bin] += f64::from(u8::from(threshold_label(p) == label));
    }
    let n = psi.len() as f64;
    let mut total = 0.0;
    let mut bins = Vec::with_capacity(n_bins);
    for m in 0..n_bins {
        if counts[m] == 0 {
            bins.push(BinRecord {
                count: 0,
                mean_confidence: 0.0,
                mean_accuracy: 0.0,
            });
            continue;
        }
        let c = counts[m] as f64;
        let conf = conf_sums[m] / c;
        let acc = hit_sums[m] / c;
        total += (c / n) * (acc - conf).abs();
        bins.push(BinRecord {
            count: counts[m],
            mean_confidence: conf,
            mean_accuracy: acc,
        });
    }
    Ok(CalibrationReport {
        brier: brier(psi, y)?,
        ece: total,
        n_bins,
        binning,
        bins,
    })
}
