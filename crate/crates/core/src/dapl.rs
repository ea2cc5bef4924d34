//! Dual-level adaptive pseudo-labeling.
//!
//! Level one decides per sample: a sample whose prototype confidence reaches
//! the epoch threshold gets a one-hot target, every other sample gets a
//! sharpened soft target. Level two decides per epoch: the share of
//! unlabeled samples receiving hard targets ramps linearly from 0 to 1 over
//! `e_ramp` epochs, and the threshold is the matching order statistic of the
//! unlabeled confidences.

use crate::error::{Error, Result};
use crate::sphere::{argmax, softmax_unchecked, ProbabilityVector};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel<T> {
    pub target: ProbabilityVector<T>,
    pub is_hard: bool,
    pub confidence: T,
}

/// Threshold state for one epoch, built from a full pass over the unlabeled
/// samples with the current model.
#[derive(Debug, Clone, PartialEq)]
pub struct DaplEpochState<T> {
    pub epoch: usize,
    pub hard_ratio: f64,
    pub threshold: T,
    pub unlabeled_confidences: Vec<T>,
}

impl<T: Scalar> DaplEpochState<T> {
    pub fn build(epoch: usize, e_ramp: usize, unlabeled_confidences: Vec<T>) -> Result<Self> {
        let hard_ratio = ramp_ratio(epoch, e_ramp);
        let threshold = if unlabeled_confidences.is_empty() {
            T::infinity()
        } else {
            epoch_threshold(&unlabeled_confidences, hard_ratio)?
        };
        Ok(DaplEpochState {
            epoch,
            hard_ratio,
            threshold,
            unlabeled_confidences,
        })
    }

    /// Number of unlabeled samples at or above the threshold.
    pub fn hard_count(&self) -> usize {
        self.unlabeled_confidences
            .iter()
            .filter(|&&c| c >= self.threshold)
            .count()
    }

    pub fn hard_fraction(&self) -> f64 {
        if self.unlabeled_confidences.is_empty() {
            0.0
        } else {
            self.hard_count() as f64 / self.unlabeled_confidences.len() as f64
        }
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.unlabeled_confidences.is_empty() {
            return 0.0;
        }
        self.unlabeled_confidences
            .iter()
            .map(|c| c.as_f64())
            .sum::<f64>()
            / self.unlabeled_confidences.len() as f64
    }
}

/// `exp((top1 - top2) / tau_conf)` over the two largest logits; always >= 1.
pub fn proto_confidence<T: Scalar>(logits: &[T], tau_conf: T) -> Result<T> {
    if logits.len() < 2 {
        return Err(Error::domain(format!(
            "prototype confidence needs K >= 2, got {}",
            logits.len()
        )));
    }
    let (mut top1, mut top2) = (T::neg_infinity(), T::neg_infinity());
    for &s in logits {
        if s > top1 {
            top2 = top1;
            top1 = s;
        } else if s > top2 {
            top2 = s;
        }
    }
    Ok(((top1 - top2) / tau_conf).exp())
}

/// Linear ramp `epoch / e_ramp` clipped to [0, 1]; `e_ramp = 0` means 1.
pub fn ramp_ratio(epoch: usize, e_ramp: usize) -> f64 {
    if e_ramp == 0 || epoch >= e_ramp {
        1.0
    } else {
        epoch as f64 / e_ramp as f64
    }
}

/// `floor(n * r)`, robust to `r` being a rounded ratio of integers.
pub fn hard_count(n: usize, ratio: f64) -> usize {
    (((n as f64) * ratio + 1e-9).floor() as usize).min(n)
}

/// Threshold admitting the `floor(n*r)` most confident samples: `+inf` when
/// that count is zero, `1` (every confidence qualifies) when `r >= 1`.
pub fn epoch_threshold<T: Scalar>(confidences: &[T], ratio: f64) -> Result<T> {
    if ratio <= 0.0 {
        return Ok(T::infinity());
    }
    if confidences.is_empty() {
        return Err(Error::domain(
            "no unlabeled confidences for a positive hard ratio",
        ));
    }
    if ratio >= 1.0 {
        return Ok(T::one());
    }
    let m = hard_count(confidences.len(), ratio);
    if m == 0 {
        return Ok(T::infinity());
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    Ok(sorted[m - 1])
}

/// One-hot target when the confidence reaches `threshold`, otherwise
/// `softmax(logits / tau_sharp)`.
pub fn assign_pseudo_label<T: Scalar>(
    logits: &[T],
    threshold: T,
    tau_base: T,
    tau_sharp: T,
    tau_conf: T,
) -> Result<PseudoLabel<T>> {
    if !(tau_sharp > T::zero() && tau_base > tau_sharp) {
        return Err(Error::config(format!(
            "sharpening requires tau_base > tau_sharp > 0, got {tau_base} and {tau_sharp}"
        )));
    }
    let confidence = proto_confidence(logits, tau_conf)?;
    let is_hard = confidence >= threshold;
    let target = if is_hard {
        ProbabilityVector::one_hot(logits.len(), argmax(logits))
    } else {
        ProbabilityVector::from_trusted(softmax_unchecked(logits, tau_sharp))
    };
    Ok(PseudoLabel {
        target,
        is_hard,
        confidence,
    })
}
