//! Estimating the number of new classes with short probe trainings.
//!
//! A probe model with `K_old + k` prototypes is scored by
//! `acc_score * centr_score`: labeled accuracy drops when `k` is too large
//! (labeled samples leak into spare prototypes) and the centroid agreement
//! drops when `k` is too small (new-class samples are absorbed by old
//! prototypes). Candidates are searched by bisection on adjacent pairs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::evaluation::{embed_all, predict};
use crate::model::ModelParams;
use crate::rng::derive_seed;
use crate::sphere::{dot, normalize};
use crate::trainer::{train, TrainConfig};
use crate::Scalar;

/// Factor used for an old class with no predicted unlabeled member or a
/// negative centroid cosine.
pub const CENTROID_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub candidate: usize,
    pub acc_score: f64,
    pub centr_score: f64,
    pub proto_score: f64,
}

impl ScoreTriple {
    pub fn new(candidate: usize, acc_score: f64, centr_score: f64) -> Self {
        ScoreTriple {
            candidate,
            acc_score,
            centr_score,
            proto_score: acc_score * centr_score,
        }
    }
}

/// Score used to compare candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Proto,
    /// Labeled accuracy alone (baseline).
    AccOnly,
}

impl ScoreMode {
    pub fn value(self, s: &ScoreTriple) -> f64 {
        match self {
            ScoreMode::Proto => s.proto_score,
            ScoreMode::AccOnly => s.acc_score,
        }
    }
}

/// Fraction of labeled samples whose argmax prediction is their label.
pub fn acc_score<T: Scalar>(params: &ModelParams<T>, dataset: &EmbeddingDataset<T>) -> Result<f64> {
    let preds = predict(params, dataset.features())?;
    let (mut hit, mut n) = (0usize, 0usize);
    for (i, &p) in preds.iter().enumerate() {
        if let Some(y) = dataset.labeled_label(i) {
            n += 1;
            hit += (p == y) as usize;
        }
    }
    if n == 0 {
        return Err(Error::domain("acc_score needs labeled samples"));
    }
    Ok(hit as f64 / n as f64)
}

fn centroid<T: Scalar>(z: &Array2<T>, members: impl Iterator<Item = usize>) -> Option<Vec<T>> {
    let mut sum = vec![T::zero(); z.ncols()];
    let mut any = false;
    for i in members {
        any = true;
        sum.iter_mut()
            .zip(z.row(i).iter())
            .for_each(|(s, &v)| *s = *s + v);
    }
    any.then_some(sum)
}

/// Product over old classes of the cosine between the labeled centroid
/// (true labels) and the unlabeled centroid (predicted labels) of the
/// learned features.
pub fn centr_score<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &EmbeddingDataset<T>,
) -> Result<f64> {
    let z = embed_all(params, dataset.features())?;
    let preds = predict(params, dataset.features())?;
    let mut score = 1.0;
    for &k in dataset.old_classes() {
        let labeled = centroid(
            &z,
            (0..dataset.len()).filter(|&i| dataset.labeled_label(i) == Some(k)),
        )
        .ok_or_else(|| Error::domain(format!("old class {k} has no labeled samples")))?;
        let c_l = normalize(&labeled)
            .map_err(|_| Error::domain(format!("labeled centroid of class {k} is zero")))?;
        let unlabeled = centroid(
            &z,
            (0..dataset.len()).filter(|&i| !dataset.is_labeled(i) && preds[i] == k),
        );
        let factor = match unlabeled {
            None => CENTROID_EPSILON,
            Some(u) => {
                let c_u = normalize(&u).map_err(|_| {
                    Error::domain(format!("unlabeled centroid of class {k} is zero"))
                })?;
                let cos = dot(&c_l, &c_u).as_f64().min(1.0);
                if cos < 0.0 {
                    CENTROID_EPSILON
                } else {
                    cos
                }
            }
        };
        score *= factor;
    }
    Ok(score)
}

pub fn proto_score<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &EmbeddingDataset<T>,
    candidate: usize,
) -> Result<ScoreTriple> {
    Ok(ScoreTriple::new(
        candidate,
        acc_score(params, dataset)?,
        centr_score(params, dataset)?,
    ))
}

/// Trains a fresh model with `K_old + candidate` prototypes for
/// `probe_epochs` epochs and scores it.
///
/// Every candidate uses the same derived seed, so probes differ only in the
/// number of prototypes (the first ones even start identical), and the
/// learning rate follows the opening epochs of the full schedule instead of
/// decaying within the probe.
pub fn probe<T: Scalar + Serialize>(
    dataset: &EmbeddingDataset<T>,
    candidate: usize,
    probe_epochs: usize,
    cfg: &TrainConfig<T>,
) -> Result<ScoreTriple> {
    let k = dataset.old_classes().len() + candidate;
    if k < 2 {
        return Ok(ScoreTriple::new(candidate, 0.0, 0.0));
    }
    let mut c = *cfg;
    c.epochs = probe_epochs;
    c.schedule_epochs = Some(cfg.schedule_epochs.unwrap_or(cfg.epochs));
    c.dims.num_classes = Some(k);
    c.seed = derive_seed(cfg.seed, 0x5052_4f42);
    let (params, _) = train(dataset, &c)?;
    proto_score(&params, dataset, candidate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub k_a: usize,
    pub k_b: usize,
    pub c1: ScoreTriple,
    pub c2: ScoreTriple,
    /// Score at the new left boundary when it moved (recorded, not used).
    pub p_a: Option<f64>,
    /// Score at the new right boundary when it moved (recorded, not used).
    pub p_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub k_new: usize,
    pub steps: Vec<SearchStep>,
}

/// Bisection over `[0, k_max]` with an arbitrary scorer. Each step scores
/// the adjacent pair `(c, c + 1)` at the midpoint and keeps the half that
/// holds the larger score.
pub fn estimate_k_with<F>(k_max: usize, mode: ScoreMode, score: F) -> Result<Estimate>
where
    F: Fn(usize) -> Result<ScoreTriple> + Sync,
{
    let (mut k_a, mut k_b) = (0, k_max);
    let mut steps = Vec::new();
    while k_a < k_b {
        let c1 = (k_a + k_b) / 2;
        let c2 = c1 + 1;
        let (s1, s2) = rayon::join(|| score(c1), || score(c2));
        let (s1, s2) = (s1?, s2?);
        let mut step = SearchStep {
            k_a,
            k_b,
            c1: s1,
            c2: s2,
            p_a: None,
            p_b: None,
        };
        if mode.value(&s1) < mode.value(&s2) {
            k_a = c2;
            step.p_a = Some(mode.value(&s2));
        } else {
            k_b = c1;
            step.p_b = Some(mode.value(&s1));
        }
        steps.push(step);
    }
    Ok(Estimate { k_new: k_a, steps })
}

pub fn estimate_k<T: Scalar + Serialize>(
    dataset: &EmbeddingDataset<T>,
    k_max: usize,
    probe_epochs: usize,
    cfg: &TrainConfig<T>,
    mode: ScoreMode,
) -> Result<Estimate> {
    if probe_epochs == 0 {
        return Err(Error::config("probe_epochs must be at least 1"));
    }
    estimate_k_with(k_max, mode, |c| probe(dataset, c, probe_epochs, cfg))
}

/// Scores every candidate in `0..=k_max`.
pub fn sweep<T: Scalar + Serialize>(
    dataset: &EmbeddingDataset<T>,
    k_max: usize,
    probe_epochs: usize,
    cfg: &TrainConfig<T>,
) -> Result<Vec<ScoreTriple>> {
    use rayon::prelude::*;
    (0..=k_max)
        .into_par_iter()
        .map(|c| probe(dataset, c, probe_epochs, cfg))
        .collect()
}

/// Candidate with the largest score; the smallest one on ties.
pub fn sweep_argmax(scores: &[ScoreTriple], mode: ScoreMode) -> Option<usize> {
    scores
        .iter()
        .fold(None::<&ScoreTriple>, |best, s| match best {
            Some(b) if mode.value(b) >= mode.value(s) => Some(b),
            _ => Some(s),
        })
        .map(|s| s.candidate)
}

/// True when the scores rise (weakly) to a single peak and then fall.
pub fn is_unimodal(scores: &[ScoreTriple], mode: ScoreMode) -> bool {
    let v: Vec<f64> = scores.iter().map(|s| mode.value(s)).collect();
    let mut i = 0;
    while i + 1 < v.len() && v[i + 1] >= v[i] {
        i += 1;
    }
    v[i..].windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn oracle(peak: usize) -> impl Fn(usize) -> Result<ScoreTriple> + Sync {
        move |c| {
            let d = (c as f64 - peak as f64).abs();
            Ok(ScoreTriple::new(c, 1.0 / (1.0 + d), 1.0))
        }
    }

    #[test]
    fn triple_identity() {
        assert_eq!(ScoreTriple::new(0, 1.0, 1.0).proto_score, 1.0);
        assert_eq!(ScoreTriple::new(0, 0.5, 0.5).proto_score, 0.25);
        assert_eq!(ScoreTriple::new(0, 0.7, 0.0).proto_score, 0.0);
    }

    #[test]
    fn empty_range() {
        let calls = AtomicUsize::new(0);
        let e = estimate_k_with(0, ScoreMode::Proto, |c| {
            calls.fetch_add(1, Ordering::SeqCst);
            oracle(3)(c)
        })
        .unwrap();
        assert_eq!(e.k_new, 0);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn unimodal_oracle_found_within_log_steps() {
        for k_max in 1..40usize {
            for peak in 0..=k_max {
                let calls = AtomicUsize::new(0);
                let e = estimate_k_with(k_max, ScoreMode::Proto, |c| {
                    calls.fetch_add(1, Ordering::SeqCst);
                    oracle(peak)(c)
                })
                .unwrap();
                assert_eq!(e.k_new, peak, "k_max={k_max}");
                let bound = ((k_max + 1) as f64).log2().ceil() as usize;
                assert!(e.steps.len() <= bound);
                assert_eq!(calls.load(Ordering::SeqCst), 2 * e.steps.len());
            }
        }
    }

    #[test]
    fn sweep_helpers() {
        let s: Vec<ScoreTriple> = (0..6).map(|c| oracle(2)(c).unwrap()).collect();
        assert_eq!(sweep_argmax(&s, ScoreMode::Proto), Some(2));
        assert!(is_unimodal(&s, ScoreMode::Proto));
        let mut bumpy = s.clone();
        bumpy[5] = ScoreTriple::new(5, 0.9, 1.0);
        assert!(!is_unimodal(&bumpy, ScoreMode::Proto));
    }
}
