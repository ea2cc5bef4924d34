use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};
use crate::sphere::{dot, sample_uniform_sphere, sample_vmf, UnitVector, VmfComponent};
use crate::Scalar;

/// Either one count for every class or an explicit count per class
/// (long-tailed layouts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplesPerClass {
    Constant(usize),
    PerClass(Vec<usize>),
}

impl SamplesPerClass {
    pub fn count(&self, class: usize) -> usize {
        match self {
            SamplesPerClass::Constant(c) => *c,
            SamplesPerClass::PerClass(v) => v[class],
        }
    }
}

/// Parameters of a synthetic vMF-mixture GCD problem. Classes
/// `0..old_classes` are old; the remaining ones are new.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub total_classes: usize,
    pub old_classes: usize,
    pub dim: usize,
    pub samples_per_class: SamplesPerClass,
    pub concentration: f64,
    pub labeled_fraction: f64,
    /// Minimum pairwise angle between prototype directions, radians.
    pub min_prototype_angle: f64,
    /// Extra directions placed under the same angle constraint but not used
    /// for samples; they serve as out-of-distribution components.
    pub holdout_classes: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            total_classes: 10,
            old_classes: 5,
            dim: 16,
            samples_per_class: SamplesPerClass::Constant(200),
            concentration: 50.0,
            labeled_fraction: 0.5,
            min_prototype_angle: 25f64.to_radians(),
            holdout_classes: 0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_classes == 0 {
            return Err(Error::config("total_classes must be positive"));
        }
        if self.old_classes > self.total_classes {
            return Err(Error::config(format!(
                "old_classes {} exceeds total_classes {}",
                self.old_classes, self.total_classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::config("dimension must be >= 2"));
        }
        match &self.samples_per_class {
            SamplesPerClass::Constant(0) => {
                return Err(Error::config("samples_per_class must be positive"))
            }
            SamplesPerClass::PerClass(v) if v.len() != self.total_classes => {
                return Err(Error::config(format!(
                    "{} per-class counts for {} classes",
                    v.len(),
                    self.total_classes
                )))
            }
            SamplesPerClass::PerClass(v) if v.contains(&0) => {
                return Err(Error::config("per-class counts must be positive"))
            }
            _ => {}
        }
        if !(self.concentration > 0.0) || !self.concentration.is_finite() {
            return Err(Error::config("concentration must be positive and finite"));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::config("labeled_fraction must lie in (0, 1]"));
        }
        if !(self.min_prototype_angle >= 0.0) {
            return Err(Error::config("min_prototype_angle must be >= 0"));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticSet<T> {
    pub dataset: EmbeddingDataset<T>,
    pub prototypes: Vec<UnitVector<T>>,
    pub holdout_prototypes: Vec<UnitVector<T>>,
}

const PLACEMENT_RETRIES: usize = 10_000;

/// Samples a GCD problem: prototype directions with a minimum pairwise angle,
/// vMF samples around each, and a labeled share of every old class.
///
/// Features are rounded to `f32` precision so that the binary embedding format
/// round-trips them exactly.
pub fn generate_synthetic<T: Scalar>(cfg: &SyntheticConfig) -> Result<SyntheticSet<T>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, streams::PROTOTYPES);
    let directions = place_directions(
        &mut rng,
        cfg.total_classes + cfg.holdout_classes,
        cfg.dim,
        cfg.min_prototype_angle,
    )?;
    let (prototypes, holdout) = directions.split_at(cfg.total_classes);

    let counts: Vec<usize> = (0..cfg.total_classes)
        .map(|k| cfg.samples_per_class.count(k))
        .collect();
    let mut rng = stream_rng(cfg.seed, streams::SAMPLES);
    let (features, labels) = draw_class_samples(prototypes, &counts, cfg.concentration, &mut rng)?;

    let mut rng = stream_rng(cfg.seed, streams::LABELED_SPLIT);
    let mut mask = vec![false; labels.len()];
    let mut start = 0;
    for (k, &c) in counts.iter().enumerate() {
        if k < cfg.old_classes {
            let take = ((c as f64) * cfg.labeled_fraction + 1e-9).floor() as usize;
            let mut members: Vec<usize> = (start..start + c).collect();
            members.shuffle(&mut rng);
            for &i in &members[..take] {
                mask[i] = true;
            }
        }
        start += c;
    }

    let dataset = EmbeddingDataset::new(
        features,
        labels,
        mask,
        (0..cfg.old_classes).collect(),
        cfg.total_classes,
    )?
    .with_seed(Some(cfg.seed));
    Ok(SyntheticSet {
        dataset,
        prototypes: prototypes.to_vec(),
        holdout_prototypes: holdout.to_vec(),
    })
}

/// Draws `counts[k]` vMF samples around `prototypes[k]`, class blocks in order.
/// Rows are rounded to `f32` precision.
pub fn draw_class_samples<T: Scalar, R: Rng + ?Sized>(
    prototypes: &[UnitVector<T>],
    counts: &[usize],
    concentration: f64,
    rng: &mut R,
) -> Result<(Array2<T>, Vec<usize>)> {
    if prototypes.len() != counts.len() {
        return Err(Error::config("one count per prototype required"));
    }
    let dim = prototypes.first().map_or(0, |p| p.dim());
    let n: usize = counts.iter().sum();
    let mut features = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (k, (mu, &c)) in prototypes.iter().zip(counts).enumerate() {
        let component = VmfComponent::new(mu.clone(), T::of(concentration))?;
        for _ in 0..c {
            let x = sample_vmf(rng, &component);
            for (dst, &v) in features.row_mut(row).iter_mut().zip(x.iter()) {
                *dst = T::of(v.as_f64() as f32 as f64);
            }
            labels.push(k);
            row += 1;
        }
    }
    Ok((features, labels))
}

/// `n` samples spread as evenly as possible over `prototypes` (earlier
/// components take the remainder).
pub fn sample_components<T: Scalar, R: Rng + ?Sized>(
    prototypes: &[UnitVector<T>],
    n: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<Array2<T>> {
    if prototypes.is_empty() {
        return Err(Error::config("no components to sample from"));
    }
    let k = prototypes.len();
    let counts: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
    Ok(draw_class_samples(prototypes, &counts, concentration, rng)?.0)
}

fn place_directions<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    dim: usize,
    min_angle: f64,
) -> Result<Vec<UnitVector<T>>> {
    let max_cos = min_angle.cos();
    let mut placed: Vec<UnitVector<T>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut accepted = None;
        for _ in 0..PLACEMENT_RETRIES {
            let cand: UnitVector<T> = sample_uniform_sphere(rng, dim);
            if placed.iter().all(|p| dot(p, &cand).as_f64() <= max_cos) {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(c) => placed.push(c),
            None => {
                return Err(Error::config(format!(
                    "could not place direction {} of {count} with pairwise angle >= {:.2} rad in {dim} dimensions",
                    k + 1,
                    min_angle
                )))
            }
        }
    }
    Ok(placed)
}
