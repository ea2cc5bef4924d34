//! Momentum SGD with prototype projection, the cosine learning-rate schedule
//! and a central finite-difference gradient checker.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct OptimizerConfig<T> {
    pub lr0: T,
    pub lr_min: T,
    pub momentum: T,
    pub total_epochs: usize,
    pub weight_decay: T,
}

impl<T: Scalar> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig {
            lr0: T::of(0.1),
            lr_min: T::of(1e-4),
            momentum: T::of(0.9),
            total_epochs: 200,
            weight_decay: T::zero(),
        }
    }
}

impl<T: Scalar> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > T::zero()) {
            return Err(Error::config("lr0 must be positive"));
        }
        if !(self.lr_min >= T::zero() && self.lr_min <= self.lr0) {
            return Err(Error::config("lr_min must lie in [0, lr0]"));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= T::zero()) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min)(1 + cos(pi e / E)) / 2`; `E = 0` yields `lr0`.
pub fn cosine_lr<T: Scalar>(epoch: usize, cfg: &OptimizerConfig<T>) -> Result<T> {
    if epoch > cfg.total_epochs {
        return Err(Error::domain(format!(
            "epoch {epoch} beyond schedule length {}",
            cfg.total_epochs
        )));
    }
    if cfg.total_epochs == 0 {
        return Ok(cfg.lr0);
    }
    let frac = T::of_usize(epoch) / T::of_usize(cfg.total_epochs);
    let cos = (T::PI() * frac).cos();
    Ok(cfg.lr_min + T::of(0.5) * (cfg.lr0 - cfg.lr_min) * (T::one() + cos))
}

/// Momentum SGD state (velocity buffers).
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub config: OptimizerConfig<T>,
    velocity: Option<Gradients<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: OptimizerConfig<T>) -> Self {
        Sgd {
            config,
            velocity: None,
        }
    }

    /// `v <- m v + (g + wd p)`, `p <- p - lr v`, then prototypes back onto
    /// the unit sphere.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.adapter.dim() != params.adapter.dim()
            || grads.prototypes.dim() != params.prototypes.dim()
            || grads.projection.dim() != params.projection.dim()
        {
            return Err(Error::domain("gradient shapes do not match parameters"));
        }
        if !grads.is_finite() {
            let bad = grads
                .flatten()
                .iter()
                .position(|x| !x.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFinite(format!(
                "gradient coordinate {bad} is not finite"
            )));
        }
        let m = self.config.momentum;
        let wd = self.config.weight_decay;
        let v = self.velocity.get_or_insert_with(|| params.zero_gradients());
        for (p, g, v) in [
            (&mut params.adapter, &grads.adapter, &mut v.adapter),
            (&mut params.prototypes, &grads.prototypes, &mut v.prototypes),
            (&mut params.projection, &grads.projection, &mut v.projection),
        ] {
            ndarray::Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                *v = m * *v + g + wd * *p;
                *p = *p - lr * *v;
            });
        }
        params.project_prototypes();
        Ok(())
    }
}

/// Central differences on `probes` random coordinates (all of them when
/// `probes >= x.len()`). Returns the maximum of
/// `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn finite_diff_check<T, F, R>(
    mut loss: F,
    x: &[T],
    analytic: &[T],
    probes: usize,
    h: T,
    rng: &mut R,
) -> Result<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
    R: Rng + ?Sized,
{
    if !(h > T::zero()) {
        return Err(Error::domain("finite-difference step must be positive"));
    }
    if x.len() != analytic.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: analytic.len(),
        });
    }
    let coords: Vec<usize> = if probes >= x.len() {
        (0..x.len()).collect()
    } else {
        let mut c = sample(rng, x.len(), probes).into_vec();
        c.sort_unstable();
        c
    };
    let mut work = x.to_vec();
    let mut worst = T::zero();
    let two = T::of(2.0);
    for i in coords {
        work[i] = x[i] + h;
        let plus = loss(&work)?;
        work[i] = x[i] - h;
        let minus = loss(&work)?;
        work[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at probe coordinate {i}")));
        }
        let numeric = (plus - minus) / (two * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(T::of(1e-8));
        worst = worst.max(err);
    }
    Ok(worst)
}
