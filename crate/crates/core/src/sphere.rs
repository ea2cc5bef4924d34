//! Hypersphere numerics: normalization, cosine similarity, tempered softmax,
//! entropy and von Mises-Fisher sampling.

use std::ops::Deref;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::Scalar;

/// Tolerance used when validating unit norms and probability sums.
pub(crate) fn tolerance<T: Scalar>(len: usize) -> T {
    let eps = T::epsilon() * T::of_usize(16 * len.max(1));
    eps.max(T::of(1e-9))
}

/// A vector of Euclidean norm one.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<T>(Vec<T>);

impl<T: Scalar> UnitVector<T> {
    /// Wraps `v` after checking that it has unit norm.
    pub fn new(v: Vec<T>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::domain(format!(
                "unit vectors need dimension >= 2, got {}",
                v.len()
            )));
        }
        let n = norm(&v);
        if (n - T::one()).abs() > tolerance::<T>(v.len()) * T::of(10.0) {
            return Err(Error::domain(format!("vector norm {n} is not 1")));
        }
        Ok(UnitVector(v))
    }

    /// Trusts the caller; only for vectors produced by [`normalize`]-like code.
    pub(crate) fn from_normalized(v: Vec<T>) -> Self {
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn negated(&self) -> Self {
        UnitVector(self.0.iter().map(|&x| -x).collect())
    }
}

impl<T> Deref for UnitVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector<T>(Vec<T>);

impl<T: Scalar> ProbabilityVector<T> {
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::domain("empty probability vector"));
        }
        if let Some(bad) = p.iter().find(|&&x| !(x >= T::zero() && x <= T::one())) {
            return Err(Error::domain(format!(
                "probability entry {bad} outside [0,1]"
            )));
        }
        let s: T = p.iter().copied().sum();
        if (s - T::one()).abs() > tolerance::<T>(p.len()) {
            return Err(Error::domain(format!("probabilities sum to {s}")));
        }
        Ok(ProbabilityVector(p))
    }

    pub(crate) fn from_trusted(p: Vec<T>) -> Self {
        ProbabilityVector(p)
    }

    pub fn uniform(k: usize) -> Self {
        ProbabilityVector(vec![T::one() / T::of_usize(k); k])
    }

    pub fn one_hot(k: usize, at: usize) -> Self {
        let mut p = vec![T::zero(); k];
        p[at] = T::one();
        ProbabilityVector(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    /// Index of the largest entry (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn entropy(&self) -> T {
        entropy_unchecked(&self.0)
    }
}

impl<T> Deref for ProbabilityVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// vMF component: mean direction and concentration `kappa` (0 = uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct VmfComponent<T> {
    pub mean_direction: UnitVector<T>,
    pub concentration: T,
}

impl<T: Scalar> VmfComponent<T> {
    pub fn new(mean_direction: UnitVector<T>, concentration: T) -> Result<Self> {
        if !(concentration >= T::zero()) || !concentration.is_finite() {
            return Err(Error::domain(format!(
                "vMF concentration must be finite and >= 0, got {concentration}"
            )));
        }
        Ok(VmfComponent {
            mean_direction,
            concentration,
        })
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Index of the largest entry; NaNs are never selected unless all are NaN.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

pub fn normalize<T: Scalar>(v: &[T]) -> Result<UnitVector<T>> {
    let n = norm(v);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::domain(
            "cannot normalize a zero or non-finite vector",
        ));
    }
    if v.len() < 2 {
        return Err(Error::domain("unit vectors need dimension >= 2"));
    }
    Ok(UnitVector(v.iter().map(|&x| x / n).collect()))
}

/// Cosine of two unit vectors, clamped into [-1, 1].
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    check_dim(u.len(), v.len())?;
    Ok(dot(u, v).max(-T::one()).min(T::one()))
}

/// `softmax(logits / temperature)` with max-subtraction. NaN logits get zero
/// mass; it is an error when every logit is NaN.
pub fn tempered_softmax<T: Scalar>(logits: &[T], temperature: T) -> Result<ProbabilityVector<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() || logits.iter().all(|x| x.is_nan()) {
        return Err(Error::domain("softmax needs at least one non-NaN logit"));
    }
    let max = logits
        .iter()
        .copied()
        .filter(|x| !x.is_nan())
        .fold(T::neg_infinity(), T::max);
    if max == T::infinity() {
        let hits = logits.iter().filter(|&&x| x == max).count();
        let share = T::one() / T::of_usize(hits);
        return Ok(ProbabilityVector(
            logits
                .iter()
                .map(|&x| if x == max { share } else { T::zero() })
                .collect(),
        ));
    }
    Ok(ProbabilityVector(softmax_shifted(logits, temperature, max)))
}

/// Softmax for finite logits; callers guarantee the preconditions.
pub(crate) fn softmax_unchecked<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    softmax_shifted(logits, temperature, max)
}

fn softmax_shifted<T: Scalar>(logits: &[T], temperature: T, max: T) -> Vec<T> {
    let mut out: Vec<T> = logits
        .iter()
        .map(|&x| {
            if x.is_nan() {
                T::zero()
            } else {
                ((x - max) / temperature).exp()
            }
        })
        .collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x = *x / z);
    out
}

/// `log Σ exp(x_k / temperature)` computed stably.
pub fn log_sum_exp<T: Scalar>(logits: &[T], temperature: T) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = logits
        .iter()
        .map(|&x| ((x - max) / temperature).exp())
        .sum();
    max / temperature + s.ln()
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> Result<T> {
    if let Some(bad) = p.iter().find(|&&x| !(x >= T::zero())) {
        return Err(Error::domain(format!("negative probability entry {bad}")));
    }
    Ok(entropy_unchecked(p))
}

pub(crate) fn entropy_unchecked<T: Scalar>(p: &[T]) -> T {
    -p.iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| x * x.ln())
        .sum::<T>()
}

/// `KL(p || uniform)` over `p.len()` categories.
pub fn kl_to_uniform<T: Scalar>(p: &[T]) -> T {
    let k = T::of_usize(p.len());
    p.iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| x * (x * k).ln())
        .sum()
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn sample_uniform_sphere<T: Scalar, R: Rng + ?Sized>(rng: &mut R, dim: usize) -> UnitVector<T> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            return UnitVector(g.iter().map(|&x| T::of(x / n)).collect());
        }
    }
}

/// Draws one sample from vMF(mean, kappa).
///
/// The cosine to the mean direction is drawn with Wood's envelope-rejection
/// sampler; the remaining tangent direction is uniform on the orthogonal
/// complement of the mean.
pub fn sample_vmf<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    component: &VmfComponent<T>,
) -> UnitVector<T> {
    let mu: Vec<f64> = component
        .mean_direction
        .iter()
        .map(|x| x.as_f64())
        .collect();
    let kappa = component.concentration.as_f64();
    let dim = mu.len();
    if kappa == 0.0 {
        return sample_uniform_sphere(rng, dim);
    }
    let w = sample_vmf_cosine(rng, kappa, dim);

    // tangent direction: gaussian with the mean component removed
    let tangent = loop {
        let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&g, &mu);
        g.iter_mut().zip(&mu).for_each(|(x, m)| *x -= along * m);
        let n = norm(&g);
        if n > 1e-12 {
            g.iter_mut().for_each(|x| *x /= n);
            break g;
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    let x: Vec<f64> = mu
        .iter()
        .zip(&tangent)
        .map(|(m, t)| w * m + s * t)
        .collect();
    let n = norm(&x);
    UnitVector(x.iter().map(|&v| T::of(v / n)).collect())
}

fn sample_vmf_cosine<R: Rng + ?Sized>(rng: &mut R, kappa: f64, dim: usize) -> f64 {
    let m = (dim - 1) as f64;
    // b = (-2κ + sqrt(4κ² + m²)) / m, written without cancellation
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).expect("valid beta parameters");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w;
        }
    }
}
