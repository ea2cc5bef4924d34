//! Learnable parameters and the forward/backward pass.
//!
//! For an input embedding `x` the model computes
//!
//! ```text
//! z = normalize(A x)           feature        (A: adapter, d x d_in)
//! s_k = <mu_k, z>              logits         (mu_k: prototype rows, K x d)
//! p = softmax(s / tau_base)    posterior
//! h = normalize(W^T z)         projection     (W: d x d_h)
//! ```

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_header, write_header};
use crate::error::{check_dim, Error, Result};
use crate::sphere::{
    dot, norm, sample_uniform_sphere, softmax_unchecked, tempered_softmax, ProbabilityVector,
    UnitVector,
};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Identity adapter (requires `d_in == d`).
    #[default]
    Identity,
    /// Gaussian adapter with entries of variance `1/d_in`.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// `d x d_in`; row `r` produces feature coordinate `r`.
    pub adapter: Array2<T>,
    /// `K x d`, unit rows.
    pub prototypes: Array2<T>,
    /// `d x d_h`.
    pub projection: Array2<T>,
    pub k_old: usize,
}

/// Gradients with the shapes of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub adapter: Array2<T>,
    pub prototypes: Array2<T>,
    pub projection: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs<T> {
    pub feature: UnitVector<T>,
    pub projection: UnitVector<T>,
    pub logits: Vec<T>,
    pub posterior: ProbabilityVector<T>,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    pub input: Vec<T>,
    pub feature: Vec<T>,
    pub feature_norm: T,
    pub projection: Vec<T>,
    pub projection_norm: T,
    pub logits: Vec<T>,
    pub posterior: Vec<T>,
}

pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    d_in: usize,
    d: usize,
    d_h: usize,
    k: usize,
    k_old: usize,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    if d_in == 0 || d < 2 || d_h < 2 || k == 0 {
        return Err(Error::config(format!(
            "invalid dimensions d_in={d_in} d={d} d_h={d_h} K={k}"
        )));
    }
    if k_old > k {
        return Err(Error::config(format!("K_old={k_old} exceeds K={k}")));
    }
    let adapter = match strategy {
        InitStrategy::Identity => {
            if d_in != d {
                return Err(Error::config(format!(
                    "identity adapter needs d_in == d, got {d_in} and {d}"
                )));
            }
            Array2::eye(d)
        }
        InitStrategy::Random => gaussian_matrix(rng, d, d_in, 1.0 / (d_in as f64).sqrt()),
    };
    let mut prototypes = Array2::zeros((k, d));
    for mut row in prototypes.rows_mut() {
        let u: UnitVector<T> = sample_uniform_sphere(rng, d);
        row.iter_mut().zip(u.iter()).for_each(|(dst, &v)| *dst = v);
    }
    let projection = gaussian_matrix(rng, d, d_h, 1.0 / (d_h as f64).sqrt());
    Ok(ModelParams {
        adapter,
        prototypes,
        projection,
        k_old,
    })
}

fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(normal.sample(rng)))
}

impl<T: Scalar> ModelParams<T> {
    pub fn d_in(&self) -> usize {
        self.adapter.ncols()
    }

    pub fn dim(&self) -> usize {
        self.adapter.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.projection.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    pub fn prototype(&self, k: usize) -> &[T] {
        self.prototypes
            .row(k)
            .to_slice()
            .expect("prototypes are in standard layout")
    }

    /// Renormalizes every prototype row onto the unit sphere.
    pub fn project_prototypes(&mut self) {
        for mut row in self.prototypes.rows_mut() {
            let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if n > T::zero() {
                row.mapv_inplace(|x| x / n);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.adapter.len() + self.prototypes.len() + self.projection.len()
    }

    /// All parameters as one vector: adapter, prototypes, projection.
    pub fn flatten(&self) -> Vec<T> {
        self.adapter
            .iter()
            .chain(self.prototypes.iter())
            .chain(self.projection.iter())
            .copied()
            .collect()
    }

    /// Inverse of [`ModelParams::flatten`].
    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params());
        let mut it = values.iter().copied();
        for m in [
            &mut self.adapter,
            &mut self.prototypes,
            &mut self.projection,
        ] {
            m.iter_mut()
                .for_each(|x| *x = it.next().expect("length checked"));
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            adapter: Array2::zeros(self.adapter.raw_dim()),
            prototypes: Array2::zeros(self.prototypes.raw_dim()),
            projection: Array2::zeros(self.projection.raw_dim()),
        }
    }

    /// Writes the binary checkpoint (`f64` payload).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        write_header(
            &mut out,
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            &[
                self.d_in() as u32,
                self.dim() as u32,
                self.d_h() as u32,
                self.num_classes() as u32,
                self.k_old as u32,
            ],
        );
        for &x in self.flatten().iter() {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        crate::dataset::io_write(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::dataset::io_read(path)?;
        let (h, payload) = read_header(path, &bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 5)?;
        let [d_in, d, d_h, k, k_old] = [h[0], h[1], h[2], h[3], h[4]].map(|x| x as usize);
        let count = d * d_in + k * d + d * d_h;
        if payload.len() != count * 8 {
            return Err(Error::format(
                path,
                format!(
                    "truncated payload: header declares {count} values ({} bytes), found {} bytes",
                    count * 8,
                    payload.len()
                ),
            ));
        }
        let values: Vec<T> = payload
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let mut params = ModelParams {
            adapter: Array2::zeros((d, d_in)),
            prototypes: Array2::zeros((k, d)),
            projection: Array2::zeros((d, d_h)),
            k_old,
        };
        params.set_flat(&values);
        Ok(params)
    }

    pub(crate) fn trace(&self, x: &[T], tau_base: T) -> Result<Trace<T>> {
        check_dim(self.d_in(), x.len())?;
        let u: Vec<T> = self
            .adapter
            .rows()
            .into_iter()
            .map(|r| dot(r.as_slice().expect("standard layout"), x))
            .collect();
        let un = norm(&u);
        if !(un > T::zero()) || !un.is_finite() {
            return Err(Error::domain("adapter maps the input to the zero vector"));
        }
        let z: Vec<T> = u.iter().map(|&v| v / un).collect();
        let logits: Vec<T> = (0..self.num_classes())
            .map(|k| dot(self.prototype(k), &z))
            .collect();
        let posterior = softmax_unchecked(&logits, tau_base);
        let d_h = self.d_h();
        let mut v = vec![T::zero(); d_h];
        for (zi, row) in z.iter().zip(self.projection.rows()) {
            for (vj, &w) in v.iter_mut().zip(row.iter()) {
                *vj = *vj + *zi * w;
            }
        }
        let vn = norm(&v);
        if !(vn > T::zero()) || !vn.is_finite() {
            return Err(Error::domain(
                "projection head maps the feature to the zero vector",
            ));
        }
        let h = v.iter().map(|&x| x / vn).collect();
        Ok(Trace {
            input: x.to_vec(),
            feature: z,
            feature_norm: un,
            projection: h,
            projection_norm: vn,
            logits,
            posterior,
        })
    }

    /// Logits only (cosines to the prototypes).
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        let z = embed(self, x)?;
        Ok((0..self.num_classes())
            .map(|k| dot(self.prototype(k), &z))
            .collect())
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.adapter
            .iter()
            .chain(self.prototypes.iter())
            .chain(self.projection.iter())
            .copied()
            .collect()
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        self.adapter
            .zip_mut_with(&other.adapter, |a, &b| *a = *a + b);
        self.prototypes
            .zip_mut_with(&other.prototypes, |a, &b| *a = *a + b);
        self.projection
            .zip_mut_with(&other.projection, |a, &b| *a = *a + b);
    }

    pub fn scale(&mut self, c: T) {
        self.adapter.mapv_inplace(|x| x * c);
        self.prototypes.mapv_inplace(|x| x * c);
        self.projection.mapv_inplace(|x| x * c);
    }

    pub fn is_finite(&self) -> bool {
        self.adapter
            .iter()
            .chain(self.prototypes.iter())
            .chain(self.projection.iter())
            .all(|x| x.is_finite())
    }
}

/// Backpropagates logit and projection gradients of one sample into `grads`.
pub(crate) fn backward<T: Scalar>(
    params: &ModelParams<T>,
    trace: &Trace<T>,
    grad_logits: &[T],
    grad_projection: Option<&[T]>,
    grads: &mut Gradients<T>,
) {
    let d = params.dim();
    let z = &trace.feature;
    let mut gz = vec![T::zero(); d];

    for (k, &gs) in grad_logits.iter().enumerate() {
        if gs == T::zero() {
            continue;
        }
        let mu = params.prototype(k);
        for ((g, gp), (&zi, &mi)) in gz
            .iter_mut()
            .zip(grads.prototypes.row_mut(k).iter_mut())
            .zip(z.iter().zip(mu))
        {
            *gp = *gp + gs * zi;
            *g = *g + gs * mi;
        }
    }

    if let Some(gh) = grad_projection {
        // h = v / |v|  =>  dL/dv = (gh - <gh,h> h) / |v|
        let h = &trace.projection;
        let gh_h = dot(gh, h);
        let gv: Vec<T> = gh
            .iter()
            .zip(h)
            .map(|(&g, &hj)| (g - gh_h * hj) / trace.projection_norm)
            .collect();
        for (i, (row, grow)) in params
            .projection
            .rows()
            .into_iter()
            .zip(grads.projection.rows_mut())
            .enumerate()
        {
            let zi = z[i];
            let mut acc = T::zero();
            for ((gw, &w), &g) in grow.into_iter().zip(row.iter()).zip(&gv) {
                *gw = *gw + zi * g;
                acc = acc + w * g;
            }
            gz[i] = gz[i] + acc;
        }
    }

    // z = u / |u|
    let gz_z = dot(&gz, z);
    for (r, mut grow) in grads.adapter.rows_mut().into_iter().enumerate() {
        let gu = (gz[r] - gz_z * z[r]) / trace.feature_norm;
        if gu == T::zero() {
            continue;
        }
        for (ga, &xi) in grow.iter_mut().zip(&trace.input) {
            *ga = *ga + gu * xi;
        }
    }
}

/// `z = normalize(adapter · x)`.
pub fn embed<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Result<UnitVector<T>> {
    check_dim(params.d_in(), x.len())?;
    let u: Vec<T> = params
        .adapter
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(x).map(|(&a, &b)| a * b).sum())
        .collect();
    crate::sphere::normalize(&u)
        .map_err(|_| Error::domain("adapter maps the input to the zero vector"))
}

pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    tau_base: T,
) -> Result<ForwardOutputs<T>> {
    if !(tau_base > T::zero()) {
        return Err(Error::domain(format!(
            "tau_base must be positive, got {tau_base}"
        )));
    }
    let t = params.trace(x, tau_base)?;
    let posterior = tempered_softmax(&t.logits, tau_base)?;
    Ok(ForwardOutputs {
        feature: UnitVector::from_normalized(t.feature),
        projection: UnitVector::from_normalized(t.projection),
        logits: t.logits,
        posterior,
    })
}
