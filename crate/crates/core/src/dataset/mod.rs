//! Embedding datasets, GCD splits, synthetic vMF mixtures and two-view
//! augmentation in embedding space.

mod io;
mod synthetic;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sphere::{normalize, UnitVector};
use crate::Scalar;

pub use io::{
    load_dataset, read_embeddings, save_dataset, write_embeddings, DatasetManifest,
    EMBEDDING_MAGIC, EMBEDDING_VERSION,
};
pub(crate) use io::{read_file as io_read, read_header, write_file as io_write, write_header};
pub use synthetic::{
    draw_class_samples, generate_synthetic, sample_components, SamplesPerClass, SyntheticConfig,
    SyntheticSet,
};

/// Unit-norm features with ground-truth labels, a labeled-sample mask and the
/// set of old (labeled) classes.
///
/// True labels of unlabeled samples exist for evaluation only. Reading them
/// through [`EmbeddingDataset::true_label`] or
/// [`EmbeddingDataset::true_labels`] is counted, so tests can assert that
/// training never touches them. Training code uses
/// [`EmbeddingDataset::labeled_label`].
#[derive(Debug)]
pub struct EmbeddingDataset<T> {
    features: Array2<T>,
    true_labels: Vec<usize>,
    labeled_mask: Vec<bool>,
    old_classes: BTreeSet<usize>,
    num_classes: usize,
    seed: Option<u64>,
    unlabeled_label_reads: AtomicUsize,
}

impl<T: Clone> Clone for EmbeddingDataset<T> {
    fn clone(&self) -> Self {
        EmbeddingDataset {
            features: self.features.clone(),
            true_labels: self.true_labels.clone(),
            labeled_mask: self.labeled_mask.clone(),
            old_classes: self.old_classes.clone(),
            num_classes: self.num_classes,
            seed: self.seed,
            unlabeled_label_reads: AtomicUsize::new(0),
        }
    }
}

impl<T: PartialEq> PartialEq for EmbeddingDataset<T> {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.true_labels == other.true_labels
            && self.labeled_mask == other.labeled_mask
            && self.old_classes == other.old_classes
            && self.num_classes == other.num_classes
            && self.seed == other.seed
    }
}

/// Maximum deviation from unit norm accepted for stored feature rows.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> EmbeddingDataset<T> {
    pub fn new(
        features: Array2<T>,
        true_labels: Vec<usize>,
        labeled_mask: Vec<bool>,
        old_classes: BTreeSet<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Integrity("dataset has no samples".into()));
        }
        if features.ncols() < 2 {
            return Err(Error::Integrity("feature dimension must be >= 2".into()));
        }
        if true_labels.len() != n || labeled_mask.len() != n {
            return Err(Error::Integrity(format!(
                "{} feature rows but {} labels and {} mask entries",
                n,
                true_labels.len(),
                labeled_mask.len()
            )));
        }
        if let Some(&c) = true_labels
            .iter()
            .chain(&old_classes)
            .find(|&&c| c >= num_classes)
        {
            return Err(Error::Integrity(format!(
                "class id {c} out of range for {num_classes} classes"
            )));
        }
        for (i, (&y, &labeled)) in true_labels.iter().zip(&labeled_mask).enumerate() {
            if labeled && !old_classes.contains(&y) {
                return Err(Error::Integrity(format!(
                    "sample {i} is labeled but its class {y} is not an old class"
                )));
            }
        }
        let features = features.as_standard_layout().into_owned();
        for (i, row) in features.rows().into_iter().enumerate() {
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt().as_f64();
            if !((norm - 1.0).abs() <= FEATURE_NORM_TOLERANCE) {
                return Err(Error::Integrity(format!(
                    "feature row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(EmbeddingDataset {
            features,
            true_labels,
            labeled_mask,
            old_classes,
            num_classes,
            seed: None,
            unlabeled_label_reads: AtomicUsize::new(0),
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn old_classes(&self) -> &BTreeSet<usize> {
        &self.old_classes
    }

    pub fn is_old_class(&self, c: usize) -> bool {
        self.old_classes.contains(&c)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[T] {
        self.features
            .row(i)
            .to_slice()
            .expect("features are stored in standard layout")
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled_mask
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled_mask[i]
    }

    /// Ground truth for labeled samples, `None` for unlabeled ones. This is the
    /// only label accessor training code may use.
    pub fn labeled_label(&self, i: usize) -> Option<usize> {
        self.labeled_mask[i].then(|| self.true_labels[i])
    }

    /// Ground truth of any sample, for evaluation. Reads of unlabeled samples
    /// are counted.
    pub fn true_label(&self, i: usize) -> usize {
        if !self.labeled_mask[i] {
            self.unlabeled_label_reads.fetch_add(1, Ordering::Relaxed);
        }
        self.true_labels[i]
    }

    /// All ground-truth labels, for evaluation. Counts one read per unlabeled
    /// sample.
    pub fn true_labels(&self) -> &[usize] {
        let unlabeled = self.labeled_mask.iter().filter(|&&m| !m).count();
        self.unlabeled_label_reads
            .fetch_add(unlabeled, Ordering::Relaxed);
        &self.true_labels
    }

    /// Number of unlabeled ground-truth labels read so far.
    pub fn unlabeled_label_reads(&self) -> usize {
        self.unlabeled_label_reads.load(Ordering::Relaxed)
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&m| m).count()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.len() - self.labeled_count()
    }

    /// Samples at `indices`, keeping labels, mask and class sets.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut features = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        EmbeddingDataset::new(
            features,
            indices.iter().map(|&i| self.true_labels[i]).collect(),
            indices.iter().map(|&i| self.labeled_mask[i]).collect(),
            self.old_classes.clone(),
            self.num_classes,
        )
        .map(|ds| ds.with_seed(self.seed))
    }
}

/// Splits sample indices into (labeled, unlabeled), both ascending.
pub fn split_gcd<T: Scalar>(dataset: &EmbeddingDataset<T>) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for i in 0..dataset.len() {
        if dataset.labeled_mask[i] {
            let y = dataset.true_labels[i];
            if !dataset.old_classes.contains(&y) {
                return Err(Error::Integrity(format!(
                    "labeled sample {i} belongs to non-old class {y}"
                )));
            }
            labeled.push(i);
        } else {
            unlabeled.push(i);
        }
    }
    Ok((labeled, unlabeled))
}

/// Two augmented views of one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair<T> {
    pub view_a: UnitVector<T>,
    pub view_b: UnitVector<T>,
    pub noise_sigma: T,
}

/// Perturbs `x` twice with isotropic Gaussian noise and renormalizes.
pub fn make_views<T: Scalar, R: Rng + ?Sized>(
    x: &[T],
    sigma: T,
    rng: &mut R,
) -> Result<ViewPair<T>> {
    if !(sigma >= T::zero()) {
        return Err(Error::domain(format!(
            "view noise sigma must be >= 0, got {sigma}"
        )));
    }
    Ok(ViewPair {
        view_a: perturb(x, sigma, rng)?,
        view_b: perturb(x, sigma, rng)?,
        noise_sigma: sigma,
    })
}

pub(crate) fn perturb<T: Scalar, R: Rng + ?Sized>(
    x: &[T],
    sigma: T,
    rng: &mut R,
) -> Result<UnitVector<T>> {
    if sigma == T::zero() {
        return normalize(x);
    }
    let noise = Normal::new(0.0, sigma.as_f64()).map_err(|e| Error::domain(e.to_string()))?;
    for _ in 0..64 {
        let v: Vec<T> = x.iter().map(|&xi| xi + T::of(noise.sample(rng))).collect();
        if let Ok(u) = normalize(&v) {
            return Ok(u);
        }
    }
    Err(Error::domain("perturbed view collapsed to the zero vector"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sphere::{dot, norm};
    use ndarray::array;

    fn tiny() -> EmbeddingDataset<f64> {
        EmbeddingDataset::new(
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
            vec![0, 1, 2, 0],
            vec![true, false, false, true],
            [0].into_iter().collect(),
            3,
        )
        .unwrap()
    }

    #[test]
    fn split_is_disjoint_cover() {
        let ds = tiny();
        let (l, u) = split_gcd(&ds).unwrap();
        assert_eq!(l, vec![0, 3]);
        assert_eq!(u, vec![1, 2]);
    }

    #[test]
    fn split_fully_unlabeled() {
        let ds = EmbeddingDataset::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![0, 1],
            vec![false, false],
            BTreeSet::new(),
            2,
        )
        .unwrap();
        assert_eq!(split_gcd(&ds).unwrap(), (vec![], vec![0, 1]));
    }

    #[test]
    fn labeled_new_class_is_rejected() {
        let err = EmbeddingDataset::new(
            array![[1.0, 0.0]],
            vec![1],
            vec![true],
            [0].into_iter().collect(),
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let err =
            EmbeddingDataset::new(array![[1.0, 1.0]], vec![0], vec![false], BTreeSet::new(), 1)
                .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn label_tripwire_counts_unlabeled_reads() {
        let ds = tiny();
        assert_eq!(ds.labeled_label(0), Some(0));
        assert_eq!(ds.labeled_label(1), None);
        assert_eq!(ds.unlabeled_label_reads(), 0);
        ds.true_label(0);
        assert_eq!(ds.unlabeled_label_reads(), 0);
        ds.true_label(2);
        assert_eq!(ds.unlabeled_label_reads(), 1);
        ds.true_labels();
        assert_eq!(ds.unlabeled_label_reads(), 3);
    }

    #[test]
    fn views_identity_at_zero_sigma() {
        let mut rng = stream_rng(1, 0);
        let x = normalize(&[0.2, -0.4, 0.8, 0.1]).unwrap();
        let v = make_views(&x, 0.0, &mut rng).unwrap();
        assert_eq!(v.view_a, x);
        assert_eq!(v.view_b, x);
    }

    #[test]
    fn views_stay_close_and_unit_norm() {
        let mut rng = stream_rng(2, 0);
        let x = crate::sphere::sample_uniform_sphere::<f64, _>(&mut rng, 16);
        let mut close = 0;
        for _ in 0..1000 {
            let v = make_views(&x, 0.05, &mut rng).unwrap();
            for view in [&v.view_a, &v.view_b] {
                assert!((norm(view) - 1.0).abs() < 1e-9);
            }
            if dot(&v.view_a, &x) > 0.9 {
                close += 1;
            }
        }
        assert!(close as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn views_deterministic_under_seed() {
        let x = normalize(&[1.0, 2.0, 3.0]).unwrap();
        let a = make_views(&x, 0.1, &mut stream_rng(9, 4)).unwrap();
        let b = make_views(&x, 0.1, &mut stream_rng(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let x = normalize(&[1.0, 2.0]).unwrap();
        assert!(make_views(&x, -0.1, &mut stream_rng(0, 0)).is_err());
    }
}
