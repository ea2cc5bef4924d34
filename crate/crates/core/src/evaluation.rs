//! Hungarian-matched clustering accuracy and cluster geometry metrics.

use std::collections::BTreeSet;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{check_dim, Error, Result};
use crate::model::{embed, ModelParams};
use crate::sphere::{argmax, dot, normalize};
use crate::Scalar;

/// Minimum-cost assignment on a square matrix: `result[row] = col`.
///
/// Shortest augmenting paths with row/column potentials, O(n^3).
pub fn hungarian<T: Scalar>(cost: &Array2<T>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m,
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("cost matrix has non-finite entries"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based arrays; column 0 is the virtual source.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] = u[col_owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Total cost of an assignment.
pub fn assignment_cost<T: Scalar>(cost: &Array2<T>, assignment: &[usize]) -> T {
    assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[[r, c]])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub acc_all: f64,
    /// Accuracy on samples whose true class is old; 0 when there are none.
    pub acc_old: f64,
    pub acc_new: f64,
    pub n_old: usize,
    pub n_new: usize,
    /// `permutation[pred_id] = true class id` (padded ids included).
    pub permutation: Vec<usize>,
}

/// Accuracy under the single best matching of predicted ids to classes.
/// `old_classes = None` treats every class as old.
pub fn clustering_accuracy(
    predictions: &[usize],
    true_labels: &[usize],
    old_classes: Option<&BTreeSet<usize>>,
) -> Result<AccReport> {
    check_dim(true_labels.len(), predictions.len())?;
    if predictions.is_empty() {
        return Err(Error::domain("clustering accuracy of an empty set"));
    }
    let size = predictions
        .iter()
        .chain(true_labels)
        .max()
        .map_or(0, |&m| m + 1);
    let mut counts = Array2::<f64>::zeros((size, size));
    for (&p, &y) in predictions.iter().zip(true_labels) {
        counts[[p, y]] += 1.0;
    }
    let permutation = hungarian(&counts.mapv(|c| -c))?;
    let is_old = |y: usize| old_classes.is_none_or(|s| s.contains(&y));
    let (mut hit_old, mut hit_new, mut n_old, mut n_new) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(true_labels) {
        let hit = (permutation[p] == y) as usize;
        if is_old(y) {
            n_old += 1;
            hit_old += hit;
        } else {
            n_new += 1;
            hit_new += hit;
        }
    }
    let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(AccReport {
        acc_all: (hit_old + hit_new) as f64 / predictions.len() as f64,
        acc_old: ratio(hit_old, n_old),
        acc_new: ratio(hit_new, n_new),
        n_old,
        n_new,
        permutation,
    })
}

/// Normalized mean feature of each class present in `labels`, in class order.
fn class_directions<T: Scalar>(
    features: &Array2<T>,
    labels: &[usize],
) -> Result<Vec<(usize, Vec<T>)>> {
    check_dim(features.nrows(), labels.len())?;
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    classes
        .into_iter()
        .map(|c| {
            let mut sum = vec![T::zero(); features.ncols()];
            for (row, _) in features
                .rows()
                .into_iter()
                .zip(labels)
                .filter(|(_, &y)| y == c)
            {
                sum.iter_mut()
                    .zip(row.iter())
                    .for_each(|(s, &x)| *s = *s + x);
            }
            let dir = normalize(&sum)
                .map_err(|_| Error::domain(format!("class {c} has a zero mean feature")))?;
            Ok((c, dir.into_inner()))
        })
        .collect()
}

/// Mean over classes of the mean cosine between members and the normalized
/// class mean. Rows of `features` are assumed unit-norm.
pub fn compactness<T: Scalar>(features: &Array2<T>, labels: &[usize]) -> Result<T> {
    let dirs = class_directions(features, labels)?;
    if dirs.is_empty() {
        return Err(Error::domain("compactness of an empty set"));
    }
    let mut total = T::zero();
    for (c, dir) in &dirs {
        let (sum, count) = features
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(_, &y)| y == *c)
            .fold((T::zero(), 0usize), |(s, n), (row, _)| {
                (
                    s + row.iter().zip(dir).map(|(&a, &b)| a * b).sum::<T>(),
                    n + 1,
                )
            });
        total = total + sum / T::of_usize(count);
    }
    Ok(total / T::of_usize(dirs.len()))
}

/// Mean cosine between normalized class means over ordered class pairs.
pub fn separation_metric<T: Scalar>(features: &Array2<T>, labels: &[usize]) -> Result<T> {
    let dirs = class_directions(features, labels)?;
    let k = dirs.len();
    if k < 2 {
        return Err(Error::domain(format!(
            "separation needs >= 2 classes, got {k}"
        )));
    }
    let mut total = T::zero();
    for i in 0..k {
        for j in (0..k).filter(|&j| j != i) {
            total = total + dot(&dirs[i].1, &dirs[j].1);
        }
    }
    Ok(total / T::of_usize(k * (k - 1)))
}

/// Argmax-logit class of every row.
pub fn predict<T: Scalar>(params: &ModelParams<T>, features: &Array2<T>) -> Result<Vec<usize>> {
    (0..features.nrows())
        .into_par_iter()
        .map(|i| {
            let row = features.row(i);
            let x = row
                .as_slice()
                .ok_or_else(|| Error::domain("non-contiguous features"))?;
            Ok(argmax(&params.logits(x)?))
        })
        .collect()
}

/// Learned features `z` of every row.
pub fn embed_all<T: Scalar>(params: &ModelParams<T>, features: &Array2<T>) -> Result<Array2<T>> {
    let rows = (0..features.nrows())
        .into_par_iter()
        .map(|i| {
            let row = features.row(i);
            let x = row
                .as_slice()
                .ok_or_else(|| Error::domain("non-contiguous features"))?;
            Ok(embed(params, x)?.into_inner())
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    let d = params.dim();
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| Error::domain(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Typicality<T> {
    pub index: usize,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityRank<T> {
    pub class_id: usize,
    /// Most typical first.
    pub head: Vec<Typicality<T>>,
    /// Least typical first.
    pub tail: Vec<Typicality<T>>,
}

/// Ranks the members of `class_id` (under `labels`, true or predicted) by
/// `<mu_class, z>`.
pub fn typicality_rank<T: Scalar>(
    params: &ModelParams<T>,
    features: &Array2<T>,
    labels: &[usize],
    class_id: usize,
    top_k: usize,
) -> Result<TypicalityRank<T>> {
    check_dim(features.nrows(), labels.len())?;
    if class_id >= params.num_classes() {
        return Err(Error::domain(format!("class {class_id} has no prototype")));
    }
    let mu = params.prototype(class_id);
    let mut members = Vec::new();
    for (i, (row, _)) in features
        .rows()
        .into_iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (_, &y))| y == class_id)
    {
        let x = row
            .as_slice()
            .ok_or_else(|| Error::domain("non-contiguous features"))?;
        members.push(Typicality {
            index: i,
            score: dot(mu, &embed(params, x)?),
        });
    }
    if members.is_empty() {
        return Err(Error::domain(format!("class {class_id} has no members")));
    }
    if members.len() < top_k {
        return Err(Error::domain(format!(
            "class {class_id} has {} members, fewer than {top_k}",
            members.len()
        )));
    }
    members.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    let head = members[..top_k].to_vec();
    let tail = members.iter().rev().take(top_k).cloned().collect();
    Ok(TypicalityRank {
        class_id,
        head,
        tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub compactness: f64,
    pub separation: f64,
    pub n_eval: usize,
    pub permutation: Vec<usize>,
}

/// Which samples the accuracy is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalSubset {
    /// Unlabeled samples (transductive protocol).
    #[default]
    Unlabeled,
    /// Every sample (held-out / inductive sets).
    All,
}

/// Accuracy on the chosen subset; compactness and separation of the learned
/// features over all samples under the true labels.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &EmbeddingDataset<T>,
    subset: EvalSubset,
) -> Result<EvalReport> {
    let preds = predict(params, dataset.features())?;
    let truth = dataset.true_labels();
    let idx: Vec<usize> = match subset {
        EvalSubset::Unlabeled => (0..dataset.len())
            .filter(|&i| !dataset.is_labeled(i))
            .collect(),
        EvalSubset::All => (0..dataset.len()).collect(),
    };
    let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
    let y: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
    let acc = clustering_accuracy(&p, &y, Some(dataset.old_classes()))?;
    let z = embed_all(params, dataset.features())?;
    Ok(EvalReport {
        acc_all: acc.acc_all,
        acc_old: acc.acc_old,
        acc_new: acc.acc_new,
        compactness: compactness(&z, truth)?.as_f64(),
        separation: separation_metric(&z, truth)?.as_f64(),
        n_eval: idx.len(),
        permutation: acc.permutation,
    })
}
