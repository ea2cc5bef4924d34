//! Post-hoc OOD scores on the prototype classifier and threshold-free
//! detection metrics. Higher scores mean "more in-distribution".

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::sphere::{log_sum_exp, softmax_unchecked};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Maximum posterior.
    Msp,
    /// Maximum logit (cosine to the closest prototype).
    Mls,
    /// `log sum_c exp(s_c / tau_base)`.
    Energy,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Msp, ScoreKind::Mls, ScoreKind::Energy];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Mls => "mls",
            ScoreKind::Energy => "energy",
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msp" => Ok(ScoreKind::Msp),
            "mls" => Ok(ScoreKind::Mls),
            "energy" => Ok(ScoreKind::Energy),
            other => Err(Error::config(format!("unknown OOD score {other:?}"))),
        }
    }
}

fn max<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().fold(T::neg_infinity(), T::max)
}

pub fn msp_score<T: Scalar>(params: &ModelParams<T>, x: &[T], tau_base: T) -> Result<T> {
    Ok(max(&softmax_unchecked(&params.logits(x)?, tau_base)))
}

pub fn mls_score<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Result<T> {
    Ok(max(&params.logits(x)?))
}

pub fn energy_score<T: Scalar>(params: &ModelParams<T>, x: &[T], tau_base: T) -> Result<T> {
    Ok(log_sum_exp(&params.logits(x)?, tau_base))
}

pub fn score<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    kind: ScoreKind,
    tau_base: T,
) -> Result<T> {
    match kind {
        ScoreKind::Msp => msp_score(params, x, tau_base),
        ScoreKind::Mls => mls_score(params, x),
        ScoreKind::Energy => energy_score(params, x, tau_base),
    }
}

/// Scores of every row.
pub fn score_all<T: Scalar>(
    params: &ModelParams<T>,
    features: &Array2<T>,
    kind: ScoreKind,
    tau_base: T,
) -> Result<Vec<f64>> {
    (0..features.nrows())
        .into_par_iter()
        .map(|i| {
            let row = features.row(i);
            let x = row
                .as_slice()
                .ok_or_else(|| Error::domain("non-contiguous features"))?;
            Ok(score(params, x, kind, tau_base)?.as_f64())
        })
        .collect()
}

fn check_sides(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::domain(
            "OOD metrics need non-empty ID and OOD score lists",
        ));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::domain("OOD scores contain NaN"));
    }
    Ok(())
}

fn desc(a: &f64, b: &f64) -> Ordering {
    b.partial_cmp(a).expect("NaN rejected")
}

/// `P(id > ood) + P(id = ood) / 2` over all pairs, via mid-ranks.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_sides(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN rejected"));
    // sum of 1-based mid-ranks of the ID scores
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n, m) = (id.len() as f64, ood.len() as f64);
    Ok((rank_sum - n * (n + 1.0) / 2.0) / (n * m))
}

/// Fraction of OOD scores at or above the largest threshold that accepts at
/// least `ceil(tpr * |id|)` ID scores.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr: f64) -> Result<f64> {
    check_sides(id, ood)?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::domain(format!("tpr must lie in (0, 1], got {tpr}")));
    }
    let mut sorted = id.to_vec();
    sorted.sort_by(desc);
    let need = ((tpr * id.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = sorted[need.min(id.len()) - 1];
    Ok(ood.iter().filter(|&&s| s >= threshold).count() as f64 / ood.len() as f64)
}

/// Area under the precision-recall curve with ID as the positive class,
/// `sum_k (R_k - R_{k-1}) P_k` over thresholds at the observed scores.
pub fn aupr_in(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_sides(id, ood)?;
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| desc(&a.0, &b.0));
    let n_id = id.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            j += 1;
        }
        let recall = tp / n_id;
        if recall > prev_recall {
            area += (recall - prev_recall) * tp / (tp + fp);
            prev_recall = recall;
        }
        i = j;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub score_name: ScoreKind,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

pub fn report(kind: ScoreKind, id: &[f64], ood: &[f64]) -> Result<OodReport> {
    Ok(OodReport {
        score_name: kind,
        fpr95: fpr_at_tpr(id, ood, 0.95)?,
        auroc: auroc(id, ood)?,
        aupr_in: aupr_in(id, ood)?,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

/// Reports for each score kind on ID and OOD embeddings.
pub fn evaluate_ood<T: Scalar>(
    params: &ModelParams<T>,
    id_features: &Array2<T>,
    ood_features: &Array2<T>,
    kinds: &[ScoreKind],
    tau_base: T,
) -> Result<Vec<OodReport>> {
    kinds
        .iter()
        .map(|&k| {
            let id = score_all(params, id_features, k, tau_base)?;
            let ood = score_all(params, ood_features, k, tau_base)?;
            report(k, &id, &ood)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, InitStrategy};
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_proto() -> ModelParams<f64> {
        let mut p =
            init_params(2, 2, 3, 2, 1, InitStrategy::Identity, &mut stream_rng(0, 0)).unwrap();
        p.prototypes = array![[1.0, 0.0], [0.0, 1.0]];
        p
    }

    #[test]
    fn score_examples() {
        let p = two_proto();
        assert_abs_diff_eq!(
            msp_score(&p, &[1.0, 0.0], 0.1).unwrap(),
            0.9999546,
            epsilon = 1e-7
        );
        assert_eq!(mls_score(&p, &[1.0, 0.0]).unwrap(), 1.0);
        let mut same = p.clone();
        same.prototypes = array![[0.0, 1.0], [0.0, 1.0]];
        assert_abs_diff_eq!(
            msp_score(&same, &[1.0, 0.0], 0.1).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(mls_score(&same, &[0.0, -1.0]).unwrap(), -1.0);
        // equal logits L: L / tau + log K
        assert_abs_diff_eq!(
            energy_score(&same, &[1.0, 0.0], 0.1).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
        let mut one = p.clone();
        one.prototypes = array![[0.6, 0.8]];
        assert_abs_diff_eq!(
            energy_score(&one, &[1.0, 0.0], 0.1).unwrap(),
            6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4; 3], &[0.4; 5]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.3, 0.7], &[0.5]).unwrap(), 0.5);
        assert!(auroc(&[], &[0.5]).is_err());
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&[0.9, 0.8], &[0.1, 0.2], 0.95).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&[0.3, 0.4], &[0.5, 0.6], 0.95).unwrap(), 1.0);
        let id: Vec<f64> = (0..20).map(|i| i as f64).collect();
        // 19 of 20 would already be 95 %
        assert_eq!(fpr_at_tpr(&id, &[0.5], 0.95).unwrap(), 0.0);
    }

    #[test]
    fn equal_distributions_monte_carlo() {
        let mut rng = stream_rng(4, 0);
        let id: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let ood: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!((fpr_at_tpr(&id, &ood, 0.95).unwrap() - 0.95).abs() < 0.02);
        assert!(aupr_in(&id, &ood).unwrap() >= 0.48);
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr_in(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(aupr_in(&[0.9], &[0.1]).unwrap(), 1.0);
        // ID, OOD, ID -> 1/2 * 1 + 1/2 * 2/3
        assert_abs_diff_eq!(
            aupr_in(&[0.9, 0.1], &[0.5]).unwrap(),
            0.5 + 1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
        let mut s = 0.0;
        for &a in id {
            for &b in ood {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (id.len() * ood.len()) as f64
    }

    proptest! {
        #[test]
        fn auroc_matches_pairs_and_is_antisymmetric(
            id in proptest::collection::vec(0u8..10, 1..30),
            ood in proptest::collection::vec(0u8..10, 1..30),
        ) {
            let id: Vec<f64> = id.into_iter().map(f64::from).collect();
            let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
            let a = auroc(&id, &ood).unwrap();
            prop_assert!((a - brute_auroc(&id, &ood)).abs() < 1e-12);
            prop_assert!((a + auroc(&ood, &id).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn metrics_invariant_to_increasing_transform(
            id in proptest::collection::vec(-3.0f64..3.0, 1..30),
            ood in proptest::collection::vec(-3.0f64..3.0, 1..30),
        ) {
            let f = |v: &[f64]| v.iter().map(|x| x.exp() * 2.0 + 1.0).collect::<Vec<_>>();
            let (ti, to) = (f(&id), f(&ood));
            prop_assert_eq!(auroc(&id, &ood).unwrap(), auroc(&ti, &to).unwrap());
            prop_assert_eq!(fpr_at_tpr(&id, &ood, 0.95).unwrap(), fpr_at_tpr(&ti, &to, 0.95).unwrap());
            prop_assert_eq!(aupr_in(&id, &ood).unwrap(), aupr_in(&ti, &to).unwrap());
        }

        #[test]
        fn scores_ignore_prototype_order(seed in 0u64..200) {
            let mut rng = stream_rng(seed, 0);
            let p: ModelParams<f64> = init_params(4, 4, 5, 4, 2, InitStrategy::Identity, &mut rng).unwrap();
            let mut q = p.clone();
            for (dst, src) in [0usize, 1, 2, 3].into_iter().zip([2usize, 0, 3, 1]) {
                q.prototypes.row_mut(dst).assign(&p.prototypes.row(src));
            }
            let x = crate::sphere::sample_uniform_sphere::<f64, _>(&mut rng, 4);
            for k in ScoreKind::ALL {
                let a = score(&p, &x, k, 0.1).unwrap();
                let b = score(&q, &x, k, 0.1).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
