//! Loss terms and their analytic gradients.
//!
//! Every term returns its value together with the gradient with respect to
//! its direct inputs (projections, posteriors or prototypes).
//! [`objective_with_targets`] chains those through the model to parameter
//! gradients; pseudo-label targets are constants of the objective.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dapl::{assign_pseudo_label, PseudoLabel};
use crate::error::{check_dim, Error, Result};
use crate::model::{backward, Gradients, ModelParams, Trace};
use crate::scalar::log_floor;
use crate::sphere::dot;
use crate::Scalar;

/// Loss weights, temperatures and term switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct ObjectiveConfig<T> {
    pub lambda_sup: T,
    pub lambda_entropy: T,
    pub lambda_sep: T,
    pub tau_c: T,
    pub tau_base: T,
    pub tau_sharp: T,
    pub tau_sep: T,
    /// Temperature of the prototype confidence; defaults to `tau_sharp`.
    pub tau_conf: T,
    /// Pseudo-label loss on/off (ablations).
    pub use_dapl: bool,
}

impl<T: Scalar> Default for ObjectiveConfig<T> {
    fn default() -> Self {
        ObjectiveConfig {
            lambda_sup: T::of(0.35),
            lambda_entropy: T::of(2.0),
            lambda_sep: T::of(0.1),
            tau_c: T::of(0.07),
            tau_base: T::of(0.1),
            tau_sharp: T::of(0.05),
            tau_sep: T::of(0.1),
            tau_conf: T::of(0.05),
            use_dapl: true,
        }
    }
}

impl<T: Scalar> ObjectiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("tau_c", self.tau_c),
            ("tau_base", self.tau_base),
            ("tau_sharp", self.tau_sharp),
            ("tau_sep", self.tau_sep),
            ("tau_conf", self.tau_conf),
        ] {
            if !(t > T::zero()) {
                return Err(Error::config(format!("{name} must be positive, got {t}")));
            }
        }
        if !(self.tau_base > self.tau_sharp) {
            return Err(Error::config("tau_base must exceed tau_sharp"));
        }
        if !(self.lambda_sup >= T::zero() && self.lambda_sup <= T::one()) {
            return Err(Error::config("lambda_sup must lie in [0, 1]"));
        }
        if !(self.lambda_entropy >= T::zero() && self.lambda_sep >= T::zero()) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Per-term values, the weighted total and parameter gradients of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub con_unsup: T,
    pub con_sup: T,
    pub dapl: T,
    pub sup_ce: T,
    pub entropy_reg: T,
    pub sep_reg: T,
    pub total: T,
    pub gradients: Gradients<T>,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Recomputes the weighted total from the term values.
    pub fn weighted_total(&self, cfg: &ObjectiveConfig<T>) -> T {
        let one = T::one();
        (one - cfg.lambda_sup) * self.con_unsup
            + cfg.lambda_sup * self.con_sup
            + (one - cfg.lambda_sup) * self.dapl
            + cfg.lambda_sup * self.sup_ce
            + cfg.lambda_entropy * self.entropy_reg
            + cfg.lambda_sep * self.sep_reg
    }
}

/// A value with gradients for the two views of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewGrad<T> {
    pub value: T,
    pub grad_a: Vec<Vec<T>>,
    pub grad_b: Vec<Vec<T>>,
}

/// Two views of each sample (input space) with the labels visible to
/// training: `Some` for labeled samples only.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub view_a: Vec<Vec<T>>,
    pub view_b: Vec<Vec<T>>,
    pub labels: Vec<Option<usize>>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.view_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_a.is_empty()
    }
}

/// Pseudo-labels for both views of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets<T> {
    pub view_a: Vec<PseudoLabel<T>>,
    pub view_b: Vec<PseudoLabel<T>>,
}

fn zeros_like<T: Scalar>(v: &[Vec<T>]) -> Vec<Vec<T>> {
    v.iter().map(|x| vec![T::zero(); x.len()]).collect()
}

fn axpy<T: Scalar>(dst: &mut [T], a: T, x: &[T]) {
    dst.iter_mut().zip(x).for_each(|(d, &v)| *d = *d + a * v);
}

/// Contrastive log-softmax over a pool of projections.
///
/// For anchor `a` with positive set `pos(a)` the per-anchor loss is
/// `mean_{q in pos(a)} [ -s_aq/tau ] + log sum_{j != a} exp(s_aj/tau)`;
/// the result averages over anchors with a non-empty positive set.
fn pooled_contrastive<T: Scalar>(
    pool: &[&[T]],
    positives: &[Vec<usize>],
    tau: T,
) -> (T, Vec<Vec<T>>, usize) {
    let n = pool.len();
    let mut grads: Vec<Vec<T>> = pool.iter().map(|h| vec![T::zero(); h.len()]).collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        return (T::zero(), grads, 0);
    }
    let scale = T::one() / T::of_usize(anchors);
    let mut total = T::zero();
    let mut sims = vec![T::zero(); n];
    for a in 0..n {
        let pos = &positives[a];
        if pos.is_empty() {
            continue;
        }
        let mut max = T::neg_infinity();
        for j in 0..n {
            if j != a {
                sims[j] = dot(pool[a], pool[j]) / tau;
                max = max.max(sims[j]);
            }
        }
        let z: T = (0..n)
            .filter(|&j| j != a)
            .map(|j| (sims[j] - max).exp())
            .sum();
        let lse = max + z.ln();
        let inv_pos = T::one() / T::of_usize(pos.len());
        let pos_mean: T = pos.iter().map(|&q| sims[q]).sum::<T>() * inv_pos;
        total = total + lse - pos_mean;

        // d loss_a / d s_aj = (softmax_j - [j in pos] / |pos|) / tau
        for j in 0..n {
            if j == a {
                continue;
            }
            let mut coef = (sims[j] - max).exp() / z;
            if pos.contains(&j) {
                coef = coef - inv_pos;
            }
            let coef = coef * scale / tau;
            if coef == T::zero() {
                continue;
            }
            let (hj, ha) = (pool[j], pool[a]);
            axpy(&mut grads[a], coef, hj);
            axpy(&mut grads[j], coef, ha);
        }
    }
    (total * scale, grads, anchors)
}

/// Two-view InfoNCE: each item's positive is its other view, the
/// denominator runs over the remaining `2B - 1` items of both views.
pub fn unsup_contrastive<T: Scalar>(
    view_a: &[Vec<T>],
    view_b: &[Vec<T>],
    tau_c: T,
) -> Result<TwoViewGrad<T>> {
    let b = view_a.len();
    check_dim(b, view_b.len())?;
    if b < 2 {
        return Err(Error::domain(
            "unsupervised contrastive loss needs a batch of >= 2",
        ));
    }
    let pool: Vec<&[T]> = view_a.iter().chain(view_b).map(|v| v.as_slice()).collect();
    let positives: Vec<Vec<usize>> = (0..2 * b).map(|a| vec![(a + b) % (2 * b)]).collect();
    let (value, mut grads, _) = pooled_contrastive(&pool, &positives, tau_c);
    let grad_b = grads.split_off(b);
    Ok(TwoViewGrad {
        value,
        grad_a: grads,
        grad_b,
    })
}

/// Supervised contrastive loss over a pool of labeled projections. Anchors
/// without any same-label partner are skipped.
pub fn sup_contrastive<T: Scalar>(
    projections: &[Vec<T>],
    labels: &[usize],
    tau_c: T,
) -> Result<(T, Vec<Vec<T>>)> {
    check_dim(projections.len(), labels.len())?;
    if projections.len() < 2 {
        return Err(Error::UndefinedLoss(
            "supervised contrastive loss needs >= 2 samples".into(),
        ));
    }
    let positives: Vec<Vec<usize>> = (0..labels.len())
        .map(|a| {
            (0..labels.len())
                .filter(|&q| q != a && labels[q] == labels[a])
                .collect()
        })
        .collect();
    let pool: Vec<&[T]> = projections.iter().map(|v| v.as_slice()).collect();
    let (value, grads, anchors) = pooled_contrastive(&pool, &positives, tau_c);
    if anchors == 0 {
        return Err(Error::UndefinedLoss("no anchor has a positive pair".into()));
    }
    Ok((value, grads))
}

/// `-sum_k q_k log max(p_k, floor)` and its gradient in `p`.
fn cross_entropy<T: Scalar>(q: &[T], p: &[T], weight: T, grad: &mut [T]) -> T {
    let floor = log_floor::<T>();
    let mut v = T::zero();
    for ((&qk, &pk), g) in q.iter().zip(p).zip(grad.iter_mut()) {
        if qk == T::zero() {
            continue;
        }
        v = v - qk * pk.max(floor).ln();
        if pk > floor {
            *g = *g - weight * qk / pk;
        }
    }
    v
}

/// Cross-view pseudo-label loss: `mean_i 1/2 [CE(q'_i, p_i) + CE(q_i, p'_i)]`.
/// Gradients flow only into the posteriors.
pub fn dapl_loss<T: Scalar>(
    post_a: &[Vec<T>],
    post_b: &[Vec<T>],
    target_a: &[Vec<T>],
    target_b: &[Vec<T>],
) -> Result<TwoViewGrad<T>> {
    let n = post_a.len();
    for len in [post_b.len(), target_a.len(), target_b.len()] {
        check_dim(n, len)?;
    }
    if n == 0 {
        return Err(Error::domain("empty batch"));
    }
    let w = T::one() / T::of_usize(2 * n);
    let mut grad_a = zeros_like(post_a);
    let mut grad_b = zeros_like(post_b);
    let mut value = T::zero();
    for i in 0..n {
        for v in [&post_a[i], &target_a[i], &target_b[i]] {
            check_dim(post_b[i].len(), v.len())?;
        }
        value = value + cross_entropy(&target_b[i], &post_a[i], w, &mut grad_a[i]);
        value = value + cross_entropy(&target_a[i], &post_b[i], w, &mut grad_b[i]);
    }
    Ok(TwoViewGrad {
        value: value * w,
        grad_a,
        grad_b,
    })
}

/// Cross-entropy against ground truth on both views of labeled samples.
pub fn supervised_ce<T: Scalar>(
    post_a: &[Vec<T>],
    post_b: &[Vec<T>],
    labels: &[Option<usize>],
) -> Result<TwoViewGrad<T>> {
    let n = post_a.len();
    check_dim(n, post_b.len())?;
    check_dim(n, labels.len())?;
    if n == 0 {
        return Err(Error::domain("empty batch"));
    }
    let w = T::one() / T::of_usize(2 * n);
    let mut grad_a = zeros_like(post_a);
    let mut grad_b = zeros_like(post_b);
    let floor = log_floor::<T>();
    let mut value = T::zero();
    for i in 0..n {
        let y = labels[i].ok_or_else(|| {
            Error::domain(format!(
                "sample {i} passed to the supervised loss is unlabeled"
            ))
        })?;
        if y >= post_a[i].len() || y >= post_b[i].len() {
            return Err(Error::domain(format!("label {y} out of range")));
        }
        for (p, g) in [(&post_a[i], &mut grad_a[i]), (&post_b[i], &mut grad_b[i])] {
            value = value - p[y].max(floor).ln();
            if p[y] > floor {
                g[y] = g[y] - w / p[y];
            }
        }
    }
    Ok(TwoViewGrad {
        value: value * w,
        grad_a,
        grad_b,
    })
}

/// Negative entropy of the mean posterior over both views.
pub fn entropy_reg<T: Scalar>(post_a: &[Vec<T>], post_b: &[Vec<T>]) -> Result<TwoViewGrad<T>> {
    let n = post_a.len() + post_b.len();
    let k = post_a
        .first()
        .or(post_b.first())
        .ok_or_else(|| Error::domain("empty batch"))?
        .len();
    let mut mean = vec![T::zero(); k];
    for p in post_a.iter().chain(post_b) {
        check_dim(k, p.len())?;
        axpy(&mut mean, T::one(), p);
    }
    let inv = T::one() / T::of_usize(n);
    mean.iter_mut().for_each(|m| *m = *m * inv);
    let floor = log_floor::<T>();
    let value: T = mean
        .iter()
        .filter(|&&m| m > T::zero())
        .map(|&m| m * m.ln())
        .sum();
    let g: Vec<T> = mean
        .iter()
        .map(|&m| (m.max(floor).ln() + T::one()) * inv)
        .collect();
    Ok(TwoViewGrad {
        value,
        grad_a: vec![g.clone(); post_a.len()],
        grad_b: vec![g; post_b.len()],
    })
}

/// `1/K sum_i log( 1/(K-1) sum_{j != i} exp(<mu_i, mu_j> / tau_sep) )`.
pub fn separation_reg<T: Scalar>(prototypes: &Array2<T>, tau_sep: T) -> Result<(T, Array2<T>)> {
    let k = prototypes.nrows();
    if k < 2 {
        return Err(Error::domain(format!("separation needs K >= 2, got {k}")));
    }
    let rows: Vec<&[T]> = prototypes
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let mut grad = Array2::zeros(prototypes.raw_dim());
    let inv_k = T::one() / T::of_usize(k);
    let log_km1 = T::of_usize(k - 1).ln();
    let mut value = T::zero();
    let mut sims = vec![T::zero(); k];
    for i in 0..k {
        let mut max = T::neg_infinity();
        for j in (0..k).filter(|&j| j != i) {
            sims[j] = dot(rows[i], rows[j]) / tau_sep;
            max = max.max(sims[j]);
        }
        let z: T = (0..k)
            .filter(|&j| j != i)
            .map(|j| (sims[j] - max).exp())
            .sum();
        value = value + max + z.ln() - log_km1;
        for j in (0..k).filter(|&j| j != i) {
            let c = (sims[j] - max).exp() / z * inv_k / tau_sep;
            for (g, &m) in grad.row_mut(i).iter_mut().zip(rows[j]) {
                *g = *g + c * m;
            }
            for (g, &m) in grad.row_mut(j).iter_mut().zip(rows[i]) {
                *g = *g + c * m;
            }
        }
    }
    Ok((value * inv_k, grad))
}

fn traces<T: Scalar>(
    params: &ModelParams<T>,
    views: &[Vec<T>],
    tau_base: T,
) -> Result<Vec<Trace<T>>> {
    views.iter().map(|x| params.trace(x, tau_base)).collect()
}

/// Pseudo-labels of both views under `threshold`, from the current model.
pub fn pseudo_label_batch<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    threshold: T,
    cfg: &ObjectiveConfig<T>,
) -> Result<BatchTargets<T>> {
    let label = |x: &Vec<T>| -> Result<PseudoLabel<T>> {
        let logits = params.logits(x)?;
        assign_pseudo_label(
            &logits,
            threshold,
            cfg.tau_base,
            cfg.tau_sharp,
            cfg.tau_conf,
        )
    };
    Ok(BatchTargets {
        view_a: batch.view_a.iter().map(label).collect::<Result<_>>()?,
        view_b: batch.view_b.iter().map(label).collect::<Result<_>>()?,
    })
}

/// Pseudo-labels from the current model, then [`objective_with_targets`].
pub fn total_objective<T: Scalar>(
    batch: &Batch<T>,
    params: &ModelParams<T>,
    threshold: T,
    cfg: &ObjectiveConfig<T>,
) -> Result<LossBreakdown<T>> {
    let targets = if cfg.use_dapl {
        Some(pseudo_label_batch(params, batch, threshold, cfg)?)
    } else {
        None
    };
    objective_with_targets(batch, params, targets.as_ref(), cfg)
}

/// The full objective for fixed pseudo-label targets.
///
/// Supervised terms use the labeled members of the batch; when there are
/// none they contribute zero, as does a supervised contrastive pool without
/// any positive pair.
pub fn objective_with_targets<T: Scalar>(
    batch: &Batch<T>,
    params: &ModelParams<T>,
    targets: Option<&BatchTargets<T>>,
    cfg: &ObjectiveConfig<T>,
) -> Result<LossBreakdown<T>> {
    let n = batch.len();
    check_dim(n, batch.view_b.len())?;
    check_dim(n, batch.labels.len())?;
    let one = T::one();
    let ta = traces(params, &batch.view_a, cfg.tau_base)?;
    let tb = traces(params, &batch.view_b, cfg.tau_base)?;
    let ha: Vec<Vec<T>> = ta.iter().map(|t| t.projection.clone()).collect();
    let hb: Vec<Vec<T>> = tb.iter().map(|t| t.projection.clone()).collect();
    let pa: Vec<Vec<T>> = ta.iter().map(|t| t.posterior.clone()).collect();
    let pb: Vec<Vec<T>> = tb.iter().map(|t| t.posterior.clone()).collect();
    let mut gha = zeros_like(&ha);
    let mut ghb = zeros_like(&hb);
    let mut gpa = zeros_like(&pa);
    let mut gpb = zeros_like(&pb);

    let w_unsup = one - cfg.lambda_sup;
    let w_sup = cfg.lambda_sup;

    let con_unsup = unsup_contrastive(&ha, &hb, cfg.tau_c)?;
    add_scaled(&mut gha, w_unsup, &con_unsup.grad_a);
    add_scaled(&mut ghb, w_unsup, &con_unsup.grad_b);

    let labeled: Vec<usize> = (0..n).filter(|&i| batch.labels[i].is_some()).collect();
    let mut con_sup = T::zero();
    let mut sup_ce = T::zero();
    if !labeled.is_empty() {
        let m = labeled.len();
        let pool: Vec<Vec<T>> = labeled
            .iter()
            .map(|&i| ha[i].clone())
            .chain(labeled.iter().map(|&i| hb[i].clone()))
            .collect();
        let pool_labels: Vec<usize> = labeled
            .iter()
            .chain(&labeled)
            .map(|&i| batch.labels[i].expect("labeled"))
            .collect();
        match sup_contrastive(&pool, &pool_labels, cfg.tau_c) {
            Ok((v, g)) => {
                con_sup = v;
                for (r, &i) in labeled.iter().enumerate() {
                    axpy(&mut gha[i], w_sup, &g[r]);
                    axpy(&mut ghb[i], w_sup, &g[m + r]);
                }
            }
            Err(Error::UndefinedLoss(_)) => {}
            Err(e) => return Err(e),
        }

        let la: Vec<Vec<T>> = labeled.iter().map(|&i| pa[i].clone()).collect();
        let lb: Vec<Vec<T>> = labeled.iter().map(|&i| pb[i].clone()).collect();
        let ll: Vec<Option<usize>> = labeled.iter().map(|&i| batch.labels[i]).collect();
        let ce = supervised_ce(&la, &lb, &ll)?;
        sup_ce = ce.value;
        for (r, &i) in labeled.iter().enumerate() {
            axpy(&mut gpa[i], w_sup, &ce.grad_a[r]);
            axpy(&mut gpb[i], w_sup, &ce.grad_b[r]);
        }
    }

    let mut dapl = T::zero();
    if cfg.use_dapl {
        let targets = targets.ok_or_else(|| Error::config("pseudo-label targets required"))?;
        check_dim(n, targets.view_a.len())?;
        check_dim(n, targets.view_b.len())?;
        let qa: Vec<Vec<T>> = targets.view_a.iter().map(|q| q.target.to_vec()).collect();
        let qb: Vec<Vec<T>> = targets.view_b.iter().map(|q| q.target.to_vec()).collect();
        let l = dapl_loss(&pa, &pb, &qa, &qb)?;
        dapl = l.value;
        add_scaled(&mut gpa, w_unsup, &l.grad_a);
        add_scaled(&mut gpb, w_unsup, &l.grad_b);
    }

    let ent = entropy_reg(&pa, &pb)?;
    add_scaled(&mut gpa, cfg.lambda_entropy, &ent.grad_a);
    add_scaled(&mut gpb, cfg.lambda_entropy, &ent.grad_b);

    let mut gradients = params.zero_gradients();
    let sep_reg = if cfg.lambda_sep > T::zero() || params.num_classes() >= 2 {
        match separation_reg(&params.prototypes, cfg.tau_sep) {
            Ok((v, g)) => {
                gradients.prototypes.scaled_add(cfg.lambda_sep, &g);
                v
            }
            Err(e) if cfg.lambda_sep > T::zero() => return Err(e),
            Err(_) => T::zero(),
        }
    } else {
        T::zero()
    };

    for (trace_set, gp, gh) in [(&ta, &gpa, &gha), (&tb, &gpb, &ghb)] {
        for ((t, gp), gh) in trace_set.iter().zip(gp).zip(gh) {
            let gs = softmax_backward(&t.posterior, gp, cfg.tau_base);
            backward(params, t, &gs, Some(gh), &mut gradients);
        }
    }

    let mut out = LossBreakdown {
        con_unsup: con_unsup.value,
        con_sup,
        dapl,
        sup_ce,
        entropy_reg: ent.value,
        sep_reg,
        total: T::zero(),
        gradients,
    };
    out.total = out.weighted_total(cfg);
    if !out.total.is_finite() {
        return Err(Error::NonFinite(format!("objective value {}", out.total)));
    }
    Ok(out)
}

fn add_scaled<T: Scalar>(dst: &mut [Vec<T>], w: T, src: &[Vec<T>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        axpy(d, w, s);
    }
}

/// Gradient in the logits of `p = softmax(s / tau)` given `dL/dp`.
fn softmax_backward<T: Scalar>(p: &[T], gp: &[T], tau: T) -> Vec<T> {
    let inner = dot(p, gp);
    p.iter()
        .zip(gp)
        .map(|(&pk, &g)| pk * (g - inner) / tau)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn unsup_contrastive_orthogonal_pair() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = unsup_contrastive(&a, &a, 0.07).unwrap();
        // -log(e^{1/t} / (e^{1/t} + 2)) computed directly
        let e = (1.0f64 / 0.07).exp();
        let direct = -(e / (e + 2.0)).ln();
        assert_abs_diff_eq!(l.value, direct, epsilon = 1e-15);
        assert_abs_diff_eq!(l.value, 1.25e-6, epsilon = 1e-8);
    }

    #[test]
    fn unsup_contrastive_needs_two() {
        assert!(unsup_contrastive(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]], 0.07).is_err());
    }

    #[test]
    fn antipodal_negatives_minimize() {
        let pos = vec![1.0, 0.0, 0.0];
        let best = unsup_contrastive(
            &[pos.clone(), vec![-1.0, 0.0, 0.0]],
            &[pos.clone(), vec![-1.0, 0.0, 0.0]],
            0.5,
        )
        .unwrap();
        let worse = unsup_contrastive(
            &[pos.clone(), vec![0.0, 1.0, 0.0]],
            &[pos.clone(), vec![0.0, 1.0, 0.0]],
            0.5,
        )
        .unwrap();
        assert!(best.value < worse.value);
    }

    #[test]
    fn sup_contrastive_example() {
        let h = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (v, _) = sup_contrastive(&h, &[0, 0, 1], 0.07).unwrap();
        let e = (1.0f64 / 0.07).exp();
        assert_abs_diff_eq!(v, -(e / (e + 1.0)).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 6.2e-7, epsilon = 1e-8);
        assert!(matches!(
            sup_contrastive(&h, &[0, 1, 2], 0.07),
            Err(Error::UndefinedLoss(_))
        ));
    }

    #[test]
    fn dapl_examples() {
        let u = vec![vec![0.25; 4]; 3];
        let l = dapl_loss(&u, &u, &u, &u).unwrap();
        assert_abs_diff_eq!(l.value, 4f64.ln(), epsilon = 1e-12);

        let p = vec![vec![1.0 - 1e-12, 1e-12]];
        let q = vec![vec![1.0, 0.0]];
        assert!(dapl_loss(&p, &p, &q, &q).unwrap().value < 1e-11);
        assert!(dapl_loss(&p, &p, &[vec![1.0, 0.0, 0.0]], &q).is_err());
    }

    #[test]
    fn supervised_ce_examples() {
        let p = vec![vec![0.0, 1.0, 0.0]];
        let l = supervised_ce(&p, &p, &[Some(1)]).unwrap();
        assert_eq!(l.value, 0.0);
        let u = vec![vec![0.1; 10]; 2];
        let l = supervised_ce(&u, &u, &[Some(3), Some(7)]).unwrap();
        assert_abs_diff_eq!(l.value, 10f64.ln(), epsilon = 1e-12);
        assert!(supervised_ce(&u, &u, &[Some(3), None]).is_err());
    }

    #[test]
    fn entropy_reg_examples() {
        let u = vec![vec![0.1; 10]; 3];
        let l = entropy_reg(&u, &u).unwrap();
        assert_abs_diff_eq!(l.value, -(10f64.ln()), epsilon = 1e-12);
        let h = vec![vec![0.0, 1.0, 0.0]];
        assert_eq!(entropy_reg(&h, &h).unwrap().value, 0.0);
    }

    #[test]
    fn separation_examples() {
        let (v, _) = separation_reg(&array![[1.0, 0.0], [-1.0, 0.0]], 0.1).unwrap();
        assert_abs_diff_eq!(v, -10.0, epsilon = 1e-12);
        let (v, _) = separation_reg(&array![[1.0, 0.0], [0.0, 1.0]], 0.1).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        let (v, _) = separation_reg(&array![[1.0, 0.0], [1.0, 0.0]], 0.1).unwrap();
        assert_abs_diff_eq!(v, 10.0, epsilon = 1e-12);
        assert!(separation_reg(&array![[1.0, 0.0]], 0.1).is_err());
    }
}
