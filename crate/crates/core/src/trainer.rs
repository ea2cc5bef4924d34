//! Epoch loop: per-epoch pseudo-label threshold, shuffled two-view batches,
//! objective evaluation and optimizer steps.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dapl::{proto_confidence, DaplEpochState};
use crate::dataset::{make_views, EmbeddingDataset};
use crate::error::{Error, Result};
use crate::evaluation::{clustering_accuracy, predict};
use crate::model::{init_params, InitStrategy, ModelParams};
use crate::objectives::{total_objective, Batch, LossBreakdown, ObjectiveConfig};
use crate::optimizer::{cosine_lr, OptimizerConfig, Sgd};
use crate::rng::{derive_seed, stream_rng, streams, Rng};
use crate::Scalar;

/// Model shape. `None` fields are taken from the dataset: `d` from the
/// embedding width, `num_classes` from the dataset's class count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsConfig {
    pub d: Option<usize>,
    pub d_h: usize,
    pub num_classes: Option<usize>,
    pub init: InitStrategy,
}

impl Default for DimsConfig {
    fn default() -> Self {
        DimsConfig {
            d: None,
            d_h: 32,
            num_classes: None,
            init: InitStrategy::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    deny_unknown_fields,
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct TrainConfig<T> {
    pub objective: ObjectiveConfig<T>,
    pub e_ramp: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub view_sigma: T,
    pub seed: u64,
    /// `total_epochs` is overridden by `schedule_epochs`, else `epochs`.
    pub optimizer: OptimizerConfig<T>,
    pub dims: DimsConfig,
    /// Length of the cosine schedule when it should outlast the run
    /// (short runs that follow the start of a longer schedule).
    pub schedule_epochs: Option<usize>,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        TrainConfig {
            objective: ObjectiveConfig::default(),
            e_ramp: 100,
            epochs: 200,
            batch_size: 128,
            view_sigma: T::of(0.05),
            seed: 0,
            optimizer: OptimizerConfig::default(),
            dims: DimsConfig::default(),
            schedule_epochs: None,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.schedule().validate()?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.view_sigma >= T::zero()) {
            return Err(Error::config("view_sigma must be non-negative"));
        }
        if self.dims.d_h < 2 || self.dims.d.is_some_and(|d| d < 2) {
            return Err(Error::config("feature and projection widths must be >= 2"));
        }
        Ok(())
    }

    /// Optimizer settings with the schedule length resolved.
    pub fn schedule(&self) -> OptimizerConfig<T> {
        OptimizerConfig {
            total_epochs: self
                .schedule_epochs
                .map_or(self.epochs, |s| s.max(self.epochs)),
            ..self.optimizer
        }
    }
}

/// Batch-averaged term values for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSummary<T> {
    pub con_unsup: T,
    pub con_sup: T,
    pub dapl: T,
    pub sup_ce: T,
    pub entropy_reg: T,
    pub sep_reg: T,
    pub total: T,
}

impl<T: Scalar> LossSummary<T> {
    fn accumulate(&mut self, l: &LossBreakdown<T>) {
        self.con_unsup = self.con_unsup + l.con_unsup;
        self.con_sup = self.con_sup + l.con_sup;
        self.dapl = self.dapl + l.dapl;
        self.sup_ce = self.sup_ce + l.sup_ce;
        self.entropy_reg = self.entropy_reg + l.entropy_reg;
        self.sep_reg = self.sep_reg + l.sep_reg;
        self.total = self.total + l.total;
    }

    fn scale(&mut self, c: T) {
        for v in [
            &mut self.con_unsup,
            &mut self.con_sup,
            &mut self.dapl,
            &mut self.sup_ce,
            &mut self.entropy_reg,
            &mut self.sep_reg,
            &mut self.total,
        ] {
            *v = *v * c;
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    pub lr: T,
    pub losses: LossSummary<T>,
    /// Share of unlabeled samples at or above the threshold.
    pub hard_ratio: f64,
    /// Pseudo-label threshold; `None` while no sample is hard (infinite).
    pub delta: Option<T>,
    pub mean_confidence: f64,
    pub batches: usize,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory<T> {
    pub records: Vec<EpochRecord<T>>,
    /// Epoch whose parameters were returned when validation selection ran.
    pub selected_epoch: Option<usize>,
}

impl<T> TrainHistory<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Optional extras for [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a, T> {
    /// Start from these parameters instead of a fresh initialization.
    pub init: Option<ModelParams<T>>,
    /// Fully labeled held-out set; when given, the parameters with the best
    /// clustering accuracy on it are returned.
    pub validation: Option<&'a EmbeddingDataset<T>>,
    /// Receives one JSON line per epoch.
    pub log: Option<&'a mut dyn Write>,
    /// Pseudo-label toggle overriding `objective.use_dapl` when set.
    pub use_dapl: Option<bool>,
}

pub fn train<T: Scalar + Serialize>(
    dataset: &EmbeddingDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(ModelParams<T>, TrainHistory<T>)> {
    train_with(dataset, cfg, TrainOptions::default())
}

/// Fresh parameters for `dataset` under `cfg`, drawn from the init stream.
pub fn initial_params<T: Scalar>(
    dataset: &EmbeddingDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<ModelParams<T>> {
    let d_in = dataset.dim();
    let k = cfg.dims.num_classes.unwrap_or(dataset.num_classes());
    let k_old = dataset.old_classes().len().min(k);
    init_params(
        d_in,
        cfg.dims.d.unwrap_or(d_in),
        cfg.dims.d_h,
        k,
        k_old,
        cfg.dims.init,
        &mut stream_rng(cfg.seed, streams::INIT),
    )
}

pub fn train_with<T: Scalar + Serialize>(
    dataset: &EmbeddingDataset<T>,
    cfg: &TrainConfig<T>,
    mut opts: TrainOptions<'_, T>,
) -> Result<(ModelParams<T>, TrainHistory<T>)> {
    let mut cfg = *cfg;
    if let Some(on) = opts.use_dapl {
        cfg.objective.use_dapl = on;
    }
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::domain("training needs at least two samples"));
    }
    let mut params = match opts.init.take() {
        Some(p) => {
            if p.d_in() != dataset.dim() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.dim(),
                    actual: p.d_in(),
                });
            }
            p
        }
        None => initial_params(dataset, &cfg)?,
    };
    let mut sgd = Sgd::new(cfg.schedule());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(derive_seed(cfg.seed, epoch as u64), streams::SHUFFLE);
        let mut record = train_epoch(&mut params, &mut sgd, dataset, epoch, &cfg, &mut rng)?;
        if let Some(val) = opts.validation {
            let preds = predict(&params, val.features())?;
            let acc = clustering_accuracy(&preds, val.true_labels(), None)?.acc_all;
            record.val_acc = Some(acc);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
        }
        if let Some(log) = opts.log.as_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(log, "{line}").map_err(|e| Error::io("<training log>", e))?;
        }
        history.records.push(record);
    }
    if let Some((_, epoch, p)) = best {
        history.selected_epoch = Some(epoch);
        params = p;
    }
    Ok((params, history))
}

/// Pseudo-label threshold state from the current model over the unlabeled
/// samples (clean features, no views).
pub fn dapl_state<T: Scalar>(
    params: &ModelParams<T>,
    dataset: &EmbeddingDataset<T>,
    epoch: usize,
    cfg: &TrainConfig<T>,
) -> Result<DaplEpochState<T>> {
    let unlabeled: Vec<usize> = (0..dataset.len())
        .filter(|&i| !dataset.is_labeled(i))
        .collect();
    let confs = unlabeled
        .par_iter()
        .map(|&i| {
            let logits = params.logits(dataset.feature(i))?;
            proto_confidence(&logits, cfg.objective.tau_conf)
        })
        .collect::<Result<Vec<T>>>()?;
    DaplEpochState::build(epoch, cfg.e_ramp, confs)
}

/// Splits a permutation into batches of `batch_size`; a trailing batch of a
/// single sample joins the previous one.
pub fn partition(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size.max(1))
        .map(|c| c.to_vec())
        .collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// One epoch: threshold refresh, shuffle, batches, steps.
pub fn train_epoch<T: Scalar>(
    params: &mut ModelParams<T>,
    sgd: &mut Sgd<T>,
    dataset: &EmbeddingDataset<T>,
    epoch: usize,
    cfg: &TrainConfig<T>,
    rng: &mut Rng,
) -> Result<EpochRecord<T>> {
    let state = dapl_state(params, dataset, epoch, cfg)?;
    let lr = cosine_lr(epoch, &sgd.config)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let batches = partition(&order, cfg.batch_size);
    let mut summary = LossSummary::default();

    for (b, idx) in batches.iter().enumerate() {
        let mut batch = Batch {
            view_a: Vec::with_capacity(idx.len()),
            view_b: Vec::with_capacity(idx.len()),
            labels: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let v = make_views(dataset.feature(i), cfg.view_sigma, rng)?;
            batch.view_a.push(v.view_a.into_inner());
            batch.view_b.push(v.view_b.into_inner());
            batch.labels.push(dataset.labeled_label(i));
        }
        let loss = total_objective(&batch, params, state.threshold, &cfg.objective)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
        if !loss.gradients.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}, batch {b}: non-finite gradient"
            )));
        }
        sgd.step(params, &loss.gradients, lr)?;
        summary.accumulate(&loss);
    }
    summary.scale(T::one() / T::of_usize(batches.len()));

    Ok(EpochRecord {
        epoch,
        lr,
        losses: summary,
        hard_ratio: state.hard_fraction(),
        delta: state.threshold.is_finite().then_some(state.threshold),
        mean_confidence: state.mean_confidence(),
        batches: batches.len(),
        val_acc: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SamplesPerClass, SyntheticConfig};

    fn small() -> EmbeddingDataset<f64> {
        generate_synthetic::<f64>(&SyntheticConfig {
            total_classes: 4,
            old_classes: 2,
            dim: 6,
            samples_per_class: SamplesPerClass::Constant(15),
            seed: 11,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .dataset
    }

    fn cfg(epochs: usize) -> TrainConfig<f64> {
        TrainConfig {
            epochs,
            e_ramp: 2,
            batch_size: 16,
            dims: DimsConfig {
                d_h: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let ds = small();
        let c = cfg(0);
        let (p, h) = train(&ds, &c).unwrap();
        assert!(h.is_empty());
        assert_eq!(p, initial_params(&ds, &c).unwrap());
    }

    #[test]
    fn history_length_and_ramp() {
        let ds = small();
        let (_, h) = train(&ds, &cfg(4)).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h.records[0].hard_ratio, 0.0);
        assert!(h.records[0].delta.is_none());
        assert_eq!(h.records[2].hard_ratio, 1.0);
        assert_eq!(h.records[3].hard_ratio, 1.0);
    }

    #[test]
    fn partition_covers_once() {
        let order: Vec<usize> = (0..33).rev().collect();
        let parts = partition(&order, 16);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].len(), 17);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..33).collect::<Vec<_>>());
        assert_eq!(partition(&order[..20], 16).len(), 2);
    }

    #[test]
    fn deterministic() {
        let ds = small();
        let (a, ha) = train(&ds, &cfg(3)).unwrap();
        let (b, hb) = train(&ds, &cfg(3)).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(ha, hb);
    }

    #[test]
    fn never_reads_unlabeled_truth() {
        let ds = small();
        train(&ds, &cfg(2)).unwrap();
        assert_eq!(ds.unlabeled_label_reads(), 0);
    }

    #[test]
    fn log_lines_per_epoch() {
        let ds = small();
        let mut buf = Vec::new();
        train_with(
            &ds,
            &cfg(3),
            TrainOptions {
                log: Some(&mut buf),
                ..Default::default()
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let rec: EpochRecord<f64> = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.epoch, 0);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg(1);
        c.objective.tau_sharp = 0.2;
        assert!(matches!(train(&small(), &c), Err(Error::Config(_))));
    }
}
