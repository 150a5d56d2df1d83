//! Losses, optimisers, the bag-sampling training loop and task metrics.

mod losses;
mod metrics;
mod optim;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{io::write_atomic, Dataset, Splits, TaskLabel};
use crate::error::{invalid, Error, Result};
use crate::models::{
    CheckpointMeta, HeadOutput, MilModel, ModelCheckpoint, ModelSpec, Params, TaskHeadSpec,
};
use crate::numeric::Tensor;

pub use crate::data::FoldPlan;
pub use losses::{
    classification_grad, loss_classification, loss_regression, loss_survival, regression_grad,
    survival_grad, HAZARD_CLAMP,
};
pub use metrics::{metric_auroc, metric_auroc_ovr, metric_cindex, metric_spearman};
pub use optim::{Optimizer, OptimizerKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation metric (AUROC, Spearman or C-index); ties go to
    /// the lower validation loss.
    #[default]
    Metric,
    /// Lowest validation loss.
    Loss,
}

fn d_epochs() -> usize {
    30
}
fn d_lr() -> f64 {
    1e-3
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn d_sample() -> usize {
    2048
}
fn d_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    /// Instances sampled per training bag; bags are clipped to their size.
    #[serde(default = "d_sample")]
    pub bag_sample_size: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Weight of the uncensored-only survival term.
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub selection: Selection,
    /// Linear learning-rate warmup length in epochs.
    #[serde(default)]
    pub warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            lr: d_lr(),
            weight_decay: 0.0,
            optimizer: d_optimizer(),
            bag_sample_size: d_sample(),
            batch_size: d_batch(),
            beta: 0.0,
            seed: 0,
            selection: Selection::Metric,
            warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return invalid("weight decay must be >= 0");
        }
        if self.batch_size == 0 || self.bag_sample_size == 0 {
            return invalid("batch size and bag sample size must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return invalid(format!("beta {} outside [0, 1]", self.beta));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<EpochLog>,
}

/// Loss and gradient with respect to the head pre-activation.
pub fn loss_and_grad(out: &HeadOutput, label: &TaskLabel, beta: f64) -> Result<(f64, Vec<f64>)> {
    match (out, label) {
        (HeadOutput::Classification { logits, .. }, TaskLabel::Class(c)) => {
            classification_grad(logits, *c)
        }
        (
            HeadOutput::Regression {
                diff,
                reference_value,
            },
            TaskLabel::Value(v),
        ) => {
            let (l, g) = regression_grad(*diff, *v, *reference_value);
            Ok((l, vec![g]))
        }
        (
            HeadOutput::Survival { logits, .. },
            TaskLabel::Survival {
                interval, censored, ..
            },
        ) => survival_grad(logits, *interval, *censored, beta),
        _ => invalid("label does not match the model head"),
    }
}

/// Task metric over `outputs` paired with `labels`; `None` when undefined
/// (for example a single class or no comparable pairs).
pub fn task_metric(outputs: &[HeadOutput], labels: &[&TaskLabel]) -> Option<f64> {
    match outputs.first()? {
        HeadOutput::Classification { .. } => {
            let mut probs = Vec::new();
            let mut ys = Vec::new();
            for (o, l) in outputs.iter().zip(labels) {
                if let (HeadOutput::Classification { probs: p, .. }, TaskLabel::Class(c)) = (o, l)
                {
                    probs.push(p.clone());
                    ys.push(*c);
                }
            }
            metric_auroc_ovr(&probs, &ys).ok()
        }
        HeadOutput::Regression { .. } => {
            let mut p = Vec::new();
            let mut t = Vec::new();
            for (o, l) in outputs.iter().zip(labels) {
                if let (HeadOutput::Regression { diff, .. }, TaskLabel::Value(v)) = (o, l) {
                    p.push(*diff);
                    t.push(*v);
                }
            }
            metric_spearman(&p, &t).ok()
        }
        HeadOutput::Survival { .. } => {
            let mut r = Vec::new();
            let mut t = Vec::new();
            let mut c = Vec::new();
            for (o, l) in outputs.iter().zip(labels) {
                if let (
                    HeadOutput::Survival { risk, .. },
                    TaskLabel::Survival {
                        raw_time, censored, ..
                    },
                ) = (o, l)
                {
                    r.push(*risk);
                    t.push(*raw_time);
                    c.push(*censored);
                }
            }
            metric_cindex(&r, &t, &c).ok()
        }
    }
}

pub fn metric_name(head: &TaskHeadSpec) -> &'static str {
    match head {
        TaskHeadSpec::Classification { .. } => "auroc",
        TaskHeadSpec::Regression { .. } => "spearman",
        TaskHeadSpec::Survival { .. } => "cindex",
    }
}

fn labelled<'a>(ds: &'a Dataset, ids: &[String]) -> Result<Vec<(&'a Tensor, &'a TaskLabel)>> {
    let by_id: BTreeMap<&str, _> = ds.bags.iter().map(|b| (b.id.as_str(), b)).collect();
    ids.iter()
        .map(|id| {
            let bag = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Invalid(format!("unknown bag {id}")))?;
            let label = bag
                .label
                .as_ref()
                .ok_or_else(|| Error::Invalid(format!("bag {id} has no label")))?;
            Ok((&bag.features, label))
        })
        .collect()
}

/// Full-bag evaluation: returns (metric, mean loss).
pub fn evaluate(
    model: &MilModel,
    ds: &Dataset,
    ids: &[String],
    beta: f64,
) -> Result<(Option<f64>, f64)> {
    let bags = labelled(ds, ids)?;
    let mut outputs = Vec::with_capacity(bags.len());
    let mut loss = 0.0;
    for (x, label) in &bags {
        let out = model.predict(x)?;
        loss += loss_and_grad(&out, label, beta)?.0;
        outputs.push(out);
    }
    let labels: Vec<&TaskLabel> = bags.iter().map(|(_, l)| *l).collect();
    Ok((task_metric(&outputs, &labels), loss / bags.len().max(1) as f64))
}

fn better(sel: Selection, cand: (Option<f64>, f64), best: (Option<f64>, f64)) -> bool {
    match sel {
        Selection::Metric => match (cand.0, best.0) {
            (Some(c), Some(b)) => c > b || (c == b && cand.1 < best.1),
            (Some(_), None) => true,
            _ => false,
        },
        Selection::Loss => cand.1 < best.1,
    }
}

/// Trains from a seeded initialisation and keeps the parameters with the
/// best validation score. Deterministic given `cfg.seed`.
pub fn train(ds: &Dataset, splits: &Splits, spec: ModelSpec, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    splits.check_disjoint()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return invalid("training needs non-empty train and val splits");
    }
    if spec.d_in != ds.dim {
        return invalid(format!("model d_in {} but dataset has {} features", spec.d_in, ds.dim));
    }
    let train_bags = labelled(ds, &splits.train)?;
    let mut model = MilModel::init(spec, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay);

    let mut best_score = evaluate(&model, ds, &splits.val, cfg.beta)?;
    let mut best_params: Params = model.params.clone();
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_bags.len()).collect();

    for epoch in 1..=cfg.epochs {
        let lr = if cfg.warmup > 0 {
            cfg.lr * (epoch as f64 / cfg.warmup as f64).min(1.0)
        } else {
            cfg.lr
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Params> = None;
            for &i in batch {
                let (x, label) = train_bags[i];
                let n = x.rows();
                let x = if n > cfg.bag_sample_size {
                    let mut idx = index::sample(&mut rng, n, cfg.bag_sample_size).into_vec();
                    idx.sort_unstable();
                    x.select_rows(&idx)
                } else {
                    x.clone()
                };
                let trace = model.forward_train(&x, &mut rng).map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
                let (loss, grad) = loss_and_grad(&trace.output, label, cfg.beta)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss {loss}"),
                    });
                }
                total += loss;
                let seed = Tensor::row(grad);
                let grads = trace.graph.backward(&[(trace.head_pre, seed)])?;
                let pg = trace.graph.param_grads(&grads);
                match acc.as_mut() {
                    None => acc = Some(pg),
                    Some(a) => {
                        for (k, g) in pg {
                            a.get_mut(&k).expect("same parameter set").add_assign(&g)?;
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                *g = g.scale(scale);
            }
            opt.step(&mut model.params, &grads, lr);
        }
        let train_loss = total / train_bags.len() as f64;
        let score = evaluate(&model, ds, &splits.val, cfg.beta).map_err(|e| Error::Diverged {
            epoch,
            detail: e.to_string(),
        })?;
        if better(cfg.selection, score, best_score) {
            best_score = score;
            best_params = model.params.clone();
            best_epoch = epoch;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_metric: score.0,
        });
    }

    let best = MilModel::from_params(model.spec.clone(), best_params)?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        best_epoch,
        val_metric: best_score.0,
        metric_name: Some(metric_name(&best.spec.head).into()),
    };
    Ok(TrainResult {
        checkpoint: ModelCheckpoint::new(&best, meta),
        log,
    })
}

/// Writes the per-epoch log as CSV.
pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "train_loss", "val_metric"])?;
    for row in log {
        w.write_record([
            row.epoch.to_string(),
            row.train_loss.to_string(),
            row.val_metric.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}
