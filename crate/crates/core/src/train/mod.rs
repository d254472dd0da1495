//! Mini-batch training of a [`Model`] with SGD, momentum and weight decay.
//!
//! Every step uses the batch-mean gradient. Network weights, the predictor's
//! `mu` and `log sigma` and, when enabled, `lambda` all follow
//! `v <- gamma v - eta (g + eps w); w <- w + v`.

pub mod data;
pub mod mlp;
pub mod model;
pub mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{generate_blobs, generate_multilabel_blobs, load_cifar10_binary, parse_cifar10, Dataset, Labels, MultiLabelBlobSpec, SyntheticBlobSpec};
pub use mlp::{Activation, Layer, Mlp, MlpConfig, MlpGrads};
pub use model::{Head, HeadGrads, LossMode, Model, PredictorInit, SampleGrads};
pub use optim::{sgd_step, SgdConfig};

use crate::analysis::FeatureRow;
use crate::error::{Error, Result};
use crate::metrics::{mean_average_precision, RankedPredictions};
use crate::predictor::argmax;
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub sgd: SgdConfig,
    /// Scales the learning rate of `mu`, `log sigma` and `lambda`.
    #[serde(default = "one")]
    pub predictor_lr_multiplier: f64,
    /// Apply weight decay to `mu` and `log sigma`.
    #[serde(default = "yes")]
    pub decay_distribution_params: bool,
    #[serde(default)]
    pub learn_lambda: bool,
    /// Seed of the per-epoch shuffle.
    #[serde(default)]
    pub seed: u64,
    /// Evaluate per-sample gradients on the rayon pool. Results are reduced
    /// in sample order, so they match the sequential path bit for bit.
    #[serde(default)]
    pub parallel: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, schedule: Schedule) -> Self {
        Self {
            epochs,
            batch_size,
            schedule,
            sgd: SgdConfig::default(),
            predictor_lr_multiplier: 1.0,
            decay_distribution_params: true,
            learn_lambda: false,
            seed: 0,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        self.schedule.validate()?;
        if let Some(max) = self.schedule.max_epoch() {
            if max < self.epochs {
                return Err(Error::Config(format!(
                    "schedule ends at epoch {max} but training runs {} epochs",
                    self.epochs
                )));
            }
        }
        self.sgd.validate()?;
        if !(self.predictor_lr_multiplier >= 0.0 && self.predictor_lr_multiplier.is_finite()) {
            return Err(Error::Config("predictor_lr_multiplier must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Accuracy (single-label) or mAP (multi-label) on the training set.
    pub train_metric: f64,
    pub test_metric: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History(pub Vec<EpochRecord>);

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.0.last()
    }

    /// CSV with columns `epoch,lr,loss,metric,test_metric`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "lr", "loss", "metric", "test_metric"])?;
        for r in &self.0 {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.loss.to_string(),
                r.train_metric.to_string(),
                r.test_metric.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Velocity buffers for every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub lambda: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, config: SgdConfig) -> Self {
        let n = model.head.gaussians().len();
        Self {
            config,
            weights: model.net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            mu: vec![0.0; n],
            log_sigma: vec![0.0; n],
            lambda: 0.0,
        }
    }
}

fn check_labels(model: &Model, data: &Dataset) -> Result<()> {
    if data.labels.is_multi() != model.mode.is_multilabel() {
        return Err(Error::Config(format!(
            "loss mode {} does not match {} labels",
            model.mode,
            if data.labels.is_multi() { "multi-label" } else { "single-label" }
        )));
    }
    if data.num_classes != model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes, model.num_classes
        )));
    }
    if !data.is_empty() && data.dim() != model.net.input_dim() {
        return Err(Error::Config(format!(
            "dataset inputs have {} dimensions, network expects {}",
            data.dim(),
            model.net.input_dim()
        )));
    }
    Ok(())
}

/// Sum of per-sample gradients over `batch`, added in batch order.
fn batch_grads(model: &Model, data: &Dataset, batch: &[usize], parallel: bool) -> Result<SampleGrads> {
    let one = |&i: &usize| model.sample_grads(&data.inputs[i], &data.labels.target(i, data.num_classes));
    let per_sample: Vec<SampleGrads> = if parallel {
        batch.par_iter().map(one).collect::<Result<_>>()?
    } else {
        batch.iter().map(one).collect::<Result<_>>()?
    };
    let mut acc = SampleGrads {
        loss: 0.0,
        net: MlpGrads::zeros_like(&model.net),
        head: HeadGrads::zeros(model.head.gaussians().len()),
    };
    for g in &per_sample {
        acc.loss += g.loss;
        acc.net.add_assign(&g.net);
        acc.head.add_assign(&g.head);
    }
    Ok(acc)
}

fn apply_update(model: &mut Model, state: &mut OptimizerState, g: &SampleGrads, lr: f64, cfg: &TrainConfig) {
    let SgdConfig { momentum, weight_decay } = state.config;
    for (i, layer) in model.net.layers.iter_mut().enumerate() {
        sgd_step(&mut layer.weights, &mut state.weights[i], &g.net.weights[i], lr, momentum, weight_decay);
        sgd_step(&mut layer.bias, &mut state.bias[i], &g.net.bias[i], lr, momentum, weight_decay);
    }
    let plr = lr * cfg.predictor_lr_multiplier;
    let decay = if cfg.decay_distribution_params { weight_decay } else { 0.0 };
    let (mut mu, mut ls): (Vec<f64>, Vec<f64>) =
        model.head.gaussians().iter().map(|c| (c.mu(), c.log_sigma())).unzip();
    if !mu.is_empty() {
        sgd_step(&mut mu, &mut state.mu, &g.head.d_mu, plr, momentum, decay);
        sgd_step(&mut ls, &mut state.log_sigma, &g.head.d_log_sigma, plr, momentum, decay);
        for ((c, m), s) in model.head.gaussians_mut().into_iter().zip(mu).zip(ls) {
            c.set_mu(m);
            c.set_log_sigma(s);
        }
    }
    if cfg.learn_lambda {
        if let Some(l) = model.head.lambda() {
            let mut w = [l];
            sgd_step(&mut w, std::slice::from_mut(&mut state.lambda), &[g.head.d_lambda], plr, momentum, 0.0);
            model.head.set_lambda(w[0].max(0.0));
        }
    }
}

fn check_step(model: &Model, loss: f64, epoch: usize, step: usize) -> Result<()> {
    let params_ok = model.head.gaussians().iter().all(|c| c.mu().is_finite() && c.sigma() > 0.0 && c.sigma().is_finite());
    if !loss.is_finite() || !params_ok {
        return Err(Error::Divergence { epoch, step, loss });
    }
    Ok(())
}

/// Inputs are checked to be finite, so a domain error during training means
/// the network output overflowed.
fn overflow(epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Domain(_) => Error::Divergence { epoch, step, loss: f64::NAN },
        e => e,
    }
}

/// Trains `model` in place and returns the per-epoch history. `test`, when
/// given, is evaluated after every epoch.
pub fn train(model: &mut Model, train_set: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_labels(model, train_set)?;
    if let Some(t) = test {
        check_labels(model, t)?;
    }
    if train_set.is_empty() {
        return Err(Error::Format("training set is empty".into()));
    }
    if train_set.inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Format("training inputs contain non-finite values".into()));
    }
    let mut state = OptimizerState::new(model, cfg.sgd);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.rate_at(epoch)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let mut g = batch_grads(model, train_set, batch, cfg.parallel).map_err(overflow(epoch, step))?;
            let scale = 1.0 / batch.len() as f64;
            g.loss *= scale;
            g.net.scale(scale);
            g.head.scale(scale);
            check_step(model, g.loss, epoch, step)?;
            apply_update(model, &mut state, &g, lr, cfg);
            check_step(model, g.loss, epoch, step)?;
            loss_sum += g.loss;
            batches += 1;
        }
        history.push(EpochRecord {
            epoch,
            lr,
            loss: loss_sum / batches as f64,
            train_metric: evaluate(model, train_set).map_err(overflow(epoch, step))?,
            test_metric: test.map(|t| evaluate(model, t)).transpose().map_err(overflow(epoch, step))?,
        });
    }
    Ok(History(history))
}

/// Mean loss over `data` without updating anything.
pub fn mean_loss(model: &Model, data: &Dataset) -> Result<f64> {
    check_labels(model, data)?;
    let total = (0..data.len())
        .map(|i| model.sample_grads(&data.inputs[i], &data.labels.target(i, data.num_classes)).map(|g| g.loss))
        .sum::<Result<f64>>()?;
    Ok(total / data.len() as f64)
}

/// Scores of every item, see [`Model::scores`].
pub fn predict(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs.iter().map(|x| model.scores(x)).collect()
}

/// Accuracy for single-label data, mAP for multi-label data.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let scores = predict(model, data)?;
    match &data.labels {
        Labels::Single(y) => {
            let hits = scores.iter().zip(y).filter(|(s, &c)| argmax(s) == c).count();
            Ok(hits as f64 / y.len() as f64)
        }
        Labels::Multi(y) => Ok(mean_average_precision(&RankedPredictions::from_matrix(&scores, y)?)
            .map(|r| r.map)
            .unwrap_or(f64::NAN)),
    }
}

/// Class features of every item that has a class, tagged with that class.
pub fn export_features(model: &Model, data: &Dataset) -> Vec<FeatureRow> {
    (0..data.len())
        .filter_map(|i| {
            data.labels.primary_class(i).map(|class_id| FeatureRow {
                class_id,
                features: model.class_features(&data.inputs[i]),
            })
        })
        .collect()
}

/// Feature-versus-score pairs for scatter plots: one CSV row
/// `item,class_id,output,feature,score` per item and class.
pub fn write_scatter_csv<W: std::io::Write>(model: &Model, data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["item", "class_id", "output", "feature", "score"])?;
    for (i, x) in data.inputs.iter().enumerate() {
        let Some(class_id) = data.labels.primary_class(i) else { continue };
        let f = model.features(x);
        let s = model.scores_from_features(&f)?;
        for (o, (fv, sv)) in f.iter().zip(&s).enumerate() {
            w.write_record([i.to_string(), class_id.to_string(), o.to_string(), fv.to_string(), sv.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
