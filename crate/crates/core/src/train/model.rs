//! A network paired with its prediction head.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpConfig, MlpGrads};
use crate::error::{Error, Result};
use crate::multilabel::{
    dual_sigmoid_loss, gsoftmax_multilabel_loss, msml_loss, sigmoid, DualFeatureVector,
    DualPredictorParams,
};
use crate::predictor::{gsoftmax_backward, gsoftmax_forward, softmax, softmax_backward, ClassGaussian, PredictorParams};
use crate::special::gaussian_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Softmax,
    Gsoftmax,
    Msml,
    DualSigmoid,
    GsoftmaxMultilabel,
}

impl LossMode {
    pub fn is_multilabel(self) -> bool {
        matches!(self, LossMode::Msml | LossMode::DualSigmoid | LossMode::GsoftmaxMultilabel)
    }

    /// Width of the network output for `m` classes.
    pub fn output_dim(self, m: usize) -> usize {
        match self {
            LossMode::DualSigmoid | LossMode::GsoftmaxMultilabel => 2 * m,
            _ => m,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Softmax => "softmax",
            LossMode::Gsoftmax => "gsoftmax",
            LossMode::Msml => "msml",
            LossMode::DualSigmoid => "dual_sigmoid",
            LossMode::GsoftmaxMultilabel => "gsoftmax_multilabel",
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Initial values of the per-class distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorInit {
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for PredictorInit {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    Plain,
    Single(PredictorParams),
    Dual(DualPredictorParams),
}

impl Head {
    /// Distributions in update order: the single bank, or positive then
    /// negative bank.
    pub fn gaussians(&self) -> Vec<&ClassGaussian> {
        match self {
            Head::Plain => Vec::new(),
            Head::Single(p) => p.classes.iter().collect(),
            Head::Dual(p) => p.pos.iter().chain(&p.neg).collect(),
        }
    }

    pub fn gaussians_mut(&mut self) -> Vec<&mut ClassGaussian> {
        match self {
            Head::Plain => Vec::new(),
            Head::Single(p) => p.classes.iter_mut().collect(),
            Head::Dual(p) => p.pos.iter_mut().chain(p.neg.iter_mut()).collect(),
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Head::Plain => None,
            Head::Single(p) => Some(p.lambda),
            Head::Dual(p) => Some(p.lambda),
        }
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        match self {
            Head::Plain => {}
            Head::Single(p) => p.lambda = lambda,
            Head::Dual(p) => p.lambda = lambda,
        }
    }
}

/// Gradients of the head parameters, flattened in [`Head::gaussians`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub d_mu: Vec<f64>,
    pub d_log_sigma: Vec<f64>,
    pub d_lambda: f64,
}

impl HeadGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mu: vec![0.0; n],
            d_log_sigma: vec![0.0; n],
            d_lambda: 0.0,
        }
    }

    pub fn add_assign(&mut self, o: &HeadGrads) {
        for (a, b) in self.d_mu.iter_mut().zip(&o.d_mu).chain(self.d_log_sigma.iter_mut().zip(&o.d_log_sigma)) {
            *a += b;
        }
        self.d_lambda += o.d_lambda;
    }

    pub fn scale(&mut self, k: f64) {
        self.d_mu.iter_mut().chain(self.d_log_sigma.iter_mut()).for_each(|v| *v *= k);
        self.d_lambda *= k;
    }
}

/// Loss and parameter gradients of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrads {
    pub loss: f64,
    pub net: MlpGrads,
    pub head: HeadGrads,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub mode: LossMode,
    pub num_classes: usize,
    pub net: Mlp,
    pub head: Head,
}

fn d_log_sigma<'a>(d_sigma: &'a [f64], gs: &'a [ClassGaussian]) -> impl Iterator<Item = f64> + 'a {
    d_sigma.iter().zip(gs).map(|(d, g)| d * g.sigma())
}

impl Model {
    /// Builds the network for `mode`; `config.output_dim` is overwritten with
    /// the width the mode needs.
    pub fn new(mode: LossMode, config: &MlpConfig, num_classes: usize, init: PredictorInit) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        let config = MlpConfig {
            output_dim: mode.output_dim(num_classes),
            ..config.clone()
        };
        let head = match mode {
            LossMode::Gsoftmax => Head::Single(PredictorParams::uniform(num_classes, init.lambda, init.mu, init.sigma)?),
            LossMode::GsoftmaxMultilabel => {
                Head::Dual(DualPredictorParams::uniform(num_classes, init.lambda, init.mu, init.sigma)?)
            }
            _ => Head::Plain,
        };
        Self::from_parts(mode, num_classes, Mlp::new(&config)?, head)
    }

    pub fn from_parts(mode: LossMode, num_classes: usize, net: Mlp, head: Head) -> Result<Self> {
        if net.output_dim() != mode.output_dim(num_classes) {
            return Err(Error::Config(format!(
                "{mode} over {num_classes} classes needs {} outputs, network has {}",
                mode.output_dim(num_classes),
                net.output_dim()
            )));
        }
        let head_ok = match (&head, mode) {
            (Head::Single(p), LossMode::Gsoftmax) => p.num_classes() == num_classes,
            (Head::Dual(p), LossMode::GsoftmaxMultilabel) => p.num_classes() == num_classes,
            (Head::Plain, LossMode::Softmax | LossMode::Msml | LossMode::DualSigmoid) => true,
            _ => false,
        };
        if !head_ok {
            return Err(Error::Config(format!("head does not match loss mode {mode}")));
        }
        Ok(Self {
            mode,
            num_classes,
            net,
            head,
        })
    }

    /// Network output: the features fed to the predictor.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    /// Per-class features used for analysis: the whole output, or the
    /// positive bank in the dual-feature modes.
    pub fn class_features(&self, x: &[f64]) -> Vec<f64> {
        let mut f = self.features(x);
        f.truncate(self.num_classes);
        f
    }

    /// Class probabilities (single-label modes) or per-class scores in
    /// `[0, 1]` (multi-label modes).
    ///
    /// Dual-feature scores are `s(x+ - x-)` for the sigmoid pair and
    /// `s(u+ + u-)` for the G-softmax pair, where `u` is the augmented logit.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.scores_from_features(&self.features(x))
    }

    pub fn scores_from_features(&self, f: &[f64]) -> Result<Vec<f64>> {
        Ok(match (&self.head, self.mode) {
            (Head::Single(p), _) => gsoftmax_forward(f, p)?.into_inner(),
            (_, LossMode::Softmax) => softmax(f)?.into_inner(),
            (_, LossMode::Msml) => f.iter().map(|&v| sigmoid(v)).collect(),
            (_, LossMode::DualSigmoid) => {
                let d = DualFeatureVector::from_split(f)?;
                d.pos().iter().zip(d.neg()).map(|(p, n)| sigmoid(p - n)).collect()
            }
            (Head::Dual(p), _) => {
                let d = DualFeatureVector::from_split(f)?;
                let aug = |x: f64, g: &ClassGaussian| {
                    if p.lambda == 0.0 {
                        x
                    } else {
                        x + p.lambda * gaussian_cdf(x, &g.params())
                    }
                };
                (0..d.len())
                    .map(|i| sigmoid(aug(d.pos()[i], &p.pos[i]) + aug(d.neg()[i], &p.neg[i])))
                    .collect()
            }
            _ => unreachable!("head checked at construction"),
        })
    }

    /// Loss and gradients for one sample with dense 0/1 target `y`.
    pub fn sample_grads(&self, x: &[f64], y: &[f64]) -> Result<SampleGrads> {
        let acts = self.net.forward_cached(x);
        let out = acts.last().expect("network has layers");
        let n_head = self.head.gaussians().len();
        let mut head = HeadGrads::zeros(n_head);
        let (loss, d_out) = match (&self.head, self.mode) {
            (Head::Single(p), _) => {
                let b = gsoftmax_backward(out, y, p)?;
                head.d_mu = b.grads.d_mu.clone();
                head.d_log_sigma = d_log_sigma(&b.grads.d_sigma, &p.classes).collect();
                head.d_lambda = b.grads.d_lambda;
                (b.loss, b.grads.d_x)
            }
            (_, LossMode::Softmax) => {
                let (loss, _, d) = softmax_backward(out, y)?;
                (loss, d)
            }
            (_, LossMode::Msml) => msml_loss(out, y)?,
            (_, LossMode::DualSigmoid) => {
                let (loss, dp, dn) = dual_sigmoid_loss(&DualFeatureVector::from_split(out)?, y)?;
                (loss, [dp, dn].concat())
            }
            (Head::Dual(p), _) => {
                let (loss, g) = gsoftmax_multilabel_loss(&DualFeatureVector::from_split(out)?, y, p)?;
                head.d_mu = [g.d_mu_pos, g.d_mu_neg].concat();
                head.d_log_sigma = d_log_sigma(&g.d_sigma_pos, &p.pos)
                    .chain(d_log_sigma(&g.d_sigma_neg, &p.neg))
                    .collect();
                head.d_lambda = g.d_lambda;
                (loss, [g.d_pos, g.d_neg].concat())
            }
            _ => unreachable!("head checked at construction"),
        };
        Ok(SampleGrads {
            loss,
            net: self.net.backward(&acts, &d_out),
            head,
        })
    }
}
