//! Multi-label losses.
//!
//! Three forms are provided, each implemented exactly as written:
//!
//! * [`msml_loss`]: multi-label soft margin over one feature per class,
//!   `-sum y log s(x) + (1 - y) log(1 - s(x))`.
//! * [`dual_sigmoid_loss`]: positive/negative feature banks,
//!   `-sum y log s(x+) + (1 - y) log s(x-)`.
//! * [`gsoftmax_multilabel_loss`]: the dual form with G-softmax augmented
//!   inputs `u = x + lambda * Phi(x; mu, sigma)` per bank, but with
//!   `log(1 - s(u-))` as its negative term.
//!
//! The negative terms of the last two differ in sign convention. Both are
//! kept as-is; pick the pair to compare at the experiment level.
//!
//! `log s(u)` is evaluated as `-softplus(-u)` and `log(1 - s(u))` as
//! `-softplus(u)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::predictor::ClassGaussian;
use crate::special::{gaussian_cdf, gaussian_cdf_grads};

/// Logistic function.
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^u)` without overflow.
#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
fn log_sigmoid(u: f64) -> f64 {
    -softplus(-u)
}

#[inline]
fn log_one_minus_sigmoid(u: f64) -> f64 {
    -softplus(u)
}

fn check_binary(y: &[f64]) -> Result<()> {
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::domain(format!(
            "multi-label target y[{i}] = {} is not in {{0, 1}}",
            y[i]
        )));
    }
    Ok(())
}

/// Positive and negative feature banks, `m` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFeatureVector {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl DualFeatureVector {
    pub fn new(pos: Vec<f64>, neg: Vec<f64>) -> Result<Self> {
        check_len(pos.len(), neg.len())?;
        check_finite(&pos, "x_pos")?;
        check_finite(&neg, "x_neg")?;
        Ok(Self { pos, neg })
    }

    /// Splits a `2m`-wide output row: the first half is the positive bank.
    pub fn from_split(row: &[f64]) -> Result<Self> {
        if !row.len().is_multiple_of(2) {
            return Err(Error::domain(format!(
                "dual features need an even width, got {}",
                row.len()
            )));
        }
        let (pos, neg) = row.split_at(row.len() / 2);
        Self::new(pos.to_vec(), neg.to_vec())
    }

    pub fn pos(&self) -> &[f64] {
        &self.pos
    }

    pub fn neg(&self) -> &[f64] {
        &self.neg
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// Learnable state of the multi-label G-softmax head: one Gaussian per class
/// and bank, plus the shared `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPredictorParams {
    pub lambda: f64,
    pub pos: Vec<ClassGaussian>,
    pub neg: Vec<ClassGaussian>,
}

impl DualPredictorParams {
    pub fn new(lambda: f64, pos: Vec<ClassGaussian>, neg: Vec<ClassGaussian>) -> Result<Self> {
        let params = Self { lambda, pos, neg };
        params.validate()?;
        Ok(params)
    }

    pub fn uniform(m: usize, lambda: f64, mu: f64, sigma: f64) -> Result<Self> {
        let g = ClassGaussian::new(mu, sigma)?;
        Self::new(lambda, vec![g; m], vec![g; m])
    }

    pub fn num_classes(&self) -> usize {
        self.pos.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!(
                "lambda = {} must be finite and >= 0",
                self.lambda
            )));
        }
        check_len(self.pos.len(), self.neg.len())?;
        if self.pos.is_empty() {
            return Err(Error::domain("need at least one class"));
        }
        let bad = self
            .pos
            .iter()
            .chain(&self.neg)
            .any(|g| !g.mu().is_finite() || !g.log_sigma().is_finite());
        if bad {
            return Err(Error::domain("non-finite distribution parameters"));
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for DualPredictorParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            lambda: f64,
            pos: Vec<ClassGaussian>,
            neg: Vec<ClassGaussian>,
        }
        let doc = Doc::deserialize(d)?;
        DualPredictorParams::new(doc.lambda, doc.pos, doc.neg).map_err(serde::de::Error::custom)
    }
}

/// Multi-label soft margin loss and `dl/dx = s(x) - y`.
pub fn msml_loss(x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(x.len(), y.len())?;
    check_finite(x, "x")?;
    check_binary(y)?;
    let mut loss = 0.0;
    let mut d_x = Vec::with_capacity(x.len());
    for (&xi, &yi) in x.iter().zip(y) {
        loss -= if yi == 1.0 {
            log_sigmoid(xi)
        } else {
            log_one_minus_sigmoid(xi)
        };
        d_x.push(sigmoid(xi) - yi);
    }
    Ok((loss, d_x))
}

/// Dual-bank sigmoid loss. Only the positive bank contributes where
/// `y = 1`, only the negative bank where `y = 0`.
pub fn dual_sigmoid_loss(f: &DualFeatureVector, y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(f.len(), y.len())?;
    check_binary(y)?;
    let m = f.len();
    let mut loss = 0.0;
    let mut d_pos = vec![0.0; m];
    let mut d_neg = vec![0.0; m];
    for i in 0..m {
        if y[i] == 1.0 {
            loss -= log_sigmoid(f.pos[i]);
            d_pos[i] = sigmoid(f.pos[i]) - 1.0;
        } else {
            loss -= log_sigmoid(f.neg[i]);
            d_neg[i] = sigmoid(f.neg[i]) - 1.0;
        }
    }
    Ok((loss, d_pos, d_neg))
}

/// Gradients of [`gsoftmax_multilabel_loss`], one entry per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrads {
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
    pub d_mu_pos: Vec<f64>,
    pub d_sigma_pos: Vec<f64>,
    pub d_mu_neg: Vec<f64>,
    pub d_sigma_neg: Vec<f64>,
    pub d_lambda: f64,
}

impl DualGrads {
    fn zeros(m: usize) -> Self {
        Self {
            d_pos: vec![0.0; m],
            d_neg: vec![0.0; m],
            d_mu_pos: vec![0.0; m],
            d_sigma_pos: vec![0.0; m],
            d_mu_neg: vec![0.0; m],
            d_sigma_neg: vec![0.0; m],
            d_lambda: 0.0,
        }
    }
}

/// Multi-label G-softmax loss with its six gradient blocks.
///
/// `dl/du+ = y (s(u+) - 1)` and `dl/du- = (1 - y) s(u-)`; both are chained
/// through `u = x + lambda * Phi(x; mu, sigma)`.
#[allow(clippy::needless_range_loop)]
pub fn gsoftmax_multilabel_loss(
    f: &DualFeatureVector,
    y: &[f64],
    params: &DualPredictorParams,
) -> Result<(f64, DualGrads)> {
    check_len(params.num_classes(), f.len())?;
    check_len(f.len(), y.len())?;
    check_binary(y)?;
    let lambda = params.lambda;
    let m = f.len();
    let mut loss = 0.0;
    let mut g = DualGrads::zeros(m);
    for i in 0..m {
        // Only one bank is active per class.
        let (x, dist) = if y[i] == 1.0 {
            (f.pos[i], params.pos[i].params())
        } else {
            (f.neg[i], params.neg[i].params())
        };
        let cdf = gaussian_cdf(x, &dist);
        let u = if lambda == 0.0 { x } else { x + lambda * cdf };
        let kernel = if y[i] == 1.0 {
            loss -= log_sigmoid(u);
            sigmoid(u) - 1.0
        } else {
            loss -= log_one_minus_sigmoid(u);
            sigmoid(u)
        };
        let (d_x, d_mu, d_sigma) = if lambda == 0.0 {
            (kernel, 0.0, 0.0)
        } else {
            let d = gaussian_cdf_grads(x, &dist);
            (
                kernel * (1.0 + lambda * d.d_dx),
                kernel * lambda * d.d_dmu,
                kernel * lambda * d.d_dsigma,
            )
        };
        g.d_lambda += kernel * cdf;
        if y[i] == 1.0 {
            g.d_pos[i] = d_x;
            g.d_mu_pos[i] = d_mu;
            g.d_sigma_pos[i] = d_sigma;
        } else {
            g.d_neg[i] = d_x;
            g.d_mu_neg[i] = d_mu;
            g.d_sigma_neg[i] = d_sigma;
        }
    }
    Ok((loss, g))
}
