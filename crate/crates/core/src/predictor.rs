//! Single-label G-softmax head.
//!
//! The head turns features `x` into probabilities through augmented logits
//! `z_i = x_i + lambda * Phi(x_i; mu_i, sigma_i)` followed by a softmax. With
//! `lambda = 0` the distribution term is skipped and the result is exactly the
//! plain softmax.
//!
//! Backward pass. For cross-entropy over a softmax, `dl/dz_i = p_i - y_i`.
//! Every other gradient is that kernel times the partial of `z_i`:
//!
//! ```text
//! dl/dx_i     = (p_i - y_i) * (1 + lambda * dPhi_i/dx_i)
//! dl/dmu_i    = (p_i - y_i) * lambda * dPhi_i/dmu_i
//! dl/dsigma_i = (p_i - y_i) * lambda * dPhi_i/dsigma_i
//! dl/dlambda  = sum_i (p_i - y_i) * Phi_i
//! ```
//!
//! A kernel of the form `z_i * sum(y) - y_i` is sometimes seen written for
//! this loss; it does not agree with finite differences and is not used here.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::special::{gaussian_cdf, gaussian_cdf_grads, GaussianParams};

/// Learnable per-class Gaussian. `sigma` is stored as `log_sigma` so plain
/// gradient steps can never make it non-positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassGaussian {
    mu: f64,
    log_sigma: f64,
}

impl ClassGaussian {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let g = GaussianParams::new(mu, sigma)?;
        Ok(Self {
            mu: g.mu(),
            log_sigma: g.sigma().ln(),
        })
    }

    pub fn standard() -> Self {
        Self {
            mu: 0.0,
            log_sigma: 0.0,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn log_sigma(&self) -> f64 {
        self.log_sigma
    }

    pub fn set_mu(&mut self, mu: f64) {
        self.mu = mu;
    }

    pub fn set_log_sigma(&mut self, log_sigma: f64) {
        self.log_sigma = log_sigma;
    }

    /// Read-only view as distribution parameters.
    pub fn params(&self) -> GaussianParams {
        GaussianParams::new(self.mu, self.sigma())
            .expect("log-parameterized sigma is always positive")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassGaussianDoc {
    mu: f64,
    sigma: f64,
}

impl Serialize for ClassGaussian {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ClassGaussianDoc {
            mu: self.mu,
            sigma: self.sigma(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassGaussian {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ClassGaussianDoc::deserialize(d)?;
        ClassGaussian::new(doc.mu, doc.sigma).map_err(serde::de::Error::custom)
    }
}

/// Complete learnable state of a single-label G-softmax head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorParams {
    pub lambda: f64,
    pub classes: Vec<ClassGaussian>,
}

impl PredictorParams {
    pub fn new(lambda: f64, classes: Vec<ClassGaussian>) -> Result<Self> {
        let params = Self { lambda, classes };
        params.validate()?;
        Ok(params)
    }

    /// `m` classes sharing the same initial `(mu, sigma)`.
    pub fn uniform(m: usize, lambda: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(lambda, vec![ClassGaussian::new(mu, sigma)?; m])
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!(
                "lambda = {} must be finite and >= 0",
                self.lambda
            )));
        }
        if self.classes.len() < 2 {
            return Err(Error::domain(format!(
                "need at least 2 classes, got {}",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !c.mu.is_finite() || !c.log_sigma.is_finite() {
                return Err(Error::domain(format!("class {i}: non-finite parameters")));
            }
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for PredictorParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            lambda: f64,
            classes: Vec<ClassGaussian>,
        }
        let doc = Doc::deserialize(d)?;
        PredictorParams::new(doc.lambda, doc.classes).map_err(serde::de::Error::custom)
    }
}

/// A categorical distribution over `m` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction(Vec<f64>);

impl Prediction {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; the first one wins on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for Prediction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradients of the loss for one sample, index-aligned with the classes of
/// [`PredictorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_x: Vec<f64>,
    pub d_mu: Vec<f64>,
    pub d_sigma: Vec<f64>,
    pub d_lambda: f64,
}

impl GradBundle {
    /// Gradient with respect to the stored `log_sigma`: `sigma * dl/dsigma`.
    pub fn d_log_sigma(&self, params: &PredictorParams) -> Vec<f64> {
        self.d_sigma
            .iter()
            .zip(&params.classes)
            .map(|(d, c)| d * c.sigma())
            .collect()
    }
}

/// Output of a backward pass.
#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub probs: Prediction,
    pub grads: GradBundle,
}

fn check_logits(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::domain(format!(
            "softmax needs at least 2 entries, got {}",
            x.len()
        )));
    }
    check_finite(x, "x")
}

/// Max-shifted exponentials and their log-sum-exp.
fn shifted_exp(z: &[f64]) -> (Vec<f64>, f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    let lse = max + sum.ln();
    (e, sum, lse)
}

fn softmax_unchecked(z: &[f64]) -> Vec<f64> {
    let (e, sum, _) = shifted_exp(z);
    e.into_iter().map(|v| v / sum).collect()
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Result<Prediction> {
    check_logits(x)?;
    Ok(Prediction(softmax_unchecked(x)))
}

/// Augmented logits `x_i + lambda * Phi(x_i; mu_i, sigma_i)`. Returns `x`
/// unchanged when `lambda == 0`.
pub fn augmented_logits(x: &[f64], params: &PredictorParams) -> Result<Vec<f64>> {
    check_len(params.num_classes(), x.len())?;
    check_logits(x)?;
    if params.lambda == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x.iter()
        .zip(&params.classes)
        .map(|(&xi, c)| xi + params.lambda * gaussian_cdf(xi, &c.params()))
        .collect())
}

pub fn gsoftmax_forward(x: &[f64], params: &PredictorParams) -> Result<Prediction> {
    let z = augmented_logits(x, params)?;
    Ok(Prediction(softmax_unchecked(&z)))
}

fn check_single_label(y: &[f64]) -> Result<()> {
    check_finite(y, "y")?;
    if y.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("labels must be non-negative"));
    }
    let total: f64 = y.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!(
            "single-label target must sum to 1, sums to {total}"
        )));
    }
    Ok(())
}

/// `-sum_i y_i ln p_i`. Terms with `y_i = 0` are skipped so a zero
/// probability on a wrong class is harmless.
pub fn cross_entropy(p: &Prediction, y: &[f64]) -> Result<f64> {
    check_len(p.len(), y.len())?;
    check_single_label(y)?;
    let loss: f64 = p
        .0
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi != 0.0)
        .map(|(&pi, &yi)| -yi * pi.ln())
        .sum();
    Ok(loss.max(0.0))
}

/// Softmax cross-entropy on logits `z`: loss via log-sum-exp, the
/// probabilities and `dl/dz = p - y`.
fn softmax_ce(z: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (e, sum, lse) = shifted_exp(z);
    let p: Vec<f64> = e.into_iter().map(|v| v / sum).collect();
    let loss: f64 = z
        .iter()
        .zip(y)
        .filter(|(_, &yi)| yi != 0.0)
        .map(|(&zi, &yi)| yi * (lse - zi))
        .sum();
    let dz = p.iter().zip(y).map(|(pi, yi)| pi - yi).collect();
    (loss.max(0.0), p, dz)
}

/// Plain softmax cross-entropy with `dl/dx = p - y`.
pub fn softmax_backward(x: &[f64], y: &[f64]) -> Result<(f64, Prediction, Vec<f64>)> {
    check_logits(x)?;
    check_len(x.len(), y.len())?;
    check_single_label(y)?;
    let (loss, p, dz) = softmax_ce(x, y);
    Ok((loss, Prediction(p), dz))
}

/// Loss and analytic gradients of cross-entropy over the G-softmax.
pub fn gsoftmax_backward(x: &[f64], y: &[f64], params: &PredictorParams) -> Result<Backward> {
    check_len(x.len(), y.len())?;
    check_single_label(y)?;
    let z = augmented_logits(x, params)?;
    let (loss, p, dz) = softmax_ce(&z, y);
    let lambda = params.lambda;
    let m = x.len();
    let mut grads = GradBundle {
        d_x: Vec::with_capacity(m),
        d_mu: Vec::with_capacity(m),
        d_sigma: Vec::with_capacity(m),
        d_lambda: 0.0,
    };
    for ((&xi, &k), c) in x.iter().zip(&dz).zip(&params.classes) {
        if lambda == 0.0 {
            grads.d_x.push(k);
            grads.d_mu.push(0.0);
            grads.d_sigma.push(0.0);
            grads.d_lambda += k * gaussian_cdf(xi, &c.params());
            continue;
        }
        let g = c.params();
        let d = gaussian_cdf_grads(xi, &g);
        grads.d_x.push(k * (1.0 + lambda * d.d_dx));
        grads.d_mu.push(k * lambda * d.d_dmu);
        grads.d_sigma.push(k * lambda * d.d_dsigma);
        grads.d_lambda += k * gaussian_cdf(xi, &g);
    }
    Ok(Backward {
        loss,
        probs: Prediction(p),
        grads,
    })
}

/// One-hot target of length `m`.
pub fn one_hot(m: usize, class: usize) -> Vec<f64> {
    let mut y = vec![0.0; m];
    y[class] = 1.0;
    y
}
