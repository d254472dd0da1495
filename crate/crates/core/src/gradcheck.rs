//! Finite-difference verification of every analytic gradient of the
//! single-label G-softmax loss and the multi-label G-softmax loss.
//!
//! Configurations cycle through `m in {2, 10, 100}` and `lambda in {0, 0.5,
//! 1}`; `sigma` is log-uniform on `[0.1, 10]`. Derivatives use the five-point
//! stencil with a step proportional to the local scale of `Phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::multilabel::{gsoftmax_multilabel_loss, DualFeatureVector, DualPredictorParams};
use crate::predictor::{gsoftmax_backward, one_hot, ClassGaussian, PredictorParams};

pub const CLASS_COUNTS: [usize; 3] = [2, 10, 100];
pub const LAMBDAS: [f64; 3] = [0.0, 0.5, 1.0];
pub const SIGMA_RANGE: (f64, f64) = (0.1, 10.0);
pub const TOLERANCE: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Five-point central difference of `f` at `v` with step `h`.
pub fn five_point(f: impl Fn(f64) -> f64, v: f64, h: f64) -> f64 {
    (8.0 * (f(v + h) - f(v - h)) - (f(v + 2.0 * h) - f(v - 2.0 * h))) / (12.0 * h)
}

const STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Worst {
    pub trial: usize,
    pub seed: u64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Worst>,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
    /// With `lambda = 0` every `mu` and `sigma` gradient was exactly zero.
    pub zero_lambda_distribution_grads_vanish: bool,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.zero_lambda_distribution_grads_vanish && self.blocks.iter().all(BlockReport::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockReport> {
        self.blocks.iter().filter(|b| !b.passed())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub m: usize,
    pub lambda: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub x: Vec<f64>,
}

impl TrialConfig {
    pub fn random(trial: usize, rng: &mut impl Rng, width: usize) -> Self {
        let m = CLASS_COUNTS[trial % CLASS_COUNTS.len()];
        let lambda = LAMBDAS[(trial / CLASS_COUNTS.len()) % LAMBDAS.len()];
        let n = m * width;
        let (lo, hi) = (SIGMA_RANGE.0.ln(), SIGMA_RANGE.1.ln());
        let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi).exp()).collect();
        // Features land within a few sigma of the mean so the CDF terms are
        // not all saturated.
        let x = mu.iter().zip(&sigma).map(|(u, s)| u + s * rng.random_range(-3.0..3.0)).collect();
        Self { m, lambda, mu, sigma, x }
    }

    fn gaussians(mu: &[f64], sigma: &[f64]) -> Vec<ClassGaussian> {
        mu.iter()
            .zip(sigma)
            .map(|(&u, &s)| ClassGaussian::new(u, s).expect("sigma > 0"))
            .collect()
    }
}

type Blocks = Vec<(&'static str, Vec<(f64, f64)>)>;

fn check_coords(
    analytic: &[f64],
    values: &[f64],
    scale: impl Fn(usize) -> f64,
    loss: &dyn Fn(usize, f64) -> f64,
) -> Vec<(f64, f64)> {
    analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, five_point(|v| loss(i, v), values[i], STEP * scale(i))))
        .collect()
}

fn with(v: &[f64], i: usize, value: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    out[i] = value;
    out
}

/// Single-label loss: `d_x`, `d_mu`, `d_sigma`, `d_lambda`.
pub fn single_label_trial(c: &TrialConfig, class: usize) -> Result<(Blocks, bool)> {
    let y = one_hot(c.m, class);
    let loss = |x: &[f64], mu: &[f64], sigma: &[f64], lambda: f64| {
        // Built directly: the lambda stencil steps below zero when lambda = 0.
        let p = PredictorParams {
            lambda,
            classes: TrialConfig::gaussians(mu, sigma),
        };
        gsoftmax_backward(x, &y, &p).expect("valid input").loss
    };
    let params = PredictorParams::new(c.lambda, TrialConfig::gaussians(&c.mu, &c.sigma))?;
    let g = gsoftmax_backward(&c.x, &y, &params)?.grads;
    let local = |i: usize| c.sigma[i].min(1.0);
    let blocks = vec![
        ("single.d_x", check_coords(&g.d_x, &c.x, local, &|i, v| loss(&with(&c.x, i, v), &c.mu, &c.sigma, c.lambda))),
        ("single.d_mu", check_coords(&g.d_mu, &c.mu, local, &|i, v| loss(&c.x, &with(&c.mu, i, v), &c.sigma, c.lambda))),
        (
            "single.d_sigma",
            check_coords(&g.d_sigma, &c.sigma, |i| c.sigma[i], &|i, v| loss(&c.x, &c.mu, &with(&c.sigma, i, v), c.lambda)),
        ),
        ("single.d_lambda", vec![(g.d_lambda, five_point(|l| loss(&c.x, &c.mu, &c.sigma, l), c.lambda, STEP))]),
    ];
    let vanish = c.lambda != 0.0 || g.d_mu.iter().chain(&g.d_sigma).all(|&v| v == 0.0);
    Ok((blocks, vanish))
}

/// Multi-label loss: the six feature and distribution blocks plus `d_lambda`.
/// `c` carries `2m` entries, positive bank first.
pub fn multilabel_trial(c: &TrialConfig, y: &[f64]) -> Result<(Blocks, bool)> {
    let m = c.m;
    let loss = |x: &[f64], mu: &[f64], sigma: &[f64], lambda: f64| {
        let g = TrialConfig::gaussians(mu, sigma);
        let p = DualPredictorParams {
            lambda,
            pos: g[..m].to_vec(),
            neg: g[m..].to_vec(),
        };
        gsoftmax_multilabel_loss(&DualFeatureVector::from_split(x).expect("even width"), y, &p)
            .expect("valid input")
            .0
    };
    let g = TrialConfig::gaussians(&c.mu, &c.sigma);
    let params = DualPredictorParams::new(c.lambda, g[..m].to_vec(), g[m..].to_vec())?;
    let (_, d) = gsoftmax_multilabel_loss(&DualFeatureVector::from_split(&c.x)?, y, &params)?;
    let d_x = [d.d_pos.clone(), d.d_neg.clone()].concat();
    let d_mu = [d.d_mu_pos.clone(), d.d_mu_neg.clone()].concat();
    let d_sigma = [d.d_sigma_pos.clone(), d.d_sigma_neg.clone()].concat();
    let local = |i: usize| c.sigma[i].min(1.0);
    let xs = check_coords(&d_x, &c.x, local, &|i, v| loss(&with(&c.x, i, v), &c.mu, &c.sigma, c.lambda));
    let mus = check_coords(&d_mu, &c.mu, local, &|i, v| loss(&c.x, &with(&c.mu, i, v), &c.sigma, c.lambda));
    let sigmas =
        check_coords(&d_sigma, &c.sigma, |i| c.sigma[i], &|i, v| loss(&c.x, &c.mu, &with(&c.sigma, i, v), c.lambda));
    let blocks = vec![
        ("multilabel.d_pos", xs[..m].to_vec()),
        ("multilabel.d_neg", xs[m..].to_vec()),
        ("multilabel.d_mu_pos", mus[..m].to_vec()),
        ("multilabel.d_sigma_pos", sigmas[..m].to_vec()),
        ("multilabel.d_mu_neg", mus[m..].to_vec()),
        ("multilabel.d_sigma_neg", sigmas[m..].to_vec()),
        ("multilabel.d_lambda", vec![(d.d_lambda, five_point(|l| loss(&c.x, &c.mu, &c.sigma, l), c.lambda, STEP))]),
    ];
    let vanish = c.lambda != 0.0 || d_mu.iter().chain(&d_sigma).all(|&v| v == 0.0);
    Ok((blocks, vanish))
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Runs `trials` configurations of each suite. Trial `t` is seeded with
/// `seed + t`, so any failure can be replayed alone.
pub fn run_gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let single = TrialConfig::random(t, &mut rng, 1);
            let class = rng.random_range(0..single.m);
            let (mut blocks, v1) = single_label_trial(&single, class)?;
            let multi = TrialConfig::random(t, &mut rng, 2);
            let y: Vec<f64> = (0..multi.m).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
            let (mb, v2) = multilabel_trial(&multi, &y)?;
            blocks.extend(mb);
            Ok((t, s, blocks, v1 && v2))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports: Vec<BlockReport> = Vec::new();
    let mut vanish = true;
    for (t, s, blocks, v) in per_trial {
        vanish &= v;
        for (name, pairs) in blocks {
            let report = match reports.iter_mut().find(|r| r.name == name) {
                Some(r) => r,
                None => {
                    reports.push(BlockReport {
                        name: name.into(),
                        checked: 0,
                        max_rel_error: 0.0,
                        worst: None,
                    });
                    reports.last_mut().expect("just pushed")
                }
            };
            for (index, (a, n)) in pairs.into_iter().enumerate() {
                report.checked += 1;
                let e = relative_error(a, n);
                if e > report.max_rel_error || report.worst.is_none() || e.is_nan() {
                    report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e.max(report.max_rel_error) };
                    report.worst = Some(Worst {
                        trial: t,
                        seed: s,
                        index,
                        analytic: a,
                        numeric: n,
                    });
                }
            }
        }
    }
    Ok(GradcheckReport {
        trials,
        seed,
        tolerance: TOLERANCE,
        blocks: reports,
        zero_lambda_distribution_grads_vanish: vanish,
    })
}
