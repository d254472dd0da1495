//! Labelled datasets: seeded Gaussian blobs and the CIFAR-10 binary format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Single(Vec<usize>),
    Multi(Vec<Vec<bool>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Single(v) => v.len(),
            Labels::Multi(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, Labels::Multi(_))
    }

    /// Dense 0/1 target row for item `i`.
    pub fn target(&self, i: usize, num_classes: usize) -> Vec<f64> {
        match self {
            Labels::Single(v) => crate::predictor::one_hot(num_classes, v[i]),
            Labels::Multi(v) => v[i].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Representative class of item `i`: its label, or its first positive
    /// class for multi-label items.
    pub fn primary_class(&self, i: usize) -> Option<usize> {
        match self {
            Labels::Single(v) => Some(v[i]),
            Labels::Multi(v) => v[i].iter().position(|&b| b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Labels,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Labels, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape {
                expected: inputs.len(),
                got: labels.len(),
            });
        }
        let dim = inputs.first().map_or(0, Vec::len);
        if let Some(row) = inputs.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape {
                expected: dim,
                got: row.len(),
            });
        }
        let bad_label = match &labels {
            Labels::Single(v) => v.iter().any(|&c| c >= num_classes),
            Labels::Multi(v) => v.iter().any(|r| r.len() != num_classes),
        };
        if bad_label {
            return Err(Error::Format(format!("labels inconsistent with {num_classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// First `n` items (all of them if `n` is larger).
    pub fn truncated(mut self, n: usize) -> Self {
        self.inputs.truncate(n);
        match &mut self.labels {
            Labels::Single(v) => v.truncate(n),
            Labels::Multi(v) => v.truncate(n),
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    pub spreads: Vec<f64>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticBlobSpec {
    /// Four classes centred on the corners of the unit square.
    pub fn unit_square_corners(spread: f64, samples_per_class: usize, seed: u64) -> Self {
        Self {
            num_classes: 4,
            dim: 2,
            centers: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            spreads: vec![spread; 4],
            samples_per_class,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("blobs need at least 2 classes".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("blob dimension must be >= 1".into()));
        }
        if self.centers.len() != self.num_classes || self.spreads.len() != self.num_classes {
            return Err(Error::Config("need one center and one spread per class".into()));
        }
        if self.centers.iter().any(|c| c.len() != self.dim || c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config(format!("centers must be finite {}-vectors", self.dim)));
        }
        if self.spreads.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("spreads must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Isotropic Gaussian blobs, class by class, fully determined by the seed.
pub fn generate_blobs(spec: &SyntheticBlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_classes * spec.samples_per_class;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (c, (center, &spread)) in spec.centers.iter().zip(&spec.spreads).enumerate() {
        for _ in 0..spec.samples_per_class {
            inputs.push(
                center
                    .iter()
                    .map(|&mu| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mu + spread * z
                    })
                    .collect(),
            );
            labels.push(c);
        }
    }
    Dataset::new(inputs, Labels::Single(labels), spec.num_classes)
}

/// Multi-label blobs: every item draws each class independently with
/// probability `label_prob` (at least one), and sits at the sum of its
/// classes' centers plus isotropic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiLabelBlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples: usize,
    pub label_prob: f64,
    pub center_scale: f64,
    pub spread: f64,
    pub seed: u64,
}

impl MultiLabelBlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim == 0 {
            return Err(Error::Config("multi-label blobs need >= 2 classes and dim >= 1".into()));
        }
        if !(self.label_prob > 0.0 && self.label_prob < 1.0) {
            return Err(Error::Config("label_prob must lie in (0, 1)".into()));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0 && self.center_scale.is_finite()) {
            return Err(Error::Config("spread and center_scale must be finite, spread >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Draws the multi-label blob dataset; centers come from a fixed stream so
/// that train and test sets built with different seeds share them.
pub fn generate_multilabel_blobs(spec: &MultiLabelBlobSpec, center_seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut crng = ChaCha8Rng::seed_from_u64(center_seed);
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut crng);
                    spec.center_scale * z
                })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut inputs = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let mut row: Vec<bool> = (0..spec.num_classes).map(|_| rng.random_bool(spec.label_prob)).collect();
        if !row.contains(&true) {
            row[rng.random_range(0..spec.num_classes)] = true;
        }
        let mut x = vec![0.0; spec.dim];
        for (c, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            for (xi, ci) in x.iter_mut().zip(&centers[c]) {
                *xi += ci;
            }
        }
        for xi in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi += spec.spread * z;
        }
        inputs.push(x);
        labels.push(row);
    }
    Dataset::new(inputs, Labels::Multi(labels), spec.num_classes)
}

pub const CIFAR10_RECORD_BYTES: usize = 3073;
pub const CIFAR10_PIXELS: usize = 3072;
pub const CIFAR10_CLASSES: usize = 10;

/// Parses CIFAR-10 binary records: one label byte followed by the R, G and B
/// planes of a 32x32 image. Pixels are scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD_BYTES) {
        return Err(Error::Format(format!(
            "CIFAR-10 file size {} is not a multiple of {CIFAR10_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD_BYTES;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(Error::Format(format!("record {r}: label byte {label} > 9")));
        }
        labels.push(label);
        inputs.push(rec[1..].iter().map(|&b| b as f64 / 255.0).collect());
    }
    Dataset::new(inputs, Labels::Single(labels), CIFAR10_CLASSES)
}

pub fn load_cifar10_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
