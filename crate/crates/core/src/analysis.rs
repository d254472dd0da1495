//! Compactness and separability of learned features, plus the significance
//! tests used to compare runs.
//!
//! For a class `c` with fitted Gaussian `N(mu_c, sigma_c^2)`:
//!
//! * compactness is `1 / sigma_c`;
//! * separability `d_c` is the mean symmetric KL divergence to the other
//!   fitted Gaussians, `1/(2(m-1)) * sum_{j != c} KL(c||j) + KL(j||c)`;
//! * the separability-sigma ratio is `r_c = d_c * compactness = d_c / sigma_c`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Lower bound on fitted standard deviations; keeps `1/sigma` and the KL
/// divergence finite for single-valued classes.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Divisor used for the sample variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdDivisor {
    /// `n - 1`
    #[default]
    Unbiased,
    /// `n`
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalGaussian {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

pub fn fit_gaussian(samples: &[f64]) -> Result<EmpiricalGaussian> {
    fit_gaussian_with(samples, StdDivisor::Unbiased)
}

pub fn fit_gaussian_with(samples: &[f64], divisor: StdDivisor) -> Result<EmpiricalGaussian> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(format!("fit needs at least 2 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("fit: non-finite sample"));
    }
    let mu = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|v| (v - mu) * (v - mu)).sum();
    let denom = match divisor {
        StdDivisor::Unbiased => (n - 1) as f64,
        StdDivisor::Population => n as f64,
    };
    Ok(EmpiricalGaussian {
        mu,
        sigma: (ss / denom).sqrt().max(SIGMA_FLOOR),
        n,
    })
}

/// `KL(a || b) = ln(sb/sa) + (sa^2 + (ma - mb)^2) / (2 sb^2) - 1/2`.
///
/// Evaluated as `(u - ln(1 + u)) + u^2/2 + dmu^2/(2 sb^2)` with
/// `u = sa/sb - 1`, which has no cancellation and is exactly zero for
/// identical inputs.
pub fn kl_gaussian(a: &EmpiricalGaussian, b: &EmpiricalGaussian) -> f64 {
    let u = a.sigma / b.sigma - 1.0;
    let dmu = a.mu - b.mu;
    let d = (u - u.ln_1p()) + 0.5 * u * u + dmu * dmu / (2.0 * b.sigma * b.sigma);
    d.max(0.0)
}

/// Mean symmetric KL divergence between `fits[i]` and every other fit.
pub fn mean_symmetric_kld(fits: &[EmpiricalGaussian], i: usize) -> Result<f64> {
    let m = fits.len();
    if m < 2 {
        return Err(Error::domain(format!("need at least 2 distributions, got {m}")));
    }
    if i >= m {
        return Err(Error::domain(format!("class index {i} out of range for {m}")));
    }
    let total: f64 = fits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, f)| kl_gaussian(&fits[i], f) + kl_gaussian(f, &fits[i]))
        .sum();
    Ok(total / (2.0 * (m - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSeparability {
    pub class_id: usize,
    pub compactness: f64,
    pub separability: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub per_class: Vec<ClassSeparability>,
    pub fitted: Vec<EmpiricalGaussian>,
}

impl SeparabilityReport {
    fn from_parts(ids: Vec<usize>, fitted: Vec<EmpiricalGaussian>, d: Vec<f64>) -> Self {
        let per_class = ids
            .into_iter()
            .zip(&fitted)
            .zip(d)
            .map(|((class_id, fit), separability)| {
                let compactness = 1.0 / fit.sigma;
                ClassSeparability {
                    class_id,
                    compactness,
                    separability,
                    ratio: separability * compactness,
                }
            })
            .collect();
        Self { per_class, fitted }
    }

    pub fn mean_ratio(&self) -> f64 {
        mean(self.per_class.iter().map(|c| c.ratio))
    }

    pub fn mean_compactness(&self) -> f64 {
        mean(self.per_class.iter().map(|c| c.compactness))
    }

    pub fn mean_separability(&self) -> f64 {
        mean(self.per_class.iter().map(|c| c.separability))
    }

    /// Flat CSV: `class_id,mu,sigma,n,compactness,separability,ratio`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "mu", "sigma", "n", "compactness", "separability", "ratio"])?;
        for (c, f) in self.per_class.iter().zip(&self.fitted) {
            w.write_record([
                c.class_id.to_string(),
                f.mu.to_string(),
                f.sigma.to_string(),
                f.n.to_string(),
                c.compactness.to_string(),
                c.separability.to_string(),
                c.ratio.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    values.sum::<f64>() / n as f64
}

fn fit_class(class: usize, samples: &[f64], divisor: StdDivisor) -> Result<EmpiricalGaussian> {
    fit_gaussian_with(samples, divisor).map_err(|e| Error::Class {
        class,
        source: Box::new(e),
    })
}

/// Report over scalar features grouped by class: each class is fitted on
/// its own samples and compared with every other class.
pub fn separability_report(
    features_by_class: &BTreeMap<usize, Vec<f64>>,
    divisor: StdDivisor,
) -> Result<SeparabilityReport> {
    let ids: Vec<usize> = features_by_class.keys().copied().collect();
    let fitted = features_by_class
        .iter()
        .map(|(&c, v)| fit_class(c, v, divisor))
        .collect::<Result<Vec<_>>>()?;
    let d = (0..fitted.len())
        .into_par_iter()
        .map(|i| mean_symmetric_kld(&fitted, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparabilityReport::from_parts(ids, fitted, d))
}

/// How the off-target outputs ("impostors") of a class are modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpostorMode {
    /// All off-target outputs are pooled into one sample before fitting.
    #[default]
    Pooled,
    /// Each off-target output gets its own fit; divergences are averaged.
    PerClass,
}

/// One exported sample: its ground-truth class and the feature vector the
/// network fed to the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub class_id: usize,
    pub features: Vec<f64>,
}

/// Report over multi-output feature dumps. For every class `c`, the target
/// sample is output `c` over the items labelled `c`; it is compared with the
/// other outputs of those same items according to `mode`.
pub fn impostor_report(
    rows: &[FeatureRow],
    mode: ImpostorMode,
    divisor: StdDivisor,
) -> Result<SeparabilityReport> {
    let width = rows.first().map_or(0, |r| r.features.len());
    if width < 2 {
        return Err(Error::domain("feature rows need at least 2 outputs"));
    }
    if let Some(r) = rows.iter().find(|r| r.features.len() != width) {
        return Err(Error::Shape {
            expected: width,
            got: r.features.len(),
        });
    }
    let mut by_class: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for r in rows {
        if r.class_id >= width {
            return Err(Error::domain(format!(
                "class id {} has no matching output among {width}",
                r.class_id
            )));
        }
        by_class.entry(r.class_id).or_default().push(&r.features);
    }
    let results = by_class
        .par_iter()
        .map(|(&c, items)| {
            let column = |j: usize| items.iter().map(|f| f[j]).collect::<Vec<_>>();
            let target = fit_class(c, &column(c), divisor)?;
            let d = match mode {
                ImpostorMode::Pooled => {
                    let pooled: Vec<f64> = items
                        .iter()
                        .flat_map(|f| f.iter().enumerate().filter(|&(j, _)| j != c).map(|(_, &v)| v))
                        .collect();
                    let impostor = fit_class(c, &pooled, divisor)?;
                    mean_symmetric_kld(&[target, impostor], 0)?
                }
                ImpostorMode::PerClass => {
                    let fits = (0..width)
                        .map(|j| if j == c { Ok(target) } else { fit_class(c, &column(j), divisor) })
                        .collect::<Result<Vec<_>>>()?;
                    mean_symmetric_kld(&fits, c)?
                }
            };
            Ok((c, target, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ids = Vec::new();
    let mut fitted = Vec::new();
    let mut d = Vec::new();
    for (c, f, v) in results {
        ids.push(c);
        fitted.push(f);
        d.push(v);
    }
    Ok(SeparabilityReport::from_parts(ids, fitted, d))
}

/// Writes rows as CSV `class_id,x_0,...,x_{k-1}`.
pub fn write_feature_csv<W: std::io::Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class_id".to_string()];
    header.extend((0..width).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.class_id.to_string()];
        rec.extend(r.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads a headed feature CSV: `class_id` followed by one or more feature
/// columns.
pub fn read_feature_csv<R: std::io::Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("feature row {}: {what}", line + 1));
        let mut fields = rec.iter();
        let class_id = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| bad("class_id is not a non-negative integer"))?;
        let features = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad("feature is not a number")))
            .collect::<Result<Vec<_>>>()?;
        if features.is_empty() {
            return Err(bad("no feature columns"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite feature"));
        }
        rows.push(FeatureRow { class_id, features });
    }
    Ok(rows)
}

/// Report for a feature dump: scalar dumps (one feature per row) are grouped
/// by class, wider dumps go through [`impostor_report`].
pub fn analyze_rows(rows: &[FeatureRow], mode: ImpostorMode, divisor: StdDivisor) -> Result<SeparabilityReport> {
    match rows.first().map(|r| r.features.len()) {
        None => Err(Error::Format("feature dump is empty".into())),
        Some(1) => {
            let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in rows {
                if r.features.len() != 1 {
                    return Err(Error::Shape { expected: 1, got: r.features.len() });
                }
                by_class.entry(r.class_id).or_default().push(r.features[0]);
            }
            separability_report(&by_class, divisor)
        }
        Some(_) => impostor_report(rows, mode, divisor),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_stat: f64,
    pub p_value: f64,
    pub df: f64,
    pub mean_diff: f64,
}

/// Two-sided paired-sample t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::domain(format!("paired t-test needs n >= 2, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::domain("paired t-test: non-finite input"));
    }
    let mean_diff = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean_diff).powi(2)).sum::<f64>() / (n - 1) as f64;
    let scale = diffs.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    if var <= (4.0 * f64::EPSILON * scale).powi(2) {
        return Err(Error::Degenerate(if mean_diff == 0.0 {
            "all paired differences are zero".into()
        } else {
            "paired differences are constant (zero variance)".into()
        }));
    }
    let df = (n - 1) as f64;
    let t_stat = mean_diff / (var / n as f64).sqrt();
    Ok(TTest {
        t_stat,
        p_value: two_sided_p(t_stat, df),
        df,
        mean_diff,
    })
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided p-value from
/// `t = rho * sqrt((n - 2)/(1 - rho^2))` on `n - 2` degrees of freedom.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::domain(format!("pearson correlation needs n >= 3, got {n}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::domain("pearson correlation: non-finite input"));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::domain("pearson correlation: constant input"));
    }
    let rho = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if n == 2 || (1.0 - rho * rho) <= 0.0 {
        0.0
    } else {
        two_sided_p(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(Correlation { rho, p_value, n })
}
