//! Multi-label evaluation: average precision, mAP and count-based
//! precision/recall/F1, both per-class averaged (`C-*`) and overall (`O-*`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average precision of one class over `(score, relevant)` pairs.
///
/// Items are ranked by descending score; ties keep their input order.
/// Fails with [`Error::Degenerate`] when nothing is relevant.
pub fn average_precision(ranked: &[(f64, bool)]) -> Result<f64> {
    if ranked.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::domain("average precision: NaN score"));
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| ranked[b].0.total_cmp(&ranked[a].0));
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if ranked[i].1 {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::Degenerate("no relevant items".into()));
    }
    Ok(acc / hits as f64)
}

/// Scores and relevance flags for every class over a common item set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankedPredictions {
    pub per_class: Vec<Vec<(f64, bool)>>,
}

impl RankedPredictions {
    /// Builds per-class rankings from an items x classes score matrix and the
    /// matching label matrix.
    pub fn from_matrix(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<Self> {
        let m = check_matrix(scores, labels)?;
        let per_class = (0..m)
            .map(|c| scores.iter().zip(labels).map(|(s, l)| (s[c], l[c])).collect())
            .collect();
        Ok(Self { per_class })
    }
}

fn check_matrix(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let m = scores.first().map_or(0, Vec::len);
    for (s, l) in scores.iter().zip(labels) {
        if s.len() != m {
            return Err(Error::Shape { expected: m, got: s.len() });
        }
        if l.len() != m {
            return Err(Error::Shape { expected: m, got: l.len() });
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// `None` for classes without relevant items.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

pub fn mean_average_precision(ranked: &RankedPredictions) -> Result<MapResult> {
    let mut per_class = Vec::with_capacity(ranked.per_class.len());
    let mut excluded = Vec::new();
    for (c, items) in ranked.per_class.iter().enumerate() {
        match average_precision(items) {
            Ok(ap) => per_class.push(Some(ap)),
            Err(Error::Degenerate(_)) => {
                per_class.push(None);
                excluded.push(c);
            }
            Err(e) => return Err(Error::Class { class: c, source: Box::new(e) }),
        }
    }
    let aps: Vec<f64> = per_class.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::domain("mAP: no class has a relevant item"));
    }
    Ok(MapResult {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        per_class,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub correct: u64,
    pub predicted: u64,
    pub ground_truth: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts(pub Vec<ClassCounts>);

impl ConfusionCounts {
    pub fn validate(&self) -> Result<()> {
        for (c, k) in self.0.iter().enumerate() {
            if k.correct > k.predicted.min(k.ground_truth) {
                return Err(Error::domain(format!(
                    "class {c}: correct {} exceeds min(predicted {}, ground truth {})",
                    k.correct, k.predicted, k.ground_truth
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> ClassCounts {
        self.0.iter().fold(ClassCounts::default(), |a, k| ClassCounts {
            correct: a.correct + k.correct,
            predicted: a.predicted + k.predicted,
            ground_truth: a.ground_truth + k.ground_truth,
        })
    }
}

/// Counts predictions `prob >= threshold` against the labels.
pub fn binarize_predictions(
    probs: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
) -> Result<ConfusionCounts> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let m = check_matrix(probs, labels)?;
    let mut counts = vec![ClassCounts::default(); m];
    for (p, l) in probs.iter().zip(labels) {
        for (c, k) in counts.iter_mut().enumerate() {
            let predicted = p[c] >= threshold;
            k.predicted += predicted as u64;
            k.ground_truth += l[c] as u64;
            k.correct += (predicted && l[c]) as u64;
        }
    }
    Ok(ConfusionCounts(counts))
}

/// Treatment of per-class ratios whose denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// The ratio counts as 0 in the class average.
    #[default]
    Zero,
    /// The class is left out of that average.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfMetrics {
    pub c_p: f64,
    pub c_r: f64,
    pub c_f1: f64,
    pub o_p: f64,
    pub o_r: f64,
    pub o_f1: f64,
}

/// `2PR / (P + R)`, or 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn class_mean(values: impl Iterator<Item = Option<f64>>, policy: ZeroPolicy) -> Result<f64> {
    let kept: Vec<f64> = match policy {
        ZeroPolicy::Zero => values.map(|v| v.unwrap_or(0.0)).collect(),
        ZeroPolicy::Skip => values.flatten().collect(),
    };
    if kept.is_empty() {
        return Err(Error::domain("no class left to average"));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn prf_metrics(counts: &ConfusionCounts, policy: ZeroPolicy) -> Result<PrfMetrics> {
    counts.validate()?;
    let total = counts.total();
    if total.predicted == 0 && total.ground_truth == 0 {
        return Err(Error::domain("all counts are zero"));
    }
    let c_p = class_mean(counts.0.iter().map(|k| ratio(k.correct, k.predicted)), policy)?;
    let c_r = class_mean(counts.0.iter().map(|k| ratio(k.correct, k.ground_truth)), policy)?;
    let o_p = ratio(total.correct, total.predicted).unwrap_or(0.0);
    let o_r = ratio(total.correct, total.ground_truth).unwrap_or(0.0);
    Ok(PrfMetrics {
        c_p,
        c_r,
        c_f1: f1(c_p, c_r),
        o_p,
        o_r,
        o_f1: f1(o_p, o_r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelReport {
    pub map: MapResult,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub prf: PrfMetrics,
}

pub fn evaluate_multilabel(
    scores: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
    policy: ZeroPolicy,
) -> Result<MultiLabelReport> {
    let map = mean_average_precision(&RankedPredictions::from_matrix(scores, labels)?)?;
    let counts = binarize_predictions(scores, labels, threshold)?;
    let prf = prf_metrics(&counts, policy)?;
    Ok(MultiLabelReport {
        map,
        threshold,
        counts,
        prf,
    })
}

/// Item-by-class scores and labels read from a long-format predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    /// Item ids in order of first appearance.
    pub items: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<Vec<bool>>,
}

/// Reads CSV with header `item_id,class_id,score,label`, one row per item
/// and class. Every item must have exactly one row for each class
/// `0..=max(class_id)`; labels are `0` or `1`.
pub fn read_predictions_csv<R: std::io::Read>(input: R) -> Result<PredictionTable> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["item_id", "class_id", "score", "label"] {
        return Err(Error::Format(format!(
            "expected header item_id,class_id,score,label, got {}",
            header.join(",")
        )));
    }
    let mut items: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut cells: Vec<(usize, usize, f64, bool)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("predictions row {}: {what}", line + 1));
        let item = rec.get(0).ok_or_else(|| bad("missing item_id"))?.trim().to_string();
        let class: usize = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("class_id is not a non-negative integer"))?;
        let score: f64 = rec
            .get(2)
            .and_then(|v| v.trim().parse().ok())
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad("score is not a finite number"))?;
        let label = match rec.get(3).map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(bad("label must be 0 or 1")),
        };
        let next = items.len();
        let i = *index.entry(item.clone()).or_insert(next);
        if i == next {
            items.push(item);
        }
        cells.push((i, class, score, label));
    }
    let m = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    let mut scores = vec![vec![f64::NAN; m]; items.len()];
    let mut labels = vec![vec![false; m]; items.len()];
    let mut seen = vec![vec![false; m]; items.len()];
    for (i, c, s, l) in cells {
        if seen[i][c] {
            return Err(Error::Format(format!("duplicate row for item {} class {c}", items[i])));
        }
        seen[i][c] = true;
        scores[i][c] = s;
        labels[i][c] = l;
    }
    if let Some((i, row)) = seen.iter().enumerate().find(|(_, r)| r.contains(&false)) {
        let c = row.iter().position(|&b| !b).unwrap_or(0);
        return Err(Error::Format(format!("item {} has no row for class {c}", items[i])));
    }
    Ok(PredictionTable { items, scores, labels })
}
