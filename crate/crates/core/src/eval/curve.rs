use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{check_inputs, derive_metrics, ConfusionMatrix, Metrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Precision/recall at every distinct score, highest threshold first.
///
/// The conventional anchor at recall 0 is not stored; [`PrCurve::anchored`]
/// prepends it using the precision of the highest threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn anchored(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let first = self.points[0].precision;
        std::iter::once((0.0, first)).chain(self.points.iter().map(|p| (p.recall, p.precision)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.recall, p.precision);
        }
        out
    }
}

/// Distinct thresholds in descending order with the confusion matrix at each.
pub(crate) fn threshold_table(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, ConfusionMatrix)>> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut out: Vec<(f64, ConfusionMatrix)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], ConfusionMatrix::new(tp, n_pos - tp, fp, n_neg - fp)));
        }
    }
    Ok(out)
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    check_inputs(scores, labels)?;
    if !labels.iter().any(|&y| y) {
        return Err(Error::Data("precision-recall curve needs at least one apnea label".into()));
    }
    let points = threshold_table(scores, labels)?
        .into_iter()
        .map(|(threshold, cm)| {
            let m = derive_metrics(&cm)?;
            Ok(PrPoint {
                threshold,
                recall: m.recall,
                precision: m.precision,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PrCurve { points })
}

/// Trapezoidal area under the anchored curve over recall.
pub fn pr_auc(curve: &PrCurve) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.anchored().collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    MaxF1,
    /// Highest F1 among thresholds with recall at least the floor.
    RecallFloor(f64),
    /// Highest recall among thresholds with precision at least the floor.
    PrecisionFloor(f64),
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown threshold objective {s:?}"));
        if s == "max_f1" {
            return Ok(Objective::MaxF1);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind {
            "recall_floor" => Ok(Objective::RecallFloor(value)),
            "precision_floor" => Ok(Objective::PrecisionFloor(value)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::MaxF1 => write!(f, "max_f1"),
            Objective::RecallFloor(r) => write!(f, "recall_floor:{r}"),
            Objective::PrecisionFloor(p) => write!(f, "precision_floor:{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    #[serde(flatten)]
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pr_auc: f64,
}

impl MetricsReport {
    fn new(threshold: f64, confusion: ConfusionMatrix, m: Metrics, pr_auc: f64) -> Self {
        MetricsReport {
            threshold,
            confusion,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            pr_auc,
        }
    }
}

/// Full report at a fixed threshold.
pub fn report_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let cm = super::confusion_at_threshold(scores, labels, threshold)?;
    let auc = pr_auc(&pr_curve(scores, labels)?);
    Ok(MetricsReport::new(threshold, cm, derive_metrics(&cm)?, auc))
}

/// Best distinct-score threshold under `objective`, ties going to the higher
/// threshold. `Ok(None)` means no threshold satisfies the floor.
pub fn threshold_sweep(scores: &[f64], labels: &[bool], objective: Objective) -> Result<Option<MetricsReport>> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Data("threshold sweep needs both classes".into()));
    }
    let auc = pr_auc(&pr_curve(scores, labels)?);
    let mut best: Option<(f64, MetricsReport)> = None;
    for (threshold, cm) in threshold_table(scores, labels)? {
        let m = derive_metrics(&cm)?;
        let value = match objective {
            Objective::MaxF1 => Some(m.f1),
            Objective::RecallFloor(r) => (m.recall >= r).then_some(m.f1),
            Objective::PrecisionFloor(p) => (m.precision >= p).then_some(m.recall),
        };
        if let Some(v) = value {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, MetricsReport::new(threshold, cm, m, auc)));
            }
        }
    }
    Ok(best.map(|(_, r)| r))
}
