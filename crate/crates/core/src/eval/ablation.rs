use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::curve::{report_at, MetricsReport};
use crate::cache::SpectrogramCache;
use crate::error::{Error, Result};
use crate::ingest::ClassCounts;
use crate::training::{predict_scores, train, TrainConfig};

pub const ABLATION_CSV_HEADER: &str = "configuration,accuracy_pct,precision_pct,recall_pct,f1_pct";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRun {
    Full,
    NoClassWeighting,
    NoOversampling,
    NoRegularization,
}

impl AblationRun {
    pub const ALL: [AblationRun; 4] = [
        AblationRun::Full,
        AblationRun::NoClassWeighting,
        AblationRun::NoOversampling,
        AblationRun::NoRegularization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRun::Full => "full",
            AblationRun::NoClassWeighting => "no_class_weighting",
            AblationRun::NoOversampling => "no_oversampling",
            AblationRun::NoRegularization => "no_regularization",
        }
    }

    /// `base` with this run's mechanism switched off. Every run keeps the
    /// base seed, so rows differ only by the disabled mechanism.
    ///
    /// Regularization covers early stopping, the plateau schedule and dropout.
    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationRun::Full => {}
            AblationRun::NoClassWeighting => cfg.class_weighting = false,
            AblationRun::NoOversampling => cfg.oversample = false,
            AblationRun::NoRegularization => {
                cfg.early_stopping.enabled = false;
                cfg.plateau.enabled = false;
                cfg.model.dropout_rate = 0.0;
            }
        }
        cfg
    }
}

impl std::str::FromStr for AblationRun {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationRun::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation run {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub report: MetricsReport,
    pub seed: u64,
    pub fitted_counts: ClassCounts,
    pub class_weights: Option<(f64, f64)>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Trains each requested configuration on `train_data` and scores it on
/// `test_data` at a fixed `threshold`.
pub fn ablation_run(
    base: &TrainConfig,
    train_data: &SpectrogramCache,
    test_data: &SpectrogramCache,
    runs: &[AblationRun],
    threshold: f64,
    mut on_run: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let labels: Vec<bool> = test_data.entries.iter().map(|e| e.label.is_apnea()).collect();
    let mut rows = Vec::with_capacity(runs.len());
    for &run in runs {
        let cfg = run.configure(base);
        let outcome = train(train_data, &cfg)?;
        let scores = predict_scores(&outcome.model, test_data, None)?;
        let row = AblationRow {
            name: run.name().to_string(),
            report: report_at(&scores, &labels, threshold)?,
            seed: cfg.seed,
            fitted_counts: outcome.summary.fitted_counts,
            class_weights: outcome.summary.class_weights,
            best_epoch: outcome.summary.best_epoch,
            epochs_run: outcome.history.len(),
        };
        on_run(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2}",
            r.name,
            100.0 * m.accuracy,
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1
        );
    }
    out
}
