//! Stage drivers shared by the command-line tool and end-to-end tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::cache::{CacheEntry, SpectrogramCache};
use crate::config::DataConfig;
use crate::dsp::{MelExtractor, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::eval::{report_at, threshold_sweep, MetricsReport, Objective, PrCurve};
use crate::ingest::{self, LabeledChunk};
use crate::model::ResNetModel;
use crate::training::predict_scores;

pub const TRAIN_CACHE: &str = "train.apne";
pub const TEST_CACHE: &str = "test.apne";
pub const WEIGHTS_FILE: &str = "weights.apwt";

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub train: SpectrogramCache,
    pub test: SpectrogramCache,
}

fn to_cache(chunks: &[LabeledChunk], extractor: &MelExtractor) -> Result<SpectrogramCache> {
    let cfg = extractor.config();
    let mut cache = SpectrogramCache::new(cfg.n_mels, cfg.target_frames);
    for c in chunks {
        let index = u32::try_from(c.index)
            .map_err(|_| Error::Data(format!("chunk index {} of {} too large", c.index, c.record_id)))?;
        let s = extractor.spectrogram(&c.record_id, index, &c.samples)?;
        cache.push(CacheEntry::new(s, c.label))?;
    }
    Ok(cache)
}

/// Reads audio, annotations and split from `data`, then resamples, chunks,
/// labels and converts every record named by the split.
pub fn preprocess(data: &DataConfig, dsp: &SpectrogramConfig) -> Result<Preprocessed> {
    dsp.validate()?;
    let split = ingest::parse_split(&data.resolve(&data.split))?;
    if split.train_record_ids.is_empty() && split.test_record_ids.is_empty() {
        return Err(Error::Data("split file lists no records".into()));
    }
    let annotations = ingest::parse_annotations(&data.resolve(&data.annotations))?;
    let mut records = BTreeMap::new();
    for id in split.train_record_ids.iter().chain(&split.test_record_ids) {
        let audio = ingest::load_audio(&data.dir.join(format!("{id}.wav")))?;
        records.insert(id.clone(), ingest::resample(&audio, data.sample_rate_hz)?);
    }
    let dataset = ingest::build_dataset(&records, &annotations, &split, data.chunk_seconds, &data.label_set())?;
    let extractor = MelExtractor::new(dsp)?;
    Ok(Preprocessed {
        train: to_cache(&dataset.train, &extractor)?,
        test: to_cache(&dataset.test, &extractor)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Fixed(f64),
    Sweep { objective: Objective, fallback: Objective },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// How the threshold was chosen: `fixed` or the objective that produced it.
    pub selection: String,
    #[serde(skip)]
    pub curve: PrCurve,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

/// Eval-mode inference over `test` and metrics at the chosen threshold.
pub fn evaluate(model: &ResNetModel<f32>, test: &SpectrogramCache, choice: ThresholdChoice) -> Result<Evaluation> {
    let labels: Vec<bool> = test.entries.iter().map(|e| e.label.is_apnea()).collect();
    let scores = predict_scores(model, test, None)?;
    let curve = crate::eval::pr_curve(&scores, &labels)?;
    let (report, selection) = match choice {
        ThresholdChoice::Fixed(t) => (report_at(&scores, &labels, t)?, "fixed".to_string()),
        ThresholdChoice::Sweep { objective, fallback } => match threshold_sweep(&scores, &labels, objective)? {
            Some(r) => (r, objective.to_string()),
            None => {
                let r = threshold_sweep(&scores, &labels, fallback)?.ok_or_else(|| {
                    Error::Data(format!("neither {objective} nor {fallback} has a feasible threshold"))
                })?;
                (r, format!("{fallback} (fallback)"))
            }
        },
    };
    Ok(Evaluation {
        report,
        selection,
        curve,
        scores,
    })
}

/// Writes `metrics.json`, `pr_curve.csv` and `confusion.csv` into `dir`.
pub fn write_evaluation(eval: &Evaluation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let json = serde_json::to_string_pretty(&eval.report).map_err(|e| Error::Data(e.to_string()))?;
    write("metrics.json", json + "\n")?;
    write("pr_curve.csv", eval.curve.to_csv())?;
    write("confusion.csv", eval.report.confusion.to_csv())
}
