use std::time::Instant;

use apnea_autograd::{Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::balance::{compute_class_weights, oversample};
use super::loss::{loss_on_tape, LossSpec};
use super::schedule::{Decision, EarlyStopping, EarlyStoppingConfig, Plateau, PlateauConfig};
use crate::cache::SpectrogramCache;
use crate::error::{Error, Result};
use crate::eval::{confusion_at_threshold, derive_metrics, pr_auc, pr_curve};
use crate::ingest::ClassCounts;
use crate::model::{ResNetConfig, ResNetModel};

const PREDICT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossSpec,
    pub oversample: bool,
    pub class_weighting: bool,
    pub early_stopping: EarlyStoppingConfig,
    pub plateau: PlateauConfig,
    pub validation_fraction: f64,
    pub seed: u64,
    pub model: ResNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 80,
            learning_rate: 1e-3,
            loss: LossSpec::bce(),
            oversample: true,
            class_weighting: true,
            early_stopping: EarlyStoppingConfig::default(),
            plateau: PlateauConfig::default(),
            validation_fraction: 0.1,
            seed: 0,
            model: ResNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("train.batch_size and train.epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "train.validation_fraction {} not in (0, 1)",
                self.validation_fraction
            ));
        }
        if self.early_stopping.patience == 0 {
            return bad("train.early_stopping.patience must be at least 1".into());
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || p.patience == 0 || p.min_lr < 0.0 {
            return bad("train.plateau needs factor in (0, 1), patience >= 1, min_lr >= 0".into());
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pr_auc: f64,
    pub val_recall: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// How the training data was partitioned and balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Counts of the fitted portion before oversampling.
    pub train_counts: ClassCounts,
    /// Counts actually presented per epoch.
    pub fitted_counts: ClassCounts,
    pub validation_counts: ClassCounts,
    pub class_weights: Option<(f64, f64)>,
    pub effective_loss: LossSpec,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    pub model: ResNetModel<f32>,
    pub history: Vec<EpochLog>,
    pub summary: TrainSummary,
}

/// Independent generator for one purpose within a run.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_SPLIT: u64 = 1;
const STREAM_OVERSAMPLE: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_DROPOUT: u64 = 4;

/// Stratified hold-out: `fraction` of each class (at least one sample) goes
/// to validation. Returns `(fit, validation)` index lists, both sorted.
pub fn stratified_split(labels: &[bool], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = stream(seed, STREAM_SPLIT);
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let name = if class { "apnea" } else { "non-apnea" };
        if idx.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 {name} training chunks to hold one out for validation, got {}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        fit.extend_from_slice(&idx[n_val..]);
    }
    fit.sort_unstable();
    val.sort_unstable();
    Ok((fit, val))
}

fn batch_tensor(data: &SpectrogramCache, indices: &[usize]) -> Result<Tensor<f32>> {
    let mut values = Vec::with_capacity(indices.len() * data.n_mels * data.n_frames);
    for &i in indices {
        values.extend_from_slice(&data.entries[i].values);
    }
    Ok(Tensor::from_vec(vec![indices.len(), 1, data.n_mels, data.n_frames], values)?)
}

fn check_geometry(data: &SpectrogramCache, model: &ResNetConfig) -> Result<()> {
    let [h, w, c] = model.input_shape;
    if c != 1 || data.n_mels != h || data.n_frames != w {
        return Err(Error::Config(format!(
            "spectrograms are {}x{} but the model expects {h}x{w}x{c}",
            data.n_mels, data.n_frames
        )));
    }
    Ok(())
}

/// Eval-mode apnea probabilities for `indices` (all entries when `None`).
pub fn predict_scores(model: &ResNetModel<f32>, data: &SpectrogramCache, indices: Option<&[usize]>) -> Result<Vec<f64>> {
    check_geometry(data, model.config())?;
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..data.len()).collect();
            &all
        }
    };
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(PREDICT_BATCH) {
        let probs = model.predict(&batch_tensor(data, chunk)?)?;
        out.extend(probs.into_iter().map(f64::from));
    }
    Ok(out)
}

pub fn train(data: &SpectrogramCache, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(data, config, |_| {})
}

/// Trains a fresh model; `on_epoch` sees each log entry as it is produced.
pub fn train_with_progress(
    data: &SpectrogramCache,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_geometry(data, &config.model)?;
    let labels: Vec<bool> = data.entries.iter().map(|e| e.label.is_apnea()).collect();
    let counts = data.counts();
    if counts.apnea == 0 || counts.non_apnea == 0 {
        return Err(Error::Data(format!(
            "training data must contain both classes, got {} apnea and {} non-apnea chunks",
            counts.apnea, counts.non_apnea
        )));
    }

    let (fit, val) = stratified_split(&labels, config.validation_fraction, config.seed)?;
    let fit_labels: Vec<bool> = fit.iter().map(|&i| labels[i]).collect();
    let val_labels: Vec<bool> = val.iter().map(|&i| labels[i]).collect();
    let train_counts = ClassCounts {
        apnea: fit_labels.iter().filter(|&&y| y).count(),
        non_apnea: fit_labels.iter().filter(|&&y| !y).count(),
    };
    let class_weights = if config.class_weighting {
        Some(compute_class_weights(train_counts.apnea, train_counts.non_apnea)?)
    } else {
        None
    };
    let loss = match class_weights {
        Some(w) => config.loss.with_class_weights(w),
        None => config.loss,
    };
    let mut order: Vec<usize> = if config.oversample {
        oversample(&fit_labels, &mut stream(config.seed, STREAM_OVERSAMPLE))?
            .into_iter()
            .map(|k| fit[k])
            .collect()
    } else {
        fit.clone()
    };
    let fitted_counts = ClassCounts {
        apnea: order.iter().filter(|&&i| labels[i]).count(),
        non_apnea: order.iter().filter(|&&i| !labels[i]).count(),
    };

    let mut model = ResNetModel::<f32>::build(&config.model, config.seed)?;
    let mut adam = AdamState::<f32>::new(model.params().iter().map(|p| p.tensor.len()));
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut plateau = Plateau::new(config.plateau.clone());
    let mut stopper = EarlyStopping::new(config.early_stopping.clone());
    let mut best: Option<ResNetModel<f32>> = None;
    let mut lr = config.learning_rate;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(batch_tensor(data, batch)?);
            let pass = model.forward(&mut tape, x, Mode::Train, &mut dropout_rng)?;
            let y: Vec<bool> = batch.iter().map(|&i| labels[i]).collect();
            let l = loss_on_tape(&mut tape, pass.probabilities, &y, &loss)?;
            loss_sum += f64::from(tape.value(l).data()[0]) * batch.len() as f64;
            tape.backward(l)?;
            let grads: Vec<Vec<f32>> = pass
                .params
                .iter()
                .zip(model.params())
                .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.tensor.len()], <[f32]>::to_vec))
                .collect();
            let grads: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [f32]> =
                model.params_mut().iter_mut().map(|p| p.tensor.data_mut()).collect();
            adam.step(&mut params, &grads, lr)?;
        }

        let scores = predict_scores(&model, data, Some(&val))?;
        let val_pr_auc = pr_auc(&pr_curve(&scores, &val_labels)?);
        let val_recall = derive_metrics(&confusion_at_threshold(&scores, &val_labels, 0.5)?)?.recall;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_pr_auc,
            val_recall,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        history.push(log);

        if config.plateau.enabled {
            lr = plateau.update(val_pr_auc, lr);
        }
        if config.early_stopping.enabled {
            match stopper.update(epoch, val_pr_auc) {
                Decision::Continue { improved: true } => best = Some(model.clone()),
                Decision::Continue { improved: false } => {}
                Decision::Stop { .. } => {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_epoch = if config.early_stopping.enabled {
        if let Some(b) = best {
            model = b;
        }
        stopper.best_epoch()
    } else {
        history.len()
    };
    Ok(TrainOutcome {
        model,
        history,
        summary: TrainSummary {
            train_counts,
            fitted_counts,
            validation_counts: ClassCounts {
                apnea: val_labels.iter().filter(|&&y| y).count(),
                non_apnea: val_labels.iter().filter(|&&y| !y).count(),
            },
            class_weights,
            effective_loss: loss,
            train_indices: fit,
            validation_indices: val,
            best_epoch,
            stopped_early,
        },
    })
}

/// One JSON object per line, in epoch order.
pub fn history_jsonl(history: &[EpochLog]) -> String {
    history
        .iter()
        .map(|h| serde_json::to_string(h).unwrap_or_default() + "\n")
        .collect()
}
