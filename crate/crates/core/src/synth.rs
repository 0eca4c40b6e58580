//! Seeded generator of breathing-like records with embedded apnea events.
//!
//! The carrier is Gaussian noise low-passed to 40 Hz, amplitude-modulated by
//! a `sin^2` breathing envelope. Inside an apnea event the envelope is scaled
//! by `apnea_suppression`; broadband white noise is added on top at the
//! configured SNR. Events are annotated with the code `H`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, AnnotationEvent, DatasetSplit, Signal};

const CARRIER_CUTOFF_HZ: f64 = 40.0;
const CARRIER_TAPS_HALF: usize = 64;
const CARRIER_RMS: f64 = 0.3;
const ENVELOPE_FLOOR: f64 = 0.25;
pub const EVENT_LABEL: &str = "H";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub breath_rate_hz: f64,
    pub apnea_event_rate_per_min: f64,
    pub apnea_duration_s: (f64, f64),
    pub apnea_suppression: f64,
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 600.0,
            sample_rate_hz: 125.0,
            breath_rate_hz: 0.25,
            apnea_event_rate_per_min: 0.3,
            apnea_duration_s: (10.0, 30.0),
            apnea_suppression: 0.05,
            noise_snr_db: 30.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.apnea_duration_s;
        let ok = self.duration_s > 0.0
            && self.sample_rate_hz > 2.0 * CARRIER_CUTOFF_HZ
            && self.breath_rate_hz > 0.0
            && self.apnea_event_rate_per_min >= 0.0
            && lo > 0.0
            && lo <= hi
            && (0.0..1.0).contains(&self.apnea_suppression)
            && self.noise_snr_db.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synth configuration {self:?}")))
        }
    }

    pub fn event_count(&self) -> usize {
        (self.apnea_event_rate_per_min * self.duration_s / 60.0).round() as usize
    }
}

/// Breathing envelope in `[0.25, 1]`, periodic in `1 / breath_rate_hz`.
pub fn breathing_envelope(t: f64, breath_rate_hz: f64, phase: f64) -> f64 {
    let s = (PI * breath_rate_hz * t + phase).sin();
    ENVELOPE_FLOOR + (1.0 - ENVELOPE_FLOOR) * s * s
}

fn lowpass_taps(cutoff_hz: f64, rate_hz: f64) -> Vec<f64> {
    let fc = cutoff_hz / rate_hz;
    let m = CARRIER_TAPS_HALF as f64;
    (0..=2 * CARRIER_TAPS_HALF)
        .map(|k| {
            let x = k as f64 - m;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let hann = 0.5 - 0.5 * (2.0 * PI * k as f64 / (2.0 * m)).cos();
            sinc * hann
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn place_events(
    config: &SynthConfig,
    record_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<AnnotationEvent>> {
    let n = config.event_count();
    let (lo, hi) = config.apnea_duration_s;
    let durations: Vec<f64> = (0..n)
        .map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
        .collect();
    let free = config.duration_s - durations.iter().sum::<f64>();
    if free < 0.0 {
        return Err(Error::Config(format!(
            "{n} apnea events of {lo}-{hi} s do not fit in {} s",
            config.duration_s
        )));
    }
    let mut cuts: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * free).collect();
    cuts.sort_by(f64::total_cmp);
    let mut used = 0.0;
    Ok(cuts
        .into_iter()
        .zip(durations)
        .map(|(gap, d)| {
            let e = AnnotationEvent {
                record_id: record_id.to_string(),
                onset_s: gap + used,
                duration_s: d,
                label: EVENT_LABEL.to_string(),
            };
            used += d;
            e
        })
        .collect())
}

/// Generates one record and its apnea annotations, fully determined by `config.seed`.
pub fn generate_record(
    config: &SynthConfig,
    record_id: &str,
) -> Result<(Signal, Vec<AnnotationEvent>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fs = config.sample_rate_hz;
    let n = (config.duration_s * fs).round() as usize;
    let events = place_events(config, record_id, &mut rng)?;
    let phase = rng.gen::<f64>() * PI;

    let white: Vec<f64> = (0..n + 2 * CARRIER_TAPS_HALF)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let taps = lowpass_taps(CARRIER_CUTOFF_HZ, fs);
    let mut carrier: Vec<f64> = (0..n)
        .map(|i| taps.iter().zip(&white[i..]).map(|(h, x)| h * x).sum())
        .collect();
    let scale = CARRIER_RMS / rms(&carrier).max(1e-12);
    carrier.iter_mut().for_each(|v| *v *= scale);

    let mut clean: Vec<f64> = carrier
        .iter()
        .enumerate()
        .map(|(i, c)| c * breathing_envelope(i as f64 / fs, config.breath_rate_hz, phase))
        .collect();
    let noise_std = rms(&clean) * 10f64.powf(-config.noise_snr_db / 20.0);
    for e in &events {
        let start = (e.onset_s * fs).ceil() as usize;
        let end = ((e.end_s() * fs).ceil() as usize).min(n);
        for v in &mut clean[start.min(n)..end] {
            *v *= config.apnea_suppression;
        }
    }
    let samples = clean
        .into_iter()
        .map(|v| {
            let noise: f64 = rng.sample(StandardNormal);
            (v + noise * noise_std).clamp(-1.0, 1.0)
        })
        .collect();
    Ok((Signal::new(samples, fs)?, events))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub records: BTreeMap<String, Signal>,
    pub annotations: Vec<AnnotationEvent>,
    pub split: DatasetSplit,
}

pub fn record_id(index: usize, n_records: usize) -> String {
    let width = n_records.to_string().len().max(2);
    format!("rec{:0width$}", index + 1)
}

/// `n_records` records with per-record seeds derived from `seed`; the last
/// `ceil(n/5)` records form the test partition. `template.seed` is ignored.
pub fn generate_dataset(n_records: usize, template: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    if n_records < 2 {
        return Err(Error::Config(format!(
            "need at least 2 records for a train/test split, got {n_records}"
        )));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let n_test = n_records.div_ceil(5);
    let mut records = BTreeMap::new();
    let mut annotations = Vec::new();
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    for i in 0..n_records {
        let id = record_id(i, n_records);
        let cfg = SynthConfig {
            seed: seeds.gen(),
            ..template.clone()
        };
        let (signal, events) = generate_record(&cfg, &id)?;
        records.insert(id.clone(), signal);
        annotations.extend(events);
        if i >= n_records - n_test {
            test.insert(id);
        } else {
            train.insert(id);
        }
    }
    Ok(SynthDataset {
        records,
        annotations,
        split: DatasetSplit {
            train_record_ids: train,
            test_record_ids: test,
        },
    })
}

impl SynthDataset {
    /// Writes `<id>.wav` per record plus `annotations.csv` and `split.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, signal) in &self.records {
            ingest::write_wav_f32(&dir.join(format!("{id}.wav")), signal)?;
        }
        ingest::write_annotations(&dir.join("annotations.csv"), &self.annotations)?;
        ingest::write_split(&dir.join("split.csv"), &self.split)
    }
}
