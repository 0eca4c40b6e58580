//! Audio and annotation loading, resampling, chunking and chunk labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_RATE_HZ: f64 = 125.0;
pub const CHUNK_SECONDS: f64 = 30.0;

/// Annotation codes counted as apnea when no override is configured.
pub const DEFAULT_APNEA_LABELS: [&str; 3] = ["LA", "H", "HA"];

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Data(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        Ok(Signal {
            samples,
            sample_rate_hz,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub record_id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub label: String,
}

impl AnnotationEvent {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkLabel {
    NonApnea,
    Apnea,
}

impl ChunkLabel {
    pub fn is_apnea(self) -> bool {
        self == ChunkLabel::Apnea
    }

    pub fn from_apnea(apnea: bool) -> Self {
        if apnea {
            ChunkLabel::Apnea
        } else {
            ChunkLabel::NonApnea
        }
    }
}

/// Unlabeled fixed-length window of a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChunk {
    pub record_id: String,
    pub index: usize,
    pub start_s: f64,
    pub samples: Vec<f64>,
    pub label: ChunkLabel,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train_record_ids: BTreeSet<String>,
    pub test_record_ids: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.train_record_ids.intersection(&self.test_record_ids).next() {
            return Err(Error::Data(format!(
                "record {id} is assigned to both train and test"
            )));
        }
        Ok(())
    }
}

/// Per-class chunk counts of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub apnea: usize,
    pub non_apnea: usize,
}

impl ClassCounts {
    pub fn of<'a>(labels: impl IntoIterator<Item = &'a ChunkLabel>) -> Self {
        let mut c = ClassCounts::default();
        for l in labels {
            match l {
                ChunkLabel::Apnea => c.apnea += 1,
                ChunkLabel::NonApnea => c.non_apnea += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.apnea + self.non_apnea
    }
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file into `[-1, 1]` samples.
pub fn load_audio(path: &Path) -> Result<Signal> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::Encoding(format!(
                "{bits}-bit {fmt:?} (expected 16-bit PCM or 32-bit float)"
            )))
        }
    };
    Signal::new(samples, f64::from(spec.sample_rate))
}

/// Writes a mono 32-bit float WAV. The rate is rounded to whole hertz.
pub fn write_wav_f32(path: &Path, signal: &Signal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate_hz.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &signal.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

const KAISER_BETA: f64 = 8.6;
const SINC_HALF_ZEROS: f64 = 64.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by Kaiser-windowed sinc interpolation.
///
/// The low-pass cutoff sits at the lower of the two Nyquist rates and the
/// kernel spans 64 zero crossings either side. Weights are renormalized over
/// the taps that fall inside the signal, so DC levels survive up to the edges.
pub fn resample(signal: &Signal, target_hz: f64) -> Result<Signal> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::Config(format!("resample target must be positive, got {target_hz}")));
    }
    let source_hz = signal.sample_rate_hz;
    if target_hz == source_hz {
        return Ok(signal.clone());
    }
    let n_in = signal.samples.len();
    let n_out = (n_in as f64 * target_hz / source_hz).round() as usize;
    let cutoff = (target_hz / source_hz).min(1.0);
    let half_width = SINC_HALF_ZEROS / cutoff;
    let i0_beta = bessel_i0(KAISER_BETA);
    let x = &signal.samples;

    let out = (0..n_out)
        .map(|m| {
            let pos = m as f64 * source_hz / target_hz;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as usize).min(n_in.saturating_sub(1));
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let u = pos - k as f64;
                let r = u / half_width;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                let w = cutoff * sinc(cutoff * u) * window;
                acc += w * xk;
                norm += w;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect();
    Signal::new(out, target_hz)
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    record_id: String,
    onset_s: String,
    duration_s: String,
    label: String,
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(
    reader: &mut csv::Reader<fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Parses an annotation CSV with header `record_id,onset_s,duration_s,label`.
pub fn parse_annotations(path: &Path) -> Result<Vec<AnnotationEvent>> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, path, &["record_id", "onset_s", "duration_s", "label"])?;
    let mut events = Vec::new();
    for (i, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let number = |field: &str, text: &str| {
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line, format!("{field} `{text}` is not a number")))
        };
        let onset_s = number("onset_s", &row.onset_s)?;
        let duration_s = number("duration_s", &row.duration_s)?;
        if onset_s < 0.0 {
            return Err(Error::parse(path, line, format!("negative onset_s {onset_s}")));
        }
        if duration_s <= 0.0 {
            return Err(Error::parse(
                path,
                line,
                format!("duration_s must be positive, got {duration_s}"),
            ));
        }
        events.push(AnnotationEvent {
            record_id: row.record_id,
            onset_s,
            duration_s,
            label: row.label,
        });
    }
    Ok(events)
}

pub fn write_annotations(path: &Path, events: &[AnnotationEvent]) -> Result<()> {
    let mut out = String::from("record_id,onset_s,duration_s,label\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.record_id, e.onset_s, e.duration_s, e.label));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a split CSV with header `record_id,role`, role being train or test.
pub fn parse_split(path: &Path) -> Result<DatasetSplit> {
    let mut reader = csv_reader(path)?;
    check_header(&mut reader, path, &["record_id", "role"])?;
    let mut split = DatasetSplit::default();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let (id, role) = (row[0].to_string(), &row[1]);
        let set = match role {
            "train" => &mut split.train_record_ids,
            "test" => &mut split.test_record_ids,
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("role must be train or test, got `{other}`"),
                ))
            }
        };
        set.insert(id);
    }
    split.validate()?;
    Ok(split)
}

pub fn write_split(path: &Path, split: &DatasetSplit) -> Result<()> {
    let mut out = String::from("record_id,role\n");
    for id in &split.train_record_ids {
        out.push_str(&format!("{id},train\n"));
    }
    for id in &split.test_record_ids {
        out.push_str(&format!("{id},test\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Cuts consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn chunk_record(signal: &Signal, chunk_seconds: f64) -> Result<Vec<Chunk>> {
    let exact = chunk_seconds * signal.sample_rate_hz;
    let len = exact.round();
    if !(chunk_seconds > 0.0) || len < 1.0 || (exact - len).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "chunk of {chunk_seconds} s at {} Hz is not a whole number of samples",
            signal.sample_rate_hz
        )));
    }
    let len = len as usize;
    Ok(signal
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(index, window)| Chunk {
            index,
            start_s: index as f64 * chunk_seconds,
            end_s: (index + 1) as f64 * chunk_seconds,
            samples: window.to_vec(),
        })
        .collect())
}

/// Apnea iff some event with an apnea code overlaps `[start_s, end_s)` for a
/// positive length of time.
pub fn label_chunk(
    start_s: f64,
    end_s: f64,
    events: &[AnnotationEvent],
    apnea_labels: &BTreeSet<String>,
) -> ChunkLabel {
    ChunkLabel::from_apnea(events.iter().any(|e| {
        apnea_labels.contains(&e.label) && e.onset_s.max(start_s) < e.end_s().min(end_s)
    }))
}

pub fn default_apnea_labels() -> BTreeSet<String> {
    DEFAULT_APNEA_LABELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledChunk>,
    pub test: Vec<LabeledChunk>,
    pub train_counts: ClassCounts,
    pub test_counts: ClassCounts,
}

/// Chunks and labels every record named by `split`.
///
/// `records` must be at the rate implied by `chunk_seconds` windows (see
/// [`resample`]). Partitions follow the split's record order.
pub fn build_dataset(
    records: &BTreeMap<String, Signal>,
    annotations: &[AnnotationEvent],
    split: &DatasetSplit,
    chunk_seconds: f64,
    apnea_labels: &BTreeSet<String>,
) -> Result<Dataset> {
    split.validate()?;
    let mut by_record: BTreeMap<&str, Vec<AnnotationEvent>> = BTreeMap::new();
    for e in annotations {
        by_record.entry(e.record_id.as_str()).or_default().push(e.clone());
    }
    let label_all = |ids: &BTreeSet<String>| -> Result<Vec<LabeledChunk>> {
        let mut out = Vec::new();
        for id in ids {
            let signal = records
                .get(id)
                .ok_or_else(|| Error::Data(format!("split references unknown record {id}")))?;
            let events = by_record.get(id.as_str()).map_or(&[][..], Vec::as_slice);
            for chunk in chunk_record(signal, chunk_seconds)? {
                out.push(LabeledChunk {
                    record_id: id.clone(),
                    index: chunk.index,
                    start_s: chunk.start_s,
                    label: label_chunk(chunk.start_s, chunk.end_s, events, apnea_labels),
                    samples: chunk.samples,
                });
            }
        }
        Ok(out)
    };
    let train = label_all(&split.train_record_ids)?;
    let test = label_all(&split.test_record_ids)?;
    Ok(Dataset {
        train_counts: ClassCounts::of(train.iter().map(|c| &c.label)),
        test_counts: ClassCounts::of(test.iter().map(|c| &c.label)),
        train,
        test,
    })
}
