//! Log-mel spectrogram front end.
//!
//! Pipeline per chunk: reflect-padded Hann STFT power, triangular mel
//! filterbank (HTK mel scale), natural log with an additive floor, crop or
//! pad to the target frame count, then per-spectrogram min-max scaling into
//! `[0, 1]`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: f64,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub target_frames: usize,
    pub eps: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate_hz: 125.0,
            n_fft: 512,
            win_length: 256,
            hop_length: 29,
            n_mels: 128,
            f_min_hz: 0.0,
            f_max_hz: 62.5,
            target_frames: 128,
            eps: 1e-10,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.sample_rate_hz > 0.0) {
            return fail(format!("dsp.sample_rate_hz must be positive, got {}", self.sample_rate_hz));
        }
        if self.n_fft == 0 || self.win_length == 0 || self.win_length > self.n_fft {
            return fail(format!(
                "dsp.win_length ({}) must lie in 1..=dsp.n_fft ({})",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 || self.n_mels == 0 || self.target_frames == 0 {
            return fail("dsp.hop_length, dsp.n_mels and dsp.target_frames must be positive".into());
        }
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz)
            || self.f_max_hz > self.sample_rate_hz / 2.0
        {
            return fail(format!(
                "mel band [{}, {}] Hz must satisfy 0 <= f_min < f_max <= {}",
                self.f_min_hz,
                self.f_max_hz,
                self.sample_rate_hz / 2.0
            ));
        }
        if !(self.eps > 0.0) {
            return fail("dsp.eps must be positive".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count produced by centered framing of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop_length
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Normalized log-mel image; rows are mel bins, columns time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub record_id: String,
    pub chunk_index: u32,
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f32>,
}

/// Symmetric Hann window `0.5 - 0.5 cos(2 pi n / (len - 1))`; length 1 gives `[1]`.
pub fn hann_window(length: usize) -> Vec<f64> {
    if length == 1 {
        return vec![1.0];
    }
    let denom = (length - 1) as f64;
    (0..length)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

pub fn hz_to_mel(f_hz: f64) -> f64 {
    2595.0 * (1.0 + f_hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Peak frequencies (Hz) of the mel filters, plus the two outer edges.
pub fn mel_edges_hz(config: &SpectrogramConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.f_min_hz);
    let hi = hz_to_mel(config.f_max_hz);
    let n = config.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular filters, `n_mels x (n_fft/2 + 1)`, unit peak height.
///
/// Fails if any filter misses every FFT bin; raise `n_fft` in that case.
pub fn mel_filterbank(config: &SpectrogramConfig) -> Result<Matrix> {
    config.validate()?;
    let n_bins = config.n_bins();
    let edges = mel_edges_hz(config);
    let bin_hz = config.sample_rate_hz / config.n_fft as f64;
    let mut fb = Matrix::zeros(config.n_mels, n_bins);
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let rise = (f - left) / (center - left);
            let fall = (right - f) / (right - center);
            fb.data[m * n_bins + k] = rise.min(fall).max(0.0);
        }
        if fb.row(m).iter().all(|&w| w == 0.0) {
            return Err(Error::Config(format!(
                "empty mel filter {m} ({left:.3}-{right:.3} Hz) with n_fft {}: increase dsp.n_fft",
                config.n_fft
            )));
        }
    }
    Ok(fb)
}

/// Index into `0..n` reflecting about the end samples (edges not repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Reusable STFT and filterbank state for one configuration.
///
/// Immutable after construction, so one extractor can serve many threads.
pub struct MelExtractor {
    config: SpectrogramConfig,
    window: Vec<f64>,
    filterbank: Matrix,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(config: &SpectrogramConfig) -> Result<Self> {
        let filterbank = mel_filterbank(config)?;
        let mut window = vec![0.0; config.n_fft];
        let offset = (config.n_fft - config.win_length) / 2;
        window[offset..offset + config.win_length].copy_from_slice(&hann_window(config.win_length));
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(MelExtractor {
            config: config.clone(),
            window,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    /// Power spectrogram, `(n_fft/2 + 1) x n_frames`, frames centered at
    /// multiples of the hop over a reflect-padded signal.
    pub fn stft_power(&self, signal: &[f64]) -> Result<Matrix> {
        let n_fft = self.config.n_fft;
        let pad = n_fft / 2;
        if signal.len() <= pad {
            return Err(Error::Data(format!(
                "signal of {} samples is too short for centered framing with n_fft {n_fft}",
                signal.len()
            )));
        }
        let n_frames = self.config.n_frames(signal.len());
        let n_bins = self.config.n_bins();
        let mut out = Matrix::zeros(n_bins, n_frames);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for t in 0..n_frames {
            let start = (t * self.config.hop_length) as isize - pad as isize;
            for (j, (slot, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
                *slot = Complex::new(signal[reflect(start + j as isize, signal.len())] * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, c) in buf.iter().take(n_bins).enumerate() {
                out.data[k * n_frames + t] = c.norm_sqr();
            }
        }
        Ok(out)
    }

    /// Log mel energies before scaling, `n_mels x target_frames`.
    pub fn log_mel(&self, signal: &[f64]) -> Result<Matrix> {
        let power = self.stft_power(signal)?;
        let (n_mels, n_bins) = (self.config.n_mels, self.config.n_bins());
        let frames = self.config.target_frames;
        let floor = self.config.eps.ln();
        let mut out = Matrix {
            rows: n_mels,
            cols: frames,
            data: vec![floor; n_mels * frames],
        };
        let keep = frames.min(power.cols);
        for m in 0..n_mels {
            let weights = self.filterbank.row(m);
            for t in 0..keep {
                let mut e = 0.0;
                for k in 0..n_bins {
                    e += weights[k] * power.data[k * power.cols + t];
                }
                out.data[m * frames + t] = (e + self.config.eps).ln();
            }
        }
        Ok(out)
    }

    /// Min-max scaled log-mel image; a constant image maps to all zeros.
    pub fn normalized(&self, signal: &[f64]) -> Result<Matrix> {
        let mut m = self.log_mel(signal)?;
        let (lo, hi) = m
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in &mut m.data {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
        Ok(m)
    }

    pub fn spectrogram(&self, record_id: &str, chunk_index: u32, signal: &[f64]) -> Result<Spectrogram> {
        let m = self.normalized(signal)?;
        Ok(Spectrogram {
            record_id: record_id.to_string(),
            chunk_index,
            n_mels: m.rows,
            n_frames: m.cols,
            values: m.data.iter().map(|&v| v as f32).collect(),
        })
    }
}

/// One-shot conversion of a chunk to its normalized log-mel image.
pub fn to_mel_spectrogram(samples: &[f64], config: &SpectrogramConfig) -> Result<Matrix> {
    MelExtractor::new(config)?.normalized(samples)
}

/// Standard deviation across mel bins of each time column, averaged over columns.
pub fn mean_column_std(values: &[f32], n_mels: usize, n_frames: usize) -> f64 {
    let mut total = 0.0;
    for t in 0..n_frames {
        let col: Vec<f64> = (0..n_mels).map(|m| f64::from(values[m * n_frames + t])).collect();
        let mean = col.iter().sum::<f64>() / n_mels as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_mels as f64;
        total += var.sqrt();
    }
    total / n_frames as f64
}
