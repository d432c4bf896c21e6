//! Log-mel spectrogram frontend on the HTK mel scale.
//!
//! `X[u, m] = log10(max(floor, sum_k S_u[k] * |STFT(x)[k, m]|))` with
//! unnormalized peak-1 triangular windows `S_u` whose centers are uniformly
//! spaced in mel between 0 Hz and the Nyquist frequency.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub dft_size: usize,
    pub window_length: usize,
    pub hop: usize,
    pub num_bands: usize,
    pub window_kind: WindowKind,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            dft_size: 2048,
            window_length: 400,
            hop: 160,
            num_bands: 96,
            window_kind: WindowKind::Hann,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("mel.sample_rate_hz must be positive".into()));
        }
        if self.dft_size == 0 || self.window_length == 0 {
            return Err(Error::Config("mel.dft_size and mel.window_length must be positive".into()));
        }
        if self.window_length > self.dft_size {
            return Err(Error::Config(format!(
                "mel.window_length {} exceeds mel.dft_size {}",
                self.window_length, self.dft_size
            )));
        }
        if self.hop == 0 {
            return Err(Error::Config("mel.hop must be at least 1".into()));
        }
        if self.num_bands < 2 {
            return Err(Error::Config("mel.num_bands must be at least 2".into()));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::Config("mel.log_floor must be positive and finite".into()));
        }
        Ok(())
    }

    /// Frames per second of the spectrogram.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop as f64
    }

    pub fn frames_for_seconds(&self, seconds: f64) -> usize {
        (seconds * self.frame_rate()).round() as usize
    }

    pub fn num_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    pub fn floor_value(&self) -> f64 {
        self.log_floor.log10()
    }

    /// Mel distance between adjacent band centers.
    pub fn mel_spacing(&self) -> f64 {
        hz_to_mel(self.sample_rate_hz as f64 / 2.0) / (self.num_bands as f64 + 1.0)
    }

    /// Fractional band index whose (interpolated) center lies at `hz`.
    pub fn band_position(&self, hz: f64) -> f64 {
        hz_to_mel(hz) / self.mel_spacing() - 1.0
    }

    pub fn band_center_hz(&self, position: f64) -> f64 {
        mel_to_hz((position + 1.0) * self.mel_spacing())
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length as f64;
        match self.window_kind {
            WindowKind::Hann => (0..self.window_length)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos())
                .collect(),
        }
    }
}

/// Triangular mel windows over DFT bins `0..=K/2`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    /// First and one-past-last nonzero bin of each row.
    support: Vec<(usize, usize)>,
    band_center_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig) -> Result<Self> {
        config.validate()?;
        let bins = config.num_bins();
        let bands = config.num_bands;
        let spacing = config.mel_spacing();
        let bin_mel: Vec<f64> = (0..bins)
            .map(|k| hz_to_mel(k as f64 * config.sample_rate_hz as f64 / config.dft_size as f64))
            .collect();

        let mut weights = Vec::with_capacity(bands);
        let mut support = Vec::with_capacity(bands);
        let mut band_center_hz = Vec::with_capacity(bands);
        for u in 0..bands {
            let lo = u as f64 * spacing;
            let center = (u + 1) as f64 * spacing;
            let hi = (u + 2) as f64 * spacing;
            let row: Vec<f64> = bin_mel
                .iter()
                .map(|&m| {
                    if m > lo && m <= center {
                        (m - lo) / (center - lo)
                    } else if m > center && m < hi {
                        (hi - m) / (hi - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            let first = row.iter().position(|&w| w > 0.0);
            let Some(first) = first else {
                return Err(Error::Config(format!(
                    "mel band {u} has no DFT bins; reduce num_bands or raise dft_size"
                )));
            };
            let last = row.iter().rposition(|&w| w > 0.0).unwrap() + 1;
            support.push((first, last));
            weights.push(row);
            band_center_hz.push(mel_to_hz(center));
        }
        Ok(Self {
            weights,
            support,
            band_center_hz,
        })
    }

    pub fn num_bands(&self) -> usize {
        self.weights.len()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.weights[u]
    }

    pub fn support(&self, u: usize) -> (usize, usize) {
        self.support[u]
    }

    pub fn band_center_hz(&self) -> &[f64] {
        &self.band_center_hz
    }

    /// `sum_k S_u[k] * spectrum[k]` for every band.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.support)
            .map(|(row, &(a, b))| row[a..b].iter().zip(&spectrum[a..b]).map(|(w, s)| w * s).sum())
            .collect()
    }
}

/// A log-mel feature matrix stored band-major: `values[u * num_frames + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    num_bands: usize,
    num_frames: usize,
    pub config: MelConfig,
    pub source_id: String,
}

impl MelSpectrogram {
    pub fn from_values(
        values: Vec<f64>,
        num_bands: usize,
        num_frames: usize,
        config: MelConfig,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != num_bands * num_frames {
            return Err(Error::Data(format!(
                "spectrogram {num_bands}x{num_frames} needs {} values, got {}",
                num_bands * num_frames,
                values.len()
            )));
        }
        if num_bands != config.num_bands {
            return Err(Error::Data(format!(
                "spectrogram has {num_bands} bands but config declares {}",
                config.num_bands
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            values,
            num_bands,
            num_frames,
            config,
            source_id: source_id.into(),
        })
    }

    /// Builds a spectrogram from a per-cell function, mainly for synthetic inputs.
    pub fn from_fn(
        config: MelConfig,
        num_frames: usize,
        source_id: impl Into<String>,
        f: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let bands = config.num_bands;
        let mut values = Vec::with_capacity(bands * num_frames);
        for u in 0..bands {
            for m in 0..num_frames {
                values.push(f(u, m));
            }
        }
        Self {
            values,
            num_bands: bands,
            num_frames,
            config,
            source_id: source_id.into(),
        }
    }

    pub fn num_bands(&self) -> usize {
        self.num_bands
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, m: usize) -> f64 {
        self.values[u * self.num_frames + m]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.values[u * self.num_frames..(u + 1) * self.num_frames]
    }

    /// Copies frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.num_frames {
            return Err(Error::Context {
                required: start + len,
                available: self.num_frames,
            });
        }
        let mut values = Vec::with_capacity(self.num_bands * len);
        for u in 0..self.num_bands {
            values.extend_from_slice(&self.row(u)[start..start + len]);
        }
        Ok(Self {
            values,
            num_bands: self.num_bands,
            num_frames: len,
            config: self.config.clone(),
            source_id: self.source_id.clone(),
        })
    }

    /// Replaces the values with `f(u, m, old)`, keeping shape and metadata.
    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let n = self.num_frames;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / n.max(1), i % n.max(1), v))
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    /// Mean over frames of each band.
    pub fn band_means(&self) -> Vec<f64> {
        (0..self.num_bands)
            .map(|u| self.row(u).iter().sum::<f64>() / self.num_frames.max(1) as f64)
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.num_bands, self.num_frames],
            data: self.values.clone(),
        }
    }

    pub fn from_tensor(t: Tensor, config: MelConfig, source_id: impl Into<String>) -> Result<Self> {
        if t.dims.len() != 2 {
            return Err(Error::Data(format!("expected a 2-d tensor, got dims {:?}", t.dims)));
        }
        Self::from_values(t.data, t.dims[0], t.dims[1], config, source_id)
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, num_frames: usize) -> Self {
        debug_assert_eq!(values.len(), self.num_bands * num_frames);
        Self {
            values,
            num_bands: self.num_bands,
            num_frames,
            config: self.config.clone(),
            source_id: self.source_id.clone(),
        }
    }
}

/// Reusable STFT + filterbank state.
pub struct MelFrontend {
    config: MelConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelFrontend {
    pub fn new(config: &MelConfig) -> Result<Self> {
        let filterbank = MelFilterbank::new(config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.dft_size);
        Ok(Self {
            config: config.clone(),
            filterbank,
            window: config.window(),
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, pcm: &[f64], source_id: &str) -> Result<MelSpectrogram> {
        let cfg = &self.config;
        let n = cfg.window_length;
        if pcm.len() < n {
            return Err(Error::EmptyInput(format!(
                "{source_id}: {} samples is shorter than one {n}-sample window",
                pcm.len()
            )));
        }
        let frames = (pcm.len() - n) / cfg.hop + 1;
        let bands = cfg.num_bands;
        let bins = cfg.num_bins();
        let mut values = vec![0.0; bands * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.dft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0; bins];
        for m in 0..frames {
            let start = m * cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < n {
                    Complex::new(pcm[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in mag.iter_mut().enumerate() {
                *v = buf[k].norm();
            }
            for (u, e) in self.filterbank.apply(&mag).into_iter().enumerate() {
                values[u * frames + m] = e.max(cfg.log_floor).log10();
            }
        }
        MelSpectrogram::from_values(values, bands, frames, cfg.clone(), source_id)
    }
}

pub fn build_filterbank(config: &MelConfig) -> Result<MelFilterbank> {
    MelFilterbank::new(config)
}

pub fn compute_mel(pcm: &[f64], config: &MelConfig) -> Result<MelSpectrogram> {
    MelFrontend::new(config)?.compute(pcm, "")
}
