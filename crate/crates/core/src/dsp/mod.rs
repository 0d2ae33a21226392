//! STFT analysis/synthesis and feature extraction.

pub mod grad;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel signal with its sample rate.
#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be > 0".into()));
        }
        if let Some(pos) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {pos}"
            )));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// A bundle of equal-length, equal-rate channels.
#[derive(Clone, Debug)]
pub struct MultichannelWaveform {
    channels: Vec<Waveform>,
}

impl MultichannelWaveform {
    pub fn new(channels: Vec<Waveform>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::InvalidArgument("need at least one channel".into()))?;
        let (len, rate) = (first.len(), first.sample_rate());
        for (m, ch) in channels.iter().enumerate() {
            if ch.len() != len || ch.sample_rate() != rate {
                return Err(Error::InvalidArgument(format!(
                    "channel {m} has length {} / rate {}, expected {len} / {rate}",
                    ch.len(),
                    ch.sample_rate()
                )));
            }
        }
        Ok(MultichannelWaveform { channels })
    }

    pub fn from_mono(wave: Waveform) -> Self {
        MultichannelWaveform { channels: vec![wave] }
    }

    pub fn channels(&self) -> &[Waveform] {
        &self.channels
    }

    pub fn channel(&self, m: usize) -> &Waveform {
        &self.channels[m]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.channels[0].sample_rate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    ReflectEdges,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_size: usize,
    pub shift: usize,
    pub window: WindowKind,
    pub pad_mode: PadMode,
}

impl StftConfig {
    pub fn new(frame_size: usize, shift: usize) -> Result<Self> {
        let cfg = StftConfig {
            frame_size,
            shift,
            window: WindowKind::Hann,
            pad_mode: PadMode::ReflectEdges,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.shift > self.frame_size {
            return Err(Error::InvalidArgument(format!(
                "need 0 < shift ({}) <= frame_size ({})",
                self.shift, self.frame_size
            )));
        }
        if !self.frame_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "frame_size {} is not a power of two",
                self.frame_size
            )));
        }
        // COLA after synthesis normalization: interior coverage must be
        // bounded away from zero or reconstruction divides by ~0.
        let w = self.window_samples();
        let (n, s) = (self.frame_size, self.shift);
        let min_coverage = (n..n + s)
            .map(|pos| {
                let mut c = 0.0;
                let mut j = 0;
                while j * s <= pos {
                    let off = pos - j * s;
                    if off < n {
                        c += w[off] * w[off];
                    }
                    j += 1;
                }
                c
            })
            .fold(f64::INFINITY, f64::min);
        if min_coverage < 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "window/shift ({}, {}) does not satisfy the constant-overlap-add property",
                self.frame_size, self.shift
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Padding applied to each side before framing.
    pub fn pad(&self) -> usize {
        self.frame_size - self.shift
    }

    /// Frame count for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.shift)
    }

    /// Analysis window samples (periodic Hann).
    pub fn window_samples(&self) -> Vec<f64> {
        let n = self.frame_size;
        (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect()
    }

    /// Per-sample sum of squared windows over the padded support of a
    /// `len`-sample signal; the overlap-add synthesis denominator.
    pub fn window_norm(&self, len: usize) -> Vec<f64> {
        let frames = self.num_frames(len);
        let total = (frames - 1) * self.shift + self.frame_size;
        let w = self.window_samples();
        let mut norm = vec![0.0; total];
        for t in 0..frames {
            for (i, &wi) in w.iter().enumerate() {
                norm[t * self.shift + i] += wi * wi;
            }
        }
        norm
    }
}

/// Complex STFT indexed (frame, bin, channel).
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub original_length: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Mirror an out-of-range index back into `[0, len)` without repeating the
/// edge sample, wrapping as many times as needed.
fn reflect_index(i: isize, len: usize) -> usize {
    debug_assert!(len >= 1);
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut idx = i.rem_euclid(period);
    if idx >= len as isize {
        idx = period - idx;
    }
    idx as usize
}

pub fn stft(wave: &MultichannelWaveform, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let len = wave.len();
    if len < config.shift {
        return Err(Error::SignalTooShort {
            op: "stft",
            len,
            min: config.shift,
        });
    }
    let frames = config.num_frames(len);
    let bins = config.num_bins();
    let n = config.frame_size;
    let pad = config.pad() as isize;
    let window = config.window_samples();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut data = Array3::<Complex64>::zeros((frames, bins, wave.num_channels()));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for (m, ch) in wave.channels().iter().enumerate() {
        let samples = ch.samples();
        for t in 0..frames {
            let start = t as isize * config.shift as isize - pad;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = reflect_index(start + i as isize, len);
                *b = Complex64::new(samples[idx] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                data[(t, f, m)] = buf[f];
            }
        }
    }

    Ok(Spectrogram {
        data,
        config: *config,
        original_length: len,
        sample_rate: wave.sample_rate(),
    })
}

pub fn istft(spec: &Spectrogram, target_length: usize) -> Result<MultichannelWaveform> {
    spec.config.validate()?;
    let n = spec.config.frame_size;
    if spec.num_bins() != spec.config.num_bins() {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {} bins but config implies {}",
            spec.num_bins(),
            spec.config.num_bins()
        )));
    }
    let frames = spec.num_frames();
    let shift = spec.config.shift;
    let pad = spec.config.pad();
    let total = (frames - 1) * shift + n;
    if pad + target_length > total {
        return Err(Error::InvalidArgument(format!(
            "target_length {target_length} exceeds reconstructable length {}",
            total - pad
        )));
    }
    let window = spec.config.window_samples();
    let norm = {
        let mut norm = vec![0.0; total];
        for t in 0..frames {
            for (i, &wi) in window.iter().enumerate() {
                norm[t * shift + i] += wi * wi;
            }
        }
        norm
    };

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut channels = Vec::with_capacity(spec.num_channels());
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for m in 0..spec.num_channels() {
        let mut acc = vec![0.0; total];
        for t in 0..frames {
            buf[0] = Complex64::new(spec.data[(t, 0, m)].re, 0.0);
            buf[n / 2] = Complex64::new(spec.data[(t, n / 2, m)].re, 0.0);
            for k in 1..n / 2 {
                let c = spec.data[(t, k, m)];
                buf[k] = c;
                buf[n - k] = c.conj();
            }
            ifft.process(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                acc[t * shift + i] += b.re / n as f64 * window[i];
            }
        }
        let out: Vec<f64> = (0..target_length)
            .map(|j| {
                let idx = pad + j;
                if norm[idx] > 1e-12 {
                    acc[idx] / norm[idx]
                } else {
                    0.0
                }
            })
            .collect();
        channels.push(Waveform::new(out, spec.sample_rate)?);
    }

    MultichannelWaveform::new(channels)
}

/// Network input features: `ln(1 + |y|)` of one channel, indexed (t, f).
pub fn log_feature(spec: &Spectrogram, channel: usize) -> Result<Array2<f64>> {
    if channel >= spec.num_channels() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range ({} channels)",
            spec.num_channels()
        )));
    }
    let (t, f) = (spec.num_frames(), spec.num_bins());
    Ok(Array2::from_shape_fn((t, f), |(ti, fi)| {
        (1.0 + spec.data[(ti, fi, channel)].norm()).ln()
    }))
}

#[cfg(test)]
mod tests;
