//! Differentiable inverse STFT for the training path.
//!
//! Numerically identical to [`super::istft`] on a single channel, but built
//! from tape primitives so gradients flow from time-domain losses back into
//! the spectrogram.

use ndarray::Array1;

use super::StftConfig;
use crate::autodiff::{ComplexTensor, Tensor};
use crate::error::{Error, Result};

/// Synthesize a waveform tensor from a (frame × bin) complex spectrogram.
pub fn istft_differentiable(
    spec: &ComplexTensor,
    config: &StftConfig,
    target_length: usize,
) -> Result<Tensor> {
    config.validate()?;
    let shape = spec.shape();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "istft_differentiable expects (t, f), got {shape:?}"
        )));
    }
    let (frames, bins) = (shape[0], shape[1]);
    if bins != config.num_bins() {
        return Err(Error::InvalidArgument(format!(
            "spectrogram has {bins} bins but config implies {}",
            config.num_bins()
        )));
    }
    let n = config.frame_size;
    let shift = config.shift;
    let pad = config.pad();
    let total = (frames - 1) * shift + n;
    if pad + target_length > total {
        return Err(Error::InvalidArgument(format!(
            "target_length {target_length} exceeds reconstructable length {}",
            total - pad
        )));
    }

    let window = Tensor::constant(Array1::from_vec(config.window_samples()).into_dyn());
    let frames_time = Tensor::irfft_frames(&spec.re, &spec.im, n)?;
    let windowed = frames_time.mul(&window)?;
    let ola = Tensor::overlap_add(&windowed, shift, pad, target_length)?;

    let norm = {
        let w = config.window_samples();
        let mut norm = vec![0.0; total];
        for t in 0..frames {
            for (i, &wi) in w.iter().enumerate() {
                norm[t * shift + i] += wi * wi;
            }
        }
        norm
    };
    let inv_norm: Vec<f64> = (pad..pad + target_length)
        .map(|i| if norm[i] > 1e-12 { 1.0 / norm[i] } else { 0.0 })
        .collect();
    ola.mul(&Tensor::constant(Array1::from_vec(inv_norm).into_dyn()))
}
