//! WAV file reading and writing (PCM 16-bit and IEEE float32).
//!
//! Integer samples are normalized to [-1, 1) on read by dividing by 32768.

use std::path::Path;

use crate::dsp::{MultichannelWaveform, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::InvalidArgument("WAV file has zero channels".into()));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|x| x as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|x| x as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidArgument(format!(
                "unsupported WAV format: {fmt:?} {bits}-bit (only PCM16 and float32)"
            )))
        }
    };

    let frames = interleaved.len() / channels;
    let mut per_channel = vec![Vec::with_capacity(frames); channels];
    for (i, &x) in interleaved.iter().enumerate() {
        per_channel[i % channels].push(x);
    }
    MultichannelWaveform::new(
        per_channel
            .into_iter()
            .map(|s| Waveform::new(s, spec.sample_rate))
            .collect::<Result<Vec<_>>>()?,
    )
}

pub fn write_wav(
    path: impl AsRef<Path>,
    wave: &MultichannelWaveform,
    format: WavFormat,
) -> Result<()> {
    let spec = hound::WavSpec {
        channels: wave.num_channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    let len = wave.len();
    for i in 0..len {
        for ch in wave.channels() {
            let x = ch.samples()[i];
            match format {
                WavFormat::Pcm16 => {
                    let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavFormat::Float32 => writer.write_sample(x as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}
