use ndarray::Array3;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{backward, grad_check, ComplexTensor, Tape, Tensor};

fn random_wave(rng: &mut ChaCha8Rng, channels: usize, len: usize, rate: u32) -> MultichannelWaveform {
    let chans = (0..channels)
        .map(|_| Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), rate).unwrap())
        .collect();
    MultichannelWaveform::new(chans).unwrap()
}

fn rel_l2_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn frame_count_and_bins() {
    let cfg = StftConfig::new(1024, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wave = random_wave(&mut rng, 2, 4096, 16000);
    let spec = stft(&wave, &cfg).unwrap();
    assert_eq!(spec.num_frames(), 16);
    assert_eq!(spec.num_bins(), 513);
    assert_eq!(spec.num_channels(), 2);
}

#[test]
fn zeros_in_zeros_out() {
    let cfg = StftConfig::new(256, 64).unwrap();
    let wave = MultichannelWaveform::from_mono(Waveform::new(vec![0.0; 1000], 8000).unwrap());
    let spec = stft(&wave, &cfg).unwrap();
    assert!(spec.data.iter().all(|c| c.norm() == 0.0));
    let back = istft(&spec, 1000).unwrap();
    assert!(back.channel(0).samples().iter().all(|&x| x == 0.0));
}

#[test]
fn cosine_at_bin_center_matches_direct_dft_oracle() {
    // Direct DFT of one windowed frame is the oracle; the tone's energy
    // concentrates in the main lobe (bin k and its two neighbors).
    let cfg = StftConfig::new(256, 64).unwrap();
    let n = cfg.frame_size;
    let k = 20usize;
    let len = 4 * n;
    let samples: Vec<f64> = (0..len)
        .map(|i| (2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64).cos())
        .collect();
    let wave = MultichannelWaveform::from_mono(Waveform::new(samples.clone(), 8000).unwrap());
    let spec = stft(&wave, &cfg).unwrap();

    // Interior frame t: starts at t*shift - pad in signal coordinates.
    let t = 8;
    let start = (t * cfg.shift) as isize - cfg.pad() as isize;
    assert!(start >= 0 && start as usize + n <= len);
    let window = cfg.window_samples();
    let frame: Vec<f64> = (0..n)
        .map(|i| samples[start as usize + i] * window[i])
        .collect();
    // oracle: direct DFT
    for f in 0..cfg.num_bins() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &x) in frame.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (f * i) as f64 / n as f64;
            acc += Complex64::new(x, 0.0) * Complex64::new(phase.cos(), phase.sin());
        }
        let got = spec.data[(t, f, 0)];
        assert!(
            (got - acc).norm() < 1e-9 * (1.0 + acc.norm()),
            "bin {f}: stft {got} vs oracle {acc}"
        );
    }

    // energy concentration per the oracle: >= 60% in bin k alone (Hann
    // spreads half the center energy into k±1), >= 99% in the main lobe
    let energy = |f: usize| {
        let c = spec.data[(t, f, 0)];
        let w = if f == 0 || f == n / 2 { 1.0 } else { 2.0 };
        w * c.norm_sqr()
    };
    let total: f64 = (0..cfg.num_bins()).map(energy).sum();
    assert!(energy(k) / total > 0.6, "center-bin fraction {}", energy(k) / total);
    let lobe = energy(k - 1) + energy(k) + energy(k + 1);
    assert!(lobe / total > 0.99, "main-lobe fraction {}", lobe / total);
}

#[test]
fn roundtrip_random_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(n, s) in &[(1024usize, 256usize), (256, 64), (128, 64)] {
        let cfg = StftConfig::new(n, s).unwrap();
        let len = 3 * n + 17;
        let wave = random_wave(&mut rng, 3, len, 16000);
        let spec = stft(&wave, &cfg).unwrap();
        let back = istft(&spec, len).unwrap();
        for m in 0..3 {
            let err = rel_l2_error(wave.channel(m).samples(), back.channel(m).samples());
            assert!(err < 1e-6, "roundtrip error {err} at ({n},{s}) ch {m}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roundtrip_property(seed in 0u64..1000, extra in 0usize..500, cfg_idx in 0usize..3) {
        let (n, s) = [(256usize, 64usize), (256, 128), (128, 32)][cfg_idx];
        let cfg = StftConfig::new(n, s).unwrap();
        let len = 2 * n + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wave = random_wave(&mut rng, 1, len, 8000);
        let spec = stft(&wave, &cfg).unwrap();
        let back = istft(&spec, len).unwrap();
        let err = rel_l2_error(wave.channel(0).samples(), back.channel(0).samples());
        prop_assert!(err < 1e-6, "roundtrip error {}", err);
    }
}

#[test]
fn linearity_of_stft_and_istft() {
    let cfg = StftConfig::new(256, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let len = 700;
    let w1 = random_wave(&mut rng, 1, len, 8000);
    let w2 = random_wave(&mut rng, 1, len, 8000);
    let (a, b) = (0.7, -1.3);

    let combined = MultichannelWaveform::from_mono(
        Waveform::new(
            w1.channel(0)
                .samples()
                .iter()
                .zip(w2.channel(0).samples())
                .map(|(x, y)| a * x + b * y)
                .collect(),
            8000,
        )
        .unwrap(),
    );
    let s1 = stft(&w1, &cfg).unwrap();
    let s2 = stft(&w2, &cfg).unwrap();
    let sc = stft(&combined, &cfg).unwrap();
    for (c, (x, y)) in sc.data.iter().zip(s1.data.iter().zip(s2.data.iter())) {
        assert!((c - (x * a + y * b)).norm() < 1e-10);
    }

    // istft linearity
    let mixed = Spectrogram {
        data: &s1.data * Complex64::new(a, 0.0) + &s2.data * Complex64::new(b, 0.0),
        config: cfg,
        original_length: len,
        sample_rate: 8000,
    };
    let back_mixed = istft(&mixed, len).unwrap();
    let b1 = istft(&s1, len).unwrap();
    let b2 = istft(&s2, len).unwrap();
    for i in 0..len {
        let expect = a * b1.channel(0).samples()[i] + b * b2.channel(0).samples()[i];
        assert!((back_mixed.channel(0).samples()[i] - expect).abs() < 1e-10);
    }
}

#[test]
fn parseval_energy_consistency_on_noise() {
    let cfg = StftConfig::new(1024, 256).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let len = 1 << 19;
    let wave = random_wave(&mut rng, 1, len, 16000);
    let spec = stft(&wave, &cfg).unwrap();
    let n = cfg.frame_size as f64;
    let w_sq: f64 = cfg.window_samples().iter().map(|w| w * w).sum();
    let mut spec_energy = 0.0;
    for t in 0..spec.num_frames() {
        for f in 0..spec.num_bins() {
            let weight = if f == 0 || f == cfg.frame_size / 2 { 1.0 } else { 2.0 };
            spec_energy += weight * spec.data[(t, f, 0)].norm_sqr();
        }
    }
    // Parseval per frame, then compensate the window overlap.
    let estimated = spec_energy / n * cfg.shift as f64 / w_sq;
    let actual = wave.channel(0).energy();
    let ratio = estimated / actual;
    assert!((ratio - 1.0).abs() < 0.01, "Parseval ratio {ratio}");
}

#[test]
fn log_feature_values() {
    let cfg = StftConfig::new(128, 32).unwrap();
    // zero spectrogram -> all-zero features
    let zero = Spectrogram {
        data: Array3::zeros((4, cfg.num_bins(), 1)),
        config: cfg,
        original_length: 128,
        sample_rate: 8000,
    };
    let f = log_feature(&zero, 0).unwrap();
    assert!(f.iter().all(|&x| x == 0.0));

    // magnitude e-1 -> exactly 1.0
    let mut one = zero.clone();
    one.data[(2, 5, 0)] = Complex64::new(std::f64::consts::E - 1.0, 0.0);
    let f = log_feature(&one, 0).unwrap();
    assert!((f[(2, 5)] - 1.0).abs() < 1e-12);

    // random spectrogram -> finite and non-negative
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let wave = random_wave(&mut rng, 2, 500, 8000);
    let spec = stft(&wave, &cfg).unwrap();
    let f = log_feature(&spec, 1).unwrap();
    assert!(f.iter().all(|&x| x.is_finite() && x >= 0.0));
    assert!(log_feature(&spec, 2).is_err());
}

#[test]
fn stft_rejects_too_short_and_bad_configs() {
    let cfg = StftConfig::new(256, 64).unwrap();
    let wave = MultichannelWaveform::from_mono(Waveform::new(vec![0.1; 10], 8000).unwrap());
    assert!(matches!(
        stft(&wave, &cfg),
        Err(crate::Error::SignalTooShort { .. })
    ));
    assert!(StftConfig::new(300, 64).is_err(), "non power of two");
    assert!(StftConfig::new(256, 0).is_err());
    assert!(StftConfig::new(256, 512).is_err());
    // Hann with shift == frame_size cannot satisfy COLA after normalization
    assert!(StftConfig::new(256, 256).is_err());
}

#[test]
fn istft_rejects_inconsistent_bins_and_length() {
    let cfg = StftConfig::new(256, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let wave = random_wave(&mut rng, 1, 600, 8000);
    let mut spec = stft(&wave, &cfg).unwrap();
    assert!(istft(&spec, 600 + number_too_long(&spec)).is_err());
    spec.data = spec.data.slice(ndarray::s![.., ..100, ..]).to_owned();
    assert!(istft(&spec, 600).is_err());
}

fn number_too_long(spec: &Spectrogram) -> usize {
    let total = (spec.num_frames() - 1) * spec.config.shift + spec.config.frame_size;
    total - spec.config.pad() // anything beyond reconstructable - 600
}

#[test]
fn differentiable_istft_matches_plain_istft() {
    let cfg = StftConfig::new(128, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = 500;
    let wave = random_wave(&mut rng, 1, len, 8000);
    let spec = stft(&wave, &cfg).unwrap();

    let re = ndarray::Array2::from_shape_fn((spec.num_frames(), spec.num_bins()), |(t, f)| {
        spec.data[(t, f, 0)].re
    });
    let im = ndarray::Array2::from_shape_fn((spec.num_frames(), spec.num_bins()), |(t, f)| {
        spec.data[(t, f, 0)].im
    });
    let ct = ComplexTensor::new(
        Tensor::constant(re.into_dyn()),
        Tensor::constant(im.into_dyn()),
    )
    .unwrap();
    let out = grad::istft_differentiable(&ct, &cfg, len).unwrap();
    let plain = istft(&spec, len).unwrap();
    for (a, b) in out.value().iter().zip(plain.channel(0).samples()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn differentiable_istft_grad_check() {
    let cfg = StftConfig::new(64, 16).unwrap();
    let frames = 6;
    let bins = cfg.num_bins();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let point = vec![
        ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[frames, bins]), |_| rng.gen_range(-1.0..1.0)),
        ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[frames, bins]), |_| rng.gen_range(-1.0..1.0)),
    ];
    let target = 80;
    let weights =
        ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[target]), |_| rng.gen_range(-1.0..1.0));
    let f = move |t: &[Tensor]| -> crate::Result<Tensor> {
        let spec = ComplexTensor::new(t[0].clone(), t[1].clone())?;
        let wave = grad::istft_differentiable(&spec, &cfg, target)?;
        Ok(wave.mul(&Tensor::constant(weights.clone()))?.sum())
    };
    let err = grad_check(f, &point, 1e-6).unwrap();
    assert!(err < 1e-5, "istft grad error {err}");
}

#[test]
fn gradient_flows_through_istft_to_spectrogram() {
    let cfg = StftConfig::new(64, 16).unwrap();
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let re = tape.leaf(ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[5, 33]), |_| {
        rng.gen_range(-1.0..1.0)
    }));
    let im = tape.leaf(ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[5, 33]), |_| {
        rng.gen_range(-1.0..1.0)
    }));
    let spec = ComplexTensor::new(re.clone(), im.clone()).unwrap();
    let wave = grad::istft_differentiable(&spec, &cfg, 70).unwrap();
    let loss = wave.mul(&wave).unwrap().sum();
    let grads = backward(&loss).unwrap();
    assert!(grads.get(&re).is_some());
    assert!(grads.get(&im).is_some());
}
