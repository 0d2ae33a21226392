//! Mask-driven spatial covariance estimation, RTF estimation and MVDR
//! beamforming, differentiable along the training path.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::autodiff::{ComplexTensor, Tensor};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::linalg;

/// The three mask roles: beamforming target, distortion for the MVDR noise
/// covariance, and distortion for the RTF eigenvector estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Target,
    Distortion,
    DistortionRtf,
}

pub const MASK_KINDS: [MaskKind; 3] = [
    MaskKind::Target,
    MaskKind::Distortion,
    MaskKind::DistortionRtf,
];

impl MaskKind {
    fn index(self) -> usize {
        match self {
            MaskKind::Target => 0,
            MaskKind::Distortion => 1,
            MaskKind::DistortionRtf => 2,
        }
    }
}

/// Per-speaker triplet of time-frequency masks, each (t × f) in [0, 1].
#[derive(Clone, Debug)]
pub struct MaskSet {
    // indexed kind*I + speaker
    masks: Vec<Tensor>,
    num_speakers: usize,
    frames: usize,
    bins: usize,
}

impl MaskSet {
    /// `masks[kind][speaker]`, each of shape (t, f).
    pub fn new(masks: [Vec<Tensor>; 3]) -> Result<Self> {
        let num_speakers = masks[0].len();
        if num_speakers == 0 || masks.iter().any(|m| m.len() != num_speakers) {
            return Err(Error::InvalidArgument(
                "mask set needs the same nonzero speaker count for all three kinds".into(),
            ));
        }
        let shape = masks[0][0].shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "masks must be (t, f), got {shape:?}"
            )));
        }
        let mut flat = Vec::with_capacity(3 * num_speakers);
        for kind in &masks {
            for m in kind {
                if m.shape() != shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        op: "mask_set",
                        lhs: shape,
                        rhs: m.shape().to_vec(),
                    });
                }
                if m.value().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::InvalidArgument(
                        "mask values must lie in [0, 1]".into(),
                    ));
                }
                flat.push(m.clone());
            }
        }
        Ok(MaskSet {
            masks: flat,
            num_speakers,
            frames: shape[0],
            bins: shape[1],
        })
    }

    pub fn mask(&self, kind: MaskKind, speaker: usize) -> &Tensor {
        &self.masks[kind.index() * self.num_speakers + speaker]
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    /// (kinds, t, f, speakers)
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (3, self.frames, self.bins, self.num_speakers)
    }
}

/// Per-(kind, f, speaker) Hermitian spatial covariance matrices.
pub struct CovarianceSet {
    // indexed (kind*I + speaker)*F + f
    matrices: Vec<ComplexTensor>,
    pub epsilon: f64,
    num_speakers: usize,
    bins: usize,
    channels: usize,
}

impl CovarianceSet {
    pub fn get(&self, kind: MaskKind, f: usize, speaker: usize) -> &ComplexTensor {
        &self.matrices[(kind.index() * self.num_speakers + speaker) * self.bins + f]
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }
}

/// RTF vectors per (f, speaker), normalized to 1 at the reference channel.
pub struct RtfVectors {
    // indexed speaker*F + f, each M×1
    vectors: Vec<ComplexTensor>,
    pub reference_channel: usize,
    bins: usize,
    num_speakers: usize,
}

impl RtfVectors {
    pub fn get(&self, f: usize, speaker: usize) -> &ComplexTensor {
        &self.vectors[speaker * self.bins + f]
    }
}

/// MVDR coefficient vectors per (f, speaker).
pub struct BeamformerWeights {
    vectors: Vec<ComplexTensor>,
    pub reference_channel: usize,
    bins: usize,
    num_speakers: usize,
}

impl BeamformerWeights {
    pub fn get(&self, f: usize, speaker: usize) -> &ComplexTensor {
        &self.vectors[speaker * self.bins + f]
    }

    pub fn num_speakers(&self) -> usize {
        self.num_speakers
    }
}

/// Counters for numerical-rescue events during beamforming.
#[derive(Debug, Default, Clone)]
pub struct BfDiagnostics {
    pub diagonal_loading_events: u64,
}

/// Observation matrices per frequency: Y_f (t × m), plus pre-transposed and
/// conjugated constants reused across kinds/speakers.
pub struct ObservedSpectra {
    // per f: (Y as T×M, Yᵀ as M×T, conj(Y) as T×M)
    per_freq: Vec<(ComplexTensor, ComplexTensor, ComplexTensor)>,
    frames: usize,
    channels: usize,
}

impl ObservedSpectra {
    pub fn from_spectrogram(spec: &Spectrogram) -> Self {
        Self::from_array(&spec.data)
    }

    /// Build from a raw (t, f, m) complex array.
    pub fn from_array(data: &ndarray::Array3<Complex64>) -> Self {
        let (t, bins, m) = data.dim();
        let per_freq = (0..bins)
            .map(|f| {
                let y = Array2::from_shape_fn((t, m), |(ti, mi)| data[(ti, f, mi)]);
                let yo = ComplexTensor::from_matrix(&y);
                let yt = ComplexTensor::from_matrix(&y.t().to_owned());
                let yc = ComplexTensor::from_matrix(&y.mapv(|c| c.conj()));
                (yo, yt, yc)
            })
            .collect();
        ObservedSpectra {
            per_freq,
            frames: t,
            channels: m,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.per_freq.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    /// The observation Y_f as a (t × m) constant tensor.
    pub fn observation(&self, f: usize) -> &ComplexTensor {
        &self.per_freq[f].0
    }
}

/// Mask-weighted covariance estimation: per kind/f/speaker,
/// `R = (1/T) Σ_t (ε + m_t) y_t y_tᴴ`, Hermitian-symmetrized.
pub fn estimate_covariances(
    observed: &ObservedSpectra,
    masks: &MaskSet,
    epsilon: f64,
) -> Result<CovarianceSet> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    if masks.num_frames() != observed.frames || masks.num_bins() != observed.num_bins() {
        return Err(Error::ShapeMismatch {
            op: "estimate_covariances",
            lhs: vec![observed.frames, observed.num_bins()],
            rhs: vec![masks.num_frames(), masks.num_bins()],
        });
    }
    let t = observed.frames;
    let bins = observed.num_bins();
    let num_speakers = masks.num_speakers();
    let mut matrices = Vec::with_capacity(3 * num_speakers * bins);
    for kind in MASK_KINDS {
        for i in 0..num_speakers {
            let mask = masks.mask(kind, i);
            for (f, (_, yt, yc)) in observed.per_freq.iter().enumerate() {
                let w = mask.slice2(0..t, f..f + 1)?.add_scalar(epsilon);
                let weighted = yc.scale_real(&w)?;
                let r = yt.matmul(&weighted)?;
                let r = r.scale_real(&Tensor::scalar_const(1.0 / t as f64))?;
                // kill floating-point asymmetry before any solve
                let sym = r.add(&r.hermitian()?)?.scale_real(&Tensor::scalar_const(0.5))?;
                matrices.push(sym);
            }
        }
    }
    Ok(CovarianceSet {
        matrices,
        epsilon,
        num_speakers,
        bins,
        channels: observed.channels,
    })
}

fn one_hot(m: usize, r: usize) -> ComplexTensor {
    let re = Array2::from_shape_fn((m, 1), |(i, _)| if i == r { 1.0 } else { 0.0 });
    ComplexTensor::new(
        Tensor::constant(re.into_dyn()),
        Tensor::constant(ndarray::ArrayD::zeros(ndarray::IxDyn(&[m, 1]))),
    )
    .expect("equal shapes")
}

/// Diagonal loading `A + (1e-10·tr(A)/M)·I` as a tape operation (the loading
/// constant itself is treated as fixed).
fn diagonally_load(a: &ComplexTensor) -> Result<ComplexTensor> {
    let m = a.shape()[0];
    let load = 1e-10 * a.trace_re()? / m as f64;
    let eye = Array2::<Complex64>::eye(m) * Complex64::new(load, 0.0);
    a.add(&ComplexTensor::from_matrix(&eye))
}

const CONDITION_LIMIT: f64 = 1e12;

/// Power-iteration RTF estimate for one frequency/speaker, fully on the tape:
/// `Φ = R_ñ⁻¹ R_d; v ← u_r; v ← Φ v (η times); v ← R_ñ v; ṽ = v / v_r`.
pub fn rtf_power_iteration_single(
    r_target: &ComplexTensor,
    r_distortion_rtf: &ComplexTensor,
    reference_channel: usize,
    eta_max: usize,
    diag: &mut BfDiagnostics,
) -> Result<ComplexTensor> {
    if eta_max < 1 {
        return Err(Error::InvalidArgument("eta_max must be >= 1".into()));
    }
    let m = r_target.shape()[0];
    if reference_channel >= m {
        return Err(Error::InvalidArgument(format!(
            "reference channel {reference_channel} out of range for {m} channels"
        )));
    }
    let r_tilde = if linalg::hermitian_condition(&r_distortion_rtf.to_matrix()?)? > CONDITION_LIMIT
    {
        diag.diagonal_loading_events += 1;
        diagonally_load(r_distortion_rtf)?
    } else {
        r_distortion_rtf.clone()
    };
    let phi = r_tilde.solve(r_target)?;
    let mut v = one_hot(m, reference_channel);
    for _ in 0..eta_max {
        v = phi.matmul(&v)?;
    }
    let v = r_tilde.matmul(&v)?;
    let v_r = v.slice2(reference_channel..reference_channel + 1, 0..1)?;
    v.div(&v_r)
}

/// Eigendecomposition RTF estimate for one frequency/speaker:
/// `v = R_ñ · MaxEig{R_ñ⁻¹ R_d}`, solved through the whitened Hermitian
/// problem for stability. Evaluation-time only: the result is a constant.
pub fn rtf_eigh_single(
    r_target: &Array2<Complex64>,
    r_distortion_rtf: &Array2<Complex64>,
    reference_channel: usize,
) -> Result<Array1<Complex64>> {
    let m = r_target.nrows();
    if reference_channel >= m {
        return Err(Error::InvalidArgument(format!(
            "reference channel {reference_channel} out of range for {m} channels"
        )));
    }
    let mut r_tilde = r_distortion_rtf.clone();
    if linalg::hermitian_condition(&r_tilde)? > CONDITION_LIMIT {
        let load = 1e-10 * (0..m).map(|i| r_tilde[(i, i)].re).sum::<f64>() / m as f64;
        for i in 0..m {
            r_tilde[(i, i)] += Complex64::new(load, 0.0);
        }
    }
    // Whitened problem: R_ñ = L Lᴴ, B = L⁻¹ R_d L⁻ᴴ (Hermitian),
    // MaxEig{R_ñ⁻¹ R_d} = L⁻ᴴ MaxEig{B}.
    let l = linalg::to_na(&r_tilde)
        .cholesky()
        .ok_or_else(|| Error::Numerical("RTF covariance is not positive definite".into()))?
        .l();
    let rd = linalg::to_na(r_target);
    let tmp = l
        .clone()
        .solve_lower_triangular(&rd)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let tmp2 = l
        .clone()
        .solve_lower_triangular(&tmp.adjoint())
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let b = tmp2.adjoint();
    let b_nd = linalg::from_na(&b);
    // enforce exact Hermitian symmetry before the eigensolver
    let bh = b_nd.t().mapv(|c| c.conj());
    let b_sym = (&b_nd + &bh).mapv(|c| c * 0.5);
    let (_, u) = linalg::hermitian_max_eigenpair(&b_sym)?;

    let u_na = nalgebra::DVector::from_iterator(m, u.iter().cloned());
    let x = l
        .adjoint()
        .solve_upper_triangular(&u_na)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let v = linalg::to_na(&r_tilde) * x;
    let v_r = v[reference_channel];
    let norm: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if v_r.norm() < 1e-12 * norm.max(1e-300) {
        return Err(Error::Numerical(
            "RTF reference-channel component vanishes".into(),
        ));
    }
    Ok(Array1::from_vec(v.iter().map(|c| c / v_r).collect()))
}

/// MVDR coefficients for one frequency/speaker:
/// `w = R_n⁻¹ ṽ / (ṽᴴ R_n⁻¹ ṽ)`. Differentiable.
pub fn mvdr_weights_single(
    r_distortion: &ComplexTensor,
    rtf: &ComplexTensor,
    diag: &mut BfDiagnostics,
) -> Result<ComplexTensor> {
    let attempt = |r_n: &ComplexTensor| -> Result<(ComplexTensor, ComplexTensor, f64)> {
        let num = r_n.solve(rtf)?;
        let den = rtf.hermitian()?.matmul(&num)?;
        let den_mag = {
            let d = den.to_matrix()?;
            d[(0, 0)].norm()
        };
        Ok((num, den, den_mag))
    };
    let (num, den, den_mag) = attempt(r_distortion)?;
    let (num, den) = if den_mag < 1e-12 {
        diag.diagonal_loading_events += 1;
        let loaded = diagonally_load(r_distortion)?;
        let (num, den, den_mag) = attempt(&loaded)?;
        if den_mag < 1e-12 {
            return Err(Error::Numerical(
                "MVDR denominator vanished even after diagonal loading".into(),
            ));
        }
        (num, den)
    } else {
        (num, den)
    };
    num.div(&den)
}

/// RTF estimation across all (f, speaker) pairs via power iteration.
pub fn rtf_power_iteration(
    cov: &CovarianceSet,
    reference_channel: usize,
    eta_max: usize,
    diag: &mut BfDiagnostics,
) -> Result<RtfVectors> {
    let mut vectors = Vec::with_capacity(cov.num_speakers() * cov.num_bins());
    for i in 0..cov.num_speakers() {
        for f in 0..cov.num_bins() {
            vectors.push(rtf_power_iteration_single(
                cov.get(MaskKind::Target, f, i),
                cov.get(MaskKind::DistortionRtf, f, i),
                reference_channel,
                eta_max,
                diag,
            )?);
        }
    }
    Ok(RtfVectors {
        vectors,
        reference_channel,
        bins: cov.num_bins(),
        num_speakers: cov.num_speakers(),
    })
}

/// RTF estimation across all (f, speaker) pairs via eigendecomposition
/// (evaluation time; results are constants).
pub fn rtf_eigh(cov: &CovarianceSet, reference_channel: usize) -> Result<RtfVectors> {
    let mut vectors = Vec::with_capacity(cov.num_speakers() * cov.num_bins());
    for i in 0..cov.num_speakers() {
        for f in 0..cov.num_bins() {
            let v = rtf_eigh_single(
                &cov.get(MaskKind::Target, f, i).to_matrix()?,
                &cov.get(MaskKind::DistortionRtf, f, i).to_matrix()?,
                reference_channel,
            )?;
            let m = v.len();
            let col = Array2::from_shape_fn((m, 1), |(j, _)| v[j]);
            vectors.push(ComplexTensor::from_matrix(&col));
        }
    }
    Ok(RtfVectors {
        vectors,
        reference_channel,
        bins: cov.num_bins(),
        num_speakers: cov.num_speakers(),
    })
}

/// MVDR weights across all (f, speaker) pairs.
pub fn mvdr_weights(
    cov: &CovarianceSet,
    rtf: &RtfVectors,
    diag: &mut BfDiagnostics,
) -> Result<BeamformerWeights> {
    let mut vectors = Vec::with_capacity(cov.num_speakers() * cov.num_bins());
    for i in 0..cov.num_speakers() {
        for f in 0..cov.num_bins() {
            vectors.push(mvdr_weights_single(
                cov.get(MaskKind::Distortion, f, i),
                rtf.get(f, i),
                diag,
            )?);
        }
    }
    Ok(BeamformerWeights {
        vectors,
        reference_channel: rtf.reference_channel,
        bins: cov.num_bins(),
        num_speakers: cov.num_speakers(),
    })
}

/// Apply the beamformers: per speaker, `d̂_{t,f} = w_{f}ᴴ y_{t,f}` assembled
/// into a (t × f) complex tensor.
pub fn apply_beamformer(
    weights: &BeamformerWeights,
    observed: &ObservedSpectra,
) -> Result<Vec<ComplexTensor>> {
    if weights.bins != observed.num_bins() {
        return Err(Error::ShapeMismatch {
            op: "apply_beamformer",
            lhs: vec![weights.bins],
            rhs: vec![observed.num_bins()],
        });
    }
    let mut out = Vec::with_capacity(weights.num_speakers);
    for i in 0..weights.num_speakers {
        let mut cols = Vec::with_capacity(weights.bins);
        for f in 0..weights.bins {
            let y = observed.observation(f);
            let w_conj = weights.get(f, i).conj();
            cols.push(y.matmul(&w_conj)?);
        }
        out.push(ComplexTensor::concat(&cols, 1)?);
    }
    Ok(out)
}
