//! Training objectives (F-SDR, SDR, SI-SDR, CI-SDR) and the permutation
//! invariant wrapper. The CI-SDR machinery with its sign flipped doubles as
//! the BSS-Eval-style SDR evaluation metric.
//!
//! All losses are reported in dB with "lower is better" (negated SDR).

use std::rc::Rc;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ComplexTensor, SymSolveFn, Tensor};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    FSdr,
    Sdr,
    SiSdr,
    CiSdr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiSolver {
    ToeplitzLevinson,
    DirectNormalEquations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub ci_filter_taps: usize,
    pub log_floor: f64,
    pub ci_solver: CiSolver,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::CiSdr,
            ci_filter_taps: 512,
            log_floor: 1e-10,
            ci_solver: CiSolver::DirectNormalEquations,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ci_filter_taps < 1 {
            return Err(Error::InvalidArgument("ci_filter_taps must be >= 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::InvalidArgument("log_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Least-squares FIR fit of a reference to an estimate (the Wiener-Hopf
/// solution), on the tape.
pub struct FilterEstimate {
    pub taps: Tensor,
}

/// A source prepared for repeated CI-SDR fits: the raw signal plus a solver
/// for the (regularized) Toeplitz normal equations of its autocorrelation.
pub struct CiReference {
    signal: Rc<Vec<f64>>,
    solver: SymSolveFn,
    taps: usize,
}

impl CiReference {
    pub fn signal_len(&self) -> usize {
        self.signal.len()
    }

    pub fn taps(&self) -> usize {
        self.taps
    }
}

/// Full-support autocorrelation `r[d] = Σ_ℓ s[ℓ] s[ℓ+d]` for lags `0..taps`.
fn autocorrelation(signal: &[f64], taps: usize) -> Vec<f64> {
    let mut r = vec![0.0; taps];
    for (d, rd) in r.iter_mut().enumerate() {
        *rd = signal[d..]
            .iter()
            .zip(signal)
            .map(|(a, b)| a * b)
            .sum();
    }
    r
}

/// Precompute the Toeplitz solve for one source; Tikhonov-regularized by
/// `1e-8·r₀` on the diagonal.
pub fn ci_reference(source: &[f64], taps: usize, solver: CiSolver) -> Result<CiReference> {
    if source.len() <= taps {
        return Err(Error::SignalTooShort {
            op: "ci_reference",
            len: source.len(),
            min: taps + 1,
        });
    }
    let mut col = autocorrelation(source, taps);
    if col[0] <= 0.0 {
        return Err(Error::AllZeroTarget { speaker: 0 });
    }
    col[0] *= 1.0 + 1e-8;
    let solve: SymSolveFn = match solver {
        CiSolver::DirectNormalEquations => {
            let t = nalgebra::DMatrix::from_fn(taps, taps, |i, j| col[i.abs_diff(j)]);
            let chol = t
                .cholesky()
                .ok_or_else(|| Error::Numerical("autocorrelation matrix not PD".into()))?;
            Rc::new(move |rhs: &[f64]| {
                chol.solve(&nalgebra::DVector::from_column_slice(rhs))
                    .as_slice()
                    .to_vec()
            })
        }
        CiSolver::ToeplitzLevinson => {
            let col = col.clone();
            Rc::new(move |rhs: &[f64]| {
                linalg::levinson_toeplitz_solve(&col, rhs).expect("regularized Toeplitz is PD")
            })
        }
    };
    Ok(CiReference {
        signal: Rc::new(source.to_vec()),
        solver: solve,
        taps,
    })
}

/// Fit `taps` FIR coefficients so that `source * taps ≈ estimate` in the
/// least-squares sense; differentiable through the solve.
pub fn wiener_hopf_filter(reference: &CiReference, estimate: &Tensor) -> Result<FilterEstimate> {
    let cross = Tensor::cross_corr_const(reference.signal.clone(), estimate, reference.taps)?;
    let taps = Tensor::solve_sym_const(reference.solver.clone(), &cross)?;
    Ok(FilterEstimate { taps })
}

/// Convenience wrapper constructing the reference internally.
pub fn wiener_hopf_fit(
    source: &[f64],
    estimate: &Tensor,
    taps: usize,
    solver: CiSolver,
) -> Result<FilterEstimate> {
    let r = ci_reference(source, taps, solver)?;
    wiener_hopf_filter(&r, estimate)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn pad_to(est: &Tensor, n: usize) -> Result<Tensor> {
    let len = est.shape()[0];
    if len == n {
        Ok(est.clone())
    } else {
        let zeros = Tensor::constant(ArrayD::zeros(IxDyn(&[n - len])));
        Tensor::concat(&[est.clone(), zeros], 0)
    }
}

/// One-speaker CI-SDR term: fit the filter, then `10·log10(‖ŝ−d̂‖²/‖ŝ‖²)`
/// where `ŝ = s * â`.
pub fn ci_sdr_pair(
    reference: &CiReference,
    estimate: &Tensor,
    log_floor: f64,
    speaker: usize,
) -> Result<Tensor> {
    let est_len = estimate.shape()[0];
    let n = est_len.max(reference.signal.len() + reference.taps - 1);
    let filt = wiener_hopf_filter(reference, estimate)?;
    let s_filt = Tensor::fir_filter_const(reference.signal.clone(), &filt.taps, n)?;
    let den = s_filt.mul(&s_filt)?.sum();
    if den.scalar()? < 1e-12 {
        return Err(Error::Numerical(format!(
            "degenerate CI-SDR filter for speaker {speaker}: filtered source energy {}",
            den.scalar()?
        )));
    }
    let est_pad = pad_to(estimate, n)?;
    let resid = est_pad.sub(&s_filt)?;
    let num = resid.mul(&resid)?.sum();
    let ratio = num.div(&den)?.clamp_min(log_floor);
    Ok(ratio.log10().mul_scalar(10.0))
}

/// One-speaker time-domain SDR term against a fixed target.
pub fn sdr_pair(target: &[f64], estimate: &Tensor, log_floor: f64) -> Result<Tensor> {
    let ten = energy(target);
    let t = Tensor::constant(Array1::from_vec(target.to_vec()).into_dyn());
    if estimate.shape() != t.shape() {
        return Err(Error::ShapeMismatch {
            op: "sdr_pair",
            lhs: t.shape().to_vec(),
            rhs: estimate.shape().to_vec(),
        });
    }
    let resid = estimate.sub(&t)?;
    let num = resid.mul(&resid)?.sum();
    let ratio = num.mul_scalar(1.0 / ten).clamp_min(log_floor);
    Ok(ratio.log10().mul_scalar(10.0))
}

/// One-speaker scale-invariant SDR term: the optimal scalar gain is fitted
/// on the tape before the ratio.
pub fn si_sdr_pair(target: &[f64], estimate: &Tensor, log_floor: f64) -> Result<Tensor> {
    let ten = energy(target);
    let t = Tensor::constant(Array1::from_vec(target.to_vec()).into_dyn());
    if estimate.shape() != t.shape() {
        return Err(Error::ShapeMismatch {
            op: "si_sdr_pair",
            lhs: t.shape().to_vec(),
            rhs: estimate.shape().to_vec(),
        });
    }
    let gain = t.mul(estimate)?.sum().mul_scalar(1.0 / ten);
    let scaled = t.mul(&gain)?;
    let resid = estimate.sub(&scaled)?;
    let num = resid.mul(&resid)?.sum();
    let den = scaled.mul(&scaled)?.sum().clamp_min(1e-300);
    let ratio = num.div(&den)?.clamp_min(log_floor);
    Ok(ratio.log10().mul_scalar(10.0))
}

/// One-speaker frequency-domain SDR term: mean over bins of the per-bin
/// ratio |d−d̂|²/|d|², denominators floored.
pub fn f_sdr_pair(
    target: &Array2<Complex64>,
    estimate: &ComplexTensor,
    log_floor: f64,
) -> Result<Tensor> {
    let shape = estimate.shape();
    if shape != [target.nrows(), target.ncols()] {
        return Err(Error::ShapeMismatch {
            op: "f_sdr_pair",
            lhs: vec![target.nrows(), target.ncols()],
            rhs: shape.to_vec(),
        });
    }
    let t = ComplexTensor::from_matrix(target);
    let inv_den = Tensor::constant(
        target
            .mapv(|c| 1.0 / c.norm_sqr().max(log_floor))
            .into_dyn(),
    );
    let diff = estimate.sub(&t)?;
    let ratio = diff.abs_sq()?.mul(&inv_den)?;
    Ok(ratio.mean().clamp_min(log_floor).log10().mul_scalar(10.0))
}

fn check_targets_nonzero(energies: &[f64]) -> Result<()> {
    for (i, &e) in energies.iter().enumerate() {
        if e <= 0.0 {
            return Err(Error::AllZeroTarget { speaker: i });
        }
    }
    Ok(())
}

/// Mean over speakers, `(10/I)·Σ log10(...)`, identity assignment.
pub fn sdr_loss(targets: &[Vec<f64>], estimates: &[Tensor], log_floor: f64) -> Result<Tensor> {
    check_counts(targets.len(), estimates.len())?;
    check_targets_nonzero(&targets.iter().map(|t| energy(t)).collect::<Vec<_>>())?;
    let mut terms = Vec::new();
    for (t, e) in targets.iter().zip(estimates) {
        terms.push(sdr_pair(t, e, log_floor)?);
    }
    mean_of(&terms)
}

pub fn si_sdr_loss(targets: &[Vec<f64>], estimates: &[Tensor], log_floor: f64) -> Result<Tensor> {
    check_counts(targets.len(), estimates.len())?;
    check_targets_nonzero(&targets.iter().map(|t| energy(t)).collect::<Vec<_>>())?;
    let mut terms = Vec::new();
    for (t, e) in targets.iter().zip(estimates) {
        terms.push(si_sdr_pair(t, e, log_floor)?);
    }
    mean_of(&terms)
}

pub fn ci_sdr_loss(
    sources: &[Vec<f64>],
    estimates: &[Tensor],
    cfg: &LossConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    check_counts(sources.len(), estimates.len())?;
    check_targets_nonzero(&sources.iter().map(|s| energy(s)).collect::<Vec<_>>())?;
    let mut terms = Vec::new();
    for (i, (s, e)) in sources.iter().zip(estimates).enumerate() {
        let r = ci_reference(s, cfg.ci_filter_taps, cfg.ci_solver)?;
        terms.push(ci_sdr_pair(&r, e, cfg.log_floor, i)?);
    }
    mean_of(&terms)
}

pub fn f_sdr_loss(
    targets: &[Array2<Complex64>],
    estimates: &[ComplexTensor],
    log_floor: f64,
) -> Result<Tensor> {
    check_counts(targets.len(), estimates.len())?;
    check_targets_nonzero(
        &targets
            .iter()
            .map(|t| t.iter().map(|c| c.norm_sqr()).sum())
            .collect::<Vec<_>>(),
    )?;
    let mut terms = Vec::new();
    for (t, e) in targets.iter().zip(estimates) {
        terms.push(f_sdr_pair(t, e, log_floor)?);
    }
    mean_of(&terms)
}

fn check_counts(t: usize, e: usize) -> Result<()> {
    if t != e || t == 0 {
        return Err(Error::InvalidArgument(format!(
            "speaker count mismatch: {t} targets vs {e} estimates"
        )));
    }
    Ok(())
}

fn mean_of(terms: &[Tensor]) -> Result<Tensor> {
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.mul_scalar(1.0 / terms.len() as f64))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, n, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], n, &mut out);
    out
}

/// Permutation-invariant wrapper: evaluates `pair_loss(i, targets[i],
/// estimates[σ(i)])` under every assignment σ, returns the minimizing loss
/// (mean over speakers) and σ. Gradient flows only through the minimizing
/// assignment.
pub fn pit_wrap<T, E>(
    pair_loss: impl Fn(usize, &T, &E) -> Result<Tensor>,
    targets: &[T],
    estimates: &[E],
) -> Result<(Tensor, Vec<usize>)> {
    let count = targets.len();
    check_counts(count, estimates.len())?;
    if count > 6 {
        return Err(Error::InvalidArgument(format!(
            "PIT factorial search limited to 6 speakers, got {count}"
        )));
    }
    let mut pairs: Vec<Vec<Tensor>> = Vec::with_capacity(count);
    for (i, t) in targets.iter().enumerate() {
        let mut row = Vec::with_capacity(count);
        for e in estimates {
            row.push(pair_loss(i, t, e)?);
        }
        pairs.push(row);
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(count) {
        let mut total = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            total += pairs[i][j].scalar()?;
        }
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let chosen: Vec<Tensor> = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| pairs[i][j].clone())
        .collect();
    Ok((mean_of(&chosen)?, perm))
}

/// BSS-Eval-style SDR in dB (higher is better): the CI-SDR machinery with
/// the sign flipped, evaluated on plain signals.
pub fn bss_eval_sdr_db(
    source: &[f64],
    estimate: &[f64],
    taps: usize,
    solver: CiSolver,
    log_floor: f64,
) -> Result<f64> {
    let r = ci_reference(source, taps, solver)?;
    let est = Tensor::constant(Array1::from_vec(estimate.to_vec()).into_dyn());
    let loss = ci_sdr_pair(&r, &est, log_floor, 0)?;
    Ok(-loss.scalar()?)
}

/// Scale-invariant SDR in dB (higher is better), plain signals.
pub fn si_sdr_db(target: &[f64], estimate: &[f64], log_floor: f64) -> Result<f64> {
    if energy(target) <= 0.0 {
        return Err(Error::AllZeroTarget { speaker: 0 });
    }
    let est = Tensor::constant(Array1::from_vec(estimate.to_vec()).into_dyn());
    let loss = si_sdr_pair(target, &est, log_floor)?;
    Ok(-loss.scalar()?)
}
