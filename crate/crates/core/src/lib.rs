//! Multichannel source separation toolkit: a neural mask estimator trained
//! through an MVDR beamformer with time-domain losses (centrally the
//! convolutive-transfer-function-invariant SDR), plus a shoebox room
//! simulator and BSS-Eval-style metrics.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod wav;

pub use error::{Error, Result};
pub mod beamforming;
pub mod linalg;
pub mod losses;
pub mod mask_estimator;
