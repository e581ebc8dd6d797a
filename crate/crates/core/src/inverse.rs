//! Least-squares inverse STFT.
//!
//! Each frame's spectrum is rebuilt from a magnitude plane and a phase plane,
//! extended to the full Hermitian spectrum and inverse transformed. Frames are
//! combined by window-weighted overlap-add normalised by the summed squared
//! window, which is the least-squares signal estimate for a (possibly
//! inconsistent) modified STFT when the analysis window is reused for
//! synthesis.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::tfr::{StftConfig, TfGrid, TfrError, Waveform};

/// SDR reported for a perfect reconstruction.
pub const SDR_CAP_DB: f64 = 120.0;

const DENOMINATOR_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error("overlap {overlap} is below the minimum of {min} samples")]
    InsufficientOverlap { overlap: usize, min: usize },
    #[error("plane shape {got:?} does not match the configured {expected:?}")]
    ShapeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("signals differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error(transparent)]
    Tfr(#[from] TfrError),
}

/// Output of a reconstruction, with its SDR when a reference is known.
#[derive(Clone, Debug)]
pub struct ReconstructionReport {
    pub waveform: Waveform,
    pub sdr_db: Option<f64>,
}

/// Rebuilds a track of `n_time·(S−O)+O` samples from magnitude and phase.
pub fn ls_istft(
    magnitude: &Array2<f64>,
    phase: &Array2<f64>,
    overlap: usize,
    cfg: &StftConfig,
) -> Result<Waveform, InverseError> {
    cfg.validate()?;
    let expected = (cfg.n_freq, cfg.n_time);
    for plane in [magnitude, phase] {
        if plane.dim() != expected {
            return Err(InverseError::ShapeMismatch {
                got: plane.dim(),
                expected,
            });
        }
    }
    if overlap < cfg.min_overlap() || overlap >= cfg.window_len {
        return Err(InverseError::InsufficientOverlap {
            overlap,
            min: cfg.min_overlap(),
        });
    }

    let s = cfg.window_len;
    let hop = s - overlap;
    let len = cfg.adjusted_len(overlap);
    let window = cfg.window.coefficients(s);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(s);
    let scale = 1.0 / s as f64;

    let mut numerator = vec![0.0; len];
    let mut denominator = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); s];
    for t in 0..cfg.n_time {
        buf.fill(Complex::new(0.0, 0.0));
        for k in 0..cfg.n_freq {
            let z = Complex::from_polar(magnitude[[k, t]], phase[[k, t]]);
            buf[k] = z;
            if k > 0 {
                buf[s - k] = z.conj();
            }
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for (i, (z, &w)) in buf.iter().zip(&window).enumerate() {
            numerator[start + i] += w * z.re * scale;
            denominator[start + i] += w * w;
        }
    }
    let samples = numerator
        .iter()
        .zip(&denominator)
        .map(|(&n, &d)| if d < DENOMINATOR_GUARD { 0.0 } else { n / d })
        .collect();
    Ok(Waveform::from_samples(samples)?)
}

/// Inverts a grid with a replacement magnitude, keeping the grid's phase.
pub fn ls_istft_grid(grid: &TfGrid, magnitude: &Array2<f64>) -> Result<Waveform, InverseError> {
    ls_istft(magnitude, &grid.phase, grid.overlap, &grid.config)
}

/// Reconstruction plus interior SDR against `reference`, ignoring
/// `window_len` samples at either end.
pub fn reconstruct_with_report(
    grid: &TfGrid,
    magnitude: &Array2<f64>,
    reference: Option<&Waveform>,
) -> Result<ReconstructionReport, InverseError> {
    let waveform = ls_istft_grid(grid, magnitude)?;
    let sdr_db = match reference {
        Some(r) => Some(interior_sdr(
            r.samples(),
            waveform.samples(),
            grid.config.window_len,
        )?),
        None => None,
    };
    Ok(ReconstructionReport { waveform, sdr_db })
}

/// Signal-to-distortion ratio in dB, capped at [`SDR_CAP_DB`].
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64, InverseError> {
    sdr_slices(reference.samples(), estimate.samples())
}

pub fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64, InverseError> {
    if reference.len() != estimate.len() {
        return Err(InverseError::LengthMismatch(reference.len(), estimate.len()));
    }
    let signal: f64 = reference.iter().map(|r| r * r).sum();
    if signal == 0.0 {
        return Err(InverseError::ZeroReference);
    }
    let error: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if error == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * (signal / error).log10()).min(SDR_CAP_DB))
}

/// SDR over the common prefix of both signals with `margin` samples dropped
/// at each end.
pub fn interior_sdr(reference: &[f64], estimate: &[f64], margin: usize) -> Result<f64, InverseError> {
    let n = reference.len().min(estimate.len());
    if n <= 2 * margin {
        return sdr_slices(&reference[..n], &estimate[..n]);
    }
    sdr_slices(&reference[margin..n - margin], &estimate[margin..n - margin])
}
