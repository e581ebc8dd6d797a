//! Fixed-size time-frequency embedding of variable-length tracks.
//!
//! A track of `L` samples is mapped onto exactly `n_time` STFT frames by
//! choosing the frame overlap from the track length. Short tracks get a
//! large overlap (fine time resolution), long tracks a small one. The
//! smallest admissible overlap is a quarter of the window, which bounds the
//! longest track that fits in one grid (98304 samples at the default
//! configuration, 6.144 s at 16 kHz).

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

/// The only sample rate accepted by the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Default dB floor of the log-magnitude mapping.
pub const DEFAULT_FLOOR_DB: f64 = -100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TfrError {
    #[error("unsupported sample rate {0} Hz, expected {SAMPLE_RATE} Hz")]
    UnsupportedSampleRate(u32),
    #[error("waveform has no samples")]
    EmptyWaveform,
    #[error("track of {len} samples exceeds the single-grid limit of {max} samples")]
    TrackTooLong { len: usize, max: usize },
    #[error("track of {len} samples is too short to embed")]
    TrackTooShort { len: usize },
    #[error("overlap {overlap} is outside [0, {window})")]
    InvalidOverlap { overlap: usize, window: usize },
    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),
}

/// Mono PCM track at 16 kHz with amplitudes nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, TfrError> {
        if sample_rate != SAMPLE_RATE {
            return Err(TfrError::UnsupportedSampleRate(sample_rate));
        }
        if samples.is_empty() {
            return Err(TfrError::EmptyWaveform);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a 16 kHz waveform.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, TfrError> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowKind {
    Hamming,
    Hann,
}

impl WindowKind {
    /// Periodic form of the window, `len` taps.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                }
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hamming => "hamming",
            WindowKind::Hann => "hann",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hamming" => Some(WindowKind::Hamming),
            "hann" => Some(WindowKind::Hann),
            _ => None,
        }
    }
}

/// Analysis parameters of the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StftConfig {
    /// Window length `S` in samples (also the FFT size).
    pub window_len: usize,
    /// Number of kept one-sided frequency bins `N_F`.
    pub n_freq: usize,
    /// Number of frames `N_T`.
    pub n_time: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 512,
            n_freq: 256,
            n_time: 256,
            window: WindowKind::Hamming,
        }
    }
}

impl StftConfig {
    /// Square `size`×`size` grid with a `2·size` window, the Nyquist bin dropped.
    pub fn square(size: usize) -> Self {
        Self {
            window_len: 2 * size,
            n_freq: size,
            n_time: size,
            window: WindowKind::Hamming,
        }
    }

    pub fn validate(&self) -> Result<(), TfrError> {
        if self.window_len < 4 {
            return Err(TfrError::InvalidConfig(format!(
                "window length {} is below 4",
                self.window_len
            )));
        }
        if self.n_freq == 0 || self.n_freq > self.window_len / 2 {
            return Err(TfrError::InvalidConfig(format!(
                "n_freq {} must be in [1, {}]",
                self.n_freq,
                self.window_len / 2
            )));
        }
        if self.n_time == 0 {
            return Err(TfrError::InvalidConfig("n_time must be positive".into()));
        }
        Ok(())
    }

    /// Smallest admissible overlap, a quarter of the window rounded up.
    pub fn min_overlap(&self) -> usize {
        self.window_len.div_ceil(4)
    }

    /// Longest track that embeds into a single grid.
    pub fn max_track_len(&self) -> usize {
        self.n_time * (self.window_len - self.min_overlap())
    }

    /// Track length that exactly fills `n_time` frames at `overlap`.
    pub fn adjusted_len(&self, overlap: usize) -> usize {
        self.n_time * (self.window_len - overlap) + overlap
    }

    /// Frequency in Hz of bin `k`.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * f64::from(SAMPLE_RATE) / self.window_len as f64
    }
}

/// Frame overlap that maps a track of `len` samples onto `n_time` frames.
pub fn compute_overlap(len: usize, cfg: &StftConfig) -> Result<usize, TfrError> {
    cfg.validate()?;
    if len == 0 {
        return Err(TfrError::TrackTooShort { len });
    }
    let hop = len.div_ceil(cfg.n_time);
    if hop + cfg.min_overlap() > cfg.window_len {
        return Err(TfrError::TrackTooLong {
            len,
            max: cfg.max_track_len(),
        });
    }
    Ok(cfg.window_len - hop)
}

/// Truncates or zero-pads the end of `w` to `n_time·(S−O)+O` samples.
pub fn adjust_length(w: &Waveform, overlap: usize, cfg: &StftConfig) -> Result<Waveform, TfrError> {
    if overlap >= cfg.window_len {
        return Err(TfrError::InvalidOverlap {
            overlap,
            window: cfg.window_len,
        });
    }
    let target = cfg.adjusted_len(overlap);
    let mut samples = w.samples.clone();
    samples.resize(target, 0.0);
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

/// Magnitude and phase planes of an embedded track, `n_freq × n_time`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfGrid {
    pub magnitude: Array2<f64>,
    /// Radians in (-π, π].
    pub phase: Array2<f64>,
    pub overlap: usize,
    pub adjusted_len: usize,
    /// Length of the track before padding or truncation.
    pub source_len: usize,
    pub config: StftConfig,
}

impl TfGrid {
    pub fn hop(&self) -> usize {
        self.config.window_len - self.overlap
    }

    /// Seconds covered by one grid column.
    pub fn seconds_per_column(&self) -> f64 {
        self.hop() as f64 / f64::from(SAMPLE_RATE)
    }
}

/// Windowed STFT of `w` at the dynamic overlap, lowest `n_freq` bins kept.
pub fn stft_embed(w: &Waveform, cfg: &StftConfig) -> Result<TfGrid, TfrError> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(TfrError::UnsupportedSampleRate(w.sample_rate));
    }
    let overlap = compute_overlap(w.len(), cfg)?;
    let adjusted = adjust_length(w, overlap, cfg)?;
    let s = cfg.window_len;
    let hop = s - overlap;
    let window = cfg.window.coefficients(s);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(s);

    let mut magnitude = Array2::zeros((cfg.n_freq, cfg.n_time));
    let mut phase = Array2::zeros((cfg.n_freq, cfg.n_time));
    let mut buf = vec![Complex::new(0.0, 0.0); s];
    for t in 0..cfg.n_time {
        let frame = &adjusted.samples[t * hop..t * hop + s];
        for ((b, &x), &wv) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * wv, 0.0);
        }
        fft.process(&mut buf);
        for f in 0..cfg.n_freq {
            let z = buf[f];
            magnitude[[f, t]] = z.norm();
            phase[[f, t]] = wrap_phase(z.arg());
        }
    }
    Ok(TfGrid {
        magnitude,
        phase,
        overlap,
        adjusted_len: adjusted.len(),
        source_len: w.len(),
        config: *cfg,
    })
}

fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// Magnitudes in dB relative to a reference, clipped to `[floor_db, 0]` and
/// mapped affinely onto [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct LogMagnitude {
    pub values: Array2<f64>,
    pub floor_db: f64,
    /// Linear magnitude that maps to +1.
    pub reference: f64,
}

/// Log mapping relative to the grid's own maximum.
pub fn to_log_magnitude(g: &TfGrid, floor_db: f64) -> LogMagnitude {
    let reference = g.magnitude.iter().copied().fold(0.0, f64::max);
    log_magnitude_with_reference(&g.magnitude, reference, floor_db)
}

/// Log mapping relative to an externally chosen reference magnitude.
///
/// Training targets use the noisy grid's maximum so that the generator output
/// and the target share one scale.
pub fn log_magnitude_with_reference(
    magnitude: &Array2<f64>,
    reference: f64,
    floor_db: f64,
) -> LogMagnitude {
    let span = -floor_db;
    let values = if reference > 0.0 {
        magnitude.mapv(|m| {
            let db = if m > 0.0 {
                (20.0 * (m / reference).log10()).clamp(floor_db, 0.0)
            } else {
                floor_db
            };
            1.0 + 2.0 * db / span
        })
    } else {
        Array2::from_elem(magnitude.raw_dim(), -1.0)
    };
    LogMagnitude {
        values,
        floor_db,
        reference,
    }
}

/// Inverse of the log mapping; `recorded_max` is the reference magnitude.
pub fn from_log_magnitude(lm: &LogMagnitude, recorded_max: f64) -> Array2<f64> {
    if recorded_max <= 0.0 {
        return Array2::zeros(lm.values.raw_dim());
    }
    let span = -lm.floor_db;
    lm.values.mapv(|v| {
        let db = (v.clamp(-1.0, 1.0) - 1.0) * span / 2.0;
        recorded_max * 10f64.powf(db / 20.0)
    })
}
