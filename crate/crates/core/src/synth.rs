//! Synthetic speech-like tracks and colored noise for smoke-scale training.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{write_wav, DatasetManifest, ManifestRecord, Split, WavError};
use crate::tfr::{Waveform, SAMPLE_RATE};

/// Spectral tilt of generated noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseColor {
    White,
    /// −3 dB per octave.
    Pink,
    /// −6 dB per octave.
    Brown,
}

impl NoiseColor {
    pub fn name(self) -> &'static str {
        match self {
            NoiseColor::White => "white",
            NoiseColor::Pink => "pink",
            NoiseColor::Brown => "brown",
        }
    }
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Stationary noise of `len` samples at RMS 0.1.
pub fn colored_noise<R: Rng>(rng: &mut R, len: usize, color: NoiseColor) -> Vec<f64> {
    let mut white = || -> f64 { StandardNormal.sample(&mut *rng) };
    let mut out: Vec<f64> = match color {
        NoiseColor::White => (0..len).map(|_| white()).collect(),
        NoiseColor::Pink => {
            // Paul Kellet's economy pinking filter.
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..len)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseColor::Brown => {
            let mut acc = 0.0;
            (0..len)
                .map(|_| {
                    acc = 0.995 * acc + white();
                    acc
                })
                .collect()
        }
    };
    normalize_rms(&mut out, 0.1);
    out
}

/// Voiced syllables over a fundamental near `f0`, separated by short pauses.
///
/// Each syllable is a harmonic series shaped by two formant bumps and a
/// raised-cosine envelope, which gives STOI's band envelopes something to
/// track.
pub fn speech_like<R: Rng>(rng: &mut R, len: usize, f0: f64) -> Vec<f64> {
    let fs = f64::from(SAMPLE_RATE);
    let mut out = vec![0.0; len];
    let mut pos = rng.random_range(0..800);
    while pos < len {
        let syl = rng.random_range(1600..4000);
        let end = (pos + syl).min(len);
        let f1 = rng.random_range(350.0..850.0);
        let f2 = rng.random_range(1000.0..2400.0);
        let pitch = f0 * rng.random_range(0.9..1.1);
        let glide = rng.random_range(-0.15..0.15);
        let amp = rng.random_range(0.5..1.0);
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        let n = end - pos;
        for (i, o) in out[pos..end].iter_mut().enumerate() {
            let t = i as f64 / fs;
            let frac = i as f64 / n as f64;
            let env = 0.5 - 0.5 * (2.0 * PI * frac).cos();
            let f = pitch * (1.0 + glide * frac);
            let mut s = 0.0;
            let mut h = 1;
            while f * h as f64 <= 4000.0 {
                let fh = f * h as f64;
                let g = (-((fh - f1) / 180.0).powi(2)).exp() + 0.6 * (-((fh - f2) / 260.0).powi(2)).exp() + 0.02;
                s += g * (2.0 * PI * fh * t + phase0 * h as f64).sin();
                h += 1;
            }
            *o = amp * env * s;
        }
        pos = end + rng.random_range(400..2400);
    }
    normalize_rms(&mut out, 0.1);
    out
}

/// Shape of a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpusConfig {
    pub n_tracks: usize,
    pub track_len: usize,
    pub n_speakers: usize,
    /// Speakers whose tracks form the test split.
    pub n_test_speakers: usize,
    pub noise_colors: Vec<NoiseColor>,
    pub noise_len: usize,
    pub snrs: Vec<f64>,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_tracks: 200,
            track_len: 8000,
            n_speakers: 10,
            n_test_speakers: 2,
            noise_colors: vec![NoiseColor::Pink, NoiseColor::Brown],
            noise_len: 4 * 16_000,
            snrs: vec![0.0, 5.0, 10.0],
            seed: 0,
        }
    }
}

fn io_to_wav(e: io::Error) -> WavError {
    WavError::Io(e)
}

/// Writes `clean/spkNN/trackNNNN.wav` and `noise/<color>.wav` under `root`
/// and returns a manifest with one record per clean track.
///
/// Record `i` cycles through the noise colors and SNRs so that every
/// condition is represented; the last `n_test_speakers` speakers are held out.
pub fn write_toy_corpus(root: &Path, cfg: &ToyCorpusConfig) -> Result<DatasetManifest, WavError> {
    assert!(cfg.n_speakers > cfg.n_test_speakers && !cfg.noise_colors.is_empty() && !cfg.snrs.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise_dir = root.join("noise");
    fs::create_dir_all(&noise_dir).map_err(io_to_wav)?;
    let mut noise_paths: Vec<PathBuf> = Vec::new();
    for &c in &cfg.noise_colors {
        let path = noise_dir.join(format!("{}.wav", c.name()));
        write_wav(&path, &Waveform::from_samples(colored_noise(&mut rng, cfg.noise_len, c)).expect("non-empty"))?;
        noise_paths.push(path);
    }
    let f0s: Vec<f64> = (0..cfg.n_speakers).map(|_| rng.random_range(95.0..240.0)).collect();
    let mut records = Vec::with_capacity(cfg.n_tracks);
    for i in 0..cfg.n_tracks {
        let spk = i % cfg.n_speakers;
        let dir = root.join("clean").join(format!("spk{spk:02}"));
        fs::create_dir_all(&dir).map_err(io_to_wav)?;
        let path = dir.join(format!("track{i:04}.wav"));
        let x = speech_like(&mut rng, cfg.track_len, f0s[spk]);
        write_wav(&path, &Waveform::from_samples(x).expect("non-empty"))?;
        records.push(ManifestRecord {
            clean: path,
            noise: noise_paths[i % noise_paths.len()].clone(),
            snr_db: cfg.snrs[(i / noise_paths.len()) % cfg.snrs.len()],
            split: if spk >= cfg.n_speakers - cfg.n_test_speakers {
                Split::Test
            } else {
                Split::Train
            },
        });
    }
    Ok(DatasetManifest::new(records))
}
