//! SNR-controlled mixing of clean speech with background noise.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tfr::{mean_square, Waveform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("clean track is silent")]
    ZeroClean,
    #[error("noise segment is silent")]
    ZeroNoise,
    #[error("noise has {noise} samples but {needed} are required")]
    NoiseTooShort { noise: usize, needed: usize },
    #[error("target SNR {0} dB is not finite")]
    NonFiniteSnr(f64),
}

/// One clean/noise pairing to be mixed at a target SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    /// Seeds the noise offset.
    pub seed: u64,
}

/// Gain applied to `noise` so that whole-track power ratio equals `snr_db`.
pub fn noise_gain(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<f64, MixError> {
    if !snr_db.is_finite() {
        return Err(MixError::NonFiniteSnr(snr_db));
    }
    let p_clean = mean_square(clean);
    if p_clean == 0.0 {
        return Err(MixError::ZeroClean);
    }
    let p_noise = mean_square(noise);
    if p_noise == 0.0 {
        return Err(MixError::ZeroNoise);
    }
    Ok((p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `clean + g·noise[offset..offset+len]` at the requested whole-track SNR.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Waveform, MixError> {
    let needed = clean.len() + offset;
    if noise.len() < needed {
        return Err(MixError::NoiseTooShort {
            noise: noise.len(),
            needed,
        });
    }
    let segment = &noise.samples()[offset..needed];
    let g = noise_gain(clean.samples(), segment, snr_db)?;
    let mixed = clean
        .samples()
        .iter()
        .zip(segment)
        .map(|(c, n)| c + g * n)
        .collect();
    Ok(Waveform::new(mixed, clean.sample_rate()).expect("same rate and length as clean"))
}

/// Seeded offset in `[0, noise_len − clean_len]` for one mix.
///
/// The offset is a pure function of `seed` and `key`, so each manifest
/// record keeps its noise segment regardless of record order.
pub fn noise_offset(seed: u64, key: &str, clean_len: usize, noise_len: usize) -> usize {
    let Some(slack) = noise_len.checked_sub(clean_len) else {
        return 0;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key.as_bytes()));
    rng.random_range(0..=slack)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Consecutive non-overlapping chunks of at most `max_len` samples.
pub fn split_track(w: &Waveform, max_len: usize) -> Vec<Waveform> {
    assert!(max_len > 0, "chunk length must be positive");
    w.samples()
        .chunks(max_len)
        .map(|c| Waveform::new(c.to_vec(), w.sample_rate()).expect("non-empty chunk"))
        .collect()
}
