//! End-to-end enhancement path: split, embed, enhance the log-magnitude,
//! invert with the noisy phase, trim and concatenate.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::audio::{mix_at_snr, noise_offset, read_wav, split_track, ManifestRecord, MixError, WavError};
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::inverse::{ls_istft, InverseError};
use crate::models::{CasNet, ModelError, ModelParams};
use crate::tfr::{
    from_log_magnitude, log_magnitude_with_reference, stft_embed, to_log_magnitude, LogMagnitude, StftConfig,
    TfrError, Waveform,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tfr(#[from] TfrError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error("{key}: {source}")]
    Mix { key: String, source: MixError },
}

/// Maps a log-magnitude grid to an enhanced one.
#[derive(Clone, Debug)]
pub enum Enhancer {
    /// Returns its input unchanged; isolates the analysis/synthesis path.
    PassThrough,
    Model { net: CasNet, params: ParamStore<f32> },
}

impl Enhancer {
    pub fn from_params(p: &ModelParams) -> Result<Self, ModelError> {
        Ok(Enhancer::Model {
            net: p.casnet()?,
            params: p.generator.clone(),
        })
    }

    pub fn enhance(&self, lm: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        let Enhancer::Model { net, params } = self else {
            return Ok(lm.clone());
        };
        let (h, w) = lm.dim();
        let x = Tensor::new(vec![1, 1, h, w], lm.iter().map(|&v| v as f32).collect())?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xv = tape.constant(x);
        let y = net.forward(&mut tape, &bound, xv)?;
        let data = tape.value(y).data().iter().map(|&v| f64::from(v)).collect();
        Ok(Array2::from_shape_vec((h, w), data).expect("generator preserves shape"))
    }
}

/// An enhancer together with the analysis settings it expects.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub enhancer: Enhancer,
    pub stft: StftConfig,
    pub floor_db: f64,
}

impl Denoiser {
    pub fn from_model(p: &ModelParams) -> Result<Self, ModelError> {
        Ok(Self {
            enhancer: Enhancer::from_params(p)?,
            stft: p.meta.stft,
            floor_db: p.meta.floor_db,
        })
    }

    pub fn pass_through(stft: StftConfig, floor_db: f64) -> Self {
        Self {
            enhancer: Enhancer::PassThrough,
            stft,
            floor_db,
        }
    }

    /// Enhances a track of any length; the output has the input's length.
    pub fn denoise(&self, noisy: &Waveform) -> Result<Waveform, PipelineError> {
        let mut out = Vec::with_capacity(noisy.len());
        for chunk in split_track(noisy, self.stft.max_track_len()) {
            let grid = stft_embed(&chunk, &self.stft)?;
            let lm = to_log_magnitude(&grid, self.floor_db);
            let enhanced = LogMagnitude {
                values: self.enhancer.enhance(&lm.values)?,
                ..lm
            };
            let magnitude = from_log_magnitude(&enhanced, enhanced.reference);
            let rebuilt = ls_istft(&magnitude, &grid.phase, grid.overlap, &self.stft)?;
            out.extend_from_slice(&rebuilt.samples()[..chunk.len()]);
        }
        Ok(Waveform::new(out, noisy.sample_rate())?)
    }
}

/// Training pair of log-magnitude grids, both on the noisy grid's scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPair {
    pub noisy: Array2<f64>,
    pub clean: Array2<f64>,
}

/// Embeds aligned clean and noisy tracks chunk by chunk.
pub fn grid_pairs(
    clean: &Waveform,
    noisy: &Waveform,
    stft: &StftConfig,
    floor_db: f64,
) -> Result<Vec<GridPair>, TfrError> {
    let max = stft.max_track_len();
    split_track(clean, max)
        .iter()
        .zip(split_track(noisy, max))
        .map(|(c, n)| {
            let ng = stft_embed(&n, stft)?;
            let cg = stft_embed(c, stft)?;
            let nlm = to_log_magnitude(&ng, floor_db);
            let clm = log_magnitude_with_reference(&cg.magnitude, nlm.reference, floor_db);
            Ok(GridPair {
                noisy: nlm.values,
                clean: clm.values,
            })
        })
        .collect()
}

/// Reads and caches the recordings referenced by a manifest.
#[derive(Default)]
pub struct TrackCache {
    tracks: HashMap<PathBuf, Waveform>,
}

impl TrackCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, path: &Path) -> Result<&Waveform, PipelineError> {
        if !self.tracks.contains_key(path) {
            let w = read_wav(path).map_err(|source| PipelineError::Wav {
                path: path.to_owned(),
                source,
            })?;
            self.tracks.insert(path.to_owned(), w);
        }
        Ok(&self.tracks[path])
    }

    /// Clean reference and noisy mixture for one manifest record.
    pub fn mix(&mut self, record: &ManifestRecord, seed: u64) -> Result<(Waveform, Waveform), PipelineError> {
        let clean = self.get(&record.clean)?.clone();
        let noise = self.get(&record.noise)?;
        let key = record.key();
        let offset = noise_offset(seed, &key, clean.len(), noise.len());
        let noisy = mix_at_snr(&clean, noise, record.snr_db, offset)
            .map_err(|source| PipelineError::Mix { key, source })?;
        Ok((clean, noisy))
    }
}
