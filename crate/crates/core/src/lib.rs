//! Spectrogram-domain speech enhancement with a conditional GAN.
//!
//! Tracks are embedded into fixed-size log-magnitude grids by a short-time
//! Fourier transform whose frame overlap adapts to the track length, a
//! cascaded encoder-decoder generator cleans the grid, and the waveform is
//! rebuilt from the enhanced magnitude and the noisy phase.

pub mod audio;
pub mod autodiff;
pub mod inverse;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod tfr;
pub mod train;

pub use audio::{DatasetManifest, ManifestRecord, Split, SplitRule};
pub use inverse::{interior_sdr, ls_istft, sdr, InverseError};
pub use metrics::{evaluate, segmental_snr, stoi, EvalOptions, MetricReport};
pub use models::{load_checkpoint, save_checkpoint, ModelMeta, ModelParams};
pub use pipeline::{Denoiser, Enhancer};
pub use tfr::{stft_embed, StftConfig, TfGrid, Waveform, SAMPLE_RATE};
pub use train::{train, LossWeights, TrainConfig, TrainError};
