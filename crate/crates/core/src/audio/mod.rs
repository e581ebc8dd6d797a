//! Audio file access and paired-corpus construction.

pub mod manifest;
pub mod mix;
pub mod wav;

pub use manifest::{build_manifest, DatasetManifest, ManifestError, ManifestRecord, Split, SplitRule};
pub use mix::{mix_at_snr, noise_gain, noise_offset, split_track, MixError, MixSpec};
pub use wav::{read_wav, write_wav, WavError};
