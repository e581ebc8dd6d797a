//! Generator and discriminator topologies plus their parameter containers.

mod checkpoint;
mod discriminator;
mod generator;
mod layers;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use discriminator::{DiscOutput, PatchDiscConfig, PatchDiscriminator, PatchMode};
pub use generator::{CasNet, CasNetConfig, UBlock, UBlockConfig};
pub use layers::{ConvLayer, Init, Layout, Norm, ParamSpec, INIT_STD, LEAKY_SLOPE, NORM_EPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AdamState, ParamStore, TensorError};
use crate::tfr::{StftConfig, DEFAULT_FLOOR_DB};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Everything needed to rebuild the networks and the data pipeline they
/// were trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelMeta {
    pub generator: CasNetConfig,
    pub discriminator: PatchDiscConfig,
    pub stft: StftConfig,
    pub floor_db: f64,
    /// Completed training epochs.
    pub epoch: u32,
    pub seed: u64,
}

impl ModelMeta {
    /// Desk-scale defaults for a square grid of side `grid` (64 or 256).
    pub fn for_grid(grid: usize) -> Self {
        let depth = if grid >= 256 { 6 } else { 4 };
        Self {
            generator: CasNetConfig {
                n_blocks: 3,
                ublock: UBlockConfig {
                    depth,
                    ..UBlockConfig::default()
                },
            },
            discriminator: PatchDiscConfig::default(),
            stft: if grid == 256 {
                StftConfig::default()
            } else {
                StftConfig::square(grid)
            },
            floor_db: DEFAULT_FLOOR_DB,
            epoch: 0,
            seed: 0,
        }
    }

    /// Checks the grid against both networks' divisibility constraints.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.generator.ublock.validate()?;
        self.discriminator.validate()?;
        self.stft
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        let (h, w) = (self.stft.n_freq, self.stft.n_time);
        let m = 1usize << self.generator.ublock.depth;
        if h % m != 0 || w % m != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "grid {h}x{w} is not divisible by 2^{}",
                self.generator.ublock.depth
            )));
        }
        let p = self.discriminator.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "grid {h}x{w} is not divisible by the patch size {p}"
            )));
        }
        Ok(())
    }
}

/// Trained (or freshly initialised) weights of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub meta: ModelMeta,
    pub generator: ParamStore<f32>,
    pub discriminator: ParamStore<f32>,
    pub g_opt: Option<AdamState<f32>>,
    pub d_opt: Option<AdamState<f32>>,
}

impl ModelParams {
    /// Gaussian initialisation seeded by `meta.seed`.
    pub fn init(meta: ModelMeta) -> Result<Self, ModelError> {
        meta.validate()?;
        let g = CasNet::new(meta.generator)?;
        let d = PatchDiscriminator::new(meta.discriminator)?;
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        let generator = g.layout().init(&mut rng);
        let discriminator = d.layout().init(&mut rng);
        Ok(Self {
            meta,
            generator,
            discriminator,
            g_opt: None,
            d_opt: None,
        })
    }

    pub fn casnet(&self) -> Result<CasNet, ModelError> {
        CasNet::new(self.meta.generator)
    }

    pub fn patch_discriminator(&self) -> Result<PatchDiscriminator, ModelError> {
        PatchDiscriminator::new(self.meta.discriminator)
    }

    /// Confirms the stored tensors match the layouts implied by the metadata.
    pub fn check_layout(&self) -> Result<(), String> {
        let g = self.casnet().map_err(|e| e.to_string())?;
        let d = self.patch_discriminator().map_err(|e| e.to_string())?;
        g.layout().matches(&self.generator).map_err(|e| format!("generator: {e}"))?;
        d.layout()
            .matches(&self.discriminator)
            .map_err(|e| format!("discriminator: {e}"))
    }
}
