//! Conditional patch discriminator.
//!
//! The candidate and the noisy condition are stacked as two channels and
//! pushed through `log2(patch_size)` stride-2 convolutions, so every cell of
//! the final score map summarises one `patch_size`-wide region. Cell scores
//! go through a sigmoid and are averaged into one scalar.

use crate::autodiff::{Bound, Real, Tape, Var};

use super::layers::{ConvLayer, Layout, Norm, LEAKY_SLOPE};
use super::ModelError;

/// How a score-map cell relates to its input region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchMode {
    /// 4×4 stride-2 convolutions with padding; neighbouring cells overlap at
    /// their borders, the usual patch-discriminator construction.
    Receptive,
    /// 2×2 stride-2 convolutions without padding; each cell sees exactly its
    /// own tile and nothing else.
    Tiled,
}

impl PatchMode {
    pub fn name(self) -> &'static str {
        match self {
            PatchMode::Receptive => "receptive",
            PatchMode::Tiled => "tiled",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "receptive" => Some(PatchMode::Receptive),
            "tiled" => Some(PatchMode::Tiled),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchDiscConfig {
    pub patch_size: usize,
    pub base_channels: usize,
    /// Number of feature layers, `log2(patch_size)`.
    pub n_feature_layers: usize,
    pub norm: Norm,
    pub mode: PatchMode,
}

impl Default for PatchDiscConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            base_channels: 16,
            n_feature_layers: 4,
            norm: Norm::Instance,
            mode: PatchMode::Receptive,
        }
    }
}

impl PatchDiscConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.patch_size.is_power_of_two() || self.patch_size < 4 {
            return Err(ModelError::InvalidConfig(format!(
                "patch size {} must be a power of two ≥ 4",
                self.patch_size
            )));
        }
        let stages = self.patch_size.trailing_zeros() as usize;
        if self.n_feature_layers != stages {
            return Err(ModelError::InvalidConfig(format!(
                "patch size {} needs {stages} feature layers, got {}",
                self.patch_size, self.n_feature_layers
            )));
        }
        if self.base_channels == 0 {
            return Err(ModelError::InvalidConfig("base_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << k.min(3)
    }
}

/// Forward results: mean score, the per-patch score map and the feature maps.
#[derive(Clone, Debug)]
pub struct DiscOutput {
    pub score: Var,
    pub patch_scores: Var,
    pub features: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator {
    cfg: PatchDiscConfig,
    layers: Vec<ConvLayer>,
    head: ConvLayer,
    layout: Layout,
}

impl PatchDiscriminator {
    pub fn new(cfg: PatchDiscConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let (kernel, pad) = match cfg.mode {
            PatchMode::Receptive => (4, 1),
            PatchMode::Tiled => (2, 0),
        };
        let mut layout = Layout::default();
        let layers = (0..cfg.n_feature_layers)
            .map(|k| {
                let cin = if k == 0 { 2 } else { cfg.channels(k - 1) };
                layout.conv(&format!("conv{k}"), cin, cfg.channels(k), kernel, 2, pad)
            })
            .collect();
        let head = layout.conv("score", cfg.channels(cfg.n_feature_layers - 1), 1, 1, 1, 0);
        Ok(Self {
            cfg,
            layers,
            head,
            layout,
        })
    }

    pub fn config(&self) -> &PatchDiscConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// The 1×1 convolution producing patch logits.
    pub fn head(&self) -> &ConvLayer {
        &self.head
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        candidate: Var,
        condition: Var,
    ) -> Result<DiscOutput, ModelError> {
        let (n, c, h, w) = tape.value(candidate).dims4()?;
        let p = self.cfg.patch_size;
        if tape.shape(condition) != [n, c, h, w] || c != 1 || h % p != 0 || w % p != 0 || h == 0 || w == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "discriminator needs matching 1-channel inputs with sides divisible by {p}, got {:?} and {:?}",
                tape.shape(candidate),
                tape.shape(condition)
            )));
        }
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut x = tape.concat_channels(candidate, condition)?;
        let mut features = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.apply(tape, params, x)?;
            if k > 0 {
                x = self.cfg.norm.apply(tape, x)?;
            }
            x = tape.leaky_relu(x, slope);
            features.push(x);
        }
        let logits = self.head.apply(tape, params, x)?;
        let patch_scores = tape.sigmoid(logits);
        let score = tape.mean(patch_scores);
        Ok(DiscOutput {
            score,
            patch_scores,
            features,
        })
    }
}
