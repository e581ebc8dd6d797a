//! U-block encoder-decoder and the cascaded generator built from it.

use crate::autodiff::{Bound, Real, Tape, Var};

use super::layers::{ConvLayer, Layout, Norm, LEAKY_SLOPE};
use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct UBlockConfig {
    /// Number of stride-2 encoder stages.
    pub depth: usize,
    pub base_channels: usize,
    pub norm: Norm,
}

impl Default for UBlockConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            norm: Norm::Instance,
        }
    }
}

impl UBlockConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "U-block depth {} is below 2",
                self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(ModelError::InvalidConfig("base_channels must be positive".into()));
        }
        Ok(())
    }

    /// Channel width of encoder stage `k`, doubling up to 8× the base.
    pub fn channels(&self, k: usize) -> usize {
        self.base_channels << k.min(3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CasNetConfig {
    pub n_blocks: usize,
    pub ublock: UBlockConfig,
}

impl Default for CasNetConfig {
    fn default() -> Self {
        Self {
            n_blocks: 3,
            ublock: UBlockConfig::default(),
        }
    }
}

/// One encoder-decoder with mirror-level skip connections.
///
/// Encoder stages are 4×4 stride-2 convolutions followed by leaky ReLU, the
/// decoder mirrors them with 4×4 stride-2 transposed convolutions after ReLU,
/// and the output passes through tanh. The outermost and innermost encoder
/// stages are not normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct UBlock {
    cfg: UBlockConfig,
    enc: Vec<ConvLayer>,
    /// `dec[k]` produces the resolution of encoder stage `k − 1` (the input
    /// for `k = 0`).
    dec: Vec<ConvLayer>,
}

impl UBlock {
    pub(crate) fn build(cfg: UBlockConfig, prefix: &str, layout: &mut Layout) -> Self {
        let d = cfg.depth;
        let ch = |k| cfg.channels(k);
        let enc = (0..d)
            .map(|k| {
                let cin = if k == 0 { 1 } else { ch(k - 1) };
                layout.conv(&format!("{prefix}enc{k}"), cin, ch(k), 4, 2, 1)
            })
            .collect();
        let dec = (0..d)
            .map(|k| {
                let cin = if k == d - 1 { ch(k) } else { 2 * ch(k) };
                let cout = if k == 0 { 1 } else { ch(k - 1) };
                layout.conv_transpose(&format!("{prefix}dec{k}"), cin, cout, 4, 2, 1)
            })
            .collect();
        Self { cfg, enc, dec }
    }

    pub fn config(&self) -> &UBlockConfig {
        &self.cfg
    }

    /// Final transposed convolution, the one feeding tanh.
    pub fn output_layer(&self) -> &ConvLayer {
        &self.dec[0]
    }

    pub fn first_layer(&self) -> &ConvLayer {
        &self.enc[0]
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var, ModelError> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        let m = 1usize << self.cfg.depth;
        if c != 1 || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "U-block of depth {} needs a 1-channel input with sides divisible by {m}, got {:?}",
                self.cfg.depth,
                tape.shape(x)
            )));
        }
        let d = self.cfg.depth;
        let slope = T::from_f64(LEAKY_SLOPE);
        let mut skips = Vec::with_capacity(d);
        let mut h = self.enc[0].apply(tape, params, x)?;
        skips.push(h);
        for k in 1..d {
            let a = tape.leaky_relu(h, slope);
            h = self.enc[k].apply(tape, params, a)?;
            if k < d - 1 {
                h = self.cfg.norm.apply(tape, h)?;
            }
            skips.push(h);
        }
        let mut u = skips[d - 1];
        for k in (0..d).rev() {
            let input = if k == d - 1 {
                u
            } else {
                tape.concat_channels(u, skips[k])?
            };
            let a = tape.relu(input);
            u = self.dec[k].apply(tape, params, a)?;
            if k > 0 {
                u = self.cfg.norm.apply(tape, u)?;
            }
        }
        Ok(tape.tanh(u))
    }
}

/// Chain of U-blocks, each refining the previous block's output.
#[derive(Clone, Debug, PartialEq)]
pub struct CasNet {
    cfg: CasNetConfig,
    blocks: Vec<UBlock>,
    layout: Layout,
}

impl CasNet {
    pub fn new(cfg: CasNetConfig) -> Result<Self, ModelError> {
        cfg.ublock.validate()?;
        if cfg.n_blocks == 0 {
            return Err(ModelError::InvalidConfig("CasNet needs at least one block".into()));
        }
        let mut layout = Layout::default();
        let blocks = (0..cfg.n_blocks)
            .map(|i| UBlock::build(cfg.ublock, &format!("block{i}."), &mut layout))
            .collect();
        Ok(Self {
            cfg,
            blocks,
            layout,
        })
    }

    pub fn config(&self) -> &CasNetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn blocks(&self) -> &[UBlock] {
        &self.blocks
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var, ModelError> {
        self.blocks
            .iter()
            .try_fold(x, |h, block| block.forward(tape, params, h))
    }
}
