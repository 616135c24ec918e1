use tch::nn;
use tch::Tensor;

use super::layers::{conv, ConvBlock};
use super::{FeaturePyramid, LEVEL_CHANNELS};

/// Upsamples levels 2 and 3 to level-1 resolution, concatenates all three
/// (896 channels), applies a Conv block, upsamples ×2 to the input size and
/// projects to one channel.
#[derive(Debug)]
pub struct MaskHead {
    block: ConvBlock,
    out: nn::Conv2D,
}

impl MaskHead {
    pub fn new(p: nn::Path, head_channels: i64) -> Self {
        let cin: i64 = LEVEL_CHANNELS.iter().sum();
        Self {
            block: ConvBlock::new(&p / "block", cin, head_channels),
            out: conv(&p / "out", head_channels, 1, 1, 1, true),
        }
    }

    /// Pre-sigmoid scores of shape `[N, 1, height, width]`.
    pub fn logits_t(&self, p: &FeaturePyramid, height: i64, width: i64, train: bool) -> Tensor {
        let l1 = &p.levels[0];
        let size = l1.size();
        let (h1, w1) = (size[2], size[3]);
        let up = |t: &Tensor| t.upsample_bilinear2d([h1, w1], false, None, None);
        Tensor::cat(&[l1.shallow_clone(), up(&p.levels[1]), up(&p.levels[2])], 1)
            .apply_t(&self.block, train)
            .upsample_bilinear2d([height, width], false, None, None)
            .apply(&self.out)
    }

    /// Per-pixel probabilities in `[0, 1]`.
    pub fn forward_t(&self, p: &FeaturePyramid, height: i64, width: i64, train: bool) -> Tensor {
        self.logits_t(p, height, width, train).sigmoid()
    }
}
