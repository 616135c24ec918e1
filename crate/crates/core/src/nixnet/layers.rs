use tch::nn::{self, ModuleT};
use tch::Tensor;

use super::{check_input_size, FeaturePyramid, LEVEL_CHANNELS};
use crate::error::Result;

pub(crate) fn conv(
    p: nn::Path,
    cin: i64,
    cout: i64,
    k: i64,
    stride: i64,
    bias: bool,
) -> nn::Conv2D {
    nn::conv2d(
        p,
        cin,
        cout,
        k,
        nn::ConvConfig {
            stride,
            padding: k / 2,
            bias,
            ws_init: nn::init::DEFAULT_KAIMING_NORMAL,
            ..Default::default()
        },
    )
}

pub(crate) fn bn(p: nn::Path, c: i64) -> nn::BatchNorm {
    nn::batch_norm2d(p, c, Default::default())
}

/// Pre-activation residual unit: `BN-ReLU-conv3×3-BN-ReLU-conv3×3` plus a
/// shortcut. The second conv carries the stride; the shortcut is a strided
/// 1×1 projection whenever the shape changes.
#[derive(Debug)]
pub struct PreActUnit {
    bn1: nn::BatchNorm,
    conv1: nn::Conv2D,
    bn2: nn::BatchNorm,
    conv2: nn::Conv2D,
    proj: Option<nn::Conv2D>,
}

impl PreActUnit {
    pub fn new(p: nn::Path, cin: i64, cout: i64, stride: i64) -> Self {
        let proj =
            (cin != cout || stride != 1).then(|| conv(&p / "proj", cin, cout, 1, stride, false));
        Self {
            bn1: bn(&p / "bn1", cin),
            conv1: conv(&p / "conv1", cin, cout, 3, 1, false),
            bn2: bn(&p / "bn2", cout),
            conv2: conv(&p / "conv2", cout, cout, 3, stride, false),
            proj,
        }
    }
}

impl ModuleT for PreActUnit {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        let h = xs
            .apply_t(&self.bn1, train)
            .relu()
            .apply(&self.conv1)
            .apply_t(&self.bn2, train)
            .relu()
            .apply(&self.conv2);
        match &self.proj {
            Some(p) => h + xs.apply(p),
            None => h + xs,
        }
    }
}

/// Two `conv3×3-BN-ReLU` layers.
#[derive(Debug)]
pub struct ConvBlock {
    conv1: nn::Conv2D,
    bn1: nn::BatchNorm,
    conv2: nn::Conv2D,
    bn2: nn::BatchNorm,
}

impl ConvBlock {
    pub fn new(p: nn::Path, cin: i64, cout: i64) -> Self {
        Self {
            conv1: conv(&p / "conv1", cin, cout, 3, 1, false),
            bn1: bn(&p / "bn1", cout),
            conv2: conv(&p / "conv2", cout, cout, 3, 1, false),
            bn2: bn(&p / "bn2", cout),
        }
    }
}

impl ModuleT for ConvBlock {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Tensor {
        xs.apply(&self.conv1)
            .apply_t(&self.bn1, train)
            .relu()
            .apply(&self.conv2)
            .apply_t(&self.bn2, train)
            .relu()
    }
}

/// Width of the stem conv applied to the raw 3-channel input.
pub const STEM_CHANNELS: i64 = 64;

/// One feature extraction stream: a stem conv followed by three ResNet
/// blocks of two pre-activation units each, producing maps at 1/2, 1/4 and
/// 1/8 of the input size with 128, 256 and 512 channels.
#[derive(Debug)]
pub struct FeatureExtractor {
    stem: nn::Conv2D,
    blocks: Vec<[PreActUnit; 2]>,
}

impl FeatureExtractor {
    pub fn new(p: nn::Path) -> Self {
        let stem = conv(&p / "stem", 3, STEM_CHANNELS, 3, 1, false);
        let mut cin = STEM_CHANNELS;
        let blocks = LEVEL_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let bp = &p / format!("block{}", i + 1);
                let units = [
                    PreActUnit::new(&bp / "unit1", cin, c, 1),
                    PreActUnit::new(&bp / "unit2", c, c, 2),
                ];
                cin = c;
                units
            })
            .collect();
        Self { stem, blocks }
    }

    /// Path of the first convolution, whose parameters see the raw input.
    pub const FIRST_LAYER: &'static str = "stem.weight";

    pub fn forward_t(&self, xs: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let size = xs.size();
        check_input_size(size[2] as usize, size[3] as usize)?;
        let mut h = xs.apply(&self.stem);
        let mut levels = Vec::with_capacity(3);
        for [u1, u2] in &self.blocks {
            h = h.apply_t(u1, train).apply_t(u2, train);
            levels.push(h.shallow_clone());
        }
        Ok(FeaturePyramid::from_vec(levels))
    }
}
