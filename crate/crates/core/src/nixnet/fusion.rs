use tch::nn;
use tch::Tensor;

use super::layers::{bn, conv, ConvBlock};
use super::{FeaturePyramid, LEVEL_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Transform {
    /// Coarser to finer: 1×1 conv + BN, then bilinear upsampling. The 1×1
    /// conv commutes with bilinear interpolation, so it runs at the source
    /// resolution.
    Up { conv: nn::Conv2D, bn: nn::BatchNorm },
    /// Finer to coarser: one stride-2 3×3 conv + BN per halving.
    Down {
        steps: Vec<(nn::Conv2D, nn::BatchNorm)>,
    },
}

impl Transform {
    fn apply(&self, xs: &Tensor, target: &[i64], train: bool) -> Tensor {
        match self {
            Transform::Up { conv, bn } => xs.apply(conv).apply_t(bn, train).upsample_bilinear2d(
                [target[2], target[3]],
                false,
                None,
                None,
            ),
            Transform::Down { steps } => steps
                .iter()
                .fold(xs.shallow_clone(), |h, (c, b)| h.apply(c).apply_t(b, train)),
        }
    }
}

/// Multi-scale exchange unit: output level `s` is
/// `ReLU(Σ_r T_{r→s}(level r))` with `T` the identity for `r = s`.
#[derive(Debug)]
pub struct FusionModule {
    /// `transforms[target][source]`, `None` on the diagonal.
    transforms: Vec<Vec<Option<Transform>>>,
}

impl FusionModule {
    pub fn new(p: nn::Path) -> Self {
        let n = LEVEL_CHANNELS.len();
        let transforms = (0..n)
            .map(|s| {
                (0..n)
                    .map(|r| {
                        let tp = &p / format!("{r}to{s}");
                        let (cr, cs) = (LEVEL_CHANNELS[r], LEVEL_CHANNELS[s]);
                        match r.cmp(&s) {
                            std::cmp::Ordering::Equal => None,
                            std::cmp::Ordering::Greater => Some(Transform::Up {
                                conv: conv(&tp / "conv", cr, cs, 1, 1, false),
                                bn: bn(&tp / "bn", cs),
                            }),
                            std::cmp::Ordering::Less => {
                                let halvings = s - r;
                                let steps = (0..halvings)
                                    .map(|k| {
                                        let cout = if k + 1 == halvings { cs } else { cr };
                                        (
                                            conv(&tp / format!("conv{k}"), cr, cout, 3, 2, false),
                                            bn(&tp / format!("bn{k}"), cout),
                                        )
                                    })
                                    .collect();
                                Some(Transform::Down { steps })
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        Self { transforms }
    }

    pub fn forward_t(&self, p: &FeaturePyramid, train: bool) -> FeaturePyramid {
        let levels = self
            .transforms
            .iter()
            .enumerate()
            .map(|(s, row)| {
                let target = p.levels[s].size();
                row.iter()
                    .enumerate()
                    .map(|(r, t)| match t {
                        None => p.levels[r].shallow_clone(),
                        Some(t) => t.apply(&p.levels[r], &target, train),
                    })
                    .reduce(|a, b| a + b)
                    .expect("three levels")
                    .relu()
            })
            .collect();
        FeaturePyramid::from_vec(levels)
    }
}

/// Per-level channel concatenation of the image and noise pyramids followed
/// by a Conv block back to the level width.
#[derive(Debug)]
pub struct CrossConcat {
    blocks: Vec<ConvBlock>,
}

impl CrossConcat {
    pub fn new(p: nn::Path) -> Self {
        let blocks = LEVEL_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| ConvBlock::new(&p / format!("level{}", i + 1), 2 * c, c))
            .collect();
        Self { blocks }
    }

    pub fn forward_t(
        &self,
        image: &FeaturePyramid,
        noise: &FeaturePyramid,
        train: bool,
    ) -> Result<FeaturePyramid> {
        for (i, (a, b)) in image.levels.iter().zip(&noise.levels).enumerate() {
            if a.size() != b.size() {
                return Err(Error::ShapeMismatch(format!(
                    "level {} of the image pyramid is {:?}, noise pyramid is {:?}",
                    i + 1,
                    a.size(),
                    b.size()
                )));
            }
        }
        let levels = self
            .blocks
            .iter()
            .zip(image.levels.iter().zip(&noise.levels))
            .map(|(block, (a, b))| Tensor::cat(&[a, b], 1).apply_t(block, train))
            .collect();
        Ok(FeaturePyramid::from_vec(levels))
    }
}
