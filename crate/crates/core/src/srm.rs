//! Noise residuals from fixed rich-model (SRM) high-pass filters.
//!
//! The residual is `R = x - d(x)` for a denoiser `d`. The SRM kernels are
//! zero-sum high-pass filters, so the response is the residual itself and the
//! implied denoiser is `d(x) = x - SRM(x)`.
//!
//! Each output channel is one kernel applied to all three input channels and
//! summed across them. Filtering is cross-correlation with symmetric
//! (edge-repeating) boundary padding. Inputs are scaled to the 8-bit range
//! before filtering, and responses are truncated to `[-T, T]` and divided by
//! `T`, so the default output lies in `[-1, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};
use crate::image::Image;

pub const KERNEL_SIZE: usize = 5;
const PAD: usize = KERNEL_SIZE / 2;

/// A 5×5 integer kernel and the divisor that normalizes it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub name: &'static str,
    pub coefficients: [[i32; KERNEL_SIZE]; KERNEL_SIZE],
    pub normalizer: i32,
}

impl Kernel {
    /// Normalized coefficient at `(row, col)`.
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.coefficients[row][col] as f64 / self.normalizer as f64
    }

    pub fn coefficient_sum(&self) -> i32 {
        self.coefficients.iter().flatten().sum()
    }
}

/// The three fixed kernels used for the noise stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterBank {
    kernels: [Kernel; 3],
}

impl FilterBank {
    pub fn kernels(&self) -> &[Kernel; 3] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Conv weight of shape `[3, 3, 5, 5]`: output channel `k` applies
    /// kernel `k` identically to every input channel. Double precision.
    pub fn weight_tensor(&self) -> Tensor {
        let mut w = Vec::with_capacity(3 * 3 * KERNEL_SIZE * KERNEL_SIZE);
        for k in &self.kernels {
            for _ in 0..3 {
                for r in 0..KERNEL_SIZE {
                    for c in 0..KERNEL_SIZE {
                        w.push(k.value(r, c));
                    }
                }
            }
        }
        Tensor::from_slice(&w).view([3, 3, KERNEL_SIZE as i64, KERNEL_SIZE as i64])
    }
}

/// The standard three-kernel rich-model bank: the 5×5 "KV" kernel (/12), the
/// 3×3 square high-pass kernel (/4) and the horizontal second-difference
/// kernel (/2), the latter two zero-padded to 5×5.
pub fn srm_kernels() -> FilterBank {
    FilterBank {
        kernels: [
            Kernel {
                name: "kv",
                coefficients: [
                    [-1, 2, -2, 2, -1],
                    [2, -6, 8, -6, 2],
                    [-2, 8, -12, 8, -2],
                    [2, -6, 8, -6, 2],
                    [-1, 2, -2, 2, -1],
                ],
                normalizer: 12,
            },
            Kernel {
                name: "square3x3",
                coefficients: [
                    [0, 0, 0, 0, 0],
                    [0, -1, 2, -1, 0],
                    [0, 2, -4, 2, 0],
                    [0, -1, 2, -1, 0],
                    [0, 0, 0, 0, 0],
                ],
                normalizer: 4,
            },
            Kernel {
                name: "edge",
                coefficients: [
                    [0, 0, 0, 0, 0],
                    [0, 0, 0, 0, 0],
                    [0, 1, -2, 1, 0],
                    [0, 0, 0, 0, 0],
                    [0, 0, 0, 0, 0],
                ],
                normalizer: 2,
            },
        ],
    }
}

/// Scaling and truncation applied around the filters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrmConfig {
    /// Multiplier applied to `[0, 1]` inputs before filtering.
    pub input_scale: f32,
    /// Truncation threshold `T`; `None` returns the raw scaled response.
    pub truncation: Option<f32>,
}

impl Default for SrmConfig {
    fn default() -> Self {
        Self {
            input_scale: 255.0,
            truncation: Some(2.0),
        }
    }
}

impl SrmConfig {
    /// Plain linear filtering: no input scaling, no truncation.
    pub fn linear() -> Self {
        Self {
            input_scale: 1.0,
            truncation: None,
        }
    }

    fn finish(&self, v: f64) -> f32 {
        match self.truncation {
            Some(t) => {
                let t = t as f64;
                (v.clamp(-t, t) / t) as f32
            }
            None => v as f32,
        }
    }
}

/// `H×W×3` filter responses, one channel per kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseResidual {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl NoiseResidual {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * 3 + ch]
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Writes the residual as an RGB PNG with `[-1, 1]` mapped onto `[0, 255]`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Index into `0..n` after symmetric padding (`i = -1` maps to `0`).
#[inline]
fn symmetric_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    j as usize
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < KERNEL_SIZE || width < KERNEL_SIZE {
        return Err(Error::ImageTooSmall {
            height,
            width,
            min: KERNEL_SIZE,
        });
    }
    Ok(())
}

/// Residual with the default scaling and truncation.
pub fn noise_residual(x: &Image) -> Result<NoiseResidual> {
    noise_residual_with(x, &SrmConfig::default())
}

pub fn noise_residual_with(x: &Image, cfg: &SrmConfig) -> Result<NoiseResidual> {
    let (h, w) = x.dims();
    check_size(h, w)?;
    let bank = srm_kernels();
    let scale = cfg.input_scale as f64;
    let mut data = vec![0.0f32; h * w * 3];
    for row in 0..h {
        for col in 0..w {
            for (k, kernel) in bank.kernels.iter().enumerate() {
                let mut acc = 0.0f64;
                for dy in 0..KERNEL_SIZE {
                    let r = symmetric_index(row as isize + dy as isize - PAD as isize, h);
                    for dx in 0..KERNEL_SIZE {
                        let coef = kernel.coefficients[dy][dx];
                        if coef == 0 {
                            continue;
                        }
                        let c = symmetric_index(col as isize + dx as isize - PAD as isize, w);
                        let [a, b, d] = x.pixel(r, c);
                        acc += coef as f64 * (a as f64 + b as f64 + d as f64);
                    }
                }
                data[(row * w + col) * 3 + k] = cfg.finish(acc * scale / kernel.normalizer as f64);
            }
        }
    }
    Ok(NoiseResidual {
        height: h,
        width: w,
        data,
    })
}

fn symmetric_pad_indices(n: i64) -> Tensor {
    let idx: Vec<i64> = (-(PAD as isize)..n as isize + PAD as isize)
        .map(|i| symmetric_index(i, n as usize) as i64)
        .collect();
    Tensor::from_slice(&idx)
}

/// Batched residual of an `[N, 3, H, W]` tensor, returning `[N, 3, H, W]`.
/// Same arithmetic as [`noise_residual_with`], run through the tensor
/// backend so it can feed the detector directly.
pub fn residual_tensor(x: &Tensor, cfg: &SrmConfig) -> Result<Tensor> {
    let size = x.size();
    if size.len() != 4 || size[1] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected an [N, 3, H, W] tensor, got {size:?}"
        )));
    }
    check_size(size[2] as usize, size[3] as usize)?;
    let device = x.device();
    let kind = x.kind();
    let rows = symmetric_pad_indices(size[2]).to_device(device);
    let cols = symmetric_pad_indices(size[3]).to_device(device);
    let padded = x.index_select(2, &rows).index_select(3, &cols);
    // Accumulate in f64: with the 255 input scale, f32 sums leave residue
    // around 1e-5 on flat regions.
    let weight = srm_kernels()
        .weight_tensor()
        .to_device(device)
        .to_kind(Kind::Double);
    let scaled = padded.to_kind(Kind::Double) * cfg.input_scale as f64;
    let resp = scaled.conv2d::<Tensor>(&weight, None, [1, 1], [0, 0], [1, 1], 1);
    let out = match cfg.truncation {
        Some(t) => resp.clamp(-t as f64, t as f64) / t as f64,
        None => resp,
    };
    Ok(out.to_kind(kind))
}

impl NoiseResidual {
    /// Build from a `[1, 3, H, W]` or `[3, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.dim() == 4 {
            t.squeeze_dim(0)
        } else {
            t.shallow_clone()
        };
        let size = t.size();
        if size.len() != 3 || size[0] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected [3, H, W], got {size:?}"
            )));
        }
        let data = Vec::<f32>::try_from(
            t.permute([1, 2, 0])
                .contiguous()
                .to_kind(Kind::Float)
                .flatten(0, -1),
        )?;
        Ok(Self {
            height: size[1] as usize,
            width: size[2] as usize,
            data,
        })
    }
}
