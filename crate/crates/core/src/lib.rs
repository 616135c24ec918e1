//! Universal deep-inpainting detection.
//!
//! The pipeline has three stages:
//!
//! 1. [`simulate`] trains an autoencoder adversarially and composites its
//!    reconstructions into real images under random free-form masks
//!    ([`maskgen`]). The resulting dataset carries the noise discrepancy
//!    between real and generated content without using any particular
//!    inpainting method.
//! 2. [`nixnet`] is a two-stream detector over the image and its SRM noise
//!    residual ([`srm`]) with multi-scale cross fusion, trained by
//!    [`train`] with the focal loss.
//! 3. [`metrics`] scores binarized predictions by mean IoU.
//!
//! Masks use `1 = inpainted` throughout.

pub mod checkpoint;
pub mod error;
pub mod image;
pub mod maskgen;
pub mod metrics;
pub mod nixnet;
pub mod params;
pub mod simulate;
pub mod srm;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;
pub use maskgen::{BinaryMask, MaskParams};
pub use metrics::EvalResult;
pub use nixnet::{NixNet, NixNetConfig, ProbabilityMap, Variant};

/// Locate inpainted regions: the probability map and its 0.5 binarization.
///
/// Images whose sides are not multiples of 8 (or are below the detector's
/// minimum) are mirror-padded on the bottom and right, and the prediction is
/// cropped back to the input size.
pub fn detect(net: &NixNet, x: &Image) -> Result<(ProbabilityMap, BinaryMask)> {
    let (h, w) = x.dims();
    let valid = |n: usize| n.max(nixnet::MIN_INPUT_SIDE).div_ceil(8) * 8;
    let (ph, pw) = (valid(h), valid(w));
    let p = if (ph, pw) == (h, w) {
        net.forward(x)?
    } else {
        let padded = mirror_pad(x, ph, pw)?;
        let full = net.forward(&padded)?;
        let data = (0..h)
            .flat_map(|r| full.data()[r * pw..r * pw + w].iter().copied())
            .collect();
        ProbabilityMap::new(h, w, data)?
    };
    let m = metrics::binarize(&p, metrics::DEFAULT_THRESHOLD);
    Ok((p, m))
}

fn mirror_pad(x: &Image, height: usize, width: usize) -> Result<Image> {
    let (h, w) = x.dims();
    if h < srm::KERNEL_SIZE || w < srm::KERNEL_SIZE {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: srm::KERNEL_SIZE,
        });
    }
    // Reflection repeated with period 2n.
    let mirror = |i: usize, n: usize| {
        let j = i % (2 * n);
        if j < n {
            j
        } else {
            2 * n - 1 - j
        }
    };
    let mut out = Image::filled(height, width, 0.0);
    for r in 0..height {
        for c in 0..width {
            let (sr, sc) = (mirror(r, h), mirror(c, w));
            for ch in 0..3 {
                out.set(r, c, ch, x.get(sr, sc, ch));
            }
        }
    }
    Ok(out)
}

/// Compute backend facts recorded in run reports.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackendInfo {
    pub library: String,
    pub device: String,
    pub threads: i64,
    /// Whether reruns with the same seed, config and thread count reproduce
    /// results bit for bit.
    pub deterministic: bool,
    pub note: String,
}

pub fn backend_info() -> BackendInfo {
    BackendInfo {
        library: "libtorch (tch)".into(),
        device: "cpu".into(),
        threads: tch::get_num_threads() as i64,
        deterministic: true,
        note: "CPU kernels are deterministic for a fixed thread count; a different thread count may change float summation order".into(),
    }
}
