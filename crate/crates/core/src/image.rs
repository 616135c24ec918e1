//! RGB intensity images in `[0, 1]` and their 8-bit PNG persistence.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use tch::{Kind, Tensor};

use crate::error::{Error, Result};

/// An `H×W×3` image with intensities in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x3 image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * Self::CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * Self::CHANNELS + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * Self::CHANNELS + ch] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Snap every intensity onto the 8-bit grid `k / 255`.
    pub fn quantized(&self) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| quantize(v) as f32 / 255.0)
            .collect();
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            height: h as usize,
            width: w as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        ImageBuffer::<Rgb<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Load any image format `image` can decode, converted to 8-bit RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    /// `[1, 3, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        images_to_tensor(std::slice::from_ref(self))
    }

    /// Inverse of [`Image::to_tensor`] for a `[3, H, W]` or `[1, 3, H, W]`
    /// tensor. Values are clamped to `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.dim() {
            4 if t.size()[0] == 1 => t.squeeze_dim(0),
            3 => t.shallow_clone(),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "expected a [3, H, W] tensor, got {:?}",
                    t.size()
                )))
            }
        };
        let size = t.size();
        if size[0] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected 3 channels, got {:?}",
                size
            )));
        }
        let (h, w) = (size[1] as usize, size[2] as usize);
        let hwc = t
            .clamp(0.0, 1.0)
            .permute([1, 2, 0])
            .contiguous()
            .to_kind(Kind::Float);
        let data = Vec::<f32>::try_from(hwc.flatten(0, -1))?;
        Image::new(h, w, data)
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stack images into an `[N, 3, H, W]` float tensor. All images must share
/// one size; callers validate this beforehand.
pub fn images_to_tensor(images: &[Image]) -> Tensor {
    let (h, w) = images[0].dims();
    let mut flat = Vec::with_capacity(images.len() * h * w * 3);
    for img in images {
        debug_assert_eq!(img.dims(), (h, w));
        flat.extend_from_slice(&img.data);
    }
    Tensor::from_slice(&flat)
        .view([images.len() as i64, h as i64, w as i64, 3])
        .permute([0, 3, 1, 2])
        .contiguous()
}

/// Check that every image has the same size and return it.
pub fn common_size(images: &[Image]) -> Result<(usize, usize)> {
    let first = images.first().ok_or(Error::EmptyDataset)?.dims();
    if let Some((i, img)) = images.iter().enumerate().find(|(_, m)| m.dims() != first) {
        return Err(Error::ShapeMismatch(format!(
            "image {i} is {}x{}, expected {}x{}",
            img.height, img.width, first.0, first.1
        )));
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_keeps_layout() {
        let data: Vec<f32> = (0..4 * 5 * 3).map(|i| i as f32 / 60.0).collect();
        let img = Image::new(4, 5, data).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.size(), vec![1, 3, 4, 5]);
        assert_eq!(t.double_value(&[0, 2, 1, 3]), img.get(1, 3, 2) as f64);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let data: Vec<f32> = (0..8 * 8 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = Image::new(8, 8, data).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), img);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(matches!(
            Image::new(2, 2, vec![0.0; 11]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn mixed_sizes_are_reported() {
        let imgs = vec![Image::filled(4, 4, 0.0), Image::filled(4, 5, 0.0)];
        assert!(matches!(common_size(&imgs), Err(Error::ShapeMismatch(_))));
        assert!(matches!(common_size(&[]), Err(Error::EmptyDataset)));
    }
}
