//! Free-form irregular masks: seeded random brush strokes at random
//! locations.
//!
//! Masks use the detection polarity, `1 = inpainted`. The compositing
//! convention (`1 = real`) is available through [`to_composite_convention`].

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::Tensor;

use crate::error::{Error, Result};

/// Smallest side accepted by [`random_irregular_mask`].
pub const MIN_MASK_SIDE: usize = 32;

/// Number of draws attempted before giving up on the coverage constraint.
pub const MAX_ATTEMPTS: usize = 50;

/// Side length at which `brush_width_range` is expressed in pixels; other
/// sizes scale it linearly by `min(H, W) / 256`.
const REFERENCE_SIDE: f64 = 256.0;

/// An `H×W` mask with values in `{0, 1}`, `1` marking inpainted pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} mask",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidParams(format!(
                "mask value {v} is not 0 or 1"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            height,
            width,
            data,
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Reads an 8-bit mask; pixels `>= 128` are inpainted.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::image(path, e))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| (v >= 128) as u8).collect();
        Ok(Self {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    /// Writes an 8-bit grayscale PNG, `255` = inpainted, `0` = real.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    pub fn to_luma8(&self) -> GrayImage {
        let raw = self.data.iter().map(|&v| v * 255).collect();
        ImageBuffer::<Luma<u8>, _>::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// `[1, 1, H, W]` float tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        masks_to_tensor(std::slice::from_ref(self))
    }
}

/// Stack same-sized masks into an `[N, 1, H, W]` float tensor.
pub fn masks_to_tensor(masks: &[BinaryMask]) -> Tensor {
    let (h, w) = masks[0].dims();
    let mut flat = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        debug_assert_eq!(m.dims(), (h, w));
        flat.extend(m.data.iter().map(|&v| v as f32));
    }
    Tensor::from_slice(&flat).view([masks.len() as i64, 1, h as i64, w as i64])
}

/// Stroke distribution for [`random_irregular_mask`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    /// Inclusive range of strokes per mask.
    pub num_strokes_range: [u32; 2],
    /// Inclusive range of polyline vertices per stroke.
    pub num_vertices_range: [u32; 2],
    /// Brush width in pixels at a 256-pixel short side.
    pub brush_width_range: [f64; 2],
    /// Largest change of heading between consecutive segments, radians.
    pub max_turn_angle: f64,
    /// Segment length as a fraction of the short side.
    pub segment_length_range: [f64; 2],
    /// Accepted fraction of inpainted pixels.
    pub coverage_range: [f64; 2],
    pub seed: u64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            num_strokes_range: [1, 5],
            num_vertices_range: [4, 12],
            brush_width_range: [12.0, 40.0],
            max_turn_angle: FRAC_PI_2,
            segment_length_range: [0.05, 0.2],
            coverage_range: [0.05, 0.5],
            seed: 0,
        }
    }
}

impl MaskParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        let [s0, s1] = self.num_strokes_range;
        let [v0, v1] = self.num_vertices_range;
        let [b0, b1] = self.brush_width_range;
        let [l0, l1] = self.segment_length_range;
        let [c0, c1] = self.coverage_range;
        if s0 < 1 || s0 > s1 {
            return bad("num_strokes_range must be a non-empty range starting at 1 or more");
        }
        if v0 < 2 || v0 > v1 {
            return bad("num_vertices_range must be a non-empty range starting at 2 or more");
        }
        if !(b0 > 0.0 && b0 <= b1 && b1.is_finite()) {
            return bad("brush_width_range must be a non-empty positive range");
        }
        if !(self.max_turn_angle >= 0.0 && self.max_turn_angle.is_finite()) {
            return bad("max_turn_angle must be finite and non-negative");
        }
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return bad("segment_length_range must be a non-empty positive range");
        }
        if !(c0 > 0.0 && c0 <= c1 && c1 < 1.0) {
            return bad("coverage_range must be a non-empty range inside (0, 1)");
        }
        Ok(())
    }
}

/// Draw a free-form mask of random brush strokes.
///
/// Each attempt draws `num_strokes` polylines with a random start, heading
/// changes bounded by `max_turn_angle` and one brush width per stroke. A
/// pixel is set when its center lies within half the brush width of a
/// segment, which covers both the thick segments and their round caps.
/// Attempts repeat from the same random stream until the coverage lands in
/// `coverage_range`.
pub fn random_irregular_mask(
    height: usize,
    width: usize,
    params: &MaskParams,
) -> Result<BinaryMask> {
    if height < MIN_MASK_SIDE || width < MIN_MASK_SIDE {
        return Err(Error::InvalidDimensions {
            height,
            width,
            reason: format!("masks need at least {MIN_MASK_SIDE} pixels per side"),
        });
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let [cov_lo, cov_hi] = params.coverage_range;
    let mut last = 0.0;
    for _ in 0..MAX_ATTEMPTS {
        let mask = draw_strokes(height, width, params, &mut rng);
        last = mask_coverage(&mask);
        if (cov_lo..=cov_hi).contains(&last) {
            return Ok(mask);
        }
    }
    Err(Error::CoverageUnsatisfiable {
        min: cov_lo,
        max: cov_hi,
        attempts: MAX_ATTEMPTS,
        last,
    })
}

fn draw_strokes(height: usize, width: usize, p: &MaskParams, rng: &mut ChaCha8Rng) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    let short = height.min(width) as f64;
    let scale = short / REFERENCE_SIDE;
    let (w, h) = (width as f64, height as f64);

    let strokes = rng.random_range(p.num_strokes_range[0]..=p.num_strokes_range[1]);
    for _ in 0..strokes {
        let brush =
            (rng.random_range(p.brush_width_range[0]..=p.brush_width_range[1]) * scale).max(1.0);
        let vertices = rng.random_range(p.num_vertices_range[0]..=p.num_vertices_range[1]);
        let mut x = rng.random_range(0.0..w);
        let mut y = rng.random_range(0.0..h);
        let mut heading = rng.random_range(0.0..TAU);
        for _ in 1..vertices {
            heading += rng.random_range(-p.max_turn_angle..=p.max_turn_angle);
            let len =
                rng.random_range(p.segment_length_range[0]..=p.segment_length_range[1]) * short;
            let nx = (x + len * heading.cos()).clamp(0.0, w);
            let ny = (y + len * heading.sin()).clamp(0.0, h);
            stamp_capsule(&mut mask, (x, y), (nx, ny), brush / 2.0);
            x = nx;
            y = ny;
        }
    }
    mask
}

/// Set every pixel whose center is within `radius` of the segment `a`–`b`.
fn stamp_capsule(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (h, w) = (mask.height as f64, mask.width as f64);
    let c0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let c1 = (a.0.max(b.0) + radius).ceil().min(w) as usize;
    let r0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let r1 = (a.1.max(b.1) + radius).ceil().min(h) as usize;
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let r2 = radius * radius;
    for row in r0..r1 {
        let py = row as f64 + 0.5;
        for col in c0..c1 {
            let px = col as f64 + 0.5;
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ex, ey) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if ex * ex + ey * ey <= r2 {
                mask.set(row, col, true);
            }
        }
    }
}

/// Complement a mask into the compositing convention, where `1` marks real
/// pixels and `0` the synthesized region. Applying it twice is the identity.
pub fn to_composite_convention(mask: &BinaryMask) -> BinaryMask {
    BinaryMask {
        height: mask.height,
        width: mask.width,
        data: mask.data.iter().map(|&v| 1 - v).collect(),
    }
}

/// Fraction of pixels set to `1`.
pub fn mask_coverage(mask: &BinaryMask) -> f64 {
    if mask.data.is_empty() {
        return 0.0;
    }
    mask.count_ones() as f64 / mask.data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generated_coverage_is_in_range() {
        let params = MaskParams::default().with_seed(7);
        let m = random_irregular_mask(256, 256, &params).unwrap();
        let ones = m.data().iter().filter(|&&v| v == 1).count();
        let cov = ones as f64 / (256.0 * 256.0);
        assert!((0.05..=0.5).contains(&cov), "coverage {cov}");
        assert_eq!(cov, mask_coverage(&m));
    }

    #[test]
    fn same_seed_gives_identical_masks() {
        let params = MaskParams::default().with_seed(7);
        let a = random_irregular_mask(256, 256, &params).unwrap();
        let b = random_irregular_mask(256, 256, &params).unwrap();
        assert_eq!(a, b);
        let c = random_irregular_mask(256, 256, &params.clone().with_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_masks_are_rejected() {
        let err = random_irregular_mask(16, 16, &MaskParams::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidDimensions { .. }));
        assert!(random_irregular_mask(32, 31, &MaskParams::default()).is_err());
    }

    #[test]
    fn impossible_coverage_is_reported() {
        let params = MaskParams {
            num_strokes_range: [1, 1],
            num_vertices_range: [2, 2],
            brush_width_range: [12.0, 12.0],
            coverage_range: [0.9, 0.95],
            ..MaskParams::default()
        };
        let err = random_irregular_mask(64, 64, &params).unwrap_err();
        assert!(matches!(
            err,
            Error::CoverageUnsatisfiable { attempts: 50, .. }
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = MaskParams::default();
        p.coverage_range = [0.2, 0.1];
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
        p.coverage_range = [0.0, 0.5];
        assert!(p.validate().is_err());
        p = MaskParams::default();
        p.num_strokes_range = [0, 3];
        assert!(p.validate().is_err());
        p = MaskParams::default();
        p.num_vertices_range = [6, 4];
        assert!(p.validate().is_err());
    }

    #[test]
    fn complement_examples() {
        let ones = BinaryMask::ones(8, 8);
        assert_eq!(to_composite_convention(&ones), BinaryMask::zeros(8, 8));

        let single = BinaryMask::from_fn(8, 8, |r, c| (r, c) == (3, 4));
        let comp = to_composite_convention(&single);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(comp.get(r, c), (r, c) != (3, 4));
            }
        }
        assert_eq!(to_composite_convention(&comp), single);
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(mask_coverage(&BinaryMask::zeros(8, 8)), 0.0);
        assert_eq!(mask_coverage(&BinaryMask::ones(8, 8)), 1.0);
        let sixteen = BinaryMask::from_fn(8, 8, |r, _| r < 2);
        assert_eq!(sixteen.count_ones(), 16);
        assert_eq!(mask_coverage(&sixteen), 0.25);
    }

    #[test]
    fn capsule_uses_pixel_centers() {
        let mut m = BinaryMask::zeros(8, 8);
        // Zero-length segment: a disk reaching only the four centers at
        // distance sqrt(0.5) from the pixel corner (4, 4).
        stamp_capsule(&mut m, (4.0, 4.0), (4.0, 4.0), 0.71);
        assert_eq!(m.count_ones(), 4);
        assert!(m.get(3, 3) && m.get(3, 4) && m.get(4, 3) && m.get(4, 4));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = random_irregular_mask(64, 48, &MaskParams::default().with_seed(3)).unwrap();
        m.save_png(&path).unwrap();
        let raw = image::open(&path).unwrap().to_luma8();
        assert!(raw.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(BinaryMask::load(&path).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn generation_is_deterministic_and_in_range(seed in any::<u64>(), h in 32usize..96, w in 32usize..96) {
            let params = MaskParams::default().with_seed(seed);
            match random_irregular_mask(h, w, &params) {
                Ok(m) => {
                    prop_assert_eq!(m.dims(), (h, w));
                    prop_assert!(m.data().iter().all(|&v| v <= 1));
                    let cov = mask_coverage(&m);
                    prop_assert!((0.05..=0.5).contains(&cov));
                    prop_assert_eq!(random_irregular_mask(h, w, &params).unwrap(), m);
                }
                Err(e) => prop_assert!(matches!(e, Error::CoverageUnsatisfiable { .. }), "unexpected error"),
            }
        }

        #[test]
        fn complement_is_an_involution(bits in proptest::collection::vec(0u8..2, 64)) {
            let m = BinaryMask::new(8, 8, bits).unwrap();
            let c = to_composite_convention(&m);
            prop_assert_eq!(mask_coverage(&c) + mask_coverage(&m), 1.0);
            prop_assert_eq!(to_composite_convention(&c), m);
        }
    }
}
