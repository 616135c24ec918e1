//! Two-stream noise/image detector with multi-scale cross fusion.
//!
//! ```text
//! x ──► image stream ──► fusion 1 ──┐
//!                                    ├─► cross concat ─► fusion 3 ─► mask head ─► P
//! x ─► SRM ─► noise stream ─► fusion 2 ┘
//! ```
//!
//! Each stream yields a [`FeaturePyramid`] at 1/2, 1/4 and 1/8 of the input
//! size with 128, 256 and 512 channels. Ablation switches replace a fusion
//! module by the identity or drop a stream; with a single stream the cross
//! concatenation is skipped and that stream's pyramid feeds fusion 3.

mod fusion;
mod head;
mod layers;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tch::nn::VarStore;
use tch::{Device, Kind, Tensor};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::image::{common_size, images_to_tensor, Image};
use crate::params;
use crate::srm::{residual_tensor, SrmConfig};

pub use fusion::{CrossConcat, FusionModule};
pub use head::MaskHead;
pub use layers::{ConvBlock, FeatureExtractor, PreActUnit, STEM_CHANNELS};

/// Channels of the three pyramid levels.
pub const LEVEL_CHANNELS: [i64; 3] = [128, 256, 512];
/// Spatial downsampling of the three pyramid levels.
pub const LEVEL_STRIDES: [usize; 3] = [2, 4, 8];
pub const MIN_INPUT_SIDE: usize = 32;

pub(crate) fn check_input_size(height: usize, width: usize) -> Result<()> {
    if !height.is_multiple_of(8)
        || !width.is_multiple_of(8)
        || height < MIN_INPUT_SIDE
        || width < MIN_INPUT_SIDE
    {
        return Err(Error::BadInputSize { height, width });
    }
    Ok(())
}

/// Three batched feature maps `[N, C_k, H/s_k, W/s_k]`.
#[derive(Debug)]
pub struct FeaturePyramid {
    pub levels: [Tensor; 3],
}

impl FeaturePyramid {
    pub(crate) fn from_vec(levels: Vec<Tensor>) -> Self {
        let [a, b, c]: [Tensor; 3] = levels.try_into().expect("exactly three levels");
        Self { levels: [a, b, c] }
    }

    /// `(channels, height, width)` of each level.
    pub fn shapes(&self) -> [(i64, i64, i64); 3] {
        let s = |t: &Tensor| {
            let z = t.size();
            (z[1], z[2], z[3])
        };
        [s(&self.levels[0]), s(&self.levels[1]), s(&self.levels[2])]
    }

    /// Check channels and scales against an input of `height × width`.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (k, (c, h, w)) in self.shapes().into_iter().enumerate() {
            let want = (
                LEVEL_CHANNELS[k],
                (height / LEVEL_STRIDES[k]) as i64,
                (width / LEVEL_STRIDES[k]) as i64,
            );
            if (c, h, w) != want {
                return Err(Error::ShapeMismatch(format!(
                    "pyramid level {} is {:?}, expected {:?}",
                    k + 1,
                    (c, h, w),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn shallow_clone(&self) -> Self {
        Self {
            levels: [
                self.levels[0].shallow_clone(),
                self.levels[1].shallow_clone(),
                self.levels[2].shallow_clone(),
            ],
        }
    }
}

/// `H×W` per-pixel probabilities of being inpainted.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParams(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
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

    /// From a `[H, W]`, `[1, H, W]` or `[1, 1, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let size = t.size();
        let (h, w) = match size.as_slice() {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h as usize, *w as usize),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "expected a single-channel map, got {size:?}"
                )))
            }
        };
        let data =
            Vec::<f32>::try_from(t.detach().to_kind(Kind::Float).contiguous().flatten(0, -1))?;
        Self::new(h, w, data)
    }

    /// 8-bit grayscale, `round(255 p)`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Architecture switches and sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NixNetConfig {
    pub enable_image_stream: bool,
    pub enable_noise_stream: bool,
    /// Fusion modules 1 and 2, one per stream.
    pub enable_fusion_12: bool,
    /// Fusion module 3, after the cross concatenation.
    pub enable_fusion_3: bool,
    pub head_channels: i64,
    /// Training input size `[height, width]`.
    pub input_size: [usize; 2],
    pub srm: SrmConfig,
}

impl Default for NixNetConfig {
    fn default() -> Self {
        Self {
            enable_image_stream: true,
            enable_noise_stream: true,
            enable_fusion_12: true,
            enable_fusion_3: true,
            head_channels: 64,
            input_size: [64, 64],
            srm: SrmConfig::default(),
        }
    }
}

impl NixNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enable_image_stream && !self.enable_noise_stream {
            return Err(Error::ConfigInvalid(
                "at least one stream must be enabled".into(),
            ));
        }
        if self.head_channels < 1 {
            return Err(Error::ConfigInvalid(
                "head_channels must be positive".into(),
            ));
        }
        check_input_size(self.input_size[0], self.input_size[1])
            .map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_size = [height, width];
        self
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::ConfigInvalid(format!(
                    "unknown variant {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// The full model and its ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    NoNoiseStream,
    NoImageStream,
    NoFusion,
    NoFusion12,
    NoFusion3,
    Full,
}

impl Variant {
    /// In the order of the ablation table.
    pub const ALL: [Variant; 6] = [
        Variant::NoNoiseStream,
        Variant::NoImageStream,
        Variant::NoFusion,
        Variant::NoFusion12,
        Variant::NoFusion3,
        Variant::Full,
    ];

    /// Identifier used in configs and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            Variant::NoNoiseStream => "no-noise-stream",
            Variant::NoImageStream => "no-image-stream",
            Variant::NoFusion => "no-fusion",
            Variant::NoFusion12 => "no-fusion12",
            Variant::NoFusion3 => "no-fusion3",
            Variant::Full => "full",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::NoNoiseStream => "w/o noise stream",
            Variant::NoImageStream => "w/o image stream",
            Variant::NoFusion => "w/o all fusion modules",
            Variant::NoFusion12 => "w/o fusion module 1 and 2",
            Variant::NoFusion3 => "w/o fusion module 3",
            Variant::Full => "Full NIX-Net",
        }
    }

    /// Apply the variant's switches on top of `base`.
    pub fn apply(&self, base: &NixNetConfig) -> NixNetConfig {
        let mut c = base.clone();
        c.enable_image_stream = true;
        c.enable_noise_stream = true;
        c.enable_fusion_12 = true;
        c.enable_fusion_3 = true;
        match self {
            Variant::NoNoiseStream => c.enable_noise_stream = false,
            Variant::NoImageStream => c.enable_image_stream = false,
            Variant::NoFusion => {
                c.enable_fusion_12 = false;
                c.enable_fusion_3 = false;
            }
            Variant::NoFusion12 => c.enable_fusion_12 = false,
            Variant::NoFusion3 => c.enable_fusion_3 = false,
            Variant::Full => {}
        }
        c
    }
}

/// The detector and the store holding its parameters.
#[derive(Debug)]
pub struct NixNet {
    cfg: NixNetConfig,
    vs: VarStore,
    image_stream: Option<FeatureExtractor>,
    noise_stream: Option<FeatureExtractor>,
    fusion1: Option<FusionModule>,
    fusion2: Option<FusionModule>,
    cross: Option<CrossConcat>,
    fusion3: Option<FusionModule>,
    head: MaskHead,
}

pub type DetectorModel = NixNet;

impl NixNet {
    /// Build a freshly initialized model; parameters are a pure function of
    /// `seed`.
    pub fn new(cfg: &NixNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vs = VarStore::new(Device::Cpu);
        let root = vs.root();
        let image_stream = cfg
            .enable_image_stream
            .then(|| FeatureExtractor::new(&root / "image_stream"));
        let noise_stream = cfg
            .enable_noise_stream
            .then(|| FeatureExtractor::new(&root / "noise_stream"));
        let fusion1 = (cfg.enable_image_stream && cfg.enable_fusion_12)
            .then(|| FusionModule::new(&root / "fusion1"));
        let fusion2 = (cfg.enable_noise_stream && cfg.enable_fusion_12)
            .then(|| FusionModule::new(&root / "fusion2"));
        let cross = (cfg.enable_image_stream && cfg.enable_noise_stream)
            .then(|| CrossConcat::new(&root / "cross"));
        let fusion3 = cfg
            .enable_fusion_3
            .then(|| FusionModule::new(&root / "fusion3"));
        let head = MaskHead::new(&root / "head", cfg.head_channels);
        params::reinitialize(&vs, seed);
        Ok(Self {
            cfg: cfg.clone(),
            vs,
            image_stream,
            noise_stream,
            fusion1,
            fusion2,
            cross,
            fusion3,
            head,
        })
    }

    pub fn config(&self) -> &NixNetConfig {
        &self.cfg
    }

    pub fn var_store(&self) -> &VarStore {
        &self.vs
    }

    pub fn var_store_mut(&mut self) -> &mut VarStore {
        &mut self.vs
    }

    pub fn image_stream(&self) -> Option<&FeatureExtractor> {
        self.image_stream.as_ref()
    }

    pub fn noise_stream(&self) -> Option<&FeatureExtractor> {
        self.noise_stream.as_ref()
    }

    /// Fusion modules 1, 2 and 3 (absent when ablated).
    pub fn fusion_modules(&self) -> [Option<&FusionModule>; 3] {
        [
            self.fusion1.as_ref(),
            self.fusion2.as_ref(),
            self.fusion3.as_ref(),
        ]
    }

    pub fn cross_concat(&self) -> Option<&CrossConcat> {
        self.cross.as_ref()
    }

    pub fn head(&self) -> &MaskHead {
        &self.head
    }

    fn check_batch(xs: &Tensor) -> Result<(i64, i64)> {
        let size = xs.size();
        if size.len() != 4 || size[1] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected an [N, 3, H, W] batch, got {size:?}"
            )));
        }
        check_input_size(size[2] as usize, size[3] as usize)?;
        Ok((size[2], size[3]))
    }

    /// Output of fusion module 3 (or its identity replacement).
    pub fn pyramid_t(&self, xs: &Tensor, train: bool) -> Result<FeaturePyramid> {
        Self::check_batch(xs)?;
        let fuse = |m: &Option<FusionModule>, p: FeaturePyramid| match m {
            Some(m) => m.forward_t(&p, train),
            None => p,
        };
        let image = match &self.image_stream {
            Some(s) => Some(fuse(&self.fusion1, s.forward_t(xs, train)?)),
            None => None,
        };
        let noise = match &self.noise_stream {
            Some(s) => {
                let r = residual_tensor(xs, &self.cfg.srm)?;
                Some(fuse(&self.fusion2, s.forward_t(&r, train)?))
            }
            None => None,
        };
        let merged = match (image, noise, &self.cross) {
            (Some(a), Some(b), Some(cross)) => cross.forward_t(&a, &b, train)?,
            (Some(a), None, _) => a,
            (None, Some(b), _) => b,
            _ => return Err(Error::ConfigInvalid("no stream produced features".into())),
        };
        Ok(fuse(&self.fusion3, merged))
    }

    /// Pre-sigmoid scores `[N, 1, H, W]`.
    pub fn logits_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let (h, w) = Self::check_batch(xs)?;
        let p = self.pyramid_t(xs, train)?;
        Ok(self.head.logits_t(&p, h, w, train))
    }

    /// Probabilities `[N, 1, H, W]` for an `[N, 3, H, W]` batch in `[0, 1]`.
    pub fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.logits_t(xs, train)?.sigmoid())
    }

    /// Inference on one image.
    pub fn forward(&self, x: &Image) -> Result<ProbabilityMap> {
        let mut out = self.predict(std::slice::from_ref(x), 1)?;
        Ok(out.remove(0))
    }

    /// Inference on same-sized images in batches of `batch_size`.
    pub fn predict(&self, images: &[Image], batch_size: usize) -> Result<Vec<ProbabilityMap>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        common_size(images)?;
        let kind = self.vs.kind();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch_size.max(1)) {
            let xs = images_to_tensor(chunk).to_kind(kind);
            let probs = tch::no_grad(|| self.forward_t(&xs, false))?;
            for i in 0..chunk.len() as i64 {
                out.push(ProbabilityMap::from_tensor(&probs.get(i))?);
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stores(
            CheckpointKind::Detector,
            serde_json::to_value(&self.cfg).expect("config serializes"),
            &[("", &self.vs)],
        )
    }

    /// Returns the SHA-256 digest of the written file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        self.to_checkpoint().save(path)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CheckpointKind::Detector)?;
        let cfg: NixNetConfig = serde_json::from_value(ck.config.clone())?;
        let net = Self::new(&cfg, 0)?;
        ck.load_into("", &net.vs)?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Parameter shapes and the feature-map shapes for the configured input
    /// size.
    pub fn describe(&self) -> Result<String> {
        let mut s = String::new();
        let [h, w] = self.cfg.input_size;
        let _ = writeln!(s, "config: {}", serde_json::to_string(&self.cfg)?);
        let _ = writeln!(
            s,
            "trainable parameters: {}",
            params::num_trainable(&self.vs)
        );
        let probe = Tensor::zeros([1, 3, h as i64, w as i64], (self.vs.kind(), Device::Cpu));
        tch::no_grad(|| -> Result<()> {
            let streams = [
                ("image stream", &self.image_stream),
                ("noise stream", &self.noise_stream),
            ];
            for (name, stream) in streams {
                if let Some(st) = stream {
                    let p = st.forward_t(&probe, false)?;
                    for (k, (c, ph, pw)) in p.shapes().into_iter().enumerate() {
                        let _ = writeln!(s, "{name} level{}: {c}x{ph}x{pw}", k + 1);
                    }
                }
            }
            let fused = self.pyramid_t(&probe, false)?;
            for (k, (c, ph, pw)) in fused.shapes().into_iter().enumerate() {
                let _ = writeln!(s, "fused level{}: {c}x{ph}x{pw}", k + 1);
            }
            let out = self.forward_t(&probe, false)?;
            let _ = writeln!(s, "output: {:?}", out.size());
            Ok(())
        })?;
        let _ = writeln!(s, "parameters:");
        for (name, t) in params::sorted_variables(&self.vs) {
            let _ = writeln!(s, "  {name} {:?}", t.size());
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_size_rules() {
        assert!(check_input_size(64, 64).is_ok());
        assert!(check_input_size(32, 40).is_ok());
        assert!(matches!(
            check_input_size(100, 100),
            Err(Error::BadInputSize { .. })
        ));
        assert!(check_input_size(24, 64).is_err());
    }

    #[test]
    fn both_streams_disabled_is_invalid() {
        let cfg = NixNetConfig {
            enable_image_stream: false,
            enable_noise_stream: false,
            ..Default::default()
        };
        assert!(matches!(NixNet::new(&cfg, 0), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn variant_switches() {
        let base = NixNetConfig::default();
        assert_eq!(Variant::Full.apply(&base), base);
        let c = Variant::NoFusion.apply(&base);
        assert!(!c.enable_fusion_12 && !c.enable_fusion_3 && c.enable_noise_stream);
        assert!(!Variant::NoImageStream.apply(&base).enable_image_stream);
        assert_eq!(Variant::ALL.len(), 6);
    }

    #[test]
    fn probability_map_rejects_out_of_range() {
        assert!(ProbabilityMap::new(1, 2, vec![0.2, 1.2]).is_err());
        assert!(ProbabilityMap::new(1, 2, vec![0.2]).is_err());
    }
}
