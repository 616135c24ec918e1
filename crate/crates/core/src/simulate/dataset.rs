//! On-disk universal dataset:
//!
//! ```text
//! out_dir/manifest.json
//! out_dir/images/NNNNNN.png   8-bit RGB simulated inpainted images
//! out_dir/masks/NNNNNN.png    8-bit gray, 255 = inpainted
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{composite, AutoencoderModel};
use crate::error::{Error, Result};
use crate::image::{common_size, Image};
use crate::maskgen::{mask_coverage, random_irregular_mask, BinaryMask, MaskParams};
use crate::params::derive_seed;

pub const MANIFEST_VERSION: &str = "nixnet-ut/1";

/// One simulated inpainted image and its target mask (`1` = synthesized).
#[derive(Clone, Debug, PartialEq)]
pub struct UniversalSample {
    pub x: Image,
    pub m: BinaryMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub image: String,
    pub mask: String,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub count: usize,
    /// `[height, width]`.
    pub image_size: [usize; 2],
    pub seed: u64,
    pub autoencoder_digest: String,
    pub mask_params: MaskParams,
    pub samples: Vec<SampleEntry>,
}

/// Mask parameters for sample `index`: same distribution, seed derived from
/// the dataset seed and the index.
pub fn sample_mask_params(params: &MaskParams, index: usize) -> MaskParams {
    params
        .clone()
        .with_seed(derive_seed(params.seed, &format!("sample{index}")))
}

/// Build samples in memory. Reconstructions are snapped to the 8-bit grid
/// so that the result equals what [`generate_universal_dataset`] writes.
pub fn simulate_samples(
    images: &[Image],
    g: &AutoencoderModel,
    params: &MaskParams,
) -> Result<Vec<UniversalSample>> {
    let (h, w) = common_size(images)?;
    params.validate()?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let recon = g.reconstruct(img)?.quantized();
            let m = random_irregular_mask(h, w, &sample_mask_params(params, i))?;
            let x = composite(img, &recon, &m)?;
            Ok(UniversalSample { x, m })
        })
        .collect()
}

/// Simulate one sample per input image and write images, masks and the
/// manifest under `out_dir`. The output is a pure function of the images,
/// the generator weights and `params`.
pub fn generate_universal_dataset(
    images: &[Image],
    g: &AutoencoderModel,
    params: &MaskParams,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let (h, w) = common_size(images)?;
    let samples = simulate_samples(images, g, params)?;
    for sub in ["images", "masks"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let entry = SampleEntry {
            image: format!("images/{i:06}.png"),
            mask: format!("masks/{i:06}.png"),
            coverage: mask_coverage(&s.m),
        };
        s.x.save_png(out_dir.join(&entry.image))?;
        s.m.save_png(out_dir.join(&entry.mask))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        count: entries.len(),
        image_size: [h, w],
        seed: params.seed,
        autoencoder_digest: g.digest()?,
        mask_params: params.clone(),
        samples: entries,
    };
    write_manifest(&manifest, out_dir)?;
    Ok(manifest)
}

fn write_manifest(manifest: &DatasetManifest, out_dir: &Path) -> Result<()> {
    let path = out_dir.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Read a dataset written by [`generate_universal_dataset`], checking the
/// manifest against the files.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<UniversalSample>)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.count != manifest.samples.len() {
        return Err(Error::InvalidParams(format!(
            "manifest count {} but {} samples listed",
            manifest.count,
            manifest.samples.len()
        )));
    }
    let [h, w] = manifest.image_size;
    let samples = manifest
        .samples
        .iter()
        .map(|e| {
            let x = Image::load(dir.join(&e.image))?;
            let m = BinaryMask::load(dir.join(&e.mask))?;
            if x.dims() != (h, w) || m.dims() != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "{} / {} do not match the manifest size {h}x{w}",
                    e.image, e.mask
                )));
            }
            Ok(UniversalSample { x, m })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
