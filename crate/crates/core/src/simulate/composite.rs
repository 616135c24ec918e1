use crate::error::{Error, Result};
use crate::image::Image;
use crate::maskgen::{to_composite_convention, BinaryMask};

/// Simulated inpainting `X = M ⊙ I + (1 − M) ⊙ G(I)` with `M` the
/// compositing-convention complement of `mask`.
///
/// Each pixel is copied from `real` where `mask` is 0 and from `generated`
/// where it is 1. No arithmetic touches the values, so kept pixels are
/// bit-identical to the source.
pub fn composite(real: &Image, generated: &Image, mask: &BinaryMask) -> Result<Image> {
    if real.dims() != generated.dims() || real.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "real {:?}, generated {:?}, mask {:?}",
            real.dims(),
            generated.dims(),
            mask.dims()
        )));
    }
    let keep = to_composite_convention(mask);
    let mut out = real.clone();
    let data = out.data_mut();
    for (px, (&k, dst)) in keep.data().iter().zip(data.chunks_exact_mut(3)).enumerate() {
        if k == 0 {
            dst.copy_from_slice(&generated.data()[px * 3..px * 3 + 3]);
        }
    }
    Ok(out)
}
