//! Raw imagery → pipeline units: patches, dual images, manifests and toy data.

mod manifest;
mod raster;
mod toy;

pub use manifest::{
    compose_dataset, compose_pure_synthetic, synthetic_count, DatasetManifest, ManifestEntry, Role, Source,
};
pub use raster::{ClassMask, DualImage, GrayPlane, Palette, RgbImage};
pub use toy::{generate_toy_dual_images, ToySample};

use crate::error::{Error, Result};

/// Cuts a non-overlapping, top-left anchored grid of square patches.
///
/// Right and bottom margins narrower than `patch_size` are dropped. Patches
/// come back in row-major order.
pub fn patchify(
    image: &RgbImage,
    mask: &ClassMask,
    patch_size: usize,
) -> Result<Vec<(RgbImage, ClassMask)>> {
    check_same_dims(image, mask)?;
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if patch_size > image.width() || patch_size > image.height() {
        return Err(Error::invalid(format!(
            "patch size {patch_size} exceeds image {}x{}",
            image.width(),
            image.height()
        )));
    }
    let cols = image.width() / patch_size;
    let rows = image.height() / patch_size;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (c * patch_size, r * patch_size);
            patches.push((
                image.crop(x, y, patch_size, patch_size)?,
                mask.crop(x, y, patch_size, patch_size)?,
            ));
        }
    }
    Ok(patches)
}

pub fn join_dual(image: &RgbImage, mask: &ClassMask) -> Result<DualImage> {
    check_same_dims(image, mask)?;
    let mut data = Vec::with_capacity(image.width() * image.height() * 4);
    for (rgb, &class) in image.pixels().chunks_exact(3).zip(mask.classes()) {
        data.extend_from_slice(rgb);
        data.push(mask.palette().gray(class));
    }
    DualImage::new(image.width(), image.height(), data)
}

/// Splits off the RGB micrograph and returns the mask channel untouched.
pub fn split_dual(dual: &DualImage) -> (RgbImage, GrayPlane) {
    let mut rgb = Vec::with_capacity(dual.width() * dual.height() * 3);
    for px in dual.data().chunks_exact(4) {
        rgb.extend_from_slice(&px[..3]);
    }
    let image = RgbImage::new(dual.width(), dual.height(), rgb).expect("dims come from a valid dual image");
    (image, dual.mask_plane())
}

fn check_same_dims(image: &RgbImage, mask: &ClassMask) -> Result<()> {
    if image.width() != mask.width() {
        return Err(Error::shape("mask width", image.width(), mask.width()));
    }
    if image.height() != mask.height() {
        return Err(Error::shape("mask height", image.height(), mask.height()));
    }
    Ok(())
}
