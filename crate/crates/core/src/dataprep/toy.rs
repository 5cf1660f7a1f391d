use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{join_dual, ClassMask, DualImage, Palette, RgbImage};
use crate::error::{Error, Result};

/// Half-width of the uniform per-channel noise added to the micrograph.
const COLOR_NOISE: f32 = 12.0;
/// Width of the anti-aliased blob rim, in pixels.
const EDGE_WIDTH: f32 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySample {
    pub dual: DualImage,
    pub mask: ClassMask,
}

struct Blob {
    class: u8,
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    angle: f32,
}

impl Blob {
    fn random(class: u8, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = size as f32;
        Blob {
            class,
            cx: rng.gen_range(0.0..s),
            cy: rng.gen_range(0.0..s),
            rx: rng.gen_range(0.12 * s..0.25 * s),
            ry: rng.gen_range(0.12 * s..0.25 * s),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
        }
    }

    /// Signed distance to the rim in pixels, approximately; negative inside.
    fn rim_distance(&self, x: f32, y: f32) -> f32 {
        let (dx, dy) = (x + 0.5 - self.cx, y + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let r = (u * u + v * v).sqrt();
        (r - 1.0) * self.rx.min(self.ry)
    }
}

/// Procedural dual images: soft-edged elliptical blobs of the foreground
/// classes over a class-0 background. The mask is exact by construction:
/// a pixel belongs to the last blob whose rim encloses its center.
pub fn generate_toy_dual_images(
    count: usize,
    size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<ToySample>> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("toy data needs at least 2 classes, got {num_classes}")));
    }
    if size == 0 {
        return Err(Error::invalid("toy image size must be positive"));
    }
    let palette = Palette::evenly_spaced(num_classes)?;
    (0..count)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            toy_sample(size, &palette, &mut rng)
        })
        .collect()
}

fn toy_sample(size: usize, palette: &Palette, rng: &mut ChaCha8Rng) -> Result<ToySample> {
    let mut blobs = Vec::new();
    for class in 1..palette.num_classes() as u8 {
        for _ in 0..rng.gen_range(1..=2) {
            blobs.push(Blob::random(class, size, rng));
        }
    }
    blobs.shuffle(rng);

    let background = palette.color(0).map(f32::from);
    let mut color = vec![background; size * size];
    let mut classes = vec![0u8; size * size];
    for blob in &blobs {
        let fill = palette.color(blob.class).map(f32::from);
        for y in 0..size {
            for x in 0..size {
                let d = blob.rim_distance(x as f32, y as f32);
                let alpha = (0.5 - d / EDGE_WIDTH).clamp(0.0, 1.0);
                if alpha == 0.0 {
                    continue;
                }
                let px = &mut color[y * size + x];
                for ch in 0..3 {
                    px[ch] = px[ch] * (1.0 - alpha) + fill[ch] * alpha;
                }
                if d < 0.0 {
                    classes[y * size + x] = blob.class;
                }
            }
        }
    }

    let mut rgb = Vec::with_capacity(size * size * 3);
    for px in &color {
        for &v in px {
            let noisy = v + rng.gen_range(-COLOR_NOISE..=COLOR_NOISE);
            rgb.push(noisy.round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = RgbImage::new(size, size, rgb)?;
    let mask = ClassMask::new(size, size, classes, palette.clone())?;
    Ok(ToySample {
        dual: join_dual(&image, &mask)?,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::split_dual;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_toy_dual_images(3, 32, 4, 17).unwrap();
        let b = generate_toy_dual_images(3, 32, 4, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_toy_dual_images(3, 32, 4, 18).unwrap());
    }

    #[test]
    fn two_classes_only_binary_masks() {
        for s in generate_toy_dual_images(8, 32, 2, 5).unwrap() {
            assert!(s.mask.classes().iter().all(|&c| c <= 1));
        }
    }

    #[test]
    fn dual_mask_plane_matches_exact_mask() {
        for s in generate_toy_dual_images(4, 32, 4, 2).unwrap() {
            let (_, plane) = split_dual(&s.dual);
            assert_eq!(ClassMask::from_gray_plane(&plane, s.mask.palette().clone()).unwrap(), s.mask);
        }
    }

    #[test]
    fn every_class_usually_present() {
        let samples = generate_toy_dual_images(64, 64, 4, 0).unwrap();
        for class in 0..4 {
            let present = samples.iter().filter(|s| s.mask.histogram()[class] > 0).count();
            assert!(present * 10 >= 64 * 8, "class {class} present in only {present}/64 masks");
        }
    }
}
