use std::path::Path;

use image::ColorType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Display color and mask gray level for every class.
///
/// Gray levels are strictly increasing with class index, which makes the
/// class↔gray encoding a bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
    grays: Vec<u8>,
}

/// Black, blue, red, green: the four-phase color scheme of the magnet masks.
const BASE_COLORS: [[u8; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 255],
    [255, 0, 0],
    [0, 255, 0],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [255, 255, 255],
];

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>, grays: Vec<u8>) -> Result<Self> {
        if colors.is_empty() || colors.len() != grays.len() {
            return Err(Error::invalid(format!(
                "palette needs one color per gray level ({} colors, {} grays)",
                colors.len(),
                grays.len()
            )));
        }
        if grays.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "palette gray levels must be strictly increasing: {grays:?}"
            )));
        }
        Ok(Palette { colors, grays })
    }

    /// Evenly spaced grays, class `i` → round(255·i/(C−1)).
    pub fn evenly_spaced(num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid(format!(
                "number of classes must be in 1..=256, got {num_classes}"
            )));
        }
        let grays = if num_classes == 1 {
            vec![0]
        } else {
            (0..num_classes)
                .map(|i| ((255 * i) as f64 / (num_classes - 1) as f64).round() as u8)
                .collect()
        };
        let colors = (0..num_classes)
            .map(|i| {
                if i < BASE_COLORS.len() {
                    BASE_COLORS[i]
                } else {
                    // Spread the remainder deterministically over the RGB cube.
                    let h = (i * 97) % 256;
                    [h as u8, ((h * 7) % 256) as u8, ((h * 13) % 256) as u8]
                }
            })
            .collect();
        Ok(Palette { colors, grays })
    }

    pub fn num_classes(&self) -> usize {
        self.grays.len()
    }

    pub fn gray(&self, class: u8) -> u8 {
        self.grays[class as usize]
    }

    pub fn color(&self, class: u8) -> [u8; 3] {
        self.colors[class as usize]
    }

    pub fn grays(&self) -> &[u8] {
        &self.grays
    }

    /// Inverse of [`Palette::gray`]; `None` for values that are not palette grays.
    pub fn class_of_gray(&self, gray: u8) -> Option<u8> {
        self.grays.binary_search(&gray).ok().map(|i| i as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height * 3 {
            return Err(Error::shape("rgb pixel bytes", width * height * 3, pixels.len()));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        RgbImage::new(width, height, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(path, &self.pixels, self.width, self.height, ColorType::Rgb8)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = open_image(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        RgbImage::new(w as usize, h as usize, img.into_raw())
    }
}

/// A single 8-bit plane, e.g. the raw mask channel of a decoded dual image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayPlane {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::shape("plane pixels", width * height, values.len()));
        }
        Ok(GrayPlane {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(path, &self.values, self.width, self.height, ColorType::L8)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = open_image(path)?.to_luma8();
        let (w, h) = img.dimensions();
        GrayPlane::new(w as usize, h as usize, img.into_raw())
    }
}

/// Per-pixel class indices plus the palette that gives them colors and grays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    classes: Vec<u8>,
    palette: Palette,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, classes: Vec<u8>, palette: Palette) -> Result<Self> {
        check_dims(width, height)?;
        if classes.len() != width * height {
            return Err(Error::shape("mask pixels", width * height, classes.len()));
        }
        let c = palette.num_classes();
        if let Some(i) = classes.iter().position(|&k| k as usize >= c) {
            return Err(Error::invalid(format!(
                "class {} at pixel {i} is outside [0, {c})",
                classes[i]
            )));
        }
        Ok(ClassMask {
            width,
            height,
            classes,
            palette,
        })
    }

    pub fn filled(width: usize, height: usize, class: u8, palette: Palette) -> Result<Self> {
        ClassMask::new(width, height, vec![class; width * height], palette)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.palette.num_classes()
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        assert!((class as usize) < self.num_classes());
        self.classes[y * self.width + x] = class;
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{} mask",
                self.width, self.height
            )));
        }
        let mut classes = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let start = y * self.width + x0;
            classes.extend_from_slice(&self.classes[start..start + width]);
        }
        ClassMask::new(width, height, classes, self.palette.clone())
    }

    pub fn to_gray_plane(&self) -> GrayPlane {
        let values = self.classes.iter().map(|&c| self.palette.gray(c)).collect();
        GrayPlane {
            width: self.width,
            height: self.height,
            values,
        }
    }

    /// Exact inverse of [`ClassMask::to_gray_plane`]; fails on any non-palette value.
    pub fn from_gray_plane(plane: &GrayPlane, palette: Palette) -> Result<Self> {
        let classes = plane
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                palette.class_of_gray(v).ok_or_else(|| {
                    Error::invalid(format!("pixel {i} has non-palette gray level {v}"))
                })
            })
            .collect::<Result<Vec<u8>>>()?;
        ClassMask::new(plane.width, plane.height, classes, palette)
    }

    /// Interprets a plane as palette grays if every value is one, otherwise as
    /// raw class indices.
    pub fn from_plane_auto(plane: &GrayPlane, palette: Palette) -> Result<Self> {
        if plane.values.iter().all(|&v| palette.class_of_gray(v).is_some()) {
            return ClassMask::from_gray_plane(plane, palette);
        }
        let message = format!(
            "mask values are neither palette grays {:?} nor class indices below {}",
            palette.grays(),
            palette.num_classes()
        );
        ClassMask::new(plane.width, plane.height, plane.values.clone(), palette)
            .map_err(|_| Error::invalid(message))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_plane().save_png(path)
    }

    pub fn load_png(path: &Path, palette: Palette) -> Result<Self> {
        let plane = GrayPlane::load_png(path)?;
        ClassMask::from_plane_auto(&plane, palette).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Number of pixels per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &c in &self.classes {
            counts[c as usize] += 1;
        }
        counts
    }
}

/// RGB micrograph plus mask gray level as one 4-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DualImage {
    width: usize,
    height: usize,
    /// Interleaved R, G, B, mask-gray; row-major.
    data: Vec<u8>,
}

impl DualImage {
    pub const CHANNELS: usize = 4;

    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 4 {
            return Err(Error::shape("dual image bytes", width * height * 4, data.len()));
        }
        Ok(DualImage {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> Vec<u8> {
        assert!(c < 4);
        self.data.iter().skip(c).step_by(4).copied().collect()
    }

    pub fn mask_plane(&self) -> GrayPlane {
        GrayPlane {
            width: self.width,
            height: self.height,
            values: self.channel(3),
        }
    }

    /// Stored as an RGBA PNG whose alpha channel carries the mask plane.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_png(path, &self.data, self.width, self.height, ColorType::Rgba8)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = open_image(path)?;
        if img.color() != ColorType::Rgba8 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected an 8-bit RGBA PNG, found {:?}", img.color()),
            });
        }
        let img = img.to_rgba8();
        let (w, h) = img.dimensions();
        DualImage::new(w as usize, h as usize, img.into_raw())
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image dims must be positive, got {width}x{height}")));
    }
    Ok(())
}

fn save_png(path: &Path, data: &[u8], width: usize, height: usize, color: ColorType) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(
        path,
        data,
        width as u32,
        height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            what: "image file not found".into(),
        });
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_palette_for_four_classes() {
        let p = Palette::evenly_spaced(4).unwrap();
        assert_eq!(p.grays(), &[0, 85, 170, 255]);
        assert_eq!(p.class_of_gray(170), Some(2));
        assert_eq!(p.class_of_gray(90), None);
    }

    #[test]
    fn palette_rejects_non_increasing_grays() {
        assert!(Palette::new(vec![[0; 3]; 2], vec![10, 10]).is_err());
    }

    #[test]
    fn evenly_spaced_grays_strictly_increase() {
        for c in 1..=256 {
            let p = Palette::evenly_spaced(c).unwrap();
            assert!(p.grays().windows(2).all(|w| w[0] < w[1]), "C={c}");
        }
    }

    #[test]
    fn mask_rejects_out_of_range_class() {
        let p = Palette::evenly_spaced(2).unwrap();
        assert!(ClassMask::new(2, 1, vec![0, 2], p).is_err());
    }

    #[test]
    fn auto_plane_decoding() {
        let p = Palette::evenly_spaced(4).unwrap();
        let gray = GrayPlane::new(2, 2, vec![0, 85, 170, 255]).unwrap();
        assert_eq!(ClassMask::from_plane_auto(&gray, p.clone()).unwrap().classes(), &[0, 1, 2, 3]);
        let indexed = GrayPlane::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(ClassMask::from_plane_auto(&indexed, p.clone()).unwrap().classes(), &[0, 1, 2, 3]);
        let bad = GrayPlane::new(2, 1, vec![0, 90]).unwrap();
        assert!(ClassMask::from_plane_auto(&bad, p).is_err());
    }

    #[test]
    fn png_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let dual = DualImage::new(3, 2, (0..24).map(|v| (v * 10) as u8).collect()).unwrap();
        let path = dir.path().join("dual.png");
        dual.save_png(&path).unwrap();
        assert_eq!(DualImage::load_png(&path).unwrap(), dual);

        let p = Palette::evenly_spaced(4).unwrap();
        let mask = ClassMask::new(3, 1, vec![3, 0, 1], p.clone()).unwrap();
        let path = dir.path().join("mask.png");
        mask.save_png(&path).unwrap();
        assert_eq!(ClassMask::load_png(&path, p).unwrap(), mask);
    }

    #[test]
    fn rgb_png_is_not_a_dual() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RgbImage::new(2, 2, vec![7; 12]).unwrap();
        let path = dir.path().join("rgb.png");
        rgb.save_png(&path).unwrap();
        assert_eq!(RgbImage::load_png(&path).unwrap(), rgb);
        assert!(matches!(DualImage::load_png(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_missing_artifact() {
        let err = RgbImage::load_png(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }
}
