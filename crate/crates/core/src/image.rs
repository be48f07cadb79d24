//! Image augmentation: horizontal flip, small-angle rotation, the
//! aspect-preserving crop procedure, RGB channel shifting, and photometric
//! adjustments.
//!
//! Photometric ops, channelwise with `grey = 0.299R + 0.587G + 0.114B`:
//! brightness `a*I`, contrast `I*a + (1-a)*mean(grey(I))`, saturation
//! `I*a + (1-a)*grey(I)`. Outputs are clamped to [0, 255].
//!
//! Geometric resampling is bilinear; rotation fills out-of-bounds samples
//! with edge replication.

use std::fmt::Write as _;
use std::path::Path;

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// RGB image, `H x W x 3`, values in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::argument("image values must lie in [0, 255]"));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Photometric adjustment factor.
    pub alpha: f64,
    /// Rotation range in degrees.
    pub rotation_range: (f64, f64),
    /// Crop rectangle scale range.
    pub crop_scale_range: (f64, f64),
    /// Crop aspect ratio as width/height.
    pub aspect: f64,
    /// Output side length of the crop procedure.
    pub out_size: usize,
    /// Maximum absolute per-channel RGB shift.
    pub rgb_shift_magnitude: f64,
    /// Probability of applying each transform independently.
    pub apply_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha: 0.3,
            rotation_range: (-8.0, 8.0),
            crop_scale_range: (0.8, 1.0),
            aspect: 320.0 / 240.0,
            out_size: 224,
            rgb_shift_magnitude: 20.0,
            apply_probability: 0.5,
        }
    }
}

fn check_augmentable(img: &Image) -> Result<()> {
    if img.height() < 8 || img.width() < 8 {
        return Err(Error::argument(format!(
            "image {}x{} too small to augment (need at least 8x8)",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

#[inline]
fn clamp255(v: f64) -> f64 {
    v.clamp(0.0, 255.0)
}

/// BT.601 luma per pixel.
fn grey(img: &Image) -> Vec<f64> {
    let mut out = vec![0.0; img.height() * img.width()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            // Written relative to the blue channel so an equal-channel pixel
            // maps to exactly that value (the corrections vanish exactly).
            let (r, g, b) = (
                img.pixel(y, x, 0),
                img.pixel(y, x, 1),
                img.pixel(y, x, 2),
            );
            out[y * img.width() + x] = b + 0.299 * (r - b) + 0.587 * (g - b);
        }
    }
    out
}

pub fn flip_h(img: &Image) -> Image {
    let mut out = Image::zeros(img.height(), img.width());
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                out.set_pixel(y, x, c, img.pixel(y, img.width() - 1 - x, c));
            }
        }
    }
    out
}

/// Bilinear sample with edge replication.
fn sample(img: &Image, y: f64, x: f64, c: usize) -> f64 {
    let xc = x.clamp(0.0, (img.width() - 1) as f64);
    let yc = y.clamp(0.0, (img.height() - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = img.pixel(y0, x0, c) * (1.0 - fx) + img.pixel(y0, x1, c) * fx;
    let bot = img.pixel(y1, x0, c) * (1.0 - fx) + img.pixel(y1, x1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotation about the image center by `degrees`.
pub fn rotate(img: &Image, degrees: f64) -> Result<Image> {
    check_augmentable(img)?;
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (img.height() - 1) as f64 / 2.0;
    let cx = (img.width() - 1) as f64 / 2.0;
    let mut out = Image::zeros(img.height(), img.width());
    for y in 0..img.height() {
        for x in 0..img.width() {
            // Inverse mapping into the source image.
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for c in 0..3 {
                out.set_pixel(y, x, c, clamp255(sample(img, sy, sx, c)));
            }
        }
    }
    Ok(out)
}

/// Crop procedure: (1) maximum rectangle with the configured aspect ratio
/// that fits inside the image, (2) scale it by a random factor from the
/// configured range, (3) place it at a random location, (4) resize to the
/// configured output size.
pub fn crop_procedure(img: &Image, cfg: &AugmentConfig, rng: &mut SplitMix64) -> Result<Image> {
    check_augmentable(img)?;
    let w = img.width() as f64;
    let h = img.height() as f64;
    let mut rect_w = w.min(h * cfg.aspect);
    let mut rect_h = rect_w / cfg.aspect;
    let scale = rng.uniform(cfg.crop_scale_range.0, cfg.crop_scale_range.1);
    rect_w *= scale;
    rect_h *= scale;
    let x0 = rng.uniform(0.0, w - rect_w);
    let y0 = rng.uniform(0.0, h - rect_h);
    let side = cfg.out_size;
    let mut out = Image::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            let sx = x0 + rect_w * x as f64 / (side - 1) as f64;
            let sy = y0 + rect_h * y as f64 / (side - 1) as f64;
            for c in 0..3 {
                out.set_pixel(y, x, c, clamp255(sample(img, sy, sx, c)));
            }
        }
    }
    Ok(out)
}

/// Adds one random offset per channel, uniform in the given magnitude.
pub fn rgb_shift(img: &Image, magnitude: f64, rng: &mut SplitMix64) -> Image {
    let shifts = [
        rng.uniform(-magnitude, magnitude),
        rng.uniform(-magnitude, magnitude),
        rng.uniform(-magnitude, magnitude),
    ];
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                out.set_pixel(y, x, c, clamp255(img.pixel(y, x, c) + shifts[c]));
            }
        }
    }
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::argument(format!("alpha {alpha} must lie in [0, 1]")));
    }
    Ok(())
}

pub fn brightness(img: &Image, alpha: f64) -> Result<Image> {
    check_alpha(alpha)?;
    let mut out = img.clone();
    for v in out.data.iter_mut() {
        *v = clamp255(alpha * *v);
    }
    Ok(out)
}

pub fn contrast(img: &Image, alpha: f64) -> Result<Image> {
    check_alpha(alpha)?;
    let g = grey(img);
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let mut out = img.clone();
    for v in out.data.iter_mut() {
        // Algebraically a*v + (1-a)*mean; this arrangement is an exact
        // identity at a = 1 and an exact fixed point when v equals the mean.
        *v = clamp255(*v + (alpha - 1.0) * (*v - mean));
    }
    Ok(out)
}

pub fn saturation(img: &Image, alpha: f64) -> Result<Image> {
    check_alpha(alpha)?;
    let g = grey(img);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let gv = g[y * img.width() + x];
            for c in 0..3 {
                let v = img.pixel(y, x, c);
                // Same arrangement as contrast, per-pixel grey as the anchor.
                out.set_pixel(y, x, c, clamp255(v + (alpha - 1.0) * (v - gv)));
            }
        }
    }
    Ok(out)
}

/// Full augmentation pipeline; each transform is applied independently with
/// the configured probability.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut SplitMix64) -> Result<Image> {
    check_augmentable(img)?;
    let mut out = img.clone();
    if rng.next_f64() < cfg.apply_probability {
        out = flip_h(&out);
    }
    if rng.next_f64() < cfg.apply_probability {
        let deg = rng.uniform(cfg.rotation_range.0, cfg.rotation_range.1);
        out = rotate(&out, deg)?;
    }
    out = crop_procedure(&out, cfg, rng)?;
    if rng.next_f64() < cfg.apply_probability {
        out = rgb_shift(&out, cfg.rgb_shift_magnitude, rng);
    }
    if rng.next_f64() < cfg.apply_probability {
        out = brightness(&out, cfg.alpha)?;
    }
    if rng.next_f64() < cfg.apply_probability {
        out = contrast(&out, cfg.alpha)?;
    }
    if rng.next_f64() < cfg.apply_probability {
        out = saturation(&out, cfg.alpha)?;
    }
    Ok(out)
}

/// ASCII PPM (P3) output.
pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "P3");
    let _ = writeln!(out, "{} {}", img.width(), img.height());
    let _ = writeln!(out, "255");
    for y in 0..img.height() {
        let vals: Vec<String> = (0..img.width())
            .flat_map(|x| (0..3).map(move |c| (img.pixel(y, x, c).round() as u32).to_string()))
            .collect();
        let _ = writeln!(out, "{}", vals.join(" "));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    let magic = tokens
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty ppm file"))?;
    if magic != "P3" {
        return Err(Error::parse(path, 1, format!("expected P3, found {magic:?}")));
    }
    let mut dims = Vec::new();
    for _ in 0..3 {
        let tok = tokens
            .next()
            .ok_or_else(|| Error::parse(path, 1, "truncated ppm header"))?;
        dims.push(
            tok.parse::<usize>()
                .map_err(|_| Error::parse(path, 1, format!("bad header token {tok:?}")))?,
        );
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 {
        return Err(Error::parse(path, 1, "only maxval 255 is supported"));
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for tok in tokens {
        let v = tok
            .parse::<f64>()
            .map_err(|_| Error::parse(path, 0, format!("bad pixel value {tok:?}")))?;
        data.push(v);
    }
    Image::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::new(seed);
        let data = (0..h * w * 3).map(|_| rng.uniform(0.0, 255.0)).collect();
        Image::new(h, w, data).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let img = test_image(10, 14, 1);
        assert_eq!(flip_h(&flip_h(&img)), img);
    }

    #[test]
    fn zero_rotation_is_identity_within_tolerance() {
        let img = test_image(12, 9, 2);
        let rot = rotate(&img, 0.0).unwrap();
        for (a, b) in img.data().iter().zip(rot.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn max_crop_rectangle_of_4_3_image_is_full_image() {
        let img = test_image(480, 640, 3);
        let cfg = AugmentConfig {
            crop_scale_range: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        // With scale pinned at 1 the rect covers the whole image, so the
        // corners of the output sample the corners of the input.
        let mut rng = SplitMix64::new(4);
        let out = crop_procedure(&img, &cfg, &mut rng).unwrap();
        assert_eq!((out.height(), out.width()), (224, 224));
        for c in 0..3 {
            assert!((out.pixel(0, 0, c) - img.pixel(0, 0, c)).abs() < 1e-9);
            assert!((out.pixel(223, 223, c) - img.pixel(479, 639, c)).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_always_emits_output_contract() {
        let img = test_image(100, 37, 5);
        let cfg = AugmentConfig::default();
        let mut rng = SplitMix64::new(6);
        for _ in 0..5 {
            let out = crop_procedure(&img, &cfg, &mut rng).unwrap();
            assert_eq!((out.height(), out.width()), (224, 224));
            assert!(out.data().iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }

    #[test]
    fn alpha_one_is_identity_for_all_photometric_ops() {
        let img = test_image(8, 8, 7);
        assert_eq!(brightness(&img, 1.0).unwrap(), img);
        assert_eq!(contrast(&img, 1.0).unwrap(), img);
        assert_eq!(saturation(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn constant_image_is_contrast_fixed_point() {
        let img = Image::new(8, 8, vec![120.0; 8 * 8 * 3]).unwrap();
        for alpha in [0.0, 0.3, 0.7] {
            assert_eq!(contrast(&img, alpha).unwrap(), img);
        }
    }

    #[test]
    fn grey_image_is_saturation_fixed_point() {
        let mut img = Image::zeros(8, 8);
        let mut rng = SplitMix64::new(8);
        for y in 0..8 {
            for x in 0..8 {
                let v = rng.uniform(0.0, 255.0);
                for c in 0..3 {
                    img.set_pixel(y, x, c, v);
                }
            }
        }
        for alpha in [0.0, 0.3, 0.9] {
            assert_eq!(saturation(&img, alpha).unwrap(), img);
        }
    }

    #[test]
    fn degenerate_image_is_error() {
        let img = test_image(4, 4, 9);
        assert!(matches!(rotate(&img, 3.0), Err(crate::Error::Argument(_))));
        let cfg = AugmentConfig::default();
        let mut rng = SplitMix64::new(10);
        assert!(crop_procedure(&img, &cfg, &mut rng).is_err());
    }

    #[test]
    fn augmentation_is_deterministic_per_seed() {
        let img = test_image(64, 48, 11);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut SplitMix64::stream(5, "aug")).unwrap();
        let b = augment(&img, &cfg, &mut SplitMix64::stream(5, "aug")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = {
            // Integer-valued pixels survive P3 exactly.
            let mut rng = SplitMix64::new(12);
            let data = (0..10 * 8 * 3)
                .map(|_| rng.uniform(0.0, 255.0).round())
                .collect();
            Image::new(8, 10, data).unwrap()
        };
        let path = dir.path().join("img.ppm");
        write_ppm(&img, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
    }
}
