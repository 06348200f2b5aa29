//! Grayscale raster primitives: convolution, Gaussian blur, rank filters,
//! bilinear warps and resizing, Otsu binarization and PNG/JPEG I/O.
//!
//! Intensities follow document conventions: 0 is black ink, 255 is paper.
//! Every operation rounds to nearest with halves away from zero and clamps to
//! `[0, 255]`. Borders replicate the edge pixel for filters; warps fill
//! uncovered output with a caller-supplied value (white for augmentations).

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::ImageFormat;
use num_bigint::BigUint;

use crate::{Error, Result};

pub const WHITE: u8 = 255;
pub const BLACK: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: u8) -> Result<Self> {
        Self::check_dims(width, height)?;
        Ok(GrayImage {
            width,
            height,
            pixels: vec![fill; width as usize * height as usize],
        })
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        Self::check_dims(width, height)?;
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Result<Self> {
        Self::check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    fn check_dims(width: u32, height: u32) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("{width}x{height} has no pixels")));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    /// Pixel at signed coordinates with replicated borders.
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let x = x.clamp(0, self.width as i64 - 1) as u32;
        let y = y.clamp(0, self.height as i64 - 1) as u32;
        self.get(x, y)
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn min_max(&self) -> (u8, u8) {
        let min = self.pixels.iter().copied().min().unwrap_or(0);
        let max = self.pixels.iter().copied().max().unwrap_or(0);
        (min, max)
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.pixels {
            h[p as usize] += 1;
        }
        h
    }

    /// Copies the `w`x`h` block at (`x0`, `y0`) of `src` into `self` at the same position.
    pub fn copy_region_from(&mut self, src: &GrayImage, x0: u32, y0: u32, w: u32, h: u32) {
        let x1 = (x0 + w).min(self.width).min(src.width);
        let y1 = (y0 + h).min(self.height).min(src.height);
        for y in y0..y1 {
            for x in x0..x1 {
                self.put(x, y, src.get(x, y));
            }
        }
    }

    fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions checked at construction")
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self> {
        let g = img.into_luma8();
        let (w, h) = g.dimensions();
        GrayImage::from_raw(w, h, g.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Baseline JPEG at `quality` (1..=100).
    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let enc = JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100));
        self.to_image().write_with_encoder(enc)?;
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_dynamic(image::load_from_memory(bytes)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Saves as PNG, or JPEG (quality 90) for `.jpg`/`.jpeg` paths.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        let bytes = match ext.as_deref() {
            Some("jpg") | Some("jpeg") => self.encode_jpeg(90)?,
            _ => self.encode_png()?,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Nearest-integer rounding (halves away from zero) clamped to the 8-bit range.
pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

/// Square convolution kernel with an odd side of 3, 5 or 7.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    side: usize,
    coeffs: Vec<f64>,
}

impl Kernel {
    pub fn new(side: usize, coeffs: Vec<f64>) -> Result<Self> {
        if ![3, 5, 7].contains(&side) {
            return Err(Error::InvalidKernel(format!("side {side} not in {{3, 5, 7}}")));
        }
        if coeffs.len() != side * side {
            return Err(Error::InvalidKernel(format!(
                "{} coefficients for side {side}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidKernel("non-finite coefficient".into()));
        }
        Ok(Kernel { side, coeffs })
    }

    pub fn identity(side: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; side * side];
        if let Some(c) = coeffs.get_mut(side * side / 2) {
            *c = 1.0;
        }
        Kernel::new(side, coeffs)
    }

    /// Normalized box (mean) filter.
    pub fn box_blur(side: usize) -> Result<Self> {
        let n = (side * side) as f64;
        Kernel::new(side, vec![1.0 / n; side * side])
    }

    /// 3×3 edge-enhancing kernel `[0 -1 0; -1 5 -1; 0 -1 0]`.
    pub fn sharpen() -> Self {
        Kernel::new(3, vec![0.0, -1.0, 0.0, -1.0, 5.0, -1.0, 0.0, -1.0, 0.0]).expect("valid")
    }

    /// Line kernel of `length` taps through the centre at `angle_deg`, normalized.
    /// A length of 1 gives the identity.
    pub fn motion(side: usize, length: usize, angle_deg: f64) -> Result<Self> {
        let mut coeffs = vec![0.0; side * side];
        let c = (side / 2) as f64;
        let (s, co) = angle_deg.to_radians().sin_cos();
        let half = (length.max(1).min(side) as f64 - 1.0) / 2.0;
        let steps = 8 * side;
        for i in 0..=steps {
            let t = if steps == 0 { 0.0 } else { -half + 2.0 * half * i as f64 / steps as f64 };
            let x = (c + t * co).round() as usize;
            let y = (c + t * s).round() as usize;
            coeffs[y * side + x] = 1.0;
        }
        let sum: f64 = coeffs.iter().sum();
        coeffs.iter_mut().for_each(|v| *v /= sum);
        Kernel::new(side, coeffs)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn sum(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    /// Smoothing kernels: non-negative taps summing to 1.
    pub fn is_smoothing(&self) -> bool {
        self.coeffs.iter().all(|&c| c >= 0.0) && (self.sum() - 1.0).abs() < 1e-9
    }
}

/// 2-D convolution (correlation) with replicated borders.
pub fn convolve(img: &GrayImage, kernel: &Kernel) -> GrayImage {
    let r = (kernel.side / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in -r..=r {
                for kx in -r..=r {
                    let k = kernel.coeffs[((ky + r) * kernel.side as i64 + kx + r) as usize];
                    if k != 0.0 {
                        acc += k * img.get_clamped(x + kx, y + ky) as f64;
                    }
                }
            }
            out.push(to_u8(acc));
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Normalized 1-D Gaussian taps. `sigma <= 0` yields a unit impulse.
pub fn gaussian_taps(sigma: f64, ksize: usize) -> Vec<f64> {
    let ksize = ksize.max(1) | 1;
    let c = (ksize / 2) as f64;
    let mut taps = vec![0.0; ksize];
    if sigma <= 0.0 {
        taps[ksize / 2] = 1.0;
        return taps;
    }
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-(d * d) / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Sigma implied by a kernel size when none is given (`0.3((k-1)/2 - 1) + 0.8`).
pub fn sigma_for_ksize(ksize: usize) -> f64 {
    0.3 * ((ksize as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Odd kernel size covering ±3σ.
pub fn ksize_for_sigma(sigma: f64) -> usize {
    if sigma <= 0.0 {
        return 1;
    }
    2 * (3.0 * sigma).ceil() as usize + 1
}

fn separable_f64(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += t * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += t * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing of a real-valued field with replicated borders.
pub fn gaussian_filter_f64(field: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma, ksize_for_sigma(sigma));
    separable_f64(field, width, height, &taps)
}

/// Separable Gaussian blur with an odd kernel size; intermediate values stay in f64.
pub fn gaussian_blur(img: &GrayImage, sigma: f64, ksize: usize) -> GrayImage {
    let taps = gaussian_taps(sigma, ksize);
    let src: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
    let out = separable_f64(&src, img.width as usize, img.height as usize, &taps);
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out.into_iter().map(to_u8).collect(),
    }
}

fn rank_filter(img: &GrayImage, radius: i64, pick: impl Fn(&mut Vec<u8>) -> u8) -> GrayImage {
    let mut window = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height as i64 {
        for x in 0..img.width as i64 {
            window.clear();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    window.push(img.get_clamped(x + dx, y + dy));
                }
            }
            out.push(pick(&mut window));
        }
    }
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: out,
    }
}

/// Median filter over a `ksize`×`ksize` window.
pub fn median_blur(img: &GrayImage, ksize: usize) -> GrayImage {
    rank_filter(img, (ksize / 2) as i64, |w| {
        w.sort_unstable();
        w[w.len() / 2]
    })
}

/// Grayscale erosion (window minimum): dark strokes grow.
pub fn erode(img: &GrayImage, ksize: usize) -> GrayImage {
    rank_filter(img, (ksize / 2) as i64, |w| *w.iter().min().unwrap())
}

/// Grayscale dilation (window maximum): dark strokes thin.
pub fn dilate(img: &GrayImage, ksize: usize) -> GrayImage {
    rank_filter(img, (ksize / 2) as i64, |w| *w.iter().max().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuThreshold {
    /// Pixels `<= threshold` form the dark class.
    pub threshold: u8,
    /// Set for single-valued images, where the threshold is that value.
    pub degenerate: bool,
}

/// Otsu's threshold over the 256-bin histogram.
///
/// Between-class variance is compared exactly in integer arithmetic using
/// `σ²_B ∝ (N·S₀ − n₀·S)² / (n₀·n₁)`; the smallest maximizing threshold wins.
pub fn otsu_threshold(img: &GrayImage) -> OtsuThreshold {
    let hist = img.histogram();
    let (min, max) = img.min_max();
    if min == max {
        return OtsuThreshold {
            threshold: min,
            degenerate: true,
        };
    }
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let total: u128 = hist.iter().enumerate().map(|(v, &c)| v as u128 * c as u128).sum();
    // best = (numerator, denominator) of the variance score; the cross
    // products outgrow u128 on megapixel images
    let mut best: Option<(BigUint, BigUint, u8)> = None;
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    for t in 0..255usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = BigUint::from((n * s0).abs_diff(n0 * total));
        let num = &diff * &diff;
        let den = BigUint::from(n0 * n1);
        let better = match &best {
            None => true,
            Some((bn, bd, _)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((num, den, t as u8));
        }
    }
    let (_, _, threshold) = best.expect("two distinct values give a valid split");
    OtsuThreshold {
        threshold,
        degenerate: false,
    }
}

/// Pixels above `threshold` become white, the rest black.
pub fn binarize(img: &GrayImage, threshold: u8) -> GrayImage {
    img.map(|p| if p > threshold { WHITE } else { BLACK })
}

const COORD_SNAP: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < COORD_SNAP {
        r
    } else {
        v
    }
}

/// Bilinear sample at real coordinates; `None` outside the pixel-centre hull.
pub fn sample_bilinear(img: &GrayImage, sx: f64, sy: f64) -> Option<f64> {
    let (sx, sy) = (snap(sx), snap(sy));
    let (w, h) = (img.width as f64, img.height as f64);
    if !(sx >= 0.0 && sy >= 0.0 && sx <= w - 1.0 && sy <= h - 1.0) {
        return None;
    }
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let p00 = img.get(x0, y0) as f64;
    let p10 = img.get(x1, y0) as f64;
    let p01 = img.get(x0, y1) as f64;
    let p11 = img.get(x1, y1) as f64;
    let top = p00 + (p10 - p00) * fx;
    let bottom = p01 + (p11 - p01) * fx;
    Some(top + (bottom - top) * fy)
}

/// Inverse-mapped warp: output pixel (x, y) samples the source at `mapping(x, y)`.
pub fn warp(
    img: &GrayImage,
    out_width: u32,
    out_height: u32,
    mapping: impl Fn(f64, f64) -> (f64, f64),
    fill: u8,
) -> Result<GrayImage> {
    GrayImage::from_fn(out_width, out_height, |x, y| {
        let (sx, sy) = mapping(x as f64, y as f64);
        sample_bilinear(img, sx, sy).map(to_u8).unwrap_or(fill)
    })
}

/// Same-size warp.
pub fn warp_same(img: &GrayImage, mapping: impl Fn(f64, f64) -> (f64, f64), fill: u8) -> GrayImage {
    warp(img, img.width, img.height, mapping, fill).expect("source dimensions are valid")
}

/// Bilinear resize using pixel-centre alignment and clamped edges.
pub fn resize_bilinear(img: &GrayImage, width: u32, height: u32) -> Result<GrayImage> {
    let fx = img.width as f64 / width as f64;
    let fy = img.height as f64 / height as f64;
    let maxx = img.width as f64 - 1.0;
    let maxy = img.height as f64 - 1.0;
    GrayImage::from_fn(width, height, |x, y| {
        let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, maxx);
        let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, maxy);
        to_u8(sample_bilinear(img, sx, sy).expect("clamped into range"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(w: u32, h: u32, x: u32, y: u32, bg: u8, v: u8) -> GrayImage {
        GrayImage::from_fn(w, h, |px, py| if (px, py) == (x, y) { v } else { bg }).unwrap()
    }

    #[test]
    fn constructors_validate() {
        assert!(GrayImage::new(0, 3, 0).is_err());
        assert!(GrayImage::from_raw(2, 2, vec![0; 3]).is_err());
        assert_eq!(GrayImage::new(3, 2, 9).unwrap().pixels().len(), 6);
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::new(4, vec![0.0; 16]).is_err());
        assert!(Kernel::new(3, vec![0.0; 8]).is_err());
        assert!(Kernel::box_blur(3).unwrap().is_smoothing());
        assert!(!Kernel::sharpen().is_smoothing());
        assert!((Kernel::sharpen().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convolve_constant_is_constant() {
        let img = GrayImage::new(7, 5, 137).unwrap();
        for k in [Kernel::box_blur(3).unwrap(), Kernel::box_blur(5).unwrap(), Kernel::sharpen()] {
            assert_eq!(convolve(&img, &k), img);
        }
    }

    #[test]
    fn convolve_impulse_box() {
        let img = impulse(7, 7, 3, 3, 0, 255);
        let out = convolve(&img, &Kernel::box_blur(3).unwrap());
        // 255 / 9 = 28.33 -> 28
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(out.get(x, y), if inside { 28 } else { 0 }, "({x},{y})");
            }
        }
    }

    #[test]
    fn convolve_identity() {
        let img = GrayImage::from_fn(9, 4, |x, y| (x * 31 + y * 17) as u8).unwrap();
        assert_eq!(convolve(&img, &Kernel::identity(5).unwrap()), img);
    }

    #[test]
    fn convolve_clamps() {
        let img = impulse(5, 5, 2, 2, 200, 0);
        let out = convolve(&img, &Kernel::sharpen());
        assert_eq!(out.get(2, 2), 0);
        assert_eq!(out.get(2, 1), 255);
    }

    #[test]
    fn gaussian_constant_and_identity() {
        let img = GrayImage::new(6, 6, 77).unwrap();
        assert_eq!(gaussian_blur(&img, 1.1, 5), img);
        let noisy = GrayImage::from_fn(10, 10, |x, y| ((x * 97 + y * 53) % 256) as u8).unwrap();
        assert_eq!(gaussian_blur(&noisy, 0.0, 5), noisy);
        assert_eq!(gaussian_blur(&noisy, 1e-3, 5), noisy);
    }

    #[test]
    fn gaussian_impulse_mass_preserved() {
        let img = impulse(15, 15, 7, 7, 0, 255);
        let out = gaussian_blur(&img, 1.0, 5);
        let sum: i64 = out.pixels().iter().map(|&p| p as i64).sum();
        // 25 taps each rounded by at most 0.5
        assert!((sum - 255).abs() <= 13, "sum {sum}");
    }

    #[test]
    fn gaussian_taps_normalized() {
        for (s, k) in [(0.5, 3), (1.1, 5), (0.9, 7), (2.0, 7)] {
            let t = gaussian_taps(s, k);
            assert_eq!(t.len(), k);
            assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((sigma_for_ksize(5) - 1.1).abs() < 1e-12);
        assert_eq!(ksize_for_sigma(0.9), 7);
    }

    #[test]
    fn rank_filters() {
        let img = impulse(5, 5, 2, 2, 255, 0);
        assert_eq!(median_blur(&img, 3), GrayImage::new(5, 5, 255).unwrap());
        let grown = erode(&img, 3);
        assert_eq!(grown.pixels().iter().filter(|&&p| p == 0).count(), 9);
        assert_eq!(dilate(&img, 3), GrayImage::new(5, 5, 255).unwrap());
    }

    #[test]
    fn otsu_degenerate() {
        let t = otsu_threshold(&GrayImage::new(4, 4, 90).unwrap());
        assert_eq!(t, OtsuThreshold { threshold: 90, degenerate: true });
    }

    #[test]
    fn otsu_two_levels() {
        let img = GrayImage::from_fn(10, 4, |x, _| if x < 5 { 10 } else { 200 }).unwrap();
        let t = otsu_threshold(&img);
        assert!(!t.degenerate);
        assert!((10..200).contains(&t.threshold));
        assert_eq!(binarize(&img, t.threshold).get(0, 0), 0);
        assert_eq!(binarize(&img, t.threshold).get(9, 0), 255);
    }

    #[test]
    fn otsu_black_white_symmetric() {
        let img = GrayImage::from_fn(8, 8, |x, _| if x % 2 == 0 { 0 } else { 255 }).unwrap();
        let t = otsu_threshold(&img).threshold;
        let (dark, light): (Vec<u8>, Vec<u8>) = img.pixels().iter().partition(|&&p| p <= t);
        assert!(dark.iter().all(|&p| p == 0));
        assert!(light.iter().all(|&p| p == 255));
    }

    #[test]
    fn binarize_cases() {
        let img = GrayImage::from_fn(4, 1, |x, _| [3u8, 50, 51, 250][x as usize]).unwrap();
        assert_eq!(binarize(&img, 255).pixels(), &[0, 0, 0, 0]);
        assert_eq!(binarize(&img, 0).pixels(), &[255, 255, 255, 255]);
        assert_eq!(binarize(&img, 50).pixels(), &[0, 0, 255, 255]);
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = GrayImage::from_fn(6, 4, |x, y| (x * 40 + y) as u8).unwrap();
        assert_eq!(warp_same(&img, |x, y| (x, y), 255), img);
        let shifted = warp_same(&img, |x, y| (x - 2.0, y), 255);
        for y in 0..4 {
            assert_eq!(shifted.get(0, y), 255);
            assert_eq!(shifted.get(1, y), 255);
            for x in 2..6 {
                assert_eq!(shifted.get(x, y), img.get(x - 2, y));
            }
        }
    }

    #[test]
    fn rotation_180_twice_is_identity() {
        let img = GrayImage::from_fn(11, 7, |x, y| ((x * 23 + y * 41) % 256) as u8).unwrap();
        let (cx, cy) = (5.0, 3.0);
        let rot = |im: &GrayImage| {
            let (s, c) = std::f64::consts::PI.sin_cos();
            warp_same(im, move |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            }, 255)
        };
        let back = rot(&rot(&img));
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((*a as i16 - *b as i16).abs() <= 1);
        }
    }

    #[test]
    fn resize_dimensions() {
        let img = GrayImage::new(100, 30, 200).unwrap();
        let out = resize_bilinear(&img, 120, 30).unwrap();
        assert_eq!(out.dimensions(), (120, 30));
        assert!(out.pixels().iter().all(|&p| p == 200));
    }

    #[test]
    fn png_and_jpeg_round_trip() {
        let img = GrayImage::from_fn(16, 8, |x, y| (x * 16 + y) as u8).unwrap();
        assert_eq!(GrayImage::decode(&img.encode_png().unwrap()).unwrap(), img);
        let flat = GrayImage::new(16, 16, 128).unwrap();
        let j = GrayImage::decode(&flat.encode_jpeg(50).unwrap()).unwrap();
        assert_eq!(j.dimensions(), (16, 16));
        assert!(j.pixels().iter().all(|&p| (p as i16 - 128).abs() <= 2));
    }

    #[test]
    fn motion_kernel_is_normalized() {
        for angle in [0.0, 45.0, 90.0, 133.0] {
            let k = Kernel::motion(5, 5, angle).unwrap();
            assert!(k.is_smoothing());
        }
        assert_eq!(Kernel::motion(3, 1, 30.0).unwrap(), Kernel::identity(3).unwrap());
    }
}
