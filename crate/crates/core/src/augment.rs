//! Image augmentation: the 20-operator line-image suite, the probabilistic
//! noise pipeline used for synthetic renders, and multiplicity expansion of
//! manifests.
//!
//! Every operator is a pure function of `(image, spec)`: all randomness comes
//! from an [`Rng`] seeded with `spec.seed`, so a stored [`AugSpec`] replays to
//! the same pixels.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imaging::{
    convolve, dilate, erode, gaussian_blur, gaussian_filter_f64, ksize_for_sigma, median_blur,
    resize_bilinear, sigma_for_ksize, to_u8, warp_same, GrayImage, Kernel, WHITE,
};
use crate::pipeline::{Augmentation, Manifest, Record, Split};
use crate::rng::{derive_seed, Rng};
use crate::{Error, Result};

/// Closed real interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

/// Closed integer interval, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange(pub i64, pub i64);

impl Range {
    pub fn fixed(v: f64) -> Self {
        Range(v, v)
    }

    fn draw(self, rng: &mut Rng) -> f64 {
        rng.uniform(self.0, self.1)
    }

    fn check(self, name: &str, min: f64, max: f64) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite()) || self.0 > self.1 || self.0 < min || self.1 > max {
            return Err(Error::InvalidAugmentation(format!(
                "{name} range [{}, {}] outside [{min}, {max}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

impl IntRange {
    fn draw(self, rng: &mut Rng) -> i64 {
        rng.int_inclusive(self.0, self.1)
    }

    fn check(self, name: &str, min: i64, max: i64) -> Result<()> {
        if self.0 > self.1 || self.0 < min || self.1 > max {
            return Err(Error::InvalidAugmentation(format!(
                "{name} range [{}, {}] outside [{min}, {max}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

macro_rules! defaults {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

defaults! {
    d_rotation: Range = Range(-3.0, 3.0);
    d_shift: IntRange = IntRange(5, 20);
    d_perspective: Range = Range(0.0, 0.06);
    d_shear: Range = Range(-0.2, 0.2);
    d_stretch: f64 = 1.2;
    d_blur_ksize: usize = 5;
    d_motion_k: IntRange = IntRange(3, 5);
    d_motion_angle: Range = Range(0.0, 180.0);
    d_jpeg: IntRange = IntRange(30, 70);
    d_jitter: IntRange = IntRange(8, 16);
    d_noise_sigma: Range = Range(5.0, 15.0);
    d_elastic_alpha: Range = Range(1.5, 3.0);
    d_elastic_sigma: Range = Range(0.6, 1.0);
    d_saltpepper: Range = Range(0.005, 0.02);
    d_patches: IntRange = IntRange(1, 3);
    d_patch_size: Range = Range(0.1, 0.2);
    d_sine_amp: Range = Range(1.0, 3.0);
    d_sine_period: Range = Range(40.0, 120.0);
    d_bend: Range = Range(-4.0, 4.0);
    d_med_ksize: usize = 3;
    d_morph_ksize: usize = 3;
    d_pa_scale: Range = Range(0.005, 0.015);
    d_pa_grid: usize = 4;
    d_dropout: Range = Range(0.01, 0.03);
    d_gblur_sigma: Range = Range(0.5, 0.9);
    d_contrast: Range = Range(0.7, 1.4);
    d_brightness: Range = Range(0.85, 1.15);
    d_laplace: f64 = 0.01;
    d_vshift: Range = Range(-0.015, 0.015);
    d_one: f64 = 1.0;
}

/// One operator and its parameter ranges. Values are drawn per application.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugOp {
    /// Rotation about the image centre, degrees.
    Rotation {
        #[serde(default = "d_rotation")]
        degrees: Range,
    },
    /// Translation; magnitudes per axis, sign drawn independently.
    Shift {
        #[serde(default = "d_shift")]
        x: IntRange,
        #[serde(default = "d_shift")]
        y: IntRange,
    },
    /// Corner displacement as a fraction of width/height.
    Perspective {
        #[serde(default = "d_perspective")]
        strength: Range,
    },
    /// Horizontal shear factor.
    Shear {
        #[serde(default = "d_shear")]
        factor: Range,
    },
    #[serde(rename = "hstretch")]
    HStretch {
        #[serde(default = "d_stretch")]
        factor: f64,
    },
    #[serde(rename = "vstretch")]
    VStretch {
        #[serde(default = "d_stretch")]
        factor: f64,
    },
    /// Gaussian blur; sigma follows from the kernel size.
    Blur {
        #[serde(default = "d_blur_ksize")]
        ksize: usize,
    },
    MotionBlur {
        #[serde(default = "d_motion_k")]
        k: IntRange,
        #[serde(default = "d_motion_angle")]
        angle: Range,
    },
    /// Real JPEG encode/decode round trip.
    Jpeg {
        #[serde(default = "d_jpeg")]
        quality: IntRange,
    },
    /// Uniform integer noise of amplitude drawn from the range.
    Jitter {
        #[serde(default = "d_jitter")]
        amplitude: IntRange,
    },
    GaussianNoise {
        #[serde(default = "d_noise_sigma")]
        sigma: Range,
    },
    #[serde(rename = "elasticblur")]
    ElasticBlur {
        #[serde(default = "d_elastic_alpha")]
        alpha: Range,
        #[serde(default = "d_elastic_sigma")]
        sigma: Range,
        #[serde(default = "d_blur_ksize")]
        ksize: usize,
    },
    #[serde(rename = "saltpepper")]
    SaltPepper {
        #[serde(default = "d_saltpepper")]
        density: Range,
    },
    /// Kernel-5 blur inside square boxes sized as a fraction of line height.
    #[serde(rename = "blurredpatches")]
    BlurredPatches {
        #[serde(default = "d_patches")]
        count: IntRange,
        #[serde(default = "d_patch_size")]
        size: Range,
    },
    /// Vertical displacement following a sine of x.
    Sine {
        #[serde(default = "d_sine_amp")]
        amplitude: Range,
        #[serde(default = "d_sine_period")]
        period: Range,
    },
    /// Parabolic bend of the baseline, peak offset in pixels.
    Horizontal {
        #[serde(default = "d_bend")]
        bend: Range,
    },
    Elastic {
        #[serde(default = "d_elastic_alpha")]
        alpha: Range,
        #[serde(default = "d_elastic_sigma")]
        sigma: Range,
    },
    MedBlur {
        #[serde(default = "d_med_ksize")]
        ksize: usize,
    },
    /// Erosion or dilation, chosen with equal odds.
    Morph {
        #[serde(default = "d_morph_ksize")]
        ksize: usize,
    },
    Sharpen,
    /// Random displacement of a regular control grid, triangulated.
    PiecewiseAffine {
        #[serde(default = "d_pa_scale")]
        scale: Range,
        #[serde(default = "d_pa_grid")]
        grid: usize,
    },
    /// Pixels set to black at the drawn rate.
    Dropout {
        #[serde(default = "d_dropout")]
        rate: Range,
    },
    GaussianBlur {
        #[serde(default = "d_gblur_sigma")]
        sigma: Range,
    },
    /// `128 + a(v - 128)`.
    LinearContrast {
        #[serde(default = "d_contrast")]
        alpha: Range,
    },
    /// Multiplicative brightness.
    Brightness {
        #[serde(default = "d_brightness")]
        factor: Range,
    },
    /// Per-pixel Laplace noise; `scale` is a fraction of the 255 range.
    LaplaceNoise {
        #[serde(default = "d_laplace")]
        scale: f64,
    },
    /// Translation along y as a fraction of height.
    VerticalTranslate {
        #[serde(default = "d_vshift")]
        fraction: Range,
    },
    /// 3×3 convolution, a box filter unless coefficients are given.
    ConvolutionBlur {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kernel: Option<Vec<f64>>,
    },
}

/// The twenty line-image operators, with default parameters.
pub const SUITE_KINDS: [&str; 20] = [
    "rotation",
    "shift",
    "perspective",
    "shear",
    "hstretch",
    "vstretch",
    "blur",
    "motion_blur",
    "jpeg",
    "jitter",
    "gaussian_noise",
    "elasticblur",
    "saltpepper",
    "blurredpatches",
    "sine",
    "horizontal",
    "elastic",
    "med_blur",
    "morph",
    "sharpen",
];

impl AugOp {
    pub fn kind(&self) -> &'static str {
        match self {
            AugOp::Rotation { .. } => "rotation",
            AugOp::Shift { .. } => "shift",
            AugOp::Perspective { .. } => "perspective",
            AugOp::Shear { .. } => "shear",
            AugOp::HStretch { .. } => "hstretch",
            AugOp::VStretch { .. } => "vstretch",
            AugOp::Blur { .. } => "blur",
            AugOp::MotionBlur { .. } => "motion_blur",
            AugOp::Jpeg { .. } => "jpeg",
            AugOp::Jitter { .. } => "jitter",
            AugOp::GaussianNoise { .. } => "gaussian_noise",
            AugOp::ElasticBlur { .. } => "elasticblur",
            AugOp::SaltPepper { .. } => "saltpepper",
            AugOp::BlurredPatches { .. } => "blurredpatches",
            AugOp::Sine { .. } => "sine",
            AugOp::Horizontal { .. } => "horizontal",
            AugOp::Elastic { .. } => "elastic",
            AugOp::MedBlur { .. } => "med_blur",
            AugOp::Morph { .. } => "morph",
            AugOp::Sharpen => "sharpen",
            AugOp::PiecewiseAffine { .. } => "piecewise_affine",
            AugOp::Dropout { .. } => "dropout",
            AugOp::GaussianBlur { .. } => "gaussian_blur",
            AugOp::LinearContrast { .. } => "linear_contrast",
            AugOp::Brightness { .. } => "brightness",
            AugOp::LaplaceNoise { .. } => "laplace_noise",
            AugOp::VerticalTranslate { .. } => "vertical_translate",
            AugOp::ConvolutionBlur { .. } => "convolution_blur",
        }
    }

    /// Operator with default parameters for a kind name.
    pub fn from_kind(kind: &str) -> Result<Self> {
        serde_json::from_value(serde_json::json!({ "kind": kind }))
            .map_err(|_| Error::InvalidAugmentation(format!("unknown augmentation kind {kind:?}")))
    }

    fn is_geometric(&self) -> bool {
        matches!(
            self,
            AugOp::Rotation { .. }
                | AugOp::Shift { .. }
                | AugOp::Perspective { .. }
                | AugOp::Shear { .. }
                | AugOp::HStretch { .. }
                | AugOp::VStretch { .. }
                | AugOp::ElasticBlur { .. }
                | AugOp::Sine { .. }
                | AugOp::Horizontal { .. }
                | AugOp::Elastic { .. }
                | AugOp::PiecewiseAffine { .. }
                | AugOp::VerticalTranslate { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let odd_kernel = |name: &str, k: usize| {
            if [3, 5, 7].contains(&k) {
                Ok(())
            } else {
                Err(Error::InvalidAugmentation(format!("{name} ksize {k} not in {{3, 5, 7}}")))
            }
        };
        match self {
            AugOp::Rotation { degrees } => degrees.check("degrees", -45.0, 45.0),
            AugOp::Shift { x, y } => {
                x.check("shift x", 0, 10_000)?;
                y.check("shift y", 0, 10_000)
            }
            AugOp::Perspective { strength } => strength.check("strength", 0.0, 0.45),
            AugOp::Shear { factor } => factor.check("shear", -1.0, 1.0),
            AugOp::HStretch { factor } | AugOp::VStretch { factor } => {
                Range::fixed(*factor).check("stretch factor", 0.1, 10.0)
            }
            AugOp::Blur { ksize } => odd_kernel("blur", *ksize),
            AugOp::MotionBlur { k, angle } => {
                k.check("motion k", 1, 7)?;
                angle.check("angle", -360.0, 360.0)
            }
            AugOp::Jpeg { quality } => quality.check("quality", 1, 100),
            AugOp::Jitter { amplitude } => amplitude.check("amplitude", 0, 255),
            AugOp::GaussianNoise { sigma } => sigma.check("sigma", 0.0, 255.0),
            AugOp::ElasticBlur { alpha, sigma, ksize } => {
                alpha.check("alpha", 0.0, 100.0)?;
                sigma.check("sigma", 0.0, 50.0)?;
                odd_kernel("elasticblur", *ksize)
            }
            AugOp::SaltPepper { density } => density.check("density", 0.0, 1.0),
            AugOp::BlurredPatches { count, size } => {
                count.check("count", 0, 100)?;
                size.check("size", 0.0, 1.0)
            }
            AugOp::Sine { amplitude, period } => {
                amplitude.check("amplitude", 0.0, 1000.0)?;
                period.check("period", 1.0, 1e6)
            }
            AugOp::Horizontal { bend } => bend.check("bend", -1000.0, 1000.0),
            AugOp::Elastic { alpha, sigma } => {
                alpha.check("alpha", 0.0, 100.0)?;
                sigma.check("sigma", 0.0, 50.0)
            }
            AugOp::MedBlur { ksize } => odd_kernel("med_blur", *ksize),
            AugOp::Morph { ksize } => odd_kernel("morph", *ksize),
            AugOp::Sharpen => Ok(()),
            AugOp::PiecewiseAffine { scale, grid } => {
                scale.check("scale", 0.0, 0.25)?;
                if *grid < 2 || *grid > 64 {
                    return Err(Error::InvalidAugmentation(format!("grid {grid} not in [2, 64]")));
                }
                Ok(())
            }
            AugOp::Dropout { rate } => rate.check("rate", 0.0, 1.0),
            AugOp::GaussianBlur { sigma } => sigma.check("sigma", 0.0, 20.0),
            AugOp::LinearContrast { alpha } => alpha.check("alpha", 0.0, 10.0),
            AugOp::Brightness { factor } => factor.check("factor", 0.0, 10.0),
            AugOp::LaplaceNoise { scale } => Range::fixed(*scale).check("scale", 0.0, 1.0),
            AugOp::VerticalTranslate { fraction } => fraction.check("fraction", -1.0, 1.0),
            AugOp::ConvolutionBlur { kernel } => match kernel {
                Some(c) => Kernel::new(3, c.clone()).map(|_| ()),
                None => Ok(()),
            },
        }
    }
}

/// An operator, its firing probability in pipeline mode, and its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    #[serde(flatten)]
    pub op: AugOp,
    #[serde(default = "d_one")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AugSpec {
    pub fn new(op: AugOp) -> Self {
        AugSpec { op, p: 1.0, seed: 0 }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidAugmentation(format!("p = {} outside [0, 1]", self.p)));
        }
        self.op.validate()
    }
}

/// The 20-operator pool with default parameters.
pub fn suite_pool() -> Vec<AugSpec> {
    SUITE_KINDS
        .iter()
        .map(|k| AugSpec::new(AugOp::from_kind(k).expect("suite kinds parse")))
        .collect()
}

/// Reads a JSON list of specs. Omitted fields take their defaults.
pub fn read_pool(path: impl AsRef<Path>) -> Result<Vec<AugSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pool: Vec<AugSpec> =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    for spec in &pool {
        spec.validate()?;
    }
    Ok(pool)
}

/// Applies one operator with parameters drawn from `spec.seed`.
pub fn apply(img: &GrayImage, spec: &AugSpec) -> Result<GrayImage> {
    spec.validate()?;
    if spec.op.is_geometric() && img.dimensions() == (1, 1) {
        return Ok(img.clone());
    }
    let mut rng = Rng::new(spec.seed);
    apply_op(img, &spec.op, &mut rng)
}

fn centre(img: &GrayImage) -> (f64, f64) {
    ((img.width() as f64 - 1.0) / 2.0, (img.height() as f64 - 1.0) / 2.0)
}

fn per_pixel(img: &GrayImage, mut f: impl FnMut(u8) -> f64) -> GrayImage {
    let pixels = img.pixels().iter().map(|&p| to_u8(f(p))).collect();
    GrayImage::from_raw(img.width(), img.height(), pixels).expect("same dimensions")
}

fn signed(rng: &mut Rng, magnitude: f64) -> f64 {
    if rng.chance(0.5) {
        -magnitude
    } else {
        magnitude
    }
}

fn apply_op(img: &GrayImage, op: &AugOp, rng: &mut Rng) -> Result<GrayImage> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    Ok(match op {
        AugOp::Rotation { degrees } => {
            let theta = degrees.draw(rng).to_radians();
            rotate(img, theta)
        }
        AugOp::Shift { x, y } => {
            let mx = x.draw(rng) as f64;
            let dx = signed(rng, mx);
            let my = y.draw(rng) as f64;
            let dy = signed(rng, my);
            warp_same(img, |px, py| (px - dx, py - dy), WHITE)
        }
        AugOp::Perspective { strength } => {
            let corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)];
            let inward = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
            let mut moved = corners;
            for (m, dir) in moved.iter_mut().zip(inward) {
                m.0 += dir.0 * strength.draw(rng) * (w - 1.0);
                m.1 += dir.1 * strength.draw(rng) * (h - 1.0);
            }
            // output corner `moved[i]` shows source corner `corners[i]`
            let hmat = homography(&moved, &corners).unwrap_or_else(identity_homography);
            warp_same(img, |x, y| apply_homography(&hmat, x, y), WHITE)
        }
        AugOp::Shear { factor } => {
            let s = factor.draw(rng);
            let (_, cy) = centre(img);
            warp_same(img, |x, y| (x - s * (y - cy), y), WHITE)
        }
        AugOp::HStretch { factor } => {
            let nw = ((w * factor).round() as u32).max(1);
            resize_bilinear(img, nw, img.height())?
        }
        AugOp::VStretch { factor } => {
            let nh = ((h * factor).round() as u32).max(1);
            resize_bilinear(img, img.width(), nh)?
        }
        AugOp::Blur { ksize } => gaussian_blur(img, sigma_for_ksize(*ksize), *ksize),
        AugOp::MotionBlur { k, angle } => {
            let len = k.draw(rng).max(1) as usize;
            let a = angle.draw(rng);
            let side = (len | 1).clamp(3, 7);
            convolve(img, &Kernel::motion(side, len, a)?)
        }
        AugOp::Jpeg { quality } => {
            let q = quality.draw(rng) as u8;
            GrayImage::decode(&img.encode_jpeg(q)?)?
        }
        AugOp::Jitter { amplitude } => {
            let a = amplitude.draw(rng);
            per_pixel(img, |p| p as f64 + rng.int_inclusive(-a, a) as f64)
        }
        AugOp::GaussianNoise { sigma } => {
            let s = sigma.draw(rng);
            per_pixel(img, |p| p as f64 + s * rng.normal())
        }
        AugOp::ElasticBlur { alpha, sigma, ksize } => {
            let warped = elastic(img, alpha.draw(rng), sigma.draw(rng), rng);
            gaussian_blur(&warped, sigma_for_ksize(*ksize), *ksize)
        }
        AugOp::SaltPepper { density } => {
            let d = density.draw(rng);
            per_pixel(img, |p| {
                let u = rng.next_f64();
                if u < d / 2.0 {
                    0.0
                } else if u < d {
                    255.0
                } else {
                    p as f64
                }
            })
        }
        AugOp::BlurredPatches { count, size } => {
            let n = count.draw(rng).max(0);
            let blurred = gaussian_blur(img, sigma_for_ksize(5), 5);
            let mut out = img.clone();
            for _ in 0..n {
                let side = ((size.draw(rng) * h).round() as u32).clamp(1, img.height());
                let bw = side.min(img.width());
                let x0 = rng.below((img.width() - bw + 1) as u64) as u32;
                let y0 = rng.below((img.height() - side + 1) as u64) as u32;
                out.copy_region_from(&blurred, x0, y0, bw, side);
            }
            out
        }
        AugOp::Sine { amplitude, period } => {
            let a = amplitude.draw(rng);
            let per = period.draw(rng);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            warp_same(
                img,
                |x, y| (x, y + a * (std::f64::consts::TAU * x / per + phase).sin()),
                WHITE,
            )
        }
        AugOp::Horizontal { bend } => {
            let c = bend.draw(rng);
            let (cx, _) = centre(img);
            let half = cx.max(1.0);
            warp_same(
                img,
                |x, y| {
                    let t = (x - cx) / half;
                    (x, y + c * (1.0 - t * t))
                },
                WHITE,
            )
        }
        AugOp::Elastic { alpha, sigma } => {
            let a = alpha.draw(rng);
            let s = sigma.draw(rng);
            elastic(img, a, s, rng)
        }
        AugOp::MedBlur { ksize } => median_blur(img, *ksize),
        AugOp::Morph { ksize } => {
            if rng.chance(0.5) {
                erode(img, *ksize)
            } else {
                dilate(img, *ksize)
            }
        }
        AugOp::Sharpen => convolve(img, &Kernel::sharpen()),
        AugOp::PiecewiseAffine { scale, grid } => {
            let s = scale.draw(rng);
            piecewise_affine(img, s, *grid, rng)
        }
        AugOp::Dropout { rate } => {
            let r = rate.draw(rng);
            per_pixel(img, |p| if rng.chance(r) { 0.0 } else { p as f64 })
        }
        AugOp::GaussianBlur { sigma } => {
            let s = sigma.draw(rng);
            gaussian_blur(img, s, ksize_for_sigma(s))
        }
        AugOp::LinearContrast { alpha } => {
            let a = alpha.draw(rng);
            per_pixel(img, |p| 128.0 + a * (p as f64 - 128.0))
        }
        AugOp::Brightness { factor } => {
            let f = factor.draw(rng);
            per_pixel(img, |p| p as f64 * f)
        }
        AugOp::LaplaceNoise { scale } => {
            let b = scale * 255.0;
            per_pixel(img, |p| p as f64 + rng.laplace(b))
        }
        AugOp::VerticalTranslate { fraction } => {
            let dy = fraction.draw(rng) * h;
            warp_same(img, |x, y| (x, y - dy), WHITE)
        }
        AugOp::ConvolutionBlur { kernel } => {
            let k = match kernel {
                Some(c) => Kernel::new(3, c.clone())?,
                None => Kernel::box_blur(3)?,
            };
            convolve(img, &k)
        }
    })
}

fn rotate(img: &GrayImage, theta: f64) -> GrayImage {
    let (cx, cy) = centre(img);
    let (s, c) = theta.sin_cos();
    warp_same(
        img,
        |x, y| {
            let (dx, dy) = (x - cx, y - cy);
            (cx + c * dx + s * dy, cy - s * dx + c * dy)
        },
        WHITE,
    )
}

fn elastic(img: &GrayImage, alpha: f64, sigma: f64, rng: &mut Rng) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let field = |rng: &mut Rng| {
        let raw: Vec<f64> = (0..w * h).map(|_| rng.uniform(-1.0, 1.0)).collect();
        gaussian_filter_f64(&raw, w, h, sigma)
    };
    let fx = field(rng);
    let fy = field(rng);
    warp_same(
        img,
        |x, y| {
            let i = y as usize * w + x as usize;
            (x + alpha * fx[i], y + alpha * fy[i])
        },
        WHITE,
    )
}

fn piecewise_affine(img: &GrayImage, scale: f64, grid: usize, rng: &mut Rng) -> GrayImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let step_x = (w - 1.0) / (grid - 1) as f64;
    let step_y = (h - 1.0) / (grid - 1) as f64;
    let mut disp = vec![(0.0, 0.0); grid * grid];
    for d in disp.iter_mut() {
        let dx = rng.normal() * scale * w;
        let dy = rng.normal() * scale * h;
        *d = (dx, dy);
    }
    let at = |c: usize, r: usize| disp[r * grid + c];
    warp_same(
        img,
        |x, y| {
            let gx = if step_x > 0.0 { x / step_x } else { 0.0 };
            let gy = if step_y > 0.0 { y / step_y } else { 0.0 };
            let c = (gx.floor() as usize).min(grid - 2);
            let r = (gy.floor() as usize).min(grid - 2);
            let u = gx - c as f64;
            let v = gy - r as f64;
            // split each cell along its main diagonal
            let (d0, d1, d2, wu, wv) = if u >= v {
                (at(c, r), at(c + 1, r), at(c + 1, r + 1), u - v, v)
            } else {
                (at(c, r), at(c, r + 1), at(c + 1, r + 1), v - u, u)
            };
            let w0 = 1.0 - wu - wv;
            let dx = w0 * d0.0 + wu * d1.0 + wv * d2.0;
            let dy = w0 * d0.1 + wu * d1.1 + wv * d2.1;
            (x - dx, y - dy)
        },
        WHITE,
    )
}

type Homography = SMatrix<f64, 3, 3>;

fn identity_homography() -> Homography {
    Homography::identity()
}

/// Projective map taking each `from[i]` to `to[i]`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<Homography> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = from[i];
        let (u, v) = to[i];
        let r = 2 * i;
        a.set_row(r, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &nalgebra::RowSVector::<f64, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let sol = a.lu().solve(&b)?;
    Some(Homography::new(
        sol[0], sol[1], sol[2], sol[3], sol[4], sol[5], sol[6], sol[7], 1.0,
    ))
}

fn apply_homography(hm: &Homography, x: f64, y: f64) -> (f64, f64) {
    let d = hm[(2, 0)] * x + hm[(2, 1)] * y + hm[(2, 2)];
    (
        (hm[(0, 0)] * x + hm[(0, 1)] * y + hm[(0, 2)]) / d,
        (hm[(1, 0)] * x + hm[(1, 1)] * y + hm[(1, 2)]) / d,
    )
}

/// Ordered stages, each firing with its own probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePipeline {
    pub stages: Vec<AugSpec>,
}

impl Default for NoisePipeline {
    /// Degradation stages for synthetic renders, in application order.
    fn default() -> Self {
        let stage = |op: AugOp, p: f64| AugSpec::new(op).with_p(p);
        NoisePipeline {
            stages: vec![
                stage(AugOp::PiecewiseAffine { scale: d_pa_scale(), grid: d_pa_grid() }, 0.6),
                stage(AugOp::Elastic { alpha: d_elastic_alpha(), sigma: d_elastic_sigma() }, 0.5),
                stage(AugOp::MotionBlur { k: d_motion_k(), angle: d_motion_angle() }, 0.4),
                stage(AugOp::Dropout { rate: d_dropout() }, 0.4),
                stage(AugOp::GaussianBlur { sigma: d_gblur_sigma() }, 0.4),
                stage(AugOp::LinearContrast { alpha: d_contrast() }, 0.3),
                stage(AugOp::Brightness { factor: d_brightness() }, 0.3),
                stage(AugOp::LaplaceNoise { scale: d_laplace() }, 0.3),
                stage(AugOp::VerticalTranslate { fraction: d_vshift() }, 0.5),
                stage(AugOp::ConvolutionBlur { kernel: None }, 1.0),
            ],
        }
    }
}

impl NoisePipeline {
    /// Pipeline with no stages (renders pass through untouched).
    pub fn none() -> Self {
        NoisePipeline { stages: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.iter().try_for_each(AugSpec::validate)
    }

    pub fn with_all_p(mut self, p: f64) -> Self {
        self.stages.iter_mut().for_each(|s| s.p = p);
        self
    }
}

/// Runs the stages in order. Per stage, one draw decides firing and one draw
/// seeds the stage, whether or not it fires, so stage streams do not shift
/// when probabilities change.
pub fn apply_pipeline(img: &GrayImage, pipeline: &NoisePipeline, seed: u64) -> Result<GrayImage> {
    pipeline.validate()?;
    let mut rng = Rng::new(seed);
    let mut cur = img.clone();
    for stage in &pipeline.stages {
        let fire = rng.chance(stage.p);
        let stage_seed = rng.next_u64();
        if fire {
            cur = apply(&cur, &stage.clone().with_seed(stage_seed))?;
        }
    }
    Ok(cur)
}

/// Image path of the `n`-th variant of `image`: `dir/stem_augNN.png`.
pub fn variant_image_path(image: &str, n: usize) -> String {
    let p = Path::new(image);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let name = format!("{stem}_aug{n:02}.png");
    match p.parent().and_then(|d| d.to_str()).filter(|d| !d.is_empty()) {
        Some(dir) => format!("{dir}/{name}"),
        None => name,
    }
}

pub fn variant_id(id: &str, n: usize) -> String {
    format!("{id}~aug{n:02}")
}

/// Operators for the `k` variants of item `item`: a shuffled pass over the
/// pool without replacement, then uniform draws with replacement.
pub fn variant_ops(pool_len: usize, k: usize, base_seed: u64, item: usize) -> Vec<usize> {
    let mut rng = Rng::new(derive_seed(base_seed, &[item as u64]));
    let mut order: Vec<usize> = (0..pool_len).collect();
    rng.shuffle(&mut order);
    (0..k)
        .map(|v| {
            if v < pool_len {
                order[v]
            } else {
                rng.below(pool_len as u64) as usize
            }
        })
        .collect()
}

/// Each record followed by `k` augmented variants; `(k + 1) * N` records.
///
/// Variant `v` of item `j` is seeded with `derive_seed(base_seed, [j, v])`.
/// Variants copy the transcription, split and stage of their source.
pub fn expand_dataset(manifest: &Manifest, k: usize, pool: &[AugSpec], base_seed: u64) -> Result<Manifest> {
    expand_where(manifest, k, pool, base_seed, |_| true)
}

/// Like [`expand_dataset`] but only records tagged `train` receive variants.
pub fn expand_train_split(manifest: &Manifest, k: usize, pool: &[AugSpec], base_seed: u64) -> Result<Manifest> {
    expand_where(manifest, k, pool, base_seed, |r| r.split == Some(Split::Train))
}

fn expand_where(
    manifest: &Manifest,
    k: usize,
    pool: &[AugSpec],
    base_seed: u64,
    select: impl Fn(&Record) -> bool,
) -> Result<Manifest> {
    if k > 0 && pool.is_empty() {
        return Err(Error::InvalidAugmentation("empty operator pool".into()));
    }
    for spec in pool {
        spec.validate()?;
    }
    let mut out = Vec::with_capacity(manifest.len() * (k + 1));
    for (j, rec) in manifest.records.iter().enumerate() {
        out.push(rec.clone());
        if !select(rec) {
            continue;
        }
        for (v, op) in variant_ops(pool.len(), k, base_seed, j).into_iter().enumerate() {
            let spec = pool[op].clone().with_seed(derive_seed(base_seed, &[j as u64, v as u64]));
            let mut var = rec.clone();
            var.id = variant_id(&rec.id, v + 1);
            var.image = variant_image_path(&rec.image, v + 1);
            var.provenance.source_id = rec.id.clone();
            var.provenance.augmentation = Augmentation::Applied(spec);
            out.push(var);
        }
    }
    let m = Manifest::new(out);
    m.validate()?;
    Ok(m)
}

/// Writes the image of every augmented record under `root`, reading sources
/// from the same root. Work is spread over the rayon pool; output bytes do not
/// depend on scheduling.
pub fn materialize_variants(manifest: &Manifest, root: &Path) -> Result<usize> {
    let by_id: BTreeMap<&str, &Record> = manifest.iter().map(|r| (r.id.as_str(), r)).collect();
    let jobs: Vec<(&Record, &AugSpec, &Record)> = manifest
        .iter()
        .filter_map(|r| match &r.provenance.augmentation {
            Augmentation::Applied(spec) => Some((r, spec)),
            Augmentation::Original => None,
        })
        .map(|(r, spec)| {
            by_id
                .get(r.provenance.source_id.as_str())
                .map(|src| (r, spec, *src))
                .ok_or_else(|| {
                    Error::InvalidManifest(format!(
                        "{}: source {} not in manifest",
                        r.id, r.provenance.source_id
                    ))
                })
        })
        .collect::<Result<_>>()?;
    jobs.par_iter()
        .map(|(rec, spec, src)| {
            let img = GrayImage::load(root.join(&src.image))?;
            apply(&img, spec)?.save(root.join(&rec.image))
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(jobs.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text_like(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            if (y > h / 4 && y < 3 * h / 4 && (x / 3) % 3 == 0) || y == h / 2 {
                20
            } else {
                235
            }
        })
        .unwrap()
    }

    #[test]
    fn suite_has_twenty_distinct_kinds() {
        let pool = suite_pool();
        assert_eq!(pool.len(), 20);
        let kinds: std::collections::BTreeSet<_> = pool.iter().map(|s| s.op.kind()).collect();
        assert_eq!(kinds.len(), 20);
        for (spec, name) in pool.iter().zip(SUITE_KINDS) {
            assert_eq!(spec.op.kind(), name);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        for spec in suite_pool().into_iter().chain(NoisePipeline::default().stages) {
            let s = serde_json::to_string(&spec.clone().with_seed(99)).unwrap();
            let back: AugSpec = serde_json::from_str(&s).unwrap();
            assert_eq!(back, spec.with_seed(99), "{s}");
        }
        let minimal: AugSpec = serde_json::from_str(r#"{"kind":"rotation"}"#).unwrap();
        assert_eq!(minimal.op, AugOp::Rotation { degrees: Range(-3.0, 3.0) });
        assert_eq!(minimal.p, 1.0);
        assert!(serde_json::from_str::<AugSpec>(r#"{"kind":"swirl"}"#).is_err());
    }

    #[test]
    fn rotation_zero_is_identity() {
        let img = text_like(40, 12);
        let spec = AugSpec::new(AugOp::Rotation { degrees: Range::fixed(0.0) }).with_seed(5);
        assert_eq!(apply(&img, &spec).unwrap(), img);
    }

    #[test]
    fn stretch_dimensions() {
        let img = text_like(100, 30);
        let h = apply(&img, &AugSpec::new(AugOp::from_kind("hstretch").unwrap())).unwrap();
        assert_eq!(h.dimensions(), (120, 30));
        let v = apply(&img, &AugSpec::new(AugOp::from_kind("vstretch").unwrap())).unwrap();
        assert_eq!(v.dimensions(), (100, 36));
    }

    #[test]
    fn saltpepper_zero_density_is_identity() {
        let img = text_like(30, 10);
        let spec = AugSpec::new(AugOp::SaltPepper { density: Range::fixed(0.0) }).with_seed(3);
        assert_eq!(apply(&img, &spec).unwrap(), img);
    }

    #[test]
    fn shift_on_white_stays_white() {
        let img = GrayImage::new(30, 10, 255).unwrap();
        let spec = AugSpec::new(AugOp::Shift { x: IntRange(5, 5), y: IntRange(0, 0) }).with_seed(1);
        assert_eq!(apply(&img, &spec).unwrap(), img);
    }

    #[test]
    fn shift_moves_content() {
        let img = text_like(30, 10);
        let spec = AugSpec::new(AugOp::Shift { x: IntRange(5, 5), y: IntRange(0, 0) }).with_seed(1);
        let out = apply(&img, &spec).unwrap();
        let right = (0..10).all(|y| (5..30).all(|x| out.get(x, y) == img.get(x - 5, y)));
        let left = (0..10).all(|y| (0..25).all(|x| out.get(x, y) == img.get(x + 5, y)));
        assert!(right || left);
    }

    #[test]
    fn one_pixel_passthrough_for_warps() {
        let img = GrayImage::new(1, 1, 40).unwrap();
        for spec in suite_pool() {
            if spec.op.is_geometric() {
                assert_eq!(apply(&img, &spec).unwrap(), img, "{}", spec.op.kind());
            }
        }
    }

    #[test]
    fn every_operator_runs_and_keeps_dimensions() {
        let img = text_like(64, 20);
        for (i, spec) in suite_pool().into_iter().chain(NoisePipeline::default().stages).enumerate() {
            let out = apply(&img, &spec.clone().with_seed(i as u64)).unwrap();
            match spec.op.kind() {
                "hstretch" => assert_eq!(out.dimensions(), (77, 20)),
                "vstretch" => assert_eq!(out.dimensions(), (64, 24)),
                k => assert_eq!(out.dimensions(), img.dimensions(), "{k}"),
            }
            let again = apply(&img, &spec.with_seed(i as u64)).unwrap();
            assert_eq!(out, again);
        }
    }

    #[test]
    fn perspective_zero_is_identity() {
        let img = text_like(40, 12);
        let spec = AugSpec::new(AugOp::Perspective { strength: Range::fixed(0.0) });
        assert_eq!(apply(&img, &spec).unwrap(), img);
    }

    #[test]
    fn homography_maps_corners() {
        let from = [(0.0, 0.0), (10.0, 0.0), (10.0, 5.0), (0.0, 5.0)];
        let to = [(1.0, 0.5), (9.0, 0.2), (9.5, 4.5), (0.3, 4.0)];
        let hm = homography(&from, &to).unwrap();
        for (f, t) in from.iter().zip(to.iter()) {
            let (u, v) = apply_homography(&hm, f.0, f.1);
            assert!((u - t.0).abs() < 1e-9 && (v - t.1).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let img = text_like(10, 10);
        assert!(apply(&img, &AugSpec::new(AugOp::Jpeg { quality: IntRange(0, 50) })).is_err());
        assert!(apply(&img, &AugSpec::new(AugOp::Sharpen).with_p(1.5)).is_err());
        assert!(apply(&img, &AugSpec::new(AugOp::Blur { ksize: 4 })).is_err());
        assert!(AugOp::from_kind("nope").is_err());
    }

    #[test]
    fn pipeline_zero_probability_is_identity() {
        let img = text_like(50, 16);
        let p = NoisePipeline::default().with_all_p(0.0);
        assert_eq!(apply_pipeline(&img, &p, 42).unwrap(), img);
    }

    #[test]
    fn pipeline_identity_parameters() {
        let img = text_like(50, 16);
        let mut id = Kernel::identity(3).unwrap().coeffs().to_vec();
        id[4] = 1.0;
        let p = NoisePipeline {
            stages: vec![
                AugSpec::new(AugOp::PiecewiseAffine { scale: Range::fixed(0.0), grid: 4 }),
                AugSpec::new(AugOp::Elastic { alpha: Range::fixed(0.0), sigma: Range::fixed(0.8) }),
                AugSpec::new(AugOp::MotionBlur { k: IntRange(1, 1), angle: Range::fixed(0.0) }),
                AugSpec::new(AugOp::Dropout { rate: Range::fixed(0.0) }),
                AugSpec::new(AugOp::GaussianBlur { sigma: Range::fixed(0.0) }),
                AugSpec::new(AugOp::LinearContrast { alpha: Range::fixed(1.0) }),
                AugSpec::new(AugOp::Brightness { factor: Range::fixed(1.0) }),
                AugSpec::new(AugOp::LaplaceNoise { scale: 0.0 }),
                AugSpec::new(AugOp::VerticalTranslate { fraction: Range::fixed(0.0) }),
                AugSpec::new(AugOp::ConvolutionBlur { kernel: Some(id) }),
            ],
        };
        assert_eq!(apply_pipeline(&img, &p, 42).unwrap(), img);
    }

    #[test]
    fn pipeline_deterministic() {
        let img = text_like(50, 16);
        let p = NoisePipeline::default();
        let a = apply_pipeline(&img, &p, 42).unwrap();
        let b = apply_pipeline(&img, &p, 42).unwrap();
        assert_eq!(a.encode_png().unwrap(), b.encode_png().unwrap());
        assert_ne!(a, img);
    }

    #[test]
    fn default_pipeline_probabilities() {
        let p: Vec<(&str, f64)> = NoisePipeline::default()
            .stages
            .iter()
            .map(|s| (s.op.kind(), s.p))
            .collect();
        assert_eq!(
            p,
            vec![
                ("piecewise_affine", 0.6),
                ("elastic", 0.5),
                ("motion_blur", 0.4),
                ("dropout", 0.4),
                ("gaussian_blur", 0.4),
                ("linear_contrast", 0.3),
                ("brightness", 0.3),
                ("laplace_noise", 0.3),
                ("vertical_translate", 0.5),
                ("convolution_blur", 1.0),
            ]
        );
    }

    fn manifest(n: usize) -> Manifest {
        (0..n)
            .map(|i| {
                let mut r = Record::new(format!("l{i:04}"), format!("img/l{i:04}.png"), format!("line {i}"));
                r.split = Some(if i % 10 == 0 { Split::Test } else { Split::Train });
                r
            })
            .collect()
    }

    #[test]
    fn expansion_cardinality_and_inheritance() {
        let m = manifest(25);
        for k in [0usize, 1, 2, 4, 8, 12, 16, 25] {
            let out = expand_dataset(&m, k, &suite_pool(), 42).unwrap();
            assert_eq!(out.len(), (k + 1) * m.len());
            for r in out.iter().filter(|r| !r.is_original()) {
                let src = m.iter().find(|s| s.id == r.provenance.source_id).unwrap();
                assert_eq!(r.text, src.text);
                assert_eq!(r.split, src.split);
            }
            assert!(out.audit_leakage().is_empty());
        }
        assert_eq!(expand_dataset(&m, 0, &suite_pool(), 1).unwrap(), m);
    }

    #[test]
    fn expansion_ops_without_replacement_first() {
        let ops = variant_ops(20, 20, 42, 3);
        let mut sorted = ops.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        let more = variant_ops(20, 25, 42, 3);
        assert_eq!(&more[..20], &ops[..]);
        assert!(more[20..].iter().all(|&o| o < 20));
    }

    #[test]
    fn train_only_expansion() {
        let m = manifest(20);
        let out = expand_train_split(&m, 2, &suite_pool(), 42).unwrap();
        let train = m.iter().filter(|r| r.split == Some(Split::Train)).count();
        assert_eq!(out.len(), m.len() + 2 * train);
    }

    #[test]
    fn expansion_errors() {
        assert!(expand_dataset(&manifest(3), 2, &[], 1).is_err());
        assert_eq!(expand_dataset(&manifest(3), 0, &[], 1).unwrap().len(), 3);
    }

    #[test]
    fn variant_paths() {
        assert_eq!(variant_image_path("img/l0001.png", 3), "img/l0001_aug03.png");
        assert_eq!(variant_image_path("x.jpg", 12), "x_aug12.png");
        assert_eq!(variant_id("l7", 2), "l7~aug02");
    }
}
