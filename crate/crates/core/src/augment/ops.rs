//! Individual image transforms. All outputs are clamped to `[0, 1]`.

use super::image::{Image, CHANNELS};
use crate::numerics::Rng;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Inverts every pixel at or above `threshold`.
pub fn solarize(img: &Image, threshold: f64) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        if *v >= threshold {
            *v = 1.0 - *v;
        }
    }
    out
}

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width();
    for c in 0..CHANNELS {
        for y in 0..img.height() {
            for x in 0..w {
                out.set(c, y, x, img.get(c, y, w - 1 - x));
            }
        }
    }
    out
}

fn luma_at(img: &Image, y: usize, x: usize) -> f64 {
    LUMA[0] * img.get(0, y, x) + LUMA[1] * img.get(1, y, x) + LUMA[2] * img.get(2, y, x)
}

/// Luma replicated to all three channels.
pub fn grayscale(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let l = luma_at(img, y, x).clamp(0.0, 1.0);
            for c in 0..CHANNELS {
                out.set(c, y, x, l);
            }
        }
    }
    out
}

/// Jitter strengths `(brightness, contrast, saturation, hue)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterStrength {
    fn default() -> Self {
        Self {
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

/// Concrete factors drawn for one jitter application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue shift as a fraction of a full turn.
    pub hue: f64,
}

impl JitterFactors {
    /// Always consumes exactly four uniforms.
    pub fn draw(s: &JitterStrength, rng: &mut Rng) -> Self {
        let factor = |rng: &mut Rng, k: f64| rng.uniform_range((1.0 - k).max(0.0), 1.0 + k);
        Self {
            brightness: factor(rng, s.brightness),
            contrast: factor(rng, s.contrast),
            saturation: factor(rng, s.saturation),
            hue: rng.uniform_range(-s.hue, s.hue),
        }
    }
}

/// Brightness, contrast, saturation and hue adjustments in that order, clamping after each.
///
/// Hue is rotated in RGB space about the gray axis rather than through HSV.
pub fn apply_jitter(img: &Image, f: &JitterFactors) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v *= f.brightness;
    }
    out.clamp_unit();

    let (h, w) = (img.height(), img.width());
    let mut mean = 0.0;
    for y in 0..h {
        for x in 0..w {
            mean += luma_at(&out, y, x);
        }
    }
    mean /= (h * w) as f64;
    for v in out.data_mut() {
        *v = *v * f.contrast + mean * (1.0 - f.contrast);
    }
    out.clamp_unit();

    for y in 0..h {
        for x in 0..w {
            let l = luma_at(&out, y, x);
            for c in 0..CHANNELS {
                let v = out.get(c, y, x);
                out.set(c, y, x, v * f.saturation + l * (1.0 - f.saturation));
            }
        }
    }
    out.clamp_unit();

    let m = hue_rotation(f.hue * std::f64::consts::TAU);
    for y in 0..h {
        for x in 0..w {
            let rgb = [out.get(0, y, x), out.get(1, y, x), out.get(2, y, x)];
            for (c, row) in m.iter().enumerate() {
                out.set(c, y, x, row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]);
            }
        }
    }
    out.clamp_unit();
    out
}

/// Rodrigues rotation by `theta` about the unit gray axis `(1,1,1)/√3`.
fn hue_rotation(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let t = 1.0 - c;
    let kk = k * k;
    [
        [c + t * kk, t * kk - s * k, t * kk + s * k],
        [t * kk + s * k, c + t * kk, t * kk - s * k],
        [t * kk - s * k, t * kk + s * k, c + t * kk],
    ]
}

pub fn color_jitter(img: &Image, strength: &JitterStrength, rng: &mut Rng) -> Image {
    apply_jitter(img, &JitterFactors::draw(strength, rng))
}

/// Normalized 1-D Gaussian kernel of radius `⌈2σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian blur with edge clamping.
pub fn blur_with_sigma(img: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (img.height() as isize, img.width() as isize);
    let mut tmp = img.clone();
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let xx = (x + i as isize - r).clamp(0, w - 1);
                    acc += kv * img.get(c, y as usize, xx as usize);
                }
                tmp.set(c, y as usize, x as usize, acc);
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, &kv) in k.iter().enumerate() {
                    let yy = (y + i as isize - r).clamp(0, h - 1);
                    acc += kv * tmp.get(c, yy as usize, x as usize);
                }
                out.set(c, y as usize, x as usize, acc);
            }
        }
    }
    out.clamp_unit();
    out
}

pub fn gaussian_blur(img: &Image, sigma_range: (f64, f64), rng: &mut Rng) -> Image {
    let sigma = rng.uniform_range(sigma_range.0, sigma_range.1);
    blur_with_sigma(img, sigma)
}

/// Crop window `(top, left, height, width)` in source pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Samples a crop box: area fraction uniform in `scale`, aspect ratio uniform
/// in `ratio`, position uniform. After 10 infeasible tries, the full image.
pub fn sample_crop(h: usize, w: usize, scale: (f64, f64), ratio: (f64, f64), rng: &mut Rng) -> CropBox {
    let area = (h * w) as f64;
    for _ in 0..10 {
        let target = area * rng.uniform_range(scale.0, scale.1);
        let aspect = rng.uniform_range(ratio.0, ratio.1);
        let cw = (target * aspect).sqrt().round() as usize;
        let ch = (target / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let top = rng.below(h - ch + 1);
            let left = rng.below(w - cw + 1);
            return CropBox {
                top,
                left,
                height: ch,
                width: cw,
            };
        }
    }
    CropBox {
        top: 0,
        left: 0,
        height: h,
        width: w,
    }
}

/// Bilinear resampling of `window` to `out_h × out_w` (half-pixel centers).
pub fn resize_window(img: &Image, window: CropBox, out_h: usize, out_w: usize) -> Image {
    let mut out = Image::filled(out_h, out_w, [0.0; 3]);
    let sy = window.height as f64 / out_h as f64;
    let sx = window.width as f64 / out_w as f64;
    let max_y = (window.top + window.height - 1) as f64;
    let max_x = (window.left + window.width - 1) as f64;
    for oy in 0..out_h {
        let fy = (window.top as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(window.top as f64, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(max_y as usize);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = (window.left as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(window.left as f64, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(max_x as usize);
            let tx = fx - x0 as f64;
            for c in 0..CHANNELS {
                let top = img.get(c, y0, x0) * (1.0 - tx) + img.get(c, y0, x1) * tx;
                let bottom = img.get(c, y1, x0) * (1.0 - tx) + img.get(c, y1, x1) * tx;
                out.set(c, oy, ox, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out.clamp_unit();
    out
}

pub fn resize(img: &Image, side: usize) -> Image {
    if img.height() == side && img.width() == side {
        return img.clone();
    }
    let full = CropBox {
        top: 0,
        left: 0,
        height: img.height(),
        width: img.width(),
    };
    resize_window(img, full, side, side)
}

pub fn random_resized_crop(
    img: &Image,
    scale: (f64, f64),
    ratio: (f64, f64),
    out_side: usize,
    rng: &mut Rng,
) -> Image {
    let window = sample_crop(img.height(), img.width(), scale, ratio, rng);
    resize_window(img, window, out_side, out_side)
}
