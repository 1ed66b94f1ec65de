//! Two-view augmentation pipeline with per-augmentation random sub-streams.
//!
//! Each augmentation draws from its own stream keyed by
//! `(sample_id, view_index, augmentation kind)`, so dropping one augmentation
//! from a pipeline leaves every other draw untouched and ablations stay paired.

mod image;
pub mod ops;

pub use image::{Image, CHANNELS};
pub use ops::{JitterFactors, JitterStrength};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augmentation {
    RandomResizedCrop { scale: (f64, f64), ratio: (f64, f64) },
    HorizontalFlip,
    ColorJitter(JitterStrength),
    Grayscale,
    GaussianBlur { sigma: (f64, f64) },
    /// Threshold on the unit scale.
    Solarize { threshold: f64 },
}

impl Augmentation {
    /// Stable identifier used to key the augmentation's random sub-stream.
    pub fn kind_id(&self) -> u64 {
        match self {
            Augmentation::RandomResizedCrop { .. } => 1,
            Augmentation::HorizontalFlip => 2,
            Augmentation::ColorJitter(_) => 3,
            Augmentation::Grayscale => 4,
            Augmentation::GaussianBlur { .. } => 5,
            Augmentation::Solarize { .. } => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::RandomResizedCrop { .. } => "crop",
            Augmentation::HorizontalFlip => "flip",
            Augmentation::ColorJitter(_) => "jitter",
            Augmentation::Grayscale => "gray",
            Augmentation::GaussianBlur { .. } => "blur",
            Augmentation::Solarize { .. } => "solarize",
        }
    }

    fn apply(&self, img: &Image, out_side: usize, rng: &mut Rng) -> Image {
        match *self {
            Augmentation::RandomResizedCrop { scale, ratio } => {
                ops::random_resized_crop(img, scale, ratio, out_side, rng)
            }
            Augmentation::HorizontalFlip => ops::hflip(img),
            Augmentation::ColorJitter(s) => ops::color_jitter(img, &s, rng),
            Augmentation::Grayscale => ops::grayscale(img),
            Augmentation::GaussianBlur { sigma } => ops::gaussian_blur(img, sigma, rng),
            Augmentation::Solarize { threshold } => ops::solarize(img, threshold),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugStep {
    pub aug: Augmentation,
    pub prob: f64,
}

/// Color transformations in the order they are removed by the ablation ladder.
pub const REMOVAL_ORDER: [&str; 4] = ["solarize", "blur", "gray", "jitter"];

/// Ordered augmentation list plus output side length.
#[derive(Clone, Debug, PartialEq)]
pub struct AugPipeline {
    pub steps: Vec<AugStep>,
    pub out_side: usize,
}

impl AugPipeline {
    /// The full symmetric set: crop (0.08, 1.0) p=1, flip p=0.5,
    /// jitter (0.4, 0.4, 0.2, 0.1) p=0.8, grayscale p=0.2,
    /// blur σ∈(0.1, 2.0) p=0.5, solarize at 128/255 p=0.2.
    pub fn standard(out_side: usize) -> Self {
        let names = ["crop", "flip", "jitter", "gray", "blur", "solarize"];
        Self {
            steps: names.iter().map(|n| default_step(n).expect("known name")).collect(),
            out_side,
        }
    }

    /// Crop and resize only; probabilities of everything else zero.
    pub fn identity(out_side: usize) -> Self {
        Self {
            steps: vec![AugStep {
                aug: Augmentation::RandomResizedCrop {
                    scale: (1.0, 1.0),
                    ratio: (1.0, 1.0),
                },
                prob: 1.0,
            }],
            out_side,
        }
    }

    /// Pipeline built from augmentation names with their default parameters.
    pub fn from_names(names: &[&str], out_side: usize) -> Result<Self> {
        let steps = names
            .iter()
            .map(|n| default_step(n.trim()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, out_side })
    }

    pub fn without(&self, name: &str) -> Self {
        Self {
            steps: self.steps.iter().copied().filter(|s| s.aug.name() != name).collect(),
            out_side: self.out_side,
        }
    }

    /// Rung `r` of the removal ladder: the first `r` entries of
    /// [`REMOVAL_ORDER`] removed. Rung 0 is the pipeline itself.
    pub fn removal_rung(&self, rung: usize) -> Result<Self> {
        if rung > REMOVAL_ORDER.len() {
            return Err(Error::Config(format!(
                "removal rung {rung} out of range 0..={}",
                REMOVAL_ORDER.len()
            )));
        }
        Ok(REMOVAL_ORDER[..rung].iter().fold(self.clone(), |p, n| p.without(n)))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.steps.iter().map(|s| s.aug.name()).collect()
    }

    /// Which steps fire for `(sample_id, view)`. Each step consumes its own stream.
    pub fn plan(&self, rng: &Rng, sample_id: u64, view: u64) -> Vec<bool> {
        self.steps
            .iter()
            .map(|s| {
                let mut r = rng.substream(&[sample_id, view, s.aug.kind_id()]);
                r.uniform() < s.prob
            })
            .collect()
    }

    /// One random draw of the pipeline for `(sample_id, view)`.
    pub fn apply(&self, img: &Image, rng: &Rng, sample_id: u64, view: u64) -> Image {
        let mut out = img.clone();
        for s in &self.steps {
            let mut r = rng.substream(&[sample_id, view, s.aug.kind_id()]);
            if r.uniform() < s.prob {
                out = s.aug.apply(&out, self.out_side, &mut r);
            }
        }
        if out.height() != self.out_side || out.width() != self.out_side {
            out = ops::resize(&out, self.out_side);
        }
        out
    }

    /// Two independent views of the same source image.
    pub fn two_views(&self, img: &Image, rng: &Rng, sample_id: u64) -> (Image, Image) {
        (self.apply(img, rng, sample_id, 0), self.apply(img, rng, sample_id, 1))
    }
}

/// Default step (probability and parameters) for an augmentation name.
pub fn default_step(name: &str) -> Result<AugStep> {
    let (aug, prob) = match name {
        "crop" => (
            Augmentation::RandomResizedCrop {
                scale: (0.08, 1.0),
                ratio: (3.0 / 4.0, 4.0 / 3.0),
            },
            1.0,
        ),
        "flip" => (Augmentation::HorizontalFlip, 0.5),
        "jitter" => (Augmentation::ColorJitter(JitterStrength::default()), 0.8),
        "gray" => (Augmentation::Grayscale, 0.2),
        "blur" => (Augmentation::GaussianBlur { sigma: (0.1, 2.0) }, 0.5),
        "solarize" => (
            Augmentation::Solarize {
                threshold: 128.0 / 255.0,
            },
            0.2,
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown augmentation `{other}` (expected crop, flip, jitter, gray, blur, solarize)"
            )))
        }
    };
    Ok(AugStep { aug, prob })
}

#[cfg(test)]
mod tests;
