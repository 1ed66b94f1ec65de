use std::f64::consts::PI;

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Labelled images. Pre-training only ever reads `images`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn images_of(&self, split: Split) -> Vec<Image> {
        self.indices(split).into_iter().map(|i| self.images[i].clone()).collect()
    }

    pub fn labels_of(&self, split: Split) -> Vec<usize> {
        self.indices(split).into_iter().map(|i| self.labels[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub side: usize,
    /// Scales every per-sample nuisance; 0 makes all samples of a class identical.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            train_per_class: 64,
            val_per_class: 32,
            side: 16,
            noise: 1.0,
        }
    }
}

/// Grating directions (radians) of a class. The first half of the classes are
/// single gratings, the rest are symmetric plaids; both are invariant to
/// horizontal flips as sets, so flip augmentation preserves the label.
fn class_pattern(class: usize, classes: usize) -> (f64, bool) {
    let singles = classes.div_ceil(2);
    if class < singles {
        let step = if singles > 1 { 0.5 * PI / (singles - 1) as f64 } else { 0.0 };
        (step * class as f64, false)
    } else {
        let plaids = classes - singles;
        (0.5 * PI * (class - singles + 1) as f64 / (plaids + 1) as f64, true)
    }
}

fn render(class: usize, classes: usize, side: usize, noise: f64, rng: &mut Rng) -> Image {
    let (angle, plaid) = class_pattern(class, classes);
    // a single grating at -angle is the mirror image of one at +angle
    let sign = if !plaid && noise > 0.0 && rng.bernoulli(0.5) { -1.0 } else { 1.0 };
    let jitter = noise * rng.uniform_range(-0.05, 0.05);
    let freq = 1.25 + noise * rng.uniform_range(-0.25, 0.25);
    let phases = [noise * rng.uniform_range(0.0, 2.0 * PI), noise * rng.uniform_range(0.0, 2.0 * PI)];
    let amp = 0.16 * (1.0 + noise * rng.uniform_range(-0.3, 0.3));
    // Nuisances that carry no class information but identify the sample:
    // dark or light background, colour cast, and grain level.
    let background = 0.25;
    let mut tint = [0.0; 3];
    let mut offset = [0.0; 3];
    for c in 0..3 {
        tint[c] = 1.0 + noise * rng.uniform_range(-0.3, 0.3);
        offset[c] = noise * rng.uniform_range(-0.05, 0.05);
    }
    let grain = noise * rng.uniform_range(0.0, 0.15);
    let dirs: Vec<(f64, f64)> = if plaid {
        vec![(angle + jitter).sin_cos(), (-angle + jitter).sin_cos()]
    } else {
        vec![(sign * angle + jitter).sin_cos()]
    };
    let weight = amp / dirs.len() as f64;
    let mut img = Image::filled(side, side, [0.0; 3]);
    for y in 0..side {
        for x in 0..side {
            let mut v = background;
            for (&(s, c), phase) in dirs.iter().zip(phases) {
                let u = (x as f64 * c + y as f64 * s) / side as f64;
                v += weight * (2.0 * PI * freq * u + phase).sin();
            }
            for c in 0..3 {
                let pix = v * tint[c] + offset[c] + grain * rng.normal();
                img.set(c, y, x, pix.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Procedural dataset: each class is an oriented grating or plaid; samples vary
/// in frequency, phase, contrast, background, colour cast and grain.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Dataset> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.side == 0 {
        return Err(Error::Config("image side must be positive".into()));
    }
    let mut ds = Dataset {
        images: Vec::new(),
        labels: Vec::new(),
        splits: Vec::new(),
        classes: spec.classes,
    };
    for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Val, spec.val_per_class)] {
        for _ in 0..per_class {
            for class in 0..spec.classes {
                ds.images.push(render(class, spec.classes, spec.side, spec.noise, rng));
                ds.labels.push(class);
                ds.splits.push(split);
            }
        }
    }
    Ok(ds)
}
