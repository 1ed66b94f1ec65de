use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHANNELS: usize = 3;

/// RGB raster stored channel-major (`c·h·w + y·w + x`), pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != CHANNELS * height * width {
            return Err(Error::Dimension {
                op: "image",
                left: vec![CHANNELS, height, width],
                right: vec![data.len()],
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Flattens a batch of equally sized images into an `n × (3·h·w)` matrix.
    pub fn batch_to_tensor(images: &[Image]) -> Result<Tensor> {
        let cols = images.first().map_or(0, |i| i.data.len());
        let mut data = Vec::with_capacity(images.len() * cols);
        for img in images {
            if img.data.len() != cols {
                return Err(Error::Dimension {
                    op: "image batch",
                    left: vec![cols],
                    right: vec![img.data.len()],
                });
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new(vec![images.len(), cols], data)
    }
}
