//! Single-channel 2D arrays used for images and masks.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidTensor(format!(
                "plane {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Value at `(y, x)` with coordinates clamped to the plane.
    pub fn get_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Plane> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::config(
                "crop",
                format!(
                    "{height}x{width} at ({top}, {left}) does not fit in {}x{}",
                    self.height, self.width
                ),
            ));
        }
        Plane::from_fn(height, width, |y, x| self.get(top + y, left + x))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| T::from_f32(self.data[i]))
            .expect("plane extents are positive")
    }

    /// Foreground indicator with `value > 0.5` as foreground.
    pub fn to_binary(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v > 0.5).collect()
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }
}
