//! Dense row-major image planes and multi-channel images.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};

/// A single real-valued channel of `height × width` samples, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("plane dimensions must be positive, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(shape_mismatch(
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_mismatch(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// Largest absolute elementwise difference. Panics on dimension mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "plane dimensions differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A full complex spectrum, same layout as [`ImagePlane`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPlane {
    height: usize,
    width: usize,
    values: Vec<Complex64>,
}

impl ComplexPlane {
    pub fn new(height: usize, width: usize, values: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("plane dimensions must be positive, got {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(shape_mismatch(
                format!("{} values for {height}x{width}", height * width),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { height, width, values })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn real(&self) -> ImagePlane {
        ImagePlane {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|z| z.re).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "plane dimensions differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// A multi-channel image: one [`ImagePlane`] per channel, all with equal dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    planes: Vec<ImagePlane>,
}

impl Image {
    pub fn new(planes: Vec<ImagePlane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| invalid("an image needs at least one channel"))?;
        for p in &planes[1..] {
            first.check_same_dims(p)?;
        }
        Ok(Self { planes })
    }

    /// Builds an image from channel-major `[c][h][w]` values.
    pub fn from_chw(channels: usize, height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(shape_mismatch(
                format!("{}x{height}x{width}", channels),
                format!("{} values", values.len()),
            ));
        }
        let planes = values
            .chunks_exact(height * width)
            .map(|c| ImagePlane::new(height, width, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(planes)
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.height(), self.width())
    }

    pub fn planes(&self) -> &[ImagePlane] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [ImagePlane] {
        &mut self.planes
    }

    pub fn plane(&self, c: usize) -> &ImagePlane {
        &self.planes[c]
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            let (c, h, w) = self.shape();
            let (c2, h2, w2) = other.shape();
            return Err(shape_mismatch(format!("{c}x{h}x{w}"), format!("{c2}x{h2}x{w2}")));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        Self {
            planes: self.planes.iter().map(|p| p.map(f)).collect(),
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.planes
            .iter()
            .flat_map(|p| p.values())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}
