//! Dense row-major grids: scalar fields, RGB images and square kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A `height x width` grid of finite reals stored row-major.
///
/// Houses transmission maps, depth maps and single image channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidDimensions);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "field dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "field dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn ensure_same_shape(&self, other: &ScalarField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two equally shaped fields.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_shape(other)?;
        Ok(ScalarField {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ScalarField, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ScalarField {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ScalarField> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::InvalidDimensions);
        }
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(ScalarField {
            height,
            width,
            data,
        })
    }
}

/// Three equally shaped channels (R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    channels: [ScalarField; 3],
}

impl ImageRgb {
    pub fn new(r: ScalarField, g: ScalarField, b: ScalarField) -> Result<Self> {
        r.ensure_same_shape(&g)?;
        r.ensure_same_shape(&b)?;
        Ok(Self {
            channels: [r, g, b],
        })
    }

    pub fn from_channels(channels: [ScalarField; 3]) -> Result<Self> {
        let [r, g, b] = channels;
        Self::new(r, g, b)
    }

    /// An image whose three channels are copies of `field`.
    pub fn gray(field: &ScalarField) -> Self {
        Self {
            channels: [field.clone(), field.clone(), field.clone()],
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self {
            channels: rgb.map(|v| ScalarField::filled(height, width, v)),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = [
            Vec::with_capacity(height * width),
            Vec::with_capacity(height * width),
            Vec::with_capacity(height * width),
        ];
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                for (ch, v) in data.iter_mut().zip(px) {
                    ch.push(v);
                }
            }
        }
        let [r, g, b] = data;
        Self {
            channels: [
                ScalarField { height, width, data: r },
                ScalarField { height, width, data: g },
                ScalarField { height, width, data: b },
            ],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &ScalarField {
        &self.channels[c]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut ScalarField {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[ScalarField; 3] {
        &self.channels
    }

    pub fn into_channels(self) -> [ScalarField; 3] {
        self.channels
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.channels[0].get(row, col),
            self.channels[1].get(row, col),
            self.channels[2].get(row, col),
        ]
    }

    pub fn ensure_same_shape(&self, other: &ImageRgb) -> Result<()> {
        self.channels[0].ensure_same_shape(&other.channels[0])
    }

    pub fn map_channels(&self, mut f: impl FnMut(usize, &ScalarField) -> ScalarField) -> ImageRgb {
        ImageRgb {
            channels: [
                f(0, &self.channels[0]),
                f(1, &self.channels[1]),
                f(2, &self.channels[2]),
            ],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageRgb {
        self.map_channels(|_, ch| ch.map(&f))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageRgb {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn channel_means(&self) -> [f64; 3] {
        [
            self.channels[0].mean(),
            self.channels[1].mean(),
            self.channels[2].mean(),
        ]
    }

    /// Per-pixel mean of the three channels.
    pub fn mean_intensity(&self) -> ScalarField {
        let (h, w) = self.shape();
        let data = (0..h * w)
            .map(|i| {
                (self.channels[0].data[i] + self.channels[1].data[i] + self.channels[2].data[i]) / 3.0
            })
            .collect();
        ScalarField { height: h, width: w, data }
    }

    /// Rec. 601 luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn luma(&self) -> ScalarField {
        let (h, w) = self.shape();
        let data = (0..h * w)
            .map(|i| {
                0.299 * self.channels[0].data[i]
                    + 0.587 * self.channels[1].data[i]
                    + 0.114 * self.channels[2].data[i]
            })
            .collect();
        ScalarField { height: h, width: w, data }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImageRgb> {
        Ok(ImageRgb {
            channels: [
                self.channels[0].crop(row, col, height, width)?,
                self.channels[1].crop(row, col, height, width)?,
                self.channels[2].crop(row, col, height, width)?,
            ],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().all(ScalarField::is_finite)
    }
}

/// A square convolution kernel with odd side `size`, taps row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidOddSize { size, min: 1 });
        }
        if taps.len() != size * size {
            return Err(Error::InvalidDimensions);
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { size, taps })
    }

    pub fn zeros(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        Self {
            size,
            taps: vec![0.0; size * size],
        }
    }

    /// The centred unit impulse.
    pub fn delta(size: usize) -> Self {
        let mut k = Self::zeros(size);
        let r = size / 2;
        k.taps[r * size + r] = 1.0;
        k
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    /// Rotation by 180 degrees: `taps[i][j] -> taps[n-1-i][n-1-j]`.
    pub fn rot180(&self) -> Kernel {
        let mut taps = self.taps.clone();
        taps.reverse();
        Kernel {
            size: self.size,
            taps,
        }
    }

    pub fn dot(&self, other: &Kernel) -> f64 {
        self.taps.iter().zip(&other.taps).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn add_scaled(&mut self, other: &Kernel, scale: f64) {
        for (a, b) in self.taps.iter_mut().zip(&other.taps) {
            *a += scale * b;
        }
    }
}

/// Rotation of a kernel by 180 degrees.
pub fn rot180(kernel: &Kernel) -> Kernel {
    kernel.rot180()
}
