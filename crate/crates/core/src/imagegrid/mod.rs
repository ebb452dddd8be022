//! Image representation, resampling, blur and the synthetic dataset generator.

mod blur;
mod io;
mod resize;
mod synth;

pub use blur::{gaussian_blur, gaussian_kernel_1d, BlurSpec};
pub use io::{byte_to_value, value_to_byte};
pub use resize::{resize, resize_bilinear_aa, resize_nearest, ResizePolicy, ResizeVariant};
pub use synth::{synth_generate, DefectSpot, LabeledImage, SynthConfig, SynthDataset};

use crate::error::{Error, Result};

/// Real-valued `height x width x channels` grid stored row-major as
/// `(row, column, channel)`. Pixel values are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} values", height * width * channels),
                format!("{} values", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel value at flat index {pos}")));
        }
        Ok(Self { height, width, channels, values })
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every entry.
    ///
    /// # Panics
    ///
    /// Panics if any dimension is zero or `f` yields a non-finite value.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, values).expect("invalid image from closure")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::from_fn(height, width, channels, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of pixels, `height * width`.
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.index(row, col, channel)]
    }

    /// Extracts one channel as a row-major `height * width` plane.
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Inverse of [`ImageTensor::plane`] over all channels.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let n = height * width;
        if let Some(p) = planes.iter().find(|p| p.len() != n) {
            return Err(Error::shape(format!("{n} values per plane"), p.len()));
        }
        let mut values = vec![0.0; n * channels];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                values[i * channels + ch] = *v;
            }
        }
        Self::new(height, width, channels, values)
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(shape_str(other.shape()), shape_str(self.shape())))
        }
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.check_same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Self { height: self.height, width: self.width, channels: self.channels, values })
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &ImageTensor, b: f64) -> Result<ImageTensor> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self { height: self.height, width: self.width, channels: self.channels, values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        let values = self.values.iter().map(|v| f(*v)).collect();
        Self::new(self.height, self.width, self.channels, values).expect("map produced non-finite value")
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        io::load(path.as_ref())
    }

    /// Writes the image; the format follows the file extension (`.png`, `.ppm`, `.pgm`).
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        io::save(self, path.as_ref())
    }
}

pub(crate) fn shape_str((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}
