use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Gaussian blur parameters; the defaults are an 11x11 kernel with sigma 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub kernel: usize,
    pub sigma: f64,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self { kernel: 11, sigma: 2.0 }
    }
}

impl BlurSpec {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        gaussian_blur(img, self.kernel, self.sigma)
    }
}

/// Normalized 1D Gaussian taps of odd length `kernel`.
pub fn gaussian_kernel_1d(kernel: usize, sigma: f64) -> Result<Vec<f64>> {
    if kernel.is_multiple_of(2) {
        return Err(Error::arg(format!("blur kernel must be odd, got {kernel}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (kernel / 2) as f64;
    let mut taps: Vec<f64> = (0..kernel)
        .map(|i| {
            let x = i as f64 - radius;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian convolution with reflect padding, applied per channel.
pub fn gaussian_blur(img: &ImageTensor, kernel: usize, sigma: f64) -> Result<ImageTensor> {
    let taps = gaussian_kernel_1d(kernel, sigma)?;
    let (h, w, ch) = img.shape();
    if kernel > 2 * h.min(w) {
        return Err(Error::KernelExceedsImage { kernel, height: h, width: w });
    }
    let radius = (kernel / 2) as isize;
    let src = img.values();

    let mut horiz = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let sc = reflect(c as isize + t as isize - radius, w);
                    acc += wt * src[(r * w + sc) * ch + k];
                }
                horiz[(r * w + c) * ch + k] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in taps.iter().enumerate() {
                    let sr = reflect(r as isize + t as isize - radius, h);
                    acc += wt * horiz[(sr * w + c) * ch + k];
                }
                out[(r * w + c) * ch + k] = acc;
            }
        }
    }
    ImageTensor::new(h, w, ch, out)
}
