use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Resampling algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeVariant {
    /// Source-anchored nearest neighbour without filtering; keeps aliasing.
    NearestNoAa,
    /// Separable triangle filter whose support grows with the downscale factor.
    BilinearAa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizePolicy {
    pub variant: ResizeVariant,
    pub target_height: usize,
    pub target_width: usize,
}

impl ResizePolicy {
    pub fn new(variant: ResizeVariant, target_height: usize, target_width: usize) -> Result<Self> {
        if target_height == 0 || target_width == 0 {
            return Err(Error::arg("resize target dimensions must be positive"));
        }
        Ok(Self { variant, target_height, target_width })
    }

    pub fn square(variant: ResizeVariant, size: usize) -> Result<Self> {
        Self::new(variant, size, size)
    }

    pub fn with_variant(self, variant: ResizeVariant) -> Self {
        Self { variant, ..self }
    }
}

pub fn resize(img: &ImageTensor, policy: &ResizePolicy) -> Result<ImageTensor> {
    match policy.variant {
        ResizeVariant::NearestNoAa => resize_nearest(img, policy.target_height, policy.target_width),
        ResizeVariant::BilinearAa => resize_bilinear_aa(img, policy.target_height, policy.target_width),
    }
}

fn check_target(th: usize, tw: usize) -> Result<()> {
    if th == 0 || tw == 0 {
        Err(Error::arg(format!("resize target must be positive, got {th}x{tw}")))
    } else {
        Ok(())
    }
}

/// Output pixel `(r, c)` copies source pixel `(floor(r*H/th), floor(c*W/tw))`.
pub fn resize_nearest(img: &ImageTensor, th: usize, tw: usize) -> Result<ImageTensor> {
    check_target(th, tw)?;
    let (h, w, ch) = img.shape();
    let rows: Vec<usize> = (0..th).map(|r| (r * h / th).min(h - 1)).collect();
    let cols: Vec<usize> = (0..tw).map(|c| (c * w / tw).min(w - 1)).collect();
    let src = img.values();
    let mut out = Vec::with_capacity(th * tw * ch);
    for &sr in &rows {
        for &sc in &cols {
            let base = (sr * w + sc) * ch;
            out.extend_from_slice(&src[base..base + ch]);
        }
    }
    ImageTensor::new(th, tw, ch, out)
}

/// Sparse resampling weights for one output sample.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

fn triangle(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        1.0 - x
    } else {
        0.0
    }
}

fn axis_taps(in_size: usize, out_size: usize) -> Vec<Taps> {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    (0..out_size)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(in_size);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| triangle((j as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            Taps { start: lo, weights }
        })
        .collect()
}

/// Separable triangle-filter resampling with antialiasing on downscale.
///
/// The filter radius equals the per-axis downscale factor; weights are
/// normalized to sum to one. Upscaling degenerates to plain bilinear.
pub fn resize_bilinear_aa(img: &ImageTensor, th: usize, tw: usize) -> Result<ImageTensor> {
    check_target(th, tw)?;
    let (h, w, ch) = img.shape();
    let src = img.values();

    let col_taps = axis_taps(w, tw);
    let mut horiz = vec![0.0; h * tw * ch];
    for r in 0..h {
        for (c, taps) in col_taps.iter().enumerate() {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in taps.weights.iter().enumerate() {
                    acc += wt * src[(r * w + taps.start + t) * ch + k];
                }
                horiz[(r * tw + c) * ch + k] = acc;
            }
        }
    }

    let row_taps = axis_taps(h, th);
    let mut out = vec![0.0; th * tw * ch];
    for (r, taps) in row_taps.iter().enumerate() {
        for c in 0..tw {
            for k in 0..ch {
                let mut acc = 0.0;
                for (t, wt) in taps.weights.iter().enumerate() {
                    acc += wt * horiz[((taps.start + t) * tw + c) * ch + k];
                }
                out[(r * tw + c) * ch + k] = acc;
            }
        }
    }
    ImageTensor::new(th, tw, ch, out)
}
