use std::path::Path;

use image::{Rgb, RgbImage};

use super::PatchMatrix;
use crate::error::{Error, Result};
use crate::imagegrid::{value_to_byte, ImageTensor};
use crate::relprop::percentile;

/// Indices of the non-zero entries whose magnitude reaches the `q`-th percentile of `|values|`.
pub fn significant_entries(values: &[f64], q: f64) -> Vec<usize> {
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let cut = percentile(&mut mags, q);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0 && v.abs() >= cut)
        .map(|(i, _)| i)
        .collect()
}

fn thumbnail(canvas: &mut RgbImage, img: &ImageTensor, scale: usize, x0: usize) {
    for r in 0..img.height() * scale {
        for c in 0..img.width() * scale {
            let (sr, sc) = (r / scale, c / scale);
            let px = if img.channels() >= 3 {
                Rgb([0, 1, 2].map(|ch| value_to_byte(img.get(sr, sc, ch))))
            } else {
                Rgb([value_to_byte(img.get(sr, sc, 0)); 3])
            };
            canvas.put_pixel((x0 + c) as u32, r as u32, px);
        }
    }
}

fn blend(canvas: &mut RgbImage, x: i64, y: i64, color: [u8; 3], alpha: f64) {
    if x < 0 || y < 0 || x >= canvas.width() as i64 || y >= canvas.height() as i64 {
        return;
    }
    let px = canvas.get_pixel_mut(x as u32, y as u32);
    for (dst, src) in px.0.iter_mut().zip(color) {
        *dst = (*dst as f64 * (1.0 - alpha) + src as f64 * alpha).round() as u8;
    }
}

fn line(canvas: &mut RgbImage, from: (f64, f64), to: (f64, f64), color: [u8; 3], alpha: f64) {
    let steps = (to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = from.0 + t * (to.0 - from.0);
        let y = from.1 + t * (to.1 - from.1);
        blend(canvas, x.round() as i64, y.round() as i64, color, alpha);
    }
}

/// Two thumbnails side by side joined by one line per significant patch pair;
/// red for positive relevance, blue for negative, opacity proportional to `|value|`.
pub fn render_bipartite(left: &ImageTensor, right: &ImageTensor, matrix: &PatchMatrix, patch: usize, path: &Path) -> Result<()> {
    if left.shape() != right.shape() {
        return Err(Error::shape(
            crate::imagegrid::shape_str(left.shape()),
            crate::imagegrid::shape_str(right.shape()),
        ));
    }
    let (h, w) = (left.height(), left.width());
    if h.div_ceil(patch) != matrix.grid_rows || w.div_ceil(patch) != matrix.grid_cols {
        return Err(Error::shape(
            format!("{}x{} patch grid", h.div_ceil(patch), w.div_ceil(patch)),
            format!("{}x{}", matrix.grid_rows, matrix.grid_cols),
        ));
    }
    let scale = (128 / h.max(w)).max(1);
    let gap = (w * scale / 2).max(8);
    let mut canvas = RgbImage::from_pixel((2 * w * scale + gap) as u32, (h * scale) as u32, Rgb([255, 255, 255]));
    thumbnail(&mut canvas, left, scale, 0);
    thumbnail(&mut canvas, right, scale, w * scale + gap);

    let p = matrix.n_patches();
    let peak = matrix.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let center = |idx: usize, x0: usize| {
        let (pr, pc) = (idx / matrix.grid_cols, idx % matrix.grid_cols);
        let cy = ((pr * patch) as f64 + (patch.min(h - pr * patch)) as f64 / 2.0) * scale as f64;
        let cx = ((pc * patch) as f64 + (patch.min(w - pc * patch)) as f64 / 2.0) * scale as f64;
        (x0 as f64 + cx, cy)
    };
    for idx in significant_entries(&matrix.values, 95.0) {
        let v = matrix.values[idx];
        let color = if v > 0.0 { [220, 30, 30] } else { [30, 60, 220] };
        let alpha = if peak > 0.0 { v.abs() / peak } else { 0.0 };
        line(&mut canvas, center(idx / p, 0), center(idx % p, w * scale + gap), color, alpha);
    }
    canvas.save(path)?;
    Ok(())
}
