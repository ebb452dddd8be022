use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Maps an 8-bit sample to `[-1, 1]`.
#[inline]
pub fn byte_to_value(v: u8) -> f64 {
    2.0 * (f64::from(v) / 255.0) - 1.0
}

/// Maps a value in `[-1, 1]` to an 8-bit sample, clamping out-of-range values.
#[inline]
pub fn value_to_byte(x: f64) -> u8 {
    (255.0 * (x + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

pub(super) fn load(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) => {
            let buf = img.to_luma8();
            ImageTensor::new(h, w, 1, buf.as_raw().iter().map(|&v| byte_to_value(v)).collect())
        }
        _ => {
            let buf = img.to_rgb8();
            ImageTensor::new(h, w, 3, buf.as_raw().iter().map(|&v| byte_to_value(v)).collect())
        }
    }
}

pub(super) fn save(img: &ImageTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.values().iter().map(|&v| value_to_byte(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
        c => return Err(Error::arg(format!("cannot encode {c}-channel image"))),
    };
    dynamic.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(byte_to_value(0), -1.0);
        assert_eq!(byte_to_value(255), 1.0);
        assert_eq!(value_to_byte(-1.0), 0);
        assert_eq!(value_to_byte(1.0), 255);
        assert_eq!(value_to_byte(7.0), 255);
        for v in 0..=255u8 {
            assert_eq!(value_to_byte(byte_to_value(v)), v);
        }
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(5, 7, 1, |r, c, _| byte_to_value((r * 30 + c * 5) as u8));
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(ImageTensor::load(&p).unwrap(), img);
        }
        let rgb = ImageTensor::from_fn(3, 4, 3, |r, c, ch| byte_to_value((r * 50 + c * 20 + ch * 3) as u8));
        for name in ["b.png", "b.ppm"] {
            let p = dir.path().join(name);
            rgb.save(&p).unwrap();
            assert_eq!(ImageTensor::load(&p).unwrap(), rgb);
        }
    }
}
