//! Raw little-endian `f64` arrays behind a 16-byte header: 4-byte magic
//! followed by `u32` height, width and channel counts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagegrid::ImageTensor;

pub const HEADER_LEN: usize = 16;

pub fn encode(magic: &[u8; 4], img: &ImageTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + img.len() * 8);
    buf.extend_from_slice(magic);
    for dim in [img.height(), img.width(), img.channels()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in img.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.to_string() };
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(bad("bad magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let body = &bytes[HEADER_LEN..];
    if body.len() != h * w * c * 8 {
        return Err(bad("payload length does not match header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(h, w, c, values).map_err(|e| bad(&e.to_string()))
}

pub fn write(path: &Path, magic: &[u8; 4], img: &ImageTensor) -> Result<()> {
    fs::write(path, encode(magic, img))?;
    Ok(())
}

pub fn read(path: &Path, magic: &[u8; 4]) -> Result<ImageTensor> {
    decode(magic, &fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let img = ImageTensor::new(1, 2, 1, vec![1.5, -2.0]).unwrap();
        let b = encode(b"D2NB", &img);
        assert_eq!(&b[..4], b"D2NB");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..24], &1.5f64.to_le_bytes());
        assert_eq!(b.len(), 32);
        assert!(decode(b"PCLB", &b, Path::new("x")).is_err());
        assert!(decode(b"D2NB", &b[..30], Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
            let img = ImageTensor::from_fn(h, w, c, |r, col, ch| {
                ((seed % 1000) as f64 + (r * 31 + col * 7 + ch) as f64).sin()
            });
            let back = decode(b"D2NB", &encode(b"D2NB", &img), Path::new("x")).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
