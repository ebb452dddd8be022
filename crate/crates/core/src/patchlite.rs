//! PatchCore-style scoring: `o(x) = max_k min_j ||phi_k(x) - u_j||` over a memory
//! bank of location-independent patch descriptors.
//!
//! The descriptor is a hand-crafted texture summary computed at two scales
//! (the patch and a window twice its size around it): per channel mean,
//! standard deviation and mean absolute horizontal and vertical differences,
//! plus the largest residual left by a plane fit over the patch.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bankfile;
use crate::error::{Error, Result};
use crate::imagegrid::ImageTensor;

/// Top-left corner of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchLocation {
    pub row: usize,
    pub col: usize,
}

impl PatchLocation {
    pub fn contains(&self, patch: usize, row: f64, col: f64) -> bool {
        let (r0, c0) = (self.row as f64, self.col as f64);
        row >= r0 && row < r0 + patch as f64 && col >= c0 && col < c0 + patch as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureSet {
    pub locations: Vec<PatchLocation>,
    pub features: Vec<Vec<f64>>,
    pub dim: usize,
}

/// Descriptor length for `channels` channels.
pub fn feature_dim(channels: usize) -> usize {
    9 * channels
}

fn window_stats(img: &ImageTensor, r0: usize, c0: usize, hgt: usize, wid: usize, out: &mut Vec<f64>) {
    let n = (hgt * wid) as f64;
    for ch in 0..img.channels() {
        let window = || (r0..r0 + hgt).flat_map(move |r| (c0..c0 + wid).map(move |c| img.get(r, c, ch)));
        let mean = window().sum::<f64>() / n;
        let var = window().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;

        let mut dh = 0.0;
        let mut nh = 0usize;
        let mut dv = 0.0;
        let mut nv = 0usize;
        for r in r0..r0 + hgt {
            for c in c0..c0 + wid {
                if c + 1 < c0 + wid {
                    dh += (img.get(r, c + 1, ch) - img.get(r, c, ch)).abs();
                    nh += 1;
                }
                if r + 1 < r0 + hgt {
                    dv += (img.get(r + 1, c, ch) - img.get(r, c, ch)).abs();
                    nv += 1;
                }
            }
        }
        out.push(mean);
        out.push(var.sqrt());
        out.push(if nh > 0 { dh / nh as f64 } else { 0.0 });
        out.push(if nv > 0 { dv / nv as f64 } else { 0.0 });
    }
}

/// Largest absolute residual of a least-squares plane fit over the patch.
fn plane_residual(img: &ImageTensor, r0: usize, c0: usize, patch: usize, out: &mut Vec<f64>) {
    let mid = (patch as f64 - 1.0) / 2.0;
    let scatter: f64 = (0..patch).map(|i| (i as f64 - mid).powi(2)).sum::<f64>() * patch as f64;
    let n = (patch * patch) as f64;
    for ch in 0..img.channels() {
        let (mut sum, mut sy, mut sx) = (0.0, 0.0, 0.0);
        for r in 0..patch {
            for c in 0..patch {
                let v = img.get(r0 + r, c0 + c, ch);
                sum += v;
                sy += v * (r as f64 - mid);
                sx += v * (c as f64 - mid);
            }
        }
        let (a, by, bx) = (sum / n, sy / scatter.max(f64::MIN_POSITIVE), sx / scatter.max(f64::MIN_POSITIVE));
        let mut worst: f64 = 0.0;
        for r in 0..patch {
            for c in 0..patch {
                let fit = a + by * (r as f64 - mid) + bx * (c as f64 - mid);
                worst = worst.max((img.get(r0 + r, c0 + c, ch) - fit).abs());
            }
        }
        out.push(worst);
    }
}

/// Start and length of the window of size `2 * patch` centred on a patch,
/// shifted to fit inside `[0, extent)` and clipped to `extent`.
fn context_window(start: usize, patch: usize, extent: usize) -> (usize, usize) {
    let len = (2 * patch).min(extent);
    let ideal = (start + patch / 2) as isize - (len / 2) as isize;
    let lo = ideal.clamp(0, (extent - len) as isize) as usize;
    (lo, len)
}

fn positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    (0..=extent - patch).step_by(stride).collect()
}

pub fn extract_patches(img: &ImageTensor, patch: usize, stride: usize) -> Result<PatchFeatureSet> {
    if patch == 0 || patch > img.height().min(img.width()) {
        return Err(Error::arg(format!(
            "patch size {patch} does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be at least 1"));
    }
    let mut locations = Vec::new();
    let mut features = Vec::new();
    for &row in &positions(img.height(), patch, stride) {
        for &col in &positions(img.width(), patch, stride) {
            let mut f = Vec::with_capacity(feature_dim(img.channels()));
            window_stats(img, row, col, patch, patch, &mut f);
            let (r1, h1) = context_window(row, patch, img.height());
            let (c1, w1) = context_window(col, patch, img.width());
            window_stats(img, r1, c1, h1, w1, &mut f);
            plane_residual(img, row, col, patch, &mut f);
            locations.push(PatchLocation { row, col });
            features.push(f);
        }
    }
    Ok(PatchFeatureSet { locations, features, dim: feature_dim(img.channels()) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub prototypes: Vec<Vec<f64>>,
    pub dim: usize,
    pub patch: usize,
    pub stride: usize,
}

/// Union of all patch descriptors of the training images, without subsampling.
pub fn build_memory_bank(train: &[ImageTensor], patch: usize, stride: usize) -> Result<MemoryBank> {
    if train.is_empty() {
        return Err(Error::arg("memory bank needs at least one training image"));
    }
    let sets = train
        .par_iter()
        .map(|img| extract_patches(img, patch, stride))
        .collect::<Result<Vec<_>>>()?;
    let dim = sets[0].dim;
    if let Some(s) = sets.iter().find(|s| s.dim != dim) {
        return Err(Error::shape(format!("{dim}-dimensional features"), s.dim));
    }
    let prototypes = sets.into_iter().flat_map(|s| s.features).collect();
    Ok(MemoryBank { prototypes, dim, patch, stride })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub score: f64,
    pub location: PatchLocation,
}

/// Max over test patches of the Euclidean distance to the nearest prototype.
pub fn patchcore_score(bank: &MemoryBank, img: &ImageTensor, patch: usize, stride: usize) -> Result<PatchScore> {
    let set = extract_patches(img, patch, stride)?;
    score_features(bank, &set)
}

pub fn score_features(bank: &MemoryBank, set: &PatchFeatureSet) -> Result<PatchScore> {
    if set.dim != bank.dim {
        return Err(Error::shape(format!("{}-dimensional features", bank.dim), set.dim));
    }
    let mut best = PatchScore { score: f64::NEG_INFINITY, location: set.locations[0] };
    for (loc, f) in set.locations.iter().zip(&set.features) {
        let nearest = bank
            .prototypes
            .iter()
            .map(|u| sq_dist(f, u))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        if nearest > best.score {
            best = PatchScore { score: nearest, location: *loc };
        }
    }
    Ok(best)
}

impl MemoryBank {
    pub fn score(&self, img: &ImageTensor) -> Result<PatchScore> {
        patchcore_score(self, img, self.patch, self.stride)
    }

    fn as_tensor(&self) -> Result<ImageTensor> {
        ImageTensor::new(self.prototypes.len(), self.dim, 1, self.prototypes.concat())
    }

    /// Writes `manifest.json` plus a single `.pclb` array of all prototypes.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let name = "prototypes.pclb".to_string();
        bankfile::write(&dir.join(&name), MAGIC, &self.as_tensor()?)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            patch: self.patch,
            stride: self.stride,
            dim: self.dim,
            bank: vec![name],
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format { path, reason: format!("unexpected format {:?}", manifest.format) });
        }
        let mut prototypes = Vec::new();
        for name in &manifest.bank {
            let t = bankfile::read(&dir.join(name), MAGIC)?;
            if t.width() != manifest.dim {
                return Err(Error::shape(format!("{}-dimensional prototypes", manifest.dim), t.width()));
            }
            prototypes.extend(t.values().chunks_exact(manifest.dim).map(<[f64]>::to_vec));
        }
        Ok(Self { prototypes, dim: manifest.dim, patch: manifest.patch, stride: manifest.stride })
    }
}

const MAGIC: &[u8; 4] = b"PCLB";
const MANIFEST_FORMAT: &str = "patchlite";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    patch: usize,
    stride: usize,
    dim: usize,
    bank: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_features() {
        let img = ImageTensor::filled(8, 8, 2, 0.3);
        let set = extract_patches(&img, 4, 4).unwrap();
        assert_eq!(set.locations.len(), 4);
        for f in &set.features {
            assert_eq!(f.len(), 18);
            for chunk in f[..16].chunks(4) {
                assert!((chunk[0] - 0.3).abs() < 1e-15);
                assert!(chunk[1].abs() < 1e-12 && chunk[2] == 0.0 && chunk[3] == 0.0);
            }
            assert!(f[16..].iter().all(|r| r.abs() < 1e-15));
        }
    }

    #[test]
    fn plane_residual_ignores_ramps() {
        let ramp = ImageTensor::from_fn(8, 8, 1, |r, c, _| 0.1 * r as f64 - 0.05 * c as f64 + 0.2);
        let f = &extract_patches(&ramp, 8, 8).unwrap().features[0];
        assert!(f[8].abs() < 1e-12);
        let spike = ImageTensor::from_fn(8, 8, 1, |r, c, _| if (r, c) == (3, 4) { 1.0 } else { 0.0 });
        let f = &extract_patches(&spike, 8, 8).unwrap().features[0];
        assert!(f[8] > 0.9);
    }

    #[test]
    fn vertical_edge_features() {
        let img = ImageTensor::from_fn(4, 4, 1, |_, c, _| if c < 2 { -1.0 } else { 1.0 });
        let set = extract_patches(&img, 4, 1).unwrap();
        let f = &set.features[0];
        // 4 rows x 3 horizontal pairs, one jump of 2 per row.
        assert!((f[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f[3], 0.0);
        assert!((f[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bank_sizes() {
        let img = ImageTensor::zeros(8, 8, 1);
        assert_eq!(build_memory_bank(std::slice::from_ref(&img), 4, 4).unwrap().prototypes.len(), 4);
        assert_eq!(build_memory_bank(&[img.clone(), img], 4, 4).unwrap().prototypes.len(), 8);
        assert!(build_memory_bank(&[], 4, 4).is_err());
    }

    #[test]
    fn patch_errors() {
        let img = ImageTensor::zeros(8, 6, 1);
        assert!(extract_patches(&img, 7, 1).is_err());
        assert!(extract_patches(&img, 2, 0).is_err());
        let bank = build_memory_bank(&[ImageTensor::zeros(8, 8, 3)], 4, 4).unwrap();
        assert!(patchcore_score(&bank, &img, 4, 4).is_err());
    }

    #[test]
    fn training_image_scores_zero() {
        let img = ImageTensor::from_fn(12, 12, 1, |r, c, _| ((r * 5 + c * 3) as f64).sin());
        let bank = build_memory_bank(std::slice::from_ref(&img), 4, 2).unwrap();
        assert_eq!(bank.score(&img).unwrap().score, 0.0);
    }

    #[test]
    fn single_prototype_single_location() {
        let train = ImageTensor::filled(4, 4, 1, 0.0);
        let test = ImageTensor::filled(4, 4, 1, 0.5);
        let bank = build_memory_bank(&[train], 4, 4).unwrap();
        let s = bank.score(&test).unwrap();
        let phi = &extract_patches(&test, 4, 4).unwrap().features[0];
        assert!((s.score - sq_dist(phi, &bank.prototypes[0]).sqrt()).abs() < 1e-15);
        // mean differs by 0.5 at both scales
        assert!((s.score - (0.5f64 * 0.5 * 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn localizes_blob() {
        let train = ImageTensor::zeros(16, 16, 1);
        let test = ImageTensor::from_fn(16, 16, 1, |r, c, _| if (9..11).contains(&r) && (5..7).contains(&c) { 0.8 } else { 0.0 });
        let bank = build_memory_bank(&[train], 4, 4).unwrap();
        let s = bank.score(&test).unwrap();
        assert_eq!(s.location, PatchLocation { row: 8, col: 4 });
        assert!(s.location.contains(4, 10.0, 6.0));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(8, 8, 1, |r, c, _| (r as f64 - c as f64) / 8.0);
        let bank = build_memory_bank(&[img], 4, 2).unwrap();
        bank.save(dir.path()).unwrap();
        assert_eq!(MemoryBank::load(dir.path()).unwrap(), bank);
        assert_eq!(&fs::read(dir.path().join("prototypes.pclb")).unwrap()[..4], b"PCLB");
    }
}
