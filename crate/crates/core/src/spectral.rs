//! Orthonormal 2D DCT-II basis used as a virtual layer between pixels and
//! frequencies, with a deterministic 2D-to-1D frequency ordering and
//! power-scale frequency binning.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegrid::ImageTensor;

/// How 2D frequency pairs `(u, v)` are laid out along the 1D frequency axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyOrdering {
    /// Ascending `u^2 + v^2`, ties broken by `u` then `v`.
    #[default]
    Radial,
    /// `k = u * width + v`.
    RowMajor,
}

/// Separable orthonormal DCT-II basis of `height x width` images.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    height: usize,
    width: usize,
    ordering: Vec<(usize, usize)>,
    rank: Vec<usize>,
    // row_table[u * height + r] = alpha(u) cos(pi (2r + 1) u / 2H)
    row_table: Vec<f64>,
    col_table: Vec<f64>,
}

fn cosine_table(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n * n);
    for u in 0..n {
        let alpha = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for r in 0..n {
            table.push(alpha * (PI * (2 * r + 1) as f64 * u as f64 / (2 * n) as f64).cos());
        }
    }
    table
}

/// Radially ordered DCT basis.
pub fn dct_basis(height: usize, width: usize) -> Result<DctBasis> {
    DctBasis::new(height, width, FrequencyOrdering::Radial)
}

impl DctBasis {
    pub fn new(height: usize, width: usize, ordering: FrequencyOrdering) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("DCT basis dimensions must be positive"));
        }
        let mut pairs: Vec<(usize, usize)> =
            (0..height).flat_map(|u| (0..width).map(move |v| (u, v))).collect();
        if ordering == FrequencyOrdering::Radial {
            pairs.sort_by_key(|&(u, v)| (u * u + v * v, u, v));
        }
        let mut rank = vec![0; height * width];
        for (k, &(u, v)) in pairs.iter().enumerate() {
            rank[u * width + v] = k;
        }
        Ok(Self {
            height,
            width,
            ordering: pairs,
            rank,
            row_table: cosine_table(height),
            col_table: cosine_table(width),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of basis elements, `height * width`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frequency pair of linear index `k`.
    pub fn frequency(&self, k: usize) -> (usize, usize) {
        self.ordering[k]
    }

    pub fn ordering(&self) -> &[(usize, usize)] {
        &self.ordering
    }

    /// Linear index of frequency pair `(u, v)`.
    pub fn index_of(&self, u: usize, v: usize) -> usize {
        self.rank[u * self.width + v]
    }

    #[inline]
    pub fn value(&self, k: usize, row: usize, col: usize) -> f64 {
        let (u, v) = self.ordering[k];
        self.row_table[u * self.height + row] * self.col_table[v * self.width + col]
    }

    /// Basis element `v_k` as a row-major plane.
    pub fn element(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.value(k, r, c));
            }
        }
        out
    }

    fn check_plane(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::shape(format!("{} entries", self.len()), len));
        }
        Ok(())
    }

    /// Coefficients `<v_k, plane>` in basis order.
    pub fn forward_plane(&self, plane: &[f64]) -> Result<Vec<f64>> {
        self.check_plane(plane.len())?;
        let (h, w) = (self.height, self.width);
        // t[r][v] = sum_c x[r][c] B[v][c]
        let mut t = vec![0.0; h * w];
        for r in 0..h {
            let row = &plane[r * w..(r + 1) * w];
            for v in 0..w {
                let basis = &self.col_table[v * w..(v + 1) * w];
                t[r * w + v] = row.iter().zip(basis).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            let basis = &self.row_table[u * h..(u + 1) * h];
            for v in 0..w {
                let mut acc = 0.0;
                for r in 0..h {
                    acc += basis[r] * t[r * w + v];
                }
                out[self.rank[u * w + v]] = acc;
            }
        }
        Ok(out)
    }

    /// Synthesis `sum_k coeffs[k] v_k`.
    pub fn inverse_plane(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_plane(coeffs.len())?;
        let (h, w) = (self.height, self.width);
        // t[r][v] = sum_u A[u][r] C[u][v]
        let mut t = vec![0.0; h * w];
        for u in 0..h {
            let basis = &self.row_table[u * h..(u + 1) * h];
            for v in 0..w {
                let cuv = coeffs[self.rank[u * w + v]];
                if cuv == 0.0 {
                    continue;
                }
                for r in 0..h {
                    t[r * w + v] += basis[r] * cuv;
                }
            }
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            for v in 0..w {
                let trv = t[r * w + v];
                if trv == 0.0 {
                    continue;
                }
                let basis = &self.col_table[v * w..(v + 1) * w];
                for c in 0..w {
                    out[r * w + c] += trv * basis[c];
                }
            }
        }
        Ok(out)
    }

    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        if img.height() != self.height || img.width() != self.width {
            return Err(Error::shape(
                format!("{}x{} image", self.height, self.width),
                format!("{}x{} image", img.height(), img.width()),
            ));
        }
        Ok(())
    }
}

/// Per-channel DCT coefficients, each ordered by the basis' frequency index.
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f64>>,
}

impl DctCoefficients {
    /// Writes `index,u,v,value` rows; a leading `channel` column is added for
    /// multi-channel coefficients.
    pub fn write_csv(&self, basis: &DctBasis, mut out: impl Write) -> Result<()> {
        let multi = self.channels.len() > 1;
        if multi {
            writeln!(out, "channel,index,u,v,value")?;
        } else {
            writeln!(out, "index,u,v,value")?;
        }
        for (ch, coeffs) in self.channels.iter().enumerate() {
            for (k, value) in coeffs.iter().enumerate() {
                let (u, v) = basis.frequency(k);
                if multi {
                    write!(out, "{ch},")?;
                }
                writeln!(out, "{k},{u},{v},{value:e}")?;
            }
        }
        Ok(())
    }
}

pub fn dct_forward(img: &ImageTensor, basis: &DctBasis) -> Result<DctCoefficients> {
    basis.check_image(img)?;
    let channels = (0..img.channels())
        .map(|ch| basis.forward_plane(&img.plane(ch)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DctCoefficients { height: basis.height, width: basis.width, channels })
}

pub fn dct_inverse(coeffs: &DctCoefficients, basis: &DctBasis) -> Result<ImageTensor> {
    if coeffs.height != basis.height || coeffs.width != basis.width {
        return Err(Error::shape(
            format!("{}x{} coefficients", basis.height, basis.width),
            format!("{}x{} coefficients", coeffs.height, coeffs.width),
        ));
    }
    let planes = coeffs
        .channels
        .iter()
        .map(|c| basis.inverse_plane(c))
        .collect::<Result<Vec<_>>>()?;
    ImageTensor::from_planes(basis.height, basis.width, &planes)
}

/// Partition of the frequency axis `[0, n)` into contiguous bins, given by
/// inclusive upper edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBinning {
    upper_edges: Vec<usize>,
}

/// Upper edges of the 19 power-scale bins over 224x224 frequencies.
pub const PRESET_224_EDGES: [usize; 19] = [
    2, 17, 69, 188, 409, 769, 1313, 2088, 3142, 4528, 6303, 8525, 11254, 18491, 23132, 28548,
    34811, 41995, 50175,
];

impl FrequencyBinning {
    pub fn new(upper_edges: Vec<usize>) -> Result<Self> {
        if upper_edges.is_empty() {
            return Err(Error::arg("binning needs at least one edge"));
        }
        if upper_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg("bin edges must be strictly increasing"));
        }
        Ok(Self { upper_edges })
    }

    /// Bins with the given inclusive `[lo, hi]` band isolated, covering `[0, n_freq)`.
    pub fn around_band(n_freq: usize, lo: usize, hi: usize) -> Result<Self> {
        if lo > hi || hi >= n_freq {
            return Err(Error::arg(format!("band {lo}:{hi} outside [0, {n_freq})")));
        }
        let mut edges = Vec::with_capacity(3);
        if lo > 0 {
            edges.push(lo - 1);
        }
        edges.push(hi);
        if hi + 1 < n_freq {
            edges.push(n_freq - 1);
        }
        Self::new(edges)
    }

    pub fn upper_edges(&self) -> &[usize] {
        &self.upper_edges
    }

    pub fn n_bins(&self) -> usize {
        self.upper_edges.len()
    }

    /// Number of frequencies covered.
    pub fn n_freq(&self) -> usize {
        self.upper_edges.last().map_or(0, |e| e + 1)
    }

    /// Inclusive `(lo, hi)` range of every bin.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        let mut lo = 0;
        self.upper_edges
            .iter()
            .map(|&hi| {
                let r = (lo, hi);
                lo = hi + 1;
                r
            })
            .collect()
    }

    pub fn bin_of(&self, k: usize) -> Option<usize> {
        let b = self.upper_edges.partition_point(|&e| e < k);
        (b < self.upper_edges.len()).then_some(b)
    }

    /// Sums a per-frequency vector into bins.
    pub fn aggregate(&self, per_frequency: &[f64]) -> Result<Vec<f64>> {
        if per_frequency.len() != self.n_freq() {
            return Err(Error::shape(format!("{} frequencies", self.n_freq()), per_frequency.len()));
        }
        Ok(self
            .ranges()
            .into_iter()
            .map(|(lo, hi)| per_frequency[lo..=hi].iter().sum())
            .collect())
    }
}

/// Power-scale binning of `n_freq` frequencies into `n_bins` bins.
///
/// For 224x224 images with 19 bins the preset edges are returned verbatim;
/// otherwise upper edges follow `round(n_freq^((i+1)/n_bins)) - 1`, pushed
/// up where needed to stay strictly increasing.
pub fn default_binning(n_freq: usize, n_bins: usize) -> Result<FrequencyBinning> {
    if n_bins == 0 {
        return Err(Error::arg("n_bins must be at least 1"));
    }
    if n_bins > n_freq {
        return Err(Error::arg(format!("n_bins ({n_bins}) exceeds n_freq ({n_freq})")));
    }
    if n_freq == 50176 && n_bins == 19 {
        return FrequencyBinning::new(PRESET_224_EDGES.to_vec());
    }
    let mut edges = Vec::with_capacity(n_bins);
    let mut prev: Option<usize> = None;
    for i in 0..n_bins {
        let raw = (n_freq as f64).powf((i + 1) as f64 / n_bins as f64).round() as usize;
        let mut e = raw.saturating_sub(1);
        if let Some(p) = prev {
            e = e.max(p + 1);
        }
        // Leave room for the remaining bins.
        e = e.min(n_freq - (n_bins - i));
        edges.push(e);
        prev = Some(e);
    }
    *edges.last_mut().expect("n_bins >= 1") = n_freq - 1;
    FrequencyBinning::new(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_basis() {
        let b = dct_basis(1, 1).unwrap();
        assert_eq!(b.element(0), vec![1.0]);
    }

    #[test]
    fn two_point_basis() {
        let b = dct_basis(1, 2).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let (v0, v1) = (b.element(0), b.element(1));
        assert!((v0[0] - s).abs() < 1e-15 && (v0[1] - s).abs() < 1e-15);
        assert!((v1[0] - s).abs() < 1e-15 && (v1[1] + s).abs() < 1e-15);
    }

    #[test]
    fn radial_ordering() {
        let b = dct_basis(3, 3).unwrap();
        assert_eq!(&b.ordering()[..5], &[(0, 0), (0, 1), (1, 0), (1, 1), (0, 2)]);
        for k in 0..9 {
            let (u, v) = b.frequency(k);
            assert_eq!(b.index_of(u, v), k);
        }
        let rm = DctBasis::new(2, 3, FrequencyOrdering::RowMajor).unwrap();
        assert_eq!(rm.frequency(4), (1, 1));
    }

    #[test]
    fn constant_image_has_only_dc() {
        let b = dct_basis(4, 4).unwrap();
        let img = ImageTensor::filled(4, 4, 1, 0.3);
        let c = dct_forward(&img, &b).unwrap();
        assert!((c.channels[0][0] - 1.2).abs() < 1e-12);
        assert!(c.channels[0][1..].iter().all(|v| v.abs() < 1e-12));
        let z = dct_forward(&ImageTensor::zeros(4, 4, 1), &b).unwrap();
        assert!(z.channels[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_coefficients_reconstruct_element() {
        let b = dct_basis(5, 3).unwrap();
        for k in [0, 4, 14] {
            let mut c = vec![0.0; 15];
            c[k] = 1.0;
            let img = b.inverse_plane(&c).unwrap();
            let e = b.element(k);
            assert!(img.iter().zip(&e).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let b = dct_basis(4, 4).unwrap();
        assert!(dct_forward(&ImageTensor::zeros(4, 5, 1), &b).is_err());
        assert!(b.inverse_plane(&[0.0; 3]).is_err());
    }

    #[test]
    fn preset_binning() {
        let b = default_binning(50176, 19).unwrap();
        assert_eq!(&b.upper_edges()[..3], &[2, 17, 69]);
        assert_eq!(b.ranges()[1], (3, 17));
        assert_eq!(b.n_freq(), 50176);
    }

    #[test]
    fn geometric_binning() {
        assert_eq!(default_binning(4, 1).unwrap().upper_edges(), &[3]);
        // round(4096^(i/8)) - 1 for i = 1..8
        let b = default_binning(4096, 8).unwrap();
        assert_eq!(b.upper_edges(), &[2, 7, 22, 63, 180, 511, 1447, 4095]);
        let tight = default_binning(10, 10).unwrap();
        assert_eq!(tight.upper_edges(), &(0..10).collect::<Vec<_>>()[..]);
        assert!(default_binning(3, 4).is_err());
        assert!(default_binning(3, 0).is_err());
    }

    #[test]
    fn bin_lookup_and_band() {
        let b = FrequencyBinning::new(vec![2, 5, 9]).unwrap();
        assert_eq!(b.bin_of(0), Some(0));
        assert_eq!(b.bin_of(3), Some(1));
        assert_eq!(b.bin_of(9), Some(2));
        assert_eq!(b.bin_of(10), None);
        assert_eq!(FrequencyBinning::around_band(10, 3, 5).unwrap().upper_edges(), &[2, 5, 9]);
        assert_eq!(FrequencyBinning::around_band(10, 0, 9).unwrap().upper_edges(), &[9]);
        assert!(FrequencyBinning::new(vec![3, 3]).is_err());
    }
}
