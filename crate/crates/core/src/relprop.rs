//! Relevance propagation for D2Neighbors.
//!
//! The score is first redistributed onto bank members with the softmin
//! ("min-take-most") rule, then, for `p = 2`, through the squared distance and a
//! DCT virtual layer onto joint pixel-frequency features:
//!
//! ```text
//! R_ik = sum_j [d_j]_i [v_k]_i <v_k, d_j> / (eps + ||d_j||^2) * R_j,   d_j = x - u_j
//! ```
//!
//! which is the interacting-pixel marginal of the pixel-pixel-frequency rule.
//! The three-way tensor is never materialized.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::d2neighbors::{membership_weights, softmin_mean, D2NeighborsModel, NormOrder};
use crate::error::{Error, Result};
use crate::imagegrid::ImageTensor;
use crate::spectral::{DctBasis, FrequencyBinning};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRelevance {
    /// One entry per bank member.
    pub r: Vec<f64>,
    /// Explained score `o(x)`; equals `r.sum()` up to rounding.
    pub score: f64,
    pub distances: Vec<f64>,
}

pub fn instance_relevance(model: &D2NeighborsModel, x: &ImageTensor) -> Result<InstanceRelevance> {
    instance_relevance_prepared(model, &model.prepare(x)?)
}

pub fn instance_relevance_prepared(model: &D2NeighborsModel, x: &ImageTensor) -> Result<InstanceRelevance> {
    let distances = model.distances_prepared(x)?;
    let score = softmin_mean(&distances, model.gamma());
    let r = membership_weights(&distances, model.gamma())
        .into_iter()
        .map(|w| w * score)
        .collect();
    Ok(InstanceRelevance { r, score, distances })
}

/// Stabilizer of the joint rule's denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilizer {
    /// `factor * mean_j ||x - u_j||^2`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Stabilizer {
    fn default() -> Self {
        Stabilizer::Relative(1e-6)
    }
}

impl Stabilizer {
    fn resolve(self, distances: &[f64]) -> f64 {
        let eps = match self {
            Stabilizer::Relative(f) => f * distances.iter().sum::<f64>() / distances.len() as f64,
            Stabilizer::Absolute(e) => e,
        };
        if eps > 0.0 {
            eps
        } else {
            f64::MIN_POSITIVE
        }
    }
}

/// `R_ik` over pixels `i` (channels summed) and frequency columns `k`.
///
/// Each column covers an inclusive range of frequency indices: single indices at
/// full resolution, or bins.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRelevanceMap {
    pub height: usize,
    pub width: usize,
    pub columns: Vec<(usize, usize)>,
    /// Row-major `(pixel, column)`.
    pub values: Vec<f64>,
    pub epsilon: f64,
    pub score: f64,
    /// `max_j eps / (eps + d_j)`: relative amount of relevance the stabilizer may absorb.
    pub leak_bound: f64,
}

impl JointRelevanceMap {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, pixel: usize, column: usize) -> f64 {
        self.values[pixel * self.columns.len() + column]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Per-column sums.
    pub fn column_sums(&self) -> Vec<f64> {
        let k = self.columns.len();
        let mut sums = vec![0.0; k];
        for row in self.values.chunks_exact(k) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

struct Residuals {
    deltas: Vec<ImageTensor>,
    // R_j / (eps + ||d_j||^2)
    shares: Vec<f64>,
    epsilon: f64,
    score: f64,
    leak_bound: f64,
}

fn residuals(model: &D2NeighborsModel, x: &ImageTensor, basis: &DctBasis, stabilizer: Stabilizer) -> Result<Residuals> {
    if model.p() != NormOrder::L2 {
        return Err(Error::UnsupportedRule(format!(
            "joint pixel-frequency relevance requires p = 2, model has p = {}",
            model.p().as_f64()
        )));
    }
    let x = model.prepare(x)?;
    if x.height() != basis.height() || x.width() != basis.width() {
        return Err(Error::shape(
            format!("{}x{} input", basis.height(), basis.width()),
            format!("{}x{} input", x.height(), x.width()),
        ));
    }
    let inst = instance_relevance_prepared(model, &x)?;
    let epsilon = stabilizer.resolve(&inst.distances);
    let deltas = model.bank().iter().map(|u| x.sub(u)).collect::<Result<Vec<_>>>()?;
    let shares = inst
        .r
        .iter()
        .zip(&inst.distances)
        .map(|(r, d)| r / (epsilon + d))
        .collect();
    let leak_bound = inst.distances.iter().map(|d| epsilon / (epsilon + d)).fold(0.0, f64::max);
    Ok(Residuals { deltas, shares, epsilon, score: inst.score, leak_bound })
}

/// Joint relevance at full frequency resolution (one column per DCT coefficient).
///
/// Cost is `O(N * HW * K)`; prefer [`joint_relevance_binned`] for large images.
pub fn joint_relevance(
    model: &D2NeighborsModel,
    x: &ImageTensor,
    basis: &DctBasis,
    stabilizer: Stabilizer,
) -> Result<JointRelevanceMap> {
    let res = residuals(model, x, basis, stabilizer)?;
    let (h, w) = (basis.height(), basis.width());
    let k_count = basis.len();
    let channels = res.deltas[0].channels();
    // coeffs[j][ch][k] = <v_k, d_j>
    let coeffs: Vec<Vec<Vec<f64>>> = res
        .deltas
        .par_iter()
        .map(|d| (0..channels).map(|ch| basis.forward_plane(&d.plane(ch))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let mut values = vec![0.0; h * w * k_count];
    values.par_chunks_mut(k_count).enumerate().for_each(|(i, row)| {
        let (r, c) = (i / w, i % w);
        let basis_at: Vec<f64> = (0..k_count).map(|k| basis.value(k, r, c)).collect();
        for (j, delta) in res.deltas.iter().enumerate() {
            for (ch, cj) in coeffs[j].iter().enumerate().take(channels) {
                let a = res.shares[j] * delta.get(r, c, ch);
                if a == 0.0 {
                    continue;
                }
                for ((out, vk), ck) in row.iter_mut().zip(&basis_at).zip(cj) {
                    *out += a * vk * ck;
                }
            }
        }
    });
    Ok(JointRelevanceMap {
        height: h,
        width: w,
        columns: (0..k_count).map(|k| (k, k)).collect(),
        values,
        epsilon: res.epsilon,
        score: res.score,
        leak_bound: res.leak_bound,
    })
}

/// Joint relevance with frequency columns aggregated into `binning`'s bins.
///
/// Each bin's column is `sum_j share_j * d_j (.) P_b d_j`, where `P_b` projects
/// onto the bin's basis elements; one band-limited inverse DCT per bin and bank member.
pub fn joint_relevance_binned(
    model: &D2NeighborsModel,
    x: &ImageTensor,
    basis: &DctBasis,
    stabilizer: Stabilizer,
    binning: &FrequencyBinning,
) -> Result<JointRelevanceMap> {
    if binning.n_freq() != basis.len() {
        return Err(Error::shape(format!("binning over {} frequencies", basis.len()), binning.n_freq()));
    }
    let res = residuals(model, x, basis, stabilizer)?;
    let (h, w) = (basis.height(), basis.width());
    let ranges = binning.ranges();
    let n_bins = ranges.len();
    let channels = res.deltas[0].channels();

    let values = res
        .deltas
        .par_iter()
        .zip(&res.shares)
        .map(|(delta, &share)| -> Result<Vec<f64>> {
            let mut acc = vec![0.0; h * w * n_bins];
            for ch in 0..channels {
                let plane = delta.plane(ch);
                let coeffs = basis.forward_plane(&plane)?;
                for (b, &(lo, hi)) in ranges.iter().enumerate() {
                    let mut masked = vec![0.0; coeffs.len()];
                    masked[lo..=hi].copy_from_slice(&coeffs[lo..=hi]);
                    let projected = basis.inverse_plane(&masked)?;
                    for (i, (d, p)) in plane.iter().zip(&projected).enumerate() {
                        acc[i * n_bins + b] += share * d * p;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(vec![0.0; h * w * n_bins], |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        });
    Ok(JointRelevanceMap {
        height: h,
        width: w,
        columns: ranges,
        values,
        epsilon: res.epsilon,
        score: res.score,
        leak_bound: res.leak_bound,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelRelevanceMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PixelRelevanceMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `R_i = sum_k R_ik`.
pub fn pixel_map(jr: &JointRelevanceMap) -> PixelRelevanceMap {
    let k = jr.columns.len();
    PixelRelevanceMap {
        height: jr.height,
        width: jr.width,
        values: jr.values.chunks_exact(k).map(|row| row.iter().sum()).collect(),
    }
}

/// Pixel map restricted to the frequency columns inside `band`.
///
/// Columns must lie entirely inside or outside the band.
pub fn band_filtered_pixel_map(jr: &JointRelevanceMap, band: RangeInclusive<usize>) -> Result<PixelRelevanceMap> {
    let mut selected = Vec::new();
    for (idx, &(lo, hi)) in jr.columns.iter().enumerate() {
        let inside = band.contains(&lo) && band.contains(&hi);
        let disjoint = band.is_empty() || hi < *band.start() || lo > *band.end();
        if inside {
            selected.push(idx);
        } else if !disjoint {
            return Err(Error::arg(format!(
                "band {}:{} splits frequency column {lo}:{hi}",
                band.start(),
                band.end()
            )));
        }
    }
    let k = jr.columns.len();
    Ok(PixelRelevanceMap {
        height: jr.height,
        width: jr.width,
        values: jr
            .values
            .chunks_exact(k)
            .map(|row| selected.iter().map(|&c| row[c]).sum())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRelevanceProfile {
    /// Inclusive frequency-index range of every bin.
    pub bins: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

/// `R_k = sum_i R_ik`, aggregated into `binning`.
pub fn frequency_profile(jr: &JointRelevanceMap, binning: &FrequencyBinning) -> Result<FrequencyRelevanceProfile> {
    let n_freq = jr.columns.last().map_or(0, |c| c.1 + 1);
    if binning.n_freq() != n_freq {
        return Err(Error::shape(format!("binning over {n_freq} frequencies"), binning.n_freq()));
    }
    let bins = binning.ranges();
    let mut values = vec![0.0; bins.len()];
    for (&(lo, hi), sum) in jr.columns.iter().zip(jr.column_sums()) {
        let b = binning.bin_of(lo).expect("column inside binning");
        if binning.bin_of(hi) != Some(b) {
            return Err(Error::arg(format!("frequency column {lo}:{hi} straddles a bin edge")));
        }
        values[b] += sum;
    }
    Ok(FrequencyRelevanceProfile { bins, values })
}

impl FrequencyRelevanceProfile {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mean over instances; with `normalize`, each profile is first divided by its
    /// total absolute relevance.
    pub fn average(profiles: &[FrequencyRelevanceProfile], normalize: bool) -> Result<Self> {
        let first = profiles.first().ok_or_else(|| Error::arg("no profiles to average"))?;
        let mut values = vec![0.0; first.values.len()];
        for p in profiles {
            if p.bins != first.bins {
                return Err(Error::arg("profiles use different binnings"));
            }
            let norm = if normalize {
                let s: f64 = p.values.iter().map(|v| v.abs()).sum();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            } else {
                1.0
            };
            values.iter_mut().zip(&p.values).for_each(|(a, v)| *a += v / norm);
        }
        let n = profiles.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self { bins: first.bins.clone(), values })
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "bin_low,bin_high,relevance")?;
        for (&(lo, hi), v) in self.bins.iter().zip(&self.values) {
            writeln!(out, "{lo},{hi},{v:e}")?;
        }
        Ok(())
    }
}

/// Linear-interpolated percentile of `values`, `q` in `[0, 100]`.
pub(crate) fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Diverging red/white/blue rendering scaled by the 99th percentile of `|v|`.
pub fn heatmap_image(map: &PixelRelevanceMap) -> RgbImage {
    let mut mags: Vec<f64> = map.values.iter().map(|v| v.abs()).collect();
    let scale = percentile(&mut mags, 99.0);
    RgbImage::from_fn(map.width as u32, map.height as u32, |c, r| {
        let v = map.values[r as usize * map.width + c as usize];
        let t = if scale > 0.0 { (v.abs() / scale).min(1.0) } else { 0.0 };
        let fade = (255.0 * (1.0 - t)).round() as u8;
        if v > 0.0 {
            Rgb([255, fade, fade])
        } else if v < 0.0 {
            Rgb([fade, fade, 255])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

pub fn render_heatmap(map: &PixelRelevanceMap, out_path: &Path) -> Result<()> {
    heatmap_image(map).save(out_path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::d2neighbors::Preprocess;
    use crate::spectral::dct_basis;

    fn img(v: &[f64], h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(h, w, 1, v.to_vec()).unwrap()
    }

    fn model(bank: Vec<ImageTensor>, gamma: f64) -> D2NeighborsModel {
        D2NeighborsModel::from_parts(bank, NormOrder::L2, gamma, Preprocess::default()).unwrap()
    }

    #[test]
    fn equidistant_members_share_equally() {
        let m = model(vec![img(&[1.0, 0.0], 1, 2), img(&[-1.0, 0.0], 1, 2)], 0.3);
        let ir = instance_relevance(&m, &img(&[0.0, 0.0], 1, 2)).unwrap();
        assert!((ir.r[0] - ir.score / 2.0).abs() < 1e-15);
        assert!((ir.r[1] - ir.score / 2.0).abs() < 1e-15);
    }

    #[test]
    fn min_take_most_split() {
        let gamma: f64 = 0.9;
        let gap = (4f64.ln() / gamma).sqrt();
        let m = model(vec![img(&[0.0], 1, 1), img(&[gap], 1, 1)], gamma);
        let ir = instance_relevance(&m, &img(&[0.0], 1, 1)).unwrap();
        assert!((ir.r[0] - 0.8 * ir.score).abs() < 1e-12);
        assert!((ir.r[1] - 0.2 * ir.score).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_euclidean_models() {
        let m = D2NeighborsModel::from_parts(vec![img(&[0.0; 4], 2, 2)], NormOrder::L1, 1.0, Preprocess::default()).unwrap();
        let basis = dct_basis(2, 2).unwrap();
        let err = joint_relevance(&m, &img(&[1.0; 4], 2, 2), &basis, Stabilizer::default());
        assert!(matches!(err, Err(Error::UnsupportedRule(_))));
        // instance relevance still works for other norms
        assert!(instance_relevance(&m, &img(&[1.0; 4], 2, 2)).is_ok());
    }

    #[test]
    fn overlap_gives_zero_relevance() {
        let u = img(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        let m = model(vec![u.clone()], 1.0);
        let jr = joint_relevance(&m, &u, &dct_basis(2, 2).unwrap(), Stabilizer::default()).unwrap();
        assert!(jr.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn marginals() {
        let jr = JointRelevanceMap {
            height: 1,
            width: 2,
            columns: vec![(0, 0), (1, 1)],
            values: vec![1.0, 2.0, 3.0, 4.0],
            epsilon: 0.0,
            score: 10.0,
            leak_bound: 0.0,
        };
        assert_eq!(pixel_map(&jr).values, vec![3.0, 7.0]);
        let one = FrequencyBinning::new(vec![1]).unwrap();
        assert_eq!(frequency_profile(&jr, &one).unwrap().values, vec![10.0]);
        let two = FrequencyBinning::new(vec![0, 1]).unwrap();
        assert_eq!(frequency_profile(&jr, &two).unwrap().values, vec![4.0, 6.0]);
        assert_eq!(band_filtered_pixel_map(&jr, 0..=1).unwrap(), pixel_map(&jr));
        #[allow(clippy::reversed_empty_ranges)]
        let empty = band_filtered_pixel_map(&jr, 1..=0).unwrap();
        assert_eq!(empty.values, vec![0.0, 0.0]);
        assert_eq!(band_filtered_pixel_map(&jr, 1..=1).unwrap().values, vec![2.0, 4.0]);

        let zero = JointRelevanceMap { values: vec![0.0; 4], ..jr.clone() };
        assert_eq!(pixel_map(&zero).values, vec![0.0, 0.0]);
    }

    #[test]
    fn band_must_align_with_bins() {
        let jr = JointRelevanceMap {
            height: 1,
            width: 1,
            columns: vec![(0, 3)],
            values: vec![1.0],
            epsilon: 0.0,
            score: 1.0,
            leak_bound: 0.0,
        };
        assert!(band_filtered_pixel_map(&jr, 1..=2).is_err());
        assert!(frequency_profile(&jr, &FrequencyBinning::new(vec![1, 3]).unwrap()).is_err());
    }

    #[test]
    fn profile_averaging() {
        let a = FrequencyRelevanceProfile { bins: vec![(0, 0), (1, 1)], values: vec![1.0, 3.0] };
        let b = FrequencyRelevanceProfile { bins: vec![(0, 0), (1, 1)], values: vec![2.0, 2.0] };
        let avg = FrequencyRelevanceProfile::average(&[a.clone(), b.clone()], false).unwrap();
        assert_eq!(avg.values, vec![1.5, 2.5]);
        let norm = FrequencyRelevanceProfile::average(&[a, b], true).unwrap();
        assert_eq!(norm.values, vec![0.375, 0.625]);
        let mut csv = Vec::new();
        norm.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("bin_low,bin_high,relevance\n0,0,"));
    }

    #[test]
    fn heatmap_colors() {
        let zero = PixelRelevanceMap { height: 2, width: 2, values: vec![0.0; 4] };
        assert!(heatmap_image(&zero).pixels().all(|p| p.0 == [255, 255, 255]));
        let pos = PixelRelevanceMap { height: 2, width: 3, values: vec![0.7; 6] };
        assert!(heatmap_image(&pos).pixels().all(|p| p.0 == [255, 0, 0]));
        let mixed = PixelRelevanceMap { height: 1, width: 4, values: vec![0.5, -0.25, 0.0, 1.0] };
        let neg = PixelRelevanceMap { values: mixed.values.iter().map(|v| -v).collect(), ..mixed.clone() };
        let (a, b) = (heatmap_image(&mixed), heatmap_image(&neg));
        for (p, q) in a.pixels().zip(b.pixels()) {
            assert_eq!(p.0, [q.0[2], q.0[1], q.0[0]]);
        }
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&mut [3.0, 1.0, 2.0], 50.0), 2.0);
        assert!((percentile(&mut (0..101).map(f64::from).collect::<Vec<_>>(), 99.0) - 99.0).abs() < 1e-12);
    }
}
