//! The D2Neighbors detector: `o(x) = M_j^gamma { ||x - u_j||_p^p }`, a generalized
//! f-mean with `f(t) = exp(-gamma t)` over distances to a bank of inlier images.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bankfile;
use crate::error::{Error, Result};
use crate::imagegrid::{resize, BlurSpec, ImageTensor, ResizePolicy, ResizeVariant};

/// Supported exponents of the `l_p^p` distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum NormOrder {
    L1,
    L2,
    L4,
}

impl NormOrder {
    pub fn as_f64(self) -> f64 {
        match self {
            NormOrder::L1 => 1.0,
            NormOrder::L2 => 2.0,
            NormOrder::L4 => 4.0,
        }
    }

    pub const ALL: [NormOrder; 3] = [NormOrder::L1, NormOrder::L2, NormOrder::L4];
}

impl TryFrom<f64> for NormOrder {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        match p {
            1.0 => Ok(NormOrder::L1),
            2.0 => Ok(NormOrder::L2),
            4.0 => Ok(NormOrder::L4),
            p => Err(Error::UnsupportedNorm(p)),
        }
    }
}

impl From<NormOrder> for f64 {
    fn from(p: NormOrder) -> f64 {
        p.as_f64()
    }
}

impl std::fmt::Display for NormOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "l{}", self.as_f64() as u32)
    }
}

fn lp_slices(x: &[f64], u: &[f64], p: NormOrder) -> f64 {
    let it = x.iter().zip(u).map(|(a, b)| a - b);
    match p {
        NormOrder::L1 => it.map(f64::abs).sum(),
        NormOrder::L2 => it.map(|d| d * d).sum(),
        NormOrder::L4 => it
            .map(|d| {
                let d2 = d * d;
                d2 * d2
            })
            .sum(),
    }
}

/// `sum_i |x_i - u_i|^p`: the p-th power of the norm, not the norm itself.
pub fn lp_distance(x: &ImageTensor, u: &ImageTensor, p: NormOrder) -> Result<f64> {
    x.check_same_shape(u)?;
    Ok(lp_slices(x.values(), u.values(), p))
}

fn min_of(d: &[f64]) -> f64 {
    d.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Generalized f-mean `-(1/gamma) ln((1/N) sum_j exp(-gamma d_j))`.
///
/// Evaluated with the minimum shifted out of the exponentials and `ln_1p`/`exp_m1`
/// so that both the `gamma -> 0` (mean) and `gamma -> inf` (min) limits stay accurate.
///
/// # Panics
///
/// Panics if `d` is empty or `gamma` is not positive.
pub fn softmin_mean(d: &[f64], gamma: f64) -> f64 {
    assert!(!d.is_empty(), "softmin over an empty set");
    assert!(gamma > 0.0, "gamma must be positive");
    let m = min_of(d);
    let s = d.iter().map(|dj| (-gamma * (dj - m)).exp_m1()).sum::<f64>() / d.len() as f64;
    m - s.ln_1p() / gamma
}

/// Softmin membership weights `exp(-gamma d_j) / sum_j exp(-gamma d_j)`.
///
/// # Panics
///
/// Panics if `d` is empty.
pub fn membership_weights(d: &[f64], gamma: f64) -> Vec<f64> {
    assert!(!d.is_empty(), "softmin over an empty set");
    let m = min_of(d);
    let mut w: Vec<f64> = d.iter().map(|dj| (-gamma * (dj - m)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// `exp(entropy(w))` with `0 ln 0 = 0`: the effective number of contributors.
pub fn perplexity(w: &[f64]) -> f64 {
    let h: f64 = w.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.exp()
}

/// Target for calibrating `gamma`: average perplexity equal to a fraction of the
/// bank size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaPolicy {
    pub target_perplexity_fraction: f64,
    /// Relative tolerance on the achieved perplexity.
    pub tolerance: f64,
}

impl Default for GammaPolicy {
    fn default() -> Self {
        Self { target_perplexity_fraction: 0.25, tolerance: 0.005 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub gamma: f64,
    pub target_perplexity: f64,
    pub achieved_perplexity: f64,
    /// Set when the target lies outside the reachable perplexity range and
    /// `gamma` was pinned to a search boundary.
    pub saturated: bool,
}

/// Symmetric matrix of `l_p^p` distances between bank members, row-major.
pub fn pairwise_distances(bank: &[ImageTensor], p: NormOrder) -> Result<Vec<f64>> {
    let n = bank.len();
    for u in bank {
        bank[0].check_same_shape(u)?;
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { lp_slices(bank[i].values(), bank[j].values(), p) })
                .collect()
        })
        .collect();
    Ok(rows.concat())
}

/// Mean over bank members of the perplexity of their leave-one-out membership weights.
pub fn average_loo_perplexity(pairwise: &[f64], n: usize, gamma: f64) -> f64 {
    let mut row = Vec::with_capacity(n.saturating_sub(1));
    let mut total = 0.0;
    for i in 0..n {
        row.clear();
        row.extend((0..n).filter(|&j| j != i).map(|j| pairwise[i * n + j]));
        total += perplexity(&membership_weights(&row, gamma));
    }
    total / n as f64
}

const GAMMA_SPAN: f64 = 1e12;
const MAX_BISECTIONS: usize = 400;

/// Calibrates `gamma` from a precomputed pairwise distance matrix of `n` points.
pub fn calibrate_gamma_from_distances(pairwise: &[f64], n: usize, policy: &GammaPolicy) -> Result<CalibrationOutcome> {
    if n < 3 {
        return Err(Error::arg(format!("gamma calibration needs at least 3 bank members, got {n}")));
    }
    if pairwise.len() != n * n {
        return Err(Error::shape(format!("{}x{} matrix", n, n), pairwise.len()));
    }
    if !(policy.target_perplexity_fraction > 0.0 && policy.target_perplexity_fraction <= 1.0) {
        return Err(Error::arg("target_perplexity_fraction must lie in (0, 1]"));
    }
    let target = policy.target_perplexity_fraction * n as f64;
    let off_diag: Vec<f64> = (0..n * n).filter(|i| i / n != i % n).map(|i| pairwise[i]).collect();
    let mean_d = off_diag.iter().sum::<f64>() / off_diag.len() as f64;
    let scale = if mean_d > 0.0 { 1.0 / mean_d } else { 1.0 };
    let (mut lo, mut hi) = ((scale / GAMMA_SPAN).ln(), (scale * GAMMA_SPAN).ln());
    let eval = |log_g: f64| average_loo_perplexity(pairwise, n, log_g.exp());
    let within = |perp: f64| (perp - target).abs() <= policy.tolerance * target;

    let outcome = |log_g: f64, perp: f64, saturated: bool| CalibrationOutcome {
        gamma: log_g.exp(),
        target_perplexity: target,
        achieved_perplexity: perp,
        saturated,
    };
    // Perplexity is non-increasing in gamma.
    let p_lo = eval(lo);
    if p_lo <= target || within(p_lo) {
        return Ok(outcome(lo, p_lo, !within(p_lo)));
    }
    let p_hi = eval(hi);
    if p_hi >= target || within(p_hi) {
        return Ok(outcome(hi, p_hi, !within(p_hi)));
    }
    let mut best = (lo, p_lo);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let p_mid = eval(mid);
        if (p_mid - target).abs() < (best.1 - target).abs() {
            best = (mid, p_mid);
        }
        if within(p_mid) && (hi - lo) < 1e-6 {
            break;
        }
        if p_mid > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(outcome(best.0, best.1, !within(best.1)))
}

/// Sets `gamma` so that the average leave-one-out perplexity over the bank meets the policy.
pub fn calibrate_gamma(bank: &[ImageTensor], p: NormOrder, policy: &GammaPolicy) -> Result<CalibrationOutcome> {
    let pairwise = pairwise_distances(bank, p)?;
    calibrate_gamma_from_distances(&pairwise, bank.len(), policy)
}

/// Preprocessing applied identically to bank images at fit time and to inputs at
/// score time: optional resize, then optional blur.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    pub resize: Option<ResizePolicy>,
    pub blur: Option<BlurSpec>,
}

impl Preprocess {
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let mut out = match &self.resize {
            Some(policy) => resize(img, policy)?,
            None => img.clone(),
        };
        if let Some(blur) = &self.blur {
            out = blur.apply(&out)?;
        }
        Ok(out)
    }

    /// Same pipeline with the resampling algorithm swapped (the deployment change).
    pub fn with_resize_variant(&self, variant: ResizeVariant) -> Self {
        Self { resize: self.resize.map(|r| r.with_variant(variant)), blur: self.blur }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Fixed(f64),
    Calibrate(GammaPolicy),
}

impl Default for GammaChoice {
    fn default() -> Self {
        GammaChoice::Calibrate(GammaPolicy::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct D2NeighborsModel {
    bank: Vec<ImageTensor>,
    p: NormOrder,
    gamma: f64,
    preprocess: Preprocess,
    calibration: Option<CalibrationOutcome>,
}

impl D2NeighborsModel {
    /// Builds a model from already preprocessed bank images.
    pub fn from_parts(bank: Vec<ImageTensor>, p: NormOrder, gamma: f64, preprocess: Preprocess) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::arg("bank must not be empty"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be positive and finite, got {gamma}")));
        }
        for u in &bank {
            bank[0].check_same_shape(u)?;
        }
        Ok(Self { bank, p, gamma, preprocess, calibration: None })
    }

    /// Preprocesses `train` and stores it as the bank, calibrating `gamma` if requested.
    pub fn fit(train: &[ImageTensor], p: NormOrder, preprocess: Preprocess, gamma: GammaChoice) -> Result<Self> {
        let bank = train
            .par_iter()
            .map(|x| preprocess.apply(x))
            .collect::<Result<Vec<_>>>()?;
        match gamma {
            GammaChoice::Fixed(g) => Self::from_parts(bank, p, g, preprocess),
            GammaChoice::Calibrate(policy) => {
                let outcome = calibrate_gamma(&bank, p, &policy)?;
                let mut model = Self::from_parts(bank, p, outcome.gamma, preprocess)?;
                model.calibration = Some(outcome);
                Ok(model)
            }
        }
    }

    pub fn bank(&self) -> &[ImageTensor] {
        &self.bank
    }

    pub fn p(&self) -> NormOrder {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn preprocess(&self) -> &Preprocess {
        &self.preprocess
    }

    pub fn calibration(&self) -> Option<&CalibrationOutcome> {
        self.calibration.as_ref()
    }

    /// Shape `(h, w, c)` of bank images.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.bank[0].shape()
    }

    pub fn prepare(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let out = self.preprocess.apply(x)?;
        self.bank[0].check_same_shape(&out)?;
        Ok(out)
    }

    /// Distances from an already preprocessed input to every bank member.
    pub fn distances_prepared(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        self.bank[0].check_same_shape(x)?;
        Ok(self.bank.iter().map(|u| lp_slices(x.values(), u.values(), self.p)).collect())
    }

    pub fn score_prepared(&self, x: &ImageTensor) -> Result<f64> {
        Ok(softmin_mean(&self.distances_prepared(x)?, self.gamma))
    }

    /// Anomaly score `o(x)` of a raw input.
    pub fn score(&self, x: &ImageTensor) -> Result<f64> {
        self.score_prepared(&self.prepare(x)?)
    }

    pub fn score_batch(&self, xs: &[ImageTensor]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.score(x)).collect()
    }

    /// Writes `manifest.json` and one `.d2nb` file per bank member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.bank.len());
        for (j, u) in self.bank.iter().enumerate() {
            let name = format!("bank_{j:05}.d2nb");
            bankfile::write(&dir.join(&name), MAGIC, u)?;
            files.push(name);
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            p: self.p,
            gamma: self.gamma,
            preprocess: self.preprocess.clone(),
            calibration: self.calibration,
            bank: files,
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
        let bank = manifest
            .bank
            .iter()
            .map(|name| bankfile::read(&dir.join(name), MAGIC))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::from_parts(bank, manifest.p, manifest.gamma, manifest.preprocess)?;
        model.calibration = manifest.calibration;
        Ok(model)
    }
}

const MAGIC: &[u8; 4] = b"D2NB";
const MANIFEST_FORMAT: &str = "d2neighbors";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    p: NormOrder,
    gamma: f64,
    preprocess: Preprocess,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationOutcome>,
    bank: Vec<String>,
}
