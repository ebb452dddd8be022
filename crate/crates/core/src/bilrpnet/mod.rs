//! Small feedforward networks with explicit weights and their relevance
//! explanations: first-order LRP, second-order BiLRP for dot-product
//! similarities `y = <phi(x), phi(x')>`, a linear readout in dual form, and
//! relevance-guided pruning of feature maps.

mod network;
mod readout;
mod render;

pub use network::{random_mlp, Layer, Shape, ToyNetwork};
pub use readout::{fit_linear_readout, DualForm, LinearReadout, ReadoutOptions};
pub use render::{render_bipartite, significant_entries};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use network::{LinearMap, Step};

/// Propagation rule of one linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpRule {
    /// LRP-0: contributions divided by the pre-activation.
    Zero,
    /// LRP-epsilon with an absolute stabilizer.
    Epsilon(f64),
    /// LRP-epsilon with `eps = factor * mean_k |z_k|` over the layer's pre-activations.
    EpsilonRelative(f64),
}

impl LrpRule {
    fn stabilizer(self, preact: &[f64]) -> f64 {
        match self {
            LrpRule::Zero => 0.0,
            LrpRule::Epsilon(e) => e,
            LrpRule::EpsilonRelative(f) => f * preact.iter().map(|z| z.abs()).sum::<f64>() / preact.len() as f64,
        }
    }
}

/// Rules for every linear layer: `hidden` everywhere except the last linear
/// layer, which uses `output`. `per_layer`, when set, overrides both and is indexed
/// by linear-layer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrpRules {
    pub hidden: LrpRule,
    pub output: LrpRule,
    pub per_layer: Option<Vec<LrpRule>>,
}

impl Default for LrpRules {
    fn default() -> Self {
        Self { hidden: LrpRule::EpsilonRelative(1e-6), output: LrpRule::Zero, per_layer: None }
    }
}

impl LrpRules {
    /// LRP-0 everywhere.
    pub fn zero() -> Self {
        Self::uniform(LrpRule::Zero)
    }

    pub fn uniform(rule: LrpRule) -> Self {
        Self { hidden: rule, output: rule, per_layer: None }
    }

    fn rule_for(&self, linear_index: usize, n_linear: usize) -> Result<LrpRule> {
        if let Some(rules) = &self.per_layer {
            return rules.get(linear_index).copied().ok_or_else(|| {
                Error::arg(format!("per-layer rules list has {} entries, network has {n_linear} linear layers", rules.len()))
            });
        }
        Ok(if linear_index + 1 == n_linear { self.output } else { self.hidden })
    }
}

/// Forward pass with everything the backward rules need.
struct Trace {
    /// `acts[l]` is the input of layer `l`; the last entry is the representation.
    acts: Vec<Vec<f64>>,
    /// Stabilized denominators of each linear step, indexed by layer.
    denominators: Vec<Option<Vec<f64>>>,
}

fn stabilize(z: f64, eps: f64) -> f64 {
    z + if z >= 0.0 { eps } else { -eps }
}

impl ToyNetwork {
    fn trace(&self, x: &[f64], rules: &LrpRules) -> Result<Trace> {
        self.check_input(x)?;
        let n_linear = self.linear_count();
        let mut acts = vec![x.to_vec()];
        let mut denominators = Vec::with_capacity(self.steps().len());
        let mut linear_idx = 0;
        for step in self.steps() {
            let a = acts.last().expect("input present");
            match step {
                Step::Linear(map) => {
                    let z = map.apply(a);
                    let rule = rules.rule_for(linear_idx, n_linear)?;
                    linear_idx += 1;
                    let eps = rule.stabilizer(&z);
                    denominators.push(Some(z.iter().map(|&zk| stabilize(zk, eps)).collect()));
                    acts.push(z);
                }
                Step::Relu => {
                    denominators.push(None);
                    acts.push(a.iter().map(|v| v.max(0.0)).collect());
                }
                Step::Reshape => {
                    denominators.push(None);
                    acts.push(a.clone());
                }
            }
        }
        Ok(Trace { acts, denominators })
    }
}

/// `R_j = sum_k w_jk a_j / D_k * R_k`; units with a zero denominator pass nothing.
fn lrp_linear(map: &LinearMap, a: &[f64], denom: &[f64], upper: &[f64]) -> Vec<f64> {
    let coef: Vec<f64> = upper
        .iter()
        .zip(denom)
        .map(|(r, d)| if *d == 0.0 { 0.0 } else { r / d })
        .collect();
    let mut lower = vec![0.0; map.in_len];
    for &(k, j, w) in &map.conns {
        lower[j as usize] += w * a[j as usize] * coef[k as usize];
    }
    lower
}

impl Trace {
    /// Relevance at every layer boundary for a start vector at the output.
    fn backward(&self, net: &ToyNetwork, start: Vec<f64>, stop_at: usize) -> Vec<f64> {
        let mut r = start;
        for (l, step) in net.steps().iter().enumerate().rev() {
            if l < stop_at {
                break;
            }
            if let Step::Linear(map) = step {
                let denom = self.denominators[l].as_ref().expect("linear step has denominators");
                r = lrp_linear(map, &self.acts[l], denom, &r);
            }
        }
        r
    }

    fn output(&self) -> &[f64] {
        self.acts.last().expect("output present")
    }
}

pub fn forward(net: &ToyNetwork, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(x)
}

pub fn similarity(net: &ToyNetwork, x: &[f64], x2: &[f64]) -> Result<f64> {
    let (a, b) = (net.forward(x)?, net.forward(x2)?);
    Ok(a.iter().zip(&b).map(|(p, q)| p * q).sum())
}

/// Input relevance of representation unit `k`, starting from `R_k = phi_k(x)`.
pub fn lrp(net: &ToyNetwork, x: &[f64], output_index: usize, rules: &LrpRules) -> Result<Vec<f64>> {
    lrp_at(net, x, output_index, rules, 0)
}

/// Like [`lrp`] but stops at the input of layer `boundary`.
pub fn lrp_at(net: &ToyNetwork, x: &[f64], output_index: usize, rules: &LrpRules, boundary: usize) -> Result<Vec<f64>> {
    let trace = net.trace(x, rules)?;
    let out_len = trace.output().len();
    if output_index >= out_len {
        return Err(Error::arg(format!("output index {output_index} out of range for {out_len} units")));
    }
    let mut start = vec![0.0; out_len];
    start[output_index] = trace.output()[output_index];
    Ok(trace.backward(net, start, boundary))
}

/// Second-order relevance of `y = <phi(x), phi(x2)>` over pairs of features.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLrpExplanation {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; entry `(j, j')` pairs feature `j` of `x` with feature `j'` of `x2`.
    pub r: Vec<f64>,
    pub y: f64,
}

impl BiLrpExplanation {
    pub fn get(&self, j: usize, j2: usize) -> f64 {
        self.r[j * self.cols + j2]
    }

    pub fn total(&self) -> f64 {
        self.r.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut r = vec![0.0; self.r.len()];
        for j in 0..self.rows {
            for j2 in 0..self.cols {
                r[j2 * self.rows + j] = self.get(j, j2);
            }
        }
        Self { rows: self.cols, cols: self.rows, r, y: self.y }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.r.iter().zip(&other.r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn bilrp_factorized(net: &ToyNetwork, x: &[f64], x2: &[f64], rules: &LrpRules, boundary: usize) -> Result<BiLrpExplanation> {
    let (ta, tb) = (net.trace(x, rules)?, net.trace(x2, rules)?);
    let (pa, pb) = (ta.output(), tb.output());
    let y = pa.iter().zip(pb).map(|(a, b)| a * b).sum();
    let maps: Vec<(Vec<f64>, Vec<f64>)> = (0..pa.len())
        .into_par_iter()
        .map(|k| {
            let mut sa = vec![0.0; pa.len()];
            sa[k] = pa[k];
            let mut sb = vec![0.0; pb.len()];
            sb[k] = pb[k];
            (ta.backward(net, sa, boundary), tb.backward(net, sb, boundary))
        })
        .collect();
    let rows = net.boundary_len(boundary);
    let mut r = vec![0.0; rows * rows];
    for (ra, rb) in &maps {
        for (j, a) in ra.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j2, b) in rb.iter().enumerate() {
                r[j * rows + j2] += a * b;
            }
        }
    }
    Ok(BiLrpExplanation { rows, cols: rows, r, y })
}

/// `BiLRP(y) = sum_k LRP(phi_k(x)) (x) LRP(phi_k(x2))`.
pub fn bilrp(net: &ToyNetwork, x: &[f64], x2: &[f64], rules: &LrpRules) -> Result<BiLrpExplanation> {
    bilrp_factorized(net, x, x2, rules, 0)
}

/// Largest total hidden width [`bilrp_direct`] accepts.
pub const DIRECT_WIDTH_LIMIT: usize = 64;

/// Propagates the full pair matrix `R_kk'` layer by layer:
/// `R_jj' = sum_kk' z_jk z'_j'k' / (D_k D'_k') R_kk'`, starting from
/// `R_kk' = delta_kk' phi_k(x) phi_k(x2)`. Quadratic in layer width; meant as an
/// oracle for [`bilrp`].
pub fn bilrp_direct(net: &ToyNetwork, x: &[f64], x2: &[f64], rules: &LrpRules) -> Result<BiLrpExplanation> {
    let hidden: usize = (1..net.steps().len())
        .filter(|&b| matches!(net.steps()[b - 1], Step::Linear(_)))
        .map(|b| net.boundary_len(b))
        .sum();
    if hidden > DIRECT_WIDTH_LIMIT {
        return Err(Error::WidthBoundExceeded { width: hidden, limit: DIRECT_WIDTH_LIMIT });
    }
    let (ta, tb) = (net.trace(x, rules)?, net.trace(x2, rules)?);
    let (pa, pb) = (ta.output(), tb.output());
    let y = pa.iter().zip(pb).map(|(a, b)| a * b).sum();
    let mut n = pa.len();
    let mut r = vec![0.0; n * n];
    for k in 0..n {
        r[k * n + k] = pa[k] * pb[k];
    }
    for (l, step) in net.steps().iter().enumerate().rev() {
        let Step::Linear(map) = step else { continue };
        let (aa, ab) = (&ta.acts[l], &tb.acts[l]);
        let (da, db) = (
            ta.denominators[l].as_ref().expect("denominators"),
            tb.denominators[l].as_ref().expect("denominators"),
        );
        let m = map.in_len;
        let mut lower = vec![0.0; m * m];
        for &(k, j, w) in &map.conns {
            let (k, j) = (k as usize, j as usize);
            if da[k] == 0.0 {
                continue;
            }
            let left = w * aa[j] / da[k];
            for &(k2, j2, w2) in &map.conns {
                let (k2, j2) = (k2 as usize, j2 as usize);
                if db[k2] == 0.0 {
                    continue;
                }
                lower[j * m + j2] += left * (w2 * ab[j2] / db[k2]) * r[k * n + k2];
            }
        }
        r = lower;
        n = m;
    }
    Ok(BiLrpExplanation { rows: n, cols: n, r, y })
}

/// Patch-to-patch aggregation of a pixel-level explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Row-major `P x P` with `P = grid_rows * grid_cols`.
    pub values: Vec<f64>,
}

impl PatchMatrix {
    pub fn n_patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> Result<()> {
        writeln!(out, "patch_i,patch_j,value")?;
        let p = self.n_patches();
        for i in 0..p {
            for j in 0..p {
                writeln!(out, "{i},{j},{:e}", self.values[i * p + j])?;
            }
        }
        Ok(())
    }
}

/// Sums `r_jj'` over `patch x patch` blocks (and channels) of both input grids.
///
/// Features are laid out channel-major over an `input_h x input_w` grid.
pub fn aggregate_patches(expl: &BiLrpExplanation, input_h: usize, input_w: usize, patch: usize) -> Result<PatchMatrix> {
    let plane = input_h * input_w;
    if patch == 0 || plane == 0 || !expl.rows.is_multiple_of(plane) || !expl.cols.is_multiple_of(plane) {
        return Err(Error::shape(
            format!("features over a {input_h}x{input_w} grid"),
            format!("{}x{} explanation", expl.rows, expl.cols),
        ));
    }
    let grid_rows = input_h.div_ceil(patch);
    let grid_cols = input_w.div_ceil(patch);
    let p = grid_rows * grid_cols;
    let patch_of = |j: usize| {
        let pix = j % plane;
        (pix / input_w / patch) * grid_cols + (pix % input_w) / patch
    };
    let mut values = vec![0.0; p * p];
    for j in 0..expl.rows {
        let pj = patch_of(j);
        for j2 in 0..expl.cols {
            values[pj * p + patch_of(j2)] += expl.get(j, j2);
        }
    }
    Ok(PatchMatrix { grid_rows, grid_cols, values })
}

/// Total absolute pair relevance per output channel of linear layer `layer`,
/// accumulated over `probe_pairs`. Returns `(unit, mass)` sorted by decreasing mass.
pub fn rank_units(net: &ToyNetwork, probe_pairs: &[(Vec<f64>, Vec<f64>)], layer: usize, rules: &LrpRules) -> Result<Vec<(usize, f64)>> {
    let channels = net.prunable_channels(layer)?;
    let boundary = layer + 1;
    let len = net.boundary_len(boundary);
    let per_channel = len / channels;
    let mut mass = vec![0.0; channels];
    for (x, x2) in probe_pairs {
        let expl = bilrp_factorized(net, x, x2, rules, boundary)?;
        for i in 0..len {
            for i2 in 0..len {
                let v = expl.get(i, i2).abs();
                mass[i / per_channel] += v;
                mass[i2 / per_channel] += v;
            }
        }
    }
    let mut ranked: Vec<(usize, f64)> = mass.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Zeroes the outgoing weights of the `n` most relevant units of linear layer
/// `layer`, ranked with [`rank_units`]. Shapes are unchanged.
pub fn prune_feature_maps(
    net: &ToyNetwork,
    probe_pairs: &[(Vec<f64>, Vec<f64>)],
    n: usize,
    layer: usize,
    rules: &LrpRules,
) -> Result<ToyNetwork> {
    let channels = net.prunable_channels(layer)?;
    if n > channels {
        return Err(Error::arg(format!("cannot prune {n} units from a layer with {channels}")));
    }
    if n == 0 {
        return Ok(net.clone());
    }
    let ranked = rank_units(net, probe_pairs, layer, rules)?;
    let pruned: Vec<usize> = ranked.iter().take(n).map(|(u, _)| *u).collect();
    net.with_outgoing_zeroed(layer, &pruned)
}
