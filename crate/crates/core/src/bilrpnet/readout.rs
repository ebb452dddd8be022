use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutOptions {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ReadoutOptions {
    fn default() -> Self {
        Self { l2: 0.1, tolerance: 1e-6, max_iterations: 500_000 }
    }
}

/// Representer expansion `w = sum_i alpha_i phi(x_i)` over the training embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualForm {
    pub alpha: Vec<f64>,
    pub support: Vec<Vec<f64>>,
}

/// `f(e) = <w, e> + theta`, positive for the `true` class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearReadout {
    pub w: Vec<f64>,
    pub theta: f64,
    pub dual: Option<DualForm>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearReadout {
    pub fn predict(&self, e: &[f64]) -> f64 {
        dot(&self.w, e) + self.theta
    }

    /// `f(e) = sum_i alpha_i <e, e_i> + theta`; `None` without a dual form.
    pub fn predict_dual(&self, e: &[f64]) -> Option<f64> {
        let dual = self.dual.as_ref()?;
        Some(dual.alpha.iter().zip(&dual.support).map(|(a, s)| a * dot(s, e)).sum::<f64>() + self.theta)
    }

    /// `sum_i alpha_i phi(x_i)`.
    pub fn dual_weights(&self) -> Option<Vec<f64>> {
        let dual = self.dual.as_ref()?;
        let mut w = vec![0.0; self.w.len()];
        for (a, s) in dual.alpha.iter().zip(&dual.support) {
            w.iter_mut().zip(s).for_each(|(wi, si)| *wi += a * si);
        }
        Some(w)
    }

    pub fn accuracy(&self, embeddings: &[Vec<f64>], labels: &[bool]) -> f64 {
        let hits = embeddings.iter().zip(labels).filter(|(e, &l)| (self.predict(e) > 0.0) == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Ridge-regularized logistic regression by full-batch gradient descent with
/// step `1/L`, followed by the least-squares dual expansion of `w`.
pub fn fit_linear_readout(embeddings: &[Vec<f64>], labels: &[bool], options: &ReadoutOptions) -> Result<LinearReadout> {
    let n = embeddings.len();
    if n == 0 || labels.len() != n {
        return Err(Error::shape(format!("{n} labels"), format!("{}", labels.len())));
    }
    let d = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != d) {
        return Err(Error::shape(format!("embeddings of dimension {d}"), format!("{}", bad.len())));
    }
    if options.l2.is_nan() || options.l2 <= 0.0 {
        return Err(Error::arg("l2 must be positive"));
    }
    let max_sq = embeddings.iter().map(|e| dot(e, e)).fold(0.0, f64::max);
    let step = 1.0 / (0.25 * (max_sq + 1.0) + options.l2);
    let ys: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut w = vec![0.0; d];
    let mut theta = 0.0;
    let mut grad_norm = f64::INFINITY;
    for it in 0..options.max_iterations {
        let mut gw: Vec<f64> = w.iter().map(|wi| options.l2 * wi).collect();
        let mut gt = 0.0;
        for (e, y) in embeddings.iter().zip(&ys) {
            let c = -y * sigmoid(-y * (dot(&w, e) + theta)) / n as f64;
            gw.iter_mut().zip(e).for_each(|(g, ei)| *g += c * ei);
            gt += c;
        }
        grad_norm = (dot(&gw, &gw) + gt * gt).sqrt();
        if grad_norm < options.tolerance {
            let dual = dual_form(embeddings, &w)?;
            return Ok(LinearReadout { w, theta, dual: Some(dual), iterations: it });
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        theta -= step * gt;
    }
    Err(Error::NonConvergence { iterations: options.max_iterations, grad_norm })
}

/// `alpha = (X X^T)^+ X w`.
fn dual_form(embeddings: &[Vec<f64>], w: &[f64]) -> Result<DualForm> {
    let n = embeddings.len();
    let gram = DMatrix::from_fn(n, n, |i, j| dot(&embeddings[i], &embeddings[j]));
    let xw = DVector::from_iterator(n, embeddings.iter().map(|e| dot(e, w)));
    let scale = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pinv = gram.pseudo_inverse(scale.max(1.0) * 1e-12).map_err(|e| Error::arg(e.to_string()))?;
    let alpha = pinv * xw;
    Ok(DualForm { alpha: alpha.iter().copied().collect(), support: embeddings.to_vec() })
}
