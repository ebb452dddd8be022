use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagegrid::ImageTensor;

/// Channel-major activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, c: usize, r: usize, col: usize) -> usize {
        (c * self.height + r) * self.width + col
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// `weights[out][in]` over the flattened input.
    Dense { weights: Vec<Vec<f64>>, bias: Vec<f64> },
    /// Valid convolution; `weights` is `[out][in][kernel][kernel]` flattened.
    Conv2d { out_channels: usize, kernel: usize, stride: usize, weights: Vec<f64>, bias: Vec<f64> },
    Relu,
    /// Non-overlapping `size x size` sum pooling; remainders are dropped.
    SumPool { size: usize },
    Flatten,
}

/// Sparse affine map `z_k = b_k + sum_j w_jk a_j`.
#[derive(Debug, Clone)]
pub(crate) struct LinearMap {
    pub in_len: usize,
    pub conns: Vec<(u32, u32, f64)>,
    pub bias: Vec<f64>,
}

impl LinearMap {
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(k, j, w) in &self.conns {
            z[k as usize] += w * a[j as usize];
        }
        z
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Step {
    Linear(LinearMap),
    Relu,
    Reshape,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDef {
    input_shape: Shape,
    layers: Vec<Layer>,
}

/// Feedforward network built from [`Layer`]s; the output of the last layer is
/// the representation `phi(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkDef", into = "NetworkDef")]
pub struct ToyNetwork {
    input_shape: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
    steps: Vec<Step>,
}

impl PartialEq for ToyNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl TryFrom<NetworkDef> for ToyNetwork {
    type Error = Error;

    fn try_from(def: NetworkDef) -> Result<Self> {
        Self::new(def.input_shape, def.layers)
    }
}

impl From<ToyNetwork> for NetworkDef {
    fn from(net: ToyNetwork) -> Self {
        Self { input_shape: net.input_shape, layers: net.layers }
    }
}

fn compile(layer: &Layer, shape: Shape) -> Result<(Step, Shape)> {
    let bad = |msg: String| Err(Error::arg(msg));
    match layer {
        Layer::Dense { weights, bias } => {
            let n = shape.len();
            if weights.len() != bias.len() || weights.is_empty() {
                return bad(format!("dense layer has {} weight rows and {} biases", weights.len(), bias.len()));
            }
            let mut conns = Vec::with_capacity(weights.len() * n);
            for (k, row) in weights.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::shape(format!("dense row of {n}"), format!("{}", row.len())));
                }
                conns.extend(row.iter().enumerate().map(|(j, &w)| (k as u32, j as u32, w)));
            }
            let map = LinearMap { in_len: n, conns, bias: bias.clone() };
            Ok((Step::Linear(map), Shape::flat(weights.len())))
        }
        Layer::Conv2d { out_channels, kernel, stride, weights, bias } => {
            let (oc, k, s) = (*out_channels, *kernel, *stride);
            if oc == 0 || k == 0 || s == 0 || k > shape.height || k > shape.width {
                return bad(format!("conv2d {oc}x{k}x{k}/{s} does not fit input {shape:?}"));
            }
            let ic = shape.channels;
            if weights.len() != oc * ic * k * k || bias.len() != oc {
                return Err(Error::shape(
                    format!("{} weights and {oc} biases", oc * ic * k * k),
                    format!("{} weights and {} biases", weights.len(), bias.len()),
                ));
            }
            let out = Shape::new(oc, (shape.height - k) / s + 1, (shape.width - k) / s + 1);
            let mut conns = Vec::with_capacity(out.len() * ic * k * k);
            let mut out_bias = Vec::with_capacity(out.len());
            for o in 0..oc {
                for r in 0..out.height {
                    for c in 0..out.width {
                        let kk = out.index(o, r, c) as u32;
                        out_bias.push(bias[o]);
                        for i in 0..ic {
                            for dr in 0..k {
                                for dc in 0..k {
                                    let w = weights[((o * ic + i) * k + dr) * k + dc];
                                    let j = shape.index(i, r * s + dr, c * s + dc) as u32;
                                    conns.push((kk, j, w));
                                }
                            }
                        }
                    }
                }
            }
            Ok((Step::Linear(LinearMap { in_len: shape.len(), conns, bias: out_bias }), out))
        }
        Layer::SumPool { size } => {
            let p = *size;
            if p == 0 || p > shape.height || p > shape.width {
                return bad(format!("sum pool of {p} does not fit input {shape:?}"));
            }
            let out = Shape::new(shape.channels, shape.height / p, shape.width / p);
            let mut conns = Vec::with_capacity(out.len() * p * p);
            for ch in 0..out.channels {
                for r in 0..out.height {
                    for c in 0..out.width {
                        let kk = out.index(ch, r, c) as u32;
                        for dr in 0..p {
                            for dc in 0..p {
                                conns.push((kk, shape.index(ch, r * p + dr, c * p + dc) as u32, 1.0));
                            }
                        }
                    }
                }
            }
            Ok((Step::Linear(LinearMap { in_len: shape.len(), conns, bias: vec![0.0; out.len()] }), out))
        }
        Layer::Relu => Ok((Step::Relu, shape)),
        Layer::Flatten => Ok((Step::Reshape, Shape::flat(shape.len()))),
    }
}

impl ToyNetwork {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() {
            return Err(Error::arg("network input shape is empty"));
        }
        let mut shapes = vec![input_shape];
        let mut steps = Vec::with_capacity(layers.len());
        for layer in &layers {
            let (step, out) = compile(layer, *shapes.last().expect("non-empty"))?;
            steps.push(step);
            shapes.push(out);
        }
        Ok(Self { input_shape, layers, shapes, steps })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().expect("non-empty").len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shape at the input of layer `b` (`b == layers.len()` is the output).
    pub fn boundary_shape(&self, b: usize) -> Shape {
        self.shapes[b]
    }

    pub fn boundary_len(&self, b: usize) -> usize {
        self.shapes[b].len()
    }

    pub(crate) fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub(crate) fn linear_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Linear(_))).count()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_shape.len() {
            return Err(Error::shape(format!("{} input features", self.input_shape.len()), format!("{}", x.len())));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for step in &self.steps {
            match step {
                Step::Linear(map) => a = map.apply(&a),
                Step::Relu => a.iter_mut().for_each(|v| *v = v.max(0.0)),
                Step::Reshape => {}
            }
        }
        Ok(a)
    }

    /// Channel count of a dense or conv layer that feeds another weighted layer.
    pub(crate) fn prunable_channels(&self, layer: usize) -> Result<usize> {
        match self.layers.get(layer) {
            Some(Layer::Dense { .. } | Layer::Conv2d { .. }) => {}
            _ => return Err(Error::arg(format!("layer {layer} is not a dense or conv layer"))),
        }
        self.next_weighted(layer)?;
        Ok(self.shapes[layer + 1].channels)
    }

    fn next_weighted(&self, layer: usize) -> Result<usize> {
        self.layers
            .iter()
            .enumerate()
            .skip(layer + 1)
            .find(|(_, l)| matches!(l, Layer::Dense { .. } | Layer::Conv2d { .. }))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::arg(format!("layer {layer} has no weighted layer after it")))
    }

    /// Copy with every weight leaving the given output channels of `layer` set to zero.
    pub(crate) fn with_outgoing_zeroed(&self, layer: usize, units: &[usize]) -> Result<Self> {
        let channels = self.prunable_channels(layer)?;
        let next = self.next_weighted(layer)?;
        let in_len = self.shapes[next].len();
        let per_channel = in_len / channels;
        let mut layers = self.layers.clone();
        match &mut layers[next] {
            Layer::Dense { weights, .. } => {
                for row in weights.iter_mut() {
                    for (j, w) in row.iter_mut().enumerate() {
                        if units.contains(&(j / per_channel)) {
                            *w = 0.0;
                        }
                    }
                }
            }
            Layer::Conv2d { out_channels, kernel, weights, .. } => {
                let (ic, kk) = (self.shapes[next].channels, *kernel * *kernel);
                for o in 0..*out_channels {
                    for &u in units {
                        let base = (o * ic + u) * kk;
                        weights[base..base + kk].iter_mut().for_each(|w| *w = 0.0);
                    }
                }
            }
            _ => unreachable!("next_weighted returns a weighted layer"),
        }
        Self::new(self.input_shape, layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Channel-major input vector for an image whose shape matches the network input.
    pub fn input_from_image(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let s = self.input_shape;
        if (img.channels(), img.height(), img.width()) != (s.channels, s.height, s.width) {
            return Err(Error::shape(format!("{s:?}"), crate::imagegrid::shape_str(img.shape())));
        }
        Ok((0..s.channels).flat_map(|c| img.plane(c)).collect())
    }
}

/// Dense network over a flat input with layer widths `widths[0] -> ... -> widths[n]`,
/// uniform weights of variance `1/fan_in` and, unless `zero_bias`, biases in `[-0.1, 0.1]`.
pub fn random_mlp(widths: &[usize], relu: bool, zero_bias: bool, seed: u64) -> Result<ToyNetwork> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::arg("random_mlp needs at least two non-zero widths"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        let bound = (3.0 / pair[0] as f64).sqrt();
        let weights = (0..pair[1])
            .map(|_| (0..pair[0]).map(|_| rng.gen_range(-bound..bound)).collect())
            .collect();
        let bias = (0..pair[1])
            .map(|_| if zero_bias { 0.0 } else { rng.gen_range(-0.1..0.1) })
            .collect();
        layers.push(Layer::Dense { weights, bias });
        if relu && i + 2 < widths.len() {
            layers.push(Layer::Relu);
        }
    }
    ToyNetwork::new(Shape::flat(widths[0]), layers)
}
