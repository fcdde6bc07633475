//! The 4-layer digit classifier: two strided convolution layers (5 then 50
//! feature maps, 5x5 kernels, stride 2, no biases) followed by two dense
//! layers (100 hidden units, 10-way softmax output) on 29x29 inputs.
//!
//! Conv kernels live in canonical tied form. Backpropagation computes the
//! full kernel-shaped gradient, folds it onto the canonical weights per the
//! kernel's symmetry class, and the SGD step updates only the canonical
//! vector, so expanded kernels satisfy their symmetry equations exactly at
//! every point of training. Each second-layer map convolves exactly one
//! first-layer map (map m reads map m mod 5): with 5 + 50 kernels the
//! unconstrained feature extractor has 1375 weights and the T2B-T2B one 660.
//!
//! Learning rates are scaled per layer by `1/sqrt(fan_in)`; weights are
//! initialized from N(0, 1/sqrt(fan_in)); the loss is cross-entropy.

use crate::conv::{cross_correlate, ConvGeometry};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::symmetry::{
    build_orbit_map, count_parameters, expand_with, fold_gradient, random_kernel, OrbitMap,
    SymmetricKernel, SymmetryClass, T2bMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

pub const INPUT_SIZE: usize = 29;
pub const NUM_CLASSES: usize = 10;
const CHECKPOINT_VERSION: u32 = 1;
const MIN_PROB: f64 = 1e-300;

/// L = conv layers learn; F = conv layers stay at their random initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Learned,
    Fixed,
}

impl Mode {
    pub fn token(&self) -> &'static str {
        match self {
            Mode::Learned => "L",
            Mode::Fixed => "F",
        }
    }
}

/// One experiment condition: training mode plus the kernel class of each
/// conv layer. Only the seven class pairs from the study are valid, giving
/// 14 conditions across the two modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub mode: Mode,
    pub layer1: SymmetryClass,
    pub layer2: SymmetryClass,
}

const CLASS_PAIRS: [(SymmetryClass, SymmetryClass); 7] = [
    (SymmetryClass::R, SymmetryClass::R),
    (SymmetryClass::T1, SymmetryClass::T1),
    (SymmetryClass::T2A, SymmetryClass::T2A),
    (SymmetryClass::T2B, SymmetryClass::T2B),
    (SymmetryClass::T1, SymmetryClass::R),
    (SymmetryClass::T2A, SymmetryClass::R),
    (SymmetryClass::T2B, SymmetryClass::R),
];

impl Condition {
    /// All 14 conditions: the learned block then the fixed block.
    pub fn all() -> Vec<Condition> {
        let mut out = Vec::with_capacity(14);
        for mode in [Mode::Learned, Mode::Fixed] {
            for (layer1, layer2) in CLASS_PAIRS {
                out.push(Condition { mode, layer1, layer2 });
            }
        }
        out
    }

    pub fn valid_names() -> String {
        Condition::all()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn parse(s: &str) -> Result<Condition> {
        let fail = || Error::InvalidCondition {
            given: s.to_string(),
            valid: Condition::valid_names(),
        };
        let mut parts = s.split('-');
        let mode = match parts.next() {
            Some("L") => Mode::Learned,
            Some("F") => Mode::Fixed,
            _ => return Err(fail()),
        };
        let layer1 = SymmetryClass::parse(parts.next().ok_or_else(fail)?).map_err(|_| fail())?;
        let layer2 = SymmetryClass::parse(parts.next().ok_or_else(fail)?).map_err(|_| fail())?;
        if parts.next().is_some() || !CLASS_PAIRS.contains(&(layer1, layer2)) {
            return Err(fail());
        }
        Ok(Condition { mode, layer1, layer2 })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.mode.token(), self.layer1, self.layer2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

/// Layer blueprint used to assemble a network.
#[derive(Clone, Copy, Debug)]
pub enum LayerSpec {
    Conv {
        maps: usize,
        class: SymmetryClass,
        kernel_size: usize,
        stride: usize,
        learnable: bool,
    },
    Dense {
        outputs: usize,
        learnable: bool,
        activation: Activation,
    },
}

#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The study architecture for a condition's class pair and mode.
    pub fn digit_classifier(condition: Condition) -> NetworkSpec {
        let learnable = condition.mode == Mode::Learned;
        NetworkSpec {
            input_size: INPUT_SIZE,
            layers: vec![
                LayerSpec::Conv {
                    maps: 5,
                    class: condition.layer1,
                    kernel_size: 5,
                    stride: 2,
                    learnable,
                },
                LayerSpec::Conv {
                    maps: 50,
                    class: condition.layer2,
                    kernel_size: 5,
                    stride: 2,
                    learnable,
                },
                LayerSpec::Dense { outputs: 100, learnable: true, activation: Activation::Relu },
                LayerSpec::Dense {
                    outputs: NUM_CLASSES,
                    learnable: true,
                    activation: Activation::Softmax,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub class: SymmetryClass,
    pub kernel_size: usize,
    pub stride: usize,
    pub learnable: bool,
    pub in_maps: usize,
    pub maps: usize,
    pub in_size: usize,
    pub out_size: usize,
    pub kernels: Vec<SymmetricKernel>,
}

impl ConvLayer {
    pub fn fan_in(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    fn orbit(&self) -> OrbitMap {
        build_orbit_map(self.class, self.kernel_size).expect("validated at construction")
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.in_size, self.kernel_size, 0, self.stride)
            .expect("validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub learnable: bool,
    pub activation: Activation,
    /// `outputs x inputs`, row per output unit.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn fan_in(&self) -> usize {
        self.inputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Dense(DenseLayer),
}

/// Parameter counts split the way the study reports them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub features: usize,
    pub classifier: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.features + self.classifier
    }
}

/// Free weights of the digit classifier under a condition:
/// 5 first-layer kernels plus 50 second-layer kernels at 5x5, and the fixed
/// dense stack (1250 -> 100 -> 10, with biases).
pub fn count_network_parameters(condition: Condition) -> ParamCounts {
    let features = 5 * count_parameters(condition.layer1, 5).expect("5 is odd")
        + 50 * count_parameters(condition.layer2, 5).expect("5 is odd");
    let classifier = 1250 * 100 + 100 + 100 * NUM_CLASSES + NUM_CLASSES;
    ParamCounts { features, classifier }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_size: usize,
    pub layers: Vec<Layer>,
    pub condition: Option<Condition>,
    pub t2b_mode: T2bMode,
}

/// Activations cached by a forward pass, consumed by backward.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    entries: Vec<CacheEntry>,
}

#[derive(Clone, Debug)]
enum CacheEntry {
    Conv { z: Vec<Matrix>, o: Vec<Matrix> },
    Dense { z: Vec<f64>, o: Vec<f64> },
}

impl ForwardCache {
    /// Output probabilities (softmax of the final layer).
    pub fn output(&self) -> &[f64] {
        match self.entries.last() {
            Some(CacheEntry::Dense { o, .. }) => o,
            _ => panic!("network must end with a dense layer"),
        }
    }

    /// Feature maps cached for a conv layer (test support).
    pub fn conv_maps(&self, layer: usize) -> Option<(&[Matrix], &[Matrix])> {
        match self.entries.get(layer) {
            Some(CacheEntry::Conv { z, o }) => Some((z, o)),
            _ => None,
        }
    }

    pub fn dense_activations(&self, layer: usize) -> Option<&[f64]> {
        match self.entries.get(layer) {
            Some(CacheEntry::Dense { o, .. }) => Some(o),
            _ => None,
        }
    }
}

/// Per-layer gradients shaped like the learnable state.
#[derive(Clone, Debug)]
pub struct Gradients {
    layers: Vec<LayerGrads>,
}

#[derive(Clone, Debug, PartialEq)]
enum LayerGrads {
    Conv { canonical: Vec<Vec<f64>> },
    Dense { weights: Matrix, biases: Vec<f64> },
}

impl Gradients {
    pub fn zero(&mut self) {
        for lg in &mut self.layers {
            match lg {
                LayerGrads::Conv { canonical } => {
                    for k in canonical {
                        k.fill(0.0);
                    }
                }
                LayerGrads::Dense { weights, biases } => {
                    weights.fill(0.0);
                    biases.fill(0.0);
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for lg in &self.layers {
            match lg {
                LayerGrads::Conv { canonical } => {
                    for k in canonical {
                        for v in k {
                            m = m.max(v.abs());
                        }
                    }
                }
                LayerGrads::Dense { weights, biases } => {
                    for v in weights.as_slice() {
                        m = m.max(v.abs());
                    }
                    for v in biases {
                        m = m.max(v.abs());
                    }
                }
            }
        }
        m
    }

    /// Canonical kernel gradients of a conv layer (test support).
    pub fn conv_canonical(&self, layer: usize) -> Option<&[Vec<f64>]> {
        match self.layers.get(layer) {
            Some(LayerGrads::Conv { canonical }) => Some(canonical),
            _ => None,
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy of a class distribution against a target label.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(MIN_PROB).ln()
}

fn flatten_maps(maps: &[Matrix]) -> Vec<f64> {
    let mut out = Vec::with_capacity(maps.len() * maps[0].rows() * maps[0].cols());
    for m in maps {
        out.extend_from_slice(m.as_slice());
    }
    out
}

impl Network {
    /// Assemble and initialize a network from a blueprint. All weights come
    /// from one seeded stream, layer by layer, so construction is
    /// reproducible.
    pub fn new(spec: &NetworkSpec, t2b_mode: T2bMode, seed: u64) -> Result<Network> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        enum Shape {
            Maps { count: usize, size: usize },
            Flat(usize),
        }
        let mut shape = Shape::Maps { count: 1, size: spec.input_size };
        for (idx, ls) in spec.layers.iter().enumerate() {
            let last = idx + 1 == spec.layers.len();
            match *ls {
                LayerSpec::Conv { maps, class, kernel_size, stride, learnable } => {
                    let Shape::Maps { count: in_maps, size: in_size } = shape else {
                        return Err(Error::invalid_argument(
                            "conv layer cannot follow a dense layer",
                        ));
                    };
                    if last {
                        return Err(Error::invalid_argument(
                            "network must end with a dense softmax layer",
                        ));
                    }
                    let geom = ConvGeometry::new(in_size, kernel_size, 0, stride)?;
                    let std = 1.0 / ((kernel_size * kernel_size) as f64).sqrt();
                    let kernels = (0..maps)
                        .map(|_| random_kernel(class, kernel_size, std, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    let out_size = geom.out_dim();
                    layers.push(Layer::Conv(ConvLayer {
                        class,
                        kernel_size,
                        stride,
                        learnable,
                        in_maps,
                        maps,
                        in_size,
                        out_size,
                        kernels,
                    }));
                    shape = Shape::Maps { count: maps, size: out_size };
                }
                LayerSpec::Dense { outputs, learnable, activation } => {
                    let inputs = match shape {
                        Shape::Maps { count, size } => count * size * size,
                        Shape::Flat(n) => n,
                    };
                    if last && activation != Activation::Softmax {
                        return Err(Error::invalid_argument(
                            "final layer must use the softmax activation",
                        ));
                    }
                    if !last && activation == Activation::Softmax {
                        return Err(Error::invalid_argument(
                            "softmax is only valid on the final layer",
                        ));
                    }
                    let std = 1.0 / (inputs as f64).sqrt();
                    let normal = Normal::new(0.0, std)
                        .map_err(|e| Error::invalid_argument(format!("bad init: {e}")))?;
                    let weights = Matrix::from_vec(
                        outputs,
                        inputs,
                        (0..outputs * inputs).map(|_| normal.sample(&mut rng)).collect(),
                    );
                    layers.push(Layer::Dense(DenseLayer {
                        inputs,
                        outputs,
                        learnable,
                        activation,
                        weights,
                        biases: vec![0.0; outputs],
                    }));
                    shape = Shape::Flat(outputs);
                }
            }
        }
        match layers.last() {
            Some(Layer::Dense(d)) if d.activation == Activation::Softmax => {}
            _ => {
                return Err(Error::invalid_argument(
                    "network must end with a dense softmax layer",
                ))
            }
        }
        Ok(Network { input_size: spec.input_size, layers, condition: None, t2b_mode })
    }

    /// The study's 4-layer classifier for a condition.
    pub fn digit_classifier(condition: Condition, t2b_mode: T2bMode, seed: u64) -> Result<Network> {
        let mut net = Network::new(&NetworkSpec::digit_classifier(condition), t2b_mode, seed)?;
        net.condition = Some(condition);
        Ok(net)
    }

    pub fn output_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d.outputs,
            _ => unreachable!("validated at construction"),
        }
    }

    /// Counts of free weights actually stored: canonical conv weights vs
    /// dense weights and biases.
    pub fn param_counts(&self) -> ParamCounts {
        let mut features = 0;
        let mut classifier = 0;
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    features += c.kernels.iter().map(|k| k.canonical.len()).sum::<usize>()
                }
                Layer::Dense(d) => {
                    classifier += d.weights.rows() * d.weights.cols() + d.biases.len()
                }
            }
        }
        ParamCounts { features, classifier }
    }

    /// Forward pass caching every pre-activation and activation.
    pub fn forward(&self, image: &Matrix) -> Result<ForwardCache> {
        if image.rows() != self.input_size || image.cols() != self.input_size {
            return Err(Error::invalid_argument(format!(
                "input shape {}x{} does not match network input {}",
                image.rows(),
                image.cols(),
                self.input_size
            )));
        }
        let mut entries: Vec<CacheEntry> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    let prev_maps: Vec<&Matrix> = if l == 0 {
                        vec![image]
                    } else {
                        match &entries[l - 1] {
                            CacheEntry::Conv { o, .. } => o.iter().collect(),
                            CacheEntry::Dense { .. } => {
                                return Err(Error::invalid_argument(
                                    "conv layer cannot follow a dense layer",
                                ))
                            }
                        }
                    };
                    let geom = c.geometry();
                    let map = c.orbit();
                    let mut zs = Vec::with_capacity(c.maps);
                    let mut os = Vec::with_capacity(c.maps);
                    for m in 0..c.maps {
                        let kernel = expand_with(&c.kernels[m], &map)?;
                        let z = cross_correlate(prev_maps[m % c.in_maps], &kernel, &geom)?;
                        let o = z.map(|v| v.max(0.0));
                        zs.push(z);
                        os.push(o);
                    }
                    entries.push(CacheEntry::Conv { z: zs, o: os });
                }
                Layer::Dense(d) => {
                    let flat_input: Vec<f64>;
                    let input: &[f64] = if l == 0 {
                        flat_input = image.as_slice().to_vec();
                        &flat_input
                    } else {
                        match &entries[l - 1] {
                            CacheEntry::Dense { o, .. } => o,
                            CacheEntry::Conv { o, .. } => {
                                flat_input = flatten_maps(o);
                                &flat_input
                            }
                        }
                    };
                    if input.len() != d.inputs {
                        return Err(Error::invalid_argument(format!(
                            "dense layer expected {} inputs, got {}",
                            d.inputs,
                            input.len()
                        )));
                    }
                    let mut z = Vec::with_capacity(d.outputs);
                    for r in 0..d.outputs {
                        z.push(dot(d.weights.row(r), input) + d.biases[r]);
                    }
                    let o = match d.activation {
                        Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                        Activation::Softmax => softmax(&z),
                    };
                    entries.push(CacheEntry::Dense { z, o });
                }
            }
        }
        Ok(ForwardCache { input: image.clone(), entries })
    }

    /// Class probabilities for an input.
    pub fn predict(&self, image: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.output().to_vec())
    }

    pub fn new_gradients(&self) -> Gradients {
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => LayerGrads::Conv {
                    canonical: c.kernels.iter().map(|k| vec![0.0; k.canonical.len()]).collect(),
                },
                Layer::Dense(d) => LayerGrads::Dense {
                    weights: Matrix::zeros(d.weights.rows(), d.weights.cols()),
                    biases: vec![0.0; d.biases.len()],
                },
            })
            .collect();
        Gradients { layers }
    }

    /// Backpropagate the cross-entropy loss against `target`. The softmax +
    /// cross-entropy output delta is `p - onehot(target)`.
    pub fn backward(&self, cache: &ForwardCache, target: usize) -> Result<Gradients> {
        let mut grads = self.new_gradients();
        self.backward_into(cache, target, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating variant: adds this example's gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        target: usize,
        grads: &mut Gradients,
    ) -> Result<()> {
        let probs = cache.output();
        if target >= probs.len() {
            return Err(Error::invalid_argument(format!(
                "target {target} out of range for {} classes",
                probs.len()
            )));
        }
        let mut delta: Vec<f64> = probs.to_vec();
        delta[target] -= 1.0;
        self.backprop_from_output_delta(cache, &delta, grads)
    }

    /// Core backward pass from an explicit output delta (gradient of the
    /// loss with respect to the final pre-activation).
    pub fn backprop_from_output_delta(
        &self,
        cache: &ForwardCache,
        output_delta: &[f64],
        grads: &mut Gradients,
    ) -> Result<()> {
        if cache.entries.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }

        enum Delta {
            Flat(Vec<f64>),
            Maps(Vec<Matrix>),
        }
        let mut delta = Delta::Flat(output_delta.to_vec());

        for l in (0..self.layers.len()).rev() {
            match (&self.layers[l], &mut grads.layers[l]) {
                (Layer::Dense(d), LayerGrads::Dense { weights, biases }) => {
                    let Delta::Flat(dz) = &delta else {
                        return Err(Error::invalid_argument(
                            "delta shape mismatch at dense layer",
                        ));
                    };
                    // activations feeding this layer
                    let flat_input: Vec<f64>;
                    let input: &[f64] = if l == 0 {
                        cache.input.as_slice()
                    } else {
                        match &cache.entries[l - 1] {
                            CacheEntry::Dense { o, .. } => o,
                            CacheEntry::Conv { o, .. } => {
                                flat_input = flatten_maps(o);
                                &flat_input
                            }
                        }
                    };
                    if d.learnable {
                        for (r, &dr) in dz.iter().enumerate() {
                            if dr != 0.0 {
                                axpy(weights.row_mut(r), dr, input);
                            }
                            biases[r] += dr;
                        }
                    }
                    if l == 0 {
                        break;
                    }
                    // dL/d(previous activations)
                    let mut prev = vec![0.0; d.inputs];
                    for (r, &dr) in dz.iter().enumerate() {
                        if dr != 0.0 {
                            axpy(&mut prev, dr, d.weights.row(r));
                        }
                    }
                    delta = match &cache.entries[l - 1] {
                        CacheEntry::Dense { z, .. } => {
                            for (p, zv) in prev.iter_mut().zip(z) {
                                if *zv <= 0.0 {
                                    *p = 0.0;
                                }
                            }
                            Delta::Flat(prev)
                        }
                        CacheEntry::Conv { z, .. } => {
                            let size = z[0].rows();
                            let mut out = Vec::with_capacity(z.len());
                            for (m, zm) in z.iter().enumerate() {
                                let base = m * size * size;
                                let mut dm = Matrix::zeros(size, size);
                                for (i, (dv, zv)) in prev[base..base + size * size]
                                    .iter()
                                    .zip(zm.as_slice())
                                    .enumerate()
                                {
                                    dm.as_mut_slice()[i] = if *zv > 0.0 { *dv } else { 0.0 };
                                }
                                out.push(dm);
                            }
                            Delta::Maps(out)
                        }
                    };
                }
                (Layer::Conv(c), LayerGrads::Conv { canonical }) => {
                    let Delta::Maps(errs) = &delta else {
                        return Err(Error::invalid_argument(
                            "delta shape mismatch at conv layer",
                        ));
                    };
                    let map = c.orbit();
                    let s = c.stride;
                    let k = c.kernel_size;
                    if c.learnable {
                        for (m, err) in errs.iter().enumerate() {
                            let x: &Matrix = if l == 0 {
                                &cache.input
                            } else {
                                match &cache.entries[l - 1] {
                                    CacheEntry::Conv { o, .. } => &o[m % c.in_maps],
                                    CacheEntry::Dense { .. } => {
                                        unreachable!("checked at construction")
                                    }
                                }
                            };
                            // dL/dK[u][v] = sum_pq E[p][q] * X[pS+u][qS+v]
                            let mut dk = Matrix::zeros(k, k);
                            for pi in 0..err.rows() {
                                for qi in 0..err.cols() {
                                    let e = err[(pi, qi)];
                                    if e == 0.0 {
                                        continue;
                                    }
                                    for u in 0..k {
                                        let xrow = &x.row(pi * s + u)[qi * s..qi * s + k];
                                        axpy(dk.row_mut(u), e, xrow);
                                    }
                                }
                            }
                            let folded = fold_gradient(&map, &dk, self.t2b_mode)?;
                            for (g, f) in canonical[m].iter_mut().zip(&folded) {
                                *g += f;
                            }
                        }
                    }
                    if l == 0 {
                        break;
                    }
                    // propagate to the previous conv layer's activations
                    let (prev_z, prev_size) = match &cache.entries[l - 1] {
                        CacheEntry::Conv { z, .. } => (z, z[0].rows()),
                        CacheEntry::Dense { .. } => unreachable!("checked at construction"),
                    };
                    let mut prev_do: Vec<Matrix> =
                        (0..prev_z.len()).map(|_| Matrix::zeros(prev_size, prev_size)).collect();
                    for (m, err) in errs.iter().enumerate() {
                        let kernel = expand_with(&c.kernels[m], &map)?;
                        let dst = &mut prev_do[m % c.in_maps];
                        for pi in 0..err.rows() {
                            for qi in 0..err.cols() {
                                let e = err[(pi, qi)];
                                if e == 0.0 {
                                    continue;
                                }
                                for u in 0..k {
                                    let drow = &mut dst.row_mut(pi * s + u)[qi * s..qi * s + k];
                                    axpy(drow, e, kernel.row(u));
                                }
                            }
                        }
                    }
                    let mut out = Vec::with_capacity(prev_do.len());
                    for (mut dm, zm) in prev_do.into_iter().zip(prev_z) {
                        for (dv, zv) in dm.as_mut_slice().iter_mut().zip(zm.as_slice()) {
                            if *zv <= 0.0 {
                                *dv = 0.0;
                            }
                        }
                        out.push(dm);
                    }
                    delta = Delta::Maps(out);
                }
                _ => unreachable!("gradient layout matches network layout"),
            }
        }
        Ok(())
    }

    /// Fan-in of the first layer; per-layer learning rates are expressed
    /// relative to it.
    pub fn reference_fan_in(&self) -> usize {
        match &self.layers[0] {
            Layer::Conv(c) => c.fan_in(),
            Layer::Dense(d) => d.fan_in(),
        }
    }

    /// One SGD step with fan-in-scaled learning rates:
    /// `theta -= lr * sqrt(fan_in_first / fan_in_layer) * scale * grad`.
    /// The stated rate is carried by the first layer and deeper layers are
    /// scaled down by the square root of their relative fan-in, so the
    /// high-fan-in dense stack still moves at a useful pace. Frozen layers
    /// do not move. `scale` supports mean-reduced mini-batches.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64, scale: f64) {
        let ref_root = (self.reference_fan_in() as f64).sqrt();
        for (layer, lg) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, lg) {
                (Layer::Conv(c), LayerGrads::Conv { canonical }) => {
                    if !c.learnable {
                        continue;
                    }
                    let eta = lr * ref_root / (c.fan_in() as f64).sqrt() * scale;
                    for (kernel, grad) in c.kernels.iter_mut().zip(canonical) {
                        for (w, g) in kernel.canonical.iter_mut().zip(grad) {
                            *w -= eta * g;
                        }
                    }
                }
                (Layer::Dense(d), LayerGrads::Dense { weights, biases }) => {
                    if !d.learnable {
                        continue;
                    }
                    let eta = lr * ref_root / (d.fan_in() as f64).sqrt() * scale;
                    for (w, g) in d.weights.as_mut_slice().iter_mut().zip(weights.as_slice()) {
                        *w -= eta * g;
                    }
                    for (b, g) in d.biases.iter_mut().zip(biases) {
                        *b -= eta * g;
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile::from_network(self);
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Network> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        file.into_network()
            .map_err(|e| match e {
                Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
                other => other,
            })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    condition: Option<String>,
    t2b_mode: T2bMode,
    input_size: usize,
    layers: Vec<LayerCheckpoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerCheckpoint {
    Conv {
        class: SymmetryClass,
        kernel_size: usize,
        stride: usize,
        learnable: bool,
        in_maps: usize,
        maps: usize,
        /// Canonical weights per map, in row-major group order.
        kernels: Vec<Vec<f64>>,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        learnable: bool,
        activation: Activation,
        /// Row-major `outputs x inputs`.
        weights: Vec<f64>,
        biases: Vec<f64>,
    },
}

impl CheckpointFile {
    fn from_network(net: &Network) -> CheckpointFile {
        let layers = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => LayerCheckpoint::Conv {
                    class: c.class,
                    kernel_size: c.kernel_size,
                    stride: c.stride,
                    learnable: c.learnable,
                    in_maps: c.in_maps,
                    maps: c.maps,
                    kernels: c.kernels.iter().map(|k| k.canonical.clone()).collect(),
                },
                Layer::Dense(d) => LayerCheckpoint::Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    learnable: d.learnable,
                    activation: d.activation,
                    weights: d.weights.as_slice().to_vec(),
                    biases: d.biases.clone(),
                },
            })
            .collect();
        CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            condition: net.condition.map(|c| c.to_string()),
            t2b_mode: net.t2b_mode,
            input_size: net.input_size,
            layers,
        }
    }

    fn into_network(self) -> Result<Network> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let condition = self.condition.as_deref().map(Condition::parse).transpose()?;
        let mut size = self.input_size;
        let mut maps_in = 1usize;
        let mut flat: Option<usize> = None;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (idx, lc) in self.layers.into_iter().enumerate() {
            match lc {
                LayerCheckpoint::Conv {
                    class,
                    kernel_size,
                    stride,
                    learnable,
                    in_maps,
                    maps,
                    kernels,
                } => {
                    if flat.is_some() {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: conv after dense is not supported"
                        )));
                    }
                    if in_maps != maps_in {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: in_maps {in_maps} does not match {maps_in} incoming maps"
                        )));
                    }
                    if kernels.len() != maps {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: {} kernels for {maps} maps",
                            kernels.len()
                        )));
                    }
                    let geom = ConvGeometry::new(size, kernel_size, 0, stride)
                        .map_err(|e| Error::Checkpoint(format!("layer {idx}: {e}")))?;
                    let kernels = kernels
                        .into_iter()
                        .map(|canonical| SymmetricKernel::new(class, kernel_size, canonical))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::Checkpoint(format!("layer {idx}: {e}")))?;
                    let out_size = geom.out_dim();
                    layers.push(Layer::Conv(ConvLayer {
                        class,
                        kernel_size,
                        stride,
                        learnable,
                        in_maps,
                        maps,
                        in_size: size,
                        out_size,
                        kernels,
                    }));
                    size = out_size;
                    maps_in = maps;
                }
                LayerCheckpoint::Dense { inputs, outputs, learnable, activation, weights, biases } => {
                    let expect = flat.unwrap_or(maps_in * size * size);
                    if inputs != expect {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: dense inputs {inputs} do not match {expect} incoming activations"
                        )));
                    }
                    if weights.len() != inputs * outputs {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: weights length {} != {inputs}x{outputs}",
                            weights.len()
                        )));
                    }
                    if biases.len() != outputs {
                        return Err(Error::Checkpoint(format!(
                            "layer {idx}: biases length {} != {outputs}",
                            biases.len()
                        )));
                    }
                    layers.push(Layer::Dense(DenseLayer {
                        inputs,
                        outputs,
                        learnable,
                        activation,
                        weights: Matrix::from_vec(outputs, inputs, weights),
                        biases,
                    }));
                    flat = Some(outputs);
                }
            }
        }
        match layers.last() {
            Some(Layer::Dense(d)) if d.activation == Activation::Softmax => {}
            _ => {
                return Err(Error::Checkpoint(
                    "network must end with a dense softmax layer".to_string(),
                ))
            }
        }
        Ok(Network { input_size: self.input_size, layers, condition, t2b_mode: self.t2b_mode })
    }
}

/// Result of comparing analytic gradients against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

/// Relative error with a floor: gradients below 1e-4 in magnitude are
/// effectively compared absolutely, keeping the check meaningful where the
/// true derivative is near zero.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Compare every learnable parameter's analytic gradient against a central
/// finite difference of the summed cross-entropy loss over the examples.
pub fn finite_difference_check(
    net: &Network,
    images: &[Matrix],
    targets: &[usize],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if images.len() != targets.len() || images.is_empty() {
        return Err(Error::invalid_argument(
            "need equally many images and targets, at least one",
        ));
    }
    let mut analytic = net.new_gradients();
    for (img, &t) in images.iter().zip(targets) {
        let cache = net.forward(img)?;
        net.backward_into(&cache, t, &mut analytic)?;
    }

    let loss_of = |n: &Network| -> Result<f64> {
        let mut total = 0.0;
        for (img, &t) in images.iter().zip(targets) {
            let cache = n.forward(img)?;
            total += cross_entropy(cache.output(), t);
        }
        Ok(total)
    };

    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut probe = |work: &mut Network,
                     set: &dyn Fn(&mut Network, f64),
                     analytic_g: f64,
                     label: &dyn Fn() -> String|
     -> Result<()> {
        set(work, epsilon);
        let up = loss_of(work)?;
        set(work, -2.0 * epsilon);
        let down = loss_of(work)?;
        set(work, epsilon); // restore
        let numeric = (up - down) / (2.0 * epsilon);
        let e = rel_err(analytic_g, numeric);
        checked += 1;
        if e > max_rel {
            max_rel = e;
            worst = label();
        }
        Ok(())
    };

    let mut work = net.clone();
    for l in 0..net.layers.len() {
        match &net.layers[l] {
            Layer::Conv(c) => {
                if !c.learnable {
                    continue;
                }
                for m in 0..c.kernels.len() {
                    for k in 0..c.kernels[m].canonical.len() {
                        let LayerGrads::Conv { canonical } = &analytic.layers[l] else {
                            unreachable!()
                        };
                        let g = canonical[m][k];
                        probe(
                            &mut work,
                            &|n: &mut Network, d: f64| {
                                let Layer::Conv(cc) = &mut n.layers[l] else { unreachable!() };
                                cc.kernels[m].canonical[k] += d;
                            },
                            g,
                            &|| format!("layer {l} conv map {m} w{k}"),
                        )?;
                    }
                }
            }
            Layer::Dense(d) => {
                if !d.learnable {
                    continue;
                }
                for r in 0..d.outputs {
                    for cidx in 0..d.inputs {
                        let LayerGrads::Dense { weights, .. } = &analytic.layers[l] else {
                            unreachable!()
                        };
                        let g = weights[(r, cidx)];
                        probe(
                            &mut work,
                            &|n: &mut Network, dd: f64| {
                                let Layer::Dense(dl) = &mut n.layers[l] else { unreachable!() };
                                dl.weights[(r, cidx)] += dd;
                            },
                            g,
                            &|| format!("layer {l} dense w[{r},{cidx}]"),
                        )?;
                    }
                    let LayerGrads::Dense { biases, .. } = &analytic.layers[l] else {
                        unreachable!()
                    };
                    let g = biases[r];
                    probe(
                        &mut work,
                        &|n: &mut Network, dd: f64| {
                            let Layer::Dense(dl) = &mut n.layers[l] else { unreachable!() };
                            dl.biases[r] += dd;
                        },
                        g,
                        &|| format!("layer {l} dense b[{r}]"),
                    )?;
                }
            }
        }
    }

    Ok(GradCheckReport {
        epsilon,
        tolerance,
        checked,
        max_rel_error: max_rel,
        worst,
        passed: max_rel <= tolerance,
    })
}

/// A small 3-class network exercising both conv classes: 15x15 input,
/// conv(2 maps, 5x5, stride 2), conv(4 maps, 5x5, stride 1), dense 8,
/// dense 3. Cheap enough to finite-difference every parameter.
pub fn reduced_network(
    class1: SymmetryClass,
    class2: SymmetryClass,
    t2b_mode: T2bMode,
    seed: u64,
) -> Result<Network> {
    reduced_network_with(class1, class2, true, t2b_mode, seed)
}

/// Reduced network with explicit conv learnability (for F-mode checks).
pub fn reduced_network_with(
    class1: SymmetryClass,
    class2: SymmetryClass,
    conv_learnable: bool,
    t2b_mode: T2bMode,
    seed: u64,
) -> Result<Network> {
    Network::new(
        &NetworkSpec {
            input_size: 15,
            layers: vec![
                LayerSpec::Conv {
                    maps: 2,
                    class: class1,
                    kernel_size: 5,
                    stride: 2,
                    learnable: conv_learnable,
                },
                LayerSpec::Conv {
                    maps: 4,
                    class: class2,
                    kernel_size: 5,
                    stride: 1,
                    learnable: conv_learnable,
                },
                LayerSpec::Dense { outputs: 8, learnable: true, activation: Activation::Relu },
                LayerSpec::Dense { outputs: 3, learnable: true, activation: Activation::Softmax },
            ],
        },
        t2b_mode,
        seed,
    )
}

/// Reduced network for a named condition, honoring its mode.
pub fn reduced_network_for(condition: Condition, t2b_mode: T2bMode, seed: u64) -> Result<Network> {
    reduced_network_with(
        condition.layer1,
        condition.layer2,
        condition.mode == Mode::Learned,
        t2b_mode,
        seed,
    )
}

/// Smooth deterministic Gaussian test inputs for gradient checks.
pub fn gradcheck_inputs(
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
) -> (Vec<Matrix>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let images = (0..n)
        .map(|_| {
            Matrix::from_vec(size, size, (0..size * size).map(|_| normal.sample(&mut rng)).collect())
        })
        .collect();
    let targets = (0..n).map(|i| i % classes).collect();
    (images, targets)
}
