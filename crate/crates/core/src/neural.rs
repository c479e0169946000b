//! Dense feed-forward networks with exact backpropagation.
//!
//! Hidden layers use rectifiers and the output layer is affine. Weights of a
//! layer are stored row-major with shape `(out_dim, in_dim)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNAF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

/// Gradients with the same layout as a network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer outputs of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    // activations[0] is the input; activations[i + 1] is the output of layer i
    // after its activation.
    activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (in_dim, out_dim) = (w[0], w[1]);
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    in_dim,
                    out_dim,
                    weights,
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit `(weights, biases)` per layer.
    pub fn from_parameters(dims: &[usize], params: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        Self::check_dims(dims)?;
        if params.len() != dims.len() - 1 {
            return Err(Error::shape(format!(
                "{} parameter pairs for {} layers",
                params.len(),
                dims.len() - 1
            )));
        }
        let layers = dims
            .windows(2)
            .zip(params)
            .map(|(w, (weights, biases))| {
                if weights.len() != w[0] * w[1] || biases.len() != w[1] {
                    return Err(Error::shape(format!(
                        "layer {}x{} given {} weights and {} biases",
                        w[1],
                        w[0],
                        weights.len(),
                        biases.len()
                    )));
                }
                Ok(Layer {
                    in_dim: w[0],
                    out_dim: w[1],
                    weights,
                    biases,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self { layers };
        net.check_finite()?;
        Ok(net)
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::shape(format!(
                "layer dims {dims:?} need at least two positive entries"
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} entries, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&current, &mut next);
            if i != last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.affine(activations.last().expect("nonempty"), &mut out);
            if i != last {
                out.iter_mut().for_each(|v| *v = relu(*v));
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Gradients of a scalar loss given `upstream = dL/d(output)`.
    /// Returns parameter gradients and `dL/d(input)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let trace = self.forward_trace(input)?;
        self.backward_trace(&trace, upstream)
    }

    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = self.zero_gradients();
        let mut delta = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[i];
            let gw = &mut grads.weights[i];
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (g, x) in gw[o * layer.in_dim..(o + 1) * layer.in_dim]
                        .iter_mut()
                        .zip(input)
                    {
                        *g = d * x;
                    }
                }
            }
            grads.biases[i].copy_from_slice(&delta);
            let mut prev = vec![0.0; layer.in_dim];
            for (row, d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                if *d != 0.0 {
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            if i > 0 {
                // Rectifier derivative, read off the stored post-activation.
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok((grads, delta))
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite parameter in layer {i}")));
            }
        }
        Ok(())
    }

    /// Visits every parameter mutably: weights then biases, layer by layer.
    pub fn for_each_parameter_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.biases.iter_mut())
                .for_each(&mut f);
        }
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let dims = self.dims();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in &dims {
            out.write_all(&(*d as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a network; `expected_dims`, when given, must match the stored dims.
    pub fn read_from<R: Read>(input: &mut R, expected_dims: Option<&[usize]>) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(input)? as usize;
        if !(2..=1024).contains(&count) {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let dims = (0..count)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if let Some(expected) = expected_dims {
            if expected != dims.as_slice() {
                return Err(Error::shape(format!(
                    "checkpoint dims {dims:?}, expected {expected:?}"
                )));
            }
        }
        Self::check_dims(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let mut params = Vec::with_capacity(count - 1);
        for w in dims.windows(2) {
            let weights = read_f64s(input, w[0] * w[1])?;
            let biases = read_f64s(input, w[1])?;
            params.push((weights, biases));
        }
        Self::from_parameters(&dims, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_dims: Option<&[usize]>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?), expected_dims)
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            input.read_exact(&mut buf).map_err(truncated)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self
            .weights
            .iter_mut()
            .zip(&other.weights)
            .chain(self.biases.iter_mut().zip(&other.biases))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
            .for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|&v| v == 0.0)
    }

    /// Flattened in the same order as `DenseNetwork::for_each_parameter_mut`.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `θ ← θ − α ∇L`.
    #[default]
    Sgd,
    /// Adaptive moment estimation with the usual defaults (0.9, 0.999, 1e-8).
    Adam,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    first_moment: Option<Gradients>,
    second_moment: Option<Gradients>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be nonnegative, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            step: 0,
            first_moment: None,
            second_moment: None,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }
}

pub fn apply_gradients(
    net: &mut DenseNetwork,
    opt: &mut OptimizerState,
    grads: &Gradients,
) -> Result<()> {
    if grads.weights.len() != net.layers.len()
        || net
            .layers
            .iter()
            .zip(&grads.weights)
            .any(|(l, g)| l.weights.len() != g.len())
        || net
            .layers
            .iter()
            .zip(&grads.biases)
            .any(|(l, g)| l.biases.len() != g.len())
    {
        return Err(Error::shape("gradient layout does not match network"));
    }
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradient"));
    }
    let lr = opt.learning_rate;
    match opt.kind {
        OptimizerKind::Sgd => {
            for (l, (gw, gb)) in net
                .layers
                .iter_mut()
                .zip(grads.weights.iter().zip(&grads.biases))
            {
                l.weights.iter_mut().zip(gw).for_each(|(p, g)| *p -= lr * g);
                l.biases.iter_mut().zip(gb).for_each(|(p, g)| *p -= lr * g);
            }
        }
        OptimizerKind::Adam => {
            opt.step += 1;
            let m = opt.first_moment.get_or_insert_with(|| net.zero_gradients());
            let v = opt
                .second_moment
                .get_or_insert_with(|| net.zero_gradients());
            let t = opt.step as i32;
            let correction1 = 1.0 - ADAM_BETA1.powi(t);
            let correction2 = 1.0 - ADAM_BETA2.powi(t);
            let layers = net
                .layers
                .iter_mut()
                .flat_map(|l| [&mut l.weights, &mut l.biases]);
            let gs = grads
                .weights
                .iter()
                .zip(&grads.biases)
                .flat_map(|(a, b)| [a, b]);
            let ms = m
                .weights
                .iter_mut()
                .zip(m.biases.iter_mut())
                .flat_map(|(a, b)| [a, b]);
            let vs = v
                .weights
                .iter_mut()
                .zip(v.biases.iter_mut())
                .flat_map(|(a, b)| [a, b]);
            for (((p, g), m), v) in layers.zip(gs).zip(ms).zip(vs) {
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = m[i] / correction1;
                    let v_hat = v[i] / correction2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
    net.check_finite()
}
