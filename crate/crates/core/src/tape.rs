//! Tape-based reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The operation set is deliberately small: affine maps, elementwise
//! arithmetic, tanh, concatenation, reductions, squared error, isotropic
//! Gaussian log-density, log-sigmoid, and a symmetric clamp. That closed set
//! covers the denoiser network and every training objective in this crate.
//!
//! Nodes are evaluated eagerly as they are inserted, so the forward value of
//! any node is available immediately and is cached for the backward sweep.
//! Gradients accumulate additively when a node fans out, which is what weight
//! sharing across views and timesteps requires.

use std::collections::BTreeMap;

use thiserror::Error;

/// Errors raised while building or differentiating a compute graph.
#[derive(Debug, Error)]
pub enum GradError {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },
    #[error("backward requires a scalar output node, got length {len} at node {node}")]
    NonScalarOutput { node: usize, len: usize },
    #[error("gaussian log-density requires stddev > 0, got {0}")]
    InvalidStddev(f64),
    #[error("dense array invariant violated: {0}")]
    BadArray(String),
    #[error("concat requires at least one input")]
    EmptyConcat,
}

/// A dense row-major array of 64-bit reals. Scalars use shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Builds an array, checking the shape/length invariant and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GradError> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(GradError::BadArray(format!("zero dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(GradError::BadArray(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(GradError::BadArray(format!("non-finite entry {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: &[f64]) -> Self {
        Self { shape: vec![data.len()], data: data.to_vec() }
    }

    /// Row-major matrix of shape `[rows, cols]`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GradError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single entry of a scalar array.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

/// Handle to a node in a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    /// y = W x + b with W: [m, n], x: [n], b: [m].
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Concat { parts: Vec<NodeId> },
    Sum { x: NodeId },
    Mean { x: NodeId },
    /// y = sum((a - b)^2), scalar.
    SquaredError { a: NodeId, b: NodeId },
    /// y = log N(x | mean, stddev^2 I), scalar; stddev is a constant.
    GaussianLogDensity { x: NodeId, mean: NodeId, stddev: f64 },
    LogSigmoid { x: NodeId },
    /// Elementwise clamp to [lo, hi]; gradient is zero where saturated.
    Clamp { x: NodeId, lo: f64, hi: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: DenseArray,
}

/// Gradients of a scalar output with respect to every parameter node.
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: BTreeMap<NodeId, DenseArray>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&DenseArray> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &DenseArray)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// An append-only compute graph. Insertion order is topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseArray) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    fn mismatch(&self, detail: String) -> GradError {
        GradError::ShapeMismatch { node: self.nodes.len(), detail }
    }

    /// Inserts a constant leaf. Leaves receive no gradient entry.
    pub fn leaf(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn leaf_scalar(&mut self, v: f64) -> NodeId {
        self.leaf(DenseArray::scalar(v))
    }

    /// Inserts a parameter node; `backward` reports a gradient for it.
    pub fn param(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Param, value)
    }

    /// Cached value of any node.
    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    /// Forward evaluation: values are computed eagerly at insertion, so this
    /// just reads the cached output value.
    pub fn forward(&self, output: NodeId) -> &DenseArray {
        self.value(output)
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (ws, xs, bs) = (self.value(w).shape(), self.value(x).shape(), self.value(b).shape());
        if ws.len() != 2 || xs.len() != 1 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(self.mismatch(format!("affine W{ws:?} x{xs:?} b{bs:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = bd[i];
            let row = &wd[i * n..(i + 1) * n];
            for j in 0..n {
                acc += row[j] * xd[j];
            }
            out[i] = acc;
        }
        Ok(self.push(Op::Affine { w, x, b }, DenseArray { shape: vec![m], data: out }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = DenseArray {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|v| v.tanh()).collect(),
        };
        self.push(Op::Tanh { x }, value)
    }

    fn elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Result<NodeId, GradError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(self.mismatch(format!(
                "{name} {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = DenseArray { shape: self.value(a).shape.clone(), data };
        Ok(self.push(op, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.elementwise(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.elementwise(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.elementwise(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = DenseArray {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|v| c * v).collect(),
        };
        self.push(Op::Scale { x, c }, value)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        if parts.is_empty() {
            return Err(GradError::EmptyConcat);
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let len = data.len();
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, DenseArray { shape: vec![len], data }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).data.iter().sum();
        self.push(Op::Sum { x }, DenseArray::scalar(v))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let v = self.value(x).data.iter().sum::<f64>() / n;
        self.push(Op::Mean { x }, DenseArray::scalar(v))
    }

    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        if self.value(a).shape != self.value(b).shape {
            return Err(self.mismatch(format!(
                "squared_error {:?} vs {:?}",
                self.value(a).shape,
                self.value(b).shape
            )));
        }
        let v = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::SquaredError { a, b }, DenseArray::scalar(v)))
    }

    /// log N(x | mean, stddev^2 I), differentiable in `x` and `mean`.
    pub fn gaussian_log_density(
        &mut self,
        x: NodeId,
        mean: NodeId,
        stddev: f64,
    ) -> Result<NodeId, GradError> {
        if !(stddev > 0.0) {
            return Err(GradError::InvalidStddev(stddev));
        }
        if self.value(x).shape != self.value(mean).shape {
            return Err(self.mismatch(format!(
                "gaussian_log_density {:?} vs {:?}",
                self.value(x).shape,
                self.value(mean).shape
            )));
        }
        let v = gaussian_log_density(self.value(x).data(), self.value(mean).data(), stddev)?;
        Ok(self.push(Op::GaussianLogDensity { x, mean, stddev }, DenseArray::scalar(v)))
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = DenseArray {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|&v| log_sigmoid(v)).collect(),
        };
        self.push(Op::LogSigmoid { x }, value)
    }

    /// Elementwise clamp to `[lo, hi]`; subgradient zero where saturated.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = DenseArray {
            shape: self.value(x).shape.clone(),
            data: self.value(x).data.iter().map(|v| v.clamp(lo, hi)).collect(),
        };
        self.push(Op::Clamp { x, lo, hi }, value)
    }

    /// Reverse sweep from a scalar output. Returns gradients for every
    /// parameter node on the tape (including untouched ones, as zeros).
    pub fn backward(&self, output: NodeId) -> Result<GradientMap, GradError> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(GradError::NonScalarOutput { node: output.0, len: out_len });
        }
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[output.0][0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if adj[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let go = std::mem::take(&mut adj[idx]);
            match &self.nodes[idx].op {
                Op::Leaf | Op::Param => {
                    adj[idx] = go; // restore: this is an endpoint
                }
                Op::Affine { w, x, b } => {
                    let (m, n) = (self.value(*b).len(), self.value(*x).len());
                    let wd = self.value(*w).data();
                    let xd = self.value(*x).data();
                    for i in 0..m {
                        let gi = go[i];
                        adj[b.0][i] += gi;
                        for j in 0..n {
                            adj[w.0][i * n + j] += gi * xd[j];
                            adj[x.0][j] += gi * wd[i * n + j];
                        }
                    }
                }
                Op::Tanh { x } => {
                    let y = self.nodes[idx].value.data();
                    for (j, gj) in go.iter().enumerate() {
                        adj[x.0][j] += gj * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Add { a, b } => {
                    for (j, gj) in go.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] += gj;
                    }
                }
                Op::Sub { a, b } => {
                    for (j, gj) in go.iter().enumerate() {
                        adj[a.0][j] += gj;
                        adj[b.0][j] -= gj;
                    }
                }
                Op::Mul { a, b } => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    for (j, gj) in go.iter().enumerate() {
                        adj[a.0][j] += gj * bd[j];
                        adj[b.0][j] += gj * ad[j];
                    }
                }
                Op::Scale { x, c } => {
                    for (j, gj) in go.iter().enumerate() {
                        adj[x.0][j] += gj * c;
                    }
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        for j in 0..len {
                            adj[p.0][j] += go[off + j];
                        }
                        off += len;
                    }
                }
                Op::Sum { x } => {
                    let g = go[0];
                    for gj in adj[x.0].iter_mut() {
                        *gj += g;
                    }
                }
                Op::Mean { x } => {
                    let g = go[0] / self.value(*x).len() as f64;
                    for gj in adj[x.0].iter_mut() {
                        *gj += g;
                    }
                }
                Op::SquaredError { a, b } => {
                    let g = go[0];
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    for j in 0..ad.len() {
                        let d = 2.0 * (ad[j] - bd[j]) * g;
                        adj[a.0][j] += d;
                        adj[b.0][j] -= d;
                    }
                }
                Op::GaussianLogDensity { x, mean, stddev } => {
                    let g = go[0];
                    let inv_var = 1.0 / (stddev * stddev);
                    let (xd, md) = (self.value(*x).data(), self.value(*mean).data());
                    for j in 0..xd.len() {
                        let d = (xd[j] - md[j]) * inv_var * g;
                        adj[x.0][j] -= d;
                        adj[mean.0][j] += d;
                    }
                }
                Op::LogSigmoid { x } => {
                    let xd = self.value(*x).data();
                    for (j, gj) in go.iter().enumerate() {
                        // d/dz log sigma(z) = sigma(-z)
                        adj[x.0][j] += gj * sigmoid(-xd[j]);
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xd = self.value(*x).data();
                    for (j, gj) in go.iter().enumerate() {
                        if xd[j] > *lo && xd[j] < *hi {
                            adj[x.0][j] += gj;
                        }
                    }
                }
            }
        }

        let mut grads = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Param) {
                grads.insert(
                    NodeId(idx),
                    DenseArray { shape: node.value.shape.clone(), data: adj[idx].clone() },
                );
            }
        }
        Ok(GradientMap { grads })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log sigma(z) = -softplus(-z).
fn log_sigmoid(z: f64) -> f64 {
    -((-z).max(0.0) + (-z.abs()).exp().ln_1p())
}

/// Plain (non-tape) isotropic Gaussian log-density.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], stddev: f64) -> Result<f64, GradError> {
    if !(stddev > 0.0) {
        return Err(GradError::InvalidStddev(stddev));
    }
    if x.len() != mean.len() {
        return Err(GradError::BadArray(format!(
            "gaussian_log_density dimension mismatch {} vs {}",
            x.len(),
            mean.len()
        )));
    }
    let d = x.len() as f64;
    let mut quad = 0.0;
    for (xi, mi) in x.iter().zip(mean) {
        let r = xi - mi;
        quad += r * r;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(-0.5 * d * two_pi.ln() - d * stddev.ln() - quad / (2.0 * stddev * stddev))
}
