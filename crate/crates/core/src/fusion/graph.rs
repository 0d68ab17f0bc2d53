//! A small tape for reverse-mode differentiation of matrix expressions.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! visits every node after all of its consumers.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{FusionError, Tensor2};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    SoftmaxRows(usize),
    Sigmoid(usize),
    Relu(usize),
    OneMinus(usize),
    VConcat(usize, usize),
    HConcat(Vec<usize>),
    SliceCols(usize, usize),
    LayerNorm(usize, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar objective with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Result<Tensor2, FusionError> {
        if v.graph != self.graph || v.index >= self.grads.len() {
            return Err(FusionError::NotRecorded);
        }
        let (r, c) = self.shapes[v.index];
        Ok(self.grads[v.index].clone().unwrap_or_else(|| Tensor2::zeros(r, c)))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        v.index
    }

    /// Which inputs of every recorded `relu` are positive, in tape order.
    /// Two evaluations with equal patterns lie on the same smooth piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a].value.data().iter().map(|v| *v > 0.0));
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> Result<&Tensor2, FusionError> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(FusionError::NotRecorded);
        }
        Ok(&self.nodes[v.index].value)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf: a parameter, an input, or a constant.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.matmul(&self.nodes[ib].value);
        self.push(v, Op::MatMul(ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.add(&self.nodes[ib].value);
        self.push(v, Op::Add(ia, ib))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.sub(&self.nodes[ib].value);
        self.push(v, Op::Sub(ia, ib))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.hadamard(&self.nodes[ib].value);
        self.push(v, Op::Mul(ia, ib))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.scale(s);
        self.push(v, Op::Scale(ia, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.transpose();
        self.push(v, Op::Transpose(ia))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(row));
        let (x, b) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!((1, x.cols()), b.shape(), "add_row shape");
        let v = Tensor2::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) + b.get(0, c));
        self.push(v, Op::AddRow(ia, ib))
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(row));
        let (x, g) = (&self.nodes[ia].value, &self.nodes[ib].value);
        assert_eq!((1, x.cols()), g.shape(), "mul_row shape");
        let v = Tensor2::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * g.get(0, c));
        self.push(v, Op::MulRow(ia, ib))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = softmax_rows(&self.nodes[ia].value);
        self.push(v, Op::SoftmaxRows(ia))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(sigmoid);
        self.push(v, Op::Sigmoid(ia))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| x.max(0.0));
        self.push(v, Op::Relu(ia))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.map(|x| 1.0 - x);
        self.push(v, Op::OneMinus(ia))
    }

    pub fn vconcat(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = self.nodes[ia].value.vconcat(&self.nodes[ib].value);
        self.push(v, Op::VConcat(ia, ib))
    }

    pub fn hconcat(&mut self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|p| self.idx(*p)).collect();
        let vals: Vec<&Tensor2> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let v = Tensor2::hconcat(&vals);
        self.push(v, Op::HConcat(idx))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value.slice_cols(start, len);
        self.push(v, Op::SliceCols(ia, start))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let ia = self.idx(a);
        let v = layer_norm_rows(&self.nodes[ia].value, eps);
        self.push(v, Op::LayerNorm(ia, eps))
    }

    /// Reverse pass for the objective `sum(upstream * output)`.
    pub fn backward(&self, output: Var, upstream: &Tensor2) -> Result<Gradients, FusionError> {
        if output.graph != self.id || output.index >= self.nodes.len() {
            return Err(FusionError::NotRecorded);
        }
        let out_shape = self.nodes[output.index].value.shape();
        if upstream.shape() != out_shape {
            return Err(FusionError::Shape {
                op: "backward",
                detail: format!("upstream {:?} vs output {:?}", upstream.shape(), out_shape),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[output.index] = Some(upstream.clone());

        fn acc(grads: &mut [Option<Tensor2>], i: usize, g: Tensor2) {
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(&mut grads, *a, g.matmul(&vb.transpose()));
                    acc(&mut grads, *b, va.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(&mut grads, *a, g.hadamard(vb));
                    acc(&mut grads, *b, g.hadamard(va));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.column_sums());
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, b) => {
                    let (x, row) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(&mut grads, *b, g.hadamard(x).column_sums());
                    let ga = Tensor2::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * row.get(0, c));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_map(y, |g, s| g * s * (1.0 - s))),
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    acc(&mut grads, *a, g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::OneMinus(a) => acc(&mut grads, *a, g.scale(-1.0)),
                Op::VConcat(a, b) => {
                    let top = self.nodes[*a].value.rows();
                    let bottom = self.nodes[*b].value.rows();
                    acc(&mut grads, *a, g.slice_rows(0, top));
                    acc(&mut grads, *b, g.slice_rows(top, bottom));
                }
                Op::HConcat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.cols();
                        acc(&mut grads, *p, g.slice_cols(start, w));
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let mut ga = Tensor2::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a, eps) => {
                    let x = &self.nodes[*a].value;
                    let n = x.cols() as f64;
                    let mut ga = Tensor2::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let mean = x.row(r).iter().sum::<f64>() / n;
                        let var = x.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let g_mean = g.row(r).iter().sum::<f64>() / n;
                        let gy_mean = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..x.cols() {
                            ga.set(r, c, inv * (g.get(r, c) - g_mean - y.get(r, c) * gy_mean));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
            }
            // keep the leaf gradients around; intermediate ones are dropped by take()
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients {
            graph: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (c, e) in exps.into_iter().enumerate() {
            out.set(r, c, e / z);
        }
    }
    out
}

pub fn layer_norm_rows(x: &Tensor2, eps: f64) -> Tensor2 {
    let n = x.cols() as f64;
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let mean = x.row(r).iter().sum::<f64>() / n;
        let var = x.row(r).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for c in 0..x.cols() {
            out.set(r, c, (x.get(r, c) - mean) * inv);
        }
    }
    out
}
