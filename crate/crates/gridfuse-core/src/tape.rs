//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays the record once in reverse topological order and accumulates
//! gradients. One tape is single-writer: parallel loss evaluation uses one
//! tape per sample and sums gradients at a synchronization point.
//!
//! The linear solve is recorded as a first-class operation: its reverse rule
//! is the exact adjoint of the solve actually performed, so gradients flow
//! through fused-model assembly without materializing any inverse.

use crate::error::{Error, Result};
use crate::linalg::{solve_linear, solve_linear_t, Lu};
use crate::tensor::Tensor;

/// Handle to a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// a + c * b
    AddScaled(Var, Var, f64),
    AddN(Vec<Var>),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Gelu(Var),
    Reshape(Var),
    ConcatVec(Vec<Var>),
    SliceVec {
        src: Var,
        start: usize,
        len: usize,
    },
    BlockDiag(Vec<Var>),
    /// x = solve(a, b)
    Solve(Var, Var),
    SqSum(Var),
    /// Sum of squares restricted to a 0/1 mask (constant), used for
    /// partially observed targets.
    MaskedSqSum(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        self.push(value, Op::Sub(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).neg();
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    /// `a + c * b`, the inner update of the integrators.
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Var {
        let value = self.value(a).add(&self.value(b).scale(c));
        self.push(value, Op::AddScaled(a, b, c))
    }

    pub fn add_n(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty());
        let mut value = self.value(terms[0]).clone();
        for &t in &terms[1..] {
            value = value.add(self.value(t));
        }
        self.push(value, Op::AddN(terms.to_vec()))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Var {
        let value = self.value(a).matvec(self.value(x));
        self.push(value, Op::MatVec(a, x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .copied()
            .map(gelu_scalar)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(value, Op::Gelu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let value = self.value(a).reshaped(shape);
        self.push(value, Op::Reshape(a))
    }

    pub fn concat_vec(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(
                self.value(p).shape().len(),
                1,
                "concat_vec: parts must be vectors"
            );
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(data), Op::ConcatVec(parts.to_vec()))
    }

    pub fn slice_vec(&mut self, src: Var, start: usize, len: usize) -> Var {
        let v = self.value(src);
        assert_eq!(v.shape().len(), 1);
        assert!(start + len <= v.len(), "slice_vec out of range");
        let value = Tensor::vector(v.data()[start..start + len].to_vec());
        self.push(value, Op::SliceVec { src, start, len })
    }

    /// Block-diagonal stacking of square-or-rectangular matrices; off-diagonal
    /// blocks are exactly zero.
    pub fn block_diag(&mut self, blocks: &[Var]) -> Var {
        assert!(!blocks.is_empty());
        let rows: usize = blocks.iter().map(|&b| self.value(b).rows()).sum();
        let cols: usize = blocks.iter().map(|&b| self.value(b).cols()).sum();
        let mut out = Tensor::zeros(&[rows, cols]);
        let (mut r0, mut c0) = (0, 0);
        for &b in blocks {
            let m = self.value(b);
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    out.set(r0 + i, c0 + j, m.get(i, j));
                }
            }
            r0 += m.rows();
            c0 += m.cols();
        }
        self.push(out, Op::BlockDiag(blocks.to_vec()))
    }

    /// `solve(a, b)` with partial-pivot LU; fails on numerically singular `a`.
    pub fn solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let lu = Lu::factor(self.value(a))?;
        let value = lu.solve(self.value(b));
        Ok(self.push(value, Op::Solve(a, b)))
    }

    /// Scalar sum of squares of all entries.
    pub fn sq_sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sq_sum());
        self.push(value, Op::SqSum(a))
    }

    /// Sum of squares over entries where `mask` is 1.
    pub fn masked_sq_sum(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let v = self.value(a);
        assert_eq!(v.len(), mask.len());
        let s: f64 = v.data().iter().zip(&mask).map(|(x, m)| m * x * x).sum();
        self.push(Tensor::scalar(s), Op::MaskedSqSum(a, mask))
    }

    /// Gradient of a scalar `loss` with respect to every recorded node.
    /// Nodes not on a path to the loss have zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let add_grad = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| match &mut grads[v.0] {
            Some(acc) => *acc = acc.add(&g),
            slot @ None => *slot = Some(g),
        };

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Reattach: gradient of a node is final once we visit it.
            grads[idx] = Some(g.clone());
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g.neg());
                }
                Op::Neg(a) => add_grad(&mut grads, *a, g.neg()),
                Op::Scale(a, c) => add_grad(&mut grads, *a, g.scale(*c)),
                Op::AddScaled(a, b, c) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g.scale(*c));
                }
                Op::AddN(terms) => {
                    for &t in terms {
                        add_grad(&mut grads, t, g.clone());
                    }
                }
                Op::MatVec(a, x) => {
                    let xa = Tensor::outer(&g, self.value(*x));
                    let xx = self.value(*a).transpose().matvec(&g);
                    add_grad(&mut grads, *a, xa);
                    add_grad(&mut grads, *x, xx);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose());
                    let gb = self.value(*a).transpose().matmul(&g);
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xi, &gi)| gi * gelu_grad_scalar(xi))
                        .collect();
                    add_grad(&mut grads, *a, Tensor::new(x.shape().to_vec(), data));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    add_grad(&mut grads, *a, g.reshaped(shape));
                }
                Op::ConcatVec(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let part = Tensor::vector(g.data()[off..off + n].to_vec());
                        add_grad(&mut grads, p, part);
                        off += n;
                    }
                }
                Op::SliceVec { src, start, len } => {
                    let mut full = Tensor::zeros(&[self.value(*src).len()]);
                    full.data_mut()[*start..*start + *len].copy_from_slice(g.data());
                    add_grad(&mut grads, *src, full);
                }
                Op::BlockDiag(blocks) => {
                    let (mut r0, mut c0) = (0, 0);
                    for &b in blocks {
                        let (r, c) = (self.value(b).rows(), self.value(b).cols());
                        let mut gb = Tensor::zeros(&[r, c]);
                        for i in 0..r {
                            for j in 0..c {
                                gb.set(i, j, g.get(r0 + i, c0 + j));
                            }
                        }
                        add_grad(&mut grads, b, gb);
                        r0 += r;
                        c0 += c;
                    }
                }
                Op::Solve(a, b) => {
                    // x = A^{-1} b:  b_bar = A^{-T} g,  a_bar = -b_bar x^T.
                    let x = &self.nodes[idx].value;
                    let gb = solve_linear_t(self.value(*a), &g)
                        .expect("solve succeeded forward, transpose must factor");
                    let ga = if x.shape().len() == 1 {
                        Tensor::outer(&gb, x).neg()
                    } else {
                        gb.matmul(&x.transpose()).neg()
                    };
                    add_grad(&mut grads, *a, ga);
                    add_grad(&mut grads, *b, gb);
                }
                Op::SqSum(a) => {
                    let s = g.scalar_value();
                    add_grad(&mut grads, *a, self.value(*a).scale(2.0 * s));
                }
                Op::MaskedSqSum(a, mask) => {
                    let s = g.scalar_value();
                    let x = self.value(*a);
                    let data: Vec<f64> = x
                        .data()
                        .iter()
                        .zip(mask)
                        .map(|(&xi, &mi)| 2.0 * s * mi * xi)
                        .collect();
                    add_grad(&mut grads, *a, Tensor::new(x.shape().to_vec(), data));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients keyed by recorded node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` is off-path.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }
}

/// Non-recorded GELU, for plain forward evaluation.
pub fn gelu_plain(x: &Tensor) -> Tensor {
    Tensor::new(
        x.shape().to_vec(),
        x.data().iter().copied().map(gelu_scalar).collect(),
    )
}

/// Plain linear solve re-exported next to the recorded one.
pub fn solve_plain(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    solve_linear(a, b)
}
