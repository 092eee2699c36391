//! Reverse-mode autodiff tape.
//!
//! A [`Tape`] is a single-assignment list of primitive ops in topological
//! order. Builders compute the forward value eagerly and return a [`NodeId`];
//! [`Tape::backward`] runs one reverse sweep from a scalar loss and returns
//! the gradient for every `var` leaf.
//!
//! Subgradient conventions, fixed so tests can pin behavior:
//! * MAX reductions route the gradient to the argmax element, ties to the
//!   lowest row index;
//! * `relu` uses derivative 0 at exactly 0;
//! * the unit-ball projection `x / max(‖x‖₂, 1)` uses the identity Jacobian
//!   inside the ball and on the sphere, and the normalized-direction Jacobian
//!   `(I − ŷŷᵀ)/‖x‖` outside.

use std::rc::Rc;

use crate::{Error, Result};

use super::tensor::{self, Tensor};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Differentiable leaf (parameter or state).
    Var,
    /// Non-differentiable leaf (data).
    Const,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    /// Matrix plus a rank-1 bias row, broadcast over rows.
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sqrt(NodeId),
    Log(NodeId),
    Square(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows {
        src: NodeId,
        rows: Rc<[usize]>,
    },
    /// Per-segment elementwise MAX over rows; empty segments yield zeros.
    /// `argmax[s * cols + c]` stores the winning input row, or -1 if empty.
    SegmentMax {
        src: NodeId,
        argmax: Vec<i64>,
    },
    /// Per-segment elementwise sum over rows (aggregation ablation).
    SegmentSum {
        src: NodeId,
        seg_of_row: Rc<[usize]>,
    },
    /// Per-row projection onto the unit l2 ball.
    RowNormBall(NodeId),
    SumAll(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients from one backward sweep, indexed by [`NodeId`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient w.r.t. a leaf; zeros if the node never influenced the loss.
    pub fn wrt(&self, id: NodeId, tape: &Tape) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(id).shape()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Var, value)
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = tensor::matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "add: {:?} vs {:?}", va.shape(), vb.shape());
        let mut v = va.clone();
        v.add_assign(vb);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "sub: {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let v = Tensor::new(va.shape(), data);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(va.same_shape(vb), "mul: {:?} vs {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(va.shape(), data);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a, c), v)
    }

    /// `a` is `[m, n]`, `bias` is `[n]`; adds the bias to every row.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.shape().len(), 1, "add_row bias must be rank 1");
        assert_eq!(va.cols(), vb.len(), "add_row: {} cols vs bias {}", va.cols(), vb.len());
        let n = va.cols();
        let mut data = va.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let v = Tensor::new(va.shape(), data);
        self.push(Op::AddRow(a, bias), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid_scalar);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols: empty input");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let vp = self.value(*p);
                assert_eq!(vp.rows(), rows, "concat_cols: row count mismatch");
                data.extend_from_slice(vp.row(r));
            }
        }
        let v = Tensor::new(&[rows, total], data);
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    /// `out[r, :] = src[rows[r], :]`; backward scatter-adds.
    pub fn gather_rows(&mut self, src: NodeId, rows: Rc<[usize]>) -> NodeId {
        let vs = self.value(src);
        let cols = vs.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows.iter() {
            data.extend_from_slice(vs.row(r));
        }
        let v = Tensor::new(&[rows.len(), cols], data);
        self.push(Op::GatherRows { src, rows }, v)
    }

    /// Elementwise MAX of `src` rows grouped by `seg_of_row`; empty segments
    /// produce zero rows. Ties go to the lowest row index.
    pub fn segment_max(&mut self, src: NodeId, seg_of_row: &[usize], segments: usize) -> NodeId {
        let (v, argmax) = segment_max_kernel(self.value(src), seg_of_row, segments);
        self.push(Op::SegmentMax { src, argmax }, v)
    }

    /// Elementwise sum of `src` rows grouped by `seg_of_row`.
    pub fn segment_sum(&mut self, src: NodeId, seg_of_row: Rc<[usize]>, segments: usize) -> NodeId {
        let v = segment_sum_kernel(self.value(src), &seg_of_row, segments);
        self.push(Op::SegmentSum { src, seg_of_row }, v)
    }

    /// Projects every row onto the unit l2 ball: `x / max(‖x‖₂, 1)`.
    pub fn row_norm_ball(&mut self, a: NodeId) -> NodeId {
        let v = row_norm_ball_kernel(self.value(a));
        self.push(Op::RowNormBall(a), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Grads> {
        let loss_val = self.value(loss);
        if !loss_val.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_val.shape(), vec![1.0]));

        for id in (0..=loss.0).rev() {
            let Some(d) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Var => {
                    // Leaves keep their gradient for the caller.
                    grads[id] = Some(d);
                }
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let da = tensor::matmul_nt(&d, self.value(*b));
                    let db = tensor::matmul_tn(self.value(*a), &d);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, d.clone());
                    accumulate(&mut grads, *b, d);
                }
                Op::Sub(a, b) => {
                    let mut neg = d.clone();
                    neg.scale_assign(-1.0);
                    accumulate(&mut grads, *a, d);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = elementwise(&d, self.value(*b), |g, y| g * y);
                    let db = elementwise(&d, self.value(*a), |g, x| g * x);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    let mut da = d;
                    da.scale_assign(*c);
                    accumulate(&mut grads, *a, da);
                }
                Op::AddConst(a, _) => accumulate(&mut grads, *a, d),
                Op::AddRow(a, bias) => {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in d.data().chunks_exact(n) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::new(&[n], db));
                    accumulate(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let da = elementwise(&d, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = elementwise(&d, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, da);
                }
                Op::Sqrt(a) => {
                    let da = elementwise(&d, &node.value, |g, y| g * 0.5 / y);
                    accumulate(&mut grads, *a, da);
                }
                Op::Log(a) => {
                    let da = elementwise(&d, self.value(*a), |g, x| g / x);
                    accumulate(&mut grads, *a, da);
                }
                Op::Square(a) => {
                    let da = elementwise(&d, self.value(*a), |g, x| g * 2.0 * x);
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let rows = d.rows();
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut dp = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            let drow = d.row(r);
                            dp.extend_from_slice(&drow[offset..offset + cols]);
                        }
                        accumulate(&mut grads, *p, Tensor::new(&[rows, cols], dp));
                        offset += cols;
                    }
                }
                Op::GatherRows { src, rows } => {
                    let vs = self.value(*src);
                    let buf = grad_buf(&mut grads, *src, vs.shape());
                    let cols = vs.cols();
                    for (r_out, &r_src) in rows.iter().enumerate() {
                        let drow = d.row(r_out);
                        let dst = &mut buf.data_mut()[r_src * cols..(r_src + 1) * cols];
                        for (acc, g) in dst.iter_mut().zip(drow) {
                            *acc += g;
                        }
                    }
                }
                Op::SegmentMax { src, argmax } => {
                    let vs = self.value(*src);
                    let cols = vs.cols();
                    let buf = grad_buf(&mut grads, *src, vs.shape());
                    for (slot, &winner) in argmax.iter().enumerate() {
                        if winner >= 0 {
                            let c = slot % cols;
                            buf.data_mut()[winner as usize * cols + c] += d.data()[slot];
                        }
                    }
                }
                Op::SegmentSum { src, seg_of_row } => {
                    let vs = self.value(*src);
                    let cols = vs.cols();
                    let buf = grad_buf(&mut grads, *src, vs.shape());
                    for (r, &s) in seg_of_row.iter().enumerate() {
                        let drow = &d.data()[s * cols..(s + 1) * cols];
                        let dst = &mut buf.data_mut()[r * cols..(r + 1) * cols];
                        for (acc, g) in dst.iter_mut().zip(drow) {
                            *acc += g;
                        }
                    }
                }
                Op::RowNormBall(a) => {
                    let va = self.value(*a);
                    let cols = va.cols();
                    let mut da = vec![0.0; va.len()];
                    for r in 0..va.rows() {
                        let x = va.row(r);
                        let g = d.row(r);
                        let dst = &mut da[r * cols..(r + 1) * cols];
                        let norm = tensor::dot(x, x).sqrt();
                        if norm <= 1.0 {
                            dst.copy_from_slice(g);
                        } else {
                            let y = node.value.row(r);
                            let ydotg = tensor::dot(y, g);
                            for ((out, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
                                *out = (gi - yi * ydotg) / norm;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(va.shape(), da));
                }
                Op::SumAll(a) => {
                    let g = d.item();
                    let va = self.value(*a);
                    accumulate(&mut grads, *a, Tensor::new(va.shape(), vec![g; va.len()]));
                }
            }
        }
        Ok(Grads { grads })
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared by the tape op and the straight-line forward path, so both produce
/// bit-identical results.
pub(crate) fn segment_max_kernel(
    values: &Tensor,
    seg_of_row: &[usize],
    segments: usize,
) -> (Tensor, Vec<i64>) {
    assert_eq!(values.rows(), seg_of_row.len(), "segment_max: row/segment length mismatch");
    let cols = values.cols();
    let mut out = vec![0.0; segments * cols];
    let mut argmax = vec![-1i64; segments * cols];
    for (r, &s) in seg_of_row.iter().enumerate() {
        assert!(s < segments, "segment index {s} out of range {segments}");
        let row = values.row(r);
        for (c, &x) in row.iter().enumerate() {
            let slot = s * cols + c;
            if argmax[slot] < 0 || x > out[slot] {
                out[slot] = x;
                argmax[slot] = r as i64;
            }
        }
    }
    (Tensor::new(&[segments, cols], out), argmax)
}

pub(crate) fn segment_sum_kernel(values: &Tensor, seg_of_row: &[usize], segments: usize) -> Tensor {
    assert_eq!(values.rows(), seg_of_row.len(), "segment_sum: row/segment length mismatch");
    let cols = values.cols();
    let mut out = vec![0.0; segments * cols];
    for (r, &s) in seg_of_row.iter().enumerate() {
        assert!(s < segments, "segment index {s} out of range {segments}");
        for (c, &x) in values.row(r).iter().enumerate() {
            out[s * cols + c] += x;
        }
    }
    Tensor::new(&[segments, cols], out)
}

pub(crate) fn row_norm_ball_kernel(values: &Tensor) -> Tensor {
    let cols = values.cols();
    let mut data = values.data().to_vec();
    for row in data.chunks_exact_mut(cols) {
        let norm = tensor::dot(row, row).sqrt();
        if norm > 1.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
    Tensor::new(values.shape(), data)
}

pub(crate) fn sigmoid_kernel(values: &Tensor) -> Tensor {
    values.map(sigmoid_scalar)
}

fn elementwise(d: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = d.data().iter().zip(other.data()).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(d.shape(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
    match &mut grads[id.0] {
        Some(t) => t.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'a mut Tensor {
    grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
}
