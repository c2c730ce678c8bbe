//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed on gradient-tracked values.
//! The record is append-only, so its order is already a valid topological
//! order and `backward` is a single reverse sweep. The tape is rebuilt every
//! forward pass; calling [`Tape::backward`] twice on the same tape recomputes
//! the sweep from scratch and yields identical results.
//!
//! Values are rank-2 row-major matrices (a vector is `1×n`, a scalar `1×1`).
//! Elementwise binary operations require identical shapes, with one
//! exception: a `1×1` scalar may combine with any shape on either side. The
//! extra `add_row` operation broadcasts a bias row over a batch, which is the
//! only other broadcast the models need.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{kernels, Tensor, TensorError};

/// Identifier of a parameter tensor, assigned by the model that owns it.
pub type ParamId = usize;

/// Gradients keyed by parameter id, in deterministic (sorted) order.
pub type GradMap = BTreeMap<ParamId, Vec<f64>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf(Option<ParamId>),
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a [r×c] + bias [1×c]`, bias broadcast over rows.
    AddRow(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Sum of all entries, producing a `1×1` scalar.
    Sum(NodeId),
}

struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<f64>, rg: bool, op: Op) -> NodeId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            data,
            requires_grad: rg,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Record a leaf holding a copy of `t`'s data. Pass a `ParamId` for
    /// parameters whose gradient should appear in the backward result.
    pub fn leaf(&mut self, t: &Tensor, param: Option<ParamId>) -> NodeId {
        self.push(
            t.rows(),
            t.cols(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf(param),
        )
    }

    /// Record an untracked constant.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        self.push(rows, cols, data, false, Op::Leaf(None))
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(1, 1, vec![value])
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn shape_vec(&self, id: NodeId) -> Vec<usize> {
        let n = &self.nodes[id.0];
        vec![n.rows, n.cols]
    }

    fn binary_shapes(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(usize, usize), TensorError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let a_scalar = ar * ac == 1;
        let b_scalar = br * bc == 1;
        if a_scalar && !b_scalar {
            Ok((br, bc))
        } else if b_scalar || (ar == br && ac == bc) {
            Ok((ar, ac))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape_vec(a),
                rhs: self.shape_vec(b),
            })
        }
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape_vec(a),
                rhs: self.shape_vec(b),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut out,
            m,
            ka,
            n,
        );
        let rg = self.tracked(&[a, b]);
        Ok(self.push(m, n, out, rg, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = self.binary_shapes("add", a, b)?;
        let out = self.broadcast_zip(a, b, r * c, |x, y| x + y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(r, c, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = self.binary_shapes("sub", a, b)?;
        let out = self.broadcast_zip(a, b, r * c, |x, y| x - y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(r, c, out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = self.binary_shapes("mul", a, b)?;
        let out = self.broadcast_zip(a, b, r * c, |x, y| x * y);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(r, c, out, rg, Op::Mul(a, b)))
    }

    fn broadcast_zip(&self, a: NodeId, b: NodeId, len: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        if da.len() == 1 && len != 1 {
            db.iter().map(|y| f(da[0], *y)).collect()
        } else if db.len() == 1 && len != 1 {
            da.iter().map(|x| f(*x, db[0])).collect()
        } else {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        }
    }

    /// Broadcast-add a bias row to every row of a matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (r, c) = self.shape(a);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape_vec(a),
                rhs: self.shape_vec(bias),
            });
        }
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[bias.0].data;
        let mut out = Vec::with_capacity(r * c);
        for row in da.chunks_exact(c) {
            out.extend(row.iter().zip(db).map(|(x, y)| x + y));
        }
        let rg = self.tracked(&[a, bias]);
        Ok(self.push(r, c, out, rg, Op::AddRow(a, bias)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| kernels::sigmoid(*x)).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(r, c, out, rg, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| kernels::tanh(*x)).collect();
        let rg = self.nodes[a.0].requires_grad;
        self.push(r, c, out, rg, Op::Tanh(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(1, 1, vec![total], rg, Op::Sum(a))
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// gradient-tracked parameter leaf reachable from `loss`.
    ///
    /// A loss with no tracked ancestors yields an empty map (and a warning);
    /// repeated calls recompute the sweep and give identical results.
    pub fn backward(&mut self, loss: NodeId) -> Result<GradMap, TensorError> {
        let (lr, lc) = self.shape(loss);
        if lr * lc != 1 {
            return Err(TensorError::NonScalarLoss {
                op: "backward",
                shape: self.shape_vec(loss),
            });
        }
        let mut map = GradMap::new();
        if !self.nodes[loss.0].requires_grad {
            log::warn!("backward: loss is detached from all tracked parameters");
            return Ok(map);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf(param) => {
                    if let Some(pid) = param {
                        map.insert(pid, g);
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(a);
                    let (_, n) = self.shape(b);
                    if self.nodes[a.0].requires_grad {
                        let mut da = self.grad_buf(&mut grads, a);
                        kernels::matmul_acc_bt(&g, &self.nodes[b.0].data, &mut da, m, k, n);
                        grads[a.0] = Some(da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = self.grad_buf(&mut grads, b);
                        kernels::matmul_acc_at(&self.nodes[a.0].data, &g, &mut db, m, k, n);
                        grads[b.0] = Some(db);
                    }
                }
                Op::Add(a, b) => {
                    self.acc_broadcast(&mut grads, a, &g, |_i| 1.0);
                    self.acc_broadcast(&mut grads, b, &g, |_i| 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc_broadcast(&mut grads, a, &g, |_i| 1.0);
                    self.acc_broadcast(&mut grads, b, &g, |_i| -1.0);
                }
                Op::Mul(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        let factor = other_factor(&self.nodes[b.0].data, g.len());
                        self.acc_broadcast(&mut grads, a, &g, factor);
                    }
                    if self.nodes[b.0].requires_grad {
                        let factor = other_factor(&self.nodes[a.0].data, g.len());
                        self.acc_broadcast(&mut grads, b, &g, factor);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.nodes[a.0].requires_grad {
                        let mut da = self.grad_buf(&mut grads, a);
                        for (d, x) in da.iter_mut().zip(&g) {
                            *d += x;
                        }
                        grads[a.0] = Some(da);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let c = self.shape(bias).1;
                        let mut db = self.grad_buf(&mut grads, bias);
                        for row in g.chunks_exact(c) {
                            for (d, x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        grads[bias.0] = Some(db);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.nodes[a.0].requires_grad {
                        let mut da = self.grad_buf(&mut grads, a);
                        let y = &self.nodes[idx].data;
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                            *d += gi * yi * (1.0 - yi);
                        }
                        grads[a.0] = Some(da);
                    }
                }
                Op::Tanh(a) => {
                    if self.nodes[a.0].requires_grad {
                        let mut da = self.grad_buf(&mut grads, a);
                        let y = &self.nodes[idx].data;
                        for ((d, gi), yi) in da.iter_mut().zip(&g).zip(y) {
                            *d += gi * (1.0 - yi * yi);
                        }
                        grads[a.0] = Some(da);
                    }
                }
                Op::Sum(a) => {
                    if self.nodes[a.0].requires_grad {
                        let mut da = self.grad_buf(&mut grads, a);
                        for d in da.iter_mut() {
                            *d += g[0];
                        }
                        grads[a.0] = Some(da);
                    }
                }
            }
        }
        Ok(map)
    }

    fn grad_buf(&self, grads: &mut [Option<Vec<f64>>], id: NodeId) -> Vec<f64> {
        grads[id.0]
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[id.0].data.len()])
    }

    /// Accumulate `g ⊙ factor` into the gradient of `id`, reducing to a
    /// scalar when `id` is the broadcast `1×1` side.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: NodeId,
        g: &[f64],
        factor: impl Fn(usize) -> f64,
    ) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let mut d = self.grad_buf(grads, id);
        if d.len() == 1 && g.len() != 1 {
            let mut acc = 0.0;
            for (i, gi) in g.iter().enumerate() {
                acc += gi * factor(i);
            }
            d[0] += acc;
        } else {
            for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
                *di += gi * factor(i);
            }
        }
        grads[id.0] = Some(d);
    }
}

/// Multiplication backward: the co-factor seen by one operand, handling the
/// scalar-broadcast case where the other side has a single entry.
fn other_factor(other: &[f64], out_len: usize) -> impl Fn(usize) -> f64 + '_ {
    let scalar = other.len() == 1 && out_len != 1;
    move |i| if scalar { other[0] } else { other[i] }
}
