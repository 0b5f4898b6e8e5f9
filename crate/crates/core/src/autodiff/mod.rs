//! Reverse-mode differentiation over a tape of rank-2 tensors.
//!
//! Values are computed eagerly when a node is created and all of its parents
//! already hold values. Gradients are built as ordinary graph nodes, so a
//! gradient can itself be differentiated (double backpropagation).
//!
//! Broadcasting in the binary elementwise ops follows the usual rule per
//! dimension: sizes must be equal or one of them must be 1.

mod backward;
mod check;
mod kernels;

pub use check::{finite_difference_check, FdReport};

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("node {node} ({op}): shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("node {node} ({op}): {reason}")]
    InvalidOperand {
        node: usize,
        op: &'static str,
        reason: String,
    },
    #[error("leaf node {0} is unbound")]
    UnboundLeaf(usize),
    #[error("node {0} has no value; bind all inputs and run forward first")]
    NoValue(usize),
    #[error("gradient root {node} must be a scalar, has shape {shape:?}")]
    NonScalarRoot { node: usize, shape: (usize, usize) },
    #[error("node {0} is not in this graph")]
    NotInGraph(usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("binding for node {node} has shape {got:?}, expected {expected:?}")]
    BindingShape {
        node: usize,
        expected: (usize, usize),
        got: Vec<usize>,
    },
    #[error("expression {expr} is not differentiable with respect to leaf {leaf}: {reason}")]
    NotDifferentiable {
        expr: usize,
        leaf: usize,
        reason: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    /// Must be bound before `forward`.
    Input,
    /// Trainable or differentiable value held by the graph.
    Param,
    /// Value with no intended gradient (still a leaf).
    Constant,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf(LeafKind),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    MaxConst(Var, f64),
    MinConst(Var, f64),
    /// `grad * [gate > threshold]` (above) or `grad * [gate < threshold]`.
    Gate {
        grad: Var,
        gate: Var,
        threshold: f64,
        above: bool,
    },
    Abs(Var),
    /// `grad * sign(gate)`.
    SignGate {
        grad: Var,
        gate: Var,
    },
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Sum(Var),
    SumTo(Var),
    BroadcastTo(Var),
    ConcatCols(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    ScatterCols {
        a: Var,
        cols: Vec<usize>,
        width: usize,
    },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Gate { grad, gate, .. } | Op::SignGate { grad, gate } => vec![*grad, *gate],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::MaxConst(a, _)
            | Op::MinConst(a, _)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Sum(a)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::SelectCols(a, _)
            | Op::ScatterCols { a, .. } => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: (usize, usize),
    pub(crate) value: Option<Tensor>,
    /// Created while building a gradient.
    pub(crate) from_backward: bool,
}

/// A computation graph. Node indices are a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    building_backward: bool,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .ok_or(AutodiffError::NotInGraph(v.0))?
            .value
            .as_ref()
            .ok_or(AutodiffError::NoValue(v.0))
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        Ok(self.value(v)?.item())
    }

    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.nodes.get(v.0).map(|n| &n.op) {
            Some(Op::Leaf(k)) => Some(*k),
            _ => None,
        }
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes.get(v.0).map(|n| &n.op), Some(Op::Leaf(_)))
    }

    pub(crate) fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> Var {
        let ready = op.parents().iter().all(|p| self.nodes[p.0].value.is_some());
        let value = ready.then(|| kernels::eval(&op, shape, &self.nodes));
        self.nodes.push(Node {
            op,
            shape,
            value,
            from_backward: self.building_backward,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, kind: LeafKind, t: Tensor) -> Var {
        let (r, c) = t.dims2().expect("graph leaves must have rank <= 2");
        let t = Tensor::from_parts(r, c, t.into_data());
        self.nodes.push(Node {
            op: Op::Leaf(kind),
            shape: (r, c),
            value: Some(t),
            from_backward: self.building_backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Unbound input placeholder of the given shape.
    pub fn input(&mut self, rows: usize, cols: usize) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf(LeafKind::Input),
            shape: (rows, cols),
            value: None,
            from_backward: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(LeafKind::Param, t)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(LeafKind::Constant, t)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// `[labels.len(), classes]` one-hot rows as a constant.
    pub fn one_hot(&mut self, labels: &[usize], classes: usize) -> Result<Var> {
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(AutodiffError::InvalidOperand {
                    node: self.nodes.len(),
                    op: "one_hot",
                    reason: format!("label {y} out of range for {classes} classes"),
                });
            }
            data[i * classes + y] = 1.0;
        }
        Ok(self.constant(Tensor::from_parts(labels.len(), classes, data)))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, op: Op) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = broadcast_shape(sa, sb).ok_or(AutodiffError::ShapeMismatch {
            node: self.nodes.len(),
            op: name,
            left: sa,
            right: sb,
        })?;
        Ok(self.push(op, shape))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        self.push(Op::Neg(a), s)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let s = self.shape(a);
        self.push(Op::Scale(a, c), s)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let s = self.shape(a);
        self.push(Op::AddConst(a, c), s)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k1) = if ta { (sa.1, sa.0) } else { sa };
        let (k2, n) = if tb { (sb.1, sb.0) } else { sb };
        if k1 != k2 {
            return Err(AutodiffError::ShapeMismatch {
                node: self.nodes.len(),
                op: "matmul",
                left: (m, k1),
                right: (k2, n),
            });
        }
        Ok(self.push(Op::MatMul { a, b, ta, tb }, (m, n)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.max_const(a, 0.0)
    }

    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let s = self.shape(a);
        self.push(Op::MaxConst(a, c), s)
    }

    pub fn min_const(&mut self, a: Var, c: f64) -> Var {
        let s = self.shape(a);
        self.push(Op::MinConst(a, c), s)
    }

    pub(crate) fn gate(&mut self, grad: Var, gate: Var, threshold: f64, above: bool) -> Var {
        let s = self.shape(grad);
        debug_assert_eq!(s, self.shape(gate));
        self.push(
            Op::Gate {
                grad,
                gate,
                threshold,
                above,
            },
            s,
        )
    }

    pub(crate) fn sign_gate(&mut self, grad: Var, gate: Var) -> Var {
        let s = self.shape(grad);
        self.push(Op::SignGate { grad, gate }, s)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        self.push(Op::Abs(a), s)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        self.push(Op::Square(a), s)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        self.push(Op::Sqrt(a), s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let s = self.shape(a);
        self.push(Op::Exp(a), s)
    }

    /// Sum of all elements, `[1, 1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a), (1, 1))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Reduces `a` to `(rows, cols)` by summing along dimensions where the target is 1.
    pub fn sum_to(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if (rows != s.0 && rows != 1) || (cols != s.1 && cols != 1) {
            return Err(AutodiffError::ShapeMismatch {
                node: self.nodes.len(),
                op: "sum_to",
                left: s,
                right: (rows, cols),
            });
        }
        if (rows, cols) == s {
            return Ok(a);
        }
        Ok(self.push(Op::SumTo(a), (rows, cols)))
    }

    /// Row sums as a `[rows, 1]` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, _) = self.shape(a);
        self.sum_to(a, r, 1).expect("valid reduction")
    }

    /// Column sums as a `[1, cols]` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, c) = self.shape(a);
        self.sum_to(a, 1, c).expect("valid reduction")
    }

    pub fn broadcast_to(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(a);
        if (s.0 != rows && s.0 != 1) || (s.1 != cols && s.1 != 1) {
            return Err(AutodiffError::ShapeMismatch {
                node: self.nodes.len(),
                op: "broadcast_to",
                left: s,
                right: (rows, cols),
            });
        }
        if (rows, cols) == s {
            return Ok(a);
        }
        Ok(self.push(Op::BroadcastTo(a), (rows, cols)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::InvalidOperand {
                node: self.nodes.len(),
                op: "concat_cols",
                reason: "no operands".into(),
            });
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(AutodiffError::ShapeMismatch {
                    node: self.nodes.len(),
                    op: "concat_cols",
                    left: self.shape(first),
                    right: s,
                });
            }
            cols += s.1;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), (rows, cols)))
    }

    /// Gathers the listed columns (repeats allowed).
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(AutodiffError::InvalidOperand {
                node: self.nodes.len(),
                op: "select_cols",
                reason: format!("column {bad} out of range for width {c}"),
            });
        }
        Ok(self.push(Op::SelectCols(a, cols.to_vec()), (r, cols.len())))
    }

    pub(crate) fn scatter_cols(&mut self, a: Var, cols: &[usize], width: usize) -> Var {
        let (r, _) = self.shape(a);
        self.push(
            Op::ScatterCols {
                a,
                cols: cols.to_vec(),
                width,
            },
            (r, width),
        )
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v)?.clone();
        Ok(self.constant(t))
    }

    /// Binds inputs (and optionally overrides parameter or constant leaves),
    /// re-evaluates every node in topological order and returns the value of `root`.
    pub fn forward(&mut self, root: Var, bindings: &[(Var, Tensor)]) -> Result<Tensor> {
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::NotInGraph(root.0));
        }
        for (v, t) in bindings {
            let node = self
                .nodes
                .get_mut(v.0)
                .ok_or(AutodiffError::NotInGraph(v.0))?;
            if !matches!(node.op, Op::Leaf(_)) {
                return Err(AutodiffError::NotALeaf(v.0));
            }
            if t.dims2() != Some(node.shape) {
                return Err(AutodiffError::BindingShape {
                    node: v.0,
                    expected: node.shape,
                    got: t.shape().to_vec(),
                });
            }
            node.value = Some(Tensor::from_parts(
                node.shape.0,
                node.shape.1,
                t.data().to_vec(),
            ));
        }
        for i in 0..self.nodes.len() {
            if let Op::Leaf(_) = self.nodes[i].op {
                if self.nodes[i].value.is_none() {
                    return Err(AutodiffError::UnboundLeaf(i));
                }
                continue;
            }
            let value = kernels::eval(&self.nodes[i].op, self.nodes[i].shape, &self.nodes);
            self.nodes[i].value = Some(value);
        }
        Ok(self.value(root)?.clone())
    }

    /// Gradient of the scalar `root` with respect to each leaf in `wrt`.
    ///
    /// The returned variables are nodes of this graph and can be differentiated again.
    /// A leaf that `root` does not depend on gets a zero constant.
    pub fn gradient(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        backward::gradient(self, root, wrt)
    }

    /// Differentiates an expression that was built from a previous gradient pass.
    pub fn second_order_gradient(&mut self, expr: Var, wrt: Var) -> Result<Var> {
        backward::second_order_gradient(self, expr, wrt)
    }

    /// Whether `expr` depends on `leaf` through graph edges.
    pub fn depends_on(&self, expr: Var, leaf: Var) -> bool {
        if leaf.0 > expr.0 {
            return false;
        }
        let mut reach = vec![false; expr.0 + 1];
        reach[leaf.0] = true;
        for i in leaf.0 + 1..=expr.0 {
            reach[i] = self.nodes[i].op.parents().iter().any(|p| reach[p.0]);
        }
        reach[expr.0]
    }
}

#[cfg(test)]
mod tests;
