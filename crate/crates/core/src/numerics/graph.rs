//! Append-only computation graph with eager forward evaluation.
//!
//! Every operation computes its value when it is recorded. [`Graph::grad`]
//! walks the graph in reverse insertion order and records each adjoint as
//! ordinary nodes built from the same primitive set, so the gradients it
//! returns can be differentiated again.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::numerics::{GraphError, Tensor};
use crate::scalar::Scalar;

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    pub(crate) idx: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<S> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    AddScalar(Var, S),
    Recip(Var),
    Sqrt(Var),
    Square(Var),
    Tanh(Var),
    LeakyRelu(Var, S),
    /// Derivative mask of a leaky-relu: 1 where the input is `>= 0`, else the slope.
    Step(Var, S),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    SumAll(Var),
    BroadcastScalar(Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Var,
    },
    RowNorm(Var),
}

/// Names of every recorded op, as used by [`Graph::inject_adjoint_fault`].
pub const OP_NAMES: [&str; 25] = [
    "leaf",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "recip",
    "sqrt",
    "square",
    "tanh",
    "leaky_relu",
    "step",
    "reshape",
    "concat_rows",
    "slice_rows",
    "sum_all",
    "broadcast_scalar",
    "sum_rows",
    "broadcast_rows",
    "sum_cols",
    "broadcast_cols",
    "softmax",
    "softmax_cross_entropy",
    "row_norm",
];

impl<S> Op<S> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Recip(..) => "recip",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Step(..) => "step",
            Op::Reshape(..) => "reshape",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::SumAll(..) => "sum_all",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Softmax(..) => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::RowNorm(..) => "row_norm",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::SoftmaxCrossEntropy { logits, targets } => vec![*logits, *targets],
            Op::ConcatRows(parts) => parts.clone(),
            Op::SliceRows { a, .. } => vec![*a],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Step(a, _)
            | Op::Recip(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::Tanh(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::BroadcastScalar(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::SumCols(a)
            | Op::BroadcastCols(a)
            | Op::Softmax(a)
            | Op::RowNorm(a) => vec![*a],
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) op: Op<S>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<S>,
}

/// A single-threaded computation graph. See the module docs.
pub struct Graph<S> {
    id: u32,
    pub(crate) nodes: Vec<Node<S>>,
    check_finite: bool,
    pub(crate) adjoint_fault: Option<&'static str>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1..].iter().product())
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: false,
            adjoint_fault: None,
        }
    }

    /// Turns on NaN/Inf detection: every recorded op fails with
    /// [`GraphError::NonFinite`] if its output is not finite.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    /// Fault injection for gradient-check self tests: every adjoint
    /// contribution produced by the named op is scaled by 1.5.
    pub fn inject_adjoint_fault(&mut self, op_name: &'static str) {
        self.adjoint_fault = Some(op_name);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded nodes with the given op name.
    pub fn count_op(&self, op_name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == op_name).count()
    }

    pub(crate) fn var_at(&self, i: usize) -> Var {
        Var {
            graph: self.id,
            idx: i as u32,
        }
    }

    pub(crate) fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.idx as usize]
    }

    pub(crate) fn check(&self, v: Var) -> Result<(), GraphError> {
        if v.graph != self.id || v.idx as usize >= self.nodes.len() {
            return Err(GraphError::ForeignVar { index: v.index() });
        }
        Ok(())
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("graph node holds a valid tensor")
    }

    /// Sign pattern of every leaky-relu input, in recording order. Two
    /// evaluations with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::LeakyRelu(a, _) = n.op {
                out.extend(self.value(a).iter().map(|v| *v >= S::zero()));
            }
        }
        out
    }

    pub(crate) fn push(
        &mut self,
        op: Op<S>,
        shape: Vec<usize>,
        value: Vec<S>,
    ) -> Result<Var, GraphError> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { op: op.name() });
        }
        let idx = u32::try_from(self.nodes.len()).expect("graph exceeds u32 nodes");
        self.nodes.push(Node { op, shape, value });
        Ok(Var {
            graph: self.id,
            idx,
        })
    }

    /// Records a leaf (parameter, input or constant).
    pub fn leaf(&mut self, t: &Tensor<S>) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec())
            .expect("leaf insertion only fails on non-finite input")
    }

    /// Like [`Graph::leaf`] but surfaces non-finite input as an error.
    pub fn try_leaf(&mut self, t: &Tensor<S>) -> Result<Var, GraphError> {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn constant_full(&mut self, shape: &[usize], value: S) -> Var {
        self.leaf(&Tensor::full(shape, value))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GraphError> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(GraphError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn rank2(&self, op: &'static str, a: Var) -> Result<(usize, usize), GraphError> {
        self.check(a)?;
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(GraphError::RankMismatch {
                op,
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn unary(&mut self, op: Op<S>, a: Var, f: impl Fn(S) -> S) -> Result<Var, GraphError> {
        self.check(a)?;
        let n = self.node(a);
        let shape = n.shape.clone();
        let value = n.value.iter().map(|&v| f(v)).collect();
        self.push(op, shape, value)
    }

    fn binary(
        &mut self,
        op: Op<S>,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Var, GraphError> {
        self.same_shape(op.name(), a, b)?;
        let shape = self.shape(a).to_vec();
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, shape, value)
    }

    /// `op(a) · op(b)` where `op` optionally transposes a rank-2 operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, GraphError> {
        let (ar, ac) = self.rank2("matmul", a)?;
        let (br, bc) = self.rank2("matmul", b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let a_strides = if ta {
            (1, ac as isize)
        } else {
            (ac as isize, 1)
        };
        let b_strides = if tb {
            (1, bc as isize)
        } else {
            (bc as isize, 1)
        };
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            self.value(a),
            a_strides,
            self.value(b),
            b_strides,
            &mut out,
        );
        self.push(Op::MatMul { a, b, ta, tb }, vec![m, n], out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var, GraphError> {
        self.unary(Op::Scale(a, c), a, |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, GraphError> {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Result<Var, GraphError> {
        self.unary(Op::AddScalar(a, c), a, |x| x + c)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, GraphError> {
        self.unary(Op::Recip(a), a, |x| x.recip())
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, GraphError> {
        self.unary(Op::Sqrt(a), a, |x| x.sqrt())
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GraphError> {
        self.unary(Op::Square(a), a, |x| x * x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GraphError> {
        self.unary(Op::Tanh(a), a, |x| x.tanh())
    }

    /// `x` for `x >= 0`, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var, GraphError> {
        self.unary(Op::LeakyRelu(a, slope), a, |x| {
            if x >= S::zero() {
                x
            } else {
                x * slope
            }
        })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GraphError> {
        self.leaky_relu(a, S::zero())
    }

    /// Slope mask of [`Graph::leaky_relu`]; the right derivative (1) is used at 0.
    pub fn step(&mut self, a: Var, slope: S) -> Result<Var, GraphError> {
        self.unary(Op::Step(a, slope), a, |x| {
            if x >= S::zero() {
                S::one()
            } else {
                slope
            }
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GraphError> {
        self.check(a)?;
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != self.node(a).value.len() {
            return Err(GraphError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.node(a).value.clone();
        self.push(Op::Reshape(a), shape.to_vec(), value)
    }

    /// Stacks inputs along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GraphError> {
        let first = *parts
            .first()
            .ok_or(GraphError::EmptyInput { op: "concat_rows" })?;
        self.check(first)?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            self.check(p)?;
            if self.shape(p)[1..] != tail[..] {
                return Err(GraphError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += self.shape(p)[0];
            value.extend_from_slice(self.value(p));
        }
        let mut shape = self.shape(first).to_vec();
        shape[0] = rows;
        self.push(Op::ConcatRows(parts.to_vec()), shape, value)
    }

    /// Rows `start .. start + len` along the leading axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GraphError> {
        self.check(a)?;
        let (rows, w) = rows_cols(self.shape(a));
        if len == 0 || start + len > rows {
            return Err(GraphError::OutOfRange {
                op: "slice_rows",
                detail: format!("rows {start}..{} of {rows}", start + len),
            });
        }
        let value = self.value(a)[start * w..(start + len) * w].to_vec();
        let mut shape = self.shape(a).to_vec();
        shape[0] = len;
        self.push(Op::SliceRows { a, start }, shape, value)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, GraphError> {
        self.check(a)?;
        let s = self.value(a).iter().copied().sum();
        self.push(Op::SumAll(a), vec![1], vec![s])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, GraphError> {
        let n = self.node(a).value.len();
        let s = self.sum_all(a)?;
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Repeats a one-element node into `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var, GraphError> {
        self.check(a)?;
        if self.value(a).len() != 1 {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast_scalar",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let v = self.value(a)[0];
        let n = shape.iter().product();
        self.push(Op::BroadcastScalar(a), shape.to_vec(), vec![v; n])
    }

    /// `[n, m] -> [m]`, summing over the batch axis.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, GraphError> {
        let (n, m) = self.rank2("sum_rows", a)?;
        let x = self.value(a);
        let mut out = vec![S::zero(); m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(&x[i * m..(i + 1) * m]) {
                *o = *o + *v;
            }
        }
        self.push(Op::SumRows(a), vec![m], out)
    }

    /// `[m] -> [n, m]`, repeating the vector as every row.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var, GraphError> {
        self.check(a)?;
        if self.shape(a).len() != 1 || n == 0 {
            return Err(GraphError::RankMismatch {
                op: "broadcast_rows",
                expected: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let m = self.shape(a)[0];
        let row = self.value(a).to_vec();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(&row);
        }
        self.push(Op::BroadcastRows(a), vec![n, m], out)
    }

    /// `[n, m] -> [n]`, summing over the feature axis.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, GraphError> {
        let (n, m) = self.rank2("sum_cols", a)?;
        let x = self.value(a);
        let out = (0..n)
            .map(|i| x[i * m..(i + 1) * m].iter().copied().sum())
            .collect();
        self.push(Op::SumCols(a), vec![n], out)
    }

    /// `[n] -> [n, m]`, repeating each entry across its row.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var, GraphError> {
        self.check(a)?;
        if self.shape(a).len() != 1 || m == 0 {
            return Err(GraphError::RankMismatch {
                op: "broadcast_cols",
                expected: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        let n = self.shape(a)[0];
        let x = self.value(a);
        let mut out = Vec::with_capacity(n * m);
        for &v in x {
            out.extend(std::iter::repeat_n(v, m));
        }
        self.push(Op::BroadcastCols(a), vec![n, m], out)
    }

    /// Row-wise softmax of `[n, m]` logits.
    pub fn softmax(&mut self, a: Var) -> Result<Var, GraphError> {
        let (n, m) = self.rank2("softmax", a)?;
        let x = self.value(a);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let start = out.len();
            let mut z = S::zero();
            for &v in row {
                let e = (v - mx).exp();
                z = z + e;
                out.push(e);
            }
            for o in &mut out[start..] {
                *o = *o / z;
            }
        }
        self.push(Op::Softmax(a), vec![n, m], out)
    }

    /// Per-row cross entropy `-Σ_j targets_ij · log softmax(logits)_ij`, shape `[n]`.
    /// Targets are treated as constants by [`Graph::grad`].
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var, GraphError> {
        let (n, m) = self.rank2("softmax_cross_entropy", logits)?;
        self.same_shape("softmax_cross_entropy", logits, targets)?;
        let x = self.value(logits);
        let y = self.value(targets);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
            let ce = row
                .iter()
                .zip(&y[i * m..(i + 1) * m])
                .map(|(&l, &t)| t * (lse - l))
                .sum();
            out.push(ce);
        }
        self.push(Op::SoftmaxCrossEntropy { logits, targets }, vec![n], out)
    }

    /// Euclidean norm of each row of `[n, m]`, shape `[n]`.
    pub fn row_norm(&mut self, a: Var) -> Result<Var, GraphError> {
        let (n, m) = self.rank2("row_norm", a)?;
        let x = self.value(a);
        let out = (0..n)
            .map(|i| {
                x[i * m..(i + 1) * m]
                    .iter()
                    .map(|&v| v * v)
                    .sum::<S>()
                    .sqrt()
            })
            .collect();
        self.push(Op::RowNorm(a), vec![n], out)
    }

    /// `x + b` with `b: [m]` added to every row of `x: [n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, GraphError> {
        let (n, _) = self.rank2("add_bias", x)?;
        let bb = self.broadcast_rows(b, n)?;
        self.add(x, bb)
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, GraphError> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Mean and (biased) variance over the batch axis of `[n, m]`, each `[m]`.
    pub fn batch_moments(&mut self, x: Var) -> Result<(Var, Var), GraphError> {
        let (n, _) = self.rank2("batch_moments", x)?;
        let inv_n = S::one() / S::lit(n as f64);
        let s = self.sum_rows(x)?;
        let mean = self.scale(s, inv_n)?;
        let mb = self.broadcast_rows(mean, n)?;
        let centered = self.sub(x, mb)?;
        let sq = self.square(centered)?;
        let ss = self.sum_rows(sq)?;
        let var = self.scale(ss, inv_n)?;
        Ok((mean, var))
    }
}
