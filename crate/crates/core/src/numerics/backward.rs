use crate::numerics::graph::{Graph, Op, Var};
use crate::numerics::{GraphError, Tensor};
use crate::scalar::Scalar;

impl<S: Scalar> Graph<S> {
    /// Reverse-mode gradient of a scalar `loss` with respect to each of `wrt`.
    ///
    /// Adjoints are recorded as new nodes of this graph, so the returned
    /// gradients are themselves differentiable. Requested nodes the loss does
    /// not depend on get a zero gradient.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>, GraphError> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(GraphError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        for &w in wrt {
            self.check(w)?;
        }

        let n = loss.index() + 1;
        let mut needs = vec![false; n];
        for &w in wrt {
            if w.index() < n {
                needs[w.index()] = true;
            }
        }
        for i in 0..n {
            if !needs[i] {
                needs[i] = self.nodes[i].op.inputs().iter().any(|v| needs[v.index()]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; n];
        adj[loss.index()] = Some(self.constant_full(&[1], S::one()));

        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(dy) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let this = self.var_at(i);
            let contribs = self.adjoint(&op, this, dy, &|v: Var| needs[v.index()])?;
            for (input, mut d) in contribs {
                if let Some(fault) = self.adjoint_fault {
                    if fault == op.name() {
                        d = self.scale(d, S::lit(1.5))?;
                    }
                }
                let slot = &mut adj[input.index()];
                *slot = Some(match *slot {
                    None => d,
                    Some(prev) => self.add(prev, d)?,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let g = match adj.get(w.index()).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant_full(&shape, S::zero())
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    /// Adjoint contributions `(input, d loss / d input)` of one node, restricted
    /// to inputs for which `wanted` is true.
    fn adjoint(
        &mut self,
        op: &Op<S>,
        this: Var,
        dy: Var,
        wanted: &dyn Fn(Var) -> bool,
    ) -> Result<Vec<(Var, Var)>, GraphError> {
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf | Op::Step(..) => {}
            Op::MatMul { a, b, ta, tb } => {
                if wanted(a) {
                    let da = if ta {
                        self.matmul_t(b, tb, dy, true)?
                    } else {
                        self.matmul_t(dy, false, b, !tb)?
                    };
                    out.push((a, da));
                }
                if wanted(b) {
                    let db = if tb {
                        self.matmul_t(dy, true, a, ta)?
                    } else {
                        self.matmul_t(a, !ta, dy, false)?
                    };
                    out.push((b, db));
                }
            }
            Op::Add(a, b) => {
                if wanted(a) {
                    out.push((a, dy));
                }
                if wanted(b) {
                    out.push((b, dy));
                }
            }
            Op::Sub(a, b) => {
                if wanted(a) {
                    out.push((a, dy));
                }
                if wanted(b) {
                    out.push((b, self.neg(dy)?));
                }
            }
            Op::Mul(a, b) => {
                if wanted(a) {
                    out.push((a, self.mul(dy, b)?));
                }
                if wanted(b) {
                    out.push((b, self.mul(dy, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(dy, c)?)),
            Op::AddScalar(a, _) => out.push((a, dy)),
            Op::Recip(a) => {
                let y2 = self.square(this)?;
                let t = self.mul(dy, y2)?;
                out.push((a, self.neg(t)?));
            }
            Op::Sqrt(a) => {
                let r = self.recip(this)?;
                let t = self.mul(dy, r)?;
                out.push((a, self.scale(t, S::lit(0.5))?));
            }
            Op::Square(a) => {
                let t = self.mul(dy, a)?;
                out.push((a, self.scale(t, S::lit(2.0))?));
            }
            Op::Tanh(a) => {
                let y2 = self.square(this)?;
                let t = self.mul(dy, y2)?;
                out.push((a, self.sub(dy, t)?));
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.step(a, slope)?;
                out.push((a, self.mul(dy, mask)?));
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape(dy, &shape)?));
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    if wanted(p) {
                        out.push((p, self.slice_rows(dy, offset, rows)?));
                    }
                    offset += rows;
                }
            }
            Op::SliceRows { a, start } => {
                let full = self.shape(a).to_vec();
                let len = self.shape(this)[0];
                let mut pieces = Vec::with_capacity(3);
                if start > 0 {
                    let mut s = full.clone();
                    s[0] = start;
                    pieces.push(self.leaf(&Tensor::zeros(&s)));
                }
                pieces.push(dy);
                let rest = full[0] - start - len;
                if rest > 0 {
                    let mut s = full.clone();
                    s[0] = rest;
                    pieces.push(self.leaf(&Tensor::zeros(&s)));
                }
                out.push((a, self.concat_rows(&pieces)?));
            }
            Op::SumAll(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.broadcast_scalar(dy, &shape)?));
            }
            Op::BroadcastScalar(a) => {
                let s = self.sum_all(dy)?;
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape(s, &shape)?));
            }
            Op::SumRows(a) => {
                let n = self.shape(a)[0];
                out.push((a, self.broadcast_rows(dy, n)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(dy)?)),
            Op::SumCols(a) => {
                let m = self.shape(a)[1];
                out.push((a, self.broadcast_cols(dy, m)?));
            }
            Op::BroadcastCols(a) => out.push((a, self.sum_cols(dy)?)),
            Op::Softmax(a) => {
                let m = self.shape(a)[1];
                let dyy = self.mul(dy, this)?;
                let s = self.sum_cols(dyy)?;
                let sb = self.broadcast_cols(s, m)?;
                let centered = self.sub(dy, sb)?;
                out.push((a, self.mul(this, centered)?));
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                if wanted(logits) {
                    let m = self.shape(logits)[1];
                    let p = self.softmax(logits)?;
                    let diff = self.sub(p, targets)?;
                    let db = self.broadcast_cols(dy, m)?;
                    out.push((logits, self.mul(db, diff)?));
                }
            }
            Op::RowNorm(a) => {
                let m = self.shape(a)[1];
                let r = self.recip(this)?;
                let w = self.mul(dy, r)?;
                let wb = self.broadcast_cols(w, m)?;
                out.push((a, self.mul(wb, a)?));
            }
        }
        Ok(out)
    }
}
