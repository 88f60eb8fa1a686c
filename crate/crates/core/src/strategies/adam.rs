use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.9;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for an ordered list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments shaped like `params`, with the default betas.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<S>>) -> Self {
        Self::with_betas(params, ADAM_BETA1, ADAM_BETA2)
    }

    pub fn with_betas<'a>(
        params: impl IntoIterator<Item = &'a Tensor<S>>,
        beta1: f64,
        beta2: f64,
    ) -> Self {
        let m: Vec<Tensor<S>> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1,
            beta2,
            eps: ADAM_EPS,
        }
    }

    /// One update `p -= lr · m̂ / (√v̂ + ε)` of every tensor.
    pub fn step(&mut self, params: Vec<&mut Tensor<S>>, grads: &[&[S]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "adam: {} moments, {} parameters, {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.len() != p.len() {
                return Err(Error::Graph(crate::numerics::GraphError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                }));
            }
        }
        self.t += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (c1, c2) = (S::one() - b1, S::one() - b2);
        let bc1 = S::lit(1.0 - self.beta1.powf(self.t as f64));
        let bc2 = S::lit(1.0 - self.beta2.powf(self.t as f64));
        let lr = S::lit(lr);
        let eps = S::lit(self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
