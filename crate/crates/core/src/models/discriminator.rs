use crate::error::{Error, Result};
use crate::models::{gaussian_init, Arch};
use crate::numerics::{Graph, Rng, Tensor, Var, LEAKY_SLOPE};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<S> {
    /// `[dim, d1]`
    pub trunk1_w: Tensor<S>,
    pub trunk1_b: Tensor<S>,
    /// `[d1, d2]`
    pub trunk2_w: Tensor<S>,
    pub trunk2_b: Tensor<S>,
    /// `[d2, 1]`
    pub critic_w: Tensor<S>,
    pub critic_b: Tensor<S>,
    /// `[d2, M]`
    pub cls_w: Tensor<S>,
    pub cls_b: Tensor<S>,
}

impl<S: Scalar> DiscriminatorParams<S> {
    pub const NAMES: [&'static str; 8] = [
        "d.trunk1.w",
        "d.trunk1.b",
        "d.trunk2.w",
        "d.trunk2.b",
        "d.critic.w",
        "d.critic.b",
        "c.head.w",
        "c.head.b",
    ];
    pub const CRITIC: [&'static str; 6] = [
        "d.trunk1.w",
        "d.trunk1.b",
        "d.trunk2.w",
        "d.trunk2.b",
        "d.critic.w",
        "d.critic.b",
    ];
    pub const CLASSIFIER: [&'static str; 6] = [
        "d.trunk1.w",
        "d.trunk1.b",
        "d.trunk2.w",
        "d.trunk2.b",
        "c.head.w",
        "c.head.b",
    ];

    pub fn init(arch: &Arch, rng: &mut Rng) -> Self {
        let [d1, d2] = arch.disc_hidden;
        Self {
            trunk1_w: gaussian_init(rng, &[arch.sample_dim(), d1]),
            trunk1_b: Tensor::zeros(&[d1]),
            trunk2_w: gaussian_init(rng, &[d1, d2]),
            trunk2_b: Tensor::zeros(&[d2]),
            critic_w: gaussian_init(rng, &[d2, 1]),
            critic_b: Tensor::zeros(&[1]),
            cls_w: gaussian_init(rng, &[d2, arch.categories]),
            cls_b: Tensor::zeros(&[arch.categories]),
        }
    }

    /// All tensors in [`Self::NAMES`] order.
    pub fn tensors(&self) -> [&Tensor<S>; 8] {
        [
            &self.trunk1_w,
            &self.trunk1_b,
            &self.trunk2_w,
            &self.trunk2_b,
            &self.critic_w,
            &self.critic_b,
            &self.cls_w,
            &self.cls_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<S>; 8] {
        [
            &mut self.trunk1_w,
            &mut self.trunk1_b,
            &mut self.trunk2_w,
            &mut self.trunk2_b,
            &mut self.critic_w,
            &mut self.critic_b,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        Self::NAMES.into_iter().zip(self.tensors()).collect()
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        Self::NAMES.into_iter().zip(self.tensors_mut()).collect()
    }

    /// Registers every tensor (trunk once) as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph<S>) -> BoundDiscriminator {
        let v: Vec<Var> = self.tensors().into_iter().map(|t| g.leaf(t)).collect();
        BoundDiscriminator {
            vars: v.try_into().expect("eight tensors"),
        }
    }
}

/// Anything that maps a `[B, dim]` batch to `[B]` critic scores.
pub trait Critic<S: Scalar> {
    fn score(&self, g: &mut Graph<S>, x: Var) -> Result<Var>;
}

/// Discriminator parameters registered in a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundDiscriminator {
    vars: [Var; 8],
}

impl BoundDiscriminator {
    /// Wraps existing leaves given in [`DiscriminatorParams::NAMES`] order.
    pub fn from_vars(vars: [Var; 8]) -> Self {
        Self { vars }
    }

    /// Leaves in [`DiscriminatorParams::NAMES`] order.
    pub fn vars(&self) -> &[Var; 8] {
        &self.vars
    }

    /// Leaves of the trunk plus critic head.
    pub fn critic_vars(&self) -> [Var; 6] {
        let v = self.vars;
        [v[0], v[1], v[2], v[3], v[4], v[5]]
    }

    /// Leaves of the trunk plus classifier head.
    pub fn classifier_vars(&self) -> [Var; 6] {
        let v = self.vars;
        [v[0], v[1], v[2], v[3], v[6], v[7]]
    }

    /// Shared features `[B, d2]`.
    pub fn trunk<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let slope = S::lit(LEAKY_SLOPE);
        let v = &self.vars;
        let h = g.linear(x, v[0], Some(v[1]))?;
        let h = g.leaky_relu(h, slope)?;
        let h = g.linear(h, v[2], Some(v[3]))?;
        Ok(g.leaky_relu(h, slope)?)
    }

    /// Critic scores `[B]` from trunk features.
    pub fn critic_head<S: Scalar>(&self, g: &mut Graph<S>, features: Var) -> Result<Var> {
        let n = g.shape(features)[0];
        let s = g.linear(features, self.vars[4], Some(self.vars[5]))?;
        Ok(g.reshape(s, &[n])?)
    }

    /// Classifier logits `[B, M]` from trunk features.
    pub fn classifier_head<S: Scalar>(&self, g: &mut Graph<S>, features: Var) -> Result<Var> {
        Ok(g.linear(features, self.vars[6], Some(self.vars[7]))?)
    }

    pub fn critic<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let f = self.trunk(g, x)?;
        self.critic_head(g, f)
    }

    pub fn classify<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let f = self.trunk(g, x)?;
        self.classifier_head(g, f)
    }

    /// Scores and logits from one trunk evaluation.
    pub fn critic_and_logits<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<(Var, Var)> {
        let f = self.trunk(g, x)?;
        Ok((self.critic_head(g, f)?, self.classifier_head(g, f)?))
    }
}

impl<S: Scalar> Critic<S> for BoundDiscriminator {
    fn score(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        self.critic(g, x)
    }
}

/// Leaf for a sample batch given as `[B, dim]` or `[B, 1, H, W]`.
pub(crate) fn input_leaf<S: Scalar>(g: &mut Graph<S>, x: &Tensor<S>, dim: usize) -> Result<Var> {
    let b = x.shape()[0];
    let got = x.len() / b;
    if got != dim {
        return Err(Error::FeatureMismatch {
            what: "discriminator input",
            expected: dim,
            got,
        });
    }
    let v = g.try_leaf(x)?;
    if x.shape().len() == 2 {
        Ok(v)
    } else {
        Ok(g.reshape(v, &[b, dim])?)
    }
}
