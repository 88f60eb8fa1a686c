//! Training objectives as graph builders.
//!
//! Each function appends the nodes of one loss term to a graph and returns
//! the scalar node, so terms can be weighted and summed by the trainer and
//! differentiated (twice, for the gradient penalty).

use crate::error::{Error, Result};
use crate::models::{one_hot, BoundGenerator, Critic, Mode, ModelParams};
use crate::numerics::{sample_category, sample_gaussian, Graph, Rng, Tensor, Var};
use crate::scalar::Scalar;

/// Loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub gp: f64,
    pub ewc: f64,
    pub ra: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            gp: 10.0,
            ewc: 1e9,
            ra: 1e-3,
        }
    }
}

/// Values of every loss term of one iteration. Terms a strategy does not
/// use stay 0. `ewc` already contains its weight; the others are unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub gan_g: f64,
    pub cls_g: f64,
    pub gan_d: f64,
    pub gp: f64,
    pub cls_d: f64,
    pub ewc: f64,
    pub ra: f64,
}

impl LossTerms {
    /// `gan_g + λ_CLS·cls_g + ewc + λ_RA·ra`.
    pub fn generator_objective(&self, w: &LossWeights) -> f64 {
        self.gan_g + w.cls * self.cls_g + self.ewc + w.ra * self.ra
    }

    /// `gan_d + λ_GP·gp + λ_CLS·cls_d`.
    pub fn discriminator_objective(&self, w: &LossWeights) -> f64 {
        self.gan_d + w.gp * self.gp + w.cls * self.cls_d
    }

    pub fn all_finite(&self) -> bool {
        [
            self.gan_g, self.cls_g, self.gan_d, self.gp, self.cls_d, self.ewc, self.ra,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `−mean(scores)`.
pub fn generator_gan_loss<S: Scalar>(g: &mut Graph<S>, scores: Var) -> Result<Var> {
    let m = g.mean_all(scores)?;
    Ok(g.neg(m)?)
}

/// Mean cross entropy of `logits: [B, M]` against 1-based categories.
pub fn cross_entropy<S: Scalar>(
    g: &mut Graph<S>,
    logits: Var,
    categories: &[usize],
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != categories.len() {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy: logits {shape:?} for {} labels",
            categories.len()
        )));
    }
    let targets = g.try_leaf(&one_hot(categories, shape[1])?)?;
    let ce = g.softmax_cross_entropy(logits, targets)?;
    Ok(g.mean_all(ce)?)
}

/// `−mean(real) + mean(fake)`.
pub fn critic_gap<S: Scalar>(g: &mut Graph<S>, real_scores: Var, fake_scores: Var) -> Result<Var> {
    let r = g.mean_all(real_scores)?;
    let f = g.mean_all(fake_scores)?;
    Ok(g.sub(f, r)?)
}

/// One `ε ~ U(0, 1)` per sample.
pub fn sample_interpolation_weights<S: Scalar>(rng: &mut Rng, n: usize) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.uniform01())).collect()
}

/// Rows `ε_i·real_i + (1 − ε_i)·fake_i`.
pub fn interpolate<S: Scalar>(real: &Tensor<S>, fake: &Tensor<S>, eps: &[S]) -> Result<Tensor<S>> {
    if real.shape() != fake.shape() {
        return Err(Error::Graph(crate::numerics::GraphError::ShapeMismatch {
            op: "interpolate",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        }));
    }
    let n = real.rows();
    if eps.len() != n {
        return Err(Error::InvalidArgument(format!(
            "interpolate: {} weights for {n} samples",
            eps.len()
        )));
    }
    let w = real.row_len();
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = eps[i / w];
            e * r + (S::one() - e) * f
        })
        .collect();
    Ok(Tensor::new(real.shape().to_vec(), data)?)
}

/// `mean((‖∇_x̂ D(x̂)‖ − 1)²)` at `x̂ = interpolate(real, fake, eps)`. The
/// result stays differentiable with respect to the critic's parameters.
pub fn gradient_penalty<S: Scalar, C: Critic<S>>(
    g: &mut Graph<S>,
    critic: &C,
    real: &Tensor<S>,
    fake: &Tensor<S>,
    eps: &[S],
) -> Result<Var> {
    let xhat = interpolate(real, fake, eps)?;
    let n = xhat.rows();
    let xhat = xhat.reshaped(vec![n, real.len() / n])?;
    let xv = g.try_leaf(&xhat)?;
    let scores = critic.score(g, xv)?;
    let total = g.sum_all(scores)?;
    let grad = g.grad(total, &[xv])?[0];
    let norm = g.row_norm(grad)?;
    let dev = g.add_scalar(norm, -S::one())?;
    let sq = g.square(dev)?;
    Ok(g.mean_all(sq)?)
}

/// Critic loss terms for fixed real and generated batches.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    /// `−E D(x) + E D(x̃)`
    pub gan: Var,
    pub gp: Var,
    /// `gan + λ_GP·gp`
    pub total: Var,
}

/// Wasserstein terms plus weighted gradient penalty. `fake` enters as a
/// constant, so nothing flows back into the generator.
pub fn discriminator_gan_loss<S: Scalar, C: Critic<S>>(
    g: &mut Graph<S>,
    critic: &C,
    real: &Tensor<S>,
    fake: &Tensor<S>,
    eps: &[S],
    lambda_gp: f64,
) -> Result<DiscriminatorLoss> {
    let n = real.rows();
    if n == 0 || fake.rows() != n {
        return Err(Error::EmptyBatch {
            what: "discriminator",
        });
    }
    let both = Tensor::concat_rows(&[real, fake])?;
    let dim = real.len() / n;
    let both = both.reshaped(vec![2 * n, dim])?;
    let xv = g.try_leaf(&both)?;
    let scores = critic.score(g, xv)?;
    let scores2 = g.reshape(scores, &[2 * n, 1])?;
    let rs = g.slice_rows(scores2, 0, n)?;
    let fs = g.slice_rows(scores2, n, n)?;
    let gan = critic_gap(g, rs, fs)?;
    let gp = gradient_penalty(g, critic, real, fake, eps)?;
    let weighted = g.scale(gp, S::lit(lambda_gp))?;
    let total = g.add(gan, weighted)?;
    Ok(DiscriminatorLoss { gan, gp, total })
}

/// Diagonal Fisher information of the generator and the parameters it was
/// measured at. Tensors follow the generator's trainable order.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherState<S> {
    pub fisher: Vec<Tensor<S>>,
    pub anchor: Vec<Tensor<S>>,
    pub samples: usize,
}

impl<S: Scalar> FisherState<S> {
    pub fn max(&self) -> S {
        self.fisher
            .iter()
            .map(|t| t.max_abs())
            .fold(S::zero(), S::max)
    }
}

/// Mean over `n_samples` single draws (`z ~ N(0, I)`, `c ~ U{1, t−1}`) of
/// the squared gradient of `−D(G(z, c))` with respect to each generator
/// parameter. The generator runs in eval mode so each draw is a genuine
/// single-sample evaluation.
pub fn estimate_fisher<S: Scalar>(
    params: &ModelParams<S>,
    t: usize,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<FisherState<S>> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "Fisher information needs a previous task, got t = {t}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "Fisher sample count must be positive".into(),
        ));
    }
    let latent = params.arch.latent_dim;
    let mut acc: Vec<Tensor<S>> = params
        .generator
        .trainable()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();
    for _ in 0..n_samples {
        let c = sample_category(rng, 1, t - 1)?;
        let z = sample_gaussian(rng, &[1, latent]);
        let mut g = Graph::new();
        let gen = params.generator.bind(&mut g, &params.arch);
        let d = params.discriminator.bind(&mut g);
        let zv = g.try_leaf(&z)?;
        let out = gen.forward(&mut g, zv, &[c], Mode::Eval)?;
        let score = d.critic(&mut g, out.samples)?;
        let loss = generator_gan_loss(&mut g, score)?;
        let grads = g.grad(loss, gen.vars())?;
        for (a, gv) in acc.iter_mut().zip(grads) {
            for (x, &d) in a.data_mut().iter_mut().zip(g.value(gv)) {
                *x = *x + d * d;
            }
        }
    }
    let inv = S::one() / S::lit(n_samples as f64);
    for a in &mut acc {
        for x in a.data_mut() {
            *x = *x * inv;
        }
    }
    Ok(FisherState {
        fisher: acc,
        anchor: params.generator.trainable().into_iter().cloned().collect(),
        samples: n_samples,
    })
}

/// `Σ_i λ/2 · F_i (θ_i − θ*_i)²` over the generator leaves `vars`.
pub fn ewc_penalty<S: Scalar>(
    g: &mut Graph<S>,
    vars: &[Var],
    fisher: &FisherState<S>,
    lambda: f64,
) -> Result<Var> {
    if vars.len() != fisher.fisher.len() {
        return Err(Error::InvalidArgument(format!(
            "ewc_penalty: {} parameters for {} Fisher tensors",
            vars.len(),
            fisher.fisher.len()
        )));
    }
    let mut total: Option<Var> = None;
    for ((&v, f), a) in vars.iter().zip(&fisher.fisher).zip(&fisher.anchor) {
        let av = g.try_leaf(a)?;
        let fv = g.try_leaf(f)?;
        let diff = g.sub(v, av)?;
        let sq = g.square(diff)?;
        let weighted = g.mul(sq, fv)?;
        let s = g.sum_all(weighted)?;
        total = Some(match total {
            Some(t) => g.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or(Error::EmptyBatch {
        what: "ewc_penalty",
    })?;
    Ok(g.scale(total, S::lit(lambda / 2.0))?)
}

/// Mean squared difference between the live generator's eval-mode output
/// and the snapshot's, for the same `(z, c)`. Every category must belong to
/// a previous task (`1..t`).
pub fn replay_alignment_loss<S: Scalar>(
    g: &mut Graph<S>,
    live: &BoundGenerator<'_, S>,
    snapshot: &ModelParams<S>,
    z: &Tensor<S>,
    categories: &[usize],
    t: usize,
) -> Result<Var> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "replay alignment needs a previous task, got t = {t}"
        )));
    }
    if let Some(&c) = categories.iter().find(|&&c| c == 0 || c >= t) {
        return Err(Error::CategoryOutOfRange {
            category: c,
            categories: t - 1,
        });
    }
    let target = snapshot.generate(z, categories, Mode::Eval)?;
    let zv = g.try_leaf(z)?;
    let out = live.forward(g, zv, categories, Mode::Eval)?;
    mse_to_constant(g, out.samples, &target)
}

/// `mean((x − target)²)` with `target` constant.
pub fn mse_to_constant<S: Scalar>(g: &mut Graph<S>, x: Var, target: &Tensor<S>) -> Result<Var> {
    let tv = g.try_leaf(target)?;
    let d = g.sub(x, tv)?;
    let sq = g.square(d)?;
    Ok(g.mean_all(sq)?)
}
