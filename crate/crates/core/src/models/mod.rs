//! Conditional generator and the shared-trunk critic/classifier.
//!
//! The generator is conditioned through conditional batch normalization:
//! each normalized layer owns one scale/shift row per category and picks a
//! row by the sample's category. The critic and the auxiliary classifier
//! share every layer but their final linear heads.

mod discriminator;
mod generator;

use std::ops::Deref;

pub use discriminator::{BoundDiscriminator, Critic, DiscriminatorParams};
pub use generator::{BoundGenerator, CbnBank, GeneratorOutput, GeneratorParams};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor};
use crate::scalar::Scalar;

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Epsilon added to the variance in every normalization.
pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum: `running = m · running + (1 - m) · batch`.
pub const RUNNING_MOMENTUM: f64 = 0.9;

/// What a generator sample is.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputKind {
    /// Grayscale image in `[-1, 1]` (tanh output).
    Image { height: usize, width: usize },
    /// Point in the plane (linear output).
    Points2D,
}

impl OutputKind {
    pub fn dim(self) -> usize {
        match self {
            OutputKind::Image { height, width } => height * width,
            OutputKind::Points2D => 2,
        }
    }
}

/// Layer sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arch {
    pub latent_dim: usize,
    pub gen_hidden: [usize; 2],
    pub output: OutputKind,
    pub disc_hidden: [usize; 2],
    pub categories: usize,
}

impl Arch {
    /// Desk-scale image architecture: latent 32, generator 128/256,
    /// critic trunk 256/128.
    pub fn image(categories: usize, height: usize, width: usize) -> Self {
        Self {
            latent_dim: 32,
            gen_hidden: [128, 256],
            output: OutputKind::Image { height, width },
            disc_hidden: [256, 128],
            categories,
        }
    }

    /// Same trunk sizes with a 2-D point output.
    pub fn points2d(categories: usize) -> Self {
        Self {
            output: OutputKind::Points2D,
            ..Self::image(categories, 1, 1)
        }
    }

    pub fn sample_dim(&self) -> usize {
        self.output.dim()
    }

    pub fn check_category(&self, c: usize) -> Result<()> {
        if c == 0 || c > self.categories {
            return Err(Error::CategoryOutOfRange {
                category: c,
                categories: self.categories,
            });
        }
        Ok(())
    }
}

/// Normalization mode of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with the batch's own moments (reported for running-stat updates).
    Train,
    /// Normalize with the running statistics.
    Eval,
}

/// Parameter group of [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Generator,
    /// Shared trunk plus critic head.
    Discriminator,
    /// Shared trunk plus classifier head.
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub arch: Arch,
    pub generator: GeneratorParams<S>,
    pub discriminator: DiscriminatorParams<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Gaussian(0, 0.02) weights, zero biases, `γ = 1`, `β = 0`, running
    /// mean 0 and variance 1.
    pub fn init(arch: Arch, rng: &mut Rng) -> Self {
        Self {
            arch,
            generator: GeneratorParams::init(&arch, rng),
            discriminator: DiscriminatorParams::init(&arch, rng),
        }
    }

    /// Deep copy that cannot be mutated afterwards.
    pub fn snapshot(&self) -> Frozen<ModelParams<S>> {
        Frozen(self.clone())
    }

    /// Every tensor (trainable and running statistics) under a stable name.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        let mut out = self.generator.named();
        out.extend(self.discriminator.named());
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        let mut out = self.generator.named_mut();
        out.extend(self.discriminator.named_mut());
        out
    }

    /// Names of the trainable tensors of a group. The shared trunk appears
    /// in both the discriminator and the classifier group.
    pub fn group_names(group: Group) -> &'static [&'static str] {
        match group {
            Group::Generator => GeneratorParams::<S>::TRAINABLE,
            Group::Discriminator => &DiscriminatorParams::<S>::CRITIC,
            Group::Classifier => &DiscriminatorParams::<S>::CLASSIFIER,
        }
    }

    /// Generates samples `[B, dim]` without tracking gradients. In train
    /// mode the batch moments are used but running statistics are not touched.
    pub fn generate(&self, z: &Tensor<S>, categories: &[usize], mode: Mode) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let gen = self.generator.bind(&mut g, &self.arch);
        let zv = g.try_leaf(z)?;
        let out = gen.forward(&mut g, zv, categories, mode)?;
        Ok(g.tensor(out.samples))
    }

    /// Generates and reshapes image samples to `[B, 1, H, W]`.
    pub fn generate_images(
        &self,
        z: &Tensor<S>,
        categories: &[usize],
        mode: Mode,
    ) -> Result<Tensor<S>> {
        let flat = self.generate(z, categories, mode)?;
        match self.arch.output {
            OutputKind::Image { height, width } => {
                let b = flat.rows();
                Ok(flat.reshaped(vec![b, 1, height, width])?)
            }
            OutputKind::Points2D => Ok(flat),
        }
    }

    /// Critic scores `[B]`.
    pub fn critic_scores(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let d = self.discriminator.bind(&mut g);
        let xv = discriminator::input_leaf(&mut g, x, self.arch.sample_dim())?;
        let s = d.critic(&mut g, xv)?;
        Ok(g.tensor(s))
    }

    /// Classifier logits `[B, M]`.
    pub fn classifier_logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let d = self.discriminator.bind(&mut g);
        let xv = discriminator::input_leaf(&mut g, x, self.arch.sample_dim())?;
        let l = d.classify(&mut g, xv)?;
        Ok(g.tensor(l))
    }

    /// Largest elementwise difference over every named tensor.
    pub fn max_abs_diff(&self, other: &ModelParams<S>) -> S {
        self.named()
            .iter()
            .zip(other.named())
            .map(|((_, a), (_, b))| a.max_abs_diff(b))
            .fold(S::zero(), S::max)
    }
}

/// Read-only wrapper around a snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Frozen<T>(T);

impl<T> Deref for Frozen<T> {
    type Target = T;

    fn deref(&self) -> &T {
        &self.0
    }
}

impl<S: Scalar> Frozen<ModelParams<S>> {
    /// A mutable copy, e.g. to resume training from a snapshot.
    pub fn thaw(&self) -> ModelParams<S> {
        self.0.clone()
    }
}

/// One-hot rows for 1-based categories, shape `[B, M]`.
pub fn one_hot<S: Scalar>(categories: &[usize], m: usize) -> Result<Tensor<S>> {
    if categories.is_empty() {
        return Err(Error::EmptyBatch { what: "one_hot" });
    }
    let mut data = vec![S::zero(); categories.len() * m];
    for (i, &c) in categories.iter().enumerate() {
        if c == 0 || c > m {
            return Err(Error::CategoryOutOfRange {
                category: c,
                categories: m,
            });
        }
        data[i * m + c - 1] = S::one();
    }
    Ok(Tensor::matrix(categories.len(), m, data)?)
}

pub(crate) fn gaussian_init<S: Scalar>(rng: &mut Rng, shape: &[usize]) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.normal() * INIT_STD)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive layer sizes")
}
