use crate::error::{Error, Result};
use crate::models::{gaussian_init, one_hot, Arch, Mode, OutputKind, NORM_EPS, RUNNING_MOMENTUM};
use crate::numerics::{Graph, Rng, Tensor, Var, LEAKY_SLOPE};
use crate::scalar::Scalar;

/// Per-category affine rows of one conditionally normalized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CbnBank<S> {
    /// `[M, units]`
    pub gamma: Tensor<S>,
    /// `[M, units]`
    pub beta: Tensor<S>,
    /// `[units]`
    pub running_mean: Tensor<S>,
    /// `[units]`, strictly positive.
    pub running_var: Tensor<S>,
    pub momentum: f64,
}

impl<S: Scalar> CbnBank<S> {
    pub fn new(categories: usize, units: usize) -> Self {
        Self {
            gamma: Tensor::full(&[categories, units], S::one()),
            beta: Tensor::zeros(&[categories, units]),
            running_mean: Tensor::zeros(&[units]),
            running_var: Tensor::full(&[units], S::one()),
            momentum: RUNNING_MOMENTUM,
        }
    }

    pub fn units(&self) -> usize {
        self.running_mean.len()
    }

    /// Exponential moving average towards the batch moments. `var` is the
    /// biased batch variance; it is rescaled to the unbiased estimate.
    pub fn update_running(&mut self, mean: &[S], var: &[S], batch: usize) {
        let m = S::lit(self.momentum);
        let keep = S::one() - m;
        let unbias = if batch > 1 {
            S::lit(batch as f64 / (batch as f64 - 1.0))
        } else {
            S::one()
        };
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = m * *r + keep * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = m * *r + keep * b * unbias;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<S> {
    /// `[latent, h1]`, no bias (the normalization removes it).
    pub fc1_w: Tensor<S>,
    pub cbn1: CbnBank<S>,
    /// `[h1, h2]`
    pub fc2_w: Tensor<S>,
    pub cbn2: CbnBank<S>,
    /// `[h2, dim]`
    pub out_w: Tensor<S>,
    /// `[dim]`
    pub out_b: Tensor<S>,
}

impl<S: Scalar> GeneratorParams<S> {
    pub const TRAINABLE: &'static [&'static str] = &[
        "g.fc1.w",
        "g.cbn1.gamma",
        "g.cbn1.beta",
        "g.fc2.w",
        "g.cbn2.gamma",
        "g.cbn2.beta",
        "g.out.w",
        "g.out.b",
    ];

    pub fn init(arch: &Arch, rng: &mut Rng) -> Self {
        let [h1, h2] = arch.gen_hidden;
        let dim = arch.sample_dim();
        Self {
            fc1_w: gaussian_init(rng, &[arch.latent_dim, h1]),
            cbn1: CbnBank::new(arch.categories, h1),
            fc2_w: gaussian_init(rng, &[h1, h2]),
            cbn2: CbnBank::new(arch.categories, h2),
            out_w: gaussian_init(rng, &[h2, dim]),
            out_b: Tensor::zeros(&[dim]),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![
            ("g.fc1.w", &self.fc1_w),
            ("g.cbn1.gamma", &self.cbn1.gamma),
            ("g.cbn1.beta", &self.cbn1.beta),
            ("g.cbn1.running_mean", &self.cbn1.running_mean),
            ("g.cbn1.running_var", &self.cbn1.running_var),
            ("g.fc2.w", &self.fc2_w),
            ("g.cbn2.gamma", &self.cbn2.gamma),
            ("g.cbn2.beta", &self.cbn2.beta),
            ("g.cbn2.running_mean", &self.cbn2.running_mean),
            ("g.cbn2.running_var", &self.cbn2.running_var),
            ("g.out.w", &self.out_w),
            ("g.out.b", &self.out_b),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        vec![
            ("g.fc1.w", &mut self.fc1_w),
            ("g.cbn1.gamma", &mut self.cbn1.gamma),
            ("g.cbn1.beta", &mut self.cbn1.beta),
            ("g.cbn1.running_mean", &mut self.cbn1.running_mean),
            ("g.cbn1.running_var", &mut self.cbn1.running_var),
            ("g.fc2.w", &mut self.fc2_w),
            ("g.cbn2.gamma", &mut self.cbn2.gamma),
            ("g.cbn2.beta", &mut self.cbn2.beta),
            ("g.cbn2.running_mean", &mut self.cbn2.running_mean),
            ("g.cbn2.running_var", &mut self.cbn2.running_var),
            ("g.out.w", &mut self.out_w),
            ("g.out.b", &mut self.out_b),
        ]
    }

    /// Trainable tensors in [`Self::TRAINABLE`] order.
    pub fn trainable(&self) -> Vec<&Tensor<S>> {
        vec![
            &self.fc1_w,
            &self.cbn1.gamma,
            &self.cbn1.beta,
            &self.fc2_w,
            &self.cbn2.gamma,
            &self.cbn2.beta,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.fc1_w,
            &mut self.cbn1.gamma,
            &mut self.cbn1.beta,
            &mut self.fc2_w,
            &mut self.cbn2.gamma,
            &mut self.cbn2.beta,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    /// Registers the trainable tensors as leaves of `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph<S>, arch: &Arch) -> BoundGenerator<'a, S> {
        let vars = self.trainable().into_iter().map(|t| g.leaf(t)).collect();
        BoundGenerator {
            params: self,
            arch: *arch,
            vars,
        }
    }

    /// Uses existing leaves, in [`Self::TRAINABLE`] order, as the trainable
    /// tensors. Running statistics still come from `self`.
    pub fn bind_vars<'a>(&'a self, arch: &Arch, vars: Vec<Var>) -> BoundGenerator<'a, S> {
        assert_eq!(
            vars.len(),
            Self::TRAINABLE.len(),
            "one leaf per trainable tensor"
        );
        BoundGenerator {
            params: self,
            arch: *arch,
            vars,
        }
    }

    /// Applies the batch moments reported by a train-mode forward pass.
    pub fn update_running_stats(&mut self, out: &GeneratorOutput<S>) {
        if let Some([(m1, v1), (m2, v2)]) = &out.batch_stats {
            self.cbn1.update_running(m1.data(), v1.data(), out.batch);
            self.cbn2.update_running(m2.data(), v2.data(), out.batch);
        }
    }
}

/// Result of [`BoundGenerator::forward`].
#[derive(Clone, Debug)]
pub struct GeneratorOutput<S> {
    /// `[B, dim]`
    pub samples: Var,
    pub batch: usize,
    /// Batch mean and biased variance of each normalized layer (train mode only).
    pub batch_stats: Option<[(Tensor<S>, Tensor<S>); 2]>,
}

/// Generator parameters registered in a graph.
pub struct BoundGenerator<'a, S> {
    params: &'a GeneratorParams<S>,
    arch: Arch,
    vars: Vec<Var>,
}

impl<'a, S: Scalar> BoundGenerator<'a, S> {
    /// Trainable leaves in [`GeneratorParams::TRAINABLE`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `z`: `[B, latent]`; `categories`: 1-based, one per row.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        z: Var,
        categories: &[usize],
        mode: Mode,
    ) -> Result<GeneratorOutput<S>> {
        let b = categories.len();
        if b == 0 {
            return Err(Error::EmptyBatch { what: "generator" });
        }
        let zshape = g.shape(z).to_vec();
        if zshape.len() != 2 || zshape[0] != b || zshape[1] != self.arch.latent_dim {
            return Err(Error::FeatureMismatch {
                what: "generator latent",
                expected: self.arch.latent_dim,
                got: zshape.last().copied().unwrap_or(0),
            });
        }
        let onehot = g.try_leaf(&one_hot(categories, self.arch.categories)?)?;
        let slope = S::lit(LEAKY_SLOPE);
        let v = &self.vars;

        let h = g.matmul(z, v[0])?;
        let (h, s1) = self.cbn(g, h, onehot, v[1], v[2], &self.params.cbn1, mode)?;
        let h = g.leaky_relu(h, slope)?;
        let h = g.matmul(h, v[3])?;
        let (h, s2) = self.cbn(g, h, onehot, v[4], v[5], &self.params.cbn2, mode)?;
        let h = g.leaky_relu(h, slope)?;
        let mut out = g.linear(h, v[6], Some(v[7]))?;
        if let OutputKind::Image { .. } = self.arch.output {
            out = g.tanh(out)?;
        }
        let batch_stats = match (s1, s2) {
            (Some(a), Some(b)) => Some([a, b]),
            _ => None,
        };
        Ok(GeneratorOutput {
            samples: out,
            batch: b,
            batch_stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn cbn(
        &self,
        g: &mut Graph<S>,
        h: Var,
        onehot: Var,
        gamma: Var,
        beta: Var,
        bank: &CbnBank<S>,
        mode: Mode,
    ) -> Result<(Var, Option<(Tensor<S>, Tensor<S>)>)> {
        let n = g.shape(h)[0];
        let eps = S::lit(NORM_EPS);
        let (centered, inv_std, stats) = match mode {
            Mode::Train => {
                let (mean, var) = g.batch_moments(h)?;
                let stats = (g.tensor(mean), g.tensor(var));
                let mb = g.broadcast_rows(mean, n)?;
                let centered = g.sub(h, mb)?;
                let sd = g.add_scalar(var, eps)?;
                let sd = g.sqrt(sd)?;
                let inv = g.recip(sd)?;
                (centered, inv, Some(stats))
            }
            Mode::Eval => {
                let mean = g.try_leaf(&bank.running_mean)?;
                let inv = g.try_leaf(&bank.running_var.map(|v| S::one() / (v + eps).sqrt()))?;
                let mb = g.broadcast_rows(mean, n)?;
                (g.sub(h, mb)?, inv, None)
            }
        };
        let ib = g.broadcast_rows(inv_std, n)?;
        let normed = g.mul(centered, ib)?;
        let gsel = g.matmul(onehot, gamma)?;
        let bsel = g.matmul(onehot, beta)?;
        let scaled = g.mul(normed, gsel)?;
        Ok((g.add(scaled, bsel)?, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelParams;
    use crate::numerics::{sample_gaussian, Stream};

    fn arch() -> Arch {
        Arch {
            latent_dim: 5,
            gen_hidden: [8, 6],
            output: OutputKind::Image {
                height: 2,
                width: 3,
            },
            disc_hidden: [6, 4],
            categories: 4,
        }
    }

    fn params() -> ModelParams<f64> {
        ModelParams::init(arch(), &mut Rng::derive(11, Stream::Init, 0))
    }

    #[test]
    fn unit_banks_make_output_category_independent() {
        let p = params();
        let z = sample_gaussian(&mut Rng::new(1), &[1, 5]);
        let z4 = Tensor::concat_rows(&[&z, &z, &z, &z]).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let out = p.generate(&z4, &[1, 2, 3, 4], mode).unwrap();
            for r in 1..4 {
                assert_eq!(out.row(0), out.row(r));
            }
        }
    }

    #[test]
    fn output_in_tanh_range() {
        let mut p = params();
        // Large weights push the tanh into saturation.
        for w in p.generator.out_w.data_mut() {
            *w *= 500.0;
        }
        let mut rng = Rng::new(2);
        let z = sample_gaussian(&mut rng, &[1000, 5]);
        let cats: Vec<usize> = (0..1000).map(|i| i % 4 + 1).collect();
        let out = p.generate_images(&z, &cats, Mode::Train).unwrap();
        assert_eq!(out.shape(), &[1000, 1, 2, 3]);
        assert!(out.max_abs() <= 1.0);
        assert!(out.max_abs() > 0.99);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let p = params();
        let z = sample_gaussian(&mut Rng::new(3), &[3, 5]);
        let a = p.generate(&z, &[1, 2, 3], Mode::Eval).unwrap();
        let b = p.generate(&z, &[1, 2, 3], Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_mode_is_per_sample() {
        let p = params();
        let z = sample_gaussian(&mut Rng::new(4), &[3, 5]);
        let all = p.generate(&z, &[1, 2, 3], Mode::Eval).unwrap();
        let one = p.generate(&z.select_rows(&[1]), &[2], Mode::Eval).unwrap();
        assert_eq!(all.row(1), one.row(0));
    }

    #[test]
    fn perturbing_a_bank_row_changes_only_that_category() {
        let p = params();
        let mut q = p.clone();
        let u = q.generator.cbn2.units();
        q.generator.cbn2.gamma.data_mut()[2 * u] += 0.3;
        q.generator.cbn1.beta.data_mut()[2 * 8 + 1] -= 0.2;
        let z = sample_gaussian(&mut Rng::new(5), &[8, 5]);
        let cats = [1, 2, 3, 4, 3, 2, 1, 4];
        let a = p.generate(&z, &cats, Mode::Eval).unwrap();
        let b = q.generate(&z, &cats, Mode::Eval).unwrap();
        for (i, &c) in cats.iter().enumerate() {
            if c == 3 {
                assert_ne!(a.row(i), b.row(i));
            } else {
                assert_eq!(a.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = params();
        let z = sample_gaussian(&mut Rng::new(6), &[2, 5]);
        assert!(matches!(
            p.generate(&z, &[1, 5], Mode::Eval),
            Err(Error::CategoryOutOfRange { category: 5, .. })
        ));
        assert!(matches!(
            p.generate(&z, &[], Mode::Eval),
            Err(Error::EmptyBatch { .. })
        ));
        let z3 = sample_gaussian(&mut Rng::new(6), &[2, 3]);
        assert!(p.generate(&z3, &[1, 2], Mode::Eval).is_err());
    }

    #[test]
    fn running_stats_track_batch_moments() {
        let mut p = params();
        let z = sample_gaussian(&mut Rng::new(7), &[16, 5]);
        let cats = [1usize; 16];
        let mut g = Graph::new();
        let gen = p.generator.bind(&mut g, &p.arch);
        let zv = g.leaf(&z);
        let out = gen.forward(&mut g, zv, &cats, Mode::Train).unwrap();
        let [(m1, v1), _] = out.batch_stats.clone().unwrap();
        p.generator.update_running_stats(&out);
        let rm = p.generator.cbn1.running_mean.data();
        let rv = p.generator.cbn1.running_var.data();
        for i in 0..rm.len() {
            assert!((rm[i] - 0.1 * m1.data()[i]).abs() < 1e-15);
            let expect = 0.9 + 0.1 * v1.data()[i] * 16.0 / 15.0;
            assert!((rv[i] - expect).abs() < 1e-15);
            assert!(rv[i] > 0.0);
        }
    }

    #[test]
    fn points_mode_is_linear_output() {
        let arch = Arch::points2d(3);
        let mut p = ModelParams::<f64>::init(arch, &mut Rng::new(8));
        p.generator.out_b.data_mut()[0] = 7.0;
        let z = sample_gaussian(&mut Rng::new(9), &[4, 32]);
        let out = p.generate(&z, &[1, 2, 3, 1], Mode::Eval).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
        assert!(out.max_abs() > 6.0);
    }
}
