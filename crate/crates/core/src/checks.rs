//! Finite-difference verification of every training loss on small random
//! networks.

use crate::error::{Error, Result};
use crate::losses::{
    critic_gap, cross_entropy, discriminator_gan_loss, ewc_penalty, generator_gan_loss,
    gradient_penalty, mse_to_constant, replay_alignment_loss, sample_interpolation_weights,
    FisherState,
};
use crate::models::{Arch, BoundDiscriminator, Mode, ModelParams, OutputKind};
use crate::numerics::{
    finite_diff_check_with, sample_category, sample_gaussian, GradCheckReport, Graph, GraphError,
    Rng, Stream, Tensor, Var,
};

/// Tolerance for first-order losses.
pub const FIRST_ORDER_TOL: f64 = 1e-4;
/// Tolerance for losses that differentiate through the gradient penalty.
pub const DOUBLE_BACKPROP_TOL: f64 = 1e-3;

const BATCH: usize = 4;

/// Worst result of one loss over all instances.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Names of the checks run by [`run_gradient_checks`], in order.
pub const CHECK_NAMES: [&str; 8] = [
    "generator_gan_loss",
    "cross_entropy",
    "critic_gap",
    "gradient_penalty",
    "discriminator_gan_loss",
    "ewc_penalty",
    "replay_alignment_loss",
    "mse_to_constant",
];

fn small_arch() -> Arch {
    Arch {
        latent_dim: 3,
        gen_hidden: [5, 4],
        output: OutputKind::Image {
            height: 2,
            width: 2,
        },
        disc_hidden: [5, 4],
        categories: 3,
    }
}

fn lift(e: Error) -> GraphError {
    match e {
        Error::Graph(ge) => ge,
        other => GraphError::OutOfRange {
            op: "gradient check",
            detail: other.to_string(),
        },
    }
}

fn jitter(t: &mut Tensor<f64>, rng: &mut Rng, std: f64) {
    for x in t.data_mut() {
        *x += std * rng.normal();
    }
}

/// Parameters far enough from the 0.02-std initialization that every
/// gradient is well above the finite-difference noise floor.
fn random_params(rng: &mut Rng) -> ModelParams<f64> {
    let mut p = ModelParams::init(small_arch(), rng);
    for t in p.generator.trainable_mut() {
        jitter(t, rng, 0.5);
    }
    for t in p.discriminator.tensors_mut() {
        jitter(t, rng, 0.5);
    }
    for bank in [&mut p.generator.cbn1, &mut p.generator.cbn2] {
        jitter(&mut bank.running_mean, rng, 0.2);
        for v in bank.running_var.data_mut() {
            *v = 0.5 + rng.uniform01();
        }
    }
    p
}

struct Instance {
    params: ModelParams<f64>,
    snapshot: ModelParams<f64>,
    z: Tensor<f64>,
    cats: Vec<usize>,
    old_cats: Vec<usize>,
    real: Tensor<f64>,
    fake: Tensor<f64>,
    eps: Vec<f64>,
    fisher: FisherState<f64>,
}

impl Instance {
    fn new(seed: u64, index: u64) -> Result<Self> {
        let mut rng = Rng::derive(seed, Stream::Probe, index);
        let params = random_params(&mut rng);
        let mut snapshot = params.clone();
        for t in snapshot.generator.trainable_mut() {
            jitter(t, &mut rng, 0.1);
        }
        let arch = params.arch;
        let z = sample_gaussian(&mut rng, &[BATCH, arch.latent_dim]);
        let cats = (0..BATCH)
            .map(|_| sample_category(&mut rng, 1, arch.categories))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let old_cats = (0..BATCH)
            .map(|_| sample_category(&mut rng, 1, arch.categories - 1))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let dim = arch.sample_dim();
        let real = Tensor::matrix(
            BATCH,
            dim,
            (0..BATCH * dim)
                .map(|_| 2.0 * rng.uniform01() - 1.0)
                .collect(),
        )?;
        let fake = params.generate(
            &sample_gaussian(&mut rng, &[BATCH, arch.latent_dim]),
            &cats,
            Mode::Train,
        )?;
        let eps = sample_interpolation_weights(&mut rng, BATCH);
        let gen = params.generator.trainable();
        let fisher = FisherState {
            fisher: gen
                .iter()
                .map(|t| {
                    Tensor::new(
                        t.shape().to_vec(),
                        (0..t.len()).map(|_| rng.uniform01()).collect(),
                    )
                })
                .collect::<std::result::Result<_, _>>()?,
            anchor: gen
                .iter()
                .map(|t| {
                    let mut a = (*t).clone();
                    jitter(&mut a, &mut rng, 0.3);
                    a
                })
                .collect(),
            samples: 1,
        };
        Ok(Self {
            params,
            snapshot,
            z,
            cats,
            old_cats,
            real,
            fake,
            eps,
            fisher,
        })
    }

    fn generator_point(&self) -> Vec<Tensor<f64>> {
        self.params
            .generator
            .trainable()
            .into_iter()
            .cloned()
            .collect()
    }

    fn discriminator_point(&self, n: usize) -> Vec<Tensor<f64>> {
        self.params.discriminator.tensors()[..n]
            .iter()
            .map(|t| (*t).clone())
            .collect()
    }

    /// Binds the first `vars.len()` discriminator tensors to `vars`, the rest as constants.
    fn discriminator(&self, g: &mut Graph<f64>, vars: &[Var]) -> BoundDiscriminator {
        let all = self.params.discriminator.tensors();
        let mut bound = [vars[0]; 8];
        for (i, slot) in bound.iter_mut().enumerate() {
            *slot = if i < vars.len() {
                vars[i]
            } else {
                g.leaf(all[i])
            };
        }
        BoundDiscriminator::from_vars(bound)
    }

    fn check(&self, name: &str, fault: Option<&'static str>) -> Result<GradCheckReport> {
        let p = &self.params;
        let arch = &p.arch;
        let fd = |f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
                  point: Vec<Tensor<f64>>,
                  h,
                  tol| {
            finite_diff_check_with(|g, v| f(g, v).map_err(lift), &point, h, tol, fault)
        };
        let report = match name {
            "generator_gan_loss" => fd(
                &|g, v| {
                    let gen = p.generator.bind_vars(arch, v.to_vec());
                    let d = p.discriminator.bind(g);
                    let zv = g.try_leaf(&self.z)?;
                    let out = gen.forward(g, zv, &self.cats, Mode::Train)?;
                    let s = d.critic(g, out.samples)?;
                    generator_gan_loss(g, s)
                },
                self.generator_point(),
                1e-5,
                FIRST_ORDER_TOL,
            ),
            "cross_entropy" => fd(
                &|g, v| {
                    let d = self.discriminator(g, v);
                    let x = g.try_leaf(&self.real)?;
                    let logits = d.classify(g, x)?;
                    cross_entropy(g, logits, &self.cats)
                },
                self.discriminator_point(8),
                1e-6,
                FIRST_ORDER_TOL,
            ),
            "critic_gap" => fd(
                &|g, v| {
                    let d = self.discriminator(g, v);
                    let r = g.try_leaf(&self.real)?;
                    let f = g.try_leaf(&self.fake)?;
                    let rs = d.critic(g, r)?;
                    let fs = d.critic(g, f)?;
                    critic_gap(g, rs, fs)
                },
                self.discriminator_point(6),
                1e-4,
                FIRST_ORDER_TOL,
            ),
            "gradient_penalty" => fd(
                &|g, v| {
                    let d = self.discriminator(g, v);
                    gradient_penalty(g, &d, &self.real, &self.fake, &self.eps)
                },
                self.discriminator_point(6),
                1e-5,
                DOUBLE_BACKPROP_TOL,
            ),
            "discriminator_gan_loss" => fd(
                &|g, v| {
                    let d = self.discriminator(g, v);
                    Ok(
                        discriminator_gan_loss(g, &d, &self.real, &self.fake, &self.eps, 10.0)?
                            .total,
                    )
                },
                self.discriminator_point(6),
                1e-5,
                DOUBLE_BACKPROP_TOL,
            ),
            "ewc_penalty" => fd(
                &|g, v| ewc_penalty(g, v, &self.fisher, 1.0),
                self.generator_point(),
                1e-6,
                FIRST_ORDER_TOL,
            ),
            "replay_alignment_loss" => fd(
                &|g, v| {
                    let gen = p.generator.bind_vars(arch, v.to_vec());
                    replay_alignment_loss(
                        g,
                        &gen,
                        &self.snapshot,
                        &self.z,
                        &self.old_cats,
                        arch.categories,
                    )
                },
                self.generator_point(),
                1e-5,
                FIRST_ORDER_TOL,
            ),
            "mse_to_constant" => fd(
                &|g, v| mse_to_constant(g, v[0], &self.real),
                vec![self.fake.clone()],
                1e-6,
                FIRST_ORDER_TOL,
            ),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown gradient check {other:?}"
                )))
            }
        };
        Ok(report?)
    }
}

/// Runs every check in [`CHECK_NAMES`] on `instances` random networks.
/// `fault` corrupts the adjoint of the named op in the analytic pass.
pub fn run_gradient_checks(
    instances: usize,
    seed: u64,
    fault: Option<&'static str>,
) -> Result<Vec<CheckResult>> {
    if instances == 0 {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one instance".into(),
        ));
    }
    let cases = (0..instances as u64)
        .map(|i| Instance::new(seed, i))
        .collect::<Result<Vec<_>>>()?;
    CHECK_NAMES
        .iter()
        .map(|&name| {
            let tol = if matches!(name, "gradient_penalty" | "discriminator_gan_loss") {
                DOUBLE_BACKPROP_TOL
            } else {
                FIRST_ORDER_TOL
            };
            let mut report = GradCheckReport::empty(tol);
            for case in &cases {
                report = report.merge(&case.check(name, fault)?);
            }
            Ok(CheckResult {
                name,
                instances,
                report,
            })
        })
        .collect()
}
