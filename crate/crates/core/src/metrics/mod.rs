//! Evaluation of generators: proxy accuracy, reverse accuracy and Fréchet
//! distance of embedding statistics.

mod classifier;
mod linalg;

pub use classifier::{ClassifierConfig, Mlp};
pub use linalg::{
    frechet_distance, matmul, matrix_sqrt_psd, symmetric_eigen, symmetrize, GaussianStats,
    NEG_EIG_TOL, SYMMETRY_TOL,
};

use crate::data::{LabeledSet, Split, TaskSchedule};
use crate::error::{Error, Result};
use crate::models::{Mode, ModelParams, OutputKind};
use crate::numerics::{sample_gaussian, Rng, Tensor};
use crate::scalar::Scalar;

/// Feature space for Fréchet distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Embedding {
    /// Penultimate layer of the proxy classifier.
    Penultimate,
    /// Raw samples (2-D points).
    Identity,
}

/// Classifier trained on real data, used to judge generated samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyClassifier<S> {
    pub mlp: Mlp<S>,
    /// Accuracy on the real test splits.
    pub test_accuracy: f64,
    pub embedding: Embedding,
}

impl<S: Scalar> ProxyClassifier<S> {
    pub fn embed(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self.embedding {
            Embedding::Penultimate => self.mlp.embed(x),
            Embedding::Identity => Ok(x.clone()),
        }
    }

    pub fn categories(&self) -> usize {
        self.mlp.classes()
    }
}

/// Trains the proxy on the union of all real training splits and checks
/// its test accuracy against `cfg.min_accuracy`.
pub fn train_proxy<S: Scalar>(
    schedule: &TaskSchedule<S>,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<ProxyClassifier<S>> {
    let train = schedule.all_train()?;
    let test = schedule.all_test()?;
    let mlp = Mlp::fit(&train, schedule.categories(), cfg, seed, 0)?;
    let test_accuracy = mlp.accuracy(&test)?;
    if test_accuracy < cfg.min_accuracy {
        return Err(Error::ProxyTooWeak {
            accuracy: test_accuracy,
            required: cfg.min_accuracy,
        });
    }
    let embedding = match schedule.output {
        OutputKind::Image { .. } => Embedding::Penultimate,
        OutputKind::Points2D => Embedding::Identity,
    };
    Ok(ProxyClassifier {
        mlp,
        test_accuracy,
        embedding,
    })
}

/// Accuracy per category and its unweighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub per_category: Vec<(usize, f64)>,
    pub mean: f64,
}

/// `n` eval-mode samples for each listed category, category by category,
/// with `z` drawn from `rng`.
pub fn generate_per_category<S: Scalar>(
    params: &ModelParams<S>,
    categories: &[usize],
    n: usize,
    rng: &mut Rng,
) -> Result<LabeledSet<S>> {
    if categories.is_empty() || n == 0 {
        return Err(Error::EmptyBatch {
            what: "evaluation samples",
        });
    }
    let mut parts = Vec::with_capacity(categories.len());
    for &c in categories {
        params.arch.check_category(c)?;
        let z = sample_gaussian(rng, &[n, params.arch.latent_dim]);
        parts.push(params.generate(&z, &vec![c; n], Mode::Eval)?);
    }
    let refs: Vec<&Tensor<S>> = parts.iter().collect();
    let labels = categories
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, n))
        .collect();
    LabeledSet::new(Tensor::concat_rows(&refs)?, labels, Split::Test)
}

/// Fraction of samples the proxy assigns to their label, per category.
pub fn accuracy_of_samples<S: Scalar>(
    proxy: &ProxyClassifier<S>,
    set: &LabeledSet<S>,
) -> Result<AccuracyReport> {
    let pred = proxy.mlp.predict(&set.samples)?;
    let mut cats: Vec<usize> = set.labels.clone();
    cats.sort_unstable();
    cats.dedup();
    let per_category: Vec<(usize, f64)> = cats
        .iter()
        .map(|&c| {
            let (mut hit, mut total) = (0usize, 0usize);
            for (p, &l) in pred.iter().zip(&set.labels) {
                if l == c {
                    total += 1;
                    hit += (*p == c) as usize;
                }
            }
            (c, hit as f64 / total as f64)
        })
        .collect();
    if per_category.is_empty() {
        return Err(Error::EmptyBatch { what: "accuracy" });
    }
    let mean = per_category.iter().map(|(_, a)| a).sum::<f64>() / per_category.len() as f64;
    Ok(AccuracyReport { per_category, mean })
}

/// Proxy accuracy of `n` generated samples per category.
pub fn accuracy<S: Scalar>(
    params: &ModelParams<S>,
    categories: &[usize],
    proxy: &ProxyClassifier<S>,
    n: usize,
    rng: &mut Rng,
) -> Result<AccuracyReport> {
    let set = generate_per_category(params, categories, n, rng)?;
    accuracy_of_samples(proxy, &set)
}

/// Accuracy on `real_test` of a fresh classifier trained only on `generated`.
pub fn reverse_accuracy_from<S: Scalar>(
    generated: &LabeledSet<S>,
    real_test: &LabeledSet<S>,
    classes: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<f64> {
    let mlp = Mlp::fit(generated, classes, cfg, seed, 1)?;
    mlp.accuracy(real_test)
}

/// Reverse accuracy over the listed categories: `n` generated samples per
/// category train a classifier that is scored on the matching real test data.
pub fn reverse_accuracy<S: Scalar>(
    params: &ModelParams<S>,
    schedule: &TaskSchedule<S>,
    categories: &[usize],
    n: usize,
    cfg: &ClassifierConfig,
    seed: u64,
    rng: &mut Rng,
) -> Result<f64> {
    let generated = generate_per_category(params, categories, n, rng)?;
    let tests = categories
        .iter()
        .map(|&c| schedule.task(c).map(|t| &t.test))
        .collect::<Result<Vec<_>>>()?;
    let real = LabeledSet::concat(&tests, Split::Test)?;
    reverse_accuracy_from(&generated, &real, params.arch.categories, cfg, seed)
}

/// Mean and covariance of the proxy embedding of `x`.
pub fn embedding_stats<S: Scalar>(
    proxy: &ProxyClassifier<S>,
    x: &Tensor<S>,
) -> Result<GaussianStats> {
    let e = proxy.embed(x)?;
    let data: Vec<f64> = e.data().iter().map(|v| v.to_f64_lossy()).collect();
    GaussianStats::from_rows(&data, e.row_len())
}

/// Per-category accuracy and Fréchet distance of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: AccuracyReport,
    /// `(category, FD to the real training split)`
    pub fd: Vec<(usize, f64)>,
}

/// Proxy plus cached real-data statistics for repeated evaluation.
#[derive(Clone, Debug)]
pub struct Evaluator<S> {
    pub proxy: ProxyClassifier<S>,
    pub real_stats: Vec<GaussianStats>,
    pub samples_per_category: usize,
}

impl<S: Scalar> Evaluator<S> {
    pub fn new(
        proxy: ProxyClassifier<S>,
        schedule: &TaskSchedule<S>,
        samples_per_category: usize,
    ) -> Result<Self> {
        let real_stats = schedule
            .tasks
            .iter()
            .map(|t| embedding_stats(&proxy, &t.train.samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            proxy,
            real_stats,
            samples_per_category,
        })
    }

    pub fn evaluate(
        &self,
        params: &ModelParams<S>,
        categories: &[usize],
        rng: &mut Rng,
    ) -> Result<EvalReport> {
        let set = generate_per_category(params, categories, self.samples_per_category, rng)?;
        if !set.samples.all_finite() {
            return Err(Error::Numerical("generated samples are not finite".into()));
        }
        let accuracy = accuracy_of_samples(&self.proxy, &set)?;
        let n = self.samples_per_category;
        let fd = categories
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let idx: Vec<usize> = (i * n..(i + 1) * n).collect();
                let stats = embedding_stats(&self.proxy, &set.samples.select_rows(&idx))?;
                let real = self
                    .real_stats
                    .get(c - 1)
                    .ok_or(Error::CategoryOutOfRange {
                        category: c,
                        categories: self.real_stats.len(),
                    })?;
                Ok((c, frechet_distance(&stats, real)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { accuracy, fd })
    }
}
