use crate::data::{LabeledSet, Split, Task, TaskSchedule};
use crate::error::{Error, Result};
use crate::models::OutputKind;
use crate::numerics::{Rng, Stream, Tensor};
use crate::scalar::Scalar;

/// Isotropic Gaussian mixture for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct Gauss2DSpec {
    pub means: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub sigma: f64,
}

impl Gauss2DSpec {
    pub fn single(mean: [f64; 2], sigma: f64) -> Self {
        Self {
            means: vec![mean],
            weights: vec![1.0],
            sigma,
        }
    }

    /// Mixture mean.
    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (mu, w) in self.means.iter().zip(&self.weights) {
            m[0] += w * mu[0];
            m[1] += w * mu[1];
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if self.means.is_empty()
            || self.means.len() != self.weights.len()
            || self.weights.iter().any(|&w| w < 0.0)
            || (total - 1.0).abs() > 1e-9
            || self.sigma < 0.0
            || !self.sigma.is_finite()
        {
            return Err(Error::InvalidArgument(format!("invalid mixture {self:?}")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> [f64; 2] {
        let u = rng.uniform01();
        let mut acc = 0.0;
        let mut k = self.means.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let mu = self.means[k];
        [
            mu[0] + self.sigma * rng.normal(),
            mu[1] + self.sigma * rng.normal(),
        ]
    }
}

/// One task per mixture; category `c` uses `specs[c − 1]`.
pub fn make_gauss2d_tasks<S: Scalar>(
    seed: u64,
    specs: &[Gauss2DSpec],
    n_train: usize,
    n_test: usize,
) -> Result<TaskSchedule<S>> {
    if specs.is_empty() || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("empty Gaussian task set".into()));
    }
    let mut tasks = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let c = i + 1;
        let mut rng = Rng::derive(seed, Stream::Data, c as u64);
        let mut make = |n: usize, split| -> Result<LabeledSet<S>> {
            let data = (0..n)
                .flat_map(|_| spec.draw(&mut rng))
                .map(S::lit)
                .collect();
            LabeledSet::new(Tensor::matrix(n, 2, data)?, vec![c; n], split)
        };
        let train = make(n_train, Split::Train)?;
        let test = make(n_test, Split::Test)?;
        tasks.push(Task {
            category: c,
            train,
            test,
        });
    }
    TaskSchedule::from_tasks(tasks, OutputKind::Points2D)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_collapses_to_mean() {
        let s =
            make_gauss2d_tasks::<f64>(1, &[Gauss2DSpec::single([1.5, -2.0], 0.0)], 10, 2).unwrap();
        for row in s.tasks[0].train.samples.data().chunks(2) {
            assert_eq!(row, &[1.5, -2.0]);
        }
    }

    #[test]
    fn empirical_mean_within_clt_bound() {
        let sigma = 0.5;
        let spec = Gauss2DSpec::single([2.0, -1.0], sigma);
        let s = make_gauss2d_tasks::<f64>(2, &[spec], 10_000, 1).unwrap();
        let d = s.tasks[0].train.samples.data();
        let bound = 3.0 * sigma / 100.0;
        for (axis, mu) in [2.0, -1.0].into_iter().enumerate() {
            let m = d.iter().skip(axis).step_by(2).sum::<f64>() / 10_000.0;
            assert!((m - mu).abs() < bound, "axis {axis}: {m}");
        }
    }

    #[test]
    fn mixture_weights_respected() {
        let spec = Gauss2DSpec {
            means: vec![[-10.0, 0.0], [10.0, 0.0]],
            weights: vec![0.25, 0.75],
            sigma: 0.1,
        };
        assert_eq!(spec.mean(), [5.0, 0.0]);
        let s = make_gauss2d_tasks::<f64>(3, &[spec], 8000, 1).unwrap();
        let right = s.tasks[0]
            .train
            .samples
            .data()
            .chunks(2)
            .filter(|p| p[0] > 0.0)
            .count();
        assert!((right as f64 / 8000.0 - 0.75).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_weights() {
        let spec = Gauss2DSpec {
            means: vec![[0.0, 0.0]],
            weights: vec![0.5],
            sigma: 1.0,
        };
        assert!(make_gauss2d_tasks::<f64>(1, &[spec], 1, 1).is_err());
    }
}
