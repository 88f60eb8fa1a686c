//! Task data: synthetic glyphs, 2-D Gaussian mixtures and IDX digit files.

mod gauss2d;
mod glyph;
mod idx;

pub use gauss2d::{make_gauss2d_tasks, Gauss2DSpec};
pub use glyph::{make_glyph_tasks, render_glyph, GlyphSpec, DIGIT_BITMAPS, GLYPH_COLS, GLYPH_ROWS};
pub use idx::{
    load_idx, parse_idx_images, parse_idx_labels, resize_nearest, tasks_from_idx, IdxSet,
    IMAGES_MAGIC, LABELS_MAGIC,
};

use crate::error::{Error, Result};
use crate::models::{Mode, ModelParams, OutputKind};
use crate::numerics::{sample_category, sample_gaussian, Rng, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Samples `[n, dim]` with one 1-based category per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<S> {
    pub samples: Tensor<S>,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl<S: Scalar> LabeledSet<S> {
    pub fn new(samples: Tensor<S>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if samples.shape().len() != 2 || samples.rows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for samples of shape {:?}",
                labels.len(),
                samples.shape()
            )));
        }
        Ok(Self {
            samples,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn sample_batch(&self, rng: &mut Rng, n: usize) -> Result<(Tensor<S>, Vec<usize>)> {
        if self.is_empty() {
            return Err(Error::EmptyBatch {
                what: "training set",
            });
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.below(self.len())).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((self.samples.select_rows(&idx), labels))
    }

    /// Row-wise union of several sets.
    pub fn concat(parts: &[&LabeledSet<S>], split: Split) -> Result<Self> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|p| &p.samples).collect();
        let labels = parts
            .iter()
            .flat_map(|p| p.labels.iter().copied())
            .collect();
        Self::new(Tensor::concat_rows(&tensors)?, labels, split)
    }
}

/// One category's training and held-out data.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<S> {
    pub category: usize,
    pub train: LabeledSet<S>,
    pub test: LabeledSet<S>,
}

/// Tasks in training order; task `t` holds category `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSchedule<S> {
    pub tasks: Vec<Task<S>>,
    pub output: OutputKind,
}

impl<S: Scalar> TaskSchedule<S> {
    pub fn categories(&self) -> usize {
        self.tasks.len()
    }

    /// Task `t` (1-based).
    pub fn task(&self, t: usize) -> Result<&Task<S>> {
        t.checked_sub(1)
            .and_then(|i| self.tasks.get(i))
            .ok_or(Error::CategoryOutOfRange {
                category: t,
                categories: self.tasks.len(),
            })
    }

    /// Union of the training sets of all tasks.
    pub fn all_train(&self) -> Result<LabeledSet<S>> {
        let parts: Vec<&LabeledSet<S>> = self.tasks.iter().map(|t| &t.train).collect();
        LabeledSet::concat(&parts, Split::Train)
    }

    /// Union of the test sets of all tasks.
    pub fn all_test(&self) -> Result<LabeledSet<S>> {
        let parts: Vec<&LabeledSet<S>> = self.tasks.iter().map(|t| &t.test).collect();
        LabeledSet::concat(&parts, Split::Test)
    }

    pub(crate) fn from_tasks(tasks: Vec<Task<S>>, output: OutputKind) -> Result<Self> {
        for (i, task) in tasks.iter().enumerate() {
            let pure = |s: &LabeledSet<S>| s.labels.iter().all(|&l| l == i + 1);
            if task.category != i + 1 || !pure(&task.train) || !pure(&task.test) {
                return Err(Error::InvalidArgument(format!(
                    "task {} is not pure category {}",
                    i + 1,
                    i + 1
                )));
            }
            if task.train.is_empty() {
                return Err(Error::EmptyBatch {
                    what: "task training set",
                });
            }
        }
        Ok(Self { tasks, output })
    }
}

/// `batch` samples from the frozen generator with `c ~ U{1, t−1}` drawn
/// first, then `z ~ N(0, I)`, generated in eval mode. Labels are the
/// conditioning categories.
pub fn replay_batch<S: Scalar>(
    snapshot: &ModelParams<S>,
    rng: &mut Rng,
    batch: usize,
    t: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "replay needs a previous task, got t = {t}"
        )));
    }
    let labels = replay_categories(rng, batch, t)?;
    let z = sample_gaussian(rng, &[batch, snapshot.arch.latent_dim]);
    let samples = snapshot.generate(&z, &labels, Mode::Eval)?;
    Ok((samples, labels))
}

/// `n` categories drawn from `U{1, t−1}`.
pub fn replay_categories(rng: &mut Rng, n: usize, t: usize) -> Result<Vec<usize>> {
    (0..n)
        .map(|_| Ok(sample_category(rng, 1, t - 1)?))
        .collect()
}
