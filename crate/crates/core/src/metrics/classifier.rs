use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::numerics::{Graph, Rng, Stream, Tensor, Var, LEAKY_SLOPE};
use crate::scalar::Scalar;
use crate::strategies::AdamState;

/// Rows per forward pass during inference.
const CHUNK: usize = 1024;

/// Training budget of an evaluation classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Required held-out accuracy of the proxy.
    pub min_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: [128, 32],
            learning_rate: 1e-3,
            batch_size: 64,
            iterations: 1500,
            min_accuracy: 0.95,
        }
    }
}

/// Three-layer perceptron `in → h1 → h2 → classes` with leaky-relu
/// hidden units.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    /// `(weight [fan_in, fan_out], bias [fan_out])` per layer.
    pub layers: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Mlp<S> {
    /// He-normal weights, zero biases.
    pub fn init(input: usize, hidden: [usize; 2], classes: usize, rng: &mut Rng) -> Self {
        let sizes = [input, hidden[0], hidden[1], classes];
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| S::lit(rng.normal() * std))
                    .collect();
                (
                    Tensor::matrix(w[0], w[1], data).expect("positive layer sizes"),
                    Tensor::zeros(&[w[1]]),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.layers[2].1.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[1].1.len()
    }

    fn bind(&self, g: &mut Graph<S>) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [g.leaf(w), g.leaf(b)])
            .collect()
    }

    /// `(logits, penultimate activations)`.
    fn forward(g: &mut Graph<S>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let slope = S::lit(LEAKY_SLOPE);
        let h = g.linear(x, vars[0], Some(vars[1]))?;
        let h = g.leaky_relu(h, slope)?;
        let h = g.linear(h, vars[2], Some(vars[3]))?;
        let h = g.leaky_relu(h, slope)?;
        let logits = g.linear(h, vars[4], Some(vars[5]))?;
        Ok((logits, h))
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.shape().len() != 2 || x.row_len() != self.input_dim() {
            return Err(Error::FeatureMismatch {
                what: "classifier input",
                expected: self.input_dim(),
                got: x.len() / x.shape()[0],
            });
        }
        Ok(())
    }

    fn chunked(&self, x: &Tensor<S>, pick_embedding: bool) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let n = x.rows();
        let width = if pick_embedding {
            self.embedding_dim()
        } else {
            self.classes()
        };
        let mut out = Vec::with_capacity(n * width);
        for start in (0..n).step_by(CHUNK) {
            let idx: Vec<usize> = (start..n.min(start + CHUNK)).collect();
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let xv = g.try_leaf(&x.select_rows(&idx))?;
            let (logits, emb) = Self::forward(&mut g, &vars, xv)?;
            out.extend_from_slice(g.value(if pick_embedding { emb } else { logits }));
        }
        Ok(Tensor::matrix(n, width, out)?)
    }

    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.chunked(x, false)
    }

    /// Penultimate-layer activations `[n, h2]`.
    pub fn embed(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.chunked(x, true)
    }

    /// Predicted 1-based categories (lowest index wins ties).
    pub fn predict(&self, x: &Tensor<S>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best + 1
            })
            .collect())
    }

    /// Fraction of rows predicted as their label.
    pub fn accuracy(&self, set: &LabeledSet<S>) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::EmptyBatch { what: "accuracy" });
        }
        let pred = self.predict(&set.samples)?;
        let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / set.len() as f64)
    }

    /// Mini-batch Adam on mean cross entropy. Batches are drawn with
    /// replacement from `rng`.
    pub fn train(
        &mut self,
        set: &LabeledSet<S>,
        cfg: &ClassifierConfig,
        rng: &mut Rng,
    ) -> Result<()> {
        self.check_input(&set.samples)?;
        let mut adam =
            AdamState::with_betas(self.layers.iter().flat_map(|(w, b)| [w, b]), 0.9, 0.999);
        for _ in 0..cfg.iterations {
            let (x, labels) = set.sample_batch(rng, cfg.batch_size)?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let xv = g.try_leaf(&x)?;
            let (logits, _) = Self::forward(&mut g, &vars, xv)?;
            let loss = cross_entropy(&mut g, logits, &labels)?;
            if !g.scalar(loss).is_finite() {
                return Err(Error::Numerical("classifier loss is not finite".into()));
            }
            let grads = g.grad(loss, &vars)?;
            let grad_refs: Vec<&[S]> = grads.iter().map(|&v| g.value(v)).collect();
            let params: Vec<&mut Tensor<S>> =
                self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect();
            adam.step(params, &grad_refs, cfg.learning_rate)?;
        }
        Ok(())
    }

    /// Fresh classifier trained on `set` with its own derived stream.
    pub fn fit(
        set: &LabeledSet<S>,
        classes: usize,
        cfg: &ClassifierConfig,
        seed: u64,
        index: u64,
    ) -> Result<Self> {
        let mut init = Rng::derive(seed, Stream::Proxy, 2 * index);
        let mut train = Rng::derive(seed, Stream::Proxy, 2 * index + 1);
        let mut mlp = Self::init(set.samples.row_len(), cfg.hidden, classes, &mut init);
        mlp.train(set, cfg, &mut train)?;
        Ok(mlp)
    }
}
