use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// How tasks are learned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Joint training on all categories at once (upper bound).
    Jt,
    /// Sequential fine-tuning, GAN terms only.
    Sft,
    /// Fine-tuning with an elastic weight consolidation penalty on the generator.
    Ewc,
    /// Joint retraining on real data plus replays from the previous generator.
    MerganJtr,
    /// Fine-tuning with pixelwise alignment to the previous generator.
    MerganRa,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Jt,
        Strategy::Sft,
        Strategy::Ewc,
        Strategy::MerganJtr,
        Strategy::MerganRa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Jt => "jt",
            Strategy::Sft => "sft",
            Strategy::Ewc => "ewc",
            Strategy::MerganJtr => "mergan_jtr",
            Strategy::MerganRa => "mergan_ra",
        }
    }

    /// Whether the auxiliary classifier takes part in training.
    pub fn uses_classifier(self) -> bool {
        matches!(self, Strategy::Jt | Strategy::MerganJtr)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == lower)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown strategy {s:?}; expected one of jt, sft, ewc, mergan_jtr, mergan_ra"
                ))
            })
    }
}

/// Hyperparameters of a sequential run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub iters_per_task: usize,
    pub lambda_cls: f64,
    pub lambda_gp: f64,
    pub lambda_ewc: f64,
    pub lambda_ra: f64,
    pub fisher_samples: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            n_critic: 5,
            iters_per_task: 2000,
            lambda_cls: 1.0,
            lambda_gp: 10.0,
            lambda_ewc: 1e9,
            lambda_ra: 1e-3,
            fisher_samples: 512,
            latent_dim: 32,
            seed: 0,
            strategy: Strategy::MerganRa,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            cls: self.lambda_cls,
            gp: self.lambda_gp,
            ewc: self.lambda_ewc,
            ra: self.lambda_ra,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
            ("iters_per_task", self.iters_per_task),
            ("fisher_samples", self.fisher_samples),
            ("latent_dim", self.latent_dim),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive".into(),
            ));
        }
        let weights = [
            ("lambda_cls", self.lambda_cls),
            ("lambda_gp", self.lambda_gp),
            ("lambda_ewc", self.lambda_ewc),
            ("lambda_ra", self.lambda_ra),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite value ≥ 0"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!(
            "MERGAN_JTR".parse::<Strategy>().unwrap(),
            Strategy::MerganJtr
        );
        assert!("dgr".parse::<Strategy>().is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            n_critic: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let zero_ewc = TrainConfig {
            lambda_ewc: 0.0,
            ..TrainConfig::default()
        };
        assert!(zero_ewc.validate().is_ok());
    }
}
