//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Keys are dotted names
//! (`data.glyph.flip_prob`). Unknown and repeated keys are errors. Relative
//! paths are resolved against the directory of the config file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mergan_core::data::GlyphSpec;
use mergan_core::strategies::TrainConfig;

use crate::error::{CliError, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "MERGAN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, got {s:?}")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Glyph,
    Gauss2d,
    Idx,
}

impl FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "glyph" => Ok(DataKind::Glyph),
            "gauss2d" => Ok(DataKind::Gauss2d),
            "idx" => Ok(DataKind::Idx),
            _ => Err(format!("expected glyph, gauss2d or idx, got {s:?}")),
        }
    }
}

impl Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::Glyph => "glyph",
            DataKind::Gauss2d => "gauss2d",
            DataKind::Idx => "idx",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub resize: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub categories: usize,
    /// Per category; ignored for IDX data.
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub glyph: GlyphSpec,
    /// Category means sit evenly on a circle of this radius.
    pub gauss_radius: f64,
    pub gauss_sigma: f64,
    pub idx: IdxPaths,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub enabled: bool,
    pub samples_per_category: usize,
    pub proxy_iterations: usize,
    pub proxy_min_accuracy: f64,
    pub grid_columns: usize,
    pub grid_separator: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
    pub output_dir: PathBuf,
    /// Checkpoint after every this many tasks (the last task always saves).
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            precision: Precision::F64,
            output_dir: PathBuf::from("out"),
            checkpoint_every: 1,
            data: DataConfig {
                kind: DataKind::Glyph,
                categories: 5,
                train_per_category: 1000,
                test_per_category: 200,
                glyph: GlyphSpec::default(),
                gauss_radius: 2.0,
                gauss_sigma: 0.1,
                idx: IdxPaths {
                    train_images: PathBuf::from("train-images-idx3-ubyte"),
                    train_labels: PathBuf::from("train-labels-idx1-ubyte"),
                    test_images: PathBuf::from("t10k-images-idx3-ubyte"),
                    test_labels: PathBuf::from("t10k-labels-idx1-ubyte"),
                    resize: Some((16, 16)),
                },
            },
            eval: EvalConfig {
                enabled: true,
                samples_per_category: 256,
                proxy_iterations: 1500,
                proxy_min_accuracy: 0.95,
                grid_columns: 8,
                grid_separator: 1,
            },
        }
    }
}

enum SetError {
    Unknown,
    Invalid(String),
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, SetError>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| SetError::Invalid(format!("invalid value {v:?}: {e}")))
}

fn parse_bool(v: &str) -> std::result::Result<bool, SetError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SetError::Invalid(format!(
            "expected true or false, got {v:?}"
        ))),
    }
}

fn parse_resize(v: &str) -> std::result::Result<Option<(usize, usize)>, SetError> {
    if v == "none" {
        return Ok(None);
    }
    let bad = || SetError::Invalid(format!("expected HxW or none, got {v:?}"));
    let (h, w) = v.split_once('x').ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok(Some((h, w)))
}

fn show_resize(r: Option<(usize, usize)>) -> String {
    match r {
        Some((h, w)) => format!("{h}x{w}"),
        None => "none".into(),
    }
}

impl RunConfig {
    /// Every key with its current value and a description, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String, &'static str)> {
        let t = &self.train;
        let d = &self.data;
        let e = &self.eval;
        let p = |p: &Path| p.display().to_string();
        vec![
            (
                "strategy",
                t.strategy.to_string(),
                "jt, sft, ewc, mergan_jtr or mergan_ra",
            ),
            (
                "seed",
                t.seed.to_string(),
                "master seed (overridden by MERGAN_SEED)",
            ),
            (
                "learning_rate",
                t.learning_rate.to_string(),
                "Adam step size",
            ),
            ("batch_size", t.batch_size.to_string(), "samples per batch"),
            (
                "n_critic",
                t.n_critic.to_string(),
                "critic updates per generator update",
            ),
            (
                "iters_per_task",
                t.iters_per_task.to_string(),
                "generator updates per task",
            ),
            (
                "eval_every",
                t.eval_every.to_string(),
                "iterations between evaluations",
            ),
            (
                "lambda_cls",
                t.lambda_cls.to_string(),
                "auxiliary classifier weight",
            ),
            (
                "lambda_gp",
                t.lambda_gp.to_string(),
                "gradient penalty weight",
            ),
            ("lambda_ewc", t.lambda_ewc.to_string(), "EWC penalty weight"),
            (
                "lambda_ra",
                t.lambda_ra.to_string(),
                "replay alignment weight",
            ),
            (
                "fisher_samples",
                t.fisher_samples.to_string(),
                "draws per Fisher estimate",
            ),
            (
                "latent_dim",
                t.latent_dim.to_string(),
                "generator noise dimension",
            ),
            (
                "precision",
                self.precision.to_string(),
                "f32 or f64 arithmetic for training",
            ),
            (
                "output_dir",
                p(&self.output_dir),
                "directory for metrics, grids and checkpoints",
            ),
            (
                "checkpoint_every",
                self.checkpoint_every.to_string(),
                "tasks between checkpoints",
            ),
            ("data.kind", d.kind.to_string(), "glyph, gauss2d or idx"),
            (
                "data.categories",
                d.categories.to_string(),
                "number of categories (= tasks)",
            ),
            (
                "data.train_per_category",
                d.train_per_category.to_string(),
                "synthetic training samples per category",
            ),
            (
                "data.test_per_category",
                d.test_per_category.to_string(),
                "synthetic test samples per category",
            ),
            (
                "data.glyph.height",
                d.glyph.height.to_string(),
                "glyph canvas height",
            ),
            (
                "data.glyph.width",
                d.glyph.width.to_string(),
                "glyph canvas width",
            ),
            (
                "data.glyph.max_shift",
                d.glyph.max_shift.to_string(),
                "largest random translation in pixels",
            ),
            (
                "data.glyph.flip_prob",
                d.glyph.flip_prob.to_string(),
                "per-pixel flip probability",
            ),
            (
                "data.glyph.noise_sigma",
                d.glyph.noise_sigma.to_string(),
                "additive Gaussian pixel noise",
            ),
            (
                "data.gauss2d.radius",
                d.gauss_radius.to_string(),
                "radius of the circle of category means",
            ),
            (
                "data.gauss2d.sigma",
                d.gauss_sigma.to_string(),
                "per-category standard deviation",
            ),
            (
                "data.idx.train_images",
                p(&d.idx.train_images),
                "IDX training images",
            ),
            (
                "data.idx.train_labels",
                p(&d.idx.train_labels),
                "IDX training labels",
            ),
            (
                "data.idx.test_images",
                p(&d.idx.test_images),
                "IDX test images",
            ),
            (
                "data.idx.test_labels",
                p(&d.idx.test_labels),
                "IDX test labels",
            ),
            (
                "data.idx.resize",
                show_resize(d.idx.resize),
                "HxW nearest-neighbour resize, or none",
            ),
            (
                "eval.enabled",
                e.enabled.to_string(),
                "compute proxy metrics at each evaluation",
            ),
            (
                "eval.samples_per_category",
                e.samples_per_category.to_string(),
                "generated samples per category",
            ),
            (
                "eval.proxy_iterations",
                e.proxy_iterations.to_string(),
                "proxy classifier training steps",
            ),
            (
                "eval.proxy_min_accuracy",
                e.proxy_min_accuracy.to_string(),
                "required proxy test accuracy",
            ),
            (
                "eval.grid_columns",
                e.grid_columns.to_string(),
                "latent vectors per image grid row",
            ),
            (
                "eval.grid_separator",
                e.grid_separator.to_string(),
                "separator width between grid cells",
            ),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), SetError> {
        let t = &mut self.train;
        let d = &mut self.data;
        let e = &mut self.eval;
        match key {
            "strategy" => t.strategy = parse(v)?,
            "seed" => t.seed = parse(v)?,
            "learning_rate" => t.learning_rate = parse(v)?,
            "batch_size" => t.batch_size = parse(v)?,
            "n_critic" => t.n_critic = parse(v)?,
            "iters_per_task" => t.iters_per_task = parse(v)?,
            "eval_every" => t.eval_every = parse(v)?,
            "lambda_cls" => t.lambda_cls = parse(v)?,
            "lambda_gp" => t.lambda_gp = parse(v)?,
            "lambda_ewc" => t.lambda_ewc = parse(v)?,
            "lambda_ra" => t.lambda_ra = parse(v)?,
            "fisher_samples" => t.fisher_samples = parse(v)?,
            "latent_dim" => t.latent_dim = parse(v)?,
            "precision" => self.precision = parse(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "checkpoint_every" => self.checkpoint_every = parse(v)?,
            "data.kind" => d.kind = parse(v)?,
            "data.categories" => d.categories = parse(v)?,
            "data.train_per_category" => d.train_per_category = parse(v)?,
            "data.test_per_category" => d.test_per_category = parse(v)?,
            "data.glyph.height" => d.glyph.height = parse(v)?,
            "data.glyph.width" => d.glyph.width = parse(v)?,
            "data.glyph.max_shift" => d.glyph.max_shift = parse(v)?,
            "data.glyph.flip_prob" => d.glyph.flip_prob = parse(v)?,
            "data.glyph.noise_sigma" => d.glyph.noise_sigma = parse(v)?,
            "data.gauss2d.radius" => d.gauss_radius = parse(v)?,
            "data.gauss2d.sigma" => d.gauss_sigma = parse(v)?,
            "data.idx.train_images" => d.idx.train_images = PathBuf::from(v),
            "data.idx.train_labels" => d.idx.train_labels = PathBuf::from(v),
            "data.idx.test_images" => d.idx.test_images = PathBuf::from(v),
            "data.idx.test_labels" => d.idx.test_labels = PathBuf::from(v),
            "data.idx.resize" => d.idx.resize = parse_resize(v)?,
            "eval.enabled" => e.enabled = parse_bool(v)?,
            "eval.samples_per_category" => e.samples_per_category = parse(v)?,
            "eval.proxy_iterations" => e.proxy_iterations = parse(v)?,
            "eval.proxy_min_accuracy" => e.proxy_min_accuracy = parse(v)?,
            "eval.grid_columns" => e.grid_columns = parse(v)?,
            "eval.grid_separator" => e.grid_separator = parse(v)?,
            _ => return Err(SetError::Unknown),
        }
        Ok(())
    }

    /// Parses config text. `path` is used for messages and to resolve
    /// relative paths. The seed override is not applied here.
    pub fn parse_str(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: path.to_path_buf(),
                line,
                message,
            };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            match cfg.set(key, value) {
                Ok(()) => seen.push(key.to_string()),
                Err(SetError::Unknown) => {
                    return Err(CliError::UnknownKey {
                        path: path.to_path_buf(),
                        line,
                        key: key.to_string(),
                    })
                }
                Err(SetError::Invalid(m)) => return Err(err(format!("{key}: {m}"))),
            }
        }
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            message,
        })?;
        Ok(cfg)
    }

    /// Reads and parses `path`, then applies the seed override from the
    /// environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse_str(&text, path)?;
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v.trim().parse().map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.idx.train_images);
        fix(&mut self.data.idx.train_labels);
        fix(&mut self.data.idx.test_images);
        fix(&mut self.data.idx.test_labels);
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        let positive = [
            ("checkpoint_every", self.checkpoint_every),
            ("data.categories", self.data.categories),
            ("data.train_per_category", self.data.train_per_category),
            ("data.test_per_category", self.data.test_per_category),
            ("eval.samples_per_category", self.eval.samples_per_category),
            ("eval.proxy_iterations", self.eval.proxy_iterations),
            ("eval.grid_columns", self.eval.grid_columns),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.eval.samples_per_category < 2 {
            return Err("eval.samples_per_category must be at least 2".into());
        }
        Ok(())
    }

    /// Config text that parses back to `self` (paths as stored).
    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v, _)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Table of keys and defaults for `--help`.
    pub fn help_table() -> String {
        let mut out = String::from("Config keys (default in brackets):\n");
        for (k, v, doc) in RunConfig::default().entries() {
            out.push_str(&format!("  {k:<28} {doc} [{v}]\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mergan_core::strategies::Strategy;

    fn parse_text(text: &str) -> Result<RunConfig> {
        RunConfig::parse_str(text, Path::new("/cfg/run.cfg"))
    }

    #[test]
    fn defaults_and_comments() {
        let cfg =
            parse_text("# comment\n\nstrategy = ewc  # trailing\ndata.glyph.flip_prob = 0.1\n")
                .unwrap();
        assert_eq!(cfg.train.strategy, Strategy::Ewc);
        assert_eq!(cfg.data.glyph.flip_prob, 0.1);
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.output_dir, PathBuf::from("/cfg/out"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_text("seed = 1\nlamda_ra = 0.1\n").unwrap_err();
        match &err {
            CliError::UnknownKey { key, line, .. } => {
                assert_eq!(key, "lamda_ra");
                assert_eq!(*line, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("lamda_ra"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn malformed_lines() {
        assert!(parse_text("seed 1\n").is_err());
        assert!(parse_text("seed = x\n").is_err());
        assert!(parse_text("seed = 1\nseed = 2\n").is_err());
        assert!(parse_text("batch_size = 0\n").is_err());
        assert!(parse_text("data.idx.resize = 16by16\n").is_err());
    }

    #[test]
    fn every_key_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.seed = 9;
        cfg.train.strategy = Strategy::MerganJtr;
        cfg.data.idx.resize = None;
        cfg.eval.enabled = false;
        cfg.precision = Precision::F32;
        cfg.output_dir = PathBuf::from("/abs/out");
        for (_, _, doc) in cfg.entries() {
            assert!(!doc.is_empty());
        }
        let mut expected = cfg.clone();
        expected.resolve_paths(Path::new("/cfg"));
        assert_eq!(parse_text(&cfg.render()).unwrap(), expected);
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = RunConfig::help_table();
        for (k, v, _) in RunConfig::default().entries() {
            assert!(help.contains(k), "{k}");
            assert!(help.contains(&format!("[{v}]")), "{k}");
        }
        assert!(help.contains("lambda_ewc") && help.contains("[1000000000]"));
    }

    #[test]
    fn seed_override() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed_override(Some("42")).unwrap();
        assert_eq!(cfg.train.seed, 42);
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.train.seed, 42);
        assert!(cfg.apply_seed_override(Some("-1")).is_err());
    }
}
