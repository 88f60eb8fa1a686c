//! The `train`, `sample`, `eval` and `gradcheck` subcommands.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use mergan_core::checks::{run_gradient_checks, CheckResult};
use mergan_core::data::{
    load_idx, make_gauss2d_tasks, make_glyph_tasks, tasks_from_idx, Gauss2DSpec, TaskSchedule,
};
use mergan_core::metrics::{
    reverse_accuracy, train_proxy, ClassifierConfig, Evaluator, ProxyClassifier,
};
use mergan_core::models::{Arch, Mode, ModelParams, OutputKind};
use mergan_core::numerics::{sample_gaussian, Rng, Stream, Tensor, OP_NAMES};
use mergan_core::strategies::{run_sequence, seen_categories, MetricRow, Observer, TrainerState};
use mergan_core::Scalar;

use crate::checkpoint::{
    decode_params, decode_proxy, decode_state, encode_proxy, encode_state, Checkpoint,
};
use crate::config::{DataKind, Precision, RunConfig};
use crate::error::{CheckpointError, CliError, Result};
use crate::fsutil;
use crate::metrics_log::MetricsLog;
use crate::pgm;

/// Files of a run inside its output directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
    pub metrics: PathBuf,
    pub grids: PathBuf,
    pub checkpoints: PathBuf,
    pub proxy: PathBuf,
    pub config: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            metrics: root.join("metrics.csv"),
            grids: root.join("grids"),
            checkpoints: root.join("checkpoints"),
            proxy: root.join("proxy.ckpt"),
            config: root.join("run.cfg"),
        }
    }

    pub fn latest(&self) -> PathBuf {
        self.checkpoints.join("latest.ckpt")
    }

    pub fn task_checkpoint(&self, t: usize) -> PathBuf {
        self.checkpoints.join(format!("task_{t}.ckpt"))
    }

    pub fn grid(&self, global_iter: u64) -> PathBuf {
        self.grids.join(format!("iter_{global_iter:07}.pgm"))
    }
}

pub fn build_schedule<S: Scalar>(cfg: &RunConfig) -> Result<TaskSchedule<S>> {
    let d = &cfg.data;
    let seed = cfg.train.seed;
    let schedule = match d.kind {
        DataKind::Glyph => make_glyph_tasks(
            seed,
            d.train_per_category,
            d.test_per_category,
            d.categories,
            &d.glyph,
        )?,
        DataKind::Gauss2d => {
            let m = d.categories;
            let specs: Vec<Gauss2DSpec> = (0..m)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / m as f64;
                    Gauss2DSpec::single(
                        [d.gauss_radius * a.cos(), d.gauss_radius * a.sin()],
                        d.gauss_sigma,
                    )
                })
                .collect();
            make_gauss2d_tasks(seed, &specs, d.train_per_category, d.test_per_category)?
        }
        DataKind::Idx => {
            let train = load_idx(&d.idx.train_images, &d.idx.train_labels, d.idx.resize)?;
            let test = load_idx(&d.idx.test_images, &d.idx.test_labels, d.idx.resize)?;
            tasks_from_idx(&train, &test, d.categories)?
        }
    };
    Ok(schedule)
}

pub fn arch_for<S: Scalar>(cfg: &RunConfig, schedule: &TaskSchedule<S>) -> Arch {
    let m = schedule.categories();
    let base = match schedule.output {
        OutputKind::Image { height, width } => Arch::image(m, height, width),
        OutputKind::Points2D => Arch::points2d(m),
    };
    Arch {
        latent_dim: cfg.train.latent_dim,
        ..base
    }
}

pub fn classifier_config(cfg: &RunConfig) -> ClassifierConfig {
    ClassifierConfig {
        iterations: cfg.eval.proxy_iterations,
        min_accuracy: cfg.eval.proxy_min_accuracy,
        ..ClassifierConfig::default()
    }
}

/// Loads the cached proxy if `reuse` and it exists, otherwise trains and saves one.
fn proxy_for<S: Scalar>(
    cfg: &RunConfig,
    schedule: &TaskSchedule<S>,
    paths: &RunPaths,
    reuse: bool,
    log: &mut dyn Write,
) -> Result<ProxyClassifier<S>> {
    let cc = classifier_config(cfg);
    let dim = schedule.output.dim();
    if reuse && paths.proxy.exists() {
        let ck = Checkpoint::load(&paths.proxy)?;
        return decode_proxy(&ck, dim, schedule.categories(), &cc).map_err(|kind| {
            CliError::Checkpoint {
                path: paths.proxy.clone(),
                kind,
            }
        });
    }
    if reuse {
        note(
            log,
            format!(
                "no proxy classifier at {}; training one",
                paths.proxy.display()
            ),
        );
    }
    let proxy = train_proxy(schedule, &cc, cfg.train.seed)?;
    note(
        log,
        format!("proxy classifier test accuracy {:.4}", proxy.test_accuracy),
    );
    encode_proxy(&proxy).save(&paths.proxy)?;
    Ok(proxy)
}

fn note(log: &mut dyn Write, msg: String) {
    let _ = writeln!(log, "{msg}");
}

fn core_err(e: CliError) -> mergan_core::Error {
    match e {
        CliError::Core(e) => e,
        CliError::Io { path, source } => mergan_core::Error::io(path, source),
        other => mergan_core::Error::InvalidArgument(other.to_string()),
    }
}

/// Image rows `[n, H·W]` of the listed categories for a shared `z`.
pub fn grid_cells<S: Scalar>(
    params: &ModelParams<S>,
    categories: &[usize],
    z: &Tensor<S>,
) -> Result<Vec<Vec<f64>>> {
    let n = z.rows();
    let mut cells = Vec::with_capacity(categories.len() * n);
    for &c in categories {
        params.arch.check_category(c)?;
        let x = params.generate(z, &vec![c; n], Mode::Eval)?;
        for i in 0..n {
            cells.push(x.row(i).iter().map(|v| v.to_f64_lossy()).collect());
        }
    }
    Ok(cells)
}

/// PGM bytes of a category-by-latent grid.
pub fn grid_bytes<S: Scalar>(
    params: &ModelParams<S>,
    categories: &[usize],
    z: &Tensor<S>,
    sep: usize,
) -> Result<Vec<u8>> {
    let OutputKind::Image { height, width } = params.arch.output else {
        return Err(CliError::Usage("image grids need an image model".into()));
    };
    let cells = grid_cells(params, categories, z)?;
    Ok(pgm::encode_grid(
        &cells,
        categories.len(),
        z.rows(),
        height,
        width,
        sep,
    ))
}

struct RunObserver<'a, S: Scalar> {
    cfg: &'a RunConfig,
    paths: &'a RunPaths,
    metrics: MetricsLog,
    probe_z: Tensor<S>,
    categories: usize,
    log: &'a mut dyn Write,
}

impl<S: Scalar> Observer<S> for RunObserver<'_, S> {
    fn on_task_start(&mut self, task: usize, _params: &ModelParams<S>) -> mergan_core::Result<()> {
        note(self.log, format!("task {task}/{}", self.categories));
        Ok(())
    }

    fn on_eval(&mut self, rows: &[MetricRow], params: &ModelParams<S>) -> mergan_core::Result<()> {
        let Some(first) = rows.first() else {
            return Ok(());
        };
        self.metrics.extend(rows);
        self.metrics.flush().map_err(core_err)?;
        let summary: Vec<String> = rows
            .iter()
            .filter(|r| r.category == 0)
            .map(|r| format!("{}={:.4}", r.metric, r.value))
            .collect();
        note(
            self.log,
            format!(
                "iter {} task {}: {}",
                first.global_iter,
                first.task,
                summary.join(" ")
            ),
        );
        if matches!(params.arch.output, OutputKind::Image { .. }) {
            let cats = seen_categories(self.cfg.train.strategy, first.task, self.categories);
            let bytes = grid_bytes(params, &cats, &self.probe_z, self.cfg.eval.grid_separator)
                .map_err(core_err)?;
            fsutil::write_atomic(&self.paths.grid(first.global_iter), &bytes).map_err(core_err)?;
        }
        Ok(())
    }

    fn on_task_end(
        &mut self,
        state: &TrainerState<S>,
        _snapshot: &ModelParams<S>,
    ) -> mergan_core::Result<()> {
        let t = state.task;
        if t.is_multiple_of(self.cfg.checkpoint_every) || t == self.categories {
            let bytes = checkpoint_of(state).to_bytes();
            fsutil::write_atomic(&self.paths.task_checkpoint(t), &bytes).map_err(core_err)?;
            fsutil::write_atomic(&self.paths.latest(), &bytes).map_err(core_err)?;
        }
        Ok(())
    }
}

const PRECISION: &str = "meta.precision";

fn checkpoint_of<S: Scalar>(state: &TrainerState<S>) -> Checkpoint {
    let mut ck = encode_state(state);
    ck.push(PRECISION, &[1], vec![(8 * std::mem::size_of::<S>()) as f64]);
    ck
}

fn precision_of(ck: &Checkpoint) -> Precision {
    match ck.get(PRECISION).map(|t| t.data.as_slice()) {
        Ok([v]) if *v == 32.0 => Precision::F32,
        _ => Precision::F64,
    }
}

fn ck_err(path: &Path) -> impl Fn(CheckpointError) -> CliError + '_ {
    move |kind| CliError::Checkpoint {
        path: path.to_path_buf(),
        kind,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub tasks: usize,
    pub global_iter: u64,
    pub rows: usize,
}

/// Trains every task of the configured run. With `resume`, continues from
/// the latest checkpoint and drops metric rows logged after it.
pub fn train(cfg: &RunConfig, resume: bool, log: &mut dyn Write) -> Result<TrainSummary> {
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, resume, log),
        Precision::F64 => train_with::<f64>(cfg, resume, log),
    }
}

fn train_with<S: Scalar>(
    cfg: &RunConfig,
    resume: bool,
    log: &mut dyn Write,
) -> Result<TrainSummary> {
    let paths = RunPaths::new(&cfg.output_dir);
    std::fs::create_dir_all(&paths.root).map_err(|e| CliError::io(&paths.root, e))?;
    let schedule = build_schedule::<S>(cfg)?;
    let arch = arch_for(cfg, &schedule);
    let (mut state, metrics) = if resume {
        let latest = paths.latest();
        let ck = Checkpoint::load(&latest)?;
        let state: TrainerState<S> = decode_state(&ck).map_err(ck_err(&latest))?;
        if state.params.arch != arch {
            return Err(CliError::Usage(format!(
                "{} was trained with a different architecture",
                latest.display()
            )));
        }
        let mut metrics = MetricsLog::open(&paths.metrics)?;
        metrics.truncate_after(state.global_iter);
        note(
            log,
            format!(
                "resuming after task {} at iteration {}",
                state.task, state.global_iter
            ),
        );
        (state, metrics)
    } else {
        (
            TrainerState::new(arch, cfg.train.seed),
            MetricsLog::create(&paths.metrics),
        )
    };
    fsutil::write_atomic(&paths.config, cfg.render().as_bytes())?;
    metrics.flush()?;
    let evaluator = if cfg.eval.enabled {
        let proxy = proxy_for(cfg, &schedule, &paths, resume, log)?;
        Some(Evaluator::new(
            proxy,
            &schedule,
            cfg.eval.samples_per_category,
        )?)
    } else {
        None
    };
    let probe_z = sample_gaussian(
        &mut Rng::derive(cfg.train.seed, Stream::Sample, 0),
        &[cfg.eval.grid_columns, arch.latent_dim],
    );
    let mut observer = RunObserver {
        cfg,
        paths: &paths,
        metrics,
        probe_z,
        categories: schedule.categories(),
        log,
    };
    run_sequence(
        &cfg.train,
        &schedule,
        &mut state,
        evaluator.as_ref(),
        &mut observer,
    )?;
    Ok(TrainSummary {
        tasks: state.task,
        global_iter: state.global_iter,
        rows: observer.metrics.len(),
    })
}

/// Writes a PGM grid with one row per category and one column per latent
/// vector; the `n` vectors come from `z_seed` and are shared by all rows.
pub fn sample(
    checkpoint: &Path,
    categories: &[usize],
    n: usize,
    z_seed: u64,
    sep: usize,
    out: &Path,
) -> Result<()> {
    if categories.is_empty() || n == 0 {
        return Err(CliError::Usage(
            "need at least one category and one sample".into(),
        ));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let bytes = match precision_of(&ck) {
        Precision::F32 => sample_bytes::<f32>(&ck, checkpoint, categories, n, z_seed, sep)?,
        Precision::F64 => sample_bytes::<f64>(&ck, checkpoint, categories, n, z_seed, sep)?,
    };
    fsutil::write_atomic(out, &bytes)
}

fn sample_bytes<S: Scalar>(
    ck: &Checkpoint,
    path: &Path,
    categories: &[usize],
    n: usize,
    z_seed: u64,
    sep: usize,
) -> Result<Vec<u8>> {
    let params: ModelParams<S> = decode_params(ck).map_err(ck_err(path))?;
    let z = sample_gaussian(
        &mut Rng::derive(z_seed, Stream::Sample, 0),
        &[n, params.arch.latent_dim],
    );
    grid_bytes(&params, categories, &z, sep)
}

/// Evaluates a checkpoint on the configured data, prints the metrics and
/// appends them to the run's metrics file.
pub fn eval(checkpoint: &Path, cfg: &RunConfig, log: &mut dyn Write) -> Result<Vec<MetricRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    match precision_of(&ck) {
        Precision::F32 => eval_with::<f32>(&ck, checkpoint, cfg, log),
        Precision::F64 => eval_with::<f64>(&ck, checkpoint, cfg, log),
    }
}

/// The metric rows `eval` emits for `params`, without any I/O.
pub fn evaluation_rows<S: Scalar>(
    params: &ModelParams<S>,
    evaluator: &Evaluator<S>,
    schedule: &TaskSchedule<S>,
    cfg: &RunConfig,
    task: usize,
    global_iter: u64,
) -> Result<Vec<MetricRow>> {
    let cats = seen_categories(cfg.train.strategy, task.max(1), schedule.categories());
    let mut rng = Rng::derive(cfg.train.seed, Stream::Eval, global_iter);
    let report = evaluator.evaluate(params, &cats, &mut rng)?;
    let rev = reverse_accuracy(
        params,
        schedule,
        &cats,
        cfg.eval.samples_per_category,
        &classifier_config(cfg),
        cfg.train.seed,
        &mut rng,
    )?;
    let row = |metric, category, value| MetricRow {
        global_iter,
        task,
        metric,
        category,
        value,
    };
    let mut rows: Vec<MetricRow> = report
        .accuracy
        .per_category
        .iter()
        .map(|&(c, a)| row("acc", c, a))
        .collect();
    rows.push(row("acc_mean", 0, report.accuracy.mean));
    rows.push(row("rev_acc", 0, rev));
    rows.extend(report.fd.iter().map(|&(c, f)| row("fd", c, f)));
    Ok(rows)
}

fn eval_with<S: Scalar>(
    ck: &Checkpoint,
    path: &Path,
    cfg: &RunConfig,
    log: &mut dyn Write,
) -> Result<Vec<MetricRow>> {
    let params: ModelParams<S> = decode_params(ck).map_err(ck_err(path))?;
    let schedule = build_schedule::<S>(cfg)?;
    if params.arch.categories != schedule.categories() || params.arch.output != schedule.output {
        return Err(CliError::Usage(format!(
            "{} does not match the configured data set",
            path.display()
        )));
    }
    let paths = RunPaths::new(&cfg.output_dir);
    let proxy = proxy_for(cfg, &schedule, &paths, true, log)?;
    let evaluator = Evaluator::new(proxy, &schedule, cfg.eval.samples_per_category)?;
    let rows = evaluation_rows(
        &params,
        &evaluator,
        &schedule,
        cfg,
        ck.task as usize,
        ck.iteration,
    )?;
    for r in &rows {
        let cat = if r.category == 0 {
            "-".to_string()
        } else {
            r.category.to_string()
        };
        note(log, format!("{:<9} {:>4} {:.6}", r.metric, cat, r.value));
    }
    let mut metrics = MetricsLog::open(&paths.metrics)?;
    metrics.extend(&rows);
    metrics.flush()?;
    Ok(rows)
}

/// Runs the gradient-check suite and prints the worst relative error of
/// each check. `fault` must name a graph op.
pub fn gradcheck(
    instances: usize,
    seed: u64,
    fault: Option<&str>,
    log: &mut dyn Write,
) -> Result<Vec<CheckResult>> {
    let fault =
        match fault {
            None => None,
            Some(name) => Some(*OP_NAMES.iter().find(|&&op| op == name).ok_or_else(|| {
                CliError::Usage(format!("unknown op {name:?} for fault injection"))
            })?),
        };
    let results = run_gradient_checks(instances, seed, fault)?;
    for r in &results {
        note(
            log,
            format!(
                "{:<24} {} worst rel err {:.3e} (tol {:.0e}, {} coords, {} skipped, {} instances)",
                r.name,
                if r.passed() { "ok  " } else { "FAIL" },
                r.report.max_rel_err,
                r.report.tolerance,
                r.report.checked,
                r.report.skipped,
                r.instances
            ),
        );
    }
    Ok(results)
}
