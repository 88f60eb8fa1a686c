use crate::data::{replay_batch, replay_categories, LabeledSet, TaskSchedule};
use crate::error::{Error, Result};
use crate::losses::{
    critic_gap, cross_entropy, estimate_fisher, ewc_penalty, generator_gan_loss, gradient_penalty,
    replay_alignment_loss, sample_interpolation_weights, FisherState, LossTerms,
};
use crate::metrics::Evaluator;
use crate::models::{Arch, Frozen, Mode, ModelParams};
use crate::numerics::{sample_category, sample_gaussian, Graph, Rng, Stream, Tensor, Var};
use crate::scalar::Scalar;
use crate::strategies::{AdamState, Strategy, TrainConfig};

/// Everything needed to continue a run at a task boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState<S> {
    pub params: ModelParams<S>,
    pub adam_g: AdamState<S>,
    /// Covers every discriminator tensor, including the classifier head.
    pub adam_d: AdamState<S>,
    /// Number of completed tasks.
    pub task: usize,
    pub global_iter: u64,
}

impl<S: Scalar> TrainerState<S> {
    /// Fresh parameters from the `Init` stream of `seed`.
    pub fn new(arch: Arch, seed: u64) -> Self {
        let params = ModelParams::init(arch, &mut Rng::derive(seed, Stream::Init, 0));
        let adam_g = AdamState::new(params.generator.trainable());
        let adam_d = AdamState::new(params.discriminator.tensors());
        Self {
            params,
            adam_g,
            adam_d,
            task: 0,
            global_iter: 0,
        }
    }
}

/// Loss values and counters after one generator update.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub task: usize,
    /// 0-based within the task.
    pub iteration: usize,
    /// Completed iterations over the whole run.
    pub global_iter: u64,
    pub terms: LossTerms,
    pub d_updates: u64,
    pub g_updates: u64,
    /// Largest |∂RA/∂θ_G| on the first iteration of a task with replay alignment.
    pub ra_grad_max_abs: Option<f64>,
}

/// One long-format metric value.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub global_iter: u64,
    pub task: usize,
    pub metric: &'static str,
    /// 0 for aggregates.
    pub category: usize,
    pub value: f64,
}

/// Hooks called by [`run_sequence`]. Errors abort the run.
pub trait Observer<S: Scalar> {
    fn on_task_start(&mut self, _task: usize, _params: &ModelParams<S>) -> Result<()> {
        Ok(())
    }

    fn on_iteration(&mut self, _log: &IterationLog, _params: &ModelParams<S>) -> Result<()> {
        Ok(())
    }

    /// Called after each evaluation with the rows it produced.
    fn on_eval(&mut self, _rows: &[MetricRow], _params: &ModelParams<S>) -> Result<()> {
        Ok(())
    }

    /// `snapshot` is the generator the task started from.
    fn on_task_end(&mut self, _state: &TrainerState<S>, _snapshot: &ModelParams<S>) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl<S: Scalar> Observer<S> for NoObserver {}

/// Where the categories of a batch come from.
#[derive(Clone, Copy, Debug)]
enum CategoryPlan {
    /// Every sample uses the current task's category.
    Fixed(usize),
    /// `U{1, m}` for every sample.
    Uniform(usize),
    /// `batch` samples of category `t` followed by `batch` samples of
    /// `U{1, t−1}` (just the first half when `t = 1`).
    Extended(usize),
}

impl CategoryPlan {
    fn draw(self, rng: &mut Rng, batch: usize) -> Result<Vec<usize>> {
        Ok(match self {
            CategoryPlan::Fixed(t) => vec![t; batch],
            CategoryPlan::Uniform(m) => (0..batch)
                .map(|_| sample_category(rng, 1, m))
                .collect::<std::result::Result<_, _>>()?,
            CategoryPlan::Extended(t) => {
                let mut c = vec![t; batch];
                if t > 1 {
                    c.extend(replay_categories(rng, batch, t)?);
                }
                c
            }
        })
    }
}

fn check_finite(terms: &LossTerms) -> Result<()> {
    if terms.all_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite loss {terms:?}")))
    }
}

fn grads_of<S: Scalar>(g: &mut Graph<S>, loss: Var, wrt: &[Var]) -> Result<Vec<Vec<S>>> {
    let grads = g.grad(loss, wrt)?;
    Ok(grads.iter().map(|&v| g.value(v).to_vec()).collect())
}

struct TaskRun<'a, S: Scalar> {
    cfg: &'a TrainConfig,
    t: usize,
    train: &'a LabeledSet<S>,
    snapshot: &'a Frozen<ModelParams<S>>,
    fisher: Option<&'a FisherState<S>>,
    plan: CategoryPlan,
    use_cls: bool,
    d_updates: u64,
    g_updates: u64,
}

impl<S: Scalar> TaskRun<'_, S> {
    fn replays(&self) -> bool {
        self.cfg.strategy == Strategy::MerganJtr && self.t > 1
    }

    fn aligns(&self) -> bool {
        self.cfg.strategy == Strategy::MerganRa && self.t > 1
    }

    /// One critic (and, when enabled, classifier) update.
    fn critic_step(
        &mut self,
        state: &mut TrainerState<S>,
        rng: &mut Rng,
        terms: &mut LossTerms,
    ) -> Result<()> {
        let b = self.cfg.batch_size;
        let (mut real, mut labels) = self.train.sample_batch(rng, b)?;
        if self.replays() {
            let (xr, lr) = replay_batch(self.snapshot, rng, b, self.t)?;
            real = Tensor::concat_rows(&[&real, &xr])?;
            labels.extend(lr);
        }
        let n = real.rows();
        let cats = self.plan.draw(rng, b)?;
        debug_assert_eq!(cats.len(), n);
        let z = sample_gaussian(rng, &[n, state.params.arch.latent_dim]);
        let fake = state.params.generate(&z, &cats, Mode::Train)?;
        let eps = sample_interpolation_weights(rng, n);

        let params = &state.params;
        let mut g = Graph::new();
        let d = params.discriminator.bind(&mut g);
        let both = g.try_leaf(&Tensor::concat_rows(&[&real, &fake])?)?;
        let features = d.trunk(&mut g, both)?;
        let scores = d.critic_head(&mut g, features)?;
        let scores = g.reshape(scores, &[2 * n, 1])?;
        let rs = g.slice_rows(scores, 0, n)?;
        let fs = g.slice_rows(scores, n, n)?;
        let gan = critic_gap(&mut g, rs, fs)?;
        let gp = gradient_penalty(&mut g, &d, &real, &fake, &eps)?;
        let wgp = g.scale(gp, S::lit(self.cfg.lambda_gp))?;
        let mut total = g.add(gan, wgp)?;
        terms.gan_d = g.scalar(gan).to_f64_lossy();
        terms.gp = g.scalar(gp).to_f64_lossy();
        if self.use_cls {
            let real_features = g.slice_rows(features, 0, n)?;
            let logits = d.classifier_head(&mut g, real_features)?;
            let cls = cross_entropy(&mut g, logits, &labels)?;
            let wcls = g.scale(cls, S::lit(self.cfg.lambda_cls))?;
            total = g.add(total, wcls)?;
            terms.cls_d = g.scalar(cls).to_f64_lossy();
        }
        check_finite(terms)?;
        let grads = grads_of(&mut g, total, d.vars())?;
        let refs: Vec<&[S]> = grads.iter().map(|v| v.as_slice()).collect();
        state.adam_d.step(
            state.params.discriminator.tensors_mut().into(),
            &refs,
            self.cfg.learning_rate,
        )?;
        self.d_updates += 1;
        Ok(())
    }

    /// One generator update. Returns the RA gradient magnitude when requested.
    fn generator_step(
        &mut self,
        state: &mut TrainerState<S>,
        rng: &mut Rng,
        terms: &mut LossTerms,
        probe_ra_grad: bool,
    ) -> Result<Option<f64>> {
        let b = self.cfg.batch_size;
        let cats = self.plan.draw(rng, b)?;
        let z = sample_gaussian(rng, &[cats.len(), state.params.arch.latent_dim]);

        let params = &state.params;
        let mut g = Graph::new();
        let gen = params.generator.bind(&mut g, &params.arch);
        let d = params.discriminator.bind(&mut g);
        let zv = g.try_leaf(&z)?;
        let out = gen.forward(&mut g, zv, &cats, Mode::Train)?;
        let features = d.trunk(&mut g, out.samples)?;
        let scores = d.critic_head(&mut g, features)?;
        let gan = generator_gan_loss(&mut g, scores)?;
        terms.gan_g = g.scalar(gan).to_f64_lossy();
        let mut total = gan;
        if self.use_cls {
            let logits = d.classifier_head(&mut g, features)?;
            let cls = cross_entropy(&mut g, logits, &cats)?;
            let wcls = g.scale(cls, S::lit(self.cfg.lambda_cls))?;
            total = g.add(total, wcls)?;
            terms.cls_g = g.scalar(cls).to_f64_lossy();
        }
        if let Some(fisher) = self.fisher {
            let pen = ewc_penalty(&mut g, gen.vars(), fisher, self.cfg.lambda_ewc)?;
            total = g.add(total, pen)?;
            terms.ewc = g.scalar(pen).to_f64_lossy();
        }
        let mut ra_grad = None;
        if self.aligns() {
            let rc = replay_categories(rng, b, self.t)?;
            let rz = sample_gaussian(rng, &[b, params.arch.latent_dim]);
            let ra = replay_alignment_loss(&mut g, &gen, self.snapshot, &rz, &rc, self.t)?;
            terms.ra = g.scalar(ra).to_f64_lossy();
            if probe_ra_grad {
                let gr = grads_of(&mut g, ra, gen.vars())?;
                let m = gr
                    .iter()
                    .flatten()
                    .fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
                ra_grad = Some(m);
            }
            let wra = g.scale(ra, S::lit(self.cfg.lambda_ra))?;
            total = g.add(total, wra)?;
        }
        check_finite(terms)?;
        let grads = grads_of(&mut g, total, gen.vars())?;
        drop(gen);
        let refs: Vec<&[S]> = grads.iter().map(|v| v.as_slice()).collect();
        state.adam_g.step(
            state.params.generator.trainable_mut(),
            &refs,
            self.cfg.learning_rate,
        )?;
        state.params.generator.update_running_stats(&out);
        self.g_updates += 1;
        Ok(ra_grad)
    }
}

/// Per-task budget and category plan of a strategy.
fn task_plan(strategy: Strategy, t: usize, m: usize) -> CategoryPlan {
    match strategy {
        Strategy::Jt => CategoryPlan::Uniform(m),
        Strategy::MerganJtr => CategoryPlan::Extended(t),
        Strategy::Sft | Strategy::Ewc | Strategy::MerganRa => CategoryPlan::Fixed(t),
    }
}

/// Categories evaluated during task `t`.
pub fn seen_categories(strategy: Strategy, t: usize, m: usize) -> Vec<usize> {
    match strategy {
        Strategy::Jt => (1..=m).collect(),
        _ => (1..=t).collect(),
    }
}

/// Trains task `state.task + 1`. Joint training uses the union of all tasks'
/// data in every task slot, so it runs the same number of iterations.
#[allow(clippy::too_many_arguments)]
pub fn train_task<S: Scalar>(
    cfg: &TrainConfig,
    schedule: &TaskSchedule<S>,
    state: &mut TrainerState<S>,
    evaluator: Option<&Evaluator<S>>,
    observer: &mut dyn Observer<S>,
    report: &mut Vec<MetricRow>,
    joint_data: Option<&LabeledSet<S>>,
) -> Result<()> {
    let m = schedule.categories();
    let t = state.task + 1;
    let task = schedule.task(t)?;
    if state.params.arch.categories != m {
        return Err(Error::InvalidArgument(format!(
            "model has {} categories, schedule has {m}",
            state.params.arch.categories
        )));
    }
    observer.on_task_start(t, &state.params)?;
    let snapshot = state.params.snapshot();
    let fisher = if cfg.strategy == Strategy::Ewc && t > 1 {
        let mut frng = Rng::derive(cfg.seed, Stream::Fisher, t as u64);
        Some(estimate_fisher(
            &state.params,
            t,
            cfg.fisher_samples,
            &mut frng,
        )?)
    } else {
        None
    };
    let train = match (cfg.strategy, joint_data) {
        (Strategy::Jt, Some(all)) => all,
        (Strategy::Jt, None) => {
            return Err(Error::InvalidArgument(
                "joint training needs the union of all tasks".into(),
            ))
        }
        _ => &task.train,
    };
    let mut run = TaskRun {
        cfg,
        t,
        train,
        snapshot: &snapshot,
        fisher: fisher.as_ref(),
        plan: task_plan(cfg.strategy, t, m),
        use_cls: cfg.strategy.uses_classifier() && cfg.lambda_cls > 0.0,
        d_updates: state.global_iter * cfg.n_critic as u64,
        g_updates: state.global_iter,
    };
    let mut rng = Rng::derive(cfg.seed, Stream::Train, t as u64);
    for i in 0..cfg.iters_per_task {
        let mut terms = LossTerms::default();
        for _ in 0..cfg.n_critic {
            run.critic_step(state, &mut rng, &mut terms)?;
        }
        let ra_grad = run.generator_step(state, &mut rng, &mut terms, i == 0)?;
        state.global_iter += 1;
        let log = IterationLog {
            task: t,
            iteration: i,
            global_iter: state.global_iter,
            terms,
            d_updates: run.d_updates,
            g_updates: run.g_updates,
            ra_grad_max_abs: ra_grad,
        };
        observer.on_iteration(&log, &state.params)?;
        if (i + 1) % cfg.eval_every == 0 {
            let mut rows = loss_rows(&log);
            if let Some(ev) = evaluator {
                let mut erng = Rng::derive(cfg.seed, Stream::Eval, state.global_iter);
                let cats = seen_categories(cfg.strategy, t, m);
                let r = ev.evaluate(&state.params, &cats, &mut erng)?;
                let row = |metric, category, value| MetricRow {
                    global_iter: state.global_iter,
                    task: t,
                    metric,
                    category,
                    value,
                };
                for &(c, a) in &r.accuracy.per_category {
                    rows.push(row("acc", c, a));
                }
                rows.push(row("acc_mean", 0, r.accuracy.mean));
                for &(c, f) in &r.fd {
                    rows.push(row("fd", c, f));
                }
            }
            observer.on_eval(&rows, &state.params)?;
            report.extend(rows);
        }
    }
    state.task = t;
    observer.on_task_end(state, &snapshot)?;
    Ok(())
}

fn loss_rows(log: &IterationLog) -> Vec<MetricRow> {
    let t = &log.terms;
    [
        ("loss_g", t.gan_g),
        ("loss_d", t.gan_d),
        ("gp", t.gp),
        ("cls_g", t.cls_g),
        ("cls_d", t.cls_d),
        ("ewc", t.ewc),
        ("ra", t.ra),
    ]
    .into_iter()
    .map(|(metric, value)| MetricRow {
        global_iter: log.global_iter,
        task: log.task,
        metric,
        category: 0,
        value,
    })
    .collect()
}

/// Trains every remaining task of `schedule`, continuing from `state`.
pub fn run_sequence<S: Scalar>(
    cfg: &TrainConfig,
    schedule: &TaskSchedule<S>,
    state: &mut TrainerState<S>,
    evaluator: Option<&Evaluator<S>>,
    observer: &mut dyn Observer<S>,
) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    if state.params.arch.latent_dim != cfg.latent_dim {
        return Err(Error::InvalidArgument(format!(
            "model latent dimension {} differs from configured {}",
            state.params.arch.latent_dim, cfg.latent_dim
        )));
    }
    let joint = match cfg.strategy {
        Strategy::Jt => Some(schedule.all_train()?),
        _ => None,
    };
    let mut report = Vec::new();
    while state.task < schedule.categories() {
        train_task(
            cfg,
            schedule,
            state,
            evaluator,
            observer,
            &mut report,
            joint.as_ref(),
        )?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gauss2d_tasks, Gauss2DSpec};
    use crate::models::OutputKind;

    fn tiny_arch(m: usize) -> Arch {
        Arch {
            latent_dim: 4,
            gen_hidden: [12, 12],
            output: OutputKind::Points2D,
            disc_hidden: [12, 12],
            categories: m,
        }
    }

    fn schedule(m: usize) -> TaskSchedule<f64> {
        let specs: Vec<_> = (0..m)
            .map(|i| Gauss2DSpec::single([2.0 * i as f64 - 2.0, 1.0], 0.2))
            .collect();
        make_gauss2d_tasks(5, &specs, 64, 16).unwrap()
    }

    fn config(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            iters_per_task: 12,
            eval_every: 4,
            n_critic: 3,
            batch_size: 8,
            fisher_samples: 16,
            latent_dim: 4,
            seed: 11,
            strategy,
            ..TrainConfig::default()
        }
    }

    #[derive(Default)]
    struct Recorder {
        logs: Vec<IterationLog>,
        starts: Vec<ModelParams<f64>>,
        ends: Vec<(ModelParams<f64>, ModelParams<f64>)>,
        snapshot_ok: bool,
    }

    impl Observer<f64> for Recorder {
        fn on_task_start(&mut self, _task: usize, params: &ModelParams<f64>) -> Result<()> {
            self.starts.push(params.clone());
            self.snapshot_ok = true;
            Ok(())
        }

        fn on_iteration(&mut self, log: &IterationLog, _params: &ModelParams<f64>) -> Result<()> {
            self.logs.push(log.clone());
            Ok(())
        }

        fn on_task_end(
            &mut self,
            state: &TrainerState<f64>,
            snapshot: &ModelParams<f64>,
        ) -> Result<()> {
            let start = self.starts.last().unwrap();
            self.snapshot_ok &= snapshot.generator == start.generator;
            self.ends.push((state.params.clone(), snapshot.clone()));
            Ok(())
        }
    }

    fn run(cfg: &TrainConfig, m: usize) -> (TrainerState<f64>, Recorder, Vec<MetricRow>) {
        let sched = schedule(m);
        let mut state = TrainerState::new(tiny_arch(m), cfg.seed);
        let mut rec = Recorder::default();
        let report = run_sequence(cfg, &sched, &mut state, None, &mut rec).unwrap();
        (state, rec, report)
    }

    #[test]
    fn ra_on_first_task_matches_sft() {
        let (a, la, ra) = run(&config(Strategy::MerganRa), 1);
        let (b, lb, rb) = run(&config(Strategy::Sft), 1);
        assert_eq!(a, b);
        assert_eq!(la.logs, lb.logs);
        assert_eq!(ra, rb);
    }

    #[test]
    fn ewc_without_penalty_matches_sft() {
        let cfg = TrainConfig {
            lambda_ewc: 0.0,
            ..config(Strategy::Ewc)
        };
        let (a, la, _) = run(&cfg, 3);
        let (b, lb, _) = run(&config(Strategy::Sft), 3);
        assert_eq!(a.params, b.params);
        assert_eq!(la.logs, lb.logs);
    }

    #[test]
    fn jtr_on_first_task_matches_joint_training() {
        let (a, la, _) = run(&config(Strategy::MerganJtr), 1);
        let (b, lb, _) = run(&config(Strategy::Jt), 1);
        assert_eq!(a, b);
        assert_eq!(la.logs, lb.logs);
    }

    #[test]
    fn penalties_vanish_at_task_start() {
        for strategy in [Strategy::Ewc, Strategy::MerganRa] {
            let (_, rec, _) = run(&config(strategy), 3);
            let firsts: Vec<_> = rec
                .logs
                .iter()
                .filter(|l| l.iteration == 0 && l.task > 1)
                .collect();
            assert_eq!(firsts.len(), 2);
            for l in firsts {
                assert_eq!(l.terms.ewc, 0.0);
                assert_eq!(l.terms.ra, 0.0);
                if strategy == Strategy::MerganRa {
                    assert_eq!(l.ra_grad_max_abs, Some(0.0));
                }
            }
            // later iterations move away from the anchor
            let later = rec.logs.iter().filter(|l| l.task > 1 && l.iteration > 0);
            assert!(later.map(|l| l.terms.ewc + l.terms.ra).any(|v| v > 0.0));
        }
    }

    #[test]
    fn tasks_continue_from_previous_parameters() {
        for strategy in Strategy::ALL {
            let (_, rec, _) = run(&config(strategy), 3);
            assert!(rec.snapshot_ok, "{strategy}");
            for t in 1..3 {
                assert_eq!(rec.starts[t], rec.ends[t - 1].0, "{strategy}");
            }
        }
    }

    #[test]
    fn update_counts_follow_critic_schedule() {
        let cfg = config(Strategy::MerganJtr);
        let (state, rec, _) = run(&cfg, 2);
        let last = rec.logs.last().unwrap();
        assert_eq!(last.g_updates, 24);
        assert_eq!(last.d_updates, 24 * 3);
        assert_eq!(state.global_iter, 24);
        for l in &rec.logs {
            assert_eq!(l.d_updates, l.g_updates * cfg.n_critic as u64);
        }
        assert_eq!(state.adam_g.t, 24);
        assert_eq!(state.adam_d.t, 72);
    }

    #[test]
    fn report_rows_per_metric() {
        let (_, _, report) = run(&config(Strategy::Sft), 2);
        let loss_g: Vec<_> = report.iter().filter(|r| r.metric == "loss_g").collect();
        assert_eq!(loss_g.len(), 2 * 12 / 4);
        let iters: Vec<u64> = loss_g.iter().map(|r| r.global_iter).collect();
        assert_eq!(iters, [4, 8, 12, 16, 20, 24]);
    }

    #[test]
    fn runs_are_deterministic() {
        let (a, _, ra) = run(&config(Strategy::Ewc), 2);
        let (b, _, rb) = run(&config(Strategy::Ewc), 2);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn resuming_at_a_boundary_matches_a_full_run() {
        let cfg = config(Strategy::MerganRa);
        let sched = schedule(3);
        let mut full = TrainerState::new(tiny_arch(3), cfg.seed);
        let full_report = run_sequence(&cfg, &sched, &mut full, None, &mut NoObserver).unwrap();

        let mut part = TrainerState::new(tiny_arch(3), cfg.seed);
        let mut report = Vec::new();
        train_task(
            &cfg,
            &sched,
            &mut part,
            None,
            &mut NoObserver,
            &mut report,
            None,
        )
        .unwrap();
        let saved = part.clone();
        let mut resumed = saved;
        report.extend(run_sequence(&cfg, &sched, &mut resumed, None, &mut NoObserver).unwrap());
        assert_eq!(resumed, full);
        assert_eq!(report, full_report);
    }

    #[test]
    fn mismatched_latent_is_rejected() {
        let cfg = TrainConfig {
            latent_dim: 5,
            ..config(Strategy::Sft)
        };
        let mut state = TrainerState::new(tiny_arch(1), 0);
        assert!(run_sequence(&cfg, &schedule(1), &mut state, None, &mut NoObserver).is_err());
    }
}
