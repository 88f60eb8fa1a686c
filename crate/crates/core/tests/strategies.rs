use mergan_core::data::{
    make_gauss2d_tasks, make_glyph_tasks, Gauss2DSpec, GlyphSpec, TaskSchedule,
};
use mergan_core::losses::estimate_fisher;
use mergan_core::metrics::{accuracy, train_proxy, ClassifierConfig};
use mergan_core::models::{Arch, Mode, ModelParams};
use mergan_core::numerics::{sample_gaussian, Rng, Stream};
use mergan_core::strategies::{
    run_sequence, NoObserver, Observer, Strategy, TrainConfig, TrainerState,
};
use mergan_core::Result;

const MEANS: [[f64; 2]; 2] = [[-1.5, 0.5], [1.5, -0.5]];

fn two_gaussians() -> TaskSchedule<f64> {
    let specs: Vec<_> = MEANS.iter().map(|&m| Gauss2DSpec::single(m, 0.1)).collect();
    make_gauss2d_tasks(3, &specs, 1000, 100).unwrap()
}

fn sample_mean(params: &ModelParams<f64>, c: usize, n: usize, rng: &mut Rng) -> [f64; 2] {
    let z = sample_gaussian(rng, &[n, params.arch.latent_dim]);
    let x = params.generate(&z, &vec![c; n], Mode::Eval).unwrap();
    let mut m = [0.0; 2];
    for i in 0..n {
        m[0] += x.row(i)[0] / n as f64;
        m[1] += x.row(i)[1] / n as f64;
    }
    m
}

#[test]
fn joint_training_recovers_gaussian_means() {
    let schedule = two_gaussians();
    // Joint training runs one slot per category, 2 × 1000 = 2000 iterations.
    // At the image learning rate the toy has not converged by then.
    let cfg = TrainConfig {
        strategy: Strategy::Jt,
        iters_per_task: 1000,
        learning_rate: 3e-4,
        eval_every: 1000,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut state = TrainerState::new(Arch::points2d(2), cfg.seed);
    run_sequence(&cfg, &schedule, &mut state, None, &mut NoObserver).unwrap();
    assert_eq!(state.global_iter, 2000);
    let mut rng = Rng::derive(3, Stream::Eval, 0);
    for (c, want) in MEANS.iter().enumerate() {
        let got = sample_mean(&state.params, c + 1, 2000, &mut rng);
        let dist = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt();
        assert!(
            dist < 0.25,
            "category {}: mean {got:?}, want {want:?}",
            c + 1
        );
    }
}

/// Generator trainable tensors at the end of each task.
#[derive(Default)]
struct TaskEnds(Vec<TrainerState<f64>>);

impl Observer<f64> for TaskEnds {
    fn on_task_end(
        &mut self,
        state: &TrainerState<f64>,
        _snapshot: &ModelParams<f64>,
    ) -> Result<()> {
        self.0.push(state.clone());
        Ok(())
    }
}

fn flat(params: &ModelParams<f64>) -> Vec<f64> {
    params
        .generator
        .trainable()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect()
}

#[test]
fn ewc_holds_important_weights_harder_as_lambda_grows() {
    let schedule = two_gaussians();
    let lambdas = [0.0, 1e2, 1e4, 1e9, 1e12];
    let cfg = |lambda_ewc| TrainConfig {
        strategy: Strategy::Ewc,
        iters_per_task: 300,
        eval_every: 300,
        batch_size: 32,
        fisher_samples: 128,
        lambda_ewc,
        seed: 8,
        ..TrainConfig::default()
    };
    let runs: Vec<TaskEnds> = lambdas
        .iter()
        .map(|&l| {
            let mut ends = TaskEnds::default();
            let mut state = TrainerState::new(Arch::points2d(2), 8);
            run_sequence(&cfg(l), &schedule, &mut state, None, &mut ends).unwrap();
            ends
        })
        .collect();
    for r in &runs[1..] {
        assert_eq!(
            r.0[0], runs[0].0[0],
            "task 1 does not depend on the penalty"
        );
    }

    let anchor = &runs[0].0[0].params;
    let fisher = estimate_fisher(anchor, 2, 128, &mut Rng::derive(8, Stream::Fisher, 2)).unwrap();
    let f: Vec<f64> = fisher
        .fisher
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let mut sorted = f.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[sorted.len() * 9 / 10];
    assert!(cut > 0.0);
    let high = f.iter().filter(|&&fi| fi >= cut).count();
    let theta0 = flat(anchor);
    let moved: Vec<f64> = runs
        .iter()
        .map(|run| {
            flat(&run.0[1].params)
                .iter()
                .zip(&theta0)
                .zip(&f)
                .filter(|(_, &fi)| fi >= cut)
                .map(|((a, b), _)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for i in 1..3 {
        assert!(
            moved[i] < 0.5 * moved[i - 1],
            "‖Δθ‖ by λ {lambdas:?}: {moved:?}"
        );
    }
    // From here on the displacement is bounded by Adam's per-step size.
    let floor = cfg(0.0).learning_rate * (high as f64).sqrt();
    assert!(
        moved[3] < floor && moved[4] < floor,
        "‖Δθ‖ by λ {lambdas:?}: {moved:?}, floor {floor:e}"
    );
}

#[test]
fn fine_tuning_forgets_the_first_glyph() {
    let schedule: TaskSchedule<f32> =
        make_glyph_tasks(6, 1000, 200, 2, &GlyphSpec::default()).unwrap();
    let proxy = train_proxy(&schedule, &ClassifierConfig::default(), 6).unwrap();
    let cfg = TrainConfig {
        strategy: Strategy::Sft,
        eval_every: 2000,
        seed: 6,
        ..TrainConfig::default()
    };
    let mut state = TrainerState::new(Arch::image(2, 16, 16), 6);
    run_sequence(&cfg, &schedule, &mut state, None, &mut NoObserver).unwrap();
    let report = accuracy(
        &state.params,
        &[1, 2],
        &proxy,
        256,
        &mut Rng::derive(6, Stream::Eval, 0),
    )
    .unwrap();
    let first = report.per_category[0];
    assert_eq!(first.0, 1);
    assert!(
        first.1 < 0.3,
        "category 1 accuracy after task 2: {}",
        first.1
    );
}
