use mergan_core::numerics::{finite_diff_check, Graph, GraphError, Rng, Tensor, Var, LEAKY_SLOPE};

type T = Tensor<f64>;
type G = Graph<f64>;

fn randn(rng: &mut Rng, shape: &[usize]) -> T {
    mergan_core::numerics::sample_gaussian(rng, shape)
}

/// Contracts an op output against a fixed random weight so every output
/// coordinate contributes a distinct amount to the scalar.
fn weighted_sum(g: &mut G, y: Var, seed: u64) -> Result<Var, GraphError> {
    let mut rng = Rng::new(seed);
    let shape = g.shape(y).to_vec();
    let w = g.leaf(&randn(&mut rng, &shape));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

type OpFn = fn(&mut G, &[Var]) -> Result<Var, GraphError>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    /// Maps a standard normal sample into the op's domain.
    domain: fn(f64) -> f64,
    build: OpFn,
}

fn id(x: f64) -> f64 {
    x
}
fn positive(x: f64) -> f64 {
    0.5 + x.abs()
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            shapes: &[&[3, 4], &[4, 2]],
            domain: id,
            build: |g, v| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_ta",
            shapes: &[&[4, 3], &[4, 2]],
            domain: id,
            build: |g, v| g.matmul_t(v[0], true, v[1], false),
        },
        OpCase {
            name: "matmul_tb",
            shapes: &[&[3, 4], &[2, 4]],
            domain: id,
            build: |g, v| g.matmul_t(v[0], false, v[1], true),
        },
        OpCase {
            name: "matmul_tab",
            shapes: &[&[4, 3], &[2, 4]],
            domain: id,
            build: |g, v| g.matmul_t(v[0], true, v[1], true),
        },
        OpCase {
            name: "add",
            shapes: &[&[2, 3], &[2, 3]],
            domain: id,
            build: |g, v| g.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            shapes: &[&[2, 3], &[2, 3]],
            domain: id,
            build: |g, v| g.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            shapes: &[&[2, 3], &[2, 3]],
            domain: id,
            build: |g, v| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            shapes: &[&[5]],
            domain: id,
            build: |g, v| g.scale(v[0], -1.7),
        },
        OpCase {
            name: "add_scalar",
            shapes: &[&[5]],
            domain: id,
            build: |g, v| g.add_scalar(v[0], 0.3),
        },
        OpCase {
            name: "recip",
            shapes: &[&[5]],
            domain: positive,
            build: |g, v| g.recip(v[0]),
        },
        OpCase {
            name: "sqrt",
            shapes: &[&[5]],
            domain: positive,
            build: |g, v| g.sqrt(v[0]),
        },
        OpCase {
            name: "square",
            shapes: &[&[5]],
            domain: id,
            build: |g, v| g.square(v[0]),
        },
        OpCase {
            name: "tanh",
            shapes: &[&[5]],
            domain: id,
            build: |g, v| g.tanh(v[0]),
        },
        OpCase {
            name: "leaky_relu",
            shapes: &[&[6]],
            domain: id,
            build: |g, v| g.leaky_relu(v[0], LEAKY_SLOPE),
        },
        OpCase {
            name: "relu",
            shapes: &[&[6]],
            domain: id,
            build: |g, v| g.relu(v[0]),
        },
        OpCase {
            name: "reshape",
            shapes: &[&[2, 3]],
            domain: id,
            build: |g, v| g.reshape(v[0], &[3, 2]),
        },
        OpCase {
            name: "concat_rows",
            shapes: &[&[2, 3], &[1, 3]],
            domain: id,
            build: |g, v| g.concat_rows(&[v[0], v[1]]),
        },
        OpCase {
            name: "slice_rows",
            shapes: &[&[4, 2]],
            domain: id,
            build: |g, v| g.slice_rows(v[0], 1, 2),
        },
        OpCase {
            name: "sum_all",
            shapes: &[&[2, 3]],
            domain: id,
            build: |g, v| g.sum_all(v[0]),
        },
        OpCase {
            name: "mean_all",
            shapes: &[&[2, 3]],
            domain: id,
            build: |g, v| g.mean_all(v[0]),
        },
        OpCase {
            name: "broadcast_scalar",
            shapes: &[&[1]],
            domain: id,
            build: |g, v| g.broadcast_scalar(v[0], &[2, 2]),
        },
        OpCase {
            name: "sum_rows",
            shapes: &[&[3, 2]],
            domain: id,
            build: |g, v| g.sum_rows(v[0]),
        },
        OpCase {
            name: "broadcast_rows",
            shapes: &[&[3]],
            domain: id,
            build: |g, v| g.broadcast_rows(v[0], 2),
        },
        OpCase {
            name: "sum_cols",
            shapes: &[&[3, 2]],
            domain: id,
            build: |g, v| g.sum_cols(v[0]),
        },
        OpCase {
            name: "broadcast_cols",
            shapes: &[&[3]],
            domain: id,
            build: |g, v| g.broadcast_cols(v[0], 2),
        },
        OpCase {
            name: "softmax",
            shapes: &[&[2, 4]],
            domain: id,
            build: |g, v| g.softmax(v[0]),
        },
        OpCase {
            name: "softmax_cross_entropy",
            shapes: &[&[3, 4]],
            domain: id,
            build: |g, v| {
                let t = g.leaf(&Tensor::matrix(
                    3,
                    4,
                    vec![
                        1.0, 0.0, 0.0, 0.0, //
                        0.0, 0.0, 1.0, 0.0, //
                        0.0, 0.0, 0.0, 1.0,
                    ],
                )?);
                g.softmax_cross_entropy(v[0], t)
            },
        },
        OpCase {
            name: "row_norm",
            shapes: &[&[3, 4]],
            domain: id,
            build: |g, v| g.row_norm(v[0]),
        },
        OpCase {
            name: "batch_moments",
            shapes: &[&[5, 3]],
            domain: id,
            build: |g, v| {
                let (m, var) = g.batch_moments(v[0])?;
                let s = g.sqrt(var)?;
                g.add(m, s)
            },
        },
    ]
}

#[test]
fn every_primitive_matches_central_differences_at_100_points() {
    for case in cases() {
        let mut rng = Rng::new(0xD1FF);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for point_idx in 0..100u64 {
            let point: Vec<T> = case
                .shapes
                .iter()
                .map(|s| randn(&mut rng, s).map(case.domain))
                .collect();
            let build = case.build;
            let report = finite_diff_check(
                move |g: &mut G, v: &[Var]| {
                    let y = build(g, v)?;
                    weighted_sum(g, y, point_idx)
                },
                &point,
                1e-5,
                1e-4,
            )
            .unwrap();
            worst = worst.max(report.max_rel_err);
            checked += report.checked;
        }
        assert!(checked > 0, "{}: nothing checked", case.name);
        assert!(
            worst < 1e-4,
            "{}: worst relative error {worst:e}",
            case.name
        );
    }
}

#[test]
fn forward_values_at_single_points() {
    let mut g = G::new();
    let z = g.leaf(&T::scalar(0.0));
    let t = g.tanh(z).unwrap();
    assert_eq!(g.scalar(t), 0.0);

    let x = g.leaf(&T::scalar(-1.0));
    let l = g.leaky_relu(x, LEAKY_SLOPE).unwrap();
    assert!((g.scalar(l) + 0.2).abs() < 1e-15);

    let logits = g.leaf(&T::matrix(1, 10, vec![0.7; 10]).unwrap());
    let mut onehot = vec![0.0; 10];
    onehot[3] = 1.0;
    let tgt = g.leaf(&T::matrix(1, 10, onehot).unwrap());
    let ce = g.softmax_cross_entropy(logits, tgt).unwrap();
    assert!((g.scalar(ce) - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = G::new();
    let a = g.leaf(&T::zeros(&[2, 3]));
    let b = g.leaf(&T::zeros(&[3, 2]));
    let err = g.add(a, b).unwrap_err();
    assert_eq!(
        err,
        GraphError::ShapeMismatch {
            op: "add",
            lhs: vec![2, 3],
            rhs: vec![3, 2]
        }
    );
    assert!(err.to_string().contains("add"));
    let err = g.matmul(a, a).unwrap_err();
    assert!(matches!(
        err,
        GraphError::ShapeMismatch { op: "matmul", .. }
    ));
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut g = G::new();
    let p = g.leaf(&T::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap());
    let s = g.sum_all(p).unwrap();
    let d = g.grad(s, &[p]).unwrap();
    assert_eq!(g.value(d[0]), &[1.0; 6]);
    assert_eq!(g.shape(d[0]), &[2, 3]);
}

#[test]
fn gradient_of_sum_of_squares() {
    let mut g = G::new();
    let p = g.leaf(&T::from_vec(vec![1.0, 2.0, 3.0]));
    let sq = g.square(p).unwrap();
    let s = g.sum_all(sq).unwrap();
    let d = g.grad(s, &[p]).unwrap();
    assert_eq!(g.value(d[0]), &[2.0, 4.0, 6.0]);
}

#[test]
fn norm_penalty_gradient_matches_frozen_finite_differences() {
    // Central differences (h = 1e-5) of (‖w‖ - 1)² at w = (3, 4) give
    // (4.8, 6.4), matching the closed form 2(‖w‖-1)·w/‖w‖.
    let loss = |w: [f64; 2]| ((w[0] * w[0] + w[1] * w[1]).sqrt() - 1.0).powi(2);
    let h = 1e-5;
    let fd = [
        (loss([3.0 + h, 4.0]) - loss([3.0 - h, 4.0])) / (2.0 * h),
        (loss([3.0, 4.0 + h]) - loss([3.0, 4.0 - h])) / (2.0 * h),
    ];
    assert!((fd[0] - 4.8).abs() < 1e-8 && (fd[1] - 6.4).abs() < 1e-8);

    let mut g = G::new();
    let w = g.leaf(&T::matrix(1, 2, vec![3.0, 4.0]).unwrap());
    let n = g.row_norm(w).unwrap();
    let d = g.add_scalar(n, -1.0).unwrap();
    let sq = g.square(d).unwrap();
    let l = g.sum_all(sq).unwrap();
    let grad = g.grad(l, &[w]).unwrap();
    let v = g.value(grad[0]);
    assert!((v[0] - 4.8).abs() < 1e-12 && (v[1] - 6.4).abs() < 1e-12);

    // The gradient is itself differentiable: d/dw of sum(∂l/∂w).
    let s = g.sum_all(grad[0]).unwrap();
    let hess_row = g.grad(s, &[w]).unwrap();
    assert!(g.value(hess_row[0]).iter().all(|x| x.is_finite()));
}

#[test]
fn non_scalar_loss_and_foreign_variable_are_errors() {
    let mut g = G::new();
    let p = g.leaf(&T::zeros(&[2]));
    assert!(matches!(
        g.grad(p, &[p]),
        Err(GraphError::NonScalarLoss { .. })
    ));
    let mut other = G::new();
    let q = other.leaf(&T::zeros(&[1]));
    let s = g.sum_all(p).unwrap();
    assert!(matches!(
        g.grad(s, &[q]),
        Err(GraphError::ForeignVar { .. })
    ));
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut g = G::new();
    let p = g.leaf(&T::from_vec(vec![1.0, 2.0]));
    let q = g.leaf(&T::from_vec(vec![5.0]));
    let s = g.sum_all(p).unwrap();
    let d = g.grad(s, &[q]).unwrap();
    assert_eq!(g.value(d[0]), &[0.0]);
}

#[test]
fn finite_diff_check_on_sum_of_squares() {
    let report = finite_diff_check(
        |g: &mut G, v: &[Var]| {
            let s = g.square(v[0])?;
            g.sum_all(s)
        },
        &[T::from_vec(vec![1.0, 2.0])],
        1e-5,
        1e-8,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.max_rel_err < 1e-8);
}

/// `sum_i ‖∇_x D(x_i)‖` for a two-layer leaky-relu critic `D`.
fn input_gradient_norm(g: &mut G, v: &[Var]) -> Result<Var, GraphError> {
    let (w1, b1, w2, x) = (v[0], v[1], v[2], v[3]);
    let h = g.linear(x, w1, Some(b1))?;
    let a = g.leaky_relu(h, LEAKY_SLOPE)?;
    let s = g.matmul(a, w2)?;
    let total = g.sum_all(s)?;
    let dx = g.grad(total, &[x])?[0];
    let n = g.row_norm(dx)?;
    g.sum_all(n)
}

#[test]
fn second_order_gradients_of_input_gradient_norm() {
    let mut rng = Rng::new(77);
    for _ in 0..5 {
        let point = vec![
            randn(&mut rng, &[3, 5]),
            randn(&mut rng, &[5]),
            randn(&mut rng, &[5, 1]),
            randn(&mut rng, &[4, 3]),
        ];
        let report = finite_diff_check(input_gradient_norm, &point, 1e-5, 1e-3).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let run = || {
        let mut rng = Rng::new(3);
        let mut g = G::new();
        let a = g.leaf(&randn(&mut rng, &[16, 32]));
        let b = g.leaf(&randn(&mut rng, &[32, 8]));
        let y = g.matmul(a, b).unwrap();
        let t = g.tanh(y).unwrap();
        let s = g.sum_all(t).unwrap();
        let d = g.grad(s, &[a, b]).unwrap();
        (g.tensor(t), g.tensor(d[0]), g.tensor(d[1]))
    };
    assert_eq!(run(), run());
}

#[test]
fn finite_checks_flag_nan() {
    let mut g = G::new().with_finite_checks();
    let x = g.leaf(&T::from_vec(vec![-1.0]));
    let err = g.sqrt(x).unwrap_err();
    assert_eq!(err, GraphError::NonFinite { op: "sqrt" });
}
