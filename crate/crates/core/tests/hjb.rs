mod common;

use approx::assert_relative_eq;
use evict::hjb::{evaluate, hjb_loss, shape_penalty, train_hjb, write_loss_log, FHat, HjbConfig, HoldingOnly, PenaltyConfig, ZeroF};
use evict::neural::{LrSchedule, Mlp};
use evict::rbm::{discretize, sample_reference_rates, stream_rng, ModelParams, PathBatch};
use ndarray::{array, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy(p: f64) -> ModelParams<f64> {
    ModelParams::new(vec![5.0, 3.0], vec![2.0, 1.5], vec![0.02, 0.02], 4.0, p, 0.005, 0.02, 1.0).unwrap()
}

fn batch(params: &ModelParams<f64>, n: usize, horizon: f64, seed: u64) -> (PathBatch<f64>, Array2<f64>) {
    let z0 = vec![10.0; params.dim()];
    let mut mu = Array2::zeros((n, params.dim()));
    let mut paths = Vec::new();
    for i in 0..n {
        let mut rng = stream_rng(seed, 0, i as u64);
        let pol = sample_reference_rates(params, &mut rng);
        mu.row_mut(i).assign(&Array1::from(pol.mu.clone()));
        paths.push(discretize(params, &pol, &z0, horizon, 1.0, &mut rng).unwrap());
    }
    (PathBatch::from_bundles(&paths).unwrap(), mu)
}

fn nets(dim: usize, seed: u64) -> (Mlp<f64>, Mlp<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (Mlp::he(&[dim, 8, 1], &mut rng).unwrap(), Mlp::he(&[dim, 8, dim], &mut rng).unwrap())
}

#[test]
fn zero_nets_zero_value_zero_penalty_give_zero_loss() {
    let params = toy(0.0);
    let (b, mu) = batch(&params, 16, 30.0, 1);
    let v = Mlp::zeros(&[2, 4, 1]).unwrap();
    let g = Mlp::zeros(&[2, 4, 2]).unwrap();
    let (loss, stats) = hjb_loss(&b, mu.view(), &v, &g, &params, &ZeroF).unwrap();
    assert_eq!(loss, 0.0);
    assert!(stats.iter().all(|&s| s == 0.0));
}

#[test]
fn identical_paths_give_zero_loss_for_any_nets() {
    let params = toy(1.0);
    let (one, mu1) = batch(&params, 1, 40.0, 2);
    let dup = PathBatch {
        states: ndarray::concatenate![ndarray::Axis(0), one.states, one.states],
        increments: ndarray::concatenate![ndarray::Axis(0), one.increments, one.increments],
        u: ndarray::concatenate![ndarray::Axis(0), one.u, one.u],
        dt: one.dt,
    };
    let mu = ndarray::concatenate![ndarray::Axis(0), mu1, mu1];
    let f = HoldingOnly { holding: vec![0.005, 0.02] };
    for seed in 0..5 {
        let (v, g) = nets(2, seed);
        let (loss, _) = hjb_loss(&dup, mu.view(), &v, &g, &params, &f).unwrap();
        assert_eq!(loss, 0.0);
    }
}

#[test]
fn holding_only_loss_is_variance_of_path_holding() {
    let params = toy(1.0);
    let (b, mu) = batch(&params, 2, 25.0, 3);
    let v = Mlp::zeros(&[2, 3, 1]).unwrap();
    let g = Mlp::zeros(&[2, 3, 2]).unwrap();
    let f = HoldingOnly { holding: vec![0.005, 0.02] };
    let (loss, stats) = hjb_loss(&b, mu.view(), &v, &g, &params, &f).unwrap();
    let n = b.steps();
    let hand: Vec<f64> = (0..2)
        .map(|i| {
            let held: f64 = (0..n).map(|t| 0.005 * b.states[(i, t, 0)] + 0.02 * b.states[(i, t, 1)]).sum();
            held + params.p * b.u[(i, 0)]
        })
        .collect();
    for i in 0..2 {
        assert_relative_eq!(stats[i], hand[i], max_relative = 1e-12);
    }
    let var = ((hand[0] - hand[1]) / 2.0).powi(2);
    assert_relative_eq!(loss, var, max_relative = 1e-10);
}

#[test]
fn adding_a_constant_to_v_leaves_the_loss() {
    let params = toy(1.0);
    let (b, mu) = batch(&params, 32, 30.0, 4);
    let (mut v, g) = nets(2, 5);
    let f = HoldingOnly { holding: vec![0.005, 0.02] };
    let (before, _) = hjb_loss(&b, mu.view(), &v, &g, &params, &f).unwrap();
    v.biases[1][0] += 123.456;
    let (after, _) = hjb_loss(&b, mu.view(), &v, &g, &params, &f).unwrap();
    assert_relative_eq!(before, after, max_relative = 1e-9);
}

#[test]
fn right_boundary_with_zero_g_costs_ten_p_squared() {
    let params = toy(1.7);
    let cfg = PenaltyConfig { lambda1: 1.0, lambda2: 10.0, lambda3: 4.0, eps: 1e-3, z_inf: vec![50.0] };
    let g = Mlp::zeros(&[2, 2]).unwrap();
    let states = array![[params.b[0], 7.0]];
    let t = shape_penalty(&g, states.view(), &params, &cfg).unwrap();
    assert_eq!(t.left, 0.0);
    assert_relative_eq!(cfg.lambda2 * t.right, 10.0 * 1.7 * 1.7, max_relative = 1e-15);
    // G = 0 misses the no-deadline limit c2 / gamma = 1
    assert_relative_eq!(t.infinity, 1.0, max_relative = 1e-12);
}

#[test]
fn interior_states_leave_only_the_infinity_term() {
    let params = toy(1.0);
    let cfg = PenaltyConfig::standard(&[25.0], 4.0);
    let (_, g) = nets(2, 6);
    let states = array![[3.0, 4.0], [10.0, 0.5], [19.0, 30.0]];
    let t = shape_penalty(&g, states.view(), &params, &cfg).unwrap();
    assert_eq!((t.left, t.right), (0.0, 0.0));
    assert!(t.infinity > 0.0);
    assert_eq!(t.total, 4.0 * t.infinity);
}

#[test]
fn boundary_perfect_g_has_no_penalty() {
    // b = 4, p = 1, c2 / gamma = 2 at z_inf = 2: G_k(z) = z_k / 4 and z_{K+k}
    let params = ModelParams::new(vec![1.0, 1.0], vec![1.0, 1.0], vec![0.01, 0.01], 4.0, 1.0, 0.005, 0.02, 1.0).unwrap();
    let g = Mlp::from_layers(vec![array![[0.25, 0.0], [0.0, 1.0]]], vec![array![0.0, 0.0]]).unwrap();
    let cfg = PenaltyConfig { lambda1: 1.0, lambda2: 10.0, lambda3: 4.0, eps: 1e-3, z_inf: vec![2.0] };
    let states = array![[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 9.0], [2.0, 2.0]];
    let t = shape_penalty(&g, states.view(), &params, &cfg).unwrap();
    assert_eq!(t.total, 0.0);
}

#[test]
fn penalty_rejects_wrong_z_inf_length() {
    let params = toy(1.0);
    let cfg = PenaltyConfig::standard(&[1.0, 2.0], 4.0);
    let g = Mlp::zeros(&[2, 2]).unwrap();
    assert!(shape_penalty(&g, array![[1.0, 1.0]].view(), &params, &cfg).is_err());
}

/// `F = sum a_c v_c^2 / 2 - holding`, so dF/dv is nonzero.
struct Quadratic(Vec<f64>);

impl FHat<f64> for Quadratic {
    fn eval(&self, z: ArrayView2<f64>, v: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let f = (0..z.nrows())
            .map(|r| (0..z.ncols()).map(|c| 0.5 * self.0[c] * v[(r, c)] * v[(r, c)] - 0.01 * z[(r, c)]).sum())
            .collect();
        let mut d = v.to_owned();
        for mut row in d.rows_mut() {
            row.iter_mut().zip(&self.0).for_each(|(x, a)| *x *= a);
        }
        (f, d)
    }
}

#[test]
fn loss_and_penalty_gradients_match_central_differences() {
    let params = toy(1.0);
    let (b, mu) = batch(&params, 6, 12.0, 7);
    let cfg = PenaltyConfig::standard(&[8.0], 4.0);
    let f = Quadratic(vec![0.3, 0.7]);
    let (v, g) = nets(2, 8);
    let rows = b.states.slice(ndarray::s![.., ..12, ..]).to_shape((72, 2)).unwrap().into_owned();
    assert!(common::min_kink_margin(&g, &rows) > 1e-4);
    let e = evaluate(&b, mu.view(), &v, &g, &params, &f, Some(&cfg)).unwrap();
    let total = |v: &Mlp<f64>, g: &Mlp<f64>| {
        let e = evaluate(&b, mu.view(), v, g, &params, &f, Some(&cfg)).unwrap();
        e.loss + e.penalty.total
    };
    let fd_v = common::fd_param_grad(&v, |vv| total(vv, &g), 1e-6);
    let fd_g = common::fd_param_grad(&g, |gg| total(&v, gg), 1e-6);
    assert!(common::max_rel_err(&e.grad_v.flat_params(), &fd_v, 1e-6) < 1e-5);
    assert!(common::max_rel_err(&e.grad_g.flat_params(), &fd_g, 1e-6) < 1e-5);
}

#[test]
fn loss_rejects_single_path_and_bad_shapes() {
    let params = toy(1.0);
    let (one, mu1) = batch(&params, 1, 5.0, 9);
    let (v, g) = nets(2, 9);
    assert!(hjb_loss(&one, mu1.view(), &v, &g, &params, &ZeroF).is_err());
    let (b, mu) = batch(&params, 4, 5.0, 9);
    let wrong = Mlp::zeros(&[2, 3, 1]).unwrap();
    assert!(hjb_loss(&b, mu.view(), &v, &wrong, &params, &ZeroF).is_err());
    assert!(hjb_loss(&b, mu.view(), &g, &g, &params, &ZeroF).is_err());
}

fn smoke_config(iterations: usize) -> HjbConfig {
    HjbConfig {
        hidden: vec![16, 16],
        horizon: 30.0,
        dt: 1.0,
        batch: 32,
        iterations,
        schedule: LrSchedule::constant(0.005),
        penalty: Some(PenaltyConfig::standard(&[40.0], 4.0)),
        z0: vec![8.0, 6.0],
        seed: 5,
    }
}

#[test]
fn toy_training_lowers_the_loss() {
    let params = toy(1.0);
    let f = HoldingOnly { holding: vec![0.005, 0.02] };
    let out = train_hjb(&params, &f, &smoke_config(50)).unwrap();
    assert_eq!(out.diverged_at, None);
    assert_eq!(out.log.len(), 50);
    assert!(out.log[49].loss < out.log[0].loss, "{} vs {}", out.log[49].loss, out.log[0].loss);
}

#[test]
fn training_is_reproducible() {
    let params = toy(1.0);
    let f = HoldingOnly { holding: vec![0.005, 0.02] };
    let a = train_hjb(&params, &f, &smoke_config(10)).unwrap();
    let b = train_hjb(&params, &f, &smoke_config(10)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.g, b.g);
}

#[test]
fn twelve_zones_give_24_dimensional_nets() {
    use evict::catalog::{LAMBDA, N_MEAN, SIGMA};
    let params = ModelParams::new(LAMBDA.to_vec(), SIGMA.to_vec(), vec![0.008; 24], 72.0, 1.0, 0.005, 0.02, 500.0).unwrap();
    let mut cfg = HjbConfig::standard(N_MEAN.to_vec(), None);
    cfg.iterations = 1;
    cfg.batch = 2;
    let out = train_hjb(&params, &ZeroF, &cfg).unwrap();
    assert_eq!((out.v.input_dim(), out.v.output_dim()), (24, 1));
    assert_eq!((out.g.input_dim(), out.g.output_dim()), (24, 24));
}

struct Poison;

impl FHat<f64> for Poison {
    fn eval(&self, z: ArrayView2<f64>, _v: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        (Array1::from_elem(z.nrows(), f64::NAN), Array2::zeros(z.raw_dim()))
    }
}

#[test]
fn non_finite_statistic_stops_training() {
    let params = toy(1.0);
    let out = train_hjb(&params, &Poison, &smoke_config(5)).unwrap();
    assert_eq!(out.diverged_at, Some(0));
    assert!(out.log.is_empty());
    assert!(out.g.is_finite() && out.v.is_finite());
}

#[test]
fn loss_log_is_csv() {
    let params = toy(1.0);
    let out = train_hjb(&params, &ZeroF, &smoke_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_loss_log(&out.log, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,loss,penalty");
    assert_eq!(lines.len(), 4);
}
