//! Neural HJB solver: the variance-of-martingale-identity loss, boundary shape
//! penalties and the training loop with warm-started reference paths.
//!
//! For each path the statistic is
//! `V(Z_T) - V(Z_0) - sum G(Z_n).dB_n + p sum U_k + sum mu.G(Z_n) dt - sum F(Z_n, G(Z_n)) dt`;
//! the loss is its batch variance (1/B), which vanishes exactly when
//! `G = grad V` solves the HJB equation.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::{Adam, LrSchedule, Mlp};
use crate::rbm::{discretize, in_state_space, sample_reference_rates, stream_rng, ModelParams, PathBatch};
use crate::Scalar;

/// `F(z, v)` on rows of states and gradient candidates, with `dF/dv`.
pub trait FHat<T> {
    fn eval(&self, z: ArrayView2<T>, v: ArrayView2<T>) -> (Array1<T>, Array2<T>);
}

/// `F = 0`.
pub struct ZeroF;

impl<T: Scalar> FHat<T> for ZeroF {
    fn eval(&self, z: ArrayView2<T>, _v: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
        (Array1::zeros(z.nrows()), Array2::zeros(z.raw_dim()))
    }
}

/// `F = -holding cost`: no service value at all.
pub struct HoldingOnly<T> {
    pub holding: Vec<T>,
}

impl<T: Scalar> FHat<T> for HoldingOnly<T> {
    fn eval(&self, z: ArrayView2<T>, _v: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
        let f = z.outer_iter().map(|r| -r.iter().zip(&self.holding).map(|(&a, &c)| a * c).sum::<T>()).collect();
        (f, Array2::zeros(z.raw_dim()))
    }
}

/// Weights and reach of the boundary penalties. `z_inf` (one entry per
/// no-deadline class) is in the same units as the states it is applied to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub eps: f64,
    pub z_inf: Vec<f64>,
}

impl PenaltyConfig {
    /// `z_inf = 2 n_max` for the no-deadline classes, `lambda3 = h`.
    pub fn standard(n_max_no_deadline: &[f64], h: f64) -> Self {
        PenaltyConfig {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: h,
            eps: 1e-3,
            z_inf: n_max_no_deadline.iter().map(|n| 2.0 * n).collect(),
        }
    }

    pub fn scaled(&self, kappa: f64) -> Self {
        PenaltyConfig { z_inf: self.z_inf.iter().map(|z| z / kappa).collect(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTerms {
    pub left: f64,
    pub right: f64,
    pub infinity: f64,
    pub total: f64,
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean squared violations at the lower and upper boundaries over the given
/// rows, and the gradient of `lambda1 left + lambda2 right` w.r.t. the outputs.
fn boundary_terms<T: Scalar>(
    rows: ArrayView2<T>,
    gout: ArrayView2<T>,
    params: &ModelParams<T>,
    cfg: &PenaltyConfig,
) -> (T, T, Array2<T>) {
    let r = rows.nrows();
    let eps = T::of(cfg.eps);
    let (l1, l2) = (T::of(cfg.lambda1), T::of(cfg.lambda2));
    let nr = T::of(r as f64);
    let two = T::of(2.0);
    let mut grad = Array2::zeros(gout.raw_dim());
    let (mut left, mut right) = (T::zero(), T::zero());
    for i in 0..r {
        let z = rows.row(i);
        let g = gout.row(i);
        let mut sl = T::zero();
        let mut sr = T::zero();
        for c in 0..z.len() {
            if z[c].abs() <= eps {
                sl += g[c].abs();
            }
            if c < params.k && (z[c] - params.b[c]).abs() <= eps {
                sr += (g[c] - params.p).abs();
            }
        }
        left += sl * sl;
        right += sr * sr;
        if sl > T::zero() || sr > T::zero() {
            for c in 0..z.len() {
                if z[c].abs() <= eps {
                    grad[(i, c)] += l1 * two * sl * sign(g[c]) / nr;
                }
                if c < params.k && (z[c] - params.b[c]).abs() <= eps {
                    grad[(i, c)] += l2 * two * sr * sign(g[c] - params.p) / nr;
                }
            }
        }
    }
    (left / nr, right / nr, grad)
}

/// Mean squared deviation of `G_k` from `c2 / gamma_k` at states whose
/// coordinate `k` is pushed to `z_inf`; accumulates `lambda3`-weighted
/// parameter gradients when asked.
fn infinity_term<T: Scalar>(
    g: &Mlp<T>,
    base: ArrayView2<T>,
    params: &ModelParams<T>,
    cfg: &PenaltyConfig,
    grads: Option<&mut Mlp<T>>,
) -> T {
    let (s_n, dim, k) = (base.nrows(), base.ncols(), params.k);
    if s_n == 0 || k == 0 {
        return T::zero();
    }
    let mut x = Array2::zeros((s_n * k, dim));
    for i in 0..s_n {
        for j in 0..k {
            let mut row = x.row_mut(i * k + j);
            row.assign(&base.row(i));
            row[k + j] = T::of(cfg.z_inf[j]);
        }
    }
    let (out, tape) = g.forward_tape(x.view());
    let target: Vec<T> = (0..k).map(|j| params.c2 / params.gamma[k + j]).collect();
    let mut total = T::zero();
    let mut sums = vec![T::zero(); s_n];
    for i in 0..s_n {
        let s: T = (0..k).map(|j| (out[(i * k + j, k + j)] - target[j]).abs()).sum();
        sums[i] = s;
        total += s * s;
    }
    let ns = T::of(s_n as f64);
    if let Some(gr) = grads {
        let l3 = T::of(cfg.lambda3);
        let mut gout = Array2::zeros(out.raw_dim());
        for i in 0..s_n {
            for j in 0..k {
                gout[(i * k + j, k + j)] = l3 * T::of(2.0) * sums[i] * sign(out[(i * k + j, k + j)] - target[j]) / ns;
            }
        }
        g.backward(&tape, gout.view(), Some(gr));
    }
    total / ns
}

/// Shape penalty with every term evaluated on `states`.
pub fn shape_penalty<T: Scalar>(g: &Mlp<T>, states: ArrayView2<T>, params: &ModelParams<T>, cfg: &PenaltyConfig) -> Result<PenaltyTerms> {
    check_penalty(params, cfg)?;
    let gout = g.forward_batch(states);
    let (left, right, _) = boundary_terms(states, gout.view(), params, cfg);
    let inf = infinity_term(g, states, params, cfg, None);
    Ok(terms(left, right, inf, cfg))
}

fn terms<T: Scalar>(left: T, right: T, inf: T, cfg: &PenaltyConfig) -> PenaltyTerms {
    let (left, right, infinity) = (left.f64(), right.f64(), inf.f64());
    PenaltyTerms { left, right, infinity, total: cfg.lambda1 * left + cfg.lambda2 * right + cfg.lambda3 * infinity }
}

fn check_penalty<T: Scalar>(params: &ModelParams<T>, cfg: &PenaltyConfig) -> Result<()> {
    if cfg.z_inf.len() != params.k {
        return Err(Error::Shape { expected: params.k, got: cfg.z_inf.len() });
    }
    Ok(())
}

/// Loss, per-path statistics and gradients for one batch.
pub struct Evaluation<T> {
    pub loss: T,
    pub penalty: PenaltyTerms,
    pub stats: Array1<T>,
    pub grad_v: Mlp<T>,
    pub grad_g: Mlp<T>,
}

fn check_shapes<T: Scalar>(batch: &PathBatch<T>, mu: ArrayView2<T>, v: &Mlp<T>, g: &Mlp<T>, params: &ModelParams<T>) -> Result<()> {
    let dim = params.dim();
    if batch.batch() < 2 {
        return invalid("the loss needs at least two paths");
    }
    if batch.states.shape()[2] != dim || mu.dim() != (batch.batch(), dim) || batch.u.ncols() != params.k {
        return invalid("batch, rates and model disagree on dimension");
    }
    if v.input_dim() != dim || v.output_dim() != 1 || g.input_dim() != dim || g.output_dim() != dim {
        return invalid("V must map 2K -> 1 and G must map 2K -> 2K");
    }
    Ok(())
}

/// Per-path statistic and the batch variance, without gradients.
pub fn hjb_loss<T: Scalar>(
    batch: &PathBatch<T>,
    mu: ArrayView2<T>,
    v: &Mlp<T>,
    g: &Mlp<T>,
    params: &ModelParams<T>,
    f: &dyn FHat<T>,
) -> Result<(T, Array1<T>)> {
    check_shapes(batch, mu, v, g, params)?;
    let parts = forward_parts(batch, mu, v, g, params, f);
    let stats = parts.stats;
    let (loss, _) = variance(&stats);
    if !loss.is_finite() {
        return Err(Error::NonFinite("HJB statistic".into()));
    }
    Ok((loss, stats))
}

struct Parts<T> {
    rows: Array2<T>,
    incr: Array2<T>,
    gout: Array2<T>,
    gtape: crate::neural::Tape<T>,
    dfdv: Array2<T>,
    vtape: crate::neural::Tape<T>,
    stats: Array1<T>,
}

fn forward_parts<T: Scalar>(
    batch: &PathBatch<T>,
    mu: ArrayView2<T>,
    v: &Mlp<T>,
    g: &Mlp<T>,
    params: &ModelParams<T>,
    f: &dyn FHat<T>,
) -> Parts<T> {
    let (b, n, dim) = (batch.batch(), batch.steps(), params.dim());
    let dt = batch.dt;
    let rows = batch.states.slice(s![.., ..n, ..]).to_shape((b * n, dim)).unwrap().into_owned();
    let incr = batch.increments.to_shape((b * n, dim)).unwrap().into_owned();
    let (gout, gtape) = g.forward_tape(rows.view());
    let (fv, dfdv) = f.eval(rows.view(), gout.view());
    let mut ends = Array2::zeros((2 * b, dim));
    ends.slice_mut(s![..b, ..]).assign(&batch.states.index_axis(Axis(1), n));
    ends.slice_mut(s![b.., ..]).assign(&batch.states.index_axis(Axis(1), 0));
    let (vout, vtape) = v.forward_tape(ends.view());
    let mut stats = Array1::zeros(b);
    for i in 0..b {
        let mut x = vout[(i, 0)] - vout[(b + i, 0)] + params.p * batch.u.row(i).sum();
        let m = mu.row(i);
        for step in 0..n {
            let r = i * n + step;
            let gr = gout.row(r);
            let dr = incr.row(r);
            let mut acc = T::zero();
            for c in 0..dim {
                acc += gr[c] * (dt * m[c] - dr[c]);
            }
            x += acc - dt * fv[r];
        }
        stats[i] = x;
    }
    Parts { rows, incr, gout, gtape, dfdv, vtape, stats }
}

/// Population variance computed on values shifted by the first one, so a batch
/// of identical values gives exactly 0. Also returns d var / d x.
fn variance<T: Scalar>(x: &Array1<T>) -> (T, Array1<T>) {
    let n = T::of(x.len() as f64);
    let shift = x[0];
    let d = x.mapv(|e| e - shift);
    let mean = d.sum() / n;
    let c = d.mapv(|e| e - mean);
    let var = c.mapv(|e| e * e).sum() / n;
    (var, c.mapv(|e| T::of(2.0) * e / n))
}

/// Loss, shape penalty (when configured) and gradients of their sum. The
/// boundary penalties use every path state; the infinity penalty uses the
/// initial state of each path.
pub fn evaluate<T: Scalar>(
    batch: &PathBatch<T>,
    mu: ArrayView2<T>,
    v: &Mlp<T>,
    g: &Mlp<T>,
    params: &ModelParams<T>,
    f: &dyn FHat<T>,
    penalty: Option<&PenaltyConfig>,
) -> Result<Evaluation<T>> {
    check_shapes(batch, mu, v, g, params)?;
    if let Some(cfg) = penalty {
        check_penalty(params, cfg)?;
    }
    let (b, n, dim) = (batch.batch(), batch.steps(), params.dim());
    let dt = batch.dt;
    let parts = forward_parts(batch, mu, v, g, params, f);
    let (loss, dx) = variance(&parts.stats);
    if !loss.is_finite() {
        return Err(Error::NonFinite("HJB loss".into()));
    }
    let mut gv_out = Array2::zeros((2 * b, 1));
    for i in 0..b {
        gv_out[(i, 0)] = dx[i];
        gv_out[(b + i, 0)] = -dx[i];
    }
    let mut gg_out = Array2::zeros((b * n, dim));
    for i in 0..b {
        let m = mu.row(i);
        for step in 0..n {
            let r = i * n + step;
            for c in 0..dim {
                gg_out[(r, c)] = dx[i] * (dt * m[c] - parts.incr[(r, c)] - dt * parts.dfdv[(r, c)]);
            }
        }
    }
    let mut grad_g = g.zeros_like();
    let mut pen = PenaltyTerms::default();
    if let Some(cfg) = penalty {
        let (left, right, gpen) = boundary_terms(parts.rows.view(), parts.gout.view(), params, cfg);
        gg_out += &gpen;
        let starts = batch.states.index_axis(Axis(1), 0);
        let inf = infinity_term(g, starts, params, cfg, Some(&mut grad_g));
        pen = terms(left, right, inf, cfg);
        if !pen.total.is_finite() {
            return Err(Error::NonFinite("shape penalty".into()));
        }
    }
    g.backward(&parts.gtape, gg_out.view(), Some(&mut grad_g));
    let mut grad_v = v.zeros_like();
    v.backward(&parts.vtape, gv_out.view(), Some(&mut grad_v));
    Ok(Evaluation { loss, penalty: pen, stats: parts.stats, grad_v, grad_g })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbConfig {
    pub hidden: Vec<usize>,
    /// workdays
    pub horizon: f64,
    pub dt: f64,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub penalty: Option<PenaltyConfig>,
    /// initial state in orders (unscaled); clamped into the state space
    pub z0: Vec<f64>,
    pub seed: u64,
}

impl HjbConfig {
    /// 3x100 networks, 220-day paths, batch 256, 10000 iterations.
    pub fn standard(z0: Vec<f64>, penalty: Option<PenaltyConfig>) -> Self {
        HjbConfig {
            hidden: vec![100, 100, 100],
            horizon: 220.0,
            dt: 1.0,
            batch: 256,
            iterations: 10_000,
            schedule: LrSchedule(vec![(0, 0.005), (3000, 0.001), (5000, 0.0001)]),
            penalty,
            z0,
            seed: 11,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub penalty: f64,
}

pub struct HjbOutcome<T> {
    pub v: Mlp<T>,
    pub g: Mlp<T>,
    pub log: Vec<LossRecord>,
    /// iteration at which a non-finite loss stopped training; the nets are the
    /// last finite ones
    pub diverged_at: Option<usize>,
}

/// Trains V and G on the scaled process. Each iteration redraws reference rates
/// per path and starts every path where it ended in the previous iteration.
pub fn train_hjb<T: Scalar>(params: &ModelParams<T>, f: &dyn FHat<T>, cfg: &HjbConfig) -> Result<HjbOutcome<T>> {
    let sp = params.scaled();
    let dim = sp.dim();
    if cfg.z0.len() != dim {
        return Err(Error::Shape { expected: dim, got: cfg.z0.len() });
    }
    if cfg.batch < 2 {
        return invalid("batch must hold at least two paths");
    }
    let penalty = cfg.penalty.as_ref().map(|p| p.scaled(params.kappa.f64()));
    let mut start: Vec<T> = cfg.z0.iter().map(|&z| T::of(z) / params.kappa).collect();
    let mut u = vec![T::zero(); sp.k];
    crate::rbm::reflect(&mut start, &mut u, &sp.b, None);
    debug_assert!(in_state_space(&start, &sp.b));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    let mut v_sizes = sizes.clone();
    v_sizes.push(1);
    sizes.push(dim);
    let mut v = Mlp::he(&v_sizes, &mut rng)?;
    let mut g = Mlp::he(&sizes, &mut rng)?;
    let mut opt_v = Adam::new(&v, cfg.schedule.clone());
    let mut opt_g = Adam::new(&g, cfg.schedule.clone());
    let mut starts = vec![start; cfg.batch];
    let mut log = Vec::with_capacity(cfg.iterations);
    let (horizon, dt) = (T::of(cfg.horizon), T::of(cfg.dt));

    for it in 0..cfg.iterations {
        let mut mu = Array2::zeros((cfg.batch, dim));
        let mut paths = Vec::with_capacity(cfg.batch);
        for (i, z0) in starts.iter().enumerate() {
            let mut prng = stream_rng(cfg.seed, it as u64 + 1, i as u64);
            let policy = sample_reference_rates(&sp, &mut prng);
            mu.row_mut(i).assign(&Array1::from(policy.mu.clone()));
            paths.push(discretize(&sp, &policy, z0, horizon, dt, &mut prng)?);
        }
        let batch = PathBatch::from_bundles(&paths)?;
        let eval = match evaluate(&batch, mu.view(), &v, &g, &sp, f, penalty.as_ref()) {
            Ok(e) => e,
            Err(Error::NonFinite(_)) => return Ok(HjbOutcome { v, g, log, diverged_at: Some(it) }),
            Err(e) => return Err(e),
        };
        log.push(LossRecord { iteration: it, loss: eval.loss.f64(), penalty: eval.penalty.total });
        let (v_prev, g_prev) = (v.clone(), g.clone());
        if opt_v.step(&mut v, &eval.grad_v).is_err() || opt_g.step(&mut g, &eval.grad_g).is_err() {
            return Ok(HjbOutcome { v: v_prev, g: g_prev, log, diverged_at: Some(it) });
        }
        for (i, p) in paths.iter().enumerate() {
            starts[i] = p.states.row(p.states.nrows() - 1).to_vec();
        }
    }
    Ok(HjbOutcome { v, g, log, diverged_at: None })
}

pub fn write_loss_log(log: &[LossRecord], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
