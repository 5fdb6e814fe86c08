//! Learned approximation of the routing value `max mu . v` over feasible daily
//! service, trained on solved budgeted routing instances.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ClassCatalog;
use crate::error::{invalid, Error, Result};
use crate::geo::CostModel;
use crate::hjb::FHat;
use crate::neural::{Adam, LrSchedule, Mlp};
use crate::pcst::{budgeted_pcvrp, BudgetParams};
use crate::Scalar;

/// Counts and prizes are scaled by this before entering the network.
pub const DATA_SCALE: f64 = 500.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub p_total: f64,
}

impl SurrogateSample {
    pub fn is_valid(&self) -> bool {
        let cap: f64 = self.z.iter().zip(&self.v).map(|(z, v)| z * v).sum();
        self.p_total >= 0.0 && self.p_total <= cap * (1.0 + 1e-12)
    }
}

/// Collected prize for explicit class counts and prizes.
pub fn solve_instance<R: Rng + ?Sized>(
    catalog: &ClassCatalog,
    z: &[f64],
    v: &[f64],
    model: &CostModel,
    budget: &BudgetParams,
    rng: &mut R,
) -> Result<f64> {
    let mut orders = Vec::new();
    let mut prizes = Vec::new();
    for (c, (&n, &prize)) in z.iter().zip(v).enumerate() {
        let n = n as usize;
        if n == 0 {
            continue;
        }
        let pool = &catalog.pools[c];
        if pool.is_empty() {
            return invalid(format!("class {} has no locations to sample", c + 1));
        }
        for _ in 0..n {
            let loc = pool[rng.random_range(0..pool.len())];
            orders.push((orders.len() as u64, loc));
            prizes.push(prize);
        }
    }
    let routes = budgeted_pcvrp(&orders, catalog.depot, model, budget, |_, rem| rem.iter().map(|&i| prizes[i]).collect())?;
    Ok(routes.iter().map(|r| r.prize).sum())
}

/// Uniform counts on `[0, 1.5 n_max]` (rounded) and one uniform prize per class.
pub fn gen_sample<R: Rng + ?Sized>(
    catalog: &ClassCatalog,
    model: &CostModel,
    budget: &BudgetParams,
    rng: &mut R,
) -> Result<SurrogateSample> {
    let d = catalog.dim();
    let z: Vec<f64> = (0..d).map(|c| (rng.random::<f64>() * 1.5 * catalog.n_max[c]).round()).collect();
    let v: Vec<f64> = (0..d).map(|c| rng.random::<f64>() * catalog.prize_cap(c)).collect();
    let p_total = solve_instance(catalog, &z, &v, model, budget, rng)?;
    Ok(SurrogateSample { z, v, p_total })
}

/// `n` samples; sample `i` uses its own stream derived from `seed`, so the
/// result does not depend on the thread count.
pub fn gen_samples(
    catalog: &ClassCatalog,
    model: &CostModel,
    budget: &BudgetParams,
    n: usize,
    seed: u64,
) -> Result<Vec<SurrogateSample>> {
    use rayon::prelude::*;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = crate::rbm::stream_rng(seed, 0x5A5A, i as u64);
            gen_sample(catalog, model, budget, &mut rng)
        })
        .collect()
}

/// One row per sample: `z_1..z_2K, v_1..v_2K, p_total`.
pub fn write_samples_csv(samples: &[SurrogateSample], path: impl AsRef<std::path::Path>) -> Result<()> {
    write_samples(samples, std::fs::File::create(path)?)
}

pub fn write_samples<W: std::io::Write>(samples: &[SurrogateSample], out: W) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.z.len());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> =
        (1..=d).map(|i| format!("z{i}")).chain((1..=d).map(|i| format!("v{i}"))).chain(["p_total".to_string()]).collect();
    w.write_record(&header)?;
    for s in samples {
        if s.z.len() != d || s.v.len() != d {
            return invalid("samples disagree on dimension");
        }
        let row: Vec<String> = s.z.iter().chain(&s.v).chain([&s.p_total]).map(|x| x.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Lines starting with `#` are skipped.
pub fn read_samples_csv(path: impl AsRef<std::path::Path>) -> Result<Vec<SurrogateSample>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let cols = rd.headers()?.len();
    if cols < 3 || cols % 2 == 0 {
        return invalid(format!("expected 4K+1 columns, found {cols}"));
    }
    let d = (cols - 1) / 2;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != cols {
            return invalid(format!("row has {} fields, expected {cols}", rec.len()));
        }
        let vals = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Invalid(format!("bad number {f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(SurrogateSample { z: vals[..d].to_vec(), v: vals[d..2 * d].to_vec(), p_total: vals[2 * d] });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig { hidden: vec![200], batch: 128, iterations: 1000, learning_rate: 1e-4, seed: 7 }
    }
}

pub fn design_matrix(samples: &[SurrogateSample]) -> (Array2<f64>, Array2<f64>) {
    let d = samples[0].z.len();
    let mut x = Array2::zeros((samples.len(), 2 * d));
    let mut y = Array2::zeros((samples.len(), 1));
    for (i, s) in samples.iter().enumerate() {
        for c in 0..d {
            x[(i, c)] = s.z[c] / DATA_SCALE;
            x[(i, d + c)] = s.v[c];
        }
        y[(i, 0)] = s.p_total / DATA_SCALE;
    }
    (x, y)
}

/// Mean squared error on the scaled target; returns the net and the per-iteration loss.
pub fn train_surrogate(samples: &[SurrogateSample], cfg: &SurrogateConfig) -> Result<(Mlp<f64>, Vec<f64>)> {
    if samples.len() < cfg.batch || cfg.batch == 0 {
        return invalid(format!("need at least {} samples, got {}", cfg.batch, samples.len()));
    }
    let d = samples[0].z.len();
    if samples.iter().any(|s| s.z.len() != d || s.v.len() != d) {
        return invalid("samples disagree on dimension");
    }
    let (x, y) = design_matrix(samples);
    let mut sizes = vec![2 * d];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::he(&sizes, &mut rng)?;
    let mut opt = Adam::new(&net, LrSchedule::constant(cfg.learning_rate));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        if cursor + cfg.batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch];
        cursor += cfg.batch;
        let xb = x.select(Axis(0), idx);
        let yb = y.select(Axis(0), idx);
        let (loss, grads) = crate::neural::grad_params(&net, xb.view(), |out| {
            let diff = out - &yb;
            let n = diff.len() as f64;
            (diff.mapv(|e| e * e).sum() / n, diff * (2.0 / n))
        })?;
        opt.step(&mut net, &grads)?;
        losses.push(loss);
    }
    Ok((net, losses))
}

/// Root mean squared error on the scaled target.
pub fn rmse(net: &Mlp<f64>, samples: &[SurrogateSample]) -> f64 {
    let (x, y) = design_matrix(samples);
    let out = net.forward_batch(x.view());
    ((&out - &y).mapv(|e| e * e).sum() / y.len() as f64).sqrt()
}

/// Surrogate read on the scaled process: with counts in batches of `kappa`,
/// `F(z, v) = (s / kappa) net(kappa z / s, v) - sum_k c_k z_k`, which is the
/// network's collected prize per batch (the routing value is 1-homogeneous in v).
#[derive(Clone, Debug)]
pub struct Surrogate<T> {
    pub net: Mlp<T>,
    pub kappa: T,
    pub scale: T,
    /// holding cost rate per class
    pub holding: Vec<T>,
}

impl<T: Scalar> Surrogate<T> {
    pub fn new(net: Mlp<T>, kappa: T, holding: Vec<T>) -> Result<Self> {
        if net.input_dim() != 2 * holding.len() || net.output_dim() != 1 {
            return Err(Error::Shape { expected: 2 * holding.len(), got: net.input_dim() });
        }
        Ok(Surrogate { net, kappa, scale: T::of(DATA_SCALE), holding })
    }

    fn inputs(&self, z: ArrayView2<T>, v: ArrayView2<T>) -> Array2<T> {
        let d = z.ncols();
        let mut x = Array2::zeros((z.nrows(), 2 * d));
        let f = self.kappa / self.scale;
        x.slice_mut(s![.., ..d]).assign(&z.mapv(|e| e * f));
        x.slice_mut(s![.., d..]).assign(&v);
        x
    }

    fn holding_of(&self, z: ArrayView2<T>) -> Array1<T> {
        z.outer_iter().map(|row| row.iter().zip(&self.holding).map(|(&a, &c)| a * c).sum()).collect()
    }

    /// Single evaluation.
    pub fn f_hat(&self, z: &[T], v: &[T]) -> T {
        let zv = ArrayView2::from_shape((1, z.len()), z).unwrap();
        let vv = ArrayView2::from_shape((1, v.len()), v).unwrap();
        self.eval(zv, vv).0[0]
    }

    /// The network part alone.
    pub fn h_hat(&self, z: &[T], v: &[T]) -> T {
        let zv = ArrayView2::from_shape((1, z.len()), z).unwrap();
        let vv = ArrayView2::from_shape((1, v.len()), v).unwrap();
        let out = self.net.forward_batch(self.inputs(zv, vv).view());
        out[(0, 0)] * self.scale / self.kappa
    }
}

impl<T: Scalar> FHat<T> for Surrogate<T> {
    fn eval(&self, z: ArrayView2<T>, v: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
        let d = z.ncols();
        let (out, tape) = self.net.forward_tape(self.inputs(z, v).view());
        let factor = self.scale / self.kappa;
        let values = out.column(0).mapv(|e| e * factor) - self.holding_of(z);
        let ones = Array2::from_elem((z.nrows(), 1), factor);
        let gin = self.net.backward(&tape, ones.view(), None);
        (values, gin.slice(s![.., d..]).to_owned())
    }
}

/// Convenience for a single evaluation with an f64 network.
pub fn f_hat(net: &Mlp<f64>, kappa: f64, holding: &[f64], z: &[f64], v: &[f64]) -> Result<f64> {
    Ok(Surrogate::new(net.clone(), kappa, holding.to_vec())?.f_hat(z, v))
}
