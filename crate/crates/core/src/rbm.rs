//! Reflected Brownian motion on `[0, b_1] x .. x [0, b_K] x R_+^K`: Skorokhod
//! reflection, the Euler scheme and randomized reference service rates.
//!
//! Classes `0..K` carry a deadline and an upper barrier; classes `K..2K` do not.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    /// number of zones; the state has 2K classes
    pub k: usize,
    /// arrivals per day, 2K
    pub lambda: Vec<T>,
    /// arrival std dev per day, 2K
    pub sigma: Vec<T>,
    /// cancellation rates per day, 2K
    pub gamma: Vec<T>,
    /// upper bounds for the deadline classes, K
    pub b: Vec<T>,
    /// common deadline in workdays
    pub d: T,
    /// penalty per missed deadline
    pub p: T,
    pub c1: T,
    pub c2: T,
    /// batch size of the scaled process
    pub kappa: T,
}

impl<T: Scalar> ModelParams<T> {
    /// `b_k = lambda_k d` for the deadline classes.
    #[allow(clippy::too_many_arguments)]
    pub fn new(lambda: Vec<T>, sigma: Vec<T>, gamma: Vec<T>, d: T, p: T, c1: T, c2: T, kappa: T) -> Result<Self> {
        let n = lambda.len();
        if n == 0 || !n.is_multiple_of(2) || sigma.len() != n || gamma.len() != n {
            return invalid("lambda, sigma, gamma must share an even length 2K");
        }
        let k = n / 2;
        let b = lambda[..k].iter().map(|&l| l * d).collect();
        Ok(ModelParams { k, lambda, sigma, gamma, b, d, p, c1, c2, kappa })
    }

    pub fn dim(&self) -> usize {
        2 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: &[T]| v.iter().all(|x| *x > T::zero() && x.is_finite());
        if self.lambda.len() != self.dim() || self.sigma.len() != self.dim() || self.gamma.len() != self.dim() {
            return invalid("per-class vectors must have length 2K");
        }
        if self.b.len() != self.k || !pos(&self.b) {
            return invalid("b must be K positive bounds");
        }
        if !pos(&self.lambda) || !pos(&self.sigma) || !pos(&self.gamma) {
            return invalid("lambda, sigma and gamma must be positive");
        }
        if !(self.p > T::zero()) || !(self.kappa > T::zero()) || self.c1 < T::zero() || self.c2 < T::zero() {
            return invalid("p and kappa must be positive, holding costs nonnegative");
        }
        if self.c1 > self.p / T::of(85.0) {
            return invalid("c1 must not exceed p/85");
        }
        Ok(())
    }

    /// Parameters of the process counted in batches of `kappa` orders.
    pub fn scaled(&self) -> Self {
        let kap = self.kappa;
        ModelParams {
            lambda: self.lambda.iter().map(|&x| x / kap).collect(),
            sigma: self.sigma.iter().map(|&x| x / kap).collect(),
            b: self.b.iter().map(|&x| x / kap).collect(),
            kappa: T::one(),
            ..self.clone()
        }
    }

    pub fn holding_rate(&self, class: usize) -> T {
        if class < self.k {
            self.c1
        } else {
            self.c2
        }
    }

    /// Holding cost per day, linear in each class count.
    pub fn holding(&self, z: &[T]) -> T {
        z.iter().enumerate().map(|(i, &x)| self.holding_rate(i) * x).sum()
    }
}

/// Service rates used to drive training paths, plus the diffusion variance multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy<T> {
    pub mu: Vec<T>,
    pub variance_multiplier: T,
}

pub const BEHAVIOR_MULTIPLIER: f64 = 4.0;

/// Each class independently gets one of three levels with probability 1/3:
/// `{lambda - gamma b, lambda - gamma b / 2, lambda}` (clamped at 0) with a
/// deadline, `{0, lambda / 2, lambda}` without.
pub fn sample_reference_rates<T: Scalar, R: Rng + ?Sized>(params: &ModelParams<T>, rng: &mut R) -> ReferencePolicy<T> {
    let half = T::of(0.5);
    let mu = (0..params.dim())
        .map(|i| {
            let l = params.lambda[i];
            let level = rng.random_range(0..3);
            let m = if i < params.k {
                let gb = params.gamma[i] * params.b[i];
                [l - gb, l - half * gb, l][level]
            } else {
                [T::zero(), half * l, l][level]
            };
            m.max(T::zero())
        })
        .collect();
    ReferencePolicy { mu, variance_multiplier: T::of(BEHAVIOR_MULTIPLIER) }
}

/// Reflects `x` into the state space in place, adding upper pushes to `u`.
/// Returns (lower, upper) push flags per class when `pushes` is given.
pub fn reflect<T: Scalar>(x: &mut [T], u: &mut [T], b: &[T], mut pushes: Option<&mut Vec<(bool, bool)>>) {
    let k = b.len();
    if let Some(p) = pushes.as_deref_mut() {
        p.clear();
    }
    for (i, xi) in x.iter_mut().enumerate() {
        let mut flags = (false, false);
        if i < k && *xi > b[i] {
            u[i] += *xi - b[i];
            *xi = b[i];
            flags.1 = true;
        } else if *xi < T::zero() {
            *xi = T::zero();
            flags.0 = true;
        }
        if let Some(p) = pushes.as_deref_mut() {
            p.push(flags);
        }
    }
}

/// Copying form of [`reflect`]: `(y, u')`.
pub fn skorokhod<T: Scalar>(x: &[T], u: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
    let (mut y, mut u) = (x.to_vec(), u.to_vec());
    reflect(&mut y, &mut u, b, None);
    (y, u)
}

pub fn in_state_space<T: Scalar>(z: &[T], b: &[T]) -> bool {
    z.iter().enumerate().all(|(i, &x)| x >= T::zero() && (i >= b.len() || x <= b[i]) && x.is_finite())
}

/// One discretized reference path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle<T> {
    /// (N+1) x 2K
    pub states: Array2<T>,
    /// N x 2K Brownian increments
    pub increments: Array2<T>,
    /// cumulative upper pushes, K
    pub u: Vec<T>,
    pub horizon: T,
    pub dt: T,
}

/// Paths of a training batch stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch<T> {
    /// B x (N+1) x 2K
    pub states: Array3<T>,
    /// B x N x 2K
    pub increments: Array3<T>,
    /// B x K
    pub u: Array2<T>,
    pub dt: T,
}

impl<T: Scalar> PathBatch<T> {
    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.increments.shape()[1]
    }

    pub fn from_bundles(paths: &[PathBundle<T>]) -> Result<Self> {
        let first = paths.first().ok_or_else(|| crate::Error::Invalid("empty batch".into()))?;
        let (n1, dim) = first.states.dim();
        let k = first.u.len();
        let mut states = Array3::zeros((paths.len(), n1, dim));
        let mut increments = Array3::zeros((paths.len(), n1 - 1, dim));
        let mut u = Array2::zeros((paths.len(), k));
        for (i, p) in paths.iter().enumerate() {
            if p.states.dim() != (n1, dim) || p.u.len() != k {
                return invalid("paths in a batch must share shape");
            }
            states.index_axis_mut(ndarray::Axis(0), i).assign(&p.states);
            increments.index_axis_mut(ndarray::Axis(0), i).assign(&p.increments);
            u.row_mut(i).assign(&ndarray::ArrayView1::from(&p.u));
        }
        Ok(PathBatch { states, increments, u, dt: first.dt })
    }
}

fn num_steps<T: Scalar>(horizon: T, dt: T) -> Result<usize> {
    let n = (horizon / dt).f64();
    if !(dt > T::zero()) || !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return invalid("horizon must be a positive integer multiple of dt");
    }
    Ok(n.round() as usize)
}

/// Euler scheme with reflection after every step.
pub fn discretize<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    policy: &ReferencePolicy<T>,
    z0: &[T],
    horizon: T,
    dt: T,
    rng: &mut R,
) -> Result<PathBundle<T>> {
    let n = num_steps(horizon, dt)?;
    let dim = params.dim();
    if z0.len() != dim || policy.mu.len() != dim {
        return invalid("z0 and policy rates must have length 2K");
    }
    if !in_state_space(z0, &params.b) {
        return invalid("z0 outside the state space");
    }
    let mut states = Array2::zeros((n + 1, dim));
    let mut increments = Array2::zeros((n, dim));
    let mut u = vec![T::zero(); params.k];
    let mut z = z0.to_vec();
    states.row_mut(0).assign(&ndarray::ArrayView1::from(z0));
    let sd: Vec<T> = params.sigma.iter().map(|&s| (policy.variance_multiplier * s * s * dt).sqrt()).collect();
    for step in 0..n {
        for i in 0..dim {
            let e: f64 = StandardNormal.sample(rng);
            let delta = sd[i] * T::of(e);
            increments[(step, i)] = delta;
            z[i] = z[i] + delta + (params.lambda[i] - policy.mu[i] - params.gamma[i] * z[i]) * dt;
        }
        reflect(&mut z, &mut u, &params.b, None);
        states.row_mut(step + 1).assign(&ndarray::ArrayView1::from(&z[..]));
    }
    Ok(PathBundle { states, increments, u, horizon, dt })
}

/// Independent stream for `(seed, a, b)`, e.g. (master seed, iteration, path).
pub fn stream_rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng
}
