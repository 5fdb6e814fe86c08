//! Per-order prizes for the three dispatch policies.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{DENSE_ZONES, SPARSE_ZONES};
use crate::error::{invalid, Result};
use crate::geo::Location;
use crate::neural::Mlp;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingOrder {
    pub id: u64,
    pub location: Location,
    /// 0-based; `0..K` carry a deadline
    pub class: usize,
    /// days in system
    pub pending_days: u32,
    /// latent: the order cancels once `pending_days` exceeds this
    pub cancel_day: f64,
    pub deadline_days: Option<u32>,
}

impl PendingOrder {
    /// Days left before the deadline.
    pub fn slack(&self) -> Option<i64> {
        self.deadline_days.map(|d| d as i64 - self.pending_days as i64)
    }
}

/// Pending counts per class.
pub fn class_counts(pending: &[&PendingOrder], k: usize) -> Vec<usize> {
    let mut z = vec![0; 2 * k];
    for o in pending {
        z[o.class] += 1;
    }
    z
}

/// Positions into `pending` per class, most urgent first: deadline classes by
/// slack ascending, the others by waiting time descending, ties by id.
pub fn urgency_order(pending: &[&PendingOrder], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); 2 * k];
    for (i, o) in pending.iter().enumerate() {
        groups[o.class].push(i);
    }
    for (c, g) in groups.iter_mut().enumerate() {
        if c < k {
            g.sort_by_key(|&i| (pending[i].slack().unwrap_or(i64::MAX), pending[i].id));
        } else {
            g.sort_by_key(|&i| (std::cmp::Reverse(pending[i].pending_days), pending[i].id));
        }
    }
    groups
}

/// The `i`-th order (1-based) of class `k` gets `G_k` at the scaled state with
/// coordinate `k` replaced by `(z_k - i + 1) / kappa`.
pub fn prizes_proposed<T: Scalar>(pending: &[&PendingOrder], g: &Mlp<T>, kappa: f64, k: usize) -> Result<Vec<f64>> {
    if g.input_dim() != 2 * k || g.output_dim() != 2 * k {
        return invalid(format!("G must map {0} -> {0}", 2 * k));
    }
    if !(kappa > 0.0) {
        return invalid("kappa must be positive");
    }
    if pending.iter().any(|o| o.class >= 2 * k) {
        return invalid("order class out of range");
    }
    let z = class_counts(pending, k);
    let groups = urgency_order(pending, k);
    let mut rows = Array2::zeros((pending.len(), 2 * k));
    let mut slot = Vec::with_capacity(pending.len());
    let mut r = 0;
    for (c, members) in groups.iter().enumerate() {
        for (rank, &i) in members.iter().enumerate() {
            let mut row = rows.row_mut(r);
            for (j, &zj) in z.iter().enumerate() {
                row[j] = T::of(zj as f64 / kappa);
            }
            row[c] = T::of((z[c] - rank) as f64 / kappa);
            slot.push((i, c));
            r += 1;
        }
    }
    let out = g.forward_batch(rows.view());
    let mut prizes = vec![0.0; pending.len()];
    for (r, &(i, c)) in slot.iter().enumerate() {
        prizes[i] = out[(r, c)].f64();
    }
    Ok(prizes)
}

/// `2^-rank` for rank >= 1, built from the bit pattern so subnormals are exact;
/// 0 past the smallest subnormal.
pub fn half_power(rank: usize) -> f64 {
    match rank {
        0 => 1.0,
        1..=1022 => f64::from_bits(((1023 - rank) as u64) << 52),
        1023..=1074 => f64::from_bits(1u64 << (1074 - rank)),
        _ => 0.0,
    }
}

/// Orders with a deadline, and orders without one that have waited at most
/// `d_tilde` days, are ranked by days left (to the deadline, or to `d_tilde`)
/// and get `2^-rank`; orders waiting longer than `d_tilde` get 1.
pub fn prizes_urgency(pending: &[&PendingOrder], d_tilde: f64) -> Result<Vec<f64>> {
    if !(d_tilde > 0.0) {
        return invalid("d_tilde must be positive");
    }
    let mut prizes = vec![1.0; pending.len()];
    let mut ranked: Vec<(f64, u64, usize)> = Vec::with_capacity(pending.len());
    for (i, o) in pending.iter().enumerate() {
        let left = match o.slack() {
            Some(s) => s as f64,
            None if o.pending_days as f64 <= d_tilde => d_tilde - o.pending_days as f64,
            None => continue,
        };
        ranked.push((left, o.id, i));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (rank, &(_, _, i)) in ranked.iter().enumerate() {
        prizes[i] = half_power(rank + 1);
    }
    Ok(prizes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdParams {
    pub xi: f64,
    pub w: f64,
    /// suburban zones, 1-based
    pub sparse: Vec<usize>,
    /// city zones, 1-based
    pub dense: Vec<usize>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams { xi: 190.0, w: 0.3, sparse: SPARSE_ZONES.to_vec(), dense: DENSE_ZONES.to_vec() }
    }
}

impl ThresholdParams {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.xi > 0.0) || !(0.0..=1.0).contains(&self.w) {
            return invalid("need xi > 0 and w in [0, 1]");
        }
        let mut all: Vec<usize> = self.sparse.iter().chain(&self.dense).copied().collect();
        all.sort_unstable();
        if all != (1..=k).collect::<Vec<_>>() {
            return invalid("sparse and dense zones must partition 1..K");
        }
        Ok(())
    }
}

/// Picks a zone with probability proportional to its pending count; `None`
/// when every zone in the group is empty.
fn pick_zone<R: Rng + ?Sized>(zones: &[usize], load: &[usize], rng: &mut R) -> Option<usize> {
    let total: usize = zones.iter().map(|&r| load[r - 1]).sum();
    if total == 0 {
        return None;
    }
    let mut u = rng.random_range(0..total);
    for &r in zones {
        if u < load[r - 1] {
            return Some(r);
        }
        u -= load[r - 1];
    }
    unreachable!()
}

/// Dispatch zone (1-based) for `vehicle` (0-based) and {0,1} prizes supported
/// on that zone.
pub fn dispatch_and_prizes_threshold<R: Rng + ?Sized>(
    pending: &[&PendingOrder],
    cfg: &ThresholdParams,
    k: usize,
    vehicle: usize,
    rng: &mut R,
) -> Result<(Option<usize>, Vec<f64>)> {
    cfg.validate(k)?;
    let z = class_counts(pending, k);
    let load: Vec<usize> = (0..k).map(|r| z[r] + z[r + k]).collect();
    let suburb_due = cfg.sparse.iter().any(|&r| load[r - 1] as f64 >= cfg.xi);
    let group = if vehicle == 0 && suburb_due { &cfg.sparse } else { &cfg.dense };
    let Some(zone) = pick_zone(group, &load, rng) else {
        return Ok((None, vec![0.0; pending.len()]));
    };
    let prizes = pending
        .iter()
        .map(|o| {
            if o.class == zone - 1 {
                let p = match o.deadline_days {
                    Some(0) | None => 1.0,
                    Some(d) => (o.pending_days as f64 / d as f64).min(1.0),
                };
                rng.random_bool(p) as u8 as f64
            } else if o.class == zone - 1 + k {
                rng.random_bool(cfg.w) as u8 as f64
            } else {
                0.0
            }
        })
        .collect();
    Ok((Some(zone), prizes))
}

/// Serializable policy choice; the proposed policy's network is loaded separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    Proposed {
        kappa: f64,
        /// evaluate G in single precision
        #[serde(default)]
        f32_inference: bool,
    },
    Urgency {
        d_tilde: f64,
    },
    Threshold(ThresholdParams),
}

impl PolicyConfig {
    pub fn proposed() -> Self {
        PolicyConfig::Proposed { kappa: 500.0, f32_inference: false }
    }

    pub fn urgency() -> Self {
        PolicyConfig::Urgency { d_tilde: 143.0 }
    }

    pub fn threshold() -> Self {
        PolicyConfig::Threshold(ThresholdParams::default())
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            PolicyConfig::Proposed { kappa, .. } if !(*kappa > 0.0) => invalid("kappa must be positive"),
            PolicyConfig::Urgency { d_tilde } if !(*d_tilde > 0.0) => invalid("d_tilde must be positive"),
            PolicyConfig::Threshold(t) => t.validate(k),
            _ => Ok(()),
        }
    }

    /// Binds the network for the proposed policy.
    pub fn build(&self, k: usize, g: Option<Mlp<f64>>) -> Result<Policy> {
        self.validate(k)?;
        Ok(match self {
            PolicyConfig::Proposed { kappa, f32_inference } => {
                let Some(g) = g else {
                    return Err(crate::Error::Invalid("the proposed policy needs a trained G network".into()));
                };
                if g.input_dim() != 2 * k || g.output_dim() != 2 * k {
                    return invalid(format!("G must map {0} -> {0}", 2 * k));
                }
                let net = if *f32_inference { GNet::F32(g.cast()) } else { GNet::F64(g) };
                Policy::Proposed { net, kappa: *kappa }
            }
            PolicyConfig::Urgency { d_tilde } => Policy::Urgency { d_tilde: *d_tilde },
            PolicyConfig::Threshold(t) => Policy::Threshold(t.clone()),
        })
    }
}

#[derive(Clone, Debug)]
pub enum GNet {
    F64(Mlp<f64>),
    F32(Mlp<f32>),
}

#[derive(Clone, Debug)]
pub enum Policy {
    Proposed { net: GNet, kappa: f64 },
    Urgency { d_tilde: f64 },
    Threshold(ThresholdParams),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Proposed { .. } => "proposed",
            Policy::Urgency { .. } => "urgency",
            Policy::Threshold(_) => "threshold",
        }
    }

    /// Prizes for one vehicle over the orders still pending.
    pub fn assign<R: Rng + ?Sized>(&self, pending: &[&PendingOrder], k: usize, vehicle: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Policy::Proposed { net: GNet::F64(g), kappa } => prizes_proposed(pending, g, *kappa, k),
            Policy::Proposed { net: GNet::F32(g), kappa } => prizes_proposed(pending, g, *kappa, k),
            Policy::Urgency { d_tilde } => prizes_urgency(pending, *d_tilde),
            Policy::Threshold(t) => Ok(dispatch_and_prizes_threshold(pending, t, k, vehicle, rng)?.1),
        }
    }
}
