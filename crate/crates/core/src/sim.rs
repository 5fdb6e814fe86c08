//! Day-loop simulation: arrivals, cancellations, routing, deadline expiry and
//! the per-day ledger the metrics are computed from.
//!
//! Exogenous randomness (initial orders, arrivals), policy randomness and the
//! realized service times use separate streams, so two policies run with the
//! same seed face the same arrivals.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::catalog::ClassCatalog;
use crate::error::{invalid, Result};
use crate::estimation::EmpiricalDist;
use crate::geo::{haversine_km, CostModel, Location};
use crate::pcst::{budgeted_pcvrp, BudgetParams};
use crate::policies::{PendingOrder, Policy};
use crate::rbm::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMode {
    /// resample whole days from the arrival pool
    Bootstrap,
    /// independent rounded normals per class, clamped at 0
    Gaussian { lambda: Vec<f64>, sigma: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub days: u32,
    pub vehicles: usize,
    pub daily_hours: f64,
    pub service_threshold: usize,
    pub deadline_extension_days: u32,
    pub replications: usize,
    /// days dropped at each end of the run before averaging
    pub burn_in: u32,
    /// realized cancellation rate per day
    pub cancel_rate: f64,
    /// initial pending ages are uniform on `0..=initial_age_max`
    pub initial_age_max: u32,
    pub arrival_mode: ArrivalMode,
    pub cost: CostModel,
    /// routing constants; budget, vehicles and threshold come from the fields above
    pub routing: BudgetParams,
    pub seed: u64,
    /// keep the per-day ledger in each replication result
    pub keep_daily: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            days: 2000,
            vehicles: 4,
            daily_hours: 5.0,
            service_threshold: 500,
            deadline_extension_days: 0,
            replications: 10,
            burn_in: 50,
            cancel_rate: crate::catalog::CANCEL_RATE,
            initial_age_max: 73,
            arrival_mode: ArrivalMode::Bootstrap,
            cost: CostModel::default(),
            routing: BudgetParams::default(),
            seed: 1,
            keep_daily: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.vehicles == 0 || self.replications == 0 {
            return invalid("days, vehicles and replications must be positive");
        }
        if !(self.daily_hours >= 0.0) || !(self.cancel_rate > 0.0) {
            return invalid("daily hours must be nonnegative and the cancel rate positive");
        }
        if 2 * self.burn_in >= self.days {
            return invalid("burn-in leaves no days to average");
        }
        self.cost.validate()?;
        if self.daily_hours > 0.0 {
            self.budget_params().validate()?;
        }
        Ok(())
    }

    pub fn budget_params(&self) -> BudgetParams {
        BudgetParams {
            budget: self.daily_hours * 60.0,
            vehicles: self.vehicles,
            service_threshold: self.service_threshold,
            ..self.routing
        }
    }
}

/// Empirical inputs resampled during the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimData {
    /// realized service minutes
    pub service: EmpiricalDist,
    /// days from arrival to deadline
    pub deadlines: EmpiricalDist,
    /// one 2K-vector of arrivals per historical day
    pub arrival_pool: Vec<Vec<u32>>,
}

impl SimData {
    /// Service and deadline pools and the daily arrival vectors of a corpus.
    pub fn from_corpus(corpus: &crate::synth::Corpus) -> Result<Self> {
        Ok(SimData {
            service: corpus.service_pool()?,
            deadlines: corpus.deadline_pool()?,
            arrival_pool: corpus.arrival_pool.clone(),
        })
    }
}

/// Counts for one simulated day. Index 0 is orders with a deadline, 1 without.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub day: u32,
    pub arrivals: [u64; 2],
    pub canceled: [u64; 2],
    /// cancellations among orders that arrived during the run
    pub canceled_arrived: [u64; 2],
    pub served: [u64; 2],
    pub missed: u64,
    pub missed_arrived: u64,
    /// pending at the end of the day
    pub pending: [u64; 2],
    /// largest planned route cost, minutes
    pub max_route_cost: f64,
    /// travel plus drawn service minutes, summed over vehicles
    pub realized_minutes: f64,
}

pub struct SimState {
    pub day: u32,
    pub pending: Vec<PendingOrder>,
    /// ids at or above this arrived during the run
    pub first_arrival_id: u64,
    pub next_id: u64,
}

fn draw_deadline<R: Rng + ?Sized>(data: &SimData, cfg: &SimConfig, rng: &mut R) -> u32 {
    data.deadlines.sample(rng).round().max(0.0) as u32 + cfg.deadline_extension_days
}

fn check_inputs(catalog: &ClassCatalog, cfg: &SimConfig, data: &SimData) -> Result<()> {
    let d = catalog.dim();
    if catalog.pools.len() != d || catalog.n_mean.len() != d {
        return invalid("catalog must carry 2K pools and means");
    }
    if data.arrival_pool.is_empty() || data.arrival_pool.iter().any(|a| a.len() != d) {
        return invalid("arrival pool needs 2K-vectors");
    }
    if let ArrivalMode::Gaussian { lambda, sigma } = &cfg.arrival_mode {
        if lambda.len() != d || sigma.len() != d {
            return invalid("gaussian arrivals need 2K means and deviations");
        }
    }
    for c in 0..d {
        let used = catalog.n_mean[c] > 0.0 || data.arrival_pool.iter().any(|a| a[c] > 0);
        if used && catalog.pools[c].is_empty() {
            return invalid(format!("class {} has orders but no locations", c + 1));
        }
    }
    Ok(())
}

fn new_order<R: Rng + ?Sized>(
    id: u64,
    class: usize,
    age: u32,
    catalog: &ClassCatalog,
    cfg: &SimConfig,
    data: &SimData,
    rng: &mut R,
) -> PendingOrder {
    let pool = &catalog.pools[class];
    let location = pool[rng.random_range(0..pool.len())];
    let cancel: f64 = Exp::new(cfg.cancel_rate).unwrap().sample(rng);
    let deadline_days = (class < catalog.k).then(|| draw_deadline(data, cfg, rng));
    // an initial order never starts past its deadline
    let pending_days = deadline_days.map_or(age, |d| age.min(d));
    PendingOrder { id, location, class, pending_days, cancel_day: pending_days as f64 + cancel, deadline_days }
}

/// `round(n_mean_k)` orders per class with uniform ages, exponential residual
/// time to cancellation and deadlines drawn from the pool.
pub fn init_state<R: Rng + ?Sized>(catalog: &ClassCatalog, cfg: &SimConfig, data: &SimData, rng: &mut R) -> Result<SimState> {
    check_inputs(catalog, cfg, data)?;
    let mut pending = Vec::new();
    let mut id = 1;
    for class in 0..catalog.dim() {
        for _ in 0..catalog.n_mean[class].round() as usize {
            let age = rng.random_range(0..=cfg.initial_age_max);
            pending.push(new_order(id, class, age, catalog, cfg, data, rng));
            id += 1;
        }
    }
    Ok(SimState { day: 0, pending, first_arrival_id: id, next_id: id })
}

/// Streams used by one replication.
pub struct SimRngs {
    pub exogenous: ChaCha8Rng,
    pub policy: ChaCha8Rng,
    pub service: ChaCha8Rng,
}

impl SimRngs {
    pub fn new(seed: u64, replication: u64) -> Self {
        SimRngs {
            exogenous: stream_rng(seed, replication, 1),
            policy: stream_rng(seed, replication, 2),
            service: stream_rng(seed, replication, 3),
        }
    }
}

fn arrivals<R: Rng + ?Sized>(cfg: &SimConfig, data: &SimData, rng: &mut R) -> Vec<u32> {
    match &cfg.arrival_mode {
        ArrivalMode::Bootstrap => data.arrival_pool[rng.random_range(0..data.arrival_pool.len())].clone(),
        ArrivalMode::Gaussian { lambda, sigma } => lambda
            .iter()
            .zip(sigma)
            .map(|(&l, &s)| {
                let x = if s > 0.0 { Normal::new(l, s).unwrap().sample(rng) } else { l };
                x.round().max(0.0) as u32
            })
            .collect(),
    }
}

/// Travel (no floor) plus drawn service minutes for one route from the depot.
fn realized_minutes<R: Rng + ?Sized>(route: &[Location], depot: Location, cost: &CostModel, data: &SimData, rng: &mut R) -> f64 {
    if route.is_empty() {
        return 0.0;
    }
    let mut prev = depot;
    let mut total = 0.0;
    for &here in route {
        total += cost.beta_travel * haversine_km(&prev, &here) + data.service.sample(rng);
        prev = here;
    }
    total + cost.beta_travel * haversine_km(&prev, &depot)
}

/// Arrivals, cancellations, routing, then the deadline check: every surviving
/// order ages one day and a deadline order whose age passes its deadline is missed.
pub fn step_day(
    state: &mut SimState,
    policy: &Policy,
    catalog: &ClassCatalog,
    cfg: &SimConfig,
    data: &SimData,
    rngs: &mut SimRngs,
) -> Result<DayRecord> {
    let k = catalog.k;
    let ty = |class: usize| if class < k { 0 } else { 1 };
    state.day += 1;
    let mut rec = DayRecord { day: state.day, ..Default::default() };

    let counts = arrivals(cfg, data, &mut rngs.exogenous);
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let o = new_order(state.next_id, class, 0, catalog, cfg, data, &mut rngs.exogenous);
            state.pending.push(o);
            state.next_id += 1;
        }
        rec.arrivals[ty(class)] += n as u64;
    }

    let first = state.first_arrival_id;
    state.pending.retain(|o| {
        let cancel = o.pending_days as f64 > o.cancel_day;
        if cancel {
            rec.canceled[ty(o.class)] += 1;
            if o.id >= first {
                rec.canceled_arrived[ty(o.class)] += 1;
            }
        }
        !cancel
    });

    if cfg.daily_hours > 0.0 && !state.pending.is_empty() {
        let params = cfg.budget_params();
        let orders: Vec<(u64, Location)> = state.pending.iter().map(|o| (o.id, o.location)).collect();
        let pending = &state.pending;
        let prng = &mut rngs.policy;
        let mut failure = None;
        let routes = budgeted_pcvrp(&orders, catalog.depot, &cfg.cost, &params, |w, remaining| {
            let view: Vec<&PendingOrder> = remaining.iter().map(|&i| &pending[i]).collect();
            match policy.assign(&view, k, w, prng) {
                Ok(p) => p,
                Err(e) => {
                    failure = Some(e);
                    vec![0.0; remaining.len()]
                }
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let mut served = vec![false; state.pending.len()];
        for r in &routes {
            rec.max_route_cost = rec.max_route_cost.max(r.cost);
            let locs: Vec<Location> = r.orders.iter().map(|&i| state.pending[i].location).collect();
            rec.realized_minutes += realized_minutes(&locs, catalog.depot, &cfg.cost, data, &mut rngs.service);
            for &i in &r.orders {
                let o = &state.pending[i];
                debug_assert!(o.deadline_days.is_none_or(|d| o.pending_days <= d));
                served[i] = true;
                rec.served[ty(o.class)] += 1;
            }
        }
        let mut idx = 0;
        state.pending.retain(|_| {
            idx += 1;
            !served[idx - 1]
        });
    }

    state.pending.retain_mut(|o| {
        o.pending_days += 1;
        let missed = o.deadline_days.is_some_and(|d| o.pending_days > d);
        if missed {
            rec.missed += 1;
            if o.id >= first {
                rec.missed_arrived += 1;
            }
        }
        !missed
    });
    for o in &state.pending {
        rec.pending[ty(o.class)] += 1;
    }
    Ok(rec)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// percent of deadline orders (arrived, not canceled) that missed the deadline
    pub miss_pct: f64,
    pub cancel_pct_deadline: f64,
    pub cancel_pct_no_deadline: f64,
    pub pending_deadline: f64,
    pub pending_no_deadline: f64,
    pub served_deadline: f64,
    pub served_no_deadline: f64,
    pub served_per_day: f64,
    /// realized hours per vehicle per day
    pub realized_hours: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 9] = [
        "miss_pct",
        "cancel_pct_deadline",
        "cancel_pct_no_deadline",
        "pending_deadline",
        "pending_no_deadline",
        "served_deadline",
        "served_no_deadline",
        "served_per_day",
        "realized_hours",
    ];

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.miss_pct,
            self.cancel_pct_deadline,
            self.cancel_pct_no_deadline,
            self.pending_deadline,
            self.pending_no_deadline,
            self.served_deadline,
            self.served_no_deadline,
            self.served_per_day,
            self.realized_hours,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Metrics {
            miss_pct: v[0],
            cancel_pct_deadline: v[1],
            cancel_pct_no_deadline: v[2],
            pending_deadline: v[3],
            pending_no_deadline: v[4],
            served_deadline: v[5],
            served_no_deadline: v[6],
            served_per_day: v[7],
            realized_hours: v[8],
        }
    }

    /// Averages over the given days.
    pub fn from_days(days: &[DayRecord], vehicles: usize) -> Self {
        let sum = |f: &dyn Fn(&DayRecord) -> u64| days.iter().map(f).sum::<u64>() as f64;
        let n = days.len().max(1) as f64;
        let ratio = |a: f64, b: f64| if b > 0.0 { 100.0 * a / b } else { 0.0 };
        let served_d = sum(&|r| r.served[0]);
        let served_n = sum(&|r| r.served[1]);
        Metrics {
            miss_pct: ratio(sum(&|r| r.missed_arrived), sum(&|r| r.arrivals[0]) - sum(&|r| r.canceled_arrived[0])),
            cancel_pct_deadline: ratio(sum(&|r| r.canceled_arrived[0]), sum(&|r| r.arrivals[0])),
            cancel_pct_no_deadline: ratio(sum(&|r| r.canceled_arrived[1]), sum(&|r| r.arrivals[1])),
            pending_deadline: sum(&|r| r.pending[0]) / n,
            pending_no_deadline: sum(&|r| r.pending[1]) / n,
            served_deadline: served_d / n,
            served_no_deadline: served_n / n,
            served_per_day: (served_d + served_n) / n,
            realized_hours: days.iter().map(|r| r.realized_minutes).sum::<f64>() / 60.0 / (n * vehicles as f64),
        }
    }
}

/// `initial + arrivals == canceled + served + missed + final pending`, per type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub initial: u64,
    pub arrivals: u64,
    pub canceled: u64,
    pub served: u64,
    pub missed: u64,
    pub final_pending: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.initial + self.arrivals == self.canceled + self.served + self.missed + self.final_pending
    }
}

pub fn conservation(initial: [u64; 2], days: &[DayRecord]) -> [Conservation; 2] {
    let last = days.last().map_or(initial, |r| r.pending);
    let mut out = [Conservation::default(); 2];
    for j in 0..2 {
        out[j] = Conservation {
            initial: initial[j],
            arrivals: days.iter().map(|r| r.arrivals[j]).sum(),
            canceled: days.iter().map(|r| r.canceled[j]).sum(),
            served: days.iter().map(|r| r.served[j]).sum(),
            missed: if j == 0 { days.iter().map(|r| r.missed).sum() } else { 0 },
            final_pending: last[j],
        };
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub metrics: Metrics,
    pub conservation: [Conservation; 2],
    /// planned routes above budget plus tolerance
    pub budget_violations: u64,
    pub daily: Option<Vec<DayRecord>>,
}

/// One replication of `cfg.days` days.
pub fn run_replication(
    policy: &Policy,
    catalog: &ClassCatalog,
    cfg: &SimConfig,
    data: &SimData,
    replication: usize,
) -> Result<ReplicationResult> {
    cfg.validate()?;
    let mut rngs = SimRngs::new(cfg.seed, replication as u64);
    let mut state = init_state(catalog, cfg, data, &mut rngs.exogenous)?;
    let mut initial = [0u64; 2];
    for o in &state.pending {
        initial[(o.class >= catalog.k) as usize] += 1;
    }
    let limit = cfg.daily_hours * 60.0 + cfg.routing.delta + 1e-9;
    let mut days = Vec::with_capacity(cfg.days as usize);
    let mut violations = 0;
    for _ in 0..cfg.days {
        let rec = step_day(&mut state, policy, catalog, cfg, data, &mut rngs)?;
        if rec.max_route_cost > limit {
            violations += 1;
        }
        days.push(rec);
    }
    let b = cfg.burn_in as usize;
    let metrics = Metrics::from_days(&days[b..days.len() - b], cfg.vehicles);
    Ok(ReplicationResult {
        replication,
        metrics,
        conservation: conservation(initial, &days),
        budget_violations: violations,
        daily: cfg.keep_daily.then_some(days),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub mean: Metrics,
    /// 95% confidence half-widths across replications
    pub half_width: Metrics,
    pub replications: Vec<ReplicationResult>,
}

impl MetricsReport {
    pub fn from_replications(policy: &str, reps: Vec<ReplicationResult>) -> Self {
        let n = reps.len();
        let rows: Vec<Vec<f64>> = reps.iter().map(|r| r.metrics.to_vec()).collect();
        let m = Metrics::NAMES.len();
        let mean: Vec<f64> = (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let half: Vec<f64> = if n < 2 {
            vec![f64::NAN; m]
        } else {
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap().inverse_cdf(0.975);
            (0..m)
                .map(|j| {
                    let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
                    t * (var / n as f64).sqrt()
                })
                .collect()
        };
        MetricsReport {
            policy: policy.to_string(),
            mean: Metrics::from_slice(&mean),
            half_width: Metrics::from_slice(&half),
            replications: reps,
        }
    }

    pub fn conservation_holds(&self) -> bool {
        self.replications.iter().all(|r| r.conservation.iter().all(Conservation::holds))
    }

    /// `metric,mean,half_width` rows.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["policy", "metric", "mean", "half_width"])?;
        for ((name, m), h) in Metrics::NAMES.iter().zip(self.mean.to_vec()).zip(self.half_width.to_vec()) {
            w.write_record([self.policy.as_str(), name, &m.to_string(), &h.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// All replications; they run in parallel and are reported in order.
pub fn run(cfg: &SimConfig, policy: &Policy, catalog: &ClassCatalog, data: &SimData) -> Result<MetricsReport> {
    cfg.validate()?;
    check_inputs(catalog, cfg, data)?;
    let reps = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(policy, catalog, cfg, data, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_replications(policy.name(), reps))
}
