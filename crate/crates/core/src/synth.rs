//! Synthetic order-event corpus standing in for the historical records.
//!
//! Daily class counts are negative binomial with the target mean and variance.
//! Every order draws an exponential cancellation time, a latent service delay
//! and, for deadline classes, a left-skewed deadline; the earliest event decides
//! the outcome. Served orders get team schedules whose idle gaps scale with the
//! travel distance.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::catalog::{self, ClassCatalog, Zone};
use crate::error::{invalid, Result};
use crate::estimation::{EmpiricalDist, EventRecord, Outcome};
use crate::geo::{haversine_km, Location};

const KM_PER_DEGREE: f64 = 111.195;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationTargets {
    pub k: usize,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    pub n_mean: Vec<f64>,
    pub n_max: Vec<f64>,
    pub cancel_rate: f64,
    pub travel_beta: f64,
    pub service_mean: f64,
    pub service_sd: f64,
    pub deadline_mean: f64,
    pub deadline_sd: f64,
    pub deadline_cap: f64,
    pub days: u32,
    pub zones: Vec<Zone>,
    pub depot: Location,
    pub teams: u32,
    /// mean latent service delay in days
    pub service_delay_mean: f64,
    /// share of no-deadline orders on the slow track
    pub slow_fraction: f64,
    /// mean delay of the slow track in days
    pub slow_delay_mean: f64,
    /// coefficient of variation of travel time around `beta * km`
    pub travel_noise_cv: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            k: catalog::K_ZONES,
            lambda: catalog::LAMBDA.to_vec(),
            sigma: catalog::SIGMA.to_vec(),
            n_mean: catalog::N_MEAN.to_vec(),
            n_max: catalog::N_MAX.to_vec(),
            cancel_rate: catalog::CANCEL_RATE,
            travel_beta: catalog::TRAVEL_BETA,
            service_mean: catalog::SERVICE_MEAN,
            service_sd: catalog::SERVICE_SD,
            deadline_mean: catalog::DEADLINE_MEAN,
            deadline_sd: catalog::DEADLINE_SD,
            deadline_cap: catalog::DEADLINE_CAP,
            days: 1080,
            zones: catalog::default_zones(),
            depot: catalog::depot(),
            teams: 4,
            service_delay_mean: 55.0,
            slow_fraction: 0.5,
            slow_delay_mean: 400.0,
            travel_noise_cv: 0.3,
        }
    }
}

impl CalibrationTargets {
    pub fn validate(&self) -> Result<()> {
        let d = 2 * self.k;
        if self.k == 0 || self.zones.len() != self.k {
            return invalid("need one zone per deadline class");
        }
        if [&self.lambda, &self.sigma, &self.n_mean, &self.n_max].iter().any(|v| v.len() != d) {
            return invalid("per-class targets must have length 2K");
        }
        if self.lambda.iter().chain(&self.sigma).any(|x| !(*x >= 0.0)) {
            return invalid("arrival moments must be nonnegative");
        }
        if !(self.cancel_rate > 0.0) || !(self.travel_beta > 0.0) || !(self.service_mean > 0.0) {
            return invalid("rates must be positive");
        }
        if !(self.deadline_cap > self.deadline_mean) || !(self.deadline_sd > 0.0) {
            return invalid("deadline cap must exceed the deadline mean");
        }
        if self.days == 0 || self.teams == 0 {
            return invalid("days and teams must be positive");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.k
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub k: usize,
    pub days: u32,
    pub records: Vec<EventRecord>,
    /// one 2K-vector of arrivals per day
    pub arrival_pool: Vec<Vec<u32>>,
}

/// Negative binomial (gamma–Poisson) count with the given mean and variance;
/// Poisson when the variance does not exceed the mean.
fn count<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let rate = if var > mean {
        let shape = mean * mean / (var - mean);
        let scale = (var - mean) / mean;
        Gamma::new(shape, scale).unwrap().sample(rng)
    } else {
        mean
    };
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).unwrap().sample(rng) as u32
}

fn scatter<R: Rng + ?Sized>(zone: &Zone, rng: &mut R) -> Location {
    let n = Normal::new(0.0, zone.spread_km).unwrap();
    let (north, east) = (n.sample(rng), n.sample(rng));
    let lat = zone.centroid.lat + north / KM_PER_DEGREE;
    let lng = zone.centroid.lng + east / (KM_PER_DEGREE * zone.centroid.lat.to_radians().cos());
    Location { lat, lng }
}

pub fn synth_corpus(t: &CalibrationTargets, seed: u64) -> Result<Corpus> {
    t.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = t.k;
    let cancel = Exp::new(t.cancel_rate).unwrap();
    let gap = t.deadline_cap - t.deadline_mean;
    let deadline_gamma = Gamma::new((gap / t.deadline_sd).powi(2), t.deadline_sd.powi(2) / gap).unwrap();
    let delay = Gamma::new(2.0, t.service_delay_mean / 2.0).unwrap();
    let slow = Exp::new(1.0 / t.slow_delay_mean).unwrap();

    let mut arrival_pool = Vec::with_capacity(t.days as usize);
    let mut records = Vec::new();
    let mut next_id = 1u64;
    for day in 0..t.days {
        let counts: Vec<u32> = (0..t.dim()).map(|c| count(t.lambda[c], t.sigma[c].powi(2), &mut rng)).collect();
        for (c, &n) in counts.iter().enumerate() {
            let has_deadline = c < k;
            let zone = &t.zones[c % k];
            for _ in 0..n {
                let loc = scatter(zone, &mut rng);
                let limit = if has_deadline {
                    let g: f64 = deadline_gamma.sample(&mut rng);
                    Some((t.deadline_cap - g).round().clamp(1.0, t.deadline_cap))
                } else {
                    None
                };
                let tc: f64 = cancel.sample(&mut rng);
                let ts: f64 = if has_deadline || rng.random::<f64>() >= t.slow_fraction {
                    delay.sample(&mut rng)
                } else {
                    slow.sample(&mut rng)
                };
                let horizon = limit.unwrap_or(f64::INFINITY);
                let (outcome, after) = if tc <= ts && tc <= horizon {
                    (Outcome::Canceled, tc.ceil().max(1.0))
                } else if ts <= horizon {
                    (Outcome::Served, ts.ceil().max(1.0).min(horizon))
                } else {
                    (Outcome::Missed, horizon)
                };
                records.push(EventRecord {
                    id: next_id,
                    received_day: day,
                    lat: loc.lat,
                    lng: loc.lng,
                    zone: c % k + 1,
                    has_deadline,
                    deadline_day: limit.map(|l| day + l as u32),
                    outcome,
                    outcome_day: day + after as u32,
                    team: None,
                    service_start: None,
                    service_end: None,
                });
                next_id += 1;
            }
        }
        arrival_pool.push(counts);
    }
    schedule_service(&mut records, t, &mut rng);
    Ok(Corpus { k, days: t.days, records, arrival_pool })
}

/// Gives served orders a team and service window within their service day.
fn schedule_service<R: Rng + ?Sized>(records: &mut [EventRecord], t: &CalibrationTargets, rng: &mut R) {
    let shape = (t.service_mean / t.service_sd).powi(2);
    let service = Gamma::new(shape, t.service_sd.powi(2) / t.service_mean).unwrap();
    let s2 = (1.0 + t.travel_noise_cv.powi(2)).ln();
    let noise = LogNormal::new(-s2 / 2.0, s2.sqrt()).unwrap();
    let mut by_day: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, r) in records.iter().enumerate() {
        if r.outcome == Outcome::Served {
            by_day.entry(r.outcome_day).or_default().push(i);
        }
    }
    for (_, mut idx) in by_day {
        idx.shuffle(rng);
        for team in 0..t.teams {
            let mut clock = 0.0;
            let mut prev = t.depot;
            for &i in idx.iter().skip(team as usize).step_by(t.teams as usize) {
                let here = records[i].location();
                let travel = t.travel_beta * haversine_km(&prev, &here) * noise.sample(rng);
                let start = clock + travel;
                let end = start + service.sample(rng);
                let r = &mut records[i];
                r.team = Some(team);
                r.service_start = Some(start);
                r.service_end = Some(end);
                clock = end;
                prev = here;
            }
        }
    }
}

impl Corpus {
    /// Order locations per class.
    pub fn location_pools(&self) -> Vec<Vec<Location>> {
        let mut pools = vec![Vec::new(); 2 * self.k];
        for r in &self.records {
            pools[r.class(self.k)].push(r.location());
        }
        pools
    }

    pub fn deadline_pool(&self) -> Result<EmpiricalDist> {
        EmpiricalDist::new(crate::estimation::deadline_durations(&self.records))
    }

    pub fn service_pool(&self) -> Result<EmpiricalDist> {
        EmpiricalDist::new(crate::estimation::service_durations(&self.records))
    }

    pub fn catalog(&self, n_mean: &[f64], n_max: &[f64], gamma: &[f64], p: f64, c2: f64, depot: Location) -> ClassCatalog {
        ClassCatalog {
            k: self.k,
            n_max: n_max.to_vec(),
            n_mean: n_mean.to_vec(),
            pools: self.location_pools(),
            gamma: gamma.to_vec(),
            p,
            c2,
            depot,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_records(std::fs::File::create(path)?)
    }

    pub fn write_records<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Lines starting with `#` are skipped.
    pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut out = Vec::new();
        for r in rd.deserialize() {
            out.push(r?);
        }
        Ok(out)
    }
}
