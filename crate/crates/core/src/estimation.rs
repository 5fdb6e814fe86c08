//! Estimators for arrivals, cancellation, travel time and empirical resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geo::{haversine_km, Location};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Served,
    Canceled,
    Missed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: u64,
    pub received_day: u32,
    pub lat: f64,
    pub lng: f64,
    /// 1-based zone
    pub zone: usize,
    pub has_deadline: bool,
    pub deadline_day: Option<u32>,
    pub outcome: Outcome,
    pub outcome_day: u32,
    pub team: Option<u32>,
    /// minutes after the start of the working day
    pub service_start: Option<f64>,
    pub service_end: Option<f64>,
}

impl EventRecord {
    pub fn location(&self) -> Location {
        Location { lat: self.lat, lng: self.lng }
    }

    /// 0-based class: zone index, shifted by K for orders without a deadline.
    pub fn class(&self, k: usize) -> usize {
        if self.has_deadline {
            self.zone - 1
        } else {
            self.zone - 1 + k
        }
    }
}

/// Per-class MLE of a Gaussian daily count: sample mean and the 1/n variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEstimate {
    pub lambda: f64,
    pub sigma: f64,
    pub days: usize,
}

impl ArrivalEstimate {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.sigma / (self.days as f64).sqrt()
    }
}

pub fn mle_arrivals(daily: &[f64]) -> Result<ArrivalEstimate> {
    if daily.len() < 2 {
        return invalid("need at least two days of counts");
    }
    let n = daily.len() as f64;
    let lambda = daily.iter().sum::<f64>() / n;
    let var = daily.iter().map(|x| (x - lambda).powi(2)).sum::<f64>() / n;
    Ok(ArrivalEstimate { lambda, sigma: var.sqrt(), days: daily.len() })
}

/// Daily arrivals per class, `[class][day]`, over days `0..days`.
pub fn daily_counts(records: &[EventRecord], k: usize, days: u32) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; days as usize]; 2 * k];
    for r in records {
        if r.received_day < days {
            out[r.class(k)][r.received_day as usize] += 1.0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoredSample {
    /// days in system
    pub duration: f64,
    /// true when the cancellation was observed
    pub observed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmEstimate {
    /// Kaplan–Meier integral of the duration
    pub t_hat: f64,
    pub bias: f64,
    /// jackknife bias-corrected mean
    pub t_tilde: f64,
    /// 1 / t_tilde
    pub rate: f64,
    pub n: usize,
}

/// Removes the top and bottom `frac` of observed and censored durations separately.
pub fn trim_samples(samples: &[CensoredSample], frac: f64) -> Vec<CensoredSample> {
    let mut out = Vec::with_capacity(samples.len());
    for flag in [false, true] {
        let mut group: Vec<CensoredSample> = samples.iter().filter(|s| s.observed == flag).copied().collect();
        group.sort_by(|a, b| a.duration.total_cmp(&b.duration));
        let cut = (group.len() as f64 * frac).floor() as usize;
        if group.len() > 2 * cut {
            out.extend_from_slice(&group[cut..group.len() - cut]);
        }
    }
    out
}

/// Kaplan–Meier integral of the cancellation time with the jackknife bias term.
/// Ties put observed cancellations before censored durations.
pub fn km_mean(samples: &[CensoredSample], trim: bool) -> Result<KmEstimate> {
    let mut s = if trim { trim_samples(samples, 0.05) } else { samples.to_vec() };
    if s.len() < 2 {
        return invalid("need at least two samples");
    }
    if !s.iter().any(|x| x.observed) {
        return invalid("every sample is censored; the mean is undefined");
    }
    if s.iter().any(|x| !(x.duration >= 0.0)) {
        return invalid("durations must be nonnegative");
    }
    s.sort_by(|a, b| a.duration.total_cmp(&b.duration).then(b.observed.cmp(&a.observed)));
    let n = s.len();
    let nf = n as f64;
    // running product over k < i of ((N-k)/(N-k+1))^delta_k, 1-based i
    let mut log_prod = 0.0f64;
    let mut t_hat = 0.0;
    for (idx, x) in s.iter().enumerate() {
        let i = (idx + 1) as f64;
        if x.observed {
            let w = log_prod.exp() / (nf - i + 1.0);
            t_hat += w * x.duration;
            log_prod += ((nf - i) / (nf - i + 1.0)).ln();
        }
    }
    // product over k = 1..N-2 of ((N-1-k)/(N-k))^delta_k
    let mut log_b = 0.0f64;
    for (idx, x) in s.iter().take(n - 2).enumerate() {
        if x.observed {
            let k = (idx + 1) as f64;
            log_b += ((nf - 1.0 - k) / (nf - k)).ln();
        }
    }
    let last = s[n - 1];
    let second = s[n - 2];
    let bias = if last.observed && !second.observed {
        -((nf - 1.0) / nf) * last.duration * log_b.exp()
    } else {
        0.0
    };
    let t_tilde = t_hat - bias;
    Ok(KmEstimate { t_hat, bias, t_tilde, rate: 1.0 / t_tilde, n })
}

/// One sample per record: days until cancellation, censored by service or expiry.
pub fn cancellation_samples(records: &[EventRecord]) -> Vec<CensoredSample> {
    records
        .iter()
        .map(|r| CensoredSample {
            duration: (r.outcome_day - r.received_day) as f64,
            observed: r.outcome == Outcome::Canceled,
        })
        .collect()
}

/// No-intercept least squares `minutes = beta * km`.
pub fn travel_regression(pairs: &[(f64, f64)]) -> Result<f64> {
    let sxx: f64 = pairs.iter().map(|(d, _)| d * d).sum();
    if pairs.is_empty() || sxx == 0.0 {
        return invalid("need at least one pair with nonzero distance");
    }
    Ok(pairs.iter().map(|(d, t)| d * t).sum::<f64>() / sxx)
}

/// (km, idle minutes) between consecutive services of the same team on the same day.
pub fn travel_pairs(records: &[EventRecord]) -> Vec<(f64, f64)> {
    let mut served: Vec<&EventRecord> = records
        .iter()
        .filter(|r| r.outcome == Outcome::Served && r.team.is_some() && r.service_start.is_some() && r.service_end.is_some())
        .collect();
    served.sort_by(|a, b| {
        (a.outcome_day, a.team)
            .cmp(&(b.outcome_day, b.team))
            .then(a.service_start.unwrap().total_cmp(&b.service_start.unwrap()))
    });
    served
        .windows(2)
        .filter(|w| w[0].outcome_day == w[1].outcome_day && w[0].team == w[1].team)
        .map(|w| {
            let km = haversine_km(&w[0].location(), &w[1].location());
            (km, w[1].service_start.unwrap() - w[0].service_end.unwrap())
        })
        .collect()
}

/// Uniform resampling with replacement from observed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDist {
    values: Vec<f64>,
}

impl EmpiricalDist {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("empirical distribution needs at least one value");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("empirical values must be finite");
        }
        Ok(EmpiricalDist { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.values[rng.random_range(0..self.values.len())]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (n - 1).
    pub fn std_dev(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    }
}

/// Everything re-estimated from a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub arrivals: Vec<ArrivalEstimate>,
    pub cancellation: KmEstimate,
    pub cancellation_trimmed: Option<KmEstimate>,
    pub travel_beta: f64,
    pub service_mean: f64,
    pub service_sd: f64,
    pub deadline_mean: f64,
    pub deadline_sd: f64,
    pub deadline_median: f64,
}

pub fn service_durations(records: &[EventRecord]) -> Vec<f64> {
    records
        .iter()
        .filter_map(|r| match (r.service_start, r.service_end) {
            (Some(s), Some(e)) if r.outcome == Outcome::Served => Some(e - s),
            _ => None,
        })
        .collect()
}

pub fn deadline_durations(records: &[EventRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.deadline_day.map(|d| (d - r.received_day) as f64)).collect()
}

pub fn estimate_all(records: &[EventRecord], k: usize, days: u32) -> Result<EstimationReport> {
    let arrivals = daily_counts(records, k, days).iter().map(|c| mle_arrivals(c)).collect::<Result<Vec<_>>>()?;
    let samples = cancellation_samples(records);
    let cancellation = km_mean(&samples, false)?;
    let cancellation_trimmed = km_mean(&samples, true).ok();
    let travel_beta = travel_regression(&travel_pairs(records))?;
    let service = EmpiricalDist::new(service_durations(records))?;
    let deadline = EmpiricalDist::new(deadline_durations(records))?;
    Ok(EstimationReport {
        arrivals,
        cancellation,
        cancellation_trimmed,
        travel_beta,
        service_mean: service.mean(),
        service_sd: service.std_dev(),
        deadline_mean: deadline.mean(),
        deadline_sd: deadline.std_dev(),
        deadline_median: deadline.median(),
    })
}
