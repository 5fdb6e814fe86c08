//! Calibration defaults: per-class arrival moments, pending-order levels and the
//! synthetic zone geography around the depot.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geo::Location;

pub const K_ZONES: usize = 12;

/// Mean daily arrivals per class; classes 1..12 carry a deadline, 13..24 do not.
pub const LAMBDA: [f64; 24] = [
    6.7519, 1.4315, 1.6185, 13.5593, 6.2880, 5.3102, 6.6713, 2.4769, 1.4537, 9.6074, 1.2028, 2.3657, //
    2.0611, 0.8380, 0.5241, 1.2565, 1.0981, 0.6556, 0.5306, 0.6306, 0.5259, 1.5593, 0.5019, 1.3407,
];

/// Standard deviation of daily arrivals per class.
pub const SIGMA: [f64; 24] = [
    4.1093, 1.3868, 1.6213, 7.2243, 4.0101, 3.4792, 4.5532, 2.2557, 1.4611, 5.1836, 1.2905, 1.9547, //
    2.0037, 1.1453, 0.8127, 1.4194, 1.3511, 1.0540, 0.9940, 0.9553, 0.8742, 1.6511, 0.8311, 1.6551,
];

/// Mean number of pending orders per class.
pub const N_MEAN: [f64; 24] = [
    268.47, 54.32, 63.75, 537.85, 253.17, 197.54, 267.50, 99.18, 56.81, 377.48, 46.85, 94.24, //
    193.05, 77.55, 53.24, 103.09, 105.72, 45.71, 37.83, 71.62, 52.32, 143.67, 51.18, 118.40,
];

/// Maximum number of pending orders per class.
pub const N_MAX: [f64; 24] = [
    396.42, 92.97, 111.05, 726.98, 358.97, 299.57, 384.80, 149.79, 92.97, 546.20, 78.77, 158.82, //
    299.57, 126.54, 102.01, 161.41, 174.32, 95.55, 74.89, 118.80, 103.30, 304.74, 89.10, 260.83,
];

pub const CANCEL_RATE: f64 = 0.008;
pub const TRAVEL_BETA: f64 = 1.9792;
pub const SERVICE_MEAN: f64 = 14.39;
pub const SERVICE_SD: f64 = 10.42;
pub const DEADLINE_MEAN: f64 = 69.17;
pub const DEADLINE_SD: f64 = 12.64;
pub const DEADLINE_MEDIAN: f64 = 72.0;
/// Longest deadline in workdays.
pub const DEADLINE_CAP: f64 = 85.0;

/// Zones with dense demand, 1-based.
pub const DENSE_ZONES: [usize; 6] = [1, 4, 5, 6, 7, 10];
/// Suburban zones, 1-based.
pub const SPARSE_ZONES: [usize; 6] = [2, 3, 8, 9, 11, 12];

pub fn depot() -> Location {
    Location { lat: 41.8837, lng: -87.6325 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub centroid: Location,
    /// std dev of the isotropic Gaussian scatter around the centroid
    pub spread_km: f64,
}

/// Twelve zones: six compact city zones and six wider suburban ones.
pub fn default_zones() -> Vec<Zone> {
    let z = |lat, lng, spread_km| Zone { centroid: Location { lat, lng }, spread_km };
    vec![
        z(41.925, -87.705, 7.0),
        z(42.045, -87.960, 12.0),
        z(42.095, -87.760, 12.0),
        z(41.775, -87.640, 7.0),
        z(41.880, -87.735, 7.0),
        z(41.800, -87.710, 7.0),
        z(41.705, -87.620, 7.0),
        z(41.875, -87.880, 12.0),
        z(41.700, -87.840, 12.0),
        z(41.745, -87.570, 7.0),
        z(42.075, -88.110, 12.0),
        z(41.550, -87.650, 12.0),
    ]
}

/// Per-class data consumed by surrogate sampling and the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub k: usize,
    pub n_max: Vec<f64>,
    pub n_mean: Vec<f64>,
    /// historical order locations per class
    pub pools: Vec<Vec<Location>>,
    /// control-model cancellation rate per class
    pub gamma: Vec<f64>,
    pub p: f64,
    pub c2: f64,
    pub depot: Location,
}

impl ClassCatalog {
    pub fn dim(&self) -> usize {
        2 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.k == 0 || self.n_max.len() != d || self.n_mean.len() != d || self.pools.len() != d || self.gamma.len() != d {
            return invalid("catalog vectors must have length 2K");
        }
        for i in 0..d {
            if !(self.n_mean[i] >= 0.0) || self.n_max[i] < self.n_mean[i] {
                return invalid(format!("class {}: need n_max >= n_mean >= 0", i + 1));
            }
            if !(self.gamma[i] > 0.0) {
                return invalid(format!("class {}: gamma must be positive", i + 1));
            }
        }
        if !(self.p > 0.0) || !(self.c2 >= 0.0) {
            return invalid("p must be positive and c2 nonnegative");
        }
        Ok(())
    }

    /// Upper end of the prize range for class `i` (0-based).
    pub fn prize_cap(&self, i: usize) -> f64 {
        if i < self.k {
            self.p
        } else {
            self.c2 / self.gamma[i]
        }
    }

    /// Restriction to the given zones (0-based), keeping both classes of each zone.
    pub fn select_zones(&self, zones: &[usize]) -> ClassCatalog {
        let classes: Vec<usize> = zones.iter().copied().chain(zones.iter().map(|z| z + self.k)).collect();
        let pick = |v: &Vec<f64>| classes.iter().map(|&c| v[c]).collect();
        ClassCatalog {
            k: zones.len(),
            n_max: pick(&self.n_max),
            n_mean: pick(&self.n_mean),
            pools: classes.iter().map(|&c| self.pools[c].clone()).collect(),
            gamma: pick(&self.gamma),
            p: self.p,
            c2: self.c2,
            depot: self.depot,
        }
    }
}
