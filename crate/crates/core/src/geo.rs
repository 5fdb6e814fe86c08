//! Locations, travel/service cost model and the prized input graph.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lng: f64,
}

impl Location {
    pub fn new(lat: f64, lng: f64) -> Result<Self> {
        let loc = Location { lat, lng };
        if !loc.is_valid() {
            return invalid(format!("location out of range: ({lat}, {lng})"));
        }
        Ok(loc)
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lng)
    }

    /// Point on the unit sphere.
    pub fn unit(&self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lng.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }
}

pub fn haversine_km(a: &Location, b: &Location) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lng - a.lng).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle distance from two unit vectors. Same quantity as
/// [`haversine_km`], since the haversine term is the squared half chord.
pub fn chord_km(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let c2 = chord2(u, v);
    2.0 * EARTH_RADIUS_KM * (c2.sqrt() / 2.0).min(1.0).asin()
}

#[inline]
fn chord2(u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let (x, y, z) = (u[0] - v[0], u[1] - v[1], u[2] - v[2]);
    x * x + y * y + z * z
}

/// Travel and service time model, all in minutes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// minutes per km
    pub beta_travel: f64,
    pub mean_service: f64,
    /// floor on the travel term
    pub min_edge_cost: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { beta_travel: 1.9792, mean_service: 14.39, min_edge_cost: 5.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_travel > 0.0) || !(self.mean_service >= 0.0) || !(self.min_edge_cost >= 0.0) {
            return invalid(format!("bad cost model {self:?}"));
        }
        Ok(())
    }

    pub fn cost_from_km(&self, km: f64) -> f64 {
        (self.beta_travel * km).max(self.min_edge_cost) + self.mean_service
    }

    pub fn edge_cost(&self, a: &Location, b: &Location) -> f64 {
        self.cost_from_km(haversine_km(a, b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    /// `None` for the depot
    pub id: Option<u64>,
    pub location: Option<Location>,
    pub prize: f64,
}

#[derive(Clone, Debug)]
enum Costs {
    Matrix(Vec<f64>),
    Geo { model: CostModel, units: Vec<[f64; 3]> },
}

/// Complete undirected graph over orders plus depot. Geographic graphs compute
/// edge costs on demand; [`PrizedGraph::cost_matrix`] materializes them.
#[derive(Clone, Debug)]
pub struct PrizedGraph {
    vertices: Vec<Vertex>,
    depot: usize,
    costs: Costs,
}

#[derive(Serialize, Deserialize)]
struct GraphDump {
    vertices: Vec<Vertex>,
    depot: usize,
    edge_cost: Vec<Vec<f64>>,
}

impl PrizedGraph {
    /// Graph from an explicit symmetric cost matrix.
    pub fn from_matrix(prizes: Vec<f64>, edge_cost: Vec<Vec<f64>>, depot: usize) -> Result<Self> {
        let n = prizes.len();
        if depot >= n {
            return invalid("depot index out of range");
        }
        if edge_cost.len() != n || edge_cost.iter().any(|r| r.len() != n) {
            return invalid("cost matrix must be n x n");
        }
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let c = edge_cost[i][j];
                if i != j && (!c.is_finite() || c < 0.0 || c != edge_cost[j][i]) {
                    return invalid(format!("cost ({i},{j}) must be finite, nonnegative and symmetric"));
                }
                flat[i * n + j] = if i == j { 0.0 } else { c };
            }
        }
        check_prizes(&prizes, depot)?;
        let vertices = prizes
            .into_iter()
            .enumerate()
            .map(|(i, prize)| Vertex { id: (i != depot).then_some(i as u64), location: None, prize })
            .collect();
        Ok(PrizedGraph { vertices, depot, costs: Costs::Matrix(flat) })
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn depot(&self) -> usize {
        self.depot
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn prize(&self, v: usize) -> f64 {
        self.vertices[v].prize
    }

    pub fn prizes(&self) -> Vec<f64> {
        self.vertices.iter().map(|v| v.prize).collect()
    }

    pub fn cost(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.costs {
            Costs::Matrix(m) => m[i * self.len() + j],
            Costs::Geo { model, units } => model.cost_from_km(chord_km(&units[i], &units[j])),
        }
    }

    pub fn cost_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| (0..n).map(|j| self.cost(i, j)).collect()).collect()
    }

    /// The `k` nearest other vertices of each vertex, closest first, ties by index.
    pub fn nearest(&self, k: usize) -> Vec<Vec<usize>> {
        let n = self.len();
        let k = k.min(n.saturating_sub(1));
        let mut out = Vec::with_capacity(n);
        let mut key: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            key.clear();
            for j in 0..n {
                if j != i {
                    let d = match &self.costs {
                        Costs::Matrix(m) => m[i * n + j],
                        // monotone in the edge cost
                        Costs::Geo { units, .. } => chord2(&units[i], &units[j]),
                    };
                    key.push((d, j));
                }
            }
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < key.len() {
                key.select_nth_unstable_by(k, cmp);
                key.truncate(k);
            }
            key.sort_unstable_by(cmp);
            out.push(key.iter().map(|&(_, j)| j).collect());
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let dump = GraphDump { vertices: self.vertices.clone(), depot: self.depot, edge_cost: self.cost_matrix() };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: GraphDump = serde_json::from_str(s)?;
        let prizes = dump.vertices.iter().map(|v| v.prize).collect();
        let mut g = PrizedGraph::from_matrix(prizes, dump.edge_cost, dump.depot)?;
        g.vertices = dump.vertices;
        Ok(g)
    }
}

fn check_prizes(prizes: &[f64], depot: usize) -> Result<()> {
    if prizes.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return invalid("prizes must be finite and nonnegative");
    }
    if prizes[depot] != 0.0 {
        return invalid("depot prize must be 0");
    }
    Ok(())
}

/// Depot becomes vertex 0, orders follow in input order.
pub fn create_graph(
    orders: &[(u64, Location)],
    prizes: &[f64],
    depot: Location,
    model: &CostModel,
) -> Result<PrizedGraph> {
    if orders.len() != prizes.len() {
        return invalid(format!("{} orders but {} prizes", orders.len(), prizes.len()));
    }
    model.validate()?;
    let mut seen = HashSet::with_capacity(orders.len());
    for (id, loc) in orders {
        if !seen.insert(*id) {
            return invalid(format!("duplicate order id {id}"));
        }
        if !loc.is_valid() {
            return invalid(format!("order {id} has an invalid location"));
        }
    }
    if !depot.is_valid() {
        return invalid("invalid depot location");
    }
    let mut vertices = Vec::with_capacity(orders.len() + 1);
    vertices.push(Vertex { id: None, location: Some(depot), prize: 0.0 });
    for ((id, loc), &prize) in orders.iter().zip(prizes) {
        vertices.push(Vertex { id: Some(*id), location: Some(*loc), prize });
    }
    let all: Vec<f64> = vertices.iter().map(|v| v.prize).collect();
    check_prizes(&all, 0)?;
    let units = vertices.iter().map(|v| v.location.unwrap().unit()).collect();
    Ok(PrizedGraph { vertices, depot: 0, costs: Costs::Geo { model: *model, units } })
}
