//! Prize-collecting Steiner trees, tours and the budgeted multi-vehicle wrapper.
//!
//! The tree solver is rooted Goemans–Williamson moat growth followed by strong
//! pruning of the root component. Edge events live in one binary heap; a vertex
//! whose growth rate changes gets a new epoch, which invalidates its queued
//! events, and its incident edges are queued again.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geo::{create_graph, CostModel, Location, PrizedGraph};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tree {
    /// ascending
    pub vertices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
}

impl Tree {
    pub fn cost(&self, g: &PrizedGraph) -> f64 {
        self.edges.iter().map(|&(u, v)| g.cost(u, v)).sum()
    }

    /// Edge cost plus the prizes left outside the tree.
    pub fn objective(&self, g: &PrizedGraph, prizes: &[f64]) -> f64 {
        let mut inside = vec![false; g.len()];
        for &v in &self.vertices {
            inside[v] = true;
        }
        let missed: f64 = prizes.iter().zip(&inside).filter(|(_, &i)| !i).map(|(p, _)| p).sum();
        self.cost(g) + missed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    /// graph vertices; starts and ends at the depot, `[depot]` when nothing is visited
    pub vertices: Vec<usize>,
    pub total_cost: f64,
    pub total_prize: f64,
}

impl Tour {
    /// Closes `path` (which starts at the depot) back at its first vertex.
    pub fn closed(g: &PrizedGraph, mut path: Vec<usize>) -> Tour {
        if path.len() > 1 {
            path.push(path[0]);
        }
        let total_cost = path.windows(2).map(|w| g.cost(w[0], w[1])).sum();
        let interior = if path.len() > 1 { &path[1..path.len() - 1] } else { &path[..0] };
        let total_prize = interior.iter().map(|&v| g.prize(v)).sum();
        Tour { vertices: path, total_cost, total_prize }
    }

    pub fn depot_only(depot: usize) -> Tour {
        Tour { vertices: vec![depot], total_cost: 0.0, total_prize: 0.0 }
    }

    pub fn interior(&self) -> &[usize] {
        if self.vertices.len() > 1 {
            &self.vertices[1..self.vertices.len() - 1]
        } else {
            &[]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetParams {
    /// minutes per vehicle
    pub budget: f64,
    pub zeta_init: f64,
    /// budget tolerance, minutes
    pub delta: f64,
    /// bisection precision on zeta
    pub epsilon: f64,
    pub vehicles: usize,
    /// multiplier applied to policy prizes before the zeta search
    pub prize_scale: f64,
    /// only this many highest-prize orders enter a vehicle's graph
    pub service_threshold: usize,
    /// restrict moat growth to k-nearest-neighbour edges plus all depot edges
    pub candidate_neighbors: Option<usize>,
}

impl Default for BudgetParams {
    fn default() -> Self {
        BudgetParams {
            budget: 300.0,
            zeta_init: 100.0,
            delta: 30.0,
            epsilon: 1e-4,
            vehicles: 4,
            prize_scale: 1e6,
            service_threshold: 500,
            candidate_neighbors: Some(16),
        }
    }
}

impl BudgetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) || !(self.delta >= 0.0) || self.delta >= self.budget {
            return invalid("need 0 <= delta < budget");
        }
        if !(self.epsilon > 0.0) || !(self.zeta_init > 0.0) || !(self.prize_scale > 0.0) {
            return invalid("epsilon, zeta_init and prize_scale must be positive");
        }
        if self.vehicles == 0 {
            return invalid("at least one vehicle");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Event {
    t: f64,
    kind: u8,
    a: u32,
    b: u32,
    e: u32,
    ea: u32,
    eb: u32,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on (time, kind, a, b)
        o.t.total_cmp(&self.t)
            .then(o.kind.cmp(&self.kind))
            .then(o.a.cmp(&self.a))
            .then(o.b.cmp(&self.b))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const EDGE: u8 = 0;
const DEACTIVATE: u8 = 1;

struct Cluster {
    active: bool,
    has_root: bool,
    potential: f64,
    since: f64,
    epoch: u32,
    members: Vec<u32>,
}

/// Moat-growth solver over a fixed candidate edge set; reusable across prize vectors.
pub struct GwSolver<'g> {
    graph: &'g PrizedGraph,
    root: usize,
    edges: Vec<(u32, u32, f64)>,
    adj: Vec<Vec<u32>>,
}

impl<'g> GwSolver<'g> {
    pub fn new(graph: &'g PrizedGraph, root: usize, neighbors: Option<usize>) -> Self {
        let n = graph.len();
        let mut pairs: Vec<(u32, u32)> = match neighbors {
            Some(k) if k + 1 < n => {
                let mut p = Vec::with_capacity(n * (k + 1));
                for (i, near) in graph.nearest(k).into_iter().enumerate() {
                    for j in near {
                        p.push((i.min(j) as u32, i.max(j) as u32));
                    }
                }
                for j in 0..n {
                    if j != root {
                        p.push((root.min(j) as u32, root.max(j) as u32));
                    }
                }
                p.sort_unstable();
                p.dedup();
                p
            }
            _ => (0..n as u32).flat_map(|i| (i + 1..n as u32).map(move |j| (i, j))).collect(),
        };
        pairs.shrink_to_fit();
        let mut adj = vec![Vec::new(); n];
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| {
                adj[u as usize].push(e as u32);
                adj[v as usize].push(e as u32);
                (u, v, graph.cost(u as usize, v as usize))
            })
            .collect();
        GwSolver { graph, root, edges, adj }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Rooted PCST tree for the given vertex prizes.
    pub fn solve(&self, prizes: &[f64]) -> Tree {
        let forest = self.grow(prizes);
        self.strong_prune(prizes, &forest)
    }

    fn grow(&self, prizes: &[f64]) -> Vec<(usize, usize)> {
        let n = self.graph.len();
        let mut clusters: Vec<Cluster> = (0..n)
            .map(|v| {
                let has_root = v == self.root;
                Cluster {
                    active: !has_root && prizes[v] > 0.0,
                    has_root,
                    potential: if has_root { 0.0 } else { prizes[v] },
                    since: 0.0,
                    epoch: 0,
                    members: vec![v as u32],
                }
            })
            .collect();
        let mut cl: Vec<u32> = (0..n as u32).collect();
        let mut d_at = vec![0.0f64; n];
        let mut vsince = vec![0.0f64; n];
        let mut vepoch = vec![0u32; n];
        let mut heap = BinaryHeap::with_capacity(2 * self.edges.len() + n);
        let mut forest = Vec::new();
        let mut n_active = clusters.iter().filter(|c| c.active).count();

        let dist = |v: usize, t: f64, clusters: &[Cluster], cl: &[u32], d_at: &[f64], vsince: &[f64]| {
            if clusters[cl[v] as usize].active {
                d_at[v] + (t - vsince[v])
            } else {
                d_at[v]
            }
        };

        macro_rules! push_edge {
            ($e:expr, $t:expr) => {{
                let e = $e as usize;
                let (u, v, c) = self.edges[e];
                let (u, v) = (u as usize, v as usize);
                let (cu, cv) = (cl[u] as usize, cl[v] as usize);
                if cu != cv {
                    let rate = clusters[cu].active as u8 + clusters[cv].active as u8;
                    if rate > 0 {
                        let slack = c - dist(u, $t, &clusters, &cl, &d_at, &vsince) - dist(v, $t, &clusters, &cl, &d_at, &vsince);
                        let t = $t + slack.max(0.0) / rate as f64;
                        heap.push(Event { t, kind: EDGE, a: u as u32, b: v as u32, e: e as u32, ea: vepoch[u], eb: vepoch[v] });
                    }
                }
            }};
        }

        for (c, cluster) in clusters.iter().enumerate() {
            if cluster.active {
                heap.push(Event { t: cluster.potential, kind: DEACTIVATE, a: c as u32, b: 0, e: 0, ea: 0, eb: 0 });
            }
        }
        for e in 0..self.edges.len() {
            push_edge!(e, 0.0);
        }

        while n_active > 0 {
            let Some(ev) = heap.pop() else { break };
            let t = ev.t;
            if ev.kind == DEACTIVATE {
                let c = ev.a as usize;
                if clusters[c].members.is_empty() || clusters[c].epoch != ev.ea || !clusters[c].active {
                    continue;
                }
                for &m in &clusters[c].members {
                    let m = m as usize;
                    d_at[m] += t - vsince[m];
                    vsince[m] = t;
                    vepoch[m] += 1;
                }
                let cluster = &mut clusters[c];
                cluster.active = false;
                cluster.potential = 0.0;
                cluster.since = t;
                cluster.epoch += 1;
                n_active -= 1;
                let members = clusters[c].members.clone();
                for m in members {
                    for &e in &self.adj[m as usize] {
                        push_edge!(e, t);
                    }
                }
                continue;
            }

            let (u, v) = (ev.a as usize, ev.b as usize);
            if vepoch[u] != ev.ea || vepoch[v] != ev.eb {
                continue;
            }
            let (ca, cb) = (cl[u] as usize, cl[v] as usize);
            if ca == cb {
                continue;
            }
            forest.push((u, v));
            let pot = |c: &Cluster| if c.active { c.potential - (t - c.since) } else { c.potential };
            let potential = pot(&clusters[ca]) + pot(&clusters[cb]);
            let has_root = clusters[ca].has_root || clusters[cb].has_root;
            let active = !has_root && potential > 0.0;
            let mut flipped: Vec<u32> = Vec::new();
            for c in [ca, cb] {
                if clusters[c].active {
                    n_active -= 1;
                }
                if clusters[c].active != active {
                    for &m in &clusters[c].members {
                        let m = m as usize;
                        if clusters[c].active {
                            d_at[m] += t - vsince[m];
                        }
                        vsince[m] = t;
                        vepoch[m] += 1;
                    }
                    flipped.extend_from_slice(&clusters[c].members);
                }
            }
            let (keep, gone) =
                if clusters[ca].members.len() >= clusters[cb].members.len() { (ca, cb) } else { (cb, ca) };
            let moved = std::mem::take(&mut clusters[gone].members);
            for &m in &moved {
                cl[m as usize] = keep as u32;
            }
            clusters[gone].active = false;
            clusters[gone].epoch += 1;
            let k = &mut clusters[keep];
            k.members.extend(moved);
            k.active = active;
            k.has_root = has_root;
            k.potential = if has_root { 0.0 } else { potential };
            k.since = t;
            k.epoch += 1;
            if active {
                n_active += 1;
                heap.push(Event { t: t + potential, kind: DEACTIVATE, a: keep as u32, b: 0, e: 0, ea: k.epoch, eb: 0 });
            }
            for m in flipped {
                for &e in &self.adj[m as usize] {
                    push_edge!(e, t);
                }
            }
        }
        forest
    }

    /// Keeps the root's component and drops every subtree whose prize does not pay
    /// for its connecting edge.
    fn strong_prune(&self, prizes: &[f64], forest: &[(usize, usize)]) -> Tree {
        let n = self.graph.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in forest {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut parent = vec![usize::MAX; n];
        let mut order = vec![self.root];
        parent[self.root] = self.root;
        let mut i = 0;
        while i < order.len() {
            let u = order[i];
            i += 1;
            for &w in &adj[u] {
                if parent[w] == usize::MAX {
                    parent[w] = u;
                    order.push(w);
                }
            }
        }
        let mut net = vec![0.0f64; n];
        for &u in order.iter().rev() {
            net[u] += prizes[u];
            if u != self.root {
                let gain = net[u] - self.graph.cost(u, parent[u]);
                if gain > 0.0 {
                    net[parent[u]] += gain;
                }
            }
        }
        let mut keep = vec![false; n];
        keep[self.root] = true;
        let mut edges = Vec::new();
        for &u in &order {
            if u != self.root && keep[parent[u]] && net[u] - self.graph.cost(u, parent[u]) > 0.0 {
                keep[u] = true;
                edges.push((parent[u].min(u), parent[u].max(u)));
            }
        }
        edges.sort_unstable();
        Tree { vertices: (0..n).filter(|&v| keep[v]).collect(), edges }
    }
}

/// Rooted PCST on the complete graph with the graph's own prizes.
pub fn pcst(graph: &PrizedGraph, root: usize) -> Tree {
    GwSolver::new(graph, root, None).solve(&graph.prizes())
}

/// Preorder walk of the tree from the root (children ascending), closed at the root.
pub fn tree_to_tour(graph: &PrizedGraph, root: usize, tree: &Tree) -> Tour {
    let n = graph.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in &tree.edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
    }
    let mut seen = vec![false; n];
    let mut path = Vec::with_capacity(tree.vertices.len());
    let mut stack = vec![root];
    while let Some(u) = stack.pop() {
        if seen[u] {
            continue;
        }
        seen[u] = true;
        path.push(u);
        for &w in adj[u].iter().rev() {
            if !seen[w] {
                stack.push(w);
            }
        }
    }
    Tour::closed(graph, path)
}

/// Tree with halved prizes, doubled and shortcut into a tour.
pub fn pctsp(graph: &PrizedGraph, root: usize) -> Tour {
    let half: Vec<f64> = graph.prizes().iter().map(|p| p / 2.0).collect();
    let tree = GwSolver::new(graph, root, None).solve(&half);
    tree_to_tour(graph, root, &tree)
}

/// Running-sum prefix cut of an over-budget tour; the budget is checked on the
/// path before closure and the returned prefix is closed at the depot.
pub fn prune_tour(graph: &PrizedGraph, tour: &Tour, budget: f64, delta: f64) -> Tour {
    let limit = budget + delta;
    if tour.total_cost <= limit {
        return tour.clone();
    }
    let l = &tour.vertices;
    let mut b = 0.0;
    for i in 1..l.len().saturating_sub(1) {
        b += graph.cost(l[i - 1], l[i]);
        if b > limit {
            return Tour::closed(graph, l[..i].to_vec());
        }
    }
    tour.clone()
}

/// Drops trailing stops until the closed tour fits the budget.
fn trim_to_budget(graph: &PrizedGraph, tour: Tour, limit: f64) -> Tour {
    if tour.total_cost <= limit {
        return tour;
    }
    let mut path = tour.vertices;
    path.pop();
    while path.len() > 1 {
        path.pop();
        let t = Tour::closed(graph, path.clone());
        if t.total_cost <= limit {
            return t;
        }
    }
    Tour::closed(graph, path)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BisectionTrace {
    pub zeta_l: f64,
    pub zeta_r: f64,
    pub evaluations: usize,
    /// cost of the zeta_l tour at termination, when the search reached the end
    pub left_cost: Option<f64>,
    pub returned_in_band: bool,
}

/// Budget-constrained tour: bisection on the prize multiplier, then the better of
/// the last feasible tour and the pruned over-budget one.
pub fn budgeted_pctsp(graph: &PrizedGraph, root: usize, params: &BudgetParams) -> Tour {
    budgeted_pctsp_traced(graph, root, params).0
}

pub fn budgeted_pctsp_traced(graph: &PrizedGraph, root: usize, params: &BudgetParams) -> (Tour, BisectionTrace) {
    let solver = GwSolver::new(graph, root, params.candidate_neighbors);
    let base = graph.prizes();
    let (d, delta) = (params.budget, params.delta);
    let limit = d + delta;
    let mut cache: HashMap<u64, Tour> = HashMap::new();
    let mut trace = BisectionTrace::default();
    let mut tour_at = |zeta: f64, trace: &mut BisectionTrace| -> Tour {
        cache
            .entry(zeta.to_bits())
            .or_insert_with(|| {
                if zeta == 0.0 {
                    return Tour::depot_only(root);
                }
                trace.evaluations += 1;
                let scaled: Vec<f64> = base.iter().map(|p| p * params.prize_scale * zeta / 2.0).collect();
                tree_to_tour(graph, root, &solver.solve(&scaled))
            })
            .clone()
    };
    let in_band = |t: &Tour| (t.total_cost - d).abs() <= delta;

    let (mut zl, mut zr) = (0.0, params.zeta_init);
    let mut t = tour_at(zr, &mut trace);
    if in_band(&t) {
        trace.zeta_l = zl;
        trace.zeta_r = zr;
        trace.returned_in_band = true;
        return (t, trace);
    }
    if t.total_cost <= limit {
        // even the largest multiplier stays under budget
        zl = zr;
    }
    while !in_band(&t) && zr - zl > params.epsilon {
        let zm = (zl + zr) / 2.0;
        t = tour_at(zm, &mut trace);
        if t.total_cost > limit {
            zr = zm;
        } else {
            zl = zm;
        }
    }
    trace.zeta_l = zl;
    trace.zeta_r = zr;
    if in_band(&t) {
        trace.returned_in_band = true;
        return (t, trace);
    }
    let tl = tour_at(zl, &mut trace);
    let tr = tour_at(zr, &mut trace);
    trace.left_cost = Some(tl.total_cost);
    let pruned = trim_to_budget(graph, prune_tour(graph, &tr, d, delta), limit);
    let tl = if tl.total_cost <= limit { tl } else { trim_to_budget(graph, prune_tour(graph, &tl, d, delta), limit) };
    if tl.total_prize >= pruned.total_prize {
        (tl, trace)
    } else {
        (pruned, trace)
    }
}

/// One vehicle's route, as positions into the input order slice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub orders: Vec<usize>,
    pub cost: f64,
    pub prize: f64,
}

/// Sequential vehicle-by-vehicle budgeted routing. `prizes(w, remaining)` is
/// queried once per vehicle and returns one prize per remaining order.
pub fn budgeted_pcvrp<F>(
    orders: &[(u64, Location)],
    depot: Location,
    model: &CostModel,
    params: &BudgetParams,
    mut prizes: F,
) -> Result<Vec<Route>>
where
    F: FnMut(usize, &[usize]) -> Vec<f64>,
{
    params.validate()?;
    let mut served = vec![false; orders.len()];
    let mut routes = Vec::with_capacity(params.vehicles);
    for w in 0..params.vehicles {
        let remaining: Vec<usize> = (0..orders.len()).filter(|&i| !served[i]).collect();
        let pr = prizes(w, &remaining);
        if pr.len() != remaining.len() {
            return invalid(format!("prize query returned {} values for {} orders", pr.len(), remaining.len()));
        }
        let mut cand: Vec<usize> = (0..remaining.len()).filter(|&i| pr[i] > 0.0).collect();
        cand.sort_by(|&a, &b| pr[b].total_cmp(&pr[a]).then(a.cmp(&b)));
        cand.truncate(params.service_threshold);
        cand.sort_unstable();
        if cand.is_empty() {
            routes.push(Route::default());
            continue;
        }
        let sub: Vec<(u64, Location)> = cand.iter().map(|&i| orders[remaining[i]]).collect();
        let sub_prizes: Vec<f64> = cand.iter().map(|&i| pr[i]).collect();
        let graph = create_graph(&sub, &sub_prizes, depot, model)?;
        let tour = budgeted_pctsp(&graph, graph.depot(), params);
        let route: Vec<usize> = tour.interior().iter().map(|&v| remaining[cand[v - 1]]).collect();
        for &i in &route {
            served[i] = true;
        }
        routes.push(Route { orders: route, cost: tour.total_cost, prize: tour.total_prize });
    }
    Ok(routes)
}
