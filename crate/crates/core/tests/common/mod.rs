//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use evict::geo::PrizedGraph;
use evict::neural::Mlp;
use ndarray::Array2;
use rand::Rng;

/// Random symmetric metric instance: points in the plane, Euclidean costs.
pub fn random_metric_graph<R: Rng>(n: usize, rng: &mut R) -> PrizedGraph {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
    let cost = (0..n)
        .map(|i| (0..n).map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt()).collect())
        .collect();
    let prizes = (0..n).map(|i| if i == 0 { 0.0 } else { rng.random_range(0.0..80.0) }).collect();
    PrizedGraph::from_matrix(prizes, cost, 0).unwrap()
}

fn mst_cost(g: &PrizedGraph, verts: &[usize]) -> f64 {
    let n = verts.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut total = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&i| !in_tree[i]).min_by(|&a, &b| best[a].total_cmp(&best[b])).unwrap();
        in_tree[u] = true;
        total += best[u];
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(g.cost(verts[u], verts[v]));
            }
        }
    }
    total
}

/// Exact rooted PCST value on a complete metric graph: minimum over vertex
/// subsets containing the root of MST cost plus forfeited prizes.
pub fn exhaustive_pcst(g: &PrizedGraph, root: usize) -> f64 {
    let n = g.len();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << others.len()) {
        let mut verts = vec![root];
        let mut lost = 0.0;
        for (b, &v) in others.iter().enumerate() {
            if mask >> b & 1 == 1 {
                verts.push(v);
            } else {
                lost += g.prize(v);
            }
        }
        best = best.min(mst_cost(g, &verts) + lost);
    }
    best
}

/// Cheapest closed tour through the root and every vertex of each subset of the
/// others (Held–Karp), indexed by subset mask.
pub fn subset_tour_costs(g: &PrizedGraph, root: usize) -> (Vec<usize>, Vec<f64>) {
    let others: Vec<usize> = (0..g.len()).filter(|&v| v != root).collect();
    let m = others.len();
    let full = 1usize << m;
    let mut dp = vec![vec![f64::INFINITY; m]; full];
    for j in 0..m {
        dp[1 << j][j] = g.cost(root, others[j]);
    }
    for mask in 1..full {
        for j in 0..m {
            let cur = dp[mask][j];
            if mask >> j & 1 == 0 || !cur.is_finite() {
                continue;
            }
            for k in 0..m {
                if mask >> k & 1 == 0 {
                    let next = mask | 1 << k;
                    let c = cur + g.cost(others[j], others[k]);
                    if c < dp[next][k] {
                        dp[next][k] = c;
                    }
                }
            }
        }
    }
    let mut tour = vec![0.0; full];
    for mask in 1..full {
        tour[mask] = (0..m).filter(|&j| mask >> j & 1 == 1).map(|j| dp[mask][j] + g.cost(others[j], root)).fold(f64::INFINITY, f64::min);
    }
    (others, tour)
}

/// Largest prize collectable by one closed tour of cost at most `limit`.
pub fn exhaustive_budgeted(g: &PrizedGraph, root: usize, limit: f64) -> f64 {
    let (others, tour) = subset_tour_costs(g, root);
    (0..tour.len())
        .filter(|&mask| tour[mask] <= limit)
        .map(|mask| others.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &v)| g.prize(v)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Straight-line forward pass: explicit loops, no ndarray products.
pub fn naive_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = net.num_layers();
    for l in 0..layers {
        let w = &net.weights[l];
        let mut out = vec![0.0; w.ncols()];
        for j in 0..w.ncols() {
            let mut s = net.biases[l][j];
            for i in 0..w.nrows() {
                s += h[i] * w[(i, j)];
            }
            out[j] = if l + 1 < layers { s.max(0.0) } else { s };
        }
        h = out;
    }
    h
}

/// Central differences of `f` over every parameter of `net`.
pub fn fd_param_grad(net: &Mlp<f64>, f: impl Fn(&Mlp<f64>) -> f64, h: f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat_params(&p).unwrap();
            let up = f(&probe);
            p[i] = base[i] - h;
            probe.set_flat_params(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest |pre-activation| over all hidden units and rows; small values mean a
/// finite-difference probe may cross a ReLU kink.
pub fn min_kink_margin(net: &Mlp<f64>, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for l in 0..net.num_layers() - 1 {
        let mut z = h.dot(&net.weights[l]);
        z += &net.biases[l];
        margin = margin.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        h = z.mapv(|v| v.max(0.0));
    }
    margin
}

/// Largest elementwise relative error; magnitudes below `floor` count as `floor`.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}

/// Standard normal inputs redrawn until every hidden pre-activation sits at least
/// `margin` away from zero.
pub fn inputs_off_kinks<R: Rng>(net: &Mlp<f64>, rows: usize, margin: f64, rng: &mut R) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let x = Array2::from_shape_fn((rows, net.input_dim()), |_| StandardNormal.sample(rng));
        if min_kink_margin(net, &x) >= margin {
            return x;
        }
    }
}

/// Nonnegative finite `x` as an exact integer multiple of 2^-1074.
pub fn exact_units(x: f64) -> num_bigint::BigUint {
    assert!(x >= 0.0 && x.is_finite());
    let bits = x.to_bits();
    let exp = (bits >> 52) as u32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, shift) = if exp == 0 { (frac, 0) } else { (frac | 1u64 << 52, exp - 1) };
    num_bigint::BigUint::from(mant) << shift
}

/// Checks `1 > p_i > sum_{j > i} p_j` in exact arithmetic for prizes sorted
/// in decreasing order.
pub fn dominance_chain_holds(sorted: &[f64]) -> bool {
    let one = exact_units(1.0);
    let mut tail = num_bigint::BigUint::ZERO;
    for &p in sorted.iter().rev() {
        let e = exact_units(p);
        if !(e < one && e > tail) {
            return false;
        }
        tail += e;
    }
    true
}
