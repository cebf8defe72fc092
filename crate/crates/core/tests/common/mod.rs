//! Instance generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use queuenet::network::{NetworkSpec, Node, NodeKind};
use queuenet::stability::{FractionalRouting, PathFlow};
use rand::Rng;

pub fn node(name: impl Into<String>, kind: NodeKind, rate: f64) -> Node {
    Node { name: name.into(), kind, rate }
}

fn rate(rng: &mut impl Rng) -> f64 {
    rng.random_range(0.05..0.95)
}

/// Random bipartite instance with `n` queues and `m` servers. Every node
/// keeps at least one edge.
pub fn random_bipartite(rng: &mut impl Rng, n: usize, m: usize, density: f64) -> NetworkSpec {
    let mut nodes: Vec<Node> = (0..n).map(|i| node(format!("q{i}"), NodeKind::Source, rate(rng))).collect();
    nodes.extend((0..m).map(|j| node(format!("s{j}"), NodeKind::Terminal, rate(rng))));
    let mut adj = vec![vec![false; m]; n];
    for row in adj.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.random_bool(density);
        }
    }
    for row in adj.iter_mut() {
        if !row.iter().any(|&b| b) {
            row[rng.random_range(0..m)] = true;
        }
    }
    for j in 0..m {
        if !adj.iter().any(|r| r[j]) {
            adj[rng.random_range(0..n)][j] = true;
        }
    }
    let edges = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| adj[i][j]);
    NetworkSpec::build(nodes, edges.map(|(i, j)| (i, n + j)).collect()).unwrap()
}

pub fn complete_bipartite(lambda: &[f64], mu: &[f64]) -> NetworkSpec {
    let n = lambda.len();
    let mut nodes: Vec<Node> =
        lambda.iter().enumerate().map(|(i, &l)| node(format!("q{}", i + 1), NodeKind::Source, l)).collect();
    nodes.extend(mu.iter().enumerate().map(|(j, &m)| node(format!("s{}", j + 1), NodeKind::Terminal, m)));
    let edges = (0..n).flat_map(|i| (0..mu.len()).map(move |j| (i, n + j))).collect();
    NetworkSpec::build(nodes, edges).unwrap()
}

/// Random layered DAG with at most `max_nodes` nodes: a source layer, zero to
/// two server layers, and a terminal layer. Edges may skip layers.
pub fn random_layered_dag(rng: &mut impl Rng, max_nodes: usize) -> NetworkSpec {
    loop {
        let middle_layers = rng.random_range(0..=2);
        let mut sizes = vec![rng.random_range(1..=3)];
        for _ in 0..middle_layers {
            sizes.push(rng.random_range(1..=2));
        }
        sizes.push(rng.random_range(1..=2));
        if sizes.iter().sum::<usize>() > max_nodes {
            continue;
        }
        let last = sizes.len() - 1;
        let mut layers: Vec<Vec<usize>> = Vec::new();
        let mut nodes = Vec::new();
        for (l, &size) in sizes.iter().enumerate() {
            let kind = match l {
                0 => NodeKind::Source,
                l if l == last => NodeKind::Terminal,
                _ => NodeKind::Server,
            };
            let mut ids = Vec::new();
            for _ in 0..size {
                ids.push(nodes.len());
                nodes.push(node(format!("v{}", nodes.len()), kind, rate(rng)));
            }
            layers.push(ids);
        }
        let mut edges = std::collections::BTreeSet::new();
        for l in 1..=last {
            for &y in &layers[l] {
                let prev = &layers[l - 1];
                edges.insert((prev[rng.random_range(0..prev.len())], y));
            }
            for &x in &layers[l - 1] {
                let next = &layers[l];
                edges.insert((x, next[rng.random_range(0..next.len())]));
            }
        }
        for a in 0..last {
            for b in a + 1..=last {
                for &x in &layers[a] {
                    for &y in &layers[b] {
                        if rng.random_bool(0.25) {
                            edges.insert((x, y));
                        }
                    }
                }
            }
        }
        return NetworkSpec::build(nodes, edges.into_iter().collect()).unwrap();
    }
}

/// All matchings (distinct queues, distinct servers) of a bipartite adjacency.
pub fn all_matchings(adj: &[Vec<bool>]) -> Vec<Vec<(usize, usize)>> {
    fn go(
        i: usize,
        adj: &[Vec<bool>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if i == adj.len() {
            out.push(cur.clone());
            return;
        }
        go(i + 1, adj, used, cur, out);
        for j in 0..adj[i].len() {
            if adj[i][j] && !used[j] {
                used[j] = true;
                cur.push((i, j));
                go(i + 1, adj, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let m = adj.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    go(0, adj, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

/// Best value of Σ α_i μ_j over all matchings, by enumeration.
pub fn brute_matching_value(adj: &[Vec<bool>], alpha: &[f64], mu: &[f64]) -> f64 {
    all_matchings(adj)
        .iter()
        .map(|m| m.iter().map(|&(i, j)| alpha[i] * mu[j]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// All edge subsets with distinct tails and distinct heads.
pub fn disjoint_edge_sets(edges: &[(usize, usize)], nodes: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(
        k: usize,
        edges: &[(usize, usize)],
        tails: &mut Vec<bool>,
        heads: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if k == edges.len() {
            out.push(cur.clone());
            return;
        }
        go(k + 1, edges, tails, heads, cur, out);
        let (x, y) = edges[k];
        if !tails[x] && !heads[y] {
            tails[x] = true;
            heads[y] = true;
            cur.push((x, y));
            go(k + 1, edges, tails, heads, cur, out);
            cur.pop();
            tails[x] = false;
            heads[y] = false;
        }
    }
    let mut out = Vec::new();
    go(0, edges, &mut vec![false; nodes], &mut vec![false; nodes], &mut Vec::new(), &mut out);
    out
}

/// Weighted value Σ (α_x − α_y)μ_y of an edge set, with α = 0 at terminals.
pub fn edge_set_value(net: &NetworkSpec, alpha: &[f64], set: &[(usize, usize)]) -> f64 {
    set.iter()
        .map(|&(x, y)| {
            let ay = if net.kind(y) == NodeKind::Terminal { 0.0 } else { alpha[y] };
            (alpha[x] - ay) * net.rate(y)
        })
        .sum()
}

/// Minimum slack of a path flow against the flow conditions: every path is a
/// source-to-terminal path of the network, out-capacity Σ_y f(x,y)/μ_y ≤ 1 and
/// in-capacity Σ f(·,y) ≤ μ_y hold, and each source sends more than λ.
/// Returns `None` if a structural check fails, else the smallest source margin.
pub fn path_flow_margin(net: &NetworkSpec, flow: &PathFlow, tol: f64) -> Option<f64> {
    let n = net.len();
    let mut edge = std::collections::BTreeMap::<(usize, usize), f64>::new();
    let mut from_source = vec![0.0; n];
    for (path, &f) in flow.paths.iter().zip(&flow.flow) {
        if f < -tol || path.len() < 2 {
            return None;
        }
        if net.kind(path[0]) != NodeKind::Source || net.kind(*path.last().unwrap()) != NodeKind::Terminal {
            return None;
        }
        for w in path.windows(2) {
            net.edge_index(w[0], w[1])?;
            *edge.entry((w[0], w[1])).or_default() += f;
        }
        from_source[path[0]] += f;
    }
    for x in 0..n {
        let out: f64 = edge.iter().filter(|(e, _)| e.0 == x).map(|(e, f)| f / net.rate(e.1)).sum();
        let inflow: f64 = edge.iter().filter(|(e, _)| e.1 == x).map(|(_, f)| f).sum();
        if out > 1.0 + tol || inflow > net.rate(x) + tol {
            return None;
        }
    }
    Some(net.sources().into_iter().map(|i| from_source[i] - net.rate(i)).fold(f64::INFINITY, f64::min))
}

/// Smallest margin of the edge system: sources serve strictly more than they
/// receive, middle nodes whose in-edges are all used forward strictly more
/// than they take in, out and in sums are at most one, values nonnegative and
/// on the edge set. `None` when a non-strict part fails.
pub fn edge_system_margin(net: &NetworkSpec, z: &FractionalRouting, tol: f64) -> Option<f64> {
    let mut margin = f64::INFINITY;
    for ((x, y), v) in z.iter() {
        if v < -tol || net.edge_index(x, y).is_none() {
            return None;
        }
    }
    for x in 0..net.len() {
        let out: f64 = net.out_neighbors(x).iter().map(|&y| z.get(x, y)).sum();
        let inc: f64 = net.in_neighbors(x).iter().map(|&w| z.get(w, x)).sum();
        if out > 1.0 + tol || inc > 1.0 + tol {
            return None;
        }
        let served: f64 = net.out_neighbors(x).iter().map(|&y| z.get(x, y) * net.rate(y)).sum();
        match net.kind(x) {
            NodeKind::Source => margin = margin.min(served - net.rate(x)),
            NodeKind::Server if net.in_neighbors(x).iter().all(|&w| z.get(w, x) > 0.0) => {
                margin = margin.min(served - net.rate(x) * inc);
            }
            _ => {}
        }
    }
    Some(margin)
}

/// Random substochastic matrix: entries scaled so that no row or column sum
/// exceeds one.
pub fn random_substochastic(rng: &mut impl Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| if rng.random_bool(0.7) { rng.random::<f64>() } else { 0.0 }).collect())
        .collect();
    let row_max = raw.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
    let col_max = (0..m).map(|j| raw.iter().map(|r| r[j]).sum::<f64>()).fold(0.0, f64::max);
    let scale = row_max.max(col_max).max(1.0) / rng.random_range(0.5..=1.0);
    raw.into_iter().map(|r| r.into_iter().map(|v| v / scale).collect()).collect()
}

/// Random substochastic edge routing on a network.
pub fn random_routing(rng: &mut impl Rng, net: &NetworkSpec) -> FractionalRouting {
    let mut z = FractionalRouting::new();
    for &(x, y) in net.edges() {
        let share = net.out_neighbors(x).len().max(net.in_neighbors(y).len()) as f64;
        z.set(x, y, rng.random::<f64>() / share);
    }
    z
}

/// Largest gap between component marginals and `target`, and whether every
/// component has distinct tails and distinct heads.
pub fn marginal_check(
    components: &[(Vec<(usize, usize)>, f64)],
    target: &dyn Fn(usize, usize) -> f64,
    support: &[(usize, usize)],
) -> (f64, bool) {
    let mut disjoint = true;
    for (edges, _) in components {
        let mut tails: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let mut heads: Vec<usize> = edges.iter().map(|e| e.1).collect();
        tails.sort_unstable();
        heads.sort_unstable();
        disjoint &= tails.windows(2).all(|w| w[0] != w[1]) && heads.windows(2).all(|w| w[0] != w[1]);
    }
    let mut err: f64 = 0.0;
    for &(a, b) in support {
        let got: f64 = components.iter().filter(|(e, _)| e.contains(&(a, b))).map(|(_, p)| p).sum();
        err = err.max((got - target(a, b)).abs());
    }
    for (edges, _) in components {
        for e in edges {
            if !support.contains(e) {
                err = f64::INFINITY;
            }
        }
    }
    let total: f64 = components.iter().map(|c| c.1).sum();
    if total > 1.0 + 1e-9 || components.iter().any(|c| c.1 < -1e-12) {
        disjoint = false;
    }
    (err, disjoint)
}
