use crate::lp::{Lp, Relation};
use crate::network::{NetworkSpec, NodeKind};

use super::{AlphaVector, AnalysisError, FractionalRouting, PathFlow, Verdict, STRICT_TOL};

pub const DEFAULT_PATH_CAP: usize = 1_000_000;

/// All source→terminal paths as node sequences, lexicographic by node ids.
pub fn enumerate_paths(net: &NetworkSpec, cap: usize) -> Result<Vec<Vec<usize>>, AnalysisError> {
    let mut out = Vec::new();
    for s in net.sources() {
        let mut stack = vec![s];
        walk(net, &mut stack, &mut out, cap)?;
    }
    Ok(out)
}

fn walk(net: &NetworkSpec, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) -> Result<(), AnalysisError> {
    let v = *stack.last().expect("non-empty path");
    if net.kind(v) == NodeKind::Terminal {
        if out.len() == cap {
            return Err(AnalysisError::PathExplosion { cap });
        }
        out.push(stack.clone());
        return Ok(());
    }
    for &w in net.out_neighbors(v) {
        stack.push(w);
        walk(net, stack, out, cap)?;
        stack.pop();
    }
    Ok(())
}

pub fn check_dag_flow(net: &NetworkSpec) -> Result<Verdict<PathFlow, ()>, AnalysisError> {
    check_dag_flow_with_cap(net, DEFAULT_PATH_CAP)
}

/// Path-flow program: maximize s subject to sender budgets Σ f/μ_next ≤ 1,
/// receiver capacities Σ f ≤ μ, and per-source demand Σ f ≥ λ + s.
/// Conservation holds by construction since every variable is a whole path.
pub fn check_dag_flow_with_cap(net: &NetworkSpec, cap: usize) -> Result<Verdict<PathFlow, ()>, AnalysisError> {
    check_flow_on_paths(net, enumerate_paths(net, cap)?)
}

/// The path-flow program over an explicit path set (node sequences from a
/// source to a terminal).
pub fn check_flow_on_paths(net: &NetworkSpec, paths: Vec<Vec<usize>>) -> Result<Verdict<PathFlow, ()>, AnalysisError> {
    let s = paths.len();
    let mut lp = Lp::new(s + 1);
    lp.set_free(s);
    lp.set_objective(s, 1.0);

    let mut budget: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.len()];
    let mut load: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.len()];
    let mut demand: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.len()];
    for (k, p) in paths.iter().enumerate() {
        demand[p[0]].push((k, 1.0));
        for w in p.windows(2) {
            budget[w[0]].push((k, 1.0 / net.rate(w[1])));
            load[w[1]].push((k, 1.0));
        }
    }
    for x in 0..net.len() {
        match net.kind(x) {
            NodeKind::Source => {
                let mut row = std::mem::take(&mut demand[x]);
                row.push((s, -1.0));
                lp.add(row, Relation::Ge, net.rate(x));
            }
            _ => {
                if !load[x].is_empty() {
                    lp.add(std::mem::take(&mut load[x]), Relation::Le, net.rate(x));
                }
            }
        }
        if !budget[x].is_empty() {
            lp.add(std::mem::take(&mut budget[x]), Relation::Le, 1.0);
        }
    }
    let sol = lp.solve()?;
    let slack = sol.x[s];
    if slack > STRICT_TOL {
        let flow = sol.x[..s].iter().map(|&v| if v > 1e-13 { v } else { 0.0 }).collect();
        Ok(Verdict::Feasible { slack, witness: PathFlow { paths, flow } })
    } else {
        Ok(Verdict::Infeasible { slack, certificate: () })
    }
}

/// Edge-variable program with the middle-node balance relaxed to
/// "forward at least what arrives": maximize s in Σ_j z_ij μ_j ≥ λ_i + s.
/// Its optimum equals the path-flow optimum; when not strictly positive the
/// dual α on sources and middle servers is returned as certificate.
pub fn check_dag_edge(net: &NetworkSpec) -> Result<Verdict<FractionalRouting, AlphaVector>, AnalysisError> {
    let edges = net.edges();
    let s = edges.len();
    let mut lp = Lp::new(s + 1);
    lp.set_free(s);
    lp.set_objective(s, 1.0);
    for x in 0..net.len() {
        let out: Vec<(usize, f64)> =
            edges.iter().enumerate().filter(|(_, e)| e.0 == x).map(|(k, e)| (k, net.rate(e.1))).collect();
        let inc: Vec<usize> = edges.iter().enumerate().filter(|(_, e)| e.1 == x).map(|(k, _)| k).collect();
        match net.kind(x) {
            NodeKind::Source => {
                let mut row = out.clone();
                row.push((s, -1.0));
                lp.add(row, Relation::Ge, net.rate(x));
            }
            NodeKind::Server => {
                let mut row = out.clone();
                row.extend(inc.iter().map(|&k| (k, -net.rate(x))));
                lp.add(row, Relation::Ge, 0.0);
            }
            NodeKind::Terminal => {}
        }
        if !out.is_empty() {
            lp.add(out.iter().map(|&(k, _)| (k, 1.0)).collect(), Relation::Le, 1.0);
        }
        if !inc.is_empty() {
            lp.add(inc.iter().map(|&k| (k, 1.0)).collect(), Relation::Le, 1.0);
        }
    }
    let sol = lp.solve()?;
    let slack = sol.x[s];
    if slack > STRICT_TOL {
        let mut z = FractionalRouting::new();
        for (k, &(a, b)) in edges.iter().enumerate() {
            if sol.x[k] > 1e-13 {
                z.set(a, b, sol.x[k]);
            }
        }
        return Ok(Verdict::Feasible { slack, witness: z });
    }

    // Dual over α (senders), ρ (senders), σ (receivers):
    // max Σ_{S1} α λ − Σ ρ − Σ σ  s.t.  ρ_x + σ_y ≥ (α_x − α_y) μ_y,  Σ_{S1} α = 1.
    let n = net.len();
    let (a, r, g) = (0, n, 2 * n);
    let mut dual = Lp::new(3 * n);
    for x in 0..n {
        if net.kind(x) == NodeKind::Source {
            dual.set_objective(a + x, net.rate(x));
        }
        dual.set_objective(r + x, -1.0);
        dual.set_objective(g + x, -1.0);
        if net.kind(x) == NodeKind::Terminal {
            dual.add(vec![(a + x, 1.0)], Relation::Le, 0.0);
        }
    }
    for &(x, y) in edges {
        let mu = net.rate(y);
        let mut row = vec![(r + x, 1.0), (g + y, 1.0), (a + x, -mu)];
        if net.kind(y) == NodeKind::Server {
            row.push((a + y, mu));
        }
        dual.add(row, Relation::Ge, 0.0);
    }
    dual.add(net.sources().into_iter().map(|i| (a + i, 1.0)).collect(), Relation::Eq, 1.0);
    let dsol = dual.solve()?;
    let values = (0..n).map(|x| dsol.x[a + x].max(0.0)).collect();
    Ok(Verdict::Infeasible { slack, certificate: AlphaVector { values } })
}

/// Turn a strictly feasible path flow into edge variables satisfying the edge
/// system with strict source and middle-node inequalities.
pub fn flow_to_edge(net: &NetworkSpec, f: &PathFlow) -> Result<FractionalRouting, AnalysisError> {
    let gamma = net.sources().into_iter().map(|i| f.source_total(i) / net.rate(i)).fold(f64::INFINITY, f64::min);
    if gamma.is_nan() || gamma <= 1.0 {
        return Err(AnalysisError::NoStrictSlack { gamma });
    }
    // position among non-source nodes in topological order, 1-based; sources at 0
    let mut rank = vec![0usize; net.len()];
    let mut m = 0;
    for &v in net.topo_order() {
        if net.kind(v) != NodeKind::Source {
            m += 1;
            rank[v] = m;
        }
    }
    let mut z = FractionalRouting::new();
    for &(x, y) in net.edges() {
        let base = f.edge_total(x, y) / net.rate(y);
        if base > 0.0 {
            let expo = (rank[x] as f64 + 1.0) / (m as f64 + 1.0) - 1.0;
            z.set(x, y, base * gamma.powf(expo));
        }
    }
    Ok(z)
}

/// Slack of each part of the edge system for a given z.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSystemReport {
    /// min over sources of Σ_j z_ij μ_j − λ_i
    pub source_margin: f64,
    /// min over middle servers whose incoming z are all positive of
    /// Σ_j z_ij μ_j − μ_i Σ_j z_ji; `None` when no middle server qualifies
    pub middle_margin: Option<f64>,
    pub max_out_sum: f64,
    pub max_in_sum: f64,
    pub min_value: f64,
    pub off_support: bool,
}

impl EdgeSystemReport {
    pub fn holds(&self, margin: f64, tol: f64) -> bool {
        self.source_margin > margin
            && self.middle_margin.is_none_or(|m| m > margin)
            && self.max_out_sum <= 1.0 + tol
            && self.max_in_sum <= 1.0 + tol
            && self.min_value >= -tol
            && !self.off_support
    }
}

pub fn verify_edge_system(net: &NetworkSpec, z: &FractionalRouting) -> EdgeSystemReport {
    let sent = |x: usize| -> f64 { net.out_neighbors(x).iter().map(|&y| z.get(x, y) * net.rate(y)).sum() };
    let source_margin = net.sources().into_iter().map(|i| sent(i) - net.rate(i)).fold(f64::INFINITY, f64::min);
    let middle_margin = net
        .middle()
        .into_iter()
        .filter(|&x| net.in_neighbors(x).iter().all(|&y| z.get(y, x) > 0.0))
        .map(|x| sent(x) - net.rate(x) * net.in_neighbors(x).iter().map(|&y| z.get(y, x)).sum::<f64>())
        .reduce(f64::min);
    let off_support = z.iter().any(|((a, b), _)| net.edge_index(a, b).is_none());
    EdgeSystemReport {
        source_margin,
        middle_margin,
        max_out_sum: (0..net.len()).map(|x| z.out_sum(x)).fold(0.0, f64::max),
        max_in_sum: (0..net.len()).map(|x| z.in_sum(x)).fold(0.0, f64::max),
        min_value: z.iter().map(|(_, v)| v).fold(0.0, f64::min),
        off_support,
    }
}
