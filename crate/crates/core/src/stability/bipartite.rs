use crate::lp::{Lp, Relation};
use crate::network::NetworkSpec;

use super::{best_matching, AlphaVector, AnalysisError, FractionalRouting, Verdict, STRICT_TOL};

/// Is there a fractional matching P with Pμ strictly above λ?
///
/// The primal maximizes the common slack s in (Pμ)_i ≥ λ_i + s. When s* is not
/// strictly positive, the dual program is solved for α on the simplex
/// minimizing max_M α·Mμ − α·λ, which certifies infeasibility.
pub fn check_bipartite_centralized(
    net: &NetworkSpec,
) -> Result<Verdict<FractionalRouting, AlphaVector>, AnalysisError> {
    let view = net.bipartite().map_err(|_| AnalysisError::NotBipartite)?;
    let (n, m) = (view.n(), view.m());
    let edges: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| view.adj[i][j]).collect();

    let s = edges.len();
    let mut lp = Lp::new(edges.len() + 1);
    lp.set_free(s);
    lp.set_objective(s, 1.0);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> =
            edges.iter().enumerate().filter(|(_, e)| e.0 == i).map(|(k, e)| (k, view.mu[e.1])).collect();
        row.push((s, -1.0));
        lp.add(row, Relation::Ge, view.lambda[i]);
        let sum = edges.iter().enumerate().filter(|(_, e)| e.0 == i).map(|(k, _)| (k, 1.0)).collect();
        lp.add(sum, Relation::Le, 1.0);
    }
    for j in 0..m {
        let sum: Vec<_> = edges.iter().enumerate().filter(|(_, e)| e.1 == j).map(|(k, _)| (k, 1.0)).collect();
        if !sum.is_empty() {
            lp.add(sum, Relation::Le, 1.0);
        }
    }
    let sol = lp.solve()?;
    let slack = sol.x[s];
    if slack > STRICT_TOL {
        let mut routing = FractionalRouting::new();
        for (k, &(i, j)) in edges.iter().enumerate() {
            let v = sol.x[k];
            if v > 1e-12 {
                routing.set(view.queues[i], view.servers[j], v.min(1.0));
            }
        }
        return Ok(Verdict::Feasible { slack, witness: routing });
    }

    // Dual: variables α (n), ρ (n), σ (m). max Σ α_i λ_i − Σ ρ − Σ σ
    // s.t. ρ_i + σ_j ≥ α_i μ_j on edges, Σ α = 1.
    let mut dual = Lp::new(2 * n + m);
    for i in 0..n {
        dual.set_objective(i, view.lambda[i]);
        dual.set_objective(n + i, -1.0);
    }
    for j in 0..m {
        dual.set_objective(2 * n + j, -1.0);
    }
    for &(i, j) in &edges {
        dual.add(vec![(n + i, 1.0), (2 * n + j, 1.0), (i, -view.mu[j])], Relation::Ge, 0.0);
    }
    dual.add((0..n).map(|i| (i, 1.0)).collect(), Relation::Eq, 1.0);
    let dsol = dual.solve()?;
    let mut values = vec![0.0; net.len()];
    for (i, &q) in view.queues.iter().enumerate() {
        values[q] = dsol.x[i].max(0.0);
    }
    Ok(Verdict::Infeasible { slack, certificate: AlphaVector { values } })
}

/// Farkas check: every matching M has α·Mμ ≤ α·λ (up to `tol`).
pub fn matching_certificate_holds(net: &NetworkSpec, alpha: &AlphaVector, tol: f64) -> bool {
    let Ok(view) = net.bipartite() else { return false };
    let a: Vec<f64> = view.queues.iter().map(|&q| alpha.values[q]).collect();
    let w = best_matching(net, &a);
    a.iter().any(|&x| x > 0.0) && w.value <= w.threshold + tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::{Node, NodeKind};

    fn single(lambda: f64, mu: f64) -> NetworkSpec {
        NetworkSpec::build(
            vec![
                Node { name: "q".into(), kind: NodeKind::Source, rate: lambda },
                Node { name: "s".into(), kind: NodeKind::Terminal, rate: mu },
            ],
            vec![(0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn slow_fast_pair_is_feasible_and_identity_is_a_witness() {
        let net = fixtures::slow_fast_pair();
        let v = check_bipartite_centralized(&net).unwrap();
        assert!(v.is_feasible());
        // identity matching gives (0.41, 0.99) which beats (0.4, 0.4)
        let p = v.witness().unwrap();
        for q in net.sources() {
            let served: f64 = net.out_neighbors(q).iter().map(|&s| p.get(q, s) * net.rate(s)).sum();
            assert!(served >= net.rate(q) + v.slack() - 1e-9);
        }
        p.check_substochastic(&net, 1e-9).unwrap();
    }

    #[test]
    fn single_edge_overload_gives_unit_alpha() {
        let net = single(0.5, 0.4);
        let v = check_bipartite_centralized(&net).unwrap();
        let alpha = v.certificate().expect("infeasible");
        assert!((alpha.values[0] - 1.0).abs() < 1e-9);
        assert!((v.slack() + 0.1).abs() < 1e-9);
        assert!(matching_certificate_holds(&net, alpha, 1e-9));
    }

    #[test]
    fn rejects_middle_layer() {
        assert_eq!(check_bipartite_centralized(&fixtures::myopic_trap()), Err(AnalysisError::NotBipartite));
    }
}
