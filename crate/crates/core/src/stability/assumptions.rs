use serde::Serialize;

use crate::matching::max_weight_matching;
use crate::network::{NetworkSpec, NodeKind};

use super::{check_bipartite_centralized, check_dag_flow, AlphaVector, AnalysisError, DualWitness};

/// Largest queue count for {0,1}^n enumeration.
pub const MAX_ENUM_QUEUES: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionVerdict {
    pub holds: bool,
    /// First failing α over queues (in source id order), when the check fails.
    pub failing_alpha: Option<Vec<f64>>,
}

/// Max α·Mμ over matchings M, with α given per queue in source id order.
pub fn best_matching(net: &NetworkSpec, alpha: &[f64]) -> DualWitness {
    let view = net.bipartite().expect("bipartite network");
    assert_eq!(alpha.len(), view.n(), "one weight per queue");
    let weights: Vec<Vec<Option<f64>>> =
        (0..view.n()).map(|i| (0..view.m()).map(|j| view.adj[i][j].then(|| alpha[i] * view.mu[j])).collect()).collect();
    let m = max_weight_matching(&weights);
    DualWitness {
        edges: m.pairs.iter().map(|&(i, j)| (view.queues[i], view.servers[j])).collect(),
        value: m.value,
        threshold: alpha.iter().zip(&view.lambda).map(|(a, l)| a * l).sum(),
    }
}

/// Vertex-disjoint path set maximizing Σ (α_i − α_j) μ_j.
pub fn best_path_set(net: &NetworkSpec, alpha: &AlphaVector) -> DualWitness {
    assert_eq!(alpha.values.len(), net.len(), "one weight per node");
    debug_assert!(alpha.values.iter().all(|&a| a >= 0.0));
    let a = |x: usize| if net.kind(x) == NodeKind::Terminal { 0.0 } else { alpha.values[x] };
    let sg = net.split();
    let weights = sg.weight_matrix(|x, y| (a(x) - a(y)) * net.rate(y));
    let m = max_weight_matching(&weights);
    DualWitness {
        edges: sg.decode(&m.pairs),
        value: m.value,
        threshold: net.sources().into_iter().map(|i| a(i) * net.rate(i)).sum(),
    }
}

fn check_beta(beta: f64) -> Result<f64, AnalysisError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(0.5 * (1.0 - beta))
    } else {
        Err(AnalysisError::BadBeta(beta))
    }
}

fn scaled(net: &NetworkSpec, factor: f64) -> NetworkSpec {
    net.with_rates(|i, r| if net.kind(i) == NodeKind::Source { r } else { r * factor })
}

/// Doubled-capacity condition over α ∈ {0,1}^n \ {0}.
pub fn check_assumption_bipartite(net: &NetworkSpec, beta: f64) -> Result<AssumptionVerdict, AnalysisError> {
    let factor = check_beta(beta)?;
    let view = net.bipartite().map_err(|_| AnalysisError::NotBipartite)?;
    let n = view.n();
    if n > MAX_ENUM_QUEUES {
        return Err(AnalysisError::TooManyQueues { n, max: MAX_ENUM_QUEUES });
    }
    for mask in 1u32..(1u32 << n) {
        let alpha: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
        let w = best_matching(net, &alpha);
        if factor * w.value <= w.threshold {
            return Ok(AssumptionVerdict { holds: false, failing_alpha: Some(alpha) });
        }
    }
    Ok(AssumptionVerdict { holds: true, failing_alpha: None })
}

/// Same condition with α ranging over all of R_+^n, decided by LP.
pub fn check_assumption_bipartite_relaxed(net: &NetworkSpec, beta: f64) -> Result<bool, AnalysisError> {
    let factor = check_beta(beta)?;
    Ok(check_bipartite_centralized(&scaled(net, factor))?.is_feasible())
}

/// Doubled-capacity condition on a DAG, decided by the path-flow program on
/// the instance with server rates scaled by ½(1−β).
pub fn check_assumption_dag(net: &NetworkSpec, beta: f64) -> Result<bool, AnalysisError> {
    let factor = check_beta(beta)?;
    Ok(check_dag_flow(&scaled(net, factor))?.is_feasible())
}

/// Best path set for an explicit α under the ½(1−β)-scaled rates.
pub fn assumption_dag_witness(net: &NetworkSpec, beta: f64, alpha: &AlphaVector) -> Result<DualWitness, AnalysisError> {
    let factor = check_beta(beta)?;
    Ok(best_path_set(&scaled(net, factor), alpha))
}

/// Tighter complete-bipartite condition: for every k, the top-k servers at
/// k/(2k−1)(1−β) of capacity beat the top-k arrival rates.
pub fn check_cb_tighter(net: &NetworkSpec, beta: f64) -> Result<bool, AnalysisError> {
    check_beta(beta)?;
    let view = net.bipartite().map_err(|_| AnalysisError::NotBipartite)?;
    if !view.is_complete() {
        return Err(AnalysisError::NotCompleteBipartite);
    }
    let mut lambda = view.lambda.clone();
    let mut mu = view.mu.clone();
    lambda.sort_by(|a, b| b.total_cmp(a));
    mu.sort_by(|a, b| b.total_cmp(a));
    let (mut sl, mut sm) = (0.0, 0.0);
    for k in 1..=lambda.len() {
        sl += lambda[k - 1];
        sm += mu.get(k - 1).copied().unwrap_or(0.0);
        let kf = k as f64;
        if kf / (2.0 * kf - 1.0) * (1.0 - beta) * sm <= sl {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::Node;

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
    fn best_matching_on_slow_fast_pair() {
        let net = fixtures::slow_fast_pair();
        let w = best_matching(&net, &[1.0, 1.0]);
        assert!((w.value - 1.40).abs() < 1e-12);
        assert!((w.threshold - 0.8).abs() < 1e-12);
        let w = best_matching(&net, &[1.0, 0.0]);
        assert!((w.value - 0.99).abs() < 1e-12);
        let (q1, s2) = (net.lookup("q1").unwrap(), net.lookup("s2").unwrap());
        assert_eq!(w.edges, vec![(q1, s2)]);
        let w = best_matching(&net, &[0.0, 0.0]);
        assert!(w.edges.is_empty() && w.value == 0.0 && w.threshold == 0.0 && !w.strict());
    }

    #[test]
    fn best_path_set_on_chain() {
        let net = NetworkSpec::build(
            vec![
                Node { name: "1".into(), kind: NodeKind::Source, rate: 0.3 },
                Node { name: "2".into(), kind: NodeKind::Server, rate: 0.5 },
                Node { name: "3".into(), kind: NodeKind::Terminal, rate: 0.8 },
            ],
            vec![(0, 1), (1, 2)],
        )
        .unwrap();
        let w = best_path_set(&net, &AlphaVector { values: vec![2.0, 1.0, 0.0] });
        assert_eq!(w.edges, vec![(0, 1), (1, 2)]);
        assert!((w.value - 1.3).abs() < 1e-12);
    }

    #[test]
    fn best_path_set_single_source_support() {
        let net = fixtures::myopic_trap();
        let one = net.lookup("1").unwrap();
        let mut values = vec![0.0; net.len()];
        values[one] = 1.0;
        let w = best_path_set(&net, &AlphaVector { values });
        assert_eq!(w.edges.len(), 1);
        assert_eq!(w.edges[0].0, one);
        let best = net.out_neighbors(one).iter().map(|&j| net.rate(j)).fold(0.0, f64::max);
        assert!((w.value - best).abs() < 1e-12);
    }

    #[test]
    fn slow_fast_pair_fails_doubled_capacity_at_both_queues() {
        let v = check_assumption_bipartite(&fixtures::slow_fast_pair(), 0.01).unwrap();
        assert!(!v.holds);
        assert_eq!(v.failing_alpha, Some(vec![1.0, 1.0]));
    }

    #[test]
    fn lightly_loaded_single_queue_passes() {
        assert!(check_assumption_bipartite(&single(0.1, 0.9), 0.1).unwrap().holds);
        assert!(!check_assumption_bipartite(&single(0.5, 0.9), 0.1).unwrap().holds);
    }

    #[test]
    fn myopic_trap_assumption_under_scaling() {
        // Halving λ is the same program as doubling μ after rescaling the flow.
        let net = fixtures::myopic_trap();
        let light = net.with_rates(|i, r| if net.kind(i) == NodeKind::Source { r / 2.0 } else { r });
        assert!(check_assumption_dag(&light, 0.01).unwrap());
        let doubled = net.with_rates(|i, r| if net.kind(i) == NodeKind::Source { r } else { 2.0 * r });
        assert!(check_assumption_dag(&doubled, 0.01).unwrap());
        assert!(!check_assumption_dag(&net, 0.5).unwrap());
    }

    #[test]
    fn cb_tighter_examples() {
        let net = fixtures::slow_fast_pair();
        assert!(check_cb_tighter(&net, 0.01).unwrap());
        assert!(!check_cb_tighter(&net, 0.9).unwrap());
        assert!(check_cb_tighter(&single(0.6, 0.9), 0.1).unwrap());
        assert!(!check_cb_tighter(&single(0.82, 0.9), 0.1).unwrap());
        assert_eq!(
            check_cb_tighter(&fixtures::incomplete_weights_gap(), 0.1),
            Err(AnalysisError::NotCompleteBipartite)
        );
    }

    #[test]
    fn bad_beta_is_rejected() {
        assert_eq!(check_assumption_dag(&fixtures::myopic_trap(), 1.0), Err(AnalysisError::BadBeta(1.0)));
    }
}
