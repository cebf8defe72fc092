//! Centralized stabilizability checks, dual certificates, decentralized
//! sufficiency conditions, and decompositions into executable policies.

mod assumptions;
mod bipartite;
mod dag;
mod decompose;

pub use assumptions::{
    assumption_dag_witness, best_matching, best_path_set, check_assumption_bipartite,
    check_assumption_bipartite_relaxed, check_assumption_dag, check_cb_tighter, AssumptionVerdict, MAX_ENUM_QUEUES,
};
pub use bipartite::{check_bipartite_centralized, matching_certificate_holds};
pub use dag::{
    check_dag_edge, check_dag_flow, check_dag_flow_with_cap, check_flow_on_paths, enumerate_paths, flow_to_edge,
    verify_edge_system, EdgeSystemReport, DEFAULT_PATH_CAP,
};
pub use decompose::{decompose_bvn, decompose_paths};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lp::LpError;
use crate::network::NetworkSpec;

/// Optimal slack must exceed this for a strict inequality to count.
pub const STRICT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("network has middle servers; a bipartite instance is required")]
    NotBipartite,
    #[error("bipartite graph is not complete")]
    NotCompleteBipartite,
    #[error("more than {cap} source-terminal paths")]
    PathExplosion { cap: usize },
    #[error("flow has no strict slack (gamma = {gamma})")]
    NoStrictSlack { gamma: f64 },
    #[error("matrix is not substochastic: {0}")]
    NotSubstochastic(String),
    #[error("{n} queues exceeds the enumeration bound of {max}")]
    TooManyQueues { n: usize, max: usize },
    #[error("invalid weight vector: {0}")]
    BadAlpha(String),
    #[error("beta must lie in (0,1), got {0}")]
    BadBeta(f64),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Outcome of a slack-maximizing feasibility check.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict<W, C> {
    Feasible { slack: f64, witness: W },
    Infeasible { slack: f64, certificate: C },
}

impl<W, C> Verdict<W, C> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible { .. })
    }

    pub fn slack(&self) -> f64 {
        match self {
            Verdict::Feasible { slack, .. } | Verdict::Infeasible { slack, .. } => *slack,
        }
    }

    pub fn witness(&self) -> Option<&W> {
        match self {
            Verdict::Feasible { witness, .. } => Some(witness),
            Verdict::Infeasible { .. } => None,
        }
    }

    pub fn certificate(&self) -> Option<&C> {
        match self {
            Verdict::Infeasible { certificate, .. } => Some(certificate),
            Verdict::Feasible { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeValue {
    pub tail: usize,
    pub head: usize,
    pub value: f64,
}

/// Edge variables z over network edges (a fractional matching in bipartite nets).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<EdgeValue>", into = "Vec<EdgeValue>")]
pub struct FractionalRouting {
    z: BTreeMap<(usize, usize), f64>,
}

impl From<Vec<EdgeValue>> for FractionalRouting {
    fn from(v: Vec<EdgeValue>) -> Self {
        let mut r = FractionalRouting::default();
        for e in v {
            r.set(e.tail, e.head, e.value);
        }
        r
    }
}

impl From<FractionalRouting> for Vec<EdgeValue> {
    fn from(r: FractionalRouting) -> Self {
        r.z.into_iter().map(|((tail, head), value)| EdgeValue { tail, head, value }).collect()
    }
}

impl FractionalRouting {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, tail: usize, head: usize, value: f64) {
        if value == 0.0 {
            self.z.remove(&(tail, head));
        } else {
            self.z.insert((tail, head), value);
        }
    }

    pub fn get(&self, tail: usize, head: usize) -> f64 {
        self.z.get(&(tail, head)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.z.iter().map(|(&k, &v)| (k, v))
    }

    pub fn out_sum(&self, tail: usize) -> f64 {
        self.iter().filter(|((a, _), _)| *a == tail).map(|(_, v)| v).sum()
    }

    pub fn in_sum(&self, head: usize) -> f64 {
        self.iter().filter(|((_, b), _)| *b == head).map(|(_, v)| v).sum()
    }

    /// Checks support on edges, nonnegativity, and row/column sums at most one.
    pub fn check_substochastic(&self, net: &NetworkSpec, tol: f64) -> Result<(), AnalysisError> {
        for ((a, b), v) in self.iter() {
            if net.edge_index(a, b).is_none() {
                return Err(AnalysisError::NotSubstochastic(format!("({a},{b}) is not an edge")));
            }
            if !v.is_finite() || v < -tol {
                return Err(AnalysisError::NotSubstochastic(format!("z({a},{b}) = {v}")));
            }
        }
        for x in 0..net.len() {
            let (o, i) = (self.out_sum(x), self.in_sum(x));
            if o > 1.0 + tol {
                return Err(AnalysisError::NotSubstochastic(format!("row {x} sums to {o}")));
            }
            if i > 1.0 + tol {
                return Err(AnalysisError::NotSubstochastic(format!("column {x} sums to {i}")));
            }
        }
        Ok(())
    }
}

/// Source-to-terminal paths (node sequences) with their flow values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlow {
    pub paths: Vec<Vec<usize>>,
    pub flow: Vec<f64>,
}

impl PathFlow {
    pub fn source_total(&self, source: usize) -> f64 {
        self.paths.iter().zip(&self.flow).filter(|(p, _)| p[0] == source).map(|(_, f)| f).sum()
    }

    /// Total flow over edge (tail, head).
    pub fn edge_total(&self, tail: usize, head: usize) -> f64 {
        self.paths
            .iter()
            .zip(&self.flow)
            .filter(|(p, _)| p.windows(2).any(|w| w[0] == tail && w[1] == head))
            .map(|(_, f)| f)
            .sum()
    }

    /// Largest violation of conservation at middle servers.
    pub fn conservation_error(&self, net: &NetworkSpec) -> f64 {
        net.middle()
            .into_iter()
            .map(|x| {
                let inflow: f64 = net.in_neighbors(x).iter().map(|&y| self.edge_total(y, x)).sum();
                let outflow: f64 = net.out_neighbors(x).iter().map(|&y| self.edge_total(x, y)).sum();
                (inflow - outflow).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Nonnegative weights indexed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub values: Vec<f64>,
}

/// A vertex-disjoint edge set with its weighted value and the compared threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWitness {
    pub edges: Vec<(usize, usize)>,
    pub value: f64,
    pub threshold: f64,
}

impl DualWitness {
    pub fn strict(&self) -> bool {
        self.value > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub edges: Vec<(usize, usize)>,
    pub prob: f64,
}

/// Distribution over vertex-disjoint edge sets (matchings in the bipartite case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    pub components: Vec<Component>,
}

impl PolicyDistribution {
    pub fn total_prob(&self) -> f64 {
        self.components.iter().map(|c| c.prob).sum()
    }

    pub fn marginal(&self, tail: usize, head: usize) -> f64 {
        self.components.iter().filter(|c| c.edges.contains(&(tail, head))).map(|c| c.prob).sum()
    }

    pub fn marginals(&self) -> BTreeMap<(usize, usize), f64> {
        let mut m = BTreeMap::new();
        for c in &self.components {
            for &e in &c.edges {
                *m.entry(e).or_insert(0.0) += c.prob;
            }
        }
        m
    }

    /// Max |marginal − z| over the union of both supports.
    pub fn reconstruction_error(&self, z: &FractionalRouting) -> f64 {
        let m = self.marginals();
        let mut err: f64 = 0.0;
        for (e, v) in &m {
            err = err.max((v - z.get(e.0, e.1)).abs());
        }
        for (e, v) in z.iter() {
            err = err.max((v - m.get(&e).copied().unwrap_or(0.0)).abs());
        }
        err
    }

    pub fn all_disjoint(&self) -> bool {
        self.components.iter().all(|c| crate::network::is_vertex_disjoint(&c.edges))
    }
}
