//! Patient queues: every queue fixes a mixed strategy over its servers
//! forever and cares about its long-run aging rate lim T_t/t.
//!
//! Aging rates come from a peeling procedure: repeatedly find the queue set Q
//! with the least service-to-load ratio f(Q) under the residual capacities,
//! give it rate 1 − f(Q), and remove the service it consumes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::network::{BipartiteView, NetworkSpec};
use crate::sim::{Policy, Priority, UtilityModel};
use crate::stability::{best_matching, AssumptionVerdict, MAX_ENUM_QUEUES};

/// Comparison tolerance for f values.
pub const F_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatientError {
    #[error("network is not bipartite")]
    NotBipartite,
    #[error("{n} queues exceed the enumeration limit of {max}")]
    TooManyQueues { n: usize, max: usize },
    #[error("f is undefined on the empty set")]
    EmptySet,
    #[error("bad strategy profile: {0}")]
    BadProfile(String),
}

/// `probs[i]` is queue i's distribution over its out-neighbours (in id
/// order); queues are the sources in id order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyProfile {
    pub probs: Vec<Vec<f64>>,
}

impl StrategyProfile {
    pub fn uniform(net: &NetworkSpec) -> Self {
        let probs = net
            .sources()
            .into_iter()
            .map(|i| {
                let k = net.out_neighbors(i).len();
                vec![1.0 / k as f64; k]
            })
            .collect();
        StrategyProfile { probs }
    }

    /// Point mass for every queue on the named server.
    pub fn pure(net: &NetworkSpec, choice: &[usize]) -> Result<Self, PatientError> {
        let sources = net.sources();
        if choice.len() != sources.len() {
            return Err(PatientError::BadProfile(format!("{} choices for {} queues", choice.len(), sources.len())));
        }
        let probs = sources
            .iter()
            .zip(choice)
            .map(|(&i, &j)| {
                let out = net.out_neighbors(i);
                let k = out.iter().position(|&y| y == j).ok_or_else(|| {
                    PatientError::BadProfile(format!("{} does not reach {}", net.node(i).name, net.node(j).name))
                })?;
                let mut p = vec![0.0; out.len()];
                p[k] = 1.0;
                Ok(p)
            })
            .collect::<Result<_, _>>()?;
        Ok(StrategyProfile { probs })
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<(), PatientError> {
        let sources = net.sources();
        if self.probs.len() != sources.len() {
            return Err(PatientError::BadProfile(format!("{} rows for {} queues", self.probs.len(), sources.len())));
        }
        for (p, &i) in self.probs.iter().zip(&sources) {
            let name = &net.node(i).name;
            if p.len() != net.out_neighbors(i).len() {
                return Err(PatientError::BadProfile(format!("queue {name}: wrong support size")));
            }
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(PatientError::BadProfile(format!("queue {name}: not a distribution")));
            }
        }
        Ok(())
    }

    /// Dense n×m matrix over the bipartite view.
    fn matrix(&self, net: &NetworkSpec, view: &BipartiteView) -> Vec<Vec<f64>> {
        view.queues
            .iter()
            .zip(&self.probs)
            .map(|(&i, p)| {
                let mut row = vec![0.0; view.m()];
                for (&y, &v) in net.out_neighbors(i).iter().zip(p) {
                    let j = view.servers.iter().position(|&s| s == y).expect("server in view");
                    row[j] = v;
                }
                row
            })
            .collect()
    }

    /// Fixed-strategy simulator policy; queues never idle.
    pub fn policy(&self, net: &NetworkSpec, priority: Priority, utility: UtilityModel) -> Policy {
        let mut probs: Vec<Option<Vec<f64>>> = vec![None; net.len()];
        for (p, i) in self.probs.iter().zip(net.sources()) {
            probs[i] = Some(std::iter::once(0.0).chain(p.iter().copied()).collect());
        }
        Policy::fixed(net, &probs, priority, utility)
    }
}

/// f(Q) = Σ_j μ_j (1 − Π_{i∈Q} (1 − p_ij)) / Σ_{i∈Q} λ_i with queue indices
/// into `p` rows and `lambda`.
pub fn f_value(set: &[usize], p: &[Vec<f64>], lambda: &[f64], mu: &[f64]) -> Result<f64, PatientError> {
    if set.is_empty() {
        return Err(PatientError::EmptySet);
    }
    let served: f64 =
        mu.iter().enumerate().map(|(j, &m)| m * (1.0 - set.iter().map(|&i| 1.0 - p[i][j]).product::<f64>())).sum();
    let load: f64 = set.iter().map(|&i| lambda[i]).sum();
    Ok(served / load)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    /// Groups in extraction order, as node ids.
    pub groups: Vec<Vec<usize>>,
    /// f of each group when extracted; the last may be ≥ 1 (the stopping group).
    pub f_values: Vec<f64>,
    /// Aging rate per queue (sources in id order).
    pub rates: Vec<f64>,
    /// Residual server rates at the start of each round.
    pub residual_mu: Vec<Vec<f64>>,
    /// Rounds where several minimal sets tied and their union was taken.
    pub ties_resolved: usize,
}

fn check_size(view: &BipartiteView) -> Result<(), PatientError> {
    if view.n() > MAX_ENUM_QUEUES {
        Err(PatientError::TooManyQueues { n: view.n(), max: MAX_ENUM_QUEUES })
    } else {
        Ok(())
    }
}

pub fn compute_costs(net: &NetworkSpec, profile: &StrategyProfile) -> Result<CostReport, PatientError> {
    profile.validate(net)?;
    let view = net.bipartite().map_err(|_| PatientError::NotBipartite)?;
    check_size(&view)?;
    let p = profile.matrix(net, &view);
    let lambda = &view.lambda;
    let mut mu = view.mu.clone();
    let mut remaining: Vec<usize> = (0..view.n()).collect();
    let mut rates = vec![0.0; view.n()];
    let mut report =
        CostReport { groups: vec![], f_values: vec![], rates: vec![], residual_mu: vec![], ties_resolved: 0 };

    while !remaining.is_empty() {
        report.residual_mu.push(mu.clone());
        let r = remaining.len();
        let mut best = f64::INFINITY;
        let mut evals = Vec::with_capacity((1 << r) - 1);
        for mask in 1u32..(1u32 << r) {
            let set: Vec<usize> = (0..r).filter(|&k| mask >> k & 1 == 1).map(|k| remaining[k]).collect();
            let f = f_value(&set, &p, lambda, &mu)?;
            best = best.min(f);
            evals.push((mask, f));
        }
        let minimizers: Vec<u32> = evals.iter().filter(|&&(_, f)| f <= best + F_TOL).map(|&(m, _)| m).collect();
        let union = minimizers.iter().fold(0u32, |a, &m| a | m);
        let group: Vec<usize> = (0..r).filter(|&k| union >> k & 1 == 1).map(|k| remaining[k]).collect();
        if minimizers.len() > 1 {
            report.ties_resolved += 1;
            let fu = f_value(&group, &p, lambda, &mu)?;
            debug_assert!((fu - best).abs() <= 1e-6, "union of tight sets is tight: {fu} vs {best}");
        }
        report.groups.push(group.iter().map(|&i| view.queues[i]).collect());
        report.f_values.push(best);
        if best >= 1.0 - F_TOL {
            break;
        }
        for &i in &group {
            rates[i] = 1.0 - best;
        }
        for (j, m) in mu.iter_mut().enumerate() {
            *m *= group.iter().map(|&i| 1.0 - p[i][j]).product::<f64>();
        }
        remaining.retain(|i| !group.contains(i));
    }
    report.rates = rates;
    Ok(report)
}

/// Stable when the first extracted group has f strictly above 1.
pub fn check_stability_nash(net: &NetworkSpec, profile: &StrategyProfile) -> Result<bool, PatientError> {
    let r = compute_costs(net, profile)?;
    Ok(r.f_values[0] > 1.0 + F_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    /// Node id of the deviating queue.
    pub queue: usize,
    pub strategy: Vec<f64>,
    pub cost: f64,
    pub new_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashVerdict {
    /// First improving deviation found, if any.
    pub violation: Option<Deviation>,
    /// Largest cost reduction over all candidates (≤ 0 when none improves).
    pub best_gain: f64,
}

impl NashVerdict {
    pub fn no_violation(&self) -> bool {
        self.violation.is_none()
    }
}

/// Candidate strategies for a queue with `k` servers: pure points, plus a
/// grid of `density` points per simplex edge when k = 2, or Dirichlet(1)
/// samples when k > 2.
fn candidates(k: usize, density: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut v = vec![0.0; k];
            v[j] = 1.0;
            v
        })
        .collect();
    if k == 2 && density >= 2 {
        for s in 1..density - 1 {
            let a = s as f64 / (density - 1) as f64;
            out.push(vec![a, 1.0 - a]);
        }
    } else if k > 2 {
        for _ in 0..density * density {
            let g: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
            let s: f64 = g.iter().sum();
            let mut v: Vec<f64> = g.iter().map(|x| x / s).collect();
            let head: f64 = v[..k - 1].iter().sum();
            v[k - 1] = (1.0 - head).max(0.0);
            out.push(v);
        }
    }
    out
}

fn cost_of(net: &NetworkSpec, profile: &StrategyProfile, queue: usize) -> Result<f64, PatientError> {
    Ok(compute_costs(net, profile)?.rates[queue])
}

/// Falsification search for a profitable unilateral deviation.
pub fn verify_nash(net: &NetworkSpec, profile: &StrategyProfile, density: usize) -> Result<NashVerdict, PatientError> {
    let base = compute_costs(net, profile)?;
    let sources = net.sources();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut verdict = NashVerdict { violation: None, best_gain: f64::NEG_INFINITY };
    for (q, &node) in sources.iter().enumerate() {
        let cost = base.rates[q];
        for cand in candidates(profile.probs[q].len(), density, &mut rng) {
            let mut dev = profile.clone();
            dev.probs[q] = cand.clone();
            let new_cost = cost_of(net, &dev, q)?;
            let gain = cost - new_cost;
            verdict.best_gain = verdict.best_gain.max(gain);
            if gain > F_TOL && verdict.violation.is_none() {
                verdict.violation = Some(Deviation { queue: node, strategy: cand, cost, new_cost });
            }
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsTrace {
    pub profiles: Vec<StrategyProfile>,
    pub converged: bool,
    pub verdict: NashVerdict,
}

/// Round-robin best responses over the candidate grid; a queue moves only
/// on a strict improvement.
pub fn best_response_dynamics(
    net: &NetworkSpec,
    init: &StrategyProfile,
    rounds: usize,
    density: usize,
) -> Result<DynamicsTrace, PatientError> {
    init.validate(net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut current = init.clone();
    let mut profiles = vec![current.clone()];
    let mut converged = false;
    for _ in 0..rounds {
        let mut moved = false;
        for q in 0..current.probs.len() {
            let mut best = cost_of(net, &current, q)?;
            let mut choice = None;
            for cand in candidates(current.probs[q].len(), density, &mut rng) {
                let mut dev = current.clone();
                dev.probs[q] = cand.clone();
                let c = cost_of(net, &dev, q)?;
                if c < best - F_TOL {
                    best = c;
                    choice = Some(cand);
                }
            }
            if let Some(c) = choice {
                current.probs[q] = c;
                moved = true;
            }
        }
        profiles.push(current.clone());
        if !moved {
            converged = true;
            break;
        }
    }
    let verdict = verify_nash(net, &current, density)?;
    Ok(DynamicsTrace { profiles, converged, verdict })
}

/// Half-capacity matching condition over α ∈ {0,1}^n \ {0}: some matching M
/// has ½ α·Mμ > α·λ.
pub fn check_half_capacity_condition(net: &NetworkSpec) -> Result<AssumptionVerdict, PatientError> {
    let view = net.bipartite().map_err(|_| PatientError::NotBipartite)?;
    check_size(&view)?;
    let n = view.n();
    for mask in 1u32..(1u32 << n) {
        let alpha: Vec<f64> = (0..n).map(|i| f64::from((mask >> i) & 1)).collect();
        let w = best_matching(net, &alpha);
        if 0.5 * w.value <= w.threshold {
            return Ok(AssumptionVerdict { holds: false, failing_alpha: Some(alpha) });
        }
    }
    Ok(AssumptionVerdict { holds: true, failing_alpha: None })
}
