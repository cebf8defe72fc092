//! Multi-type packets: a packet's type is its source, and each type may only
//! use its own subset of edges. Queues are kept per (node, type).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::learning::{Algorithm, Learner, RateSchedule, RegretLedger};
use crate::matching::max_weight_matching;
use crate::network::{validate, NetworkError, NetworkSpec, NodeKind, RawNetwork, RawTypeMask};
use crate::sim::{
    estimate_stability, MetricsFrame, Packet, RunConfig, SimError, StabilityEstimate, STREAM_ARRIVALS, STREAM_COINS,
    STREAM_POLICY,
};
use crate::stability::{check_flow_on_paths, AnalysisError, DualWitness, DEFAULT_PATH_CAP};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TypedError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("type mask names {0:?}, which is not a source")]
    NotASource(String),
    #[error("two masks for source {0:?}")]
    DuplicateMask(String),
    #[error("mask for {source_name:?} lists ({tail:?}, {head:?}), which is not an edge")]
    UnknownEdge { source_name: String, tail: String, head: String },
    #[error("type {0:?} has no usable path to a terminal")]
    NoFeasiblePath(String),
    #[error("{paths} typed paths exceed the cap of {cap}")]
    TooLarge { paths: usize, cap: usize },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

/// A network plus, per type (sources in id order), the edges that type may use.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedNetworkSpec {
    net: NetworkSpec,
    /// `usable[k][e]` for type k and edge index e.
    usable: Vec<Vec<bool>>,
}

impl TypedNetworkSpec {
    /// Types without a mask may use every edge.
    pub fn from_toml(text: &str) -> Result<Self, TypedError> {
        let raw = RawNetwork::from_toml(text)?;
        let net = validate(&raw)?;
        Self::from_masks(net, &raw.types)
    }

    pub fn from_masks(net: NetworkSpec, masks: &[RawTypeMask]) -> Result<Self, TypedError> {
        let sources = net.sources();
        let mut usable: Vec<Option<Vec<bool>>> = vec![None; sources.len()];
        for m in masks {
            let k = net
                .lookup(&m.source)
                .and_then(|i| sources.iter().position(|&s| s == i))
                .ok_or_else(|| TypedError::NotASource(m.source.clone()))?;
            if usable[k].is_some() {
                return Err(TypedError::DuplicateMask(m.source.clone()));
            }
            let mut row = vec![false; net.edges().len()];
            for (a, b) in &m.edges {
                let e = net.lookup(a).zip(net.lookup(b)).and_then(|(x, y)| net.edge_index(x, y)).ok_or_else(|| {
                    TypedError::UnknownEdge { source_name: m.source.clone(), tail: a.clone(), head: b.clone() }
                })?;
                row[e] = true;
            }
            usable[k] = Some(row);
        }
        let usable = usable.into_iter().map(|u| u.unwrap_or_else(|| vec![true; net.edges().len()])).collect();
        let typed = TypedNetworkSpec { net, usable };
        for (k, &s) in sources.iter().enumerate() {
            if typed.type_paths(k, 1).is_empty() {
                return Err(TypedError::NoFeasiblePath(typed.net.node(s).name.clone()));
            }
        }
        Ok(typed)
    }

    /// Every type may use every edge.
    pub fn untyped(net: NetworkSpec) -> Self {
        let usable = vec![vec![true; net.edges().len()]; net.sources().len()];
        TypedNetworkSpec { net, usable }
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn types(&self) -> usize {
        self.usable.len()
    }

    pub fn usable(&self, k: usize, x: usize, y: usize) -> bool {
        self.net.edge_index(x, y).is_some_and(|e| self.usable[k][e])
    }

    /// Typed actions of a node: (target, type) pairs ordered by target then type.
    pub fn actions(&self, x: usize) -> Vec<(usize, usize)> {
        self.net
            .out_neighbors(x)
            .iter()
            .flat_map(|&y| (0..self.types()).filter(move |&k| self.usable(k, x, y)).map(move |k| (y, k)))
            .collect()
    }

    /// Up to `cap` type-k paths from source k to a terminal.
    pub fn type_paths(&self, k: usize, cap: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![self.net.sources()[k]];
        self.walk(k, &mut stack, &mut out, cap);
        out
    }

    fn walk(&self, k: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) {
        let v = *stack.last().expect("non-empty");
        if self.net.kind(v) == NodeKind::Terminal {
            out.push(stack.clone());
            return;
        }
        for &w in self.net.out_neighbors(v) {
            if out.len() >= cap {
                return;
            }
            if self.usable(k, v, w) {
                stack.push(w);
                self.walk(k, stack, out, cap);
                stack.pop();
            }
        }
    }
}

fn scaled(net: &NetworkSpec, factor: f64) -> NetworkSpec {
    net.with_rates(|i, r| if net.kind(i) == NodeKind::Source { r } else { r * factor })
}

/// Doubled-capacity condition for typed packets: the path-flow program over
/// type-feasible paths, with server rates scaled by ½(1−β).
pub fn typed_dual_check(typed: &TypedNetworkSpec, beta: f64) -> Result<bool, TypedError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(AnalysisError::BadBeta(beta).into());
    }
    let mut paths = Vec::new();
    for k in 0..typed.types() {
        paths.extend(typed.type_paths(k, DEFAULT_PATH_CAP + 1));
        if paths.len() > DEFAULT_PATH_CAP {
            return Err(TypedError::TooLarge { paths: paths.len(), cap: DEFAULT_PATH_CAP });
        }
    }
    let net = scaled(typed.net(), 0.5 * (1.0 - beta));
    Ok(check_flow_on_paths(&net, paths)?.is_feasible())
}

/// Best vertex-disjoint typed path set for weights α[x][k]: each split-graph
/// edge (x, y) carries the best type allowed on it.
pub fn typed_best_path_set(typed: &TypedNetworkSpec, alpha: &[Vec<f64>]) -> DualWitness {
    let net = typed.net();
    let a = |x: usize, k: usize| if net.kind(x) == NodeKind::Terminal { 0.0 } else { alpha[x][k] };
    let sg = net.split();
    let weights = sg.weight_matrix(|x, y| {
        (0..typed.types())
            .filter(|&k| typed.usable(k, x, y))
            .map(|k| (a(x, k) - a(y, k)) * net.rate(y))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let m = max_weight_matching(&weights);
    let sources = net.sources();
    DualWitness {
        edges: sg.decode(&m.pairs),
        value: m.value,
        threshold: sources.iter().enumerate().map(|(k, &s)| a(s, k) * net.rate(s)).sum(),
    }
}

pub fn typed_learners(typed: &TypedNetworkSpec, algorithm: Algorithm, rate: RateSchedule) -> Vec<Learner> {
    (0..typed.net().len())
        .map(|x| {
            let k = typed.actions(x).len() + 1;
            let algo =
                if typed.net().kind(x) == NodeKind::Terminal { Algorithm::Fixed(vec![1.0]) } else { algorithm.clone() };
            Learner::new(algo, rate, k, STREAM_POLICY)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypedStep {
    pub t: u64,
    /// Start-of-step lengths per node and type.
    pub q: Vec<Vec<usize>>,
    pub actions: Vec<usize>,
    /// (tail, head, type) of every cleared packet.
    pub moves: Vec<(usize, usize, usize)>,
    pub realized: Vec<i64>,
    pub counterfactual: Vec<Vec<i64>>,
    pub phi_before: i64,
    pub phi_after_moves: i64,
    pub net_losers: i64,
}

impl TypedStep {
    pub fn coupling_holds(&self) -> bool {
        self.phi_before - self.phi_after_moves == self.realized.iter().sum::<i64>() - self.net_losers
    }
}

fn phi(net: &NetworkSpec, q: &[Vec<usize>]) -> i64 {
    q.iter()
        .enumerate()
        .filter(|&(x, _)| net.kind(x) != NodeKind::Terminal)
        .flat_map(|(_, row)| row.iter())
        .map(|&l| {
            let l = l as i64;
            l * (l - 1) / 2
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct TypedSimulator {
    typed: TypedNetworkSpec,
    learners: Vec<Learner>,
    ledger: RegretLedger,
    queues: Vec<Vec<VecDeque<Packet>>>,
    actions: Vec<Vec<(usize, usize)>>,
    t: u64,
    next_id: u64,
    arrived: Vec<u64>,
    delivered: Vec<u64>,
    rng_arrivals: ChaCha8Rng,
    rng_coins: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl TypedSimulator {
    pub fn new(
        typed: &TypedNetworkSpec,
        learners: Vec<Learner>,
        seed: u64,
        ledger_every: u64,
    ) -> Result<Self, SimError> {
        let n = typed.net().len();
        let actions: Vec<Vec<(usize, usize)>> = (0..n).map(|x| typed.actions(x)).collect();
        if learners.len() != n || learners.iter().zip(&actions).any(|(l, a)| l.actions() != a.len() + 1) {
            return Err(SimError::PolicyMismatch("learners do not match typed action sets".into()));
        }
        if ledger_every == 0 {
            return Err(SimError::ZeroWindow);
        }
        let sizes: Vec<usize> = actions.iter().map(|a| a.len() + 1).collect();
        let k = typed.types();
        Ok(TypedSimulator {
            typed: typed.clone(),
            learners,
            ledger: RegretLedger::new(&sizes, ledger_every),
            queues: vec![vec![VecDeque::new(); k]; n],
            actions,
            t: 0,
            next_id: 0,
            arrived: vec![0; k],
            delivered: vec![0; k],
            rng_arrivals: stream(seed, STREAM_ARRIVALS),
            rng_coins: stream(seed, STREAM_COINS),
            rng_policy: stream(seed, STREAM_POLICY),
        })
    }

    pub fn lengths(&self) -> Vec<Vec<usize>> {
        self.queues.iter().map(|row| row.iter().map(VecDeque::len).collect()).collect()
    }

    pub fn arrived(&self) -> &[u64] {
        &self.arrived
    }

    pub fn delivered(&self) -> &[u64] {
        &self.delivered
    }

    pub fn ledger(&self) -> &RegretLedger {
        &self.ledger
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    fn age(&self, x: usize) -> u64 {
        self.queues[x].iter().filter_map(|q| q.front()).map(|p| (self.t as i64 - p.birth) as u64).max().unwrap_or(0)
    }

    pub fn step(&mut self) -> TypedStep {
        let net = self.typed.net.clone();
        let n = net.len();
        let q = self.lengths();
        let totals: Vec<usize> = q.iter().map(|r| r.iter().sum()).collect();
        let qy = |y: usize, k: usize| if net.kind(y) == NodeKind::Terminal { 0 } else { q[y][k] };

        let mut actions = vec![0; n];
        for x in 0..n {
            if totals[x] == 0 || net.kind(x) == NodeKind::Terminal {
                continue;
            }
            let mut allowed = vec![true; self.actions[x].len() + 1];
            for (a, &(y, k)) in self.actions[x].iter().enumerate() {
                allowed[a + 1] = q[x][k] > 0 && q[x][k] >= qy(y, k);
            }
            actions[x] = self.learners[x].select(&allowed, &mut self.rng_policy);
        }
        let sources = net.sources();
        let arrivals: Vec<bool> = sources.iter().map(|&i| self.rng_arrivals.random_bool(net.rate(i))).collect();
        let mut coins = vec![false; n];
        for (y, c) in coins.iter_mut().enumerate() {
            if net.kind(y) != NodeKind::Source {
                *c = self.rng_coins.random_bool(net.rate(y));
            }
        }

        let gain = |x: usize, y: usize, k: usize| q[x][k] as i64 - qy(y, k) as i64;
        // higher key wins: largest difference, then lowest sender, then lowest type
        let key = |x: usize, y: usize, k: usize| (gain(x, y, k), std::cmp::Reverse(x), std::cmp::Reverse(k));
        let offer = |x: usize| -> Option<(usize, usize)> {
            let a = actions[x];
            (a > 0).then(|| self.actions[x][a - 1]).filter(|&(_, k)| q[x][k] > 0)
        };
        let mut top: Vec<[Option<(usize, usize)>; 2]> = vec![[None, None]; n];
        for x in 0..n {
            if let Some((y, k)) = offer(x) {
                let slot = &mut top[y];
                let better = |b: Option<(usize, usize)>| b.is_none_or(|(bx, bk)| key(x, y, k) > key(bx, y, bk));
                if better(slot[0]) {
                    slot[1] = slot[0];
                    slot[0] = Some((x, k));
                } else if better(slot[1]) {
                    slot[1] = Some((x, k));
                }
            }
        }
        let counterfactual: Vec<Vec<i64>> = (0..n)
            .map(|x| {
                let mut row = vec![0; self.actions[x].len() + 1];
                for (a, &(y, k)) in self.actions[x].iter().enumerate() {
                    if q[x][k] == 0 || !coins[y] {
                        continue;
                    }
                    let rival = if top[y][0].is_some_and(|(bx, _)| bx == x) { top[y][1] } else { top[y][0] };
                    if rival.is_none_or(|(rx, rk)| key(x, y, k) > key(rx, y, rk)) {
                        row[a + 1] = gain(x, y, k);
                    }
                }
                row
            })
            .collect();

        let mut realized = vec![0; n];
        let mut moves = Vec::new();
        for y in 0..n {
            if let (Some((x, k)), true) = (top[y][0], coins[y]) {
                realized[x] = gain(x, y, k);
                moves.push((x, y, k));
            }
        }
        let mut delta = vec![vec![0i64; self.typed.types()]; n];
        let mut in_flight = Vec::with_capacity(moves.len());
        for &(x, y, k) in &moves {
            debug_assert!(self.typed.usable(k, x, y));
            in_flight.push((y, k, self.queues[x][k].pop_front().expect("offered packet")));
            delta[x][k] -= 1;
        }
        for (y, k, p) in in_flight {
            if net.kind(y) == NodeKind::Terminal {
                self.delivered[k] += 1;
            } else {
                delta[y][k] += 1;
                self.queues[y][k].push_back(p);
            }
        }
        let phi_before = phi(&net, &q);
        let phi_after_moves = phi(&net, &self.lengths());
        let net_losers = delta.iter().flatten().filter(|&&d| d == -1).count() as i64;

        for (k, &i) in sources.iter().enumerate() {
            if arrivals[k] {
                self.queues[i][k].push_back(Packet { id: self.next_id, origin: i, birth: self.t as i64 });
                self.next_id += 1;
                self.arrived[k] += 1;
            }
        }
        let t = self.t;
        self.t += 1;
        for x in 0..n {
            if totals[x] > 0 && net.kind(x) != NodeKind::Terminal {
                let cf: Vec<f64> = counterfactual[x].iter().map(|&v| v as f64).collect();
                self.learners[x].observe(&cf, actions[x], realized[x] as f64);
            }
        }
        self.ledger.record(&realized, &counterfactual);
        TypedStep { t, q, actions, moves, realized, counterfactual, phi_before, phi_after_moves, net_losers }
    }
}

#[derive(Debug, Clone)]
pub struct TypedRunOutput {
    pub frames: Vec<MetricsFrame>,
    pub estimate: StabilityEstimate,
    pub total_q: Vec<u64>,
    pub coupling_violations: u64,
    /// Steps where some type's arrivals − deliveries differed from its stored count.
    pub conservation_violations: u64,
    pub sim: TypedSimulator,
}

pub fn typed_run(
    typed: &TypedNetworkSpec,
    learners: Vec<Learner>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TypedRunOutput, SimError> {
    if cfg.window == 0 || cfg.stride == 0 {
        return Err(SimError::ZeroWindow);
    }
    if cfg.horizon < 10 * cfg.window {
        return Err(SimError::HorizonTooShort { horizon: cfg.horizon, window: cfg.window });
    }
    let mut sim = TypedSimulator::new(typed, learners, seed, cfg.window)?;
    let net = typed.net().clone();
    let n = net.len();
    let mut frames = Vec::new();
    let mut total_q = Vec::with_capacity(cfg.horizon as usize);
    let mut last_regret = vec![0; n];
    let (mut coupling_violations, mut conservation_violations) = (0, 0);
    for k in 1..=cfg.horizon {
        let o = sim.step();
        coupling_violations += u64::from(!o.coupling_holds());
        let q = sim.lengths();
        let stored: Vec<u64> = (0..typed.types()).map(|ty| q.iter().map(|row| row[ty] as u64).sum()).collect();
        conservation_violations +=
            u64::from((0..typed.types()).any(|ty| sim.arrived[ty] - sim.delivered[ty] != stored[ty]));
        total_q.push(stored.iter().sum());
        let t = sim.time();
        if t % cfg.window == 0 {
            last_regret = sim.ledger().window(t, cfg.window).expect("aligned window");
        }
        if k % cfg.stride == 0 || k == cfg.horizon {
            let lens: Vec<usize> = q.iter().map(|r| r.iter().sum()).collect();
            let ages: Vec<u64> = (0..n).map(|x| sim.age(x)).collect();
            frames.push(MetricsFrame {
                t,
                phi_age: net
                    .sources()
                    .into_iter()
                    .map(|i| 0.5 * net.rate(i) * ages[i] as f64 * (ages[i] as f64 - 1.0))
                    .sum(),
                phi_len: phi(&net, &q),
                q: lens,
                age: ages,
                utility: (0..n).map(|x| sim.ledger().realized_total(x)).collect(),
                regret: last_regret.clone(),
            });
        }
    }
    let estimate = estimate_stability(&total_q, cfg.stride, cfg.slope_tol, cfg.ratio_cap);
    Ok(TypedRunOutput { frames, estimate, total_q, coupling_violations, conservation_violations, sim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::{run, Policy, Priority, UtilityModel};
    use crate::stability::check_assumption_dag;

    const TWO_TYPES: &str = r#"
edges = [["a", "m"], ["b", "m"], ["m", "x"], ["m", "y"]]
[[nodes]]
name = "a"
kind = "source"
rate = 0.1
[[nodes]]
name = "b"
kind = "source"
rate = 0.1
[[nodes]]
name = "m"
kind = "server"
rate = 0.9
[[nodes]]
name = "x"
kind = "terminal"
rate = 0.8
[[nodes]]
name = "y"
kind = "terminal"
rate = 0.8
[[types]]
source = "a"
edges = [["a", "m"], ["m", "x"]]
[[types]]
source = "b"
edges = [["b", "m"], ["m", "y"]]
"#;

    #[test]
    fn single_type_matches_the_plain_engine() {
        let chain = NetworkSpec::from_toml(
            r#"
edges = [["s", "m"], ["s", "t2"], ["m", "t1"]]
[[nodes]]
name = "s"
kind = "source"
rate = 0.4
[[nodes]]
name = "m"
kind = "server"
rate = 0.7
[[nodes]]
name = "t1"
kind = "terminal"
rate = 0.6
[[nodes]]
name = "t2"
kind = "terminal"
rate = 0.3
"#,
        )
        .unwrap();
        let typed = TypedNetworkSpec::untyped(chain.clone());
        let cfg = RunConfig::new(3000, 100);
        let learners = typed_learners(&typed, Algorithm::Hedge, RateSchedule::Anytime(1.0));
        let a = typed_run(&typed, learners, &cfg, 9).unwrap();
        let policy = Policy::learners(
            &chain,
            Algorithm::Hedge,
            RateSchedule::Anytime(1.0),
            Priority::LongestQueue,
            UtilityModel::QueueDiff,
        );
        let b = run(&chain, policy, &cfg, 9).unwrap();
        assert_eq!(a.total_q, b.total_q);
        assert_eq!(
            a.frames.iter().map(|f| (&f.q, &f.utility, &f.regret)).collect::<Vec<_>>(),
            b.frames.iter().map(|f| (&f.q, &f.utility, &f.regret)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn types_stay_on_their_edges() {
        let typed = TypedNetworkSpec::from_toml(TWO_TYPES).unwrap();
        let learners = typed_learners(&typed, Algorithm::Hedge, RateSchedule::Anytime(1.0));
        let mut sim = TypedSimulator::new(&typed, learners, 4, 10).unwrap();
        let (m, x, y) = (2, 3, 4);
        for _ in 0..5000 {
            let o = sim.step();
            for &(a, b, k) in &o.moves {
                assert!(typed.usable(k, a, b));
                if a == m {
                    assert_eq!(b, if k == 0 { x } else { y });
                }
            }
            assert!(o.coupling_holds());
        }
        assert!(sim.delivered().iter().all(|&d| d > 0));
    }

    #[test]
    fn typed_run_reports_no_violations_and_stays_bounded() {
        let typed = TypedNetworkSpec::from_toml(TWO_TYPES).unwrap();
        assert!(typed_dual_check(&typed, 0.1).unwrap());
        let learners = typed_learners(&typed, Algorithm::Hedge, RateSchedule::Anytime(1.0));
        let out = typed_run(&typed, learners, &RunConfig::new(50_000, 500), 1).unwrap();
        assert_eq!(out.coupling_violations, 0);
        assert_eq!(out.conservation_violations, 0);
        assert_eq!(out.estimate.verdict, crate::sim::StabilityVerdict::Bounded);
    }

    #[test]
    fn single_type_dual_equals_dag_check() {
        let net = fixtures::myopic_trap();
        let typed = TypedNetworkSpec::untyped(net.clone());
        for beta in [0.01, 0.3, 0.6] {
            assert_eq!(typed_dual_check(&typed, beta).unwrap(), check_assumption_dag(&net, beta).unwrap());
        }
    }

    #[test]
    fn mask_errors() {
        let no_path = TWO_TYPES.replace(r#"edges = [["b", "m"], ["m", "y"]]"#, r#"edges = [["b", "m"]]"#);
        assert_eq!(TypedNetworkSpec::from_toml(&no_path), Err(TypedError::NoFeasiblePath("b".into())));
        let bad_edge = TWO_TYPES.replace(r#"edges = [["b", "m"], ["m", "y"]]"#, r#"edges = [["b", "x"]]"#);
        assert!(matches!(TypedNetworkSpec::from_toml(&bad_edge), Err(TypedError::UnknownEdge { .. })));
        let not_source = TWO_TYPES.replace(r#"source = "b""#, r#"source = "m""#);
        assert_eq!(TypedNetworkSpec::from_toml(&not_source), Err(TypedError::NotASource("m".into())));
    }

    #[test]
    fn typed_witness_uses_allowed_types_only() {
        let typed = TypedNetworkSpec::from_toml(TWO_TYPES).unwrap();
        // α only on type b at m; type a's edge m→x earns nothing
        let alpha = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let w = typed_best_path_set(&typed, &alpha);
        assert_eq!(w.edges, vec![(2, 4)]);
        assert!((w.value - 0.8).abs() < 1e-12);
    }
}
