use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::learning::RegretLedger;
use crate::network::{NetworkSpec, NodeKind};

use super::state::{phi_len_of, Packet, SimState};
use super::{
    ArrivalProcess, Bernoulli, Control, Policy, Priority, SimError, UtilityModel, STREAM_ARRIVALS, STREAM_COINS,
    STREAM_POLICY,
};

/// Everything the server side of a step needs: start-of-step lengths and
/// heads, chosen actions, coins.
#[derive(Debug, Clone, Copy)]
pub struct OfferView<'a> {
    pub q: &'a [usize],
    /// Birth of each node's oldest packet.
    pub heads: &'a [Option<i64>],
    /// Chosen action per node: 0 idle, k sends to `targets[x][k-1]`.
    pub actions: &'a [usize],
    pub targets: &'a [Vec<usize>],
    /// Service coin per node (meaningful for receivers only).
    pub coins: &'a [bool],
    pub priority: Priority,
    pub utility: UtilityModel,
}

impl OfferView<'_> {
    fn key(&self, x: usize) -> (i64, usize) {
        match self.priority {
            Priority::OldestPacket => (self.heads[x].unwrap_or(i64::MAX), x),
            Priority::LongestQueue => (-(self.q[x] as i64), x),
        }
    }

    fn gain(&self, x: usize, y: usize) -> i64 {
        match self.utility {
            UtilityModel::Unit => 1,
            UtilityModel::QueueDiff => self.q[x] as i64 - self.q[y] as i64,
        }
    }

    fn target(&self, x: usize) -> Option<usize> {
        let a = self.actions[x];
        (a > 0 && self.q[x] > 0).then(|| self.targets[x][a - 1])
    }

    /// Winning sender at every node (None when nobody offered).
    pub fn winners(&self) -> Vec<Option<usize>> {
        let mut best: Vec<Option<usize>> = vec![None; self.q.len()];
        for x in 0..self.q.len() {
            if let Some(y) = self.target(x) {
                if best[y].is_none_or(|b| self.key(x) < self.key(b)) {
                    best[y] = Some(x);
                }
            }
        }
        best
    }
}

/// Per-node, per-action utilities had the node deviated alone this step,
/// holding other nodes' actions and every coin fixed. Index 0 is idle.
pub fn counterfactuals(view: &OfferView) -> Vec<Vec<i64>> {
    let n = view.q.len();
    // strongest and runner-up offer at every receiver
    let mut top: Vec<[Option<usize>; 2]> = vec![[None, None]; n];
    for x in 0..n {
        if let Some(y) = view.target(x) {
            let slot = &mut top[y];
            if slot[0].is_none_or(|b| view.key(x) < view.key(b)) {
                slot[1] = slot[0];
                slot[0] = Some(x);
            } else if slot[1].is_none_or(|b| view.key(x) < view.key(b)) {
                slot[1] = Some(x);
            }
        }
    }
    (0..n)
        .map(|x| {
            let mut row = vec![0; view.targets[x].len() + 1];
            if view.q[x] == 0 {
                return row;
            }
            for (k, &y) in view.targets[x].iter().enumerate() {
                let rival = if top[y][0] == Some(x) { top[y][1] } else { top[y][0] };
                let wins = rival.is_none_or(|r| view.key(x) < view.key(r));
                if wins && view.coins[y] {
                    row[k + 1] = view.gain(x, y);
                }
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Move {
    pub tail: usize,
    pub head: usize,
    pub packet: Packet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub t: u64,
    /// Lengths at the start of the step.
    pub q: Vec<usize>,
    pub actions: Vec<usize>,
    /// Arrival indicator per node (false off the sources).
    pub arrivals: Vec<bool>,
    pub coins: Vec<bool>,
    pub moves: Vec<Move>,
    pub realized: Vec<i64>,
    pub counterfactual: Vec<Vec<i64>>,
    pub phi_len_before: i64,
    /// Length potential after service, before new arrivals.
    pub phi_len_after_moves: i64,
    /// −Σ_x d_x Q_x where d_x is the net change in x's length from service.
    pub first_order_decrease: i64,
    /// Nodes whose length fell by exactly one from service.
    pub net_losers: i64,
}

impl StepOutcome {
    pub fn utility_sum(&self) -> i64 {
        self.realized.iter().sum()
    }

    /// Exact accounting of the length potential across service:
    /// Φ_before − Φ_after = Σu − #losers, with Σu the first-order term.
    pub fn coupling_holds(&self) -> bool {
        self.phi_len_before - self.phi_len_after_moves == self.first_order_decrease - self.net_losers
    }
}

#[derive(Clone)]
pub struct Simulator {
    net: NetworkSpec,
    policy: Policy,
    state: SimState,
    ledger: RegretLedger,
    arrivals: Box<dyn ArrivalProcess>,
    rng_arrivals: ChaCha8Rng,
    rng_coins: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
    targets: Vec<Vec<usize>>,
    sources: Vec<usize>,
    lambda: Vec<f64>,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator").field("t", &self.state.t).field("policy", &self.policy).finish_non_exhaustive()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulator {
    /// `ledger_every` is the checkpoint spacing for windowed regret queries.
    pub fn new(net: &NetworkSpec, policy: Policy, seed: u64, ledger_every: u64) -> Result<Self, SimError> {
        if ledger_every == 0 {
            return Err(SimError::ZeroWindow);
        }
        let targets: Vec<Vec<usize>> = (0..net.len()).map(|x| net.out_neighbors(x).to_vec()).collect();
        match &policy.control {
            Control::Learners(ls) => {
                if ls.len() != net.len() {
                    return Err(SimError::PolicyMismatch(format!("{} learners for {} nodes", ls.len(), net.len())));
                }
                for (x, l) in ls.iter().enumerate() {
                    if l.actions() != targets[x].len() + 1 {
                        return Err(SimError::PolicyMismatch(format!(
                            "node {} has {} actions, learner has {}",
                            net.node(x).name,
                            targets[x].len() + 1,
                            l.actions()
                        )));
                    }
                }
            }
            Control::Centralized(d) => {
                for c in &d.components {
                    if let Some(&(x, y)) = c.edges.iter().find(|&&(x, y)| net.edge_index(x, y).is_none()) {
                        return Err(SimError::PolicyMismatch(format!(
                            "component edge ({x}, {y}) is not in the network"
                        )));
                    }
                }
            }
        }
        let actions: Vec<usize> = targets.iter().map(|t| t.len() + 1).collect();
        let sources = net.sources();
        let lambda = sources.iter().map(|&i| net.rate(i)).collect();
        let offset = policy.seed_offset;
        Ok(Simulator {
            net: net.clone(),
            policy,
            state: SimState::new(net.len()),
            ledger: RegretLedger::new(&actions, ledger_every),
            arrivals: Box::new(Bernoulli),
            rng_arrivals: stream(seed, STREAM_ARRIVALS),
            rng_coins: stream(seed, STREAM_COINS),
            rng_policy: stream(seed, STREAM_POLICY + offset),
            targets,
            sources,
            lambda,
        })
    }

    pub fn with_arrivals(mut self, arrivals: Box<dyn ArrivalProcess>) -> Self {
        self.arrivals = arrivals;
        self
    }

    /// Replace all three streams, keeping state, learners and ledger.
    /// Used to branch independent continuations from one state.
    pub fn reseed(&mut self, seed: u64, stream_base: u64) {
        self.rng_arrivals = stream(seed, stream_base);
        self.rng_coins = stream(seed, stream_base + 1);
        self.rng_policy = stream(seed, stream_base + 2);
    }

    pub fn net(&self) -> &NetworkSpec {
        &self.net
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SimState {
        &mut self.state
    }

    pub fn ledger(&self) -> &RegretLedger {
        &self.ledger
    }

    pub fn targets(&self) -> &[Vec<usize>] {
        &self.targets
    }

    fn choose(&mut self, q: &[usize]) -> Vec<usize> {
        let n = q.len();
        let mut actions = vec![0; n];
        let net = &self.net;
        match &mut self.policy.control {
            Control::Learners(ls) => {
                for x in 0..n {
                    if q[x] == 0 || net.kind(x) == NodeKind::Terminal {
                        continue;
                    }
                    let mut allowed = vec![true; self.targets[x].len() + 1];
                    if self.policy.utility == UtilityModel::QueueDiff {
                        for (k, &y) in self.targets[x].iter().enumerate() {
                            allowed[k + 1] = q[y] <= q[x];
                        }
                    }
                    actions[x] = ls[x].select(&allowed, &mut self.rng_policy);
                }
            }
            Control::Centralized(d) => {
                let u: f64 = self.rng_policy.random();
                let mut acc = 0.0;
                let picked = d.components.iter().find(|c| {
                    acc += c.prob;
                    u < acc
                });
                if let Some(c) = picked {
                    for &(x, y) in &c.edges {
                        if q[x] > 0 {
                            actions[x] = self.targets[x].iter().position(|&t| t == y).expect("validated edge") + 1;
                        }
                    }
                }
            }
        }
        actions
    }

    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        let n = self.net.len();
        let t = self.state.t;
        let q = self.state.lengths();
        let heads: Vec<Option<i64>> = (0..n).map(|x| self.state.oldest(x).map(|p| p.birth)).collect();
        let actions = self.choose(&q);

        let mut drawn = vec![false; self.sources.len()];
        self.arrivals.draw(t, &self.lambda, &mut self.rng_arrivals, &mut drawn)?;
        let mut arrivals = vec![false; n];
        for (k, &i) in self.sources.iter().enumerate() {
            arrivals[i] = drawn[k];
        }
        let mut coins = vec![false; n];
        for (y, c) in coins.iter_mut().enumerate() {
            if self.net.kind(y) != NodeKind::Source {
                *c = self.rng_coins.random_bool(self.net.rate(y));
            }
        }

        let view = OfferView {
            q: &q,
            heads: &heads,
            actions: &actions,
            targets: &self.targets,
            coins: &coins,
            priority: self.policy.priority,
            utility: self.policy.utility,
        };
        let counterfactual = counterfactuals(&view);
        let winners = view.winners();
        let mut realized = vec![0; n];
        let mut moves = Vec::new();
        for (y, w) in winners.iter().enumerate() {
            if let (Some(x), true) = (*w, coins[y]) {
                realized[x] = view.gain(x, y);
                let packet = self.state.queues[x].pop_front().expect("sender has a packet");
                moves.push(Move { tail: x, head: y, packet });
            }
        }
        let mut delta = vec![0i64; n];
        for m in &moves {
            delta[m.tail] -= 1;
            if self.net.kind(m.head) == NodeKind::Terminal {
                self.state.delivered += 1;
            } else {
                delta[m.head] += 1;
                self.state.insert(m.head, m.packet);
            }
        }
        let phi_len_before = phi_len_of(&self.net, &q);
        let phi_len_after_moves = self.state.phi_len(&self.net);
        let first_order_decrease = -(0..n).map(|x| delta[x] * q[x] as i64).sum::<i64>();
        let net_losers = delta.iter().filter(|&&d| d == -1).count() as i64;

        for &i in &self.sources {
            if arrivals[i] {
                self.state.push_arrival(i);
            }
        }
        self.state.t += 1;

        if let Control::Learners(ls) = &mut self.policy.control {
            for x in 0..n {
                if q[x] > 0 && self.net.kind(x) != NodeKind::Terminal {
                    let cf: Vec<f64> = counterfactual[x].iter().map(|&v| v as f64).collect();
                    ls[x].observe(&cf, actions[x], realized[x] as f64);
                }
            }
        }
        self.ledger.record(&realized, &counterfactual);

        Ok(StepOutcome {
            t,
            q,
            actions,
            arrivals,
            coins,
            moves,
            realized,
            counterfactual,
            phi_len_before,
            phi_len_after_moves,
            first_order_decrease,
            net_losers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::learning::{Algorithm, RateSchedule};

    fn always(net: &NetworkSpec, action: usize) -> Policy {
        let probs: Vec<Option<Vec<f64>>> = (0..net.len())
            .map(|x| {
                let k = net.out_neighbors(x).len() + 1;
                (k > action).then(|| {
                    let mut v = vec![0.0; k];
                    v[action] = 1.0;
                    v
                })
            })
            .collect();
        Policy::fixed(net, &probs, Priority::OldestPacket, UtilityModel::Unit)
    }

    #[test]
    fn realized_equals_counterfactual_of_played_action() {
        let net = fixtures::myopic_trap();
        let policy = Policy::learners(
            &net,
            Algorithm::Hedge,
            RateSchedule::Constant(0.05),
            Priority::OldestPacket,
            UtilityModel::QueueDiff,
        );
        let mut sim = Simulator::new(&net, policy, 3, 10).unwrap();
        for _ in 0..2000 {
            let o = sim.step().unwrap();
            for x in 0..net.len() {
                assert_eq!(o.realized[x], o.counterfactual[x][o.actions[x]]);
            }
            assert!(o.coupling_holds());
            assert_eq!(o.utility_sum(), o.first_order_decrease);
        }
    }

    #[test]
    fn conservation_and_age_bounds() {
        let net = fixtures::myopic_trap();
        let mut sim = Simulator::new(&net, always(&net, 1), 11, 1).unwrap();
        for _ in 0..5000 {
            sim.step().unwrap();
            let s = sim.state();
            assert_eq!(s.arrived() - s.delivered(), s.in_system());
            for x in net.sources() {
                assert!(s.len(x) as u64 <= s.age(x));
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let net = fixtures::slow_fast_pair();
        let mk = || {
            let p = Policy::learners(
                &net,
                Algorithm::Exp3 { explore: 0.05 },
                RateSchedule::Constant(0.05),
                Priority::LongestQueue,
                UtilityModel::Unit,
            );
            Simulator::new(&net, p, 99, 5).unwrap()
        };
        let (mut a, mut b) = (mk(), mk());
        for _ in 0..500 {
            assert_eq!(a.step().unwrap(), b.step().unwrap());
        }
    }

    #[test]
    fn tie_on_birth_goes_to_lower_id() {
        // q1 and q2 both hold a packet born at 0, both send to s1, coin up.
        let q = [1, 1, 0, 0];
        let heads = [Some(0), Some(0), None, None];
        let targets = vec![vec![2, 3], vec![2, 3], vec![], vec![]];
        let view = OfferView {
            q: &q,
            heads: &heads,
            actions: &[1, 1, 0, 0],
            targets: &targets,
            coins: &[false, false, true, false],
            priority: Priority::OldestPacket,
            utility: UtilityModel::Unit,
        };
        assert_eq!(view.winners(), vec![None, None, Some(0), None]);
        let cf = counterfactuals(&view);
        assert_eq!(cf[0], vec![0, 1, 0]);
        // q2 loses s1 to q1; s2's coin is down
        assert_eq!(cf[1], vec![0, 0, 0]);
    }

    #[test]
    fn longest_queue_priority_and_queue_diff_gain() {
        let q = [3, 5, 2, 0];
        let heads = [Some(0), Some(4), Some(1), None];
        // 0 and 1 both into server 2; 2 into terminal 3
        let targets = vec![vec![2], vec![2], vec![3], vec![]];
        let view = OfferView {
            q: &q,
            heads: &heads,
            actions: &[1, 1, 1, 0],
            targets: &targets,
            coins: &[false, false, true, true],
            priority: Priority::LongestQueue,
            utility: UtilityModel::QueueDiff,
        };
        assert_eq!(view.winners()[2], Some(1));
        let cf = counterfactuals(&view);
        assert_eq!(cf[0], vec![0, 0]);
        assert_eq!(cf[1], vec![0, 3]);
        assert_eq!(cf[2], vec![0, 2]);
    }

    #[test]
    fn centralized_policy_rejects_foreign_edges() {
        use crate::stability::{Component, PolicyDistribution};
        let net = fixtures::slow_fast_pair();
        let d = PolicyDistribution { components: vec![Component { edges: vec![(2, 0)], prob: 1.0 }] };
        let p = Policy::centralized(d, Priority::OldestPacket, UtilityModel::Unit);
        assert!(matches!(Simulator::new(&net, p, 0, 1), Err(SimError::PolicyMismatch(_))));
    }
}
