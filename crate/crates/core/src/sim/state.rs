use std::collections::VecDeque;

use serde::Serialize;

use crate::network::{NetworkSpec, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Packet {
    pub id: u64,
    /// Source node the packet entered at.
    pub origin: usize,
    /// Arrival step. Preloaded backlogs may carry negative stamps.
    pub birth: i64,
}

impl Packet {
    fn key(&self) -> (i64, u64) {
        (self.birth, self.id)
    }
}

/// Queue contents and counters. Each queue is kept sorted by (birth, id) so
/// the front is always the oldest packet.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub(crate) t: u64,
    pub(crate) queues: Vec<VecDeque<Packet>>,
    pub(crate) next_id: u64,
    pub(crate) arrived: u64,
    pub(crate) delivered: u64,
}

impl SimState {
    pub fn new(nodes: usize) -> Self {
        SimState { t: 0, queues: vec![VecDeque::new(); nodes], next_id: 0, arrived: 0, delivered: 0 }
    }

    /// Steps completed so far.
    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn len(&self, node: usize) -> usize {
        self.queues[node].len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.queues.iter().map(VecDeque::len).collect()
    }

    pub fn queue(&self, node: usize) -> &VecDeque<Packet> {
        &self.queues[node]
    }

    pub fn oldest(&self, node: usize) -> Option<&Packet> {
        self.queues[node].front()
    }

    pub fn arrived(&self) -> u64 {
        self.arrived
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn in_system(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    /// Age of the oldest packet at a node: t − birth of the front, 0 if empty.
    pub fn age(&self, node: usize) -> u64 {
        self.oldest(node).map_or(0, |p| (self.t as i64 - p.birth).max(0) as u64)
    }

    /// Age-weighted potential ½ Σ_{sources} λ_i T_i (T_i − 1).
    pub fn phi_age(&self, net: &NetworkSpec) -> f64 {
        net.sources()
            .into_iter()
            .map(|i| {
                let a = self.age(i) as f64;
                0.5 * net.rate(i) * a * (a - 1.0)
            })
            .sum()
    }

    /// Length potential ½ Σ Q_i (Q_i − 1) over nodes that hold queues.
    pub fn phi_len(&self, net: &NetworkSpec) -> i64 {
        phi_len_of(net, &self.lengths())
    }

    pub(crate) fn push_arrival(&mut self, origin: usize) {
        let p = Packet { id: self.next_id, origin, birth: self.t as i64 };
        self.next_id += 1;
        self.arrived += 1;
        self.queues[origin].push_back(p);
    }

    pub(crate) fn insert(&mut self, node: usize, p: Packet) {
        let q = &mut self.queues[node];
        let at = q.partition_point(|x| x.key() <= p.key());
        q.insert(at, p);
    }

    /// Preload `count` packets at a source, births spread evenly over the
    /// `span` steps before the current time (the oldest is `span` old).
    pub fn preload(&mut self, node: usize, count: usize, span: u64) {
        let now = self.t as i64;
        for k in 0..count {
            let back = if count <= 1 {
                span as i64
            } else {
                span as i64 - (k as i64 * (span as i64 - 1)) / (count as i64 - 1)
            };
            let p = Packet { id: self.next_id, origin: node, birth: now - back.max(1) };
            self.next_id += 1;
            self.arrived += 1;
            self.insert(node, p);
        }
    }
}

pub(crate) fn phi_len_of(net: &NetworkSpec, q: &[usize]) -> i64 {
    q.iter()
        .enumerate()
        .filter(|&(x, _)| net.kind(x) != NodeKind::Terminal)
        .map(|(_, &l)| {
            let l = l as i64;
            l * (l - 1) / 2
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn insert_keeps_birth_order() {
        let mut s = SimState::new(2);
        for (id, birth) in [(3, 5), (1, 2), (2, 5), (0, 9)] {
            s.insert(1, Packet { id, origin: 0, birth });
        }
        let order: Vec<u64> = s.queue(1).iter().map(|p| p.id).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
    }

    #[test]
    fn preload_spans_the_requested_age() {
        let net = fixtures::slow_fast_pair();
        let mut s = SimState::new(net.len());
        s.preload(0, 5, 100);
        assert_eq!(s.len(0), 5);
        assert_eq!(s.age(0), 100);
        assert_eq!(s.queue(0).back().unwrap().birth, -1);
        assert!((s.phi_age(&net) - 0.5 * 0.4 * 100.0 * 99.0).abs() < 1e-9);
        assert_eq!(s.phi_len(&net), 10);
    }
}
