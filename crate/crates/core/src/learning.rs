//! Per-node server-selection learners and the counterfactual regret ledger.
//!
//! Action 0 is always "idle"; actions 1..=k are the node's out-neighbours in
//! increasing id order.

use rand::Rng;
use serde::{Deserialize, Serialize};

const MIN_WEIGHT: f64 = 1e-300;
const RESCALE_HI: f64 = 1e200;
const RESCALE_LO: f64 = 1e-200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum RateSchedule {
    /// Fixed η.
    Constant(f64),
    /// η_t = c · sqrt(ln K / t).
    Anytime(f64),
}

impl RateSchedule {
    pub fn at(&self, round: u64, actions: usize) -> f64 {
        match *self {
            RateSchedule::Constant(eta) => eta,
            RateSchedule::Anytime(c) => c * ((actions.max(2) as f64).ln() / round.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Multiplicative weights on the full counterfactual vector.
    Hedge,
    /// Importance-weighted bandit updates with uniform exploration `explore`.
    Exp3 { explore: f64 },
    /// Fixed distribution over actions (including idle at index 0).
    Fixed(Vec<f64>),
    /// Argmax of last round's counterfactual utilities.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    algorithm: Algorithm,
    rate: RateSchedule,
    /// Relative weights; only ratios matter.
    weights: Vec<f64>,
    last: Vec<f64>,
    rounds: u64,
    scale: f64,
    drawn: Option<(usize, f64)>,
    pub stream: u64,
}

impl Learner {
    pub fn new(algorithm: Algorithm, rate: RateSchedule, actions: usize, stream: u64) -> Self {
        assert!(actions >= 1, "action set includes idle");
        if let Algorithm::Fixed(p) = &algorithm {
            assert_eq!(p.len(), actions, "fixed distribution covers every action");
        }
        Learner {
            algorithm,
            rate,
            weights: vec![1.0; actions],
            last: vec![0.0; actions],
            rounds: 0,
            scale: 1.0,
            drawn: None,
            stream,
        }
    }

    pub fn actions(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.algorithm
    }

    /// Sampling distribution restricted to `allowed` (idle is always allowed).
    pub fn distribution(&self, allowed: &[bool]) -> Vec<f64> {
        let k = self.actions();
        let ok = |a: usize| a == 0 || allowed.get(a).copied().unwrap_or(true);
        let mut p: Vec<f64> = match &self.algorithm {
            Algorithm::Hedge | Algorithm::Exp3 { .. } => {
                (0..k).map(|a| if ok(a) { self.weights[a] } else { 0.0 }).collect()
            }
            Algorithm::Fixed(q) => (0..k).map(|a| if ok(a) { q[a] } else { 0.0 }).collect(),
            Algorithm::Greedy => {
                let best = (0..k)
                    .filter(|&a| ok(a))
                    .fold(None, |acc: Option<usize>, a| match acc {
                        Some(b) if self.last[b] >= self.last[a] => Some(b),
                        _ => Some(a),
                    })
                    .unwrap_or(0);
                (0..k).map(|a| if a == best { 1.0 } else { 0.0 }).collect()
            }
        };
        let total: f64 = p.iter().sum();
        if total <= 0.0 {
            p.iter_mut().for_each(|v| *v = 0.0);
            p[0] = 1.0;
        } else {
            p.iter_mut().for_each(|v| *v /= total);
        }
        if let Algorithm::Exp3 { explore } = self.algorithm {
            let live = (0..k).filter(|&a| ok(a)).count() as f64;
            for (a, v) in p.iter_mut().enumerate() {
                if ok(a) {
                    *v = (1.0 - explore) * *v + explore / live;
                }
            }
        }
        p
    }

    pub fn select(&mut self, allowed: &[bool], rng: &mut impl Rng) -> usize {
        let p = self.distribution(allowed);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (a, &v) in p.iter().enumerate() {
            acc += v;
            if u < acc && v > 0.0 {
                pick = a;
                break;
            }
        }
        self.drawn = Some((pick, p[pick]));
        pick
    }

    /// Feed one round. `counterfactual[a]` is the utility action `a` would
    /// have earned; `realized` is what the played action earned.
    pub fn observe(&mut self, counterfactual: &[f64], played: usize, realized: f64) {
        self.rounds += 1;
        let eta = self.rate.at(self.rounds, self.actions());
        match self.algorithm {
            Algorithm::Hedge => {
                let top = counterfactual.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
                for (w, &u) in self.weights.iter_mut().zip(counterfactual) {
                    *w *= (eta * (u - top)).exp();
                }
                self.renormalize();
            }
            Algorithm::Exp3 { .. } => {
                self.scale = self.scale.max(realized.abs());
                if let Some((a, p)) = self.drawn.take() {
                    debug_assert_eq!(a, played);
                    if p > 0.0 && realized != 0.0 {
                        let gain = realized / self.scale / p;
                        self.weights[a] *= (eta * gain).exp();
                        self.renormalize();
                    }
                }
            }
            Algorithm::Greedy => self.last.copy_from_slice(counterfactual),
            Algorithm::Fixed(_) => {}
        }
    }

    fn renormalize(&mut self) {
        let top = self.weights.iter().copied().fold(0.0, f64::max);
        if !(RESCALE_LO..=RESCALE_HI).contains(&top) {
            for w in self.weights.iter_mut() {
                *w /= top;
            }
        }
        for w in self.weights.iter_mut() {
            if w.is_nan() || *w < MIN_WEIGHT {
                *w = MIN_WEIGHT;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("window [{start}, {end}) is not covered by recorded checkpoints (every {every} steps up to {recorded})")]
    WindowOutOfRange { start: u64, end: u64, every: u64, recorded: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    realized: Vec<i64>,
    counterfactual: Vec<Vec<i64>>,
}

/// Append-only cumulative utilities per node, realized and per fixed action,
/// checkpointed every `every` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    every: u64,
    steps: u64,
    current: Snapshot,
    snaps: Vec<Snapshot>,
}

impl RegretLedger {
    /// `actions[i]` counts node i's actions including idle.
    pub fn new(actions: &[usize], every: u64) -> Self {
        assert!(every > 0);
        let current = Snapshot {
            realized: vec![0; actions.len()],
            counterfactual: actions.iter().map(|&k| vec![0; k]).collect(),
        };
        RegretLedger { every, steps: 0, snaps: vec![current.clone()], current }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn checkpoint_every(&self) -> u64 {
        self.every
    }

    pub fn record(&mut self, realized: &[i64], counterfactual: &[Vec<i64>]) {
        for (c, r) in self.current.realized.iter_mut().zip(realized) {
            *c += r;
        }
        for (cs, rs) in self.current.counterfactual.iter_mut().zip(counterfactual) {
            for (c, r) in cs.iter_mut().zip(rs) {
                *c += r;
            }
        }
        self.steps += 1;
        if self.steps.is_multiple_of(self.every) {
            self.snaps.push(self.current.clone());
        }
    }

    pub fn realized_total(&self, node: usize) -> i64 {
        self.current.realized[node]
    }

    /// Regret over steps [t0 − w, t0): best fixed non-idle action minus realized.
    /// Nodes without non-idle actions report 0.
    pub fn window(&self, t0: u64, w: u64) -> Result<Vec<i64>, LedgerError> {
        let err = LedgerError::WindowOutOfRange {
            start: t0.saturating_sub(w),
            end: t0,
            every: self.every,
            recorded: self.steps,
        };
        if w == 0 || w > t0 || t0 > self.steps || !t0.is_multiple_of(self.every) || !w.is_multiple_of(self.every) {
            return Err(err);
        }
        let (b, a) = (&self.snaps[(t0 / self.every) as usize], &self.snaps[((t0 - w) / self.every) as usize]);
        Ok((0..b.realized.len())
            .map(|i| {
                let got = b.realized[i] - a.realized[i];
                (1..b.counterfactual[i].len())
                    .map(|j| b.counterfactual[i][j] - a.counterfactual[i][j])
                    .max()
                    .map_or(0, |best| best - got)
            })
            .collect())
    }

    /// Per-action counterfactual gain over the window, for inspection.
    pub fn window_counterfactual(&self, node: usize, t0: u64, w: u64) -> Result<Vec<i64>, LedgerError> {
        self.window(t0, w)?;
        let (b, a) = (&self.snaps[(t0 / self.every) as usize], &self.snaps[((t0 - w) / self.every) as usize]);
        Ok(b.counterfactual[node].iter().zip(&a.counterfactual[node]).map(|(x, y)| x - y).collect())
    }
}
