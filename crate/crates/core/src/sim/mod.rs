//! Two-phase discrete-time engine: nodes offer their oldest packet, servers
//! pick one offer by priority and clear it with a Bernoulli coin drawn every
//! step. Counterfactual utilities reuse those coins.

mod drift;
mod engine;
mod run;
mod state;

pub use drift::{drift_probe, drift_threshold, Backlog, DriftConfig, DriftReport, WindowDrift};
pub use engine::{counterfactuals, Move, OfferView, Simulator, StepOutcome};
pub use run::{
    estimate_stability, frames_to_csv, least_squares_slope, run, MetricsFrame, RunConfig, RunOutput, StabilityEstimate,
    StabilityVerdict,
};
pub use state::{Packet, SimState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::learning::{Algorithm, Learner, RateSchedule};
use crate::network::{NetworkSpec, NodeKind};
use crate::stability::PolicyDistribution;

/// RNG stream ids inside a run's ChaCha seed.
pub const STREAM_ARRIVALS: u64 = 0;
pub const STREAM_COINS: u64 = 1;
pub const STREAM_POLICY: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priority {
    OldestPacket,
    LongestQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityModel {
    Unit,
    QueueDiff,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// One learner per node; terminals carry an idle-only placeholder.
    Learners(Vec<Learner>),
    /// Each step one edge set is drawn; a nonempty tail sends along its edge.
    Centralized(PolicyDistribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub control: Control,
    pub priority: Priority,
    pub utility: UtilityModel,
    /// Added to the policy stream id so learner sampling can be varied
    /// independently of arrivals and coins.
    pub seed_offset: u64,
}

impl Policy {
    /// Same algorithm at every node that holds a queue.
    pub fn learners(
        net: &NetworkSpec,
        algorithm: Algorithm,
        rate: RateSchedule,
        priority: Priority,
        utility: UtilityModel,
    ) -> Policy {
        let learners = (0..net.len())
            .map(|x| {
                let k = net.out_neighbors(x).len() + 1;
                let algo =
                    if net.kind(x) == NodeKind::Terminal { Algorithm::Fixed(vec![1.0]) } else { algorithm.clone() };
                Learner::new(algo, rate, k, STREAM_POLICY)
            })
            .collect();
        Policy { control: Control::Learners(learners), priority, utility, seed_offset: 0 }
    }

    /// Fixed mixed strategies: `probs[x]` is a distribution over x's actions
    /// (idle first, then out-neighbours by id). `None` means "always idle".
    pub fn fixed(net: &NetworkSpec, probs: &[Option<Vec<f64>>], priority: Priority, utility: UtilityModel) -> Policy {
        let learners = (0..net.len())
            .map(|x| {
                let k = net.out_neighbors(x).len() + 1;
                let p = probs.get(x).cloned().flatten().unwrap_or_else(|| {
                    let mut v = vec![0.0; k];
                    v[0] = 1.0;
                    v
                });
                Learner::new(Algorithm::Fixed(p), RateSchedule::Constant(0.0), k, STREAM_POLICY)
            })
            .collect();
        Policy { control: Control::Learners(learners), priority, utility, seed_offset: 0 }
    }

    pub fn centralized(dist: PolicyDistribution, priority: Priority, utility: UtilityModel) -> Policy {
        Policy { control: Control::Centralized(dist), priority, utility, seed_offset: 0 }
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Policy {
        self.seed_offset = offset;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("horizon {horizon} is shorter than ten windows of {window}")]
    HorizonTooShort { horizon: u64, window: u64 },
    #[error("window and stride must be positive")]
    ZeroWindow,
    #[error("arrival schedule breaches its window budget at step {step} for source {source_node}")]
    AdversaryViolation { step: u64, source_node: usize },
    #[error("arrival schedule ended at step {0}")]
    ScheduleExhausted(u64),
    #[error("ledger checkpoints every {every} steps cannot report windows of {window}")]
    LedgerSpacing { every: u64, window: u64 },
    #[error("policy does not match the network: {0}")]
    PolicyMismatch(String),
}

/// Where source arrivals come from each step.
pub trait ArrivalProcess: Send {
    /// Fill `out[k]` for the k-th source (sources in id order) at step `t`.
    fn draw(&mut self, t: u64, lambda: &[f64], rng: &mut ChaCha8Rng, out: &mut [bool]) -> Result<(), SimError>;
    fn box_clone(&self) -> Box<dyn ArrivalProcess>;
}

impl Clone for Box<dyn ArrivalProcess> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Independent Bernoulli(λ_i) arrivals.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bernoulli;

impl ArrivalProcess for Bernoulli {
    fn draw(&mut self, _t: u64, lambda: &[f64], rng: &mut ChaCha8Rng, out: &mut [bool]) -> Result<(), SimError> {
        for (o, &l) in out.iter_mut().zip(lambda) {
            *o = rng.random_bool(l);
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn ArrivalProcess> {
        Box::new(*self)
    }
}
