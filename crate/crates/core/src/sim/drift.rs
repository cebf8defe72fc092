use serde::Serialize;

use crate::network::{NetworkSpec, NodeKind};

use super::engine::Simulator;
use super::{Policy, SimError};

/// Preloaded packets at a source: `count` packets with births spread over the
/// `span` steps before time 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Backlog {
    pub node: usize,
    pub count: usize,
    pub span: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftConfig {
    pub window: u64,
    pub windows: u64,
    /// Steps run before the first probed window; a multiple of `window`.
    pub burn_in: u64,
    pub beta: f64,
    /// Independent continuations per window for the conditional mean; 0
    /// uses the realized path only.
    pub replicas: u32,
    pub backlog: Vec<Backlog>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowDrift {
    pub start: u64,
    pub z_age: f64,
    pub z_age_end: f64,
    pub z_len: f64,
    pub z_len_end: f64,
    /// Mean of √Φ_age(end) − √Φ_age(start) over replicas.
    pub replica_drift_age: Option<f64>,
    pub replica_drift_len: Option<f64>,
    pub above_threshold: bool,
    pub regret_sum: i64,
    /// Arrival-gap concentration at every source.
    pub a_arrivals: bool,
    pub a_service: bool,
    pub a_regret: bool,
    pub b_arrivals: bool,
    pub b_service: bool,
    pub b_regret: bool,
}

impl WindowDrift {
    pub fn event_a(&self) -> bool {
        self.a_arrivals && self.a_service && self.a_regret
    }

    pub fn event_b(&self) -> bool {
        self.b_arrivals && self.b_service && self.b_regret
    }

    /// Replica mean when available, else the realized change.
    pub fn drift_age(&self) -> f64 {
        self.replica_drift_age.unwrap_or(self.z_age_end - self.z_age)
    }

    pub fn drift_len(&self) -> f64 {
        self.replica_drift_len.unwrap_or(self.z_len_end - self.z_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub threshold: f64,
    pub eps: f64,
    pub windows: Vec<WindowDrift>,
}

impl DriftReport {
    fn freq(&self, f: impl Fn(&WindowDrift) -> bool) -> f64 {
        if self.windows.is_empty() {
            return 0.0;
        }
        self.windows.iter().filter(|w| f(w)).count() as f64 / self.windows.len() as f64
    }

    pub fn event_a_frequency(&self) -> f64 {
        self.freq(WindowDrift::event_a)
    }

    pub fn event_b_frequency(&self) -> f64 {
        self.freq(WindowDrift::event_b)
    }

    pub fn above(&self) -> Vec<&WindowDrift> {
        self.windows.iter().filter(|w| w.above_threshold).collect()
    }

    /// Share of above-threshold windows whose √Φ_age drift is negative.
    pub fn negative_fraction_above(&self) -> Option<f64> {
        let above = self.above();
        (!above.is_empty()).then(|| above.iter().filter(|w| w.drift_age() < 0.0).count() as f64 / above.len() as f64)
    }

    pub fn mean_drift_age(&self) -> f64 {
        mean(self.windows.iter().map(WindowDrift::drift_age))
    }

    pub fn mean_drift_len(&self) -> f64 {
        mean(self.windows.iter().map(WindowDrift::drift_len))
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        0.0
    } else {
        s / k as f64
    }
}

/// Level b above which √Φ_age is expected to drift down by a fixed amount per
/// window: w/√(2λ_min) · max((8/β) Σλ, 16n²).
pub fn drift_threshold(net: &NetworkSpec, window: u64, beta: f64) -> f64 {
    let lambda: Vec<f64> = net.sources().into_iter().map(|i| net.rate(i)).collect();
    let n = lambda.len() as f64;
    let min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = lambda.iter().sum();
    window as f64 / (2.0 * min).sqrt() * f64::max(8.0 / beta * sum, 16.0 * n * n)
}

/// Stream ids for replica continuations start here, clear of the run streams.
const REPLICA_STREAM_BASE: u64 = 1 << 32;

pub fn drift_probe(net: &NetworkSpec, policy: Policy, cfg: &DriftConfig, seed: u64) -> Result<DriftReport, SimError> {
    let w = cfg.window;
    if w == 0 || !cfg.burn_in.is_multiple_of(w) {
        return Err(SimError::ZeroWindow);
    }
    let mut sim = Simulator::new(net, policy, seed, w)?;
    for b in &cfg.backlog {
        sim.state_mut().preload(b.node, b.count, b.span);
    }
    for _ in 0..cfg.burn_in {
        sim.step()?;
    }

    let eps = cfg.beta / 8.0;
    let sources = net.sources();
    let lambda_min = sources.iter().map(|&i| net.rate(i)).fold(f64::INFINITY, f64::min);
    let eps1 = eps * lambda_min / (2.0 * sources.len() as f64);
    let receivers: Vec<usize> = (0..net.len()).filter(|&x| net.kind(x) != NodeKind::Source).collect();
    let senders = net.senders();
    let threshold = drift_threshold(net, w, cfg.beta);
    let wf = w as f64;

    let mut windows = Vec::with_capacity(cfg.windows as usize);
    for ell in 0..cfg.windows {
        let start = sim.state().time();
        let z_age = sim.state().phi_age(net).sqrt();
        let z_len = (sim.state().phi_len(net) as f64).sqrt();

        let (mut replica_drift_age, mut replica_drift_len) = (None, None);
        if cfg.replicas > 0 {
            let (mut da, mut dl) = (0.0, 0.0);
            for r in 0..u64::from(cfg.replicas) {
                let mut rep = sim.clone();
                rep.reseed(seed, REPLICA_STREAM_BASE + 3 * (ell * u64::from(cfg.replicas) + r));
                for _ in 0..w {
                    rep.step()?;
                }
                da += rep.state().phi_age(net).sqrt() - z_age;
                dl += (rep.state().phi_len(net) as f64).sqrt() - z_len;
            }
            replica_drift_age = Some(da / f64::from(cfg.replicas));
            replica_drift_len = Some(dl / f64::from(cfg.replicas));
        }

        // births of stored packets, then of packets arriving in the window
        let mut births: Vec<Vec<i64>> =
            sources.iter().map(|&i| sim.state().queue(i).iter().map(|p| p.birth).collect()).collect();
        let mut arrivals = vec![0u64; sources.len()];
        let mut served = vec![0u64; net.len()];
        for _ in 0..w {
            let o = sim.step()?;
            for (k, &i) in sources.iter().enumerate() {
                if o.arrivals[i] {
                    arrivals[k] += 1;
                    births[k].push(o.t as i64);
                }
            }
            for &j in &receivers {
                served[j] += u64::from(o.coins[j]);
            }
        }
        let regrets = sim.ledger().window(start + w, w).expect("aligned window");
        let regret_sum: i64 = senders.iter().map(|&x| regrets[x]).sum();

        let a_arrivals = sources.iter().enumerate().all(|(k, &i)| {
            let lambda = net.rate(i);
            let mut acc = 0.0;
            births[k].windows(2).take(w as usize).enumerate().all(|(s, pair)| {
                acc += lambda * (pair[1] - pair[0]) as f64;
                (acc - (s + 1) as f64).abs() <= eps1 * wf
            })
        });
        let service = |slack: f64| receivers.iter().all(|&j| served[j] as f64 >= (1.0 - slack) * net.rate(j) * wf);
        let a_service = service(eps);
        let a_regret = (regret_sum + sources.len() as i64) as f64 <= eps * lambda_min * wf / 2.0;
        let b_arrivals = sources.iter().enumerate().all(|(k, &i)| arrivals[k] as f64 <= (1.0 + eps) * net.rate(i) * wf);

        windows.push(WindowDrift {
            start,
            z_age,
            z_age_end: sim.state().phi_age(net).sqrt(),
            z_len,
            z_len_end: (sim.state().phi_len(net) as f64).sqrt(),
            replica_drift_age,
            replica_drift_len,
            above_threshold: z_age > threshold,
            regret_sum,
            a_arrivals,
            a_service,
            a_regret,
            b_arrivals,
            b_service: a_service,
            b_regret: regret_sum as f64 <= wf,
        });
    }
    Ok(DriftReport { threshold, eps, windows })
}
