use serde::Serialize;

use crate::network::NetworkSpec;

use super::engine::Simulator;
use super::{Policy, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsFrame {
    pub t: u64,
    pub q: Vec<usize>,
    pub age: Vec<u64>,
    pub phi_age: f64,
    pub phi_len: i64,
    /// Cumulative realized utility per node.
    pub utility: Vec<i64>,
    /// Regret over the last completed window (zeros before the first).
    pub regret: Vec<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityVerdict {
    Growth,
    Bounded,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityEstimate {
    /// Least-squares slope of total queue length over the last half, per step.
    pub slope: f64,
    pub max_q: u64,
    pub median_q: f64,
    /// Max over median of block means of total length in the last half.
    pub block_ratio: f64,
    pub block: u64,
    pub verdict: StabilityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub horizon: u64,
    pub window: u64,
    /// Frame spacing; also the averaging block for the spread test.
    pub stride: u64,
    pub slope_tol: f64,
    pub ratio_cap: f64,
}

impl RunConfig {
    pub fn new(horizon: u64, window: u64) -> Self {
        RunConfig { horizon, window, stride: window, slope_tol: 1e-3, ratio_cap: 3.0 }
    }

    pub fn stride(mut self, stride: u64) -> Self {
        self.stride = stride;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<MetricsFrame>,
    pub estimate: StabilityEstimate,
    /// Total queue length after every step.
    pub total_q: Vec<u64>,
    /// Steps where the exact length-potential identity failed.
    pub coupling_violations: u64,
    /// Steps where Σu differed from the first-order potential decrease.
    pub first_order_mismatches: u64,
    /// Per completed window, regret per node.
    pub window_regrets: Vec<Vec<i64>>,
    pub sim: Simulator,
}

impl RunOutput {
    /// Mean over completed windows and sending nodes of window regret.
    pub fn mean_window_regret(&self) -> f64 {
        let net = self.sim.net();
        let senders = net.senders();
        let cells = self.window_regrets.len() * senders.len();
        if cells == 0 {
            return 0.0;
        }
        let sum: i64 = self.window_regrets.iter().flat_map(|r| senders.iter().map(move |&x| r[x])).sum();
        sum as f64 / cells as f64
    }
}

/// Bernoulli arrivals, ledger checkpointed once per window.
pub fn run(net: &NetworkSpec, policy: Policy, cfg: &RunConfig, seed: u64) -> Result<RunOutput, SimError> {
    if cfg.window == 0 {
        return Err(SimError::ZeroWindow);
    }
    Simulator::new(net, policy, seed, cfg.window)?.run(cfg)
}

impl Simulator {
    /// Advance `cfg.horizon` steps from the current state.
    pub fn run(mut self, cfg: &RunConfig) -> Result<RunOutput, SimError> {
        if cfg.window == 0 || cfg.stride == 0 {
            return Err(SimError::ZeroWindow);
        }
        if cfg.horizon < 10 * cfg.window {
            return Err(SimError::HorizonTooShort { horizon: cfg.horizon, window: cfg.window });
        }
        let every = self.ledger().checkpoint_every();
        if !cfg.window.is_multiple_of(every) {
            return Err(SimError::LedgerSpacing { every, window: cfg.window });
        }
        let n = self.net().len();
        let start = self.state().time();
        let mut frames = Vec::new();
        let mut total_q = Vec::with_capacity(cfg.horizon as usize);
        let mut window_regrets = Vec::new();
        let mut last_regret = vec![0; n];
        let (mut coupling_violations, mut first_order_mismatches) = (0, 0);
        for k in 1..=cfg.horizon {
            let o = self.step()?;
            coupling_violations += u64::from(!o.coupling_holds());
            first_order_mismatches += u64::from(o.utility_sum() != o.first_order_decrease);
            total_q.push(self.state().in_system());
            let t = self.state().time();
            if t.is_multiple_of(cfg.window) && t >= cfg.window {
                last_regret = self.ledger().window(t, cfg.window).expect("aligned window");
                window_regrets.push(last_regret.clone());
            }
            if k % cfg.stride == 0 || k == cfg.horizon {
                let s = self.state();
                let net = self.net();
                frames.push(MetricsFrame {
                    t,
                    q: s.lengths(),
                    age: (0..n).map(|x| s.age(x)).collect(),
                    phi_age: s.phi_age(net),
                    phi_len: s.phi_len(net),
                    utility: (0..n).map(|x| self.ledger().realized_total(x)).collect(),
                    regret: last_regret.clone(),
                });
            }
        }
        debug_assert_eq!(self.state().time(), start + cfg.horizon);
        let estimate = estimate_stability(&total_q, cfg.stride, cfg.slope_tol, cfg.ratio_cap);
        Ok(RunOutput {
            frames,
            estimate,
            total_q,
            coupling_violations,
            first_order_mismatches,
            window_regrets,
            sim: self,
        })
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        0.0
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Growth if the last-half slope exceeds `slope_tol`; bounded if it does not
/// and the largest block mean is within `ratio_cap` of the median block mean.
pub fn estimate_stability(total_q: &[u64], block: u64, slope_tol: f64, ratio_cap: f64) -> StabilityEstimate {
    let half = &total_q[total_q.len() / 2..];
    let xs: Vec<f64> = (0..half.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = half.iter().map(|&q| q as f64).collect();
    let slope = least_squares_slope(&xs, &ys);
    let max_q = half.iter().copied().max().unwrap_or(0);
    let median_q = median(&mut ys.clone());

    let block = block.clamp(1, half.len().max(1) as u64) as usize;
    let mut means: Vec<f64> =
        ys.chunks(block).filter(|c| c.len() == block).map(|c| c.iter().sum::<f64>() / block as f64).collect();
    let block_max = means.iter().copied().fold(0.0, f64::max);
    let block_median = median(&mut means);
    let block_ratio = if block_median > 0.0 {
        block_max / block_median
    } else if block_max > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let verdict = if slope > slope_tol {
        StabilityVerdict::Growth
    } else if block_ratio <= ratio_cap {
        StabilityVerdict::Bounded
    } else {
        StabilityVerdict::Inconclusive
    };
    StabilityEstimate { slope, max_q, median_q, block_ratio, block: block as u64, verdict }
}

fn quote(name: &str) -> String {
    name.replace(['\n', '\r'], " ")
}

/// One CSV row per frame. `manifest` becomes a leading `#` comment line.
pub fn frames_to_csv(net: &NetworkSpec, frames: &[MetricsFrame], manifest: &str) -> String {
    let mut out = format!("# {}\n", quote(manifest));
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<&str> = net.nodes().iter().map(|n| n.name.as_str()).collect();
    let mut header = vec!["t".to_string()];
    for prefix in ["Q", "T"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    header.push("Phi_age".into());
    header.push("Phi_len".into());
    for prefix in ["U", "Reg"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    w.write_record(&header).expect("in-memory write");
    for f in frames {
        let mut row = vec![f.t.to_string()];
        row.extend(f.q.iter().map(ToString::to_string));
        row.extend(f.age.iter().map(ToString::to_string));
        row.push(f.phi_age.to_string());
        row.push(f.phi_len.to_string());
        row.extend(f.utility.iter().map(ToString::to_string));
        row.extend(f.regret.iter().map(ToString::to_string));
        w.write_record(&row).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
    out
}
