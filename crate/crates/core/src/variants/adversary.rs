use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::network::NetworkSpec;
use crate::sim::{ArrivalProcess, Policy, RunConfig, RunOutput, SimError, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScheduleKind {
    /// ⌊λ_i w⌋ arrivals in the first steps of every aligned window.
    FrontLoadedBurst,
    /// ⌊λ_i w⌋ arrivals spread evenly over every aligned window.
    RoundRobin,
    /// `trace[t][k]`: arrival at the k-th source at step t.
    Custom(Vec<Vec<bool>>),
}

/// Per-source arrival budget for windows of length w.
pub fn window_caps(lambda: &[f64], window: u64) -> Vec<u64> {
    lambda.iter().map(|&l| (l * window as f64 + 1e-9).floor() as u64).collect()
}

/// Offline arrival schedule checked online against the (w, λ) budget: no
/// length-w window may hold more than ⌊λ_i w⌋ arrivals at source i.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySchedule {
    pub window: u64,
    pub kind: ScheduleKind,
    caps: Vec<u64>,
    /// Arrival steps inside the current sliding window, per source.
    recent: Vec<std::collections::VecDeque<u64>>,
    max_seen: Vec<u64>,
}

impl AdversarySchedule {
    pub fn new(net: &NetworkSpec, window: u64, kind: ScheduleKind) -> Result<Self, SimError> {
        if window == 0 {
            return Err(SimError::ZeroWindow);
        }
        let lambda: Vec<f64> = net.sources().into_iter().map(|i| net.rate(i)).collect();
        let caps = window_caps(&lambda, window);
        let k = caps.len();
        Ok(AdversarySchedule { window, kind, caps, recent: vec![Default::default(); k], max_seen: vec![0; k] })
    }

    pub fn caps(&self) -> &[u64] {
        &self.caps
    }

    /// Largest count seen in any length-w window so far, per source.
    pub fn max_window_counts(&self) -> &[u64] {
        &self.max_seen
    }

    fn planned(&self, t: u64, k: usize) -> Result<bool, SimError> {
        let (w, cap) = (self.window, self.caps[k]);
        let r = t % w;
        Ok(match &self.kind {
            ScheduleKind::FrontLoadedBurst => r < cap,
            ScheduleKind::RoundRobin => (r + 1) * cap / w > r * cap / w,
            ScheduleKind::Custom(trace) => {
                let row = trace.get(t as usize).ok_or(SimError::ScheduleExhausted(t))?;
                row.get(k).copied().unwrap_or(false)
            }
        })
    }

    /// The first `horizon` rows of the schedule, without validation.
    pub fn trace(&self, horizon: u64) -> Result<Vec<Vec<bool>>, SimError> {
        (0..horizon).map(|t| (0..self.caps.len()).map(|k| self.planned(t, k)).collect()).collect()
    }
}

impl ArrivalProcess for AdversarySchedule {
    fn draw(&mut self, t: u64, _lambda: &[f64], _rng: &mut ChaCha8Rng, out: &mut [bool]) -> Result<(), SimError> {
        for (k, o) in out.iter_mut().enumerate() {
            let arrive = self.planned(t, k)?;
            let recent = &mut self.recent[k];
            while recent.front().is_some_and(|&s| s + self.window <= t) {
                recent.pop_front();
            }
            if arrive {
                recent.push_back(t);
            }
            let count = recent.len() as u64;
            self.max_seen[k] = self.max_seen[k].max(count);
            if count > self.caps[k] {
                return Err(SimError::AdversaryViolation { step: t, source_node: k });
            }
            *o = arrive;
        }
        Ok(())
    }

    fn box_clone(&self) -> Box<dyn ArrivalProcess> {
        Box::new(self.clone())
    }
}

/// Largest arrival count over all length-w windows of a trace, per source.
pub fn window_maxima(trace: &[Vec<bool>], sources: usize, window: u64) -> Vec<u64> {
    let w = window as usize;
    (0..sources)
        .map(|k| {
            let xs: Vec<u64> = trace.iter().map(|row| u64::from(row.get(k).copied().unwrap_or(false))).collect();
            let mut best = 0;
            let mut acc = 0;
            for t in 0..xs.len() {
                acc += xs[t];
                if t >= w {
                    acc -= xs[t - w];
                }
                best = best.max(acc);
            }
            best
        })
        .collect()
}

/// One line per step, one `0`/`1` per source separated by spaces.
pub fn format_trace(trace: &[Vec<bool>]) -> String {
    trace
        .iter()
        .map(|row| row.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

pub fn parse_trace(text: &str, sources: usize) -> Result<Vec<Vec<bool>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let row: Vec<bool> = line
                .split_whitespace()
                .map(|tok| match tok {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(format!("line {}: expected 0 or 1, got {tok:?}", n + 1)),
                })
                .collect::<Result<_, _>>()?;
            if row.len() == sources {
                Ok(row)
            } else {
                Err(format!("line {}: {} entries for {sources} sources", n + 1, row.len()))
            }
        })
        .collect()
}

/// The regular engine with arrivals taken from `schedule`.
pub fn adversarial_run(
    net: &NetworkSpec,
    schedule: AdversarySchedule,
    policy: Policy,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunOutput, SimError> {
    Simulator::new(net, policy, seed, cfg.window)?.with_arrivals(Box::new(schedule)).run(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::sim::{Priority, UtilityModel};

    fn idle(net: &NetworkSpec) -> Policy {
        Policy::fixed(net, &[], Priority::OldestPacket, UtilityModel::Unit)
    }

    #[test]
    fn built_in_schedules_fill_but_never_exceed_the_budget() {
        let net = fixtures::slow_fast_pair();
        for kind in [ScheduleKind::FrontLoadedBurst, ScheduleKind::RoundRobin] {
            let s = AdversarySchedule::new(&net, 37, kind).unwrap();
            assert_eq!(s.caps(), &[14, 14]);
            let trace = s.trace(37 * 20 + 11).unwrap();
            assert_eq!(window_maxima(&trace, 2, 37), vec![14, 14]);
        }
    }

    #[test]
    fn front_loaded_burst_shape() {
        let net = fixtures::overloaded_single_server();
        let s = AdversarySchedule::new(&net, 10, ScheduleKind::FrontLoadedBurst).unwrap();
        let first: Vec<bool> = s.trace(10).unwrap().iter().map(|r| r[0]).collect();
        assert_eq!(first, [true, true, true, true, false, false, false, false, false, false]);
    }

    #[test]
    fn zero_schedule_keeps_the_system_empty() {
        let net = fixtures::slow_fast_pair();
        let s = AdversarySchedule::new(&net, 10, ScheduleKind::Custom(vec![vec![false, false]; 200])).unwrap();
        let out = adversarial_run(&net, s, idle(&net), &RunConfig::new(200, 10), 0).unwrap();
        assert!(out.total_q.iter().all(|&q| q == 0));
    }

    #[test]
    fn overfull_window_aborts_at_first_offending_step() {
        let net = fixtures::slow_fast_pair();
        // cap is 4 per window of 10; the fifth arrival is at step 4
        let trace: Vec<Vec<bool>> = (0..100).map(|t| vec![t < 5, false]).collect();
        let s = AdversarySchedule::new(&net, 10, ScheduleKind::Custom(trace)).unwrap();
        let err = adversarial_run(&net, s, idle(&net), &RunConfig::new(100, 10), 0).unwrap_err();
        assert_eq!(err, SimError::AdversaryViolation { step: 4, source_node: 0 });
    }

    #[test]
    fn short_trace_is_an_error() {
        let net = fixtures::slow_fast_pair();
        let s = AdversarySchedule::new(&net, 10, ScheduleKind::Custom(vec![vec![false, false]; 50])).unwrap();
        let err = adversarial_run(&net, s, idle(&net), &RunConfig::new(100, 10), 0).unwrap_err();
        assert_eq!(err, SimError::ScheduleExhausted(50));
    }

    #[test]
    fn trace_text_round_trip() {
        let trace = vec![vec![true, false], vec![false, false], vec![true, true]];
        assert_eq!(parse_trace(&format_trace(&trace), 2).unwrap(), trace);
        assert!(parse_trace("1 0 1\n", 2).is_err());
        assert!(parse_trace("1 x\n", 2).is_err());
    }
}
