use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use queuenet::network::NetworkSpec;
use queuenet::patient::{check_stability_nash, compute_costs, verify_nash, StrategyProfile};
use queuenet::sim::{frames_to_csv, run, Priority, RunConfig, UtilityModel};
use queuenet::stability::{
    check_assumption_bipartite, check_assumption_bipartite_relaxed, check_assumption_dag, check_bipartite_centralized,
    check_cb_tighter, check_dag_edge, check_dag_flow, decompose_paths, flow_to_edge, FractionalRouting, Verdict,
};

use crate::config::{fixed_probs, read_routing, AssumptionName, Loaded, Mode};

/// Exit status of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    Positive = 0,
    Negative = 1,
}

pub struct Ctx {
    pub loaded: Loaded,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub verify_sim: bool,
}

impl Ctx {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn manifest(&self, net: &NetworkSpec, seed: Option<u64>) -> String {
        let mut m = format!("config_hash={} instance_hash={}", self.loaded.hash, net.instance_hash());
        if let Some(s) = seed {
            let _ = write!(m, " seed={s}");
        }
        m
    }
}

#[derive(Serialize)]
struct NamedEdge {
    tail: String,
    head: String,
    value: f64,
}

fn named_routing(net: &NetworkSpec, z: &FractionalRouting) -> Vec<NamedEdge> {
    z.iter()
        .filter(|&(_, v)| v != 0.0)
        .map(|((x, y), value)| NamedEdge { tail: net.node(x).name.clone(), head: net.node(y).name.clone(), value })
        .collect()
}

fn named_values(net: &NetworkSpec, ids: &[usize], values: impl Fn(usize) -> f64) -> BTreeMap<String, f64> {
    ids.iter().map(|&i| (net.node(i).name.clone(), values(i))).collect()
}

#[derive(Serialize)]
struct AssumptionReport {
    name: String,
    beta: f64,
    holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    failing_alpha: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct CheckReport {
    config_hash: String,
    instance_hash: String,
    structure: &'static str,
    feasible: bool,
    slack: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    witness: Vec<NamedEdge>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    certificate: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    assumptions: Vec<AssumptionReport>,
}

pub fn check(ctx: &Ctx) -> Result<Outcome> {
    ctx.loaded.expect_mode(Mode::Check)?;
    let net = ctx.loaded.network()?;
    let mut report = CheckReport {
        config_hash: ctx.loaded.hash.clone(),
        instance_hash: net.instance_hash(),
        structure: if net.is_bipartite() { "bipartite" } else { "dag" },
        feasible: false,
        slack: 0.0,
        witness: vec![],
        certificate: BTreeMap::new(),
        assumptions: vec![],
    };
    if net.is_bipartite() {
        let v = check_bipartite_centralized(&net)?;
        report.feasible = v.is_feasible();
        report.slack = v.slack();
        match v {
            Verdict::Feasible { witness, .. } => report.witness = named_routing(&net, &witness),
            Verdict::Infeasible { certificate, .. } => {
                report.certificate = named_values(&net, &net.sources(), |i| certificate.values[i]);
            }
        }
    } else {
        let v = check_dag_flow(&net)?;
        report.feasible = v.is_feasible();
        report.slack = v.slack();
        if let Some(flow) = v.witness() {
            report.witness = named_routing(&net, &flow_to_edge(&net, flow)?);
        } else if let Verdict::Infeasible { certificate, .. } = check_dag_edge(&net)? {
            report.certificate = named_values(&net, &net.senders(), |i| certificate.values[i]);
        }
    }

    if let Some(cc) = &ctx.loaded.cfg.check {
        for &a in &cc.assumptions {
            let beta = cc.beta.context("assumption checks need `check.beta`")?;
            let (name, holds, failing_alpha) = match a {
                AssumptionName::Bipartite => {
                    let v = check_assumption_bipartite(&net, beta)?;
                    ("bipartite", v.holds, v.failing_alpha)
                }
                AssumptionName::Relaxed => ("relaxed", check_assumption_bipartite_relaxed(&net, beta)?, None),
                AssumptionName::Dag => ("dag", check_assumption_dag(&net, beta)?, None),
                AssumptionName::CbTighter => ("cb-tighter", check_cb_tighter(&net, beta)?, None),
                AssumptionName::HalfCapacity => {
                    let v = queuenet::patient::check_half_capacity_condition(&net)?;
                    ("half-capacity", v.holds, v.failing_alpha)
                }
            };
            report.assumptions.push(AssumptionReport { name: name.into(), beta, holds, failing_alpha });
        }
    }
    let path = ctx.write("check.toml", &toml::to_string(&report)?)?;
    println!(
        "{}: {} (slack {:.6}); report in {}",
        report.structure,
        if report.feasible { "feasible" } else { "infeasible" },
        report.slack,
        path.display()
    );
    for a in &report.assumptions {
        println!("  assumption {} at beta={}: {}", a.name, a.beta, if a.holds { "holds" } else { "fails" });
    }
    Ok(if report.feasible { Outcome::Positive } else { Outcome::Negative })
}

pub fn simulate(ctx: &Ctx) -> Result<Outcome> {
    ctx.loaded.expect_mode(Mode::Simulate)?;
    let net = ctx.loaded.network()?;
    let (horizon, window, stride) = ctx.loaded.horizon_window()?;
    let policy = ctx.loaded.policy(&net)?;
    let cfg = RunConfig::new(horizon, window).stride(stride);
    let seeds = ctx.loaded.seeds(ctx.seed, &[0]);

    let outputs = seeds
        .par_iter()
        .map(|&seed| run(&net, policy.clone(), &cfg, seed).map(|o| (seed, o)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = format!("# {}\n", ctx.manifest(&net, None));
    summary.push_str("seed,verdict,slope,max_q,median_q,block_ratio,mean_window_regret,coupling_violations\n");
    for (seed, out) in &outputs {
        ctx.write(
            &format!("simulate_seed{seed}.csv"),
            &frames_to_csv(&net, &out.frames, &ctx.manifest(&net, Some(*seed))),
        )?;
        let e = &out.estimate;
        let verdict = serde_plain(&e.verdict);
        let _ = writeln!(
            summary,
            "{seed},{verdict},{},{},{},{},{},{}",
            e.slope,
            e.max_q,
            e.median_q,
            e.block_ratio,
            out.mean_window_regret(),
            out.coupling_violations
        );
        println!("seed {seed}: {verdict} (slope {:.3e}, max Q {}, block ratio {:.3})", e.slope, e.max_q, e.block_ratio);
    }
    let path = ctx.write("summary.csv", &summary)?;
    println!("summary in {}", path.display());
    Ok(Outcome::Positive)
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    #[derive(Serialize)]
    struct Wrap<'a, T> {
        v: &'a T,
    }
    let s = toml::to_string(&Wrap { v }).expect("plain value serializes");
    s.trim().trim_start_matches("v = ").trim_matches('"').to_string()
}

fn profile_from(net: &NetworkSpec, map: &crate::config::ProfileMap) -> Result<StrategyProfile> {
    let probs = fixed_probs(net, map)?;
    let rows = net
        .sources()
        .into_iter()
        .map(|i| {
            let name = &net.node(i).name;
            let row = probs[i].as_ref().with_context(|| format!("profile has no entry for queue {name}"))?;
            if row[0] > 1e-12 {
                bail!("profile for queue {name} sums to {}, not 1", 1.0 - row[0]);
            }
            Ok(row[1..].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    for name in map.keys() {
        let x = net.lookup(name).expect("checked by fixed_probs");
        if !net.sources().contains(&x) {
            bail!("profile entry {name} is not a queue");
        }
    }
    let profile = StrategyProfile { probs: rows };
    // pin the sum exactly; small rounding in config files is forgiven
    let probs = profile
        .probs
        .into_iter()
        .map(|p| {
            let s: f64 = p.iter().sum();
            p.iter().map(|v| v / s).collect()
        })
        .collect();
    Ok(StrategyProfile { probs })
}

#[derive(Serialize)]
struct DeviationReport {
    queue: String,
    strategy: Vec<f64>,
    cost: f64,
    new_cost: f64,
}

#[derive(Serialize)]
struct PatientReport {
    config_hash: String,
    instance_hash: String,
    stable: bool,
    groups: Vec<Vec<String>>,
    f_values: Vec<f64>,
    rates: BTreeMap<String, f64>,
    nash_density: usize,
    nash_best_gain: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    nash_violation: Option<DeviationReport>,
}

pub fn patient(ctx: &Ctx) -> Result<Outcome> {
    ctx.loaded.expect_mode(Mode::Patient)?;
    let net = ctx.loaded.network()?;
    let pc = ctx.loaded.cfg.patient.as_ref().context("`[patient]` with a `profile` is required")?;
    let profile = profile_from(&net, &pc.profile)?;
    let costs = compute_costs(&net, &profile)?;
    let stable = check_stability_nash(&net, &profile)?;
    let nash = verify_nash(&net, &profile, pc.density)?;
    let sources = net.sources();
    let name = |i: usize| net.node(i).name.clone();
    let report = PatientReport {
        config_hash: ctx.loaded.hash.clone(),
        instance_hash: net.instance_hash(),
        stable,
        groups: costs.groups.iter().map(|g| g.iter().map(|&i| name(i)).collect()).collect(),
        f_values: costs.f_values.clone(),
        rates: sources.iter().zip(&costs.rates).map(|(&i, &r)| (name(i), r)).collect(),
        nash_density: pc.density,
        nash_best_gain: nash.best_gain,
        nash_violation: nash.violation.map(|d| DeviationReport {
            queue: name(d.queue),
            strategy: d.strategy,
            cost: d.cost,
            new_cost: d.new_cost,
        }),
    };
    let path = ctx.write("patient.toml", &toml::to_string(&report)?)?;
    println!("{} ; report in {}", if stable { "stable" } else { "unstable" }, path.display());
    for (q, r) in &report.rates {
        println!("  r({q}) = {r:.6}");
    }

    if ctx.verify_sim {
        let horizon = ctx.loaded.cfg.horizon.unwrap_or(pc.verify_horizon);
        let cfg = RunConfig::new(horizon, (horizon / 10).max(1));
        let policy = profile.policy(&net, Priority::OldestPacket, UtilityModel::Unit);
        let seeds = ctx.loaded.seeds(ctx.seed, &[0, 1, 2]);
        let rows = seeds
            .par_iter()
            .map(|&seed| {
                let out = run(&net, policy.clone(), &cfg, seed)?;
                let last = out.frames.last().expect("at least one frame");
                Ok(sources
                    .iter()
                    .zip(&costs.rates)
                    .map(|(&i, &r)| {
                        let empirical = last.age[i] as f64 / last.t as f64;
                        (seed, name(i), empirical, r, (empirical - r).abs())
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>, queuenet::sim::SimError>>()?;
        let mut csv = format!("# {}\nseed,queue,empirical,predicted,gap\n", ctx.manifest(&net, None));
        for (seed, q, e, r, gap) in rows.into_iter().flatten() {
            let _ = writeln!(csv, "{seed},{q},{e},{r},{gap}");
            println!("  seed {seed} {q}: T/t = {e:.4} vs r = {r:.4} (gap {gap:.4})");
        }
        ctx.write("patient_sim.csv", &csv)?;
    }
    Ok(if stable { Outcome::Positive } else { Outcome::Negative })
}

#[derive(Serialize)]
struct ComponentOut {
    prob: f64,
    edges: Vec<(String, String)>,
}

#[derive(Serialize)]
struct DistributionOut {
    config_hash: String,
    instance_hash: String,
    reconstruction_error: f64,
    components: Vec<ComponentOut>,
}

pub fn decompose(ctx: &Ctx) -> Result<Outcome> {
    ctx.loaded.expect_mode(Mode::Decompose)?;
    let net = ctx.loaded.network()?;
    let dc = ctx.loaded.cfg.decompose.as_ref().context("`[decompose]` with a `routing` file is required")?;
    let path = ctx.loaded.resolve(&dc.routing);
    let text = fs::read_to_string(&path).with_context(|| format!("reading routing {}", path.display()))?;
    let z = read_routing(&net, &text)?;
    let dist = decompose_paths(&net, &z)?;
    let name = |i: usize| net.node(i).name.clone();
    let out = DistributionOut {
        config_hash: ctx.loaded.hash.clone(),
        instance_hash: net.instance_hash(),
        reconstruction_error: dist.reconstruction_error(&z),
        components: dist
            .components
            .iter()
            .map(|c| ComponentOut { prob: c.prob, edges: c.edges.iter().map(|&(x, y)| (name(x), name(y))).collect() })
            .collect(),
    };
    let written = ctx.write("policy.toml", &toml::to_string(&out)?)?;
    println!(
        "{} components, reconstruction error {:.2e}; policy in {}",
        out.components.len(),
        out.reconstruction_error,
        written.display()
    );
    Ok(Outcome::Positive)
}

pub fn experiment(ctx: &Ctx) -> Result<Outcome> {
    ctx.loaded.expect_mode(Mode::Experiment)?;
    let ec = ctx.loaded.cfg.experiment.as_ref().context("`[experiment]` with `runs` is required")?;
    let mut worst = Outcome::Positive;
    let mut table = format!("# config_hash={}\nrun,mode,exit\n", ctx.loaded.hash);
    for p in &ec.runs {
        let path = ctx.loaded.resolve(p);
        let loaded = Loaded::read(&path)?;
        let mode = loaded.cfg.mode.with_context(|| format!("{} must declare `mode`", path.display()))?;
        let stem = path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
        let sub = Ctx { loaded, out: ctx.out.join(&stem), seed: ctx.seed, verify_sim: ctx.verify_sim };
        println!("== {stem} ({})", mode.name());
        let outcome = dispatch(&sub, mode)?;
        worst = worst.max(outcome);
        let _ = writeln!(table, "{stem},{},{}", mode.name(), outcome as i32);
    }
    ctx.write("experiment.csv", &table)?;
    Ok(worst)
}

pub fn dispatch(ctx: &Ctx, mode: Mode) -> Result<Outcome> {
    match mode {
        Mode::Check => check(ctx),
        Mode::Simulate => simulate(ctx),
        Mode::Patient => patient(ctx),
        Mode::Decompose => decompose(ctx),
        Mode::Experiment => bail!("experiments cannot nest"),
    }
}

/// Output directory: flag, then config, then the environment default.
pub fn out_dir(flag: Option<&Path>, loaded: &Loaded, env_default: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| loaded.cfg.out.as_ref().map(|p| loaded.resolve(p)))
        .or_else(|| env_default.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}
