use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use queuenet::fixtures;
use queuenet::learning::{Algorithm, RateSchedule};
use queuenet::network::{hash_text, NetworkSpec};
use queuenet::sim::{Policy, Priority, UtilityModel};
use queuenet::stability::{Component, FractionalRouting, PolicyDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Check,
    Simulate,
    Patient,
    Decompose,
    Experiment,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Check => "check",
            Mode::Simulate => "simulate",
            Mode::Patient => "patient",
            Mode::Decompose => "decompose",
            Mode::Experiment => "experiment",
        }
    }
}

/// node name → (target name → probability)
pub type ProfileMap = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub network: Option<PathBuf>,
    pub fixture: Option<String>,
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub horizon: Option<u64>,
    pub window: Option<u64>,
    pub stride: Option<u64>,
    pub out: Option<PathBuf>,
    pub policy: Option<PolicyConfig>,
    pub check: Option<CheckConfig>,
    pub patient: Option<PatientConfig>,
    pub decompose: Option<DecomposeConfig>,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Learners,
    Fixed,
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    #[default]
    Hedge,
    Exp3,
    Greedy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub algorithm: AlgorithmName,
    /// EXP3 uniform mixing.
    #[serde(default = "default_explore")]
    pub explore: f64,
    /// Constant learning rate; when absent an anytime schedule is used.
    pub eta: Option<f64>,
    #[serde(default = "default_anytime")]
    pub anytime: f64,
    #[serde(default = "default_priority")]
    pub priority: Priority,
    #[serde(default = "default_utility")]
    pub utility: UtilityModel,
    pub distribution: Option<PathBuf>,
    pub profile: Option<ProfileMap>,
    #[serde(default)]
    pub seed_offset: u64,
}

fn default_explore() -> f64 {
    0.05
}
fn default_anytime() -> f64 {
    1.0
}
fn default_priority() -> Priority {
    Priority::OldestPacket
}
fn default_utility() -> UtilityModel {
    UtilityModel::Unit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumptionName {
    Bipartite,
    Relaxed,
    Dag,
    CbTighter,
    HalfCapacity,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub beta: Option<f64>,
    #[serde(default)]
    pub assumptions: Vec<AssumptionName>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientConfig {
    pub profile: ProfileMap,
    #[serde(default = "default_density")]
    pub density: usize,
    #[serde(default = "default_verify_horizon")]
    pub verify_horizon: u64,
}

fn default_density() -> usize {
    21
}
fn default_verify_horizon() -> u64 {
    500_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub routing: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: Vec<PathBuf>,
}

/// A parsed config with its location and content hash.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: Config,
    pub dir: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Loaded> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { cfg, dir, hash: hash_text(&text) })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn expect_mode(&self, mode: Mode) -> Result<()> {
        match self.cfg.mode {
            Some(m) if m != mode => bail!("config declares mode {:?} but {:?} was requested", m.name(), mode.name()),
            _ => Ok(()),
        }
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        match (&self.cfg.network, &self.cfg.fixture) {
            (Some(p), None) => {
                let path = self.resolve(p);
                let text =
                    std::fs::read_to_string(&path).with_context(|| format!("reading network {}", path.display()))?;
                NetworkSpec::from_toml(&text).with_context(|| format!("loading network {}", path.display()))
            }
            (None, Some(name)) => fixtures::by_name(name)
                .with_context(|| format!("unknown fixture {name:?}; known: {}", fixtures::NAMES.join(", "))),
            _ => bail!("config needs exactly one of `network` or `fixture`"),
        }
    }

    pub fn seeds(&self, cli_seed: Option<u64>, default: &[u64]) -> Vec<u64> {
        match cli_seed {
            Some(s) => vec![s],
            None if self.cfg.seeds.is_empty() => default.to_vec(),
            None => self.cfg.seeds.clone(),
        }
    }

    pub fn horizon_window(&self) -> Result<(u64, u64, u64)> {
        let horizon = self.cfg.horizon.context("`horizon` is required")?;
        let window = self.cfg.window.context("`window` is required")?;
        if window == 0 || horizon < 10 * window {
            bail!("horizon {horizon} must be at least ten windows of {window}");
        }
        let stride = self.cfg.stride.unwrap_or(window);
        if stride == 0 {
            bail!("`stride` must be positive");
        }
        Ok((horizon, window, stride))
    }

    pub fn policy(&self, net: &NetworkSpec) -> Result<Policy> {
        let pc = self.cfg.policy.clone().context("`[policy]` is required")?;
        let policy = match pc.kind {
            PolicyKind::Learners => {
                let algorithm = match pc.algorithm {
                    AlgorithmName::Hedge => Algorithm::Hedge,
                    AlgorithmName::Exp3 => Algorithm::Exp3 { explore: pc.explore },
                    AlgorithmName::Greedy => Algorithm::Greedy,
                };
                let rate = pc.eta.map_or(RateSchedule::Anytime(pc.anytime), RateSchedule::Constant);
                Policy::learners(net, algorithm, rate, pc.priority, pc.utility)
            }
            PolicyKind::Fixed => {
                let map = pc.profile.as_ref().context("fixed policy needs `profile`")?;
                Policy::fixed(net, &fixed_probs(net, map)?, pc.priority, pc.utility)
            }
            PolicyKind::Centralized => {
                let p = pc.distribution.as_ref().context("centralized policy needs `distribution`")?;
                let path = self.resolve(p);
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading distribution {}", path.display()))?;
                Policy::centralized(read_distribution(net, &text)?, pc.priority, pc.utility)
            }
        };
        Ok(policy.with_seed_offset(pc.seed_offset))
    }
}

fn node_id(net: &NetworkSpec, name: &str) -> Result<usize> {
    net.lookup(name).with_context(|| format!("unknown node {name:?}"))
}

fn edge_ids(net: &NetworkSpec, tail: &str, head: &str) -> Result<(usize, usize)> {
    let (x, y) = (node_id(net, tail)?, node_id(net, head)?);
    if net.edge_index(x, y).is_none() {
        bail!("({tail}, {head}) is not an edge of the network");
    }
    Ok((x, y))
}

/// Per-node action distributions (idle first) from a name map; unlisted
/// nodes idle, and listed nodes idle with the leftover probability.
pub fn fixed_probs(net: &NetworkSpec, map: &ProfileMap) -> Result<Vec<Option<Vec<f64>>>> {
    let mut probs = vec![None; net.len()];
    for (name, targets) in map {
        let x = node_id(net, name)?;
        let out = net.out_neighbors(x);
        let mut row = vec![0.0; out.len() + 1];
        for (t, &p) in targets {
            let (_, y) = edge_ids(net, name, t)?;
            if !(0.0..=1.0).contains(&p) {
                bail!("probability {p} for ({name}, {t}) is outside [0, 1]");
            }
            row[out.iter().position(|&z| z == y).expect("edge") + 1] = p;
        }
        let sent: f64 = row.iter().sum();
        if sent > 1.0 + 1e-12 {
            bail!("probabilities at {name} sum to {sent}");
        }
        row[0] = (1.0 - sent).max(0.0);
        probs[x] = Some(row);
    }
    Ok(probs)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    prob: f64,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistribution {
    components: Vec<RawComponent>,
    // written alongside by `decompose`; informational on read
    #[allow(dead_code)]
    config_hash: Option<String>,
    #[allow(dead_code)]
    instance_hash: Option<String>,
    #[allow(dead_code)]
    reconstruction_error: Option<f64>,
}

pub fn read_distribution(net: &NetworkSpec, text: &str) -> Result<PolicyDistribution> {
    let raw: RawDistribution = toml::from_str(text).context("parsing policy distribution")?;
    let components = raw
        .components
        .into_iter()
        .map(|c| {
            let edges = c.edges.iter().map(|(a, b)| edge_ids(net, a, b)).collect::<Result<_>>()?;
            Ok(Component { edges, prob: c.prob })
        })
        .collect::<Result<Vec<_>>>()?;
    let dist = PolicyDistribution { components };
    if dist.components.iter().any(|c| c.prob < 0.0) || dist.total_prob() > 1.0 + 1e-9 {
        bail!("component probabilities must be nonnegative and sum to at most 1");
    }
    if !dist.all_disjoint() {
        bail!("every component must use distinct tails and distinct heads");
    }
    Ok(dist)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdgeValue {
    tail: String,
    head: String,
    value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRouting {
    edges: Vec<RawEdgeValue>,
}

pub fn read_routing(net: &NetworkSpec, text: &str) -> Result<FractionalRouting> {
    let raw: RawRouting = toml::from_str(text).context("parsing routing file")?;
    let mut z = FractionalRouting::new();
    for e in raw.edges {
        let (x, y) = edge_ids(net, &e.tail, &e.head)?;
        z.set(x, y, e.value);
    }
    Ok(z)
}
