//! Run and sweep configuration.
//!
//! Files are TOML unless the extension is `.json`. Every numeric field is
//! range-checked by [`RunConfig::validate`] before anything runs, and errors
//! name the offending key by its dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actor::{ActorConfig, DirectionSignal};
use crate::consensus::Topology;
use crate::critic::CriticConfig;
use crate::env::{GridEncoding, GridSpreadConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    GridSpread,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    pub kind: EnvKind,
    /// JSON tabular MDP, required when `kind = "tabular"`.
    pub tabular_path: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub episode_len: usize,
    pub reward_shift: bool,
    pub landmark_seed: Option<u64>,
    pub encoding: GridEncoding,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let g = GridSpreadConfig::default();
        Self {
            kind: EnvKind::GridSpread,
            tabular_path: None,
            width: g.width,
            height: g.height,
            n_agents: g.n_agents,
            episode_len: g.episode_len,
            reward_shift: g.reward_shift,
            landmark_seed: g.landmark_seed,
            encoding: g.encoding,
        }
    }
}

impl EnvironmentConfig {
    pub fn grid(&self) -> GridSpreadConfig {
        GridSpreadConfig {
            width: self.width,
            height: self.height,
            n_agents: self.n_agents,
            episode_len: self.episode_len,
            reward_shift: self.reward_shift,
            landmark_seed: self.landmark_seed,
            encoding: self.encoding,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden width `m`.
    pub width: usize,
    /// Hidden depth `D`.
    pub depth: usize,
    /// Projection radius `B`.
    pub radius: f64,
    /// Critic step size; `None` means `1 / sqrt(K)`.
    pub beta: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            width: 20,
            depth: 5,
            radius: 5.0,
            beta: Some(0.001),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticBlock {
    /// Critic iterations `K` per outer iteration.
    pub iterations: usize,
    /// Continue from the previous gossiped critic instead of `W(0)`.
    pub warm_start: bool,
    /// Run the pseudo-centralized reference critic for `K - 1` iterations.
    pub verbatim_offbyone: bool,
    /// Write one CSV row per critic iteration.
    pub log: bool,
}

impl Default for CriticBlock {
    fn default() -> Self {
        Self {
            iterations: 1,
            warm_start: false,
            verbatim_offbyone: false,
            log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusBlock {
    pub topology: Topology,
    pub t_gossip: usize,
    /// Optional CSV consensus matrix; must be valid for `topology`.
    pub matrix_file: Option<PathBuf>,
}

impl Default for ConsensusBlock {
    fn default() -> Self {
        Self {
            topology: Topology::Ring,
            t_gossip: 10,
            matrix_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gamma: f64,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub environment: EnvironmentConfig,
    pub network: NetworkConfig,
    pub actor: ActorConfig,
    pub critic: CriticBlock,
    pub consensus: ConsensusBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            seeds: vec![0],
            output_dir: None,
            environment: EnvironmentConfig::default(),
            network: NetworkConfig::default(),
            actor: ActorConfig::default(),
            critic: CriticBlock::default(),
            consensus: ConsensusBlock::default(),
        }
    }
}

/// Outer iterations used by `--paper-scale`.
pub const PAPER_ITERATIONS: usize = 20_000;
/// Replicas per sweep cell used by `--paper-scale`.
pub const PAPER_REPETITIONS: usize = 100;

fn parse_text<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Resolves `p` against the directory of `base_file` unless it is absolute.
fn resolve(base_file: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

impl RunConfig {
    /// Loads without validating; relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_text(path, &read(path)?)?;
        cfg.resolve_paths(path);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, file: &Path) {
        if let Some(p) = &self.environment.tabular_path {
            self.environment.tabular_path = Some(resolve(file, p));
        }
        if let Some(p) = &self.consensus.matrix_file {
            self.consensus.matrix_file = Some(resolve(file, p));
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    /// Critic step size after applying the `1 / sqrt(K)` default.
    pub fn beta(&self) -> f64 {
        self.network.beta.unwrap_or(1.0 / (self.critic.iterations.max(1) as f64).sqrt())
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            iterations: self.critic.iterations,
            beta: self.beta(),
            radius: self.network.radius,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        match self.environment.kind {
            EnvKind::GridSpread => self.environment.grid().validate()?,
            EnvKind::Tabular => {
                if self.environment.tabular_path.is_none() {
                    return Err(Error::config("environment.tabular_path", "required for tabular environments"));
                }
                if self.environment.episode_len == 0 {
                    return Err(Error::config("environment.episode_len", "must be at least 1"));
                }
            }
        }
        if self.network.width == 0 {
            return Err(Error::config("network.width", "must be at least 1"));
        }
        if self.network.depth == 0 {
            return Err(Error::config("network.depth", "must be at least 1"));
        }
        if let Some(b) = self.network.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::config("network.beta", format!("must be positive, got {b}")));
            }
        }
        if self.critic.iterations == 0 {
            return Err(Error::config("critic.iterations", "must be at least 1"));
        }
        if let Topology::Erdos(p) = self.consensus.topology {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config("consensus.topology", format!("edge probability must lie in (0, 1], got {p}")));
            }
        }
        self.critic_config().validate()?;
        self.actor.validate()
    }

    /// SHA-256 over the canonical JSON form (sorted keys) with `seeds` and
    /// `output_dir` cleared, so replicas of one setting share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        c.output_dir = None;
        let value = serde_json::to_value(&c).expect("run config serializes to JSON");
        let canonical = serde_json::to_string(&value).expect("JSON value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn apply_paper_scale(&mut self) {
        self.actor.iterations = PAPER_ITERATIONS;
    }
}

/// The six ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TGossip,
    Width,
    Depth,
    Agents,
    /// `(K, M)` pairs.
    BatchShape,
    Signal,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TGossip => "t_gossip",
            SweepAxis::Width => "width",
            SweepAxis::Depth => "depth",
            SweepAxis::Agents => "agents",
            SweepAxis::BatchShape => "batch_shape",
            SweepAxis::Signal => "signal",
        }
    }

    pub fn default_values(self) -> Vec<AxisValue> {
        use AxisValue::*;
        match self {
            SweepAxis::TGossip => vec![Int(0), Int(10), Int(20)],
            SweepAxis::Width => vec![Int(10), Int(20), Int(40)],
            SweepAxis::Depth => vec![Int(5), Int(20), Int(40)],
            SweepAxis::Agents => vec![Int(2), Int(3), Int(4)],
            SweepAxis::BatchShape => vec![Pair([1, 1]), Pair([1, 5]), Pair([5, 1])],
            SweepAxis::Signal => vec![Signal(DirectionSignal::TdError), Signal(DirectionSignal::QValue)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(usize),
    Pair([usize; 2]),
    Signal(DirectionSignal),
}

impl AxisValue {
    pub fn label(&self) -> String {
        match self {
            AxisValue::Int(v) => v.to_string(),
            AxisValue::Pair([k, m]) => format!("{k}x{m}"),
            AxisValue::Signal(DirectionSignal::TdError) => "td".into(),
            AxisValue::Signal(DirectionSignal::QValue) => "q".into(),
        }
    }

    /// Writes this value into `cfg` along `axis`.
    pub fn apply(&self, axis: SweepAxis, cfg: &mut RunConfig) -> Result<()> {
        let field = format!("sweep.values ({})", axis.name());
        match (axis, *self) {
            (SweepAxis::TGossip, AxisValue::Int(v)) => cfg.consensus.t_gossip = v,
            (SweepAxis::Width, AxisValue::Int(v)) => cfg.network.width = v,
            (SweepAxis::Depth, AxisValue::Int(v)) => cfg.network.depth = v,
            (SweepAxis::Agents, AxisValue::Int(v)) => cfg.environment.n_agents = v,
            (SweepAxis::BatchShape, AxisValue::Pair([k, m])) => {
                cfg.critic.iterations = k;
                cfg.actor.batch = m;
            }
            (SweepAxis::Signal, AxisValue::Signal(s)) => cfg.actor.direction_signal = s,
            (_, v) => return Err(Error::config(field, format!("{v:?} does not fit this axis"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Inline base configuration.
    #[serde(default)]
    pub base: Option<RunConfig>,
    /// Path to a base configuration, relative to the sweep file.
    #[serde(default)]
    pub base_config: Option<PathBuf>,
    pub axis: SweepAxis,
    /// Axis values; defaults to the axis's standard set.
    #[serde(default)]
    pub values: Option<Vec<AxisValue>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_repetitions() -> usize {
    20
}

/// One fully resolved sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub value: AxisValue,
    pub config: RunConfig,
}

/// A sweep with its base configuration resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSweep {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub values: Vec<AxisValue>,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<ResolvedSweep> {
        let spec: SweepSpec = parse_text(path, &read(path)?)?;
        let base = match (spec.base, &spec.base_config) {
            (Some(mut b), None) => {
                b.resolve_paths(path);
                b
            }
            (None, Some(p)) => RunConfig::load(&resolve(path, p))?,
            (None, None) => RunConfig::default(),
            (Some(_), Some(_)) => return Err(Error::config("sweep.base", "give either `base` or `base_config`, not both")),
        };
        Ok(ResolvedSweep {
            base,
            axis: spec.axis,
            values: spec.values.unwrap_or_else(|| spec.axis.default_values()),
            repetitions: spec.repetitions,
            master_seed: spec.master_seed,
        })
    }
}

impl ResolvedSweep {
    pub fn new(base: RunConfig, axis: SweepAxis, repetitions: usize, master_seed: u64) -> Self {
        Self {
            base,
            axis,
            values: axis.default_values(),
            repetitions,
            master_seed,
        }
    }

    /// Replica seeds shared by every cell, so cells are paired.
    pub fn seeds(&self) -> Vec<u64> {
        let stream = crate::seed::SeedStream::new(self.master_seed);
        (0..self.repetitions as u64).map(|r| stream.replica(r).master()).collect()
    }

    /// Validated cells; each differs from the base only along the axis.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        if self.repetitions == 0 {
            return Err(Error::config("sweep.repetitions", "must be at least 1"));
        }
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "no axis values"));
        }
        let seeds = self.seeds();
        self.values
            .iter()
            .map(|v| {
                let mut config = self.base.clone();
                v.apply(self.axis, &mut config)?;
                config.seeds = seeds.clone();
                config.validate()?;
                Ok(SweepCell { value: *v, config })
            })
            .collect()
    }
}

/// Dotted paths of the leaves that differ between two configs.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
        use serde_json::Value::Object;
        match (a, b) {
            (Object(x), Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    let null = serde_json::Value::Null;
                    walk(&p, x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), out);
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    let va = serde_json::to_value(a).expect("run config serializes");
    let vb = serde_json::to_value(b).expect("run config serializes");
    walk("", &va, &vb, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_roundtrips_toml() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_key_order_seeds_and_output() {
        let a: RunConfig = toml::from_str("gamma = 0.9\nseeds = [1]\n[network]\nwidth = 8\ndepth = 2\n").unwrap();
        let b: RunConfig = toml::from_str("[network]\ndepth = 2\nwidth = 8\n[actor]\n").unwrap();
        let mut b = b;
        b.gamma = 0.9;
        b.seeds = vec![5, 6];
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.network.width = 9;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn field_level_errors() {
        let c = RunConfig {
            gamma: -0.5,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "gamma"));
        let mut c = RunConfig::default();
        c.network.radius = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "network.radius"));
        let mut c = RunConfig::default();
        c.actor.batch = 0;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "actor.batch"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[network]\nwidht = 3\n").is_err());
    }

    #[test]
    fn beta_defaults_to_inverse_sqrt_k() {
        let mut c = RunConfig::default();
        c.network.beta = None;
        c.critic.iterations = 16;
        assert_eq!(c.beta(), 0.25);
    }

    #[test]
    fn sweep_cells_differ_only_on_axis() {
        for axis in [
            SweepAxis::TGossip,
            SweepAxis::Width,
            SweepAxis::Depth,
            SweepAxis::Agents,
            SweepAxis::BatchShape,
            SweepAxis::Signal,
        ] {
            let sweep = ResolvedSweep::new(RunConfig::default(), axis, 3, 0);
            let cells = sweep.cells().unwrap();
            assert_eq!(cells.len(), axis.default_values().len());
            let allowed: &[&str] = match axis {
                SweepAxis::TGossip => &["consensus.t_gossip"],
                SweepAxis::Width => &["network.width"],
                SweepAxis::Depth => &["network.depth"],
                SweepAxis::Agents => &["environment.n_agents"],
                SweepAxis::BatchShape => &["critic.iterations", "actor.batch"],
                SweepAxis::Signal => &["actor.direction_signal"],
            };
            for c in &cells {
                let mut base = sweep.base.clone();
                base.seeds = c.config.seeds.clone();
                for d in config_diff(&base, &c.config) {
                    assert!(allowed.contains(&d.as_str()), "{axis:?} changed {d}");
                }
            }
            for pair in cells.windows(2) {
                assert!(!config_diff(&pair[0].config, &pair[1].config).is_empty());
            }
        }
    }

    #[test]
    fn replica_seeds_are_stable_under_extension() {
        let a = ResolvedSweep::new(RunConfig::default(), SweepAxis::Signal, 3, 9).seeds();
        let b = ResolvedSweep::new(RunConfig::default(), SweepAxis::Signal, 5, 9).seeds();
        assert_eq!(a[..], b[..3]);
    }

    #[test]
    fn sweep_file_with_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(&p, "axis = \"batch_shape\"\nvalues = [[1, 1], [2, 3]]\nrepetitions = 2\n[base]\ngamma = 0.9\n").unwrap();
        let s = SweepSpec::load(&p).unwrap();
        assert_eq!(s.values, vec![AxisValue::Pair([1, 1]), AxisValue::Pair([2, 3])]);
        let cells = s.cells().unwrap();
        assert_eq!((cells[1].config.critic.iterations, cells[1].config.actor.batch), (2, 3));
        assert_eq!(cells[1].config.gamma, 0.9);
    }

    #[test]
    fn json_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"gamma": 0.5, "consensus": {"topology": {"erdos": 0.5}}}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.consensus.topology, Topology::Erdos(0.5));
        c.validate().unwrap();
    }
}
