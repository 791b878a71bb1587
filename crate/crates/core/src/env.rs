//! Multi-agent MDPs: the common interface, the restart-kernel wrapper, small
//! tabular MDPs used by the oracles, and the grid version of Simple Spread.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::one_hot_blocks;
use crate::seed::StreamRng;

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub next: S,
    /// Per-agent rewards fed to learning (non-negative after any shift).
    pub rewards: Vec<f64>,
    /// Reward in reporting units (for Simple Spread: the unshifted negative
    /// distance sum).
    pub raw_reward: f64,
}

/// A multi-agent MDP with a global state and per-agent local actions.
///
/// Agents see the full global state and joint action; `sa_features` and
/// `state_features` return unit-norm encodings for the critic and actor.
pub trait Mamdp {
    type State: Clone + PartialEq + std::fmt::Debug;

    fn n_agents(&self) -> usize;
    fn n_local_actions(&self, agent: usize) -> usize;
    /// The restart target `s0`.
    fn initial_state(&self) -> Self::State;
    fn step(&self, s: &Self::State, joint: &[usize], rng: &mut StreamRng) -> Result<Step<Self::State>>;
    /// Episode reset; may move `s0` (Simple Spread redraws agent positions).
    fn reset(&mut self, rng: &mut StreamRng) -> Self::State;

    fn sa_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn sa_features(&self, s: &Self::State, joint: &[usize]) -> DVector<f64>;
    fn state_features(&self, s: &Self::State) -> DVector<f64>;
    /// Upper bound on learning rewards.
    fn reward_max(&self) -> f64;

    fn check_joint(&self, joint: &[usize]) -> Result<()> {
        if joint.len() != self.n_agents() {
            return Err(Error::dim("joint action", self.n_agents(), joint.len()));
        }
        for (i, &a) in joint.iter().enumerate() {
            if a >= self.n_local_actions(i) {
                return Err(Error::Domain(format!(
                    "agent {i} action {a} out of range (has {} actions)",
                    self.n_local_actions(i)
                )));
            }
        }
        Ok(())
    }
}

/// Restart-kernel transition: the base transition is always drawn (so its
/// rewards are reported), then with probability `1 - gamma` the next state is
/// replaced by `s0`.
///
/// The uniform restart draw happens before the base step, so every call
/// consumes the same amount of randomness whatever the outcome.
pub fn restart_step<E: Mamdp + ?Sized>(
    base: &E,
    gamma: f64,
    s: &E::State,
    joint: &[usize],
    rng: &mut StreamRng,
) -> Result<(Step<E::State>, bool)> {
    let u: f64 = rng.random();
    let mut step = base.step(s, joint, rng)?;
    let restarted = u < 1.0 - gamma;
    if restarted {
        step.next = base.initial_state();
    }
    Ok((step, restarted))
}

/// Wraps any MAMDP with the restart kernel `gamma P + (1 - gamma) e_{s0}`.
#[derive(Debug, Clone)]
pub struct RestartKernel<E> {
    base: E,
    gamma: f64,
}

impl<E: Mamdp> RestartKernel<E> {
    pub fn new(base: E, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        Ok(Self { base, gamma })
    }
    pub fn base(&self) -> &E {
        &self.base
    }
    pub fn base_mut(&mut self) -> &mut E {
        &mut self.base
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl<E: Mamdp> Mamdp for RestartKernel<E> {
    type State = E::State;

    fn n_agents(&self) -> usize {
        self.base.n_agents()
    }
    fn n_local_actions(&self, agent: usize) -> usize {
        self.base.n_local_actions(agent)
    }
    fn initial_state(&self) -> Self::State {
        self.base.initial_state()
    }
    fn step(&self, s: &Self::State, joint: &[usize], rng: &mut StreamRng) -> Result<Step<Self::State>> {
        Ok(restart_step(&self.base, self.gamma, s, joint, rng)?.0)
    }
    fn reset(&mut self, rng: &mut StreamRng) -> Self::State {
        self.base.reset(rng)
    }
    fn sa_dim(&self) -> usize {
        self.base.sa_dim()
    }
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }
    fn sa_features(&self, s: &Self::State, joint: &[usize]) -> DVector<f64> {
        self.base.sa_features(s, joint)
    }
    fn state_features(&self, s: &Self::State) -> DVector<f64> {
        self.base.state_features(s)
    }
    fn reward_max(&self) -> f64 {
        self.base.reward_max()
    }
}

/// Draws an index from a probability vector by inverse CDF.
pub fn sample_categorical(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair under 1; fall back to the last supported entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

// ---------------------------------------------------------------------------
// Tabular MDPs
// ---------------------------------------------------------------------------

/// Joint actions are indexed in mixed radix with agent 0 most significant.
pub fn joint_index(joint: &[usize], counts: &[usize]) -> usize {
    joint.iter().zip(counts).fold(0, |acc, (&a, &n)| acc * n + a)
}

pub fn joint_from_index(mut idx: usize, counts: &[usize]) -> Vec<usize> {
    let mut out = vec![0; counts.len()];
    for i in (0..counts.len()).rev() {
        out[i] = idx % counts[i];
        idx /= counts[i];
    }
    out
}

/// On-disk layout of a tabular MDP.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TabularMdpFile {
    /// Local action count per agent.
    pub action_counts: Vec<usize>,
    pub gamma: f64,
    pub initial_state: usize,
    /// `transitions[s][a][s']` over joint actions `a`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[i][s][a]`, one table per agent.
    pub rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ergodicity {
    pub irreducible: bool,
    pub aperiodic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    action_counts: Vec<usize>,
    n_joint: usize,
    /// Flattened `P[(s * n_joint + a) * n_states + s']`.
    transitions: Vec<f64>,
    /// Per agent, flattened `r[s * n_joint + a]`.
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    s0: usize,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        action_counts: Vec<usize>,
        transitions: Vec<f64>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
        s0: usize,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::config("mdp.n_states", "must be at least 1"));
        }
        if action_counts.is_empty() || action_counts.contains(&0) {
            return Err(Error::config("mdp.action_counts", "every agent needs at least one action"));
        }
        let n_joint: usize = action_counts.iter().product();
        if transitions.len() != n_states * n_joint * n_states {
            return Err(Error::dim("mdp.transitions", n_states * n_joint * n_states, transitions.len()));
        }
        if rewards.len() != action_counts.len() {
            return Err(Error::dim("mdp.rewards agents", action_counts.len(), rewards.len()));
        }
        for r in &rewards {
            if r.len() != n_states * n_joint {
                return Err(Error::dim("mdp.rewards table", n_states * n_joint, r.len()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("mdp.rewards", "rewards must be finite"));
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("mdp.gamma", format!("must lie in [0, 1), got {gamma}")));
        }
        if s0 >= n_states {
            return Err(Error::config("mdp.initial_state", format!("{s0} out of range")));
        }
        for (row_idx, row) in transitions.chunks_exact(n_states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::config("mdp.transitions", format!("row {row_idx} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::config(
                    "mdp.transitions",
                    format!("row (s={}, a={}) sums to {sum}", row_idx / n_joint, row_idx % n_joint),
                ));
            }
        }
        Ok(Self {
            n_states,
            action_counts,
            n_joint,
            transitions,
            rewards,
            gamma,
            s0,
        })
    }

    pub fn from_file_repr(f: TabularMdpFile) -> Result<Self> {
        let n_states = f.transitions.len();
        let n_joint: usize = f.action_counts.iter().product();
        let mut flat = Vec::with_capacity(n_states * n_joint * n_states);
        for (s, per_a) in f.transitions.iter().enumerate() {
            if per_a.len() != n_joint {
                return Err(Error::dim("mdp.transitions[s]", n_joint, format!("{} at s={s}", per_a.len())));
            }
            for row in per_a {
                if row.len() != n_states {
                    return Err(Error::dim("mdp.transitions[s][a]", n_states, row.len()));
                }
                flat.extend_from_slice(row);
            }
        }
        let mut rewards = Vec::with_capacity(f.rewards.len());
        for table in &f.rewards {
            if table.len() != n_states {
                return Err(Error::dim("mdp.rewards[i]", n_states, table.len()));
            }
            let mut r = Vec::with_capacity(n_states * n_joint);
            for row in table {
                if row.len() != n_joint {
                    return Err(Error::dim("mdp.rewards[i][s]", n_joint, row.len()));
                }
                r.extend_from_slice(row);
            }
            rewards.push(r);
        }
        Self::new(n_states, f.action_counts, flat, rewards, f.gamma, f.initial_state)
    }

    pub fn to_file_repr(&self) -> TabularMdpFile {
        let ns = self.n_states;
        let na = self.n_joint;
        TabularMdpFile {
            action_counts: self.action_counts.clone(),
            gamma: self.gamma,
            initial_state: self.s0,
            transitions: (0..ns)
                .map(|s| (0..na).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            rewards: self
                .rewards
                .iter()
                .map(|r| (0..ns).map(|s| r[s * na..(s + 1) * na].to_vec()).collect())
                .collect(),
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: TabularMdpFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file_repr(f)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_repr()).expect("serializable");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_joint_actions(&self) -> usize {
        self.n_joint
    }
    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn s0(&self) -> usize {
        self.s0
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_joint + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.rewards[agent][s * self.n_joint + a]
    }

    /// Agent-averaged reward `r_bar(s, a)`.
    pub fn mean_reward(&self, s: usize, a: usize) -> f64 {
        let n = self.rewards.len() as f64;
        self.rewards.iter().map(|r| r[s * self.n_joint + a]).sum::<f64>() / n
    }

    /// Same MDP with every reward table multiplied by `k`.
    pub fn scale_rewards(&self, k: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rewards {
            r.iter_mut().for_each(|v| *v *= k);
        }
        out
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config("mdp.gamma", format!("must lie in [0, 1), got {gamma}")));
        }
        let mut out = self.clone();
        out.gamma = gamma;
        Ok(out)
    }

    /// The tabular restart kernel `gamma P(s, a, .) + (1 - gamma) e_{s0}`.
    pub fn with_restart(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 1), got {gamma}")));
        }
        let mut out = self.clone();
        for row in out.transitions.chunks_exact_mut(self.n_states) {
            for (sp, p) in row.iter_mut().enumerate() {
                *p = gamma * *p + if sp == self.s0 { 1.0 - gamma } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Irreducibility and aperiodicity of the support graph (an edge `s -> s'`
    /// whenever some joint action moves there with positive probability), i.e.
    /// of the chain under any full-support policy.
    pub fn ergodicity(&self) -> Ergodicity {
        let n = self.n_states;
        let succ: Vec<Vec<usize>> = (0..n)
            .map(|s| {
                (0..n)
                    .filter(|&sp| (0..self.n_joint).any(|a| self.transition_row(s, a)[sp] > 0.0))
                    .collect()
            })
            .collect();
        let bfs = |adj: &dyn Fn(usize) -> Vec<usize>| {
            let mut level = vec![usize::MAX; n];
            level[0] = 0;
            let mut q = VecDeque::from([0]);
            while let Some(u) = q.pop_front() {
                for v in adj(u) {
                    if level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            level
        };
        let fwd = bfs(&|u| succ[u].clone());
        let rev = bfs(&|u| (0..n).filter(|&v| succ[v].contains(&u)).collect());
        let irreducible = fwd.iter().chain(rev.iter()).all(|&l| l != usize::MAX);
        let mut period = 0usize;
        if irreducible {
            for u in 0..n {
                for &v in &succ[u] {
                    let diff = (fwd[u] + 1).abs_diff(fwd[v]);
                    period = gcd(period, diff);
                }
            }
        }
        Ergodicity {
            irreducible,
            aperiodic: irreducible && period == 1,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Mamdp for TabularMdp {
    type State = usize;

    fn n_agents(&self) -> usize {
        self.action_counts.len()
    }
    fn n_local_actions(&self, agent: usize) -> usize {
        self.action_counts[agent]
    }
    fn initial_state(&self) -> usize {
        self.s0
    }
    fn step(&self, s: &usize, joint: &[usize], rng: &mut StreamRng) -> Result<Step<usize>> {
        self.check_joint(joint)?;
        if *s >= self.n_states {
            return Err(Error::Domain(format!("state {s} out of range")));
        }
        let a = joint_index(joint, &self.action_counts);
        let next = sample_categorical(self.transition_row(*s, a), rng);
        let rewards: Vec<f64> = self.rewards.iter().map(|r| r[s * self.n_joint + a]).collect();
        let raw_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        Ok(Step {
            next,
            rewards,
            raw_reward,
        })
    }
    fn reset(&mut self, _rng: &mut StreamRng) -> usize {
        self.s0
    }
    fn sa_dim(&self) -> usize {
        self.n_states + self.n_joint
    }
    fn state_dim(&self) -> usize {
        self.n_states
    }
    fn sa_features(&self, s: &usize, joint: &[usize]) -> DVector<f64> {
        one_hot_blocks(&[(*s, self.n_states), (joint_index(joint, &self.action_counts), self.n_joint)])
    }
    fn state_features(&self, s: &usize) -> DVector<f64> {
        one_hot_blocks(&[(*s, self.n_states)])
    }
    fn reward_max(&self) -> f64 {
        self.rewards
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Grid Simple Spread
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

    pub fn from_index(i: usize) -> Result<Move> {
        Move::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Domain(format!("invalid move index {i} (expected 0..5)")))
    }

    fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, 1),
            Move::Down => (0, -1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
            Move::Stay => (0, 0),
        }
    }
}

/// How Simple Spread states and joint actions are fed to the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridEncoding {
    /// One one-hot block per agent position (and per agent move for the
    /// critic), scaled to unit norm. Input size grows linearly in `N`.
    #[default]
    Factored,
    /// One one-hot over the global state index and one over the joint-action
    /// index. Input size grows as `cells^N`.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpreadConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    /// Outer iterations between random resets.
    pub episode_len: usize,
    /// Feed `raw + r_max` (in `[0, r_max]`) to learning instead of the raw
    /// negative reward.
    pub reward_shift: bool,
    /// Landmark placement seed; `None` derives it from the run seed.
    pub landmark_seed: Option<u64>,
    pub encoding: GridEncoding,
}

impl Default for GridSpreadConfig {
    fn default() -> Self {
        Self {
            width: 13,
            height: 5,
            n_agents: 2,
            episode_len: 10,
            reward_shift: true,
            landmark_seed: None,
            encoding: GridEncoding::Factored,
        }
    }
}

/// Largest global input we are willing to materialise for the global encoding.
const MAX_GLOBAL_INPUT_DIM: usize = 1 << 20;

impl GridSpreadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("environment.width", "board dimensions must be positive"));
        }
        if self.n_agents == 0 {
            return Err(Error::config("environment.n_agents", "must be at least 1"));
        }
        if self.n_agents > self.width * self.height {
            return Err(Error::config("environment.n_agents", "more landmarks than cells"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("environment.episode_len", "must be at least 1"));
        }
        if self.encoding == GridEncoding::Global {
            let cells = self.width * self.height;
            let dim = cells
                .checked_pow(self.n_agents as u32)
                .and_then(|s| s.checked_add(5usize.pow(self.n_agents as u32)));
            if dim.is_none_or(|d| d > MAX_GLOBAL_INPUT_DIM) {
                return Err(Error::config(
                    "environment.encoding",
                    format!("global encoding for {} agents exceeds {MAX_GLOBAL_INPUT_DIM} inputs", self.n_agents),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub agents: Vec<(i32, i32)>,
}

#[derive(Debug, Clone)]
pub struct GridSpread {
    cfg: GridSpreadConfig,
    landmarks: Vec<(i32, i32)>,
    s0: GridState,
}

pub fn l1(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

impl GridSpread {
    /// Landmarks are placed at distinct cells drawn with `landmark_rng`.
    pub fn new(cfg: GridSpreadConfig, landmark_rng: &mut StreamRng) -> Result<Self> {
        cfg.validate()?;
        let cells = cfg.width * cfg.height;
        let landmarks = sample(landmark_rng, cells, cfg.n_agents)
            .into_iter()
            .map(|c| ((c % cfg.width) as i32, (c / cfg.width) as i32))
            .collect();
        Self::with_landmarks(cfg, landmarks)
    }

    pub fn with_landmarks(cfg: GridSpreadConfig, landmarks: Vec<(i32, i32)>) -> Result<Self> {
        cfg.validate()?;
        if landmarks.len() != cfg.n_agents {
            return Err(Error::dim("landmarks", cfg.n_agents, landmarks.len()));
        }
        let s0 = GridState {
            agents: vec![(0, 0); cfg.n_agents],
        };
        let env = Self { cfg, landmarks, s0 };
        for &l in &env.landmarks {
            if !env.in_bounds(l) {
                return Err(Error::config("environment.landmarks", format!("{l:?} is off the board")));
            }
        }
        Ok(env)
    }

    pub fn config(&self) -> &GridSpreadConfig {
        &self.cfg
    }
    pub fn landmarks(&self) -> &[(i32, i32)] {
        &self.landmarks
    }

    fn in_bounds(&self, p: (i32, i32)) -> bool {
        p.0 >= 0 && p.1 >= 0 && (p.0 as usize) < self.cfg.width && (p.1 as usize) < self.cfg.height
    }

    fn cell(&self, p: (i32, i32)) -> usize {
        p.1 as usize * self.cfg.width + p.0 as usize
    }

    fn cells(&self) -> usize {
        self.cfg.width * self.cfg.height
    }

    /// `(width - 1 + height - 1) * N`: the largest possible distance sum.
    pub fn max_l1_sum(&self) -> f64 {
        ((self.cfg.width - 1 + self.cfg.height - 1) * self.cfg.n_agents) as f64
    }

    /// `-sum_l min_i ||landmark_l - agent_i||_1`.
    pub fn raw_reward(&self, s: &GridState) -> f64 {
        -self
            .landmarks
            .iter()
            .map(|&l| s.agents.iter().map(|&a| l1(l, a)).min().unwrap_or(0))
            .sum::<i32>() as f64
    }

    pub fn shaped_reward(&self, raw: f64) -> f64 {
        if self.cfg.reward_shift {
            raw + self.max_l1_sum()
        } else {
            raw
        }
    }

    /// Uniform random agent positions; landmarks are untouched.
    pub fn random_state(&self, rng: &mut StreamRng) -> GridState {
        GridState {
            agents: (0..self.cfg.n_agents)
                .map(|_| {
                    (
                        rng.random_range(0..self.cfg.width) as i32,
                        rng.random_range(0..self.cfg.height) as i32,
                    )
                })
                .collect(),
        }
    }

    pub fn set_initial_state(&mut self, s: GridState) {
        self.s0 = s;
    }

    pub fn validate_state(&self, s: &GridState) -> Result<()> {
        if s.agents.len() != self.cfg.n_agents {
            return Err(Error::dim("grid state agents", self.cfg.n_agents, s.agents.len()));
        }
        if let Some(p) = s.agents.iter().find(|p| !self.in_bounds(**p)) {
            return Err(Error::Domain(format!("agent position {p:?} off the board")));
        }
        Ok(())
    }

    /// Moves every agent at most one cell (clipped at the edges) and returns
    /// the shared reward of the resulting configuration.
    pub fn grid_step(&self, s: &GridState, joint: &[usize]) -> Result<Step<GridState>> {
        self.validate_state(s)?;
        if joint.len() != self.cfg.n_agents {
            return Err(Error::dim("joint action", self.cfg.n_agents, joint.len()));
        }
        let mut agents = Vec::with_capacity(joint.len());
        for (&p, &a) in s.agents.iter().zip(joint) {
            let (dx, dy) = Move::from_index(a)?.delta();
            let x = (p.0 + dx).clamp(0, self.cfg.width as i32 - 1);
            let y = (p.1 + dy).clamp(0, self.cfg.height as i32 - 1);
            agents.push((x, y));
        }
        let next = GridState { agents };
        let raw = self.raw_reward(&next);
        let shaped = self.shaped_reward(raw);
        Ok(Step {
            next,
            rewards: vec![shaped; self.cfg.n_agents],
            raw_reward: raw,
        })
    }

    pub fn global_state_index(&self, s: &GridState) -> usize {
        s.agents.iter().fold(0, |acc, &p| acc * self.cells() + self.cell(p))
    }
}

impl Mamdp for GridSpread {
    type State = GridState;

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }
    fn n_local_actions(&self, _agent: usize) -> usize {
        Move::ALL.len()
    }
    fn initial_state(&self) -> GridState {
        self.s0.clone()
    }
    fn step(&self, s: &GridState, joint: &[usize], _rng: &mut StreamRng) -> Result<Step<GridState>> {
        self.grid_step(s, joint)
    }
    fn reset(&mut self, rng: &mut StreamRng) -> GridState {
        let s = self.random_state(rng);
        self.s0 = s.clone();
        s
    }
    fn sa_dim(&self) -> usize {
        let n = self.cfg.n_agents as u32;
        match self.cfg.encoding {
            GridEncoding::Factored => self.cfg.n_agents * (self.cells() + Move::ALL.len()),
            GridEncoding::Global => self.cells().pow(n) + Move::ALL.len().pow(n),
        }
    }
    fn state_dim(&self) -> usize {
        match self.cfg.encoding {
            GridEncoding::Factored => self.cfg.n_agents * self.cells(),
            GridEncoding::Global => self.cells().pow(self.cfg.n_agents as u32),
        }
    }
    fn sa_features(&self, s: &GridState, joint: &[usize]) -> DVector<f64> {
        let cells = self.cells();
        match self.cfg.encoding {
            GridEncoding::Factored => {
                let mut blocks: Vec<(usize, usize)> = s.agents.iter().map(|&p| (self.cell(p), cells)).collect();
                blocks.extend(joint.iter().map(|&a| (a, Move::ALL.len())));
                one_hot_blocks(&blocks)
            }
            GridEncoding::Global => {
                let counts = vec![Move::ALL.len(); self.cfg.n_agents];
                one_hot_blocks(&[
                    (self.global_state_index(s), cells.pow(self.cfg.n_agents as u32)),
                    (joint_index(joint, &counts), Move::ALL.len().pow(self.cfg.n_agents as u32)),
                ])
            }
        }
    }
    fn state_features(&self, s: &GridState) -> DVector<f64> {
        let cells = self.cells();
        match self.cfg.encoding {
            GridEncoding::Factored => {
                let blocks: Vec<(usize, usize)> = s.agents.iter().map(|&p| (self.cell(p), cells)).collect();
                one_hot_blocks(&blocks)
            }
            GridEncoding::Global => {
                one_hot_blocks(&[(self.global_state_index(s), cells.pow(self.cfg.n_agents as u32))])
            }
        }
    }
    fn reward_max(&self) -> f64 {
        if self.cfg.reward_shift {
            self.max_l1_sum()
        } else {
            0.0
        }
    }
}
