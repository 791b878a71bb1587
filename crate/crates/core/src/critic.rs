//! Projected neural TD critics.
//!
//! [`run_decentralized_critic`] runs one TD learner per agent on a shared
//! trajectory (each agent sees its own reward), keeps iterate averages and
//! gossips them at the end. [`run_centralized_critic`] is the single-learner
//! reference on the agent-averaged reward. TD errors are written estimate
//! minus target: `delta = Q(x) - r - gamma Q(x')`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{disagreement, gossip, ConsensusMatrix};
use crate::env::{Mamdp, TabularMdp};
use crate::error::{Error, Result};
use crate::nn::{flatten_stack, project_ball, FcNet, HiddenStack};
use crate::oracle::{mean_rewards, stationary_distribution};
use crate::policy::{Policy, PolicyTable};
use crate::seed::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// TD iterations `K`.
    pub iterations: usize,
    /// Step size `beta`.
    pub beta: f64,
    /// Projection radius `B`.
    pub radius: f64,
    pub gamma: f64,
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("critic.iterations", "must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("network.beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config("network.radius", format!("must be positive, got {}", self.radius)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// `Q(x) - r - gamma Q(x')` for the value head.
pub fn td_error(net: &FcNet, x: &DVector<f64>, r: f64, gamma: f64, x_next: &DVector<f64>) -> Result<f64> {
    Ok(net.value(x)? - r - gamma * net.value(x_next)?)
}

/// One critic iteration as seen by the per-run critic log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticStepRecord {
    pub k: usize,
    /// Squared TD error per agent.
    pub td_loss: Vec<f64>,
    /// Whether the projection was active for each agent.
    pub boundary_hit: Vec<bool>,
    /// Disagreement of the current iterates across agents.
    pub param_disagreement: f64,
}

#[derive(Debug, Clone)]
pub struct DecentralizedOutput<S> {
    /// Gossiped running averages, one flattened row per agent.
    pub gossiped: DMatrix<f64>,
    /// Running averages before gossip.
    pub averages: DMatrix<f64>,
    /// State `s_{K-1}`.
    pub last_state: S,
    pub records: Vec<CriticStepRecord>,
}

#[derive(Debug, Clone)]
pub struct CentralizedOutput<S> {
    /// Running average, flattened.
    pub average: Vec<f64>,
    pub last_state: S,
    pub records: Vec<CriticStepRecord>,
}

/// One agent's learner: current iterate and running average.
struct Learner {
    net: FcNet,
    average: HiddenStack,
}

impl Learner {
    fn new(net: &FcNet) -> Self {
        Self {
            average: net.hidden().clone(),
            net: net.clone(),
        }
    }

    /// Semi-gradient step, projection, average update. Returns the squared
    /// TD error and whether the projection moved the iterate.
    fn update(&mut self, k: usize, x: &DVector<f64>, r: f64, x_next: &DVector<f64>, cfg: &CriticConfig) -> Result<(f64, bool)> {
        let trace = self.net.trace(x)?;
        let q_next = self.net.value(x_next)?;
        let delta = trace.output[0] - r - cfg.gamma * q_next;
        if !delta.is_finite() {
            return Err(Error::Domain(format!("non-finite TD error at critic iteration {k}")));
        }
        let mut e0 = DVector::zeros(self.net.head_rows());
        e0[0] = 1.0;
        let grad = self.net.vjp(&trace, &e0)?;
        let stepped: HiddenStack = self
            .net
            .hidden()
            .iter()
            .zip(&grad.layers)
            .map(|(w, g)| w - g * (cfg.beta * delta))
            .collect();
        if stepped.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain(format!("non-finite critic parameters at critic iteration {k}")));
        }
        let projected = project_ball(&stepped, self.net.init_hidden(), cfg.radius)?;
        let hit = projected != stepped;
        let (a, b) = ((k + 1) as f64 / (k + 2) as f64, 1.0 / (k + 2) as f64);
        for (avg, w) in self.average.iter_mut().zip(&projected) {
            *avg = &*avg * a + w * b;
        }
        self.net.set_hidden(projected)?;
        Ok((delta * delta, hit))
    }
}

fn check_nets(nets: &[FcNet]) -> Result<()> {
    let first = nets.first().ok_or_else(|| Error::config("critic", "no critic networks"))?;
    for n in nets {
        if (n.width(), n.depth(), n.input_dim()) != (first.width(), first.depth(), first.input_dim()) {
            return Err(Error::dim(
                "critic network shapes",
                format!("{}x{}x{}", first.width(), first.depth(), first.input_dim()),
                format!("{}x{}x{}", n.width(), n.depth(), n.input_dim()),
            ));
        }
    }
    Ok(())
}

fn stack_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// Shared-trajectory driver: samples `(s_k, a_k, r_{k+1}, s_{k+1}, a_{k+1})`
/// for `iterations` steps and hands each tuple to `visit`.
fn drive<E, P, F>(env: &E, policy: &P, start: &E::State, iterations: usize, rng: &mut StreamRng, mut visit: F) -> Result<E::State>
where
    E: Mamdp + ?Sized,
    P: Policy<E> + ?Sized,
    F: FnMut(usize, &DVector<f64>, &[f64], &DVector<f64>) -> Result<()>,
{
    let mut s = start.clone();
    let mut a = policy.sample_joint(env, &s, rng)?;
    let mut last = s.clone();
    for k in 0..iterations {
        let step = env.step(&s, &a, rng)?;
        let a_next = policy.sample_joint(env, &step.next, rng)?;
        let x = env.sa_features(&s, &a);
        let x_next = env.sa_features(&step.next, &a_next);
        visit(k, &x, &step.rewards, &x_next)?;
        last = s;
        s = step.next;
        a = a_next;
    }
    Ok(last)
}

/// Decentralized projected TD with iterate averaging and terminal gossip.
///
/// Each agent starts from its network's current hidden stack and projects
/// onto the ball around the network's `W(0)`. `observe(k, agent, W)` sees
/// every post-projection iterate.
#[allow(clippy::too_many_arguments)]
pub fn run_decentralized_critic_observed<E, P>(
    env: &E,
    policy: &P,
    nets: &[FcNet],
    start: &E::State,
    cfg: &CriticConfig,
    consensus: &ConsensusMatrix,
    t_gossip: usize,
    rng: &mut StreamRng,
    observe: &mut dyn FnMut(usize, usize, &HiddenStack),
) -> Result<DecentralizedOutput<E::State>>
where
    E: Mamdp + ?Sized,
    P: Policy<E> + ?Sized,
{
    cfg.validate()?;
    check_nets(nets)?;
    if nets.len() != env.n_agents() || consensus.n() != env.n_agents() {
        return Err(Error::dim("critic agents", env.n_agents(), format!("{} nets, {}x{} matrix", nets.len(), consensus.n(), consensus.n())));
    }
    let mut learners: Vec<Learner> = nets.iter().map(Learner::new).collect();
    let mut records = Vec::with_capacity(cfg.iterations);
    let last_state = drive(env, policy, start, cfg.iterations, rng, |k, x, rewards, x_next| {
        let mut td_loss = Vec::with_capacity(learners.len());
        let mut boundary_hit = Vec::with_capacity(learners.len());
        for (i, l) in learners.iter_mut().enumerate() {
            let (loss, hit) = l.update(k, x, rewards[i], x_next, cfg)?;
            observe(k, i, l.net.hidden());
            td_loss.push(loss);
            boundary_hit.push(hit);
        }
        let current: Vec<Vec<f64>> = learners.iter().map(|l| flatten_stack(l.net.hidden())).collect();
        records.push(CriticStepRecord {
            k,
            td_loss,
            boundary_hit,
            param_disagreement: disagreement(&stack_rows(&current)),
        });
        Ok(())
    })?;
    let averages = stack_rows(&learners.iter().map(|l| flatten_stack(&l.average)).collect::<Vec<_>>());
    let gossiped = gossip(consensus, &averages, t_gossip)?;
    Ok(DecentralizedOutput {
        gossiped,
        averages,
        last_state,
        records,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run_decentralized_critic<E, P>(
    env: &E,
    policy: &P,
    nets: &[FcNet],
    start: &E::State,
    cfg: &CriticConfig,
    consensus: &ConsensusMatrix,
    t_gossip: usize,
    rng: &mut StreamRng,
) -> Result<DecentralizedOutput<E::State>>
where
    E: Mamdp + ?Sized,
    P: Policy<E> + ?Sized,
{
    run_decentralized_critic_observed(env, policy, nets, start, cfg, consensus, t_gossip, rng, &mut |_, _, _| {})
}

/// Single learner on the averaged reward `r_bar`. Runs `cfg.iterations`
/// steps, or one fewer when `verbatim_offbyone` is set.
pub fn run_centralized_critic<E, P>(
    env: &E,
    policy: &P,
    net: &FcNet,
    start: &E::State,
    cfg: &CriticConfig,
    verbatim_offbyone: bool,
    rng: &mut StreamRng,
) -> Result<CentralizedOutput<E::State>>
where
    E: Mamdp + ?Sized,
    P: Policy<E> + ?Sized,
{
    cfg.validate()?;
    let iterations = if verbatim_offbyone { cfg.iterations - 1 } else { cfg.iterations };
    let mut learner = Learner::new(net);
    let mut records = Vec::with_capacity(iterations);
    let last_state = drive(env, policy, start, iterations, rng, |k, x, rewards, x_next| {
        let r_bar = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let (loss, hit) = learner.update(k, x, r_bar, x_next, cfg)?;
        records.push(CriticStepRecord {
            k,
            td_loss: vec![loss],
            boundary_hit: vec![hit],
            param_disagreement: 0.0,
        });
        Ok(())
    })?;
    Ok(CentralizedOutput {
        average: flatten_stack(&learner.average),
        last_state,
        records,
    })
}

/// Exact mean-squared Bellman error of `q_hat` on the chain driven by `mdp`'s
/// kernel, weighted by its stationary state-action distribution. Pass the
/// restart-kernel MDP to measure the error the sampled critic is driven by.
pub fn msbe<F>(q_hat: F, mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<f64>
where
    F: Fn(usize, usize) -> Result<f64>,
{
    let (residual, weights) = bellman_residual(&q_hat, mdp, pi, gamma)?;
    Ok(residual.iter().zip(weights.iter()).map(|(e, w)| w * e * e).sum())
}

/// `(Q - T Q, d)` with `d(s, a) = nu(s) pi(a|s)`.
fn bellman_residual<F>(q_hat: &F, mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: Fn(usize, usize) -> Result<f64>,
{
    let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
    let nu = stationary_distribution(mdp, pi)?;
    let mut q = DVector::zeros(ns * na);
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = q_hat(s, a)?;
        }
    }
    let v: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| pi.joint_prob(s, a) * q[s * na + a]).sum()).collect();
    let r = mean_rewards(mdp);
    let mut resid = DVector::zeros(ns * na);
    let mut w = DVector::zeros(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = mdp.transition_row(s, a).iter().zip(&v).map(|(p, vs)| p * vs).sum();
            resid[s * na + a] = q[s * na + a] - r[s * na + a] - gamma * next;
            w[s * na + a] = nu[s] * pi.joint_prob(s, a);
        }
    }
    Ok((resid, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BellmanDiagnostic {
    pub msbe: f64,
    /// Bellman error after projecting the Bellman image onto the network's
    /// linearisation around `W(0)`.
    pub mspbe: f64,
}

/// MSBE and MSPBE of a value network on a tabular chain.
pub fn mspbe_diagnostic(net: &FcNet, pi: &PolicyTable, mdp: &TabularMdp, gamma: f64) -> Result<BellmanDiagnostic> {
    let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
    let counts = mdp.action_counts().to_vec();
    let feature = |s: usize, a: usize| mdp.sa_features(&s, &crate::env::joint_from_index(a, &counts));
    let q_hat = |s: usize, a: usize| net.value(&feature(s, a));
    let (resid, w) = bellman_residual(&q_hat, mdp, pi, gamma)?;
    let msbe = resid.iter().zip(w.iter()).map(|(e, d)| d * e * e).sum();

    let mut base = net.clone();
    base.set_hidden(net.init_hidden().clone())?;
    let n = ns * na;
    let p = base.param_count(crate::nn::TrainableSet::Hidden);
    let mut phi = DMatrix::zeros(n, p);
    let mut q0 = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for s in 0..ns {
        for a in 0..na {
            let x = feature(s, a);
            let row = base.grad_w(&x, 0)?.flatten();
            phi.row_mut(s * na + a).copy_from_slice(&row);
            q0[s * na + a] = base.value(&x)?;
            q[s * na + a] = net.value(&x)?;
        }
    }
    // T Q = Q - resid; project (T Q - Q0) onto span(phi) under weights w.
    let target = &q - &resid - &q0;
    let sqrt_w = w.map(f64::sqrt);
    let weighted_phi = DMatrix::from_fn(n, p, |i, j| sqrt_w[i] * phi[(i, j)]);
    let weighted_target = target.component_mul(&sqrt_w);
    let coef = weighted_phi
        .svd(true, true)
        .solve(&weighted_target, 1e-12)
        .map_err(|e| Error::Internal(format!("projection solve failed: {e}")))?;
    let projected = q0 + phi * coef;
    let mspbe = (0..n).map(|i| w[i] * (q[i] - projected[i]).powi(2)).sum();
    Ok(BellmanDiagnostic { msbe, mspbe })
}
