//! The actor loop: batch collection under the current joint policy, local TD
//! errors from each agent's gossiped critic, TD gossip, and normalized policy
//! steps with a diminishing step size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{disagreement, gossip, ConsensusMatrix};
use crate::critic::{run_decentralized_critic, CriticConfig};
use crate::env::{joint_index, Mamdp};
use crate::error::{Error, Result};
use crate::nn::{score, FcNet, TrainableSet};
use crate::policy::{ActorPool, Policy};
use crate::runlog::{CriticLogRow, EpisodeRecord, StepRecord};
use crate::seed::StreamRng;

/// Directions with norm below this are treated as zero and skipped.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSignal {
    #[default]
    TdError,
    QValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdSign {
    /// Weight scores by `-delta`, i.e. by the usual advantage estimate.
    #[default]
    Conventional,
    /// Weight scores by `+delta` as literally written in the update rule.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `alpha_t = alpha / t`.
    #[default]
    Harmonic,
    /// `alpha_t = alpha`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorConfig {
    /// Outer iterations `T`.
    pub iterations: usize,
    /// Batch length `M`.
    pub batch: usize,
    /// Base step `alpha`.
    pub alpha: f64,
    pub schedule: StepSchedule,
    pub direction_signal: DirectionSignal,
    pub td_sign: TdSign,
    /// Train `H` and `b` as well as the hidden stack.
    pub actor_train_all: bool,
    /// Rescale every score so its norm is at most one.
    pub score_cap: bool,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            batch: 1,
            alpha: 0.005,
            schedule: StepSchedule::Harmonic,
            direction_signal: DirectionSignal::TdError,
            td_sign: TdSign::Conventional,
            actor_train_all: false,
            score_cap: false,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("actor.iterations", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("actor.batch", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("actor.alpha", format!("must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn train_set(&self) -> TrainableSet {
        if self.actor_train_all {
            TrainableSet::All
        } else {
            TrainableSet::Hidden
        }
    }

    /// Step size at 1-based outer iteration `t`.
    pub fn step_size(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Harmonic => self.alpha / t as f64,
            StepSchedule::Constant => self.alpha,
        }
    }

    /// Per-sample weight applied to the signal when forming the direction.
    pub fn signal_sign(&self) -> f64 {
        match (self.direction_signal, self.td_sign) {
            (DirectionSignal::TdError, TdSign::Conventional) => -1.0,
            (DirectionSignal::TdError, TdSign::Verbatim) => 1.0,
            (DirectionSignal::QValue, _) => 1.0,
        }
    }
}

/// Anything that can score a state-action pair.
pub trait ActionValue<E: Mamdp + ?Sized> {
    fn q(&self, env: &E, s: &E::State, joint: &[usize]) -> Result<f64>;
}

impl<E: Mamdp + ?Sized> ActionValue<E> for FcNet {
    fn q(&self, env: &E, s: &E::State, joint: &[usize]) -> Result<f64> {
        self.value(&env.sa_features(s, joint))
    }
}

/// Lookup-table critic over `s * n_joint + a` for integer-state MDPs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(pub DVector<f64>);

impl<E: Mamdp<State = usize> + ?Sized> ActionValue<E> for QTable {
    fn q(&self, env: &E, s: &usize, joint: &[usize]) -> Result<f64> {
        let counts: Vec<usize> = (0..env.n_agents()).map(|i| env.n_local_actions(i)).collect();
        let na: usize = counts.iter().product();
        self.0
            .get(s * na + joint_index(joint, &counts))
            .copied()
            .ok_or_else(|| Error::Domain(format!("state-action ({s}, {joint:?}) outside Q table")))
    }
}

/// One actor batch.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    /// `M x N` local TD errors; column `i` uses agent `i`'s critic.
    pub td: DMatrix<f64>,
    /// `M x N` critic values `Q(s_l, a_l)` per agent.
    pub q_values: DMatrix<f64>,
    /// `scores[i][l]`: agent `i`'s flattened score at sample `l`.
    pub scores: Vec<Vec<Vec<f64>>>,
    pub raw_rewards: Vec<f64>,
    /// Agent-averaged learning reward per sample.
    pub mean_rewards: Vec<f64>,
    pub end_state: S,
}

/// Runs `m` Markov steps from `start` under the actors' joint policy.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<E, C>(
    env: &E,
    actors: &ActorPool,
    critics: &[C],
    start: &E::State,
    m: usize,
    gamma: f64,
    cfg: &ActorConfig,
    rng: &mut StreamRng,
) -> Result<Batch<E::State>>
where
    E: Mamdp + ?Sized,
    C: ActionValue<E>,
{
    let n = env.n_agents();
    if actors.actors.len() != n || critics.len() != n {
        return Err(Error::dim("actor/critic agents", n, format!("{} actors, {} critics", actors.actors.len(), critics.len())));
    }
    let set = cfg.train_set();
    let mut td = DMatrix::zeros(m, n);
    let mut q_values = DMatrix::zeros(m, n);
    let mut scores = vec![Vec::with_capacity(m); n];
    let mut raw_rewards = Vec::with_capacity(m);
    let mut mean_rewards = Vec::with_capacity(m);
    let mut s = start.clone();
    let mut a = actors.sample_joint(env, &s, rng)?;
    for l in 0..m {
        let step = env.step(&s, &a, rng)?;
        let a_next = actors.sample_joint(env, &step.next, rng)?;
        let phi = env.state_features(&s);
        for i in 0..n {
            scores[i].push(score(&actors.actors[i], &phi, a[i], set, cfg.score_cap)?);
            let q = critics[i].q(env, &s, &a)?;
            let q_next = critics[i].q(env, &step.next, &a_next)?;
            q_values[(l, i)] = q;
            td[(l, i)] = q - step.rewards[i] - gamma * q_next;
        }
        raw_rewards.push(step.raw_reward);
        mean_rewards.push(step.rewards.iter().sum::<f64>() / n as f64);
        s = step.next;
        a = a_next;
    }
    Ok(Batch {
        td,
        q_values,
        scores,
        raw_rewards,
        mean_rewards,
        end_state: s,
    })
}

/// `A^t Delta_0^T`: row `i` is agent `i`'s gossiped signal vector.
pub fn gossip_td(a: &ConsensusMatrix, td: &DMatrix<f64>, t_gossip: usize) -> Result<DMatrix<f64>> {
    gossip(a, &td.transpose(), t_gossip)
}

/// `(1 / M) sum_l sign * signal_l * psi_l`.
pub fn direction(signal: &[f64], scores: &[Vec<f64>], sign: f64) -> Result<Vec<f64>> {
    if signal.len() != scores.len() || scores.is_empty() {
        return Err(Error::dim("direction batch", scores.len(), signal.len()));
    }
    let p = scores[0].len();
    let mut d = vec![0.0; p];
    for (&w, psi) in signal.iter().zip(scores) {
        if psi.len() != p {
            return Err(Error::dim("score length", p, psi.len()));
        }
        let c = sign * w;
        for (dj, &g) in d.iter_mut().zip(psi) {
            *dj += c * g;
        }
    }
    let m = signal.len() as f64;
    d.iter_mut().for_each(|x| *x /= m);
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Stepped { theta: Vec<f64>, step_norm: f64 },
    Skipped,
}

/// `theta + alpha_t d / ||d||`, skipped when `||d||` is below
/// [`MIN_DIRECTION_NORM`].
pub fn update_policy(theta: &[f64], d: &[f64], alpha_t: f64) -> Result<UpdateOutcome> {
    if theta.len() != d.len() {
        return Err(Error::dim("policy update", theta.len(), d.len()));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite update direction".into()));
    }
    if !(alpha_t > 0.0) {
        return Err(Error::config("actor.alpha", format!("step size must be positive, got {alpha_t}")));
    }
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < MIN_DIRECTION_NORM {
        return Ok(UpdateOutcome::Skipped);
    }
    let scale = alpha_t / norm;
    let next: Vec<f64> = theta.iter().zip(d).map(|(t, g)| t + scale * g).collect();
    let step_norm = next.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(UpdateOutcome::Stepped { theta: next, step_norm })
}

/// Everything the outer loop needs besides the environment and networks.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub actor: ActorConfig,
    pub critic: CriticConfig,
    pub consensus: ConsensusMatrix,
    pub t_gossip: usize,
    /// Outer iterations between episode resets.
    pub episode_len: usize,
    /// Start each critic phase from the previous gossiped critic instead of
    /// from `W(0)`.
    pub critic_warm_start: bool,
    /// Keep one critic log row per critic iteration.
    pub log_critic: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub episodes: Vec<EpisodeRecord>,
    pub steps: Vec<StepRecord>,
    pub critic_log: Vec<CriticLogRow>,
    pub actors: Vec<FcNet>,
    pub critics: Vec<FcNet>,
}

#[derive(Default)]
struct EpisodeAcc {
    t_start: usize,
    raw: Vec<f64>,
    learning: Vec<f64>,
    critic_pre: Vec<f64>,
    critic_post: Vec<f64>,
    td_pre: Vec<f64>,
    td_post: Vec<f64>,
    td_loss: Vec<f64>,
    critic_td_loss: Vec<f64>,
    direction_norm: Vec<f64>,
    boundary_hits: usize,
    accepted: usize,
    skipped: usize,
    max_step_error: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EpisodeAcc {
    fn finish(self, episode: usize, t_end: usize) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            t_start: self.t_start,
            t_end,
            raw_reward: mean(&self.raw),
            learning_reward: mean(&self.learning),
            critic_disagreement_pre: mean(&self.critic_pre),
            critic_disagreement_post: mean(&self.critic_post),
            td_disagreement_pre: mean(&self.td_pre),
            td_disagreement_post: mean(&self.td_post),
            td_loss: mean(&self.td_loss),
            critic_td_loss: mean(&self.critic_td_loss),
            direction_norm: mean(&self.direction_norm),
            boundary_hits: self.boundary_hits,
            accepted_updates: self.accepted,
            skipped_updates: self.skipped,
            max_step_error: self.max_step_error,
        }
    }
}

/// Alternates critic and actor phases for `T` outer iterations, carrying one
/// Markov chain across phases. `env` must already apply the restart kernel.
pub fn train<E: Mamdp>(
    setup: &TrainSetup,
    env: &mut E,
    actors: Vec<FcNet>,
    critics: Vec<FcNet>,
    chain_rng: &mut StreamRng,
    reset_rng: &mut StreamRng,
) -> Result<TrainOutcome> {
    setup.actor.validate()?;
    setup.critic.validate()?;
    if setup.episode_len == 0 {
        return Err(Error::config("environment.episode_len", "must be at least 1"));
    }
    let n = env.n_agents();
    if actors.len() != n || critics.len() != n || setup.consensus.n() != n {
        return Err(Error::dim("agents", n, format!("{} actors, {} critics, {} consensus rows", actors.len(), critics.len(), setup.consensus.n())));
    }
    let mut pool = ActorPool { actors };
    let mut critics = critics;
    let set = setup.actor.train_set();
    let sign = setup.actor.signal_sign();
    let mut episodes = Vec::new();
    let mut steps = Vec::new();
    let mut critic_log = Vec::new();
    let mut acc = EpisodeAcc::default();
    let mut s = env.initial_state();

    for t in 1..=setup.actor.iterations {
        let wrap = |e: Error| Error::Aborted {
            iteration: t,
            source: Box::new(e),
        };
        if (t - 1) % setup.episode_len == 0 {
            if t > 1 {
                episodes.push(std::mem::take(&mut acc).finish(episodes.len(), t - 1));
            }
            acc.t_start = t;
            s = env.reset(reset_rng);
        }

        // critic phase
        let start_nets: Vec<FcNet> = if setup.critic_warm_start {
            critics.clone()
        } else {
            critics
                .iter()
                .map(|c| {
                    let mut c = c.clone();
                    c.set_hidden(c.init_hidden().clone())?;
                    Ok(c)
                })
                .collect::<Result<_>>()
                .map_err(wrap)?
        };
        let out = run_decentralized_critic(&*env, &pool, &start_nets, &s, &setup.critic, &setup.consensus, setup.t_gossip, chain_rng)
            .map_err(wrap)?;
        for (i, c) in critics.iter_mut().enumerate() {
            let row: Vec<f64> = out.gossiped.row(i).iter().copied().collect();
            c.set_trainable_flat(TrainableSet::Hidden, &row).map_err(wrap)?;
        }
        acc.critic_pre.push(disagreement(&out.averages));
        acc.critic_post.push(disagreement(&out.gossiped));
        for r in &out.records {
            acc.critic_td_loss.push(mean(&r.td_loss));
            acc.boundary_hits += r.boundary_hit.iter().filter(|&&h| h).count();
            if setup.log_critic {
                critic_log.push(CriticLogRow {
                    t,
                    k: r.k,
                    td_loss: r.td_loss.clone(),
                    boundary_hit: r.boundary_hit.clone(),
                    param_disagreement: r.param_disagreement,
                });
            }
        }

        // actor phase
        let batch = collect_batch(&*env, &pool, &critics, &out.last_state, setup.actor.batch, setup.critic.gamma, &setup.actor, chain_rng)
            .map_err(wrap)?;
        let signal = match setup.actor.direction_signal {
            DirectionSignal::TdError => &batch.td,
            DirectionSignal::QValue => &batch.q_values,
        };
        let gossiped = gossip_td(&setup.consensus, signal, setup.t_gossip).map_err(wrap)?;
        acc.td_pre.push(disagreement(&batch.td.transpose()));
        acc.td_post.push(disagreement(&gossiped));
        acc.td_loss.push(batch.td.iter().map(|d| d * d).sum::<f64>() / batch.td.len() as f64);
        acc.raw.extend(&batch.raw_rewards);
        acc.learning.extend(&batch.mean_rewards);

        let alpha_t = setup.actor.step_size(t);
        for i in 0..n {
            let sig: Vec<f64> = gossiped.row(i).iter().copied().collect();
            let d = direction(&sig, &batch.scores[i], sign).map_err(wrap)?;
            let d_norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            acc.direction_norm.push(d_norm);
            let theta = pool.actors[i].trainable_flat(set);
            match update_policy(&theta, &d, alpha_t).map_err(wrap)? {
                UpdateOutcome::Stepped { theta, step_norm } => {
                    pool.actors[i].set_trainable_flat(set, &theta).map_err(wrap)?;
                    acc.accepted += 1;
                    acc.max_step_error = acc.max_step_error.max((step_norm - alpha_t).abs());
                    steps.push(StepRecord {
                        t,
                        agent: i,
                        alpha_t,
                        step_norm,
                        skipped: false,
                    });
                }
                UpdateOutcome::Skipped => {
                    acc.skipped += 1;
                    steps.push(StepRecord {
                        t,
                        agent: i,
                        alpha_t,
                        step_norm: 0.0,
                        skipped: true,
                    });
                }
            }
        }
        s = batch.end_state;
    }
    episodes.push(acc.finish(episodes.len(), setup.actor.iterations));
    Ok(TrainOutcome {
        episodes,
        steps,
        critic_log,
        actors: pool.actors,
        critics,
    })
}
