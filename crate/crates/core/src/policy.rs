//! Joint policies: a product of per-agent local policies over the global state.

use nalgebra::DMatrix;

use crate::env::{joint_from_index, sample_categorical, Mamdp, TabularMdp};
use crate::error::{Error, Result};
use crate::nn::{policy_probs, FcNet};
use crate::seed::StreamRng;

/// Tolerance on `sum_a pi(a|s) = 1` when sampling.
const PROB_SUM_TOL: f64 = 1e-9;

pub trait Policy<E: Mamdp + ?Sized> {
    /// `pi^i(. | s)` for agent `agent`.
    fn local_probs(&self, env: &E, agent: usize, s: &E::State) -> Result<Vec<f64>>;

    /// Samples each agent's action independently, in agent order.
    fn sample_joint(&self, env: &E, s: &E::State, rng: &mut StreamRng) -> Result<Vec<usize>> {
        (0..env.n_agents())
            .map(|i| {
                let p = self.local_probs(env, i, s)?;
                check_distribution(&p, env.n_local_actions(i))?;
                Ok(sample_categorical(&p, rng))
            })
            .collect()
    }
}

fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::dim("policy probabilities", n, p.len()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain(format!("policy produced an invalid distribution {p:?}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Domain(format!("policy probabilities sum to {sum}")));
    }
    Ok(())
}

/// Uniform over every agent's local actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl<E: Mamdp + ?Sized> Policy<E> for UniformPolicy {
    fn local_probs(&self, env: &E, agent: usize, _s: &E::State) -> Result<Vec<f64>> {
        let n = env.n_local_actions(agent);
        Ok(vec![1.0 / n as f64; n])
    }
}

/// One softmax-headed network per agent, evaluated on the state features.
#[derive(Debug, Clone)]
pub struct ActorPool {
    pub actors: Vec<FcNet>,
}

impl<E: Mamdp + ?Sized> Policy<E> for ActorPool {
    fn local_probs(&self, env: &E, agent: usize, s: &E::State) -> Result<Vec<f64>> {
        let net = self
            .actors
            .get(agent)
            .ok_or_else(|| Error::dim("actor pool", env.n_agents(), self.actors.len()))?;
        policy_probs(net, &env.state_features(s))
    }
}

/// Explicit per-agent tables `pi^i(a^i | s)` over integer states; row `s` of
/// `local[i]` is agent `i`'s distribution in state `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub local: Vec<DMatrix<f64>>,
}

impl PolicyTable {
    pub fn uniform(n_states: usize, action_counts: &[usize]) -> Self {
        Self {
            local: action_counts
                .iter()
                .map(|&n| DMatrix::from_element(n_states, n, 1.0 / n as f64))
                .collect(),
        }
    }

    /// Tabulates any policy on a tabular MDP.
    pub fn tabulate<E, P>(env: &E, n_states: usize, policy: &P) -> Result<Self>
    where
        E: Mamdp<State = usize> + ?Sized,
        P: Policy<E> + ?Sized,
    {
        let local = (0..env.n_agents())
            .map(|i| {
                let n = env.n_local_actions(i);
                let mut m = DMatrix::zeros(n_states, n);
                for s in 0..n_states {
                    let p = policy.local_probs(env, i, &s)?;
                    check_distribution(&p, n)?;
                    for (a, v) in p.into_iter().enumerate() {
                        m[(s, a)] = v;
                    }
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { local })
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.local.iter().map(|m| m.ncols()).collect()
    }

    pub fn n_states(&self) -> usize {
        self.local.first().map_or(0, |m| m.nrows())
    }

    /// `pi(a | s)` for the joint action with mixed-radix index `a`.
    pub fn joint_prob(&self, s: usize, a: usize) -> f64 {
        let joint = joint_from_index(a, &self.action_counts());
        joint.iter().zip(&self.local).map(|(&ai, m)| m[(s, ai)]).product()
    }

    /// Checks shapes against a tabular MDP.
    pub fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.action_counts() != mdp.action_counts() {
            return Err(Error::dim("policy action counts", format!("{:?}", mdp.action_counts()), format!("{:?}", self.action_counts())));
        }
        if self.n_states() != mdp.n_states() {
            return Err(Error::dim("policy states", mdp.n_states(), self.n_states()));
        }
        Ok(())
    }
}

impl<E: Mamdp<State = usize> + ?Sized> Policy<E> for PolicyTable {
    fn local_probs(&self, _env: &E, agent: usize, s: &usize) -> Result<Vec<f64>> {
        let m = self
            .local
            .get(agent)
            .ok_or_else(|| Error::dim("policy table agents", agent + 1, self.local.len()))?;
        if *s >= m.nrows() {
            return Err(Error::Domain(format!("state {s} outside policy table")));
        }
        Ok(m.row(*s).iter().copied().collect())
    }
}
