//! Brute-force ground truth on small tabular MDPs.
//!
//! State-action vectors are indexed `s * n_joint + a` with joint actions in
//! the mixed-radix order of [`crate::env::joint_index`]. All value functions
//! use the agent-averaged reward `r_bar`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::{joint_from_index, TabularMdp};
use crate::error::{Error, Result};
use crate::nn::{softmax, FcNet, TrainableSet};
use crate::policy::PolicyTable;
use crate::seed::StreamRng;

pub const MAX_ORACLE_STATES: usize = 16;
pub const MAX_ORACLE_JOINT_ACTIONS: usize = 8;
pub const BELLMAN_RESIDUAL_TOL: f64 = 1e-10;
pub const POWER_ITERATION_TOL: f64 = 1e-12;
const POWER_ITERATION_CAP: usize = 5_000_000;
/// Power iteration and the null-space solve must agree to this tolerance.
const STATIONARY_AGREEMENT_TOL: f64 = 1e-8;
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Coarser step used by the Richardson fallback.
pub const RICHARDSON_STEP: f64 = 1e-4;
const FD_AGREEMENT_TOL: f64 = 1e-6;

fn check_size(mdp: &TabularMdp) -> Result<()> {
    if mdp.n_states() > MAX_ORACLE_STATES || mdp.n_joint_actions() > MAX_ORACLE_JOINT_ACTIONS {
        return Err(Error::Unsupported(format!(
            "oracles handle at most {MAX_ORACLE_STATES} states x {MAX_ORACLE_JOINT_ACTIONS} joint actions, got {} x {}",
            mdp.n_states(),
            mdp.n_joint_actions()
        )));
    }
    Ok(())
}

fn check_gamma(gamma: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero {
        (0.0..1.0).contains(&gamma)
    } else {
        gamma > 0.0 && gamma < 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::config("gamma", format!("out of range: {gamma}")))
    }
}

fn prepare(mdp: &TabularMdp, pi: &PolicyTable) -> Result<()> {
    check_size(mdp)?;
    pi.check_against(mdp)
}

/// `P_pi(s, s') = sum_a pi(a|s) P(s, a, s')`.
pub fn state_kernel(mdp: &TabularMdp, pi: &PolicyTable) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
    let mut k = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = pi.joint_prob(s, a);
            for (sp, p) in mdp.transition_row(s, a).iter().enumerate() {
                k[(s, sp)] += w * p;
            }
        }
    }
    k
}

/// `P_pi((s, a), (s', a')) = P(s, a, s') pi(a'|s')`.
pub fn state_action_kernel(mdp: &TabularMdp, pi: &PolicyTable) -> DMatrix<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_joint_actions());
    let mut k = DMatrix::zeros(ns * na, ns * na);
    for s in 0..ns {
        for a in 0..na {
            for (sp, p) in mdp.transition_row(s, a).iter().enumerate() {
                for ap in 0..na {
                    k[(s * na + a, sp * na + ap)] = p * pi.joint_prob(sp, ap);
                }
            }
        }
    }
    k
}

pub fn mean_rewards(mdp: &TabularMdp) -> DVector<f64> {
    let na = mdp.n_joint_actions();
    DVector::from_fn(mdp.n_states() * na, |i, _| mdp.mean_reward(i / na, i % na))
}

/// Solves `(I - gamma P_pi) Q = r_bar`.
pub fn exact_q(mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<DVector<f64>> {
    prepare(mdp, pi)?;
    check_gamma(gamma, true)?;
    let r = mean_rewards(mdp);
    let p = state_action_kernel(mdp, pi);
    let n = r.len();
    let sys = DMatrix::identity(n, n) - &p * gamma;
    let q = sys
        .clone()
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Internal("singular Bellman system".into()))?;
    let residual = (&q - (&r + &p * &q * gamma)).amax();
    if residual > BELLMAN_RESIDUAL_TOL * q.amax().max(1.0) {
        return Err(Error::Internal(format!("Bellman residual {residual}")));
    }
    Ok(q)
}

/// `V(s) = sum_a pi(a|s) Q(s, a)`.
pub fn state_values(q: &DVector<f64>, pi: &PolicyTable) -> DVector<f64> {
    let ns = pi.n_states();
    let na = q.len() / ns;
    DVector::from_fn(ns, |s, _| (0..na).map(|a| pi.joint_prob(s, a) * q[s * na + a]).sum())
}

/// `Adv(s, a) = Q(s, a) - V(s)`.
pub fn advantage(q: &DVector<f64>, pi: &PolicyTable) -> DVector<f64> {
    let v = state_values(q, pi);
    let na = q.len() / pi.n_states();
    DVector::from_fn(q.len(), |i, _| q[i] - v[i / na])
}

/// Stationary distribution of the chain driven by `mdp`'s own kernel under
/// `pi`, by power iteration from the uniform distribution, checked against a
/// direct null-space solve.
pub fn stationary_distribution(mdp: &TabularMdp, pi: &PolicyTable) -> Result<DVector<f64>> {
    prepare(mdp, pi)?;
    let k = state_kernel(mdp, pi);
    let n = k.nrows();
    let kt = k.transpose();
    let mut nu = DVector::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    for _ in 0..POWER_ITERATION_CAP {
        let next = &kt * &nu;
        let diff = (&next - &nu).lp_norm(1);
        nu = next;
        if diff < POWER_ITERATION_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Internal(format!(
            "power iteration did not converge in {POWER_ITERATION_CAP} steps"
        )));
    }
    let direct = stationary_null_space(&k)?;
    let gap = (&nu - &direct).amax();
    if gap > STATIONARY_AGREEMENT_TOL {
        return Err(Error::Internal(format!("power iteration and null-space solve differ by {gap}")));
    }
    Ok(nu)
}

/// Solves `nu (P - I) = 0`, `sum nu = 1` by replacing one balance equation
/// with the normalisation.
pub fn stationary_null_space(k: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = k.nrows();
    let mut sys = k.transpose() - DMatrix::identity(n, n);
    sys.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    sys.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("stationary system is singular (chain not irreducible)".into()))
}

/// Stationary distribution of the restart kernel `gamma P + (1 - gamma) e_{s0}`.
pub fn stationary_restart(mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<DVector<f64>> {
    stationary_distribution(&mdp.with_restart(gamma)?, pi)
}

/// Discounted visitation `eta = e_{s0} + gamma P_pi^T eta`.
pub fn visitation(mdp: &TabularMdp, pi: &PolicyTable, gamma: f64, s0: usize) -> Result<DVector<f64>> {
    prepare(mdp, pi)?;
    check_gamma(gamma, false)?;
    let n = mdp.n_states();
    if s0 >= n {
        return Err(Error::Domain(format!("s0 = {s0} out of range")));
    }
    let k = state_kernel(mdp, pi);
    let sys = DMatrix::identity(n, n) - k.transpose() * gamma;
    let mut rhs = DVector::zeros(n);
    rhs[s0] = 1.0;
    sys.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("singular visitation system".into()))
}

/// `J = V_pi(s0)`.
pub fn objective(mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<f64> {
    let q = exact_q(mdp, pi, gamma)?;
    Ok(state_values(&q, pi)[mdp.s0()])
}

/// Everything the oracles know about one `(mdp, pi, gamma)` triple.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub nu: DVector<f64>,
    pub eta: DVector<f64>,
    pub j: f64,
}

impl ExactSolution {
    pub fn solve(mdp: &TabularMdp, pi: &PolicyTable, gamma: f64) -> Result<Self> {
        let q = exact_q(mdp, pi, gamma)?;
        let v = state_values(&q, pi);
        let nu = stationary_restart(mdp, pi, gamma)?;
        let eta = visitation(mdp, pi, gamma, mdp.s0())?;
        let j = v[mdp.s0()];
        Ok(Self { q, v, nu, eta, j })
    }
}

/// A policy family over a tabular MDP with a flat parameter vector.
pub trait ParamPolicy {
    fn n_params(&self) -> usize;
    fn table(&self, theta: &[f64]) -> Result<PolicyTable>;
    /// `grad_theta log pi(a | s)` for joint action index `a`.
    fn joint_score(&self, theta: &[f64], s: usize, a: usize) -> Result<DVector<f64>>;
}

/// Independent per-agent softmax over a logit table; `theta` is agent-major,
/// then state, then local action.
#[derive(Debug, Clone)]
pub struct TabularSoftmax {
    pub n_states: usize,
    pub action_counts: Vec<usize>,
}

impl TabularSoftmax {
    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for &n in &self.action_counts {
            off.push(off.last().unwrap() + self.n_states * n);
        }
        off
    }

    fn local(&self, theta: &[f64], agent: usize, s: usize) -> Vec<f64> {
        let n = self.action_counts[agent];
        let start = self.offsets()[agent] + s * n;
        softmax(&theta[start..start + n])
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::dim("softmax logits", self.n_params(), theta.len()));
        }
        Ok(())
    }
}

impl ParamPolicy for TabularSoftmax {
    fn n_params(&self) -> usize {
        *self.offsets().last().unwrap()
    }

    fn table(&self, theta: &[f64]) -> Result<PolicyTable> {
        self.check(theta)?;
        let local = (0..self.action_counts.len())
            .map(|i| {
                let n = self.action_counts[i];
                let mut m = DMatrix::zeros(self.n_states, n);
                for s in 0..self.n_states {
                    m.row_mut(s).copy_from_slice(&self.local(theta, i, s));
                }
                m
            })
            .collect();
        Ok(PolicyTable { local })
    }

    fn joint_score(&self, theta: &[f64], s: usize, a: usize) -> Result<DVector<f64>> {
        self.check(theta)?;
        let joint = joint_from_index(a, &self.action_counts);
        let off = self.offsets();
        let mut g = DVector::zeros(self.n_params());
        for (i, &ai) in joint.iter().enumerate() {
            let p = self.local(theta, i, s);
            let base = off[i] + s * self.action_counts[i];
            for b in 0..self.action_counts[i] {
                g[base + b] = if b == ai { 1.0 } else { 0.0 } - p[b];
            }
        }
        Ok(g)
    }
}

/// Network actors on a tabular MDP. `theta` is the trainable vector of agent
/// `agent`; the other actors are held fixed.
#[derive(Debug, Clone)]
pub struct NeuralActors {
    pub actors: Vec<FcNet>,
    pub agent: usize,
    pub set: TrainableSet,
    /// State features, one per state.
    pub features: Vec<DVector<f64>>,
}

impl NeuralActors {
    fn with_theta(&self, theta: &[f64]) -> Result<FcNet> {
        let mut net = self.actors[self.agent].clone();
        net.set_trainable_flat(self.set, theta)?;
        Ok(net)
    }
}

impl ParamPolicy for NeuralActors {
    fn n_params(&self) -> usize {
        self.actors[self.agent].param_count(self.set)
    }

    fn table(&self, theta: &[f64]) -> Result<PolicyTable> {
        let net = self.with_theta(theta)?;
        let local = self
            .actors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let a = if i == self.agent { &net } else { a };
                let rows = self
                    .features
                    .iter()
                    .map(|x| crate::nn::policy_probs(a, x).map(nalgebra::RowDVector::from_vec))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DMatrix::from_rows(&rows))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyTable { local })
    }

    fn joint_score(&self, theta: &[f64], s: usize, a: usize) -> Result<DVector<f64>> {
        let net = self.with_theta(theta)?;
        let counts: Vec<usize> = self.actors.iter().map(|n| n.head_rows()).collect();
        let ai = joint_from_index(a, &counts)[self.agent];
        crate::nn::score(&net, &self.features[s], ai, self.set, false).map(DVector::from_vec)
    }
}

#[derive(Debug, Clone)]
pub struct FdGradient {
    pub j: f64,
    pub grad: DVector<f64>,
    /// True when the plain central difference was replaced by a Richardson
    /// extrapolation.
    pub richardson: bool,
}

fn central_difference<F: Fn(&[f64]) -> Result<f64>>(f: &F, theta: &[f64], h: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(theta.len());
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        t[i] = theta[i] + h;
        let up = f(&t)?;
        t[i] = theta[i] - h;
        let down = f(&t)?;
        t[i] = theta[i];
        g[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Exact `J(theta)` and its central-difference gradient. The gradient at
/// `fd_step` is compared with the one at `RICHARDSON_STEP`; if they disagree
/// the Richardson extrapolation at the coarser step is returned instead.
pub fn exact_objective_and_fd_gradient<P: ParamPolicy + ?Sized>(
    mdp: &TabularMdp,
    family: &P,
    theta: &[f64],
    gamma: f64,
    fd_step: f64,
) -> Result<FdGradient> {
    if !(fd_step > 0.0) {
        return Err(Error::config("fd_step", format!("must be positive, got {fd_step}")));
    }
    let f = |t: &[f64]| objective(mdp, &family.table(t)?, gamma);
    let j = f(theta)?;
    let fine = central_difference(&f, theta, fd_step)?;
    let coarse = central_difference(&f, theta, RICHARDSON_STEP)?;
    let scale = coarse.amax().max(1.0);
    if (&fine - &coarse).amax() <= FD_AGREEMENT_TOL * scale {
        return Ok(FdGradient {
            j,
            grad: fine,
            richardson: false,
        });
    }
    let half = central_difference(&f, theta, RICHARDSON_STEP / 2.0)?;
    Ok(FdGradient {
        j,
        grad: (half * 4.0 - coarse) / 3.0,
        richardson: true,
    })
}

/// `sum_{s,a} nu(s) pi(a|s) psi(s, a) Adv(s, a)`, the score-advantage sum
/// under the restart stationary distribution.
pub fn score_advantage_sum<P: ParamPolicy + ?Sized>(
    mdp: &TabularMdp,
    family: &P,
    theta: &[f64],
    gamma: f64,
) -> Result<DVector<f64>> {
    let pi = family.table(theta)?;
    let q = exact_q(mdp, &pi, gamma)?;
    let adv = advantage(&q, &pi);
    let nu = stationary_restart(mdp, &pi, gamma)?;
    let na = mdp.n_joint_actions();
    let mut g = DVector::zeros(family.n_params());
    for s in 0..mdp.n_states() {
        for a in 0..na {
            let w = nu[s] * pi.joint_prob(s, a) * adv[s * na + a];
            if w != 0.0 {
                g += family.joint_score(theta, s, a)? * w;
            }
        }
    }
    Ok(g)
}

/// Random MDP with Dirichlet(1) transition rows and uniform `[0, 1)` rewards.
pub fn random_mdp(n_states: usize, action_counts: &[usize], gamma: f64, rng: &mut StreamRng) -> Result<TabularMdp> {
    let na: usize = action_counts.iter().product();
    let mut p = Vec::with_capacity(n_states * na * n_states);
    for _ in 0..n_states * na {
        let row: Vec<f64> = (0..n_states).map(|_| -rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
        let sum: f64 = row.iter().sum();
        let mut row: Vec<f64> = row.iter().map(|x| x / sum).collect();
        // push the rounding residue into the largest entry so rows sum to 1
        let resid = 1.0 - row.iter().sum::<f64>();
        let k = (0..n_states).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        row[k] += resid;
        p.extend(row);
    }
    let rewards = action_counts
        .iter()
        .map(|_| (0..n_states * na).map(|_| rng.random::<f64>()).collect())
        .collect();
    TabularMdp::new(n_states, action_counts.to_vec(), p, rewards, gamma, 0)
}

/// Logits drawn from `N(0, scale^2)`.
pub fn random_logits(n: usize, scale: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_categorical, Mamdp};
    use crate::policy::Policy;
    use crate::seed::SeedStream;

    fn rng(i: u64) -> StreamRng {
        SeedStream::new(11).rng("oracle", i)
    }

    fn chain() -> TabularMdp {
        TabularMdp::new(2, vec![1], vec![0.0, 1.0, 1.0, 0.0], vec![vec![1.0, 0.0]], 0.5, 0).unwrap()
    }

    fn softmax_instance(ns: usize, counts: &[usize], gamma: f64, seed: u64) -> (TabularMdp, TabularSoftmax, Vec<f64>) {
        let mut r = rng(seed);
        let mdp = random_mdp(ns, counts, gamma, &mut r).unwrap();
        let fam = TabularSoftmax {
            n_states: ns,
            action_counts: counts.to_vec(),
        };
        let theta = random_logits(fam.n_params(), 1.0, &mut r);
        (mdp, fam, theta)
    }

    #[test]
    fn single_state_geometric() {
        let mdp = TabularMdp::new(1, vec![1], vec![1.0], vec![vec![1.0]], 0.9, 0).unwrap();
        let pi = PolicyTable::uniform(1, &[1]);
        let q = exact_q(&mdp, &pi, 0.9).unwrap();
        assert!((q[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn myopic_limit() {
        let (mdp, fam, theta) = softmax_instance(4, &[2], 0.9, 1);
        let pi = fam.table(&theta).unwrap();
        let q = exact_q(&mdp, &pi, 0.0).unwrap();
        assert_eq!(q, mean_rewards(&mdp));
    }

    #[test]
    fn q_matches_monte_carlo() {
        let gamma = 0.8;
        let (mdp, fam, theta) = softmax_instance(4, &[2], gamma, 2);
        let pi = fam.table(&theta).unwrap();
        let q = exact_q(&mdp, &pi, gamma).unwrap();
        let mut r = rng(99);
        let (s_start, a_start) = (1usize, 1usize);
        let n = 4000;
        let horizon = 150; // gamma^150 < 1e-14
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let (mut s, mut a) = (s_start, a_start);
            let (mut ret, mut disc) = (0.0, 1.0);
            for _ in 0..horizon {
                ret += disc * mdp.mean_reward(s, a);
                disc *= gamma;
                s = sample_categorical(mdp.transition_row(s, a), &mut r);
                a = pi.sample_joint(&mdp, &s, &mut r).unwrap()[0];
            }
            samples.push(ret);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = q[s_start * 2 + a_start];
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn two_state_stationary_and_visitation() {
        let pi = PolicyTable::uniform(2, &[1]);
        let nu = stationary_restart(&chain(), &pi, 0.5).unwrap();
        assert!((nu[0] - 2.0 / 3.0).abs() < 1e-12 && (nu[1] - 1.0 / 3.0).abs() < 1e-12);
        let eta = visitation(&chain(), &pi, 0.5, 0).unwrap();
        // 1 / (1 - gamma^2), gamma / (1 - gamma^2)
        assert!((eta[0] - 4.0 / 3.0).abs() < 1e-12 && (eta[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn restart_dominates_small_gamma() {
        let (mdp, fam, theta) = softmax_instance(5, &[2], 0.5, 3);
        let pi = fam.table(&theta).unwrap();
        let nu = stationary_restart(&mdp, &pi, 1e-6).unwrap();
        assert!((nu[mdp.s0()] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn uniform_transitions_two_solvers_agree() {
        let n = 4;
        let mdp = TabularMdp::new(n, vec![2], vec![0.25; n * 2 * n], vec![vec![0.5; n * 2]], 0.9, 2).unwrap();
        let pi = PolicyTable::uniform(n, &[2]);
        let tilde = mdp.with_restart(0.7).unwrap();
        let power = stationary_distribution(&tilde, &pi).unwrap();
        let direct = stationary_null_space(&state_kernel(&tilde, &pi)).unwrap();
        assert!((power - direct).amax() < 1e-10);
    }

    #[test]
    fn lemma_visitation_identity() {
        for seed in 0..5 {
            let gamma = 0.3 + 0.1 * seed as f64;
            let (mdp, fam, theta) = softmax_instance(6, &[2, 2], gamma, 10 + seed);
            let pi = fam.table(&theta).unwrap();
            let nu = stationary_restart(&mdp, &pi, gamma).unwrap();
            let eta = visitation(&mdp, &pi, gamma, mdp.s0()).unwrap();
            assert!((eta.sum() - 1.0 / (1.0 - gamma)).abs() < 1e-10);
            assert!((nu - eta * (1.0 - gamma)).amax() < 1e-9);
        }
    }

    #[test]
    fn absorbing_start_visitation() {
        let mdp = TabularMdp::new(2, vec![1], vec![1.0, 0.0, 0.5, 0.5], vec![vec![0.0, 0.0]], 0.5, 0).unwrap();
        let eta = visitation(&mdp, &PolicyTable::uniform(2, &[1]), 0.75, 0).unwrap();
        assert!((eta[0] - 4.0).abs() < 1e-12);
        assert_eq!(eta[1], 0.0);
    }

    #[test]
    fn advantage_centred_and_bellman() {
        let gamma = 0.95;
        let (mdp, fam, theta) = softmax_instance(5, &[2, 3], gamma, 4);
        let pi = fam.table(&theta).unwrap();
        let q = exact_q(&mdp, &pi, gamma).unwrap();
        let adv = advantage(&q, &pi);
        for s in 0..5 {
            let c: f64 = (0..6).map(|a| pi.joint_prob(s, a) * adv[s * 6 + a]).sum();
            assert!(c.abs() < 1e-10);
        }
        let resid = &q - (mean_rewards(&mdp) + state_action_kernel(&mdp, &pi) * &q * gamma);
        assert!(resid.amax() < 1e-10);
    }

    #[test]
    fn dead_parameter_zero_gradient() {
        let gamma = 0.9;
        let (mdp, fam, theta) = softmax_instance(3, &[2], gamma, 5);
        let mdp_ref = &mdp;
        // a one-state-action tail agent has logits that cannot matter
        let counts = vec![2, 1];
        let mdp2 = TabularMdp::new(
            3,
            counts.clone(),
            (0..3).flat_map(|s| (0..2).flat_map(move |a| mdp_ref.transition_row(s, a).to_vec())).collect(),
            vec![mean_rewards(&mdp).as_slice().to_vec(), vec![0.0; 6]],
            gamma,
            0,
        )
        .unwrap();
        let fam2 = TabularSoftmax {
            n_states: 3,
            action_counts: counts,
        };
        let mut t2 = theta.clone();
        t2.extend([0.3, -0.2, 0.9]);
        let g = exact_objective_and_fd_gradient(&mdp2, &fam2, &t2, gamma, DEFAULT_FD_STEP).unwrap();
        for k in fam.n_params()..fam2.n_params() {
            assert!(g.grad[k].abs() < 1e-8);
        }
    }

    #[test]
    fn policy_gradient_proportional() {
        let gamma = 0.9;
        let (mdp, fam, theta) = softmax_instance(3, &[2], gamma, 6);
        let fd = exact_objective_and_fd_gradient(&mdp, &fam, &theta, gamma, DEFAULT_FD_STEP).unwrap();
        let lhs = score_advantage_sum(&mdp, &fam, &theta, gamma).unwrap();
        let cos = lhs.dot(&fd.grad) / (lhs.norm() * fd.grad.norm());
        assert!(cos > 0.999, "{cos}");
        let ratio = fd.grad.norm() / lhs.norm();
        assert!((ratio * (1.0 - gamma) - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn doubling_rewards_doubles_j() {
        let gamma = 0.9;
        let (mdp, fam, theta) = softmax_instance(4, &[2], gamma, 7);
        let pi = fam.table(&theta).unwrap();
        let j = objective(&mdp, &pi, gamma).unwrap();
        let j2 = objective(&mdp.scale_rewards(2.0), &pi, gamma).unwrap();
        assert!((j2 - 2.0 * j).abs() <= 1e-12 * j.abs().max(1.0));
    }

    #[test]
    fn size_limits_enforced() {
        let mut r = rng(8);
        let mdp = random_mdp(17, &[2], 0.5, &mut r).unwrap();
        let pi = PolicyTable::uniform(17, &[2]);
        assert!(matches!(exact_q(&mdp, &pi, 0.5), Err(Error::Unsupported(_))));
        let (mdp, fam, theta) = softmax_instance(3, &[2], 0.5, 9);
        assert!(matches!(
            exact_objective_and_fd_gradient(&mdp, &fam, &theta, 0.5, 0.0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn neural_actor_scores_match_fd_of_log_policy() {
        let mdp = chain();
        let feats: Vec<_> = (0..2).map(|s| mdp.state_features(&s)).collect();
        let actors = vec![FcNet::init(4, 2, 2, 3, 5).unwrap()];
        let fam = NeuralActors {
            actors,
            agent: 0,
            set: TrainableSet::Hidden,
            features: feats,
        };
        let theta = fam.actors[0].trainable_flat(TrainableSet::Hidden);
        let h = 1e-6;
        for (s, a) in [(0usize, 0usize), (1, 2)] {
            let psi = fam.joint_score(&theta, s, a).unwrap();
            for k in [0, 5, 17, 31] {
                let mut t = theta.clone();
                t[k] += h;
                let up = fam.table(&t).unwrap().joint_prob(s, a).ln();
                t[k] -= 2.0 * h;
                let down = fam.table(&t).unwrap().joint_prob(s, a).ln();
                let fd = (up - down) / (2.0 * h);
                assert!((fd - psi[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} {}", psi[k]);
            }
        }
    }
}
