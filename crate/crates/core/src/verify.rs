//! Self-check suite behind the `verify` subcommand.
//!
//! Each check exercises one property against an exact or brute-force
//! reference and reports a named pass/fail line. The suite is deterministic.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::consensus::{build_metropolis, decay_ratios, CommGraph, ConsensusMatrix};
use crate::critic::{run_centralized_critic, run_decentralized_critic, CriticConfig};
use crate::env::{Mamdp, RestartKernel};
use crate::error::Result;
use crate::nn::{project_ball, FcNet, HiddenStack};
use crate::oracle::{
    exact_objective_and_fd_gradient, random_logits, random_mdp, score_advantage_sum, stationary_restart, visitation, ParamPolicy,
    TabularSoftmax, DEFAULT_FD_STEP,
};
use crate::policy::UniformPolicy;
use crate::seed::{SeedStream, StreamRng};

/// Deliberate faults for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Mutations {
    /// Scale the analytic network gradient by `1 + 1e-2` before comparing.
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub topology: &'static str,
    pub n: usize,
    /// Geometric mean of the late per-round disagreement ratios.
    pub measured_rate: f64,
    /// `1 - eta^(N-1)`.
    pub bound: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub decay: Vec<DecayRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Slack allowed between the measured decay rate and its bound.
pub const DECAY_SLACK: f64 = 0.05;

fn normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

fn check(name: &'static str, result: Result<(bool, String)>) -> CheckResult {
    match result {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn neural_gradient(m: Mutations, seeds: &SeedStream) -> Result<(bool, String)> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = seeds.rng("verify/grad", trial);
        let width = 2 + (trial % 5) as usize;
        let depth = 1 + (trial % 3) as usize;
        let d = 2 + (trial % 4) as usize;
        let net = FcNet::init(width, depth, d, 1, seeds.derive("verify/grad/net", trial))?;
        let x = DVector::from_fn(d, |_, _| normal(&mut rng)).normalize();
        let mut g = net.grad_w(&x, 0)?.flatten();
        if m.corrupt_gradient {
            g.iter_mut().for_each(|v| *v *= 1.0 + 1e-2);
        }
        let w = net.trainable_flat(crate::nn::TrainableSet::Hidden);
        let mut probe = net.clone();
        for k in 0..w.len() {
            let mut t = w.clone();
            t[k] = w[k] + h;
            probe.set_trainable_flat(crate::nn::TrainableSet::Hidden, &t)?;
            let up = probe.value(&x)?;
            t[k] = w[k] - h;
            probe.set_trainable_flat(crate::nn::TrainableSet::Hidden, &t)?;
            let down = probe.value(&x)?;
            let fd = (up - down) / (2.0 * h);
            let err = (g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok((worst < 1e-3, format!("max relative error {worst:.2e} over 100 nets")))
}

fn visitation_identity(seeds: &SeedStream) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = seeds.rng("verify/lemma", trial);
        let n = 2 + (trial % 7) as usize;
        let gamma = 0.5 + 0.45 * (trial as f64 / 20.0);
        let mdp = random_mdp(n, &[2], gamma, &mut rng)?;
        let fam = TabularSoftmax {
            n_states: n,
            action_counts: vec![2],
        };
        let pi = fam.table(&random_logits(fam.n_params(), 1.0, &mut rng))?;
        let nu = stationary_restart(&mdp, &pi, gamma)?;
        let eta = visitation(&mdp, &pi, gamma, mdp.s0())?;
        worst = worst.max((nu - eta * (1.0 - gamma)).amax());
    }
    Ok((worst < 1e-8, format!("max |nu - (1-gamma) eta| = {worst:.2e} over 20 MDPs")))
}

fn gradient_proportionality(seeds: &SeedStream) -> Result<(bool, String)> {
    let (mut min_cos, mut worst_ratio) = (1.0f64, 0.0f64);
    for trial in 0..10u64 {
        let mut rng = seeds.rng("verify/pg", trial);
        let gamma = 0.9;
        let mdp = random_mdp(3, &[2], gamma, &mut rng)?;
        let fam = TabularSoftmax {
            n_states: 3,
            action_counts: vec![2],
        };
        let theta = random_logits(fam.n_params(), 1.0, &mut rng);
        let fd = exact_objective_and_fd_gradient(&mdp, &fam, &theta, gamma, DEFAULT_FD_STEP)?;
        let sum = score_advantage_sum(&mdp, &fam, &theta, gamma)?;
        min_cos = min_cos.min(sum.dot(&fd.grad) / (sum.norm() * fd.grad.norm()));
        worst_ratio = worst_ratio.max((fd.grad.norm() / sum.norm() * (1.0 - gamma) - 1.0).abs());
    }
    Ok((
        min_cos > 0.999 && worst_ratio < 1e-3,
        format!("min cosine {min_cos:.6}, max relative ratio error {worst_ratio:.2e}"),
    ))
}

fn random_stack(width: usize, depth: usize, scale: f64, rng: &mut StreamRng) -> HiddenStack {
    (0..depth).map(|_| DMatrix::from_fn(width, width, |_, _| scale * normal(rng))).collect()
}

fn stack_dist(a: &HiddenStack, b: &HiddenStack) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn projection(seeds: &SeedStream) -> Result<(bool, String)> {
    let mut rng = seeds.rng("verify/proj", 0);
    let (width, depth, radius) = (4, 3, 1.5);
    let center = random_stack(width, depth, 1.0, &mut rng);
    let (mut idempotent, mut feasible, mut expansive) = (true, true, 0usize);
    for _ in 0..2000 {
        let w = random_stack(width, depth, 3.0, &mut rng);
        let v = random_stack(width, depth, 3.0, &mut rng);
        let pw = project_ball(&w, &center, radius)?;
        let pv = project_ball(&v, &center, radius)?;
        idempotent &= project_ball(&pw, &center, radius)? == pw;
        feasible &= pw.iter().zip(&center).all(|(a, c)| (a - c).norm() <= radius + 1e-9);
        if stack_dist(&pw, &pv) > stack_dist(&w, &v) + 1e-12 {
            expansive += 1;
        }
    }
    Ok((
        idempotent && feasible && expansive == 0,
        format!("idempotent {idempotent}, feasible {feasible}, expansive pairs {expansive}/2000"),
    ))
}

/// Disagreement level (relative to the start) below which ratios are
/// dominated by rounding and no longer used.
const DECAY_FLOOR: f64 = 1e-9;

/// Geometric mean of the per-round disagreement ratios over the second half
/// of the rounds before the disagreement falls below [`DECAY_FLOOR`].
pub fn measured_decay_rate(a: &ConsensusMatrix, v: &DMatrix<f64>, rounds: usize) -> Result<f64> {
    let mut level = 1.0;
    let mut usable = Vec::new();
    for r in decay_ratios(a, v, rounds)? {
        level *= r;
        if level < DECAY_FLOOR {
            break;
        }
        usable.push(r);
    }
    let tail = &usable[usable.len() / 2..];
    if tail.is_empty() {
        return Ok(0.0);
    }
    Ok((tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp())
}

fn graph(name: &'static str, n: usize) -> Result<CommGraph> {
    match name {
        "ring" => CommGraph::ring(n),
        "star" => CommGraph::star(n),
        _ => CommGraph::complete(n),
    }
}

fn consensus_decay(seeds: &SeedStream) -> Result<(bool, String, Vec<DecayRow>)> {
    let mut rows = Vec::new();
    let mut ok = true;
    for name in ["ring", "star", "complete"] {
        for n in [2, 4, 8] {
            let a = build_metropolis(&graph(name, n)?)?;
            let mut rng = seeds.rng("verify/decay", n as u64);
            let v = DMatrix::from_fn(n, 3, |_, _| normal(&mut rng));
            let rate = measured_decay_rate(&a, &v, 60)?;
            let bound = a.contraction_bound();
            ok &= rate <= bound + DECAY_SLACK;
            rows.push(DecayRow {
                topology: name,
                n,
                measured_rate: rate,
                bound,
                lambda2: a.lambda2(),
            });
        }
    }
    let worst = rows.iter().map(|r| r.measured_rate - r.bound).fold(f64::NEG_INFINITY, f64::max);
    Ok((ok, format!("max (rate - bound) = {worst:.3} over 9 graphs"), rows))
}

fn double_stochasticity() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for name in ["ring", "star", "complete"] {
        for n in [2, 4, 8] {
            let a = build_metropolis(&graph(name, n)?)?;
            let mut p = DMatrix::identity(n, n);
            for _ in 0..100 {
                p = a.matrix() * p;
                for i in 0..n {
                    worst = worst.max((p.row(i).sum() - 1.0).abs()).max((p.column(i).sum() - 1.0).abs());
                }
            }
        }
    }
    Ok((worst < 1e-10, format!("max row/column sum error {worst:.2e} for t <= 100")))
}

fn single_agent_bridge(seeds: &SeedStream) -> Result<(bool, String)> {
    let gamma = 0.9;
    let mdp = random_mdp(3, &[2], gamma, &mut seeds.rng("verify/bridge", 0))?;
    let env = RestartKernel::new(mdp, gamma)?;
    let net = FcNet::init(8, 2, env.sa_dim(), 1, seeds.derive("verify/bridge/net", 0))?;
    let cfg = CriticConfig {
        iterations: 200,
        beta: 0.05,
        radius: 2.0,
        gamma,
    };
    let a = build_metropolis(&CommGraph::complete(1)?)?;
    let dec = run_decentralized_critic(&env, &UniformPolicy, std::slice::from_ref(&net), &0, &cfg, &a, 3, &mut seeds.rng("verify/bridge/chain", 0))?;
    let cen = run_centralized_critic(&env, &UniformPolicy, &net, &0, &cfg, false, &mut seeds.rng("verify/bridge/chain", 0))?;
    let same = dec.gossiped.row(0).iter().zip(&cen.average).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same && dec.last_state == cen.last_state, format!("bit-identical averages: {same}")))
}

/// Runs the full suite.
pub fn run(mutations: Mutations) -> VerifyReport {
    let seeds = SeedStream::new(0x5eed);
    let mut checks = vec![
        check("neural gradient", neural_gradient(mutations, &seeds)),
        check("visitation identity", visitation_identity(&seeds)),
        check("policy-gradient proportionality", gradient_proportionality(&seeds)),
        check("projection", projection(&seeds)),
    ];
    let decay = match consensus_decay(&seeds) {
        Ok((passed, detail, rows)) => {
            checks.push(CheckResult {
                name: "consensus decay",
                passed,
                detail,
            });
            rows
        }
        Err(e) => {
            checks.push(CheckResult {
                name: "consensus decay",
                passed: false,
                detail: format!("error: {e}"),
            });
            Vec::new()
        }
    };
    checks.push(check("double stochasticity", double_stochasticity()));
    checks.push(check("single-agent equivalence", single_agent_bridge(&seeds)));
    VerifyReport { checks, decay }
}
