//! Experiment driver: builds environments and networks from a [`RunConfig`],
//! runs replicas and sweep cells on a worker pool, and writes their outputs.
//!
//! Per-seed randomness comes from [`SeedStream`] tags: `landmarks`,
//! `actor_init`, `critic_init`, `graph`, `chain` and `reset`. Each replica owns
//! its streams, so results do not depend on scheduling.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::actor::{train, TrainOutcome, TrainSetup};
use crate::checkpoint::{self, Sidecar};
use crate::config::{EnvKind, ResolvedSweep, RunConfig, SweepAxis};
use crate::consensus::{build_metropolis, load_matrix_csv, CommGraph, ConsensusMatrix};
use crate::env::{GridSpread, Mamdp, RestartKernel, TabularMdp};
use crate::error::{Error, Result};
use crate::nn::FcNet;
use crate::runlog::{write_critic_csv, write_csv, RunLog, RunSummary, StepRecord};
use crate::seed::SeedStream;
use crate::stats::{mean_ci, moving_average, wilcoxon_signed_rank_greater, ConfidenceInterval};

/// Moving-average window used for every exported curve.
pub const MOVING_AVERAGE_WINDOW: usize = 5;

/// Everything one replica produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub log: RunLog,
    pub steps: Vec<StepRecord>,
    pub outcome: TrainOutcome,
}

pub fn build_consensus(cfg: &RunConfig, n: usize, stream: &SeedStream) -> Result<ConsensusMatrix> {
    let graph = CommGraph::from_topology(&cfg.consensus.topology, n, &mut stream.rng("graph", 0))?;
    match &cfg.consensus.matrix_file {
        Some(p) => ConsensusMatrix::from_matrix(load_matrix_csv(p)?, &graph),
        None => build_metropolis(&graph),
    }
}

/// Actors get independent initializations; critics share one `W(0)` so the
/// projection ball has a common center.
pub fn init_networks<E: Mamdp + ?Sized>(cfg: &RunConfig, env: &E, stream: &SeedStream) -> Result<(Vec<FcNet>, Vec<FcNet>)> {
    let (m, d) = (cfg.network.width, cfg.network.depth);
    let actors = (0..env.n_agents())
        .map(|i| FcNet::init(m, d, env.state_dim(), env.n_local_actions(i), stream.derive("actor_init", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let critic = FcNet::init(m, d, env.sa_dim(), 1, stream.derive("critic_init", 0))?;
    Ok((actors, vec![critic; env.n_agents()]))
}

fn run_on<E: Mamdp>(cfg: &RunConfig, seed: u64, base: E, axis: Option<(String, String)>) -> Result<RunResult> {
    let stream = SeedStream::new(seed);
    let mut env = RestartKernel::new(base, cfg.gamma)?;
    let (actors, critics) = init_networks(cfg, &env, &stream)?;
    let setup = TrainSetup {
        actor: cfg.actor,
        critic: cfg.critic_config(),
        consensus: build_consensus(cfg, env.n_agents(), &stream)?,
        t_gossip: cfg.consensus.t_gossip,
        episode_len: cfg.environment.episode_len,
        critic_warm_start: cfg.critic.warm_start,
        log_critic: cfg.critic.log,
    };
    let mut outcome = train(&setup, &mut env, actors, critics, &mut stream.rng("chain", 0), &mut stream.rng("reset", 0))?;
    let log = RunLog {
        config_hash: cfg.hash(),
        seed,
        axis,
        episodes: std::mem::take(&mut outcome.episodes),
    };
    let steps = std::mem::take(&mut outcome.steps);
    Ok(RunResult { log, steps, outcome })
}

/// One replica of `cfg` under `seed`. `cfg` is validated first.
pub fn run_single(cfg: &RunConfig, seed: u64, axis: Option<(String, String)>) -> Result<RunResult> {
    cfg.validate()?;
    let stream = SeedStream::new(seed);
    match cfg.environment.kind {
        EnvKind::GridSpread => {
            let grid = cfg.environment.grid();
            let mut landmark_rng = match grid.landmark_seed {
                Some(s) => SeedStream::new(s).rng("landmarks", 0),
                None => stream.rng("landmarks", 0),
            };
            run_on(cfg, seed, GridSpread::new(grid, &mut landmark_rng)?, axis)
        }
        EnvKind::Tabular => {
            let path = cfg
                .environment
                .tabular_path
                .as_ref()
                .ok_or_else(|| Error::config("environment.tabular_path", "required for tabular environments"))?;
            let mdp = TabularMdp::load_json(path)?.with_gamma(cfg.gamma)?;
            run_on(cfg, seed, mdp, axis)
        }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))
}

/// One replica to run: config, seed and optional `(axis, value)` label.
pub type Job = (RunConfig, u64, Option<(String, String)>);

/// Runs every job on `jobs` workers, preserving order.
pub fn run_many(jobs: usize, work: &[Job]) -> Result<Vec<RunResult>> {
    pool(jobs)?.install(|| work.par_iter().map(|(c, s, a)| run_single(c, *s, a.clone())).collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run_log_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run_seed{seed}.jsonl"))
}

/// Writes the JSONL log, checkpoints and, if enabled, the critic log of one
/// replica into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, run: &RunResult) -> Result<()> {
    create_dir(dir)?;
    run.log.write_jsonl(&run_log_path(dir, run.log.seed))?;
    let ckpt = dir.join("checkpoints");
    create_dir(&ckpt)?;
    let seed = run.log.seed;
    for (role, nets) in [("actor", &run.outcome.actors), ("critic", &run.outcome.critics)] {
        for (i, net) in nets.iter().enumerate() {
            let side = Sidecar {
                format_version: checkpoint::FORMAT_VERSION,
                config_hash: run.log.config_hash.clone(),
                seed,
                role: role.into(),
                agent: i,
            };
            checkpoint::save(&ckpt.join(format!("{role}_{i}_seed{seed}.bin")), net, &side)?;
        }
    }
    if cfg.critic.log {
        write_critic_csv(&dir.join(format!("critic_seed{seed}.csv")), &run.outcome.critic_log)?;
    }
    Ok(())
}

/// `train`: every seed of `cfg`, written to `out`. Returns the summaries.
pub fn train_all(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let work: Vec<_> = cfg.seeds.iter().map(|&s| (cfg.clone(), s, None)).collect();
    let runs = run_many(jobs, &work)?;
    create_dir(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(out, e))?;
    for r in &runs {
        write_run(out, cfg, r)?;
    }
    let summaries: Vec<RunSummary> = runs.iter().map(|r| RunSummary::of(&r.log)).collect();
    write_csv(&out.join("summary.csv"), &summaries)?;
    Ok(summaries)
}

/// Aggregate of one sweep cell across replicas.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub logs: Vec<RunLog>,
}

impl CellResult {
    pub fn final_means(&self) -> Vec<f64> {
        self.logs.iter().map(|l| l.window_means().1).collect()
    }
    pub fn first_means(&self) -> Vec<f64> {
        self.logs.iter().map(|l| l.window_means().0).collect()
    }
    /// Per-episode reward averaged over replicas.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.logs.iter().map(|l| l.episodes.len()).min().unwrap_or(0);
        (0..n)
            .map(|e| self.logs.iter().map(|l| l.episodes[e].raw_reward).sum::<f64>() / self.logs.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub axis: String,
    pub axis_value: String,
    pub replicas: usize,
    pub first_window_mean: f64,
    pub final_window_mean: f64,
    pub final_ci_lo: f64,
    pub final_ci_hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub axis: String,
    /// One-sided alternative: `greater` final-window mean exceeds `lesser`'s.
    pub greater: String,
    pub lesser: String,
    pub w_plus: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub axis: SweepAxis,
    pub cells: Vec<CellResult>,
}

impl AblationReport {
    pub fn cell(&self, label: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.label == label)
    }

    pub fn final_ci(&self, label: &str) -> Result<ConfidenceInterval> {
        let c = self.cell(label).ok_or_else(|| Error::Domain(format!("no sweep cell `{label}`")))?;
        mean_ci(&c.final_means(), 0.95)
    }

    pub fn summaries(&self) -> Result<Vec<CellSummary>> {
        self.cells
            .iter()
            .map(|c| {
                let finals = c.final_means();
                let firsts = c.first_means();
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let (lo, hi) = if finals.len() >= 2 {
                    let ci = mean_ci(&finals, 0.95)?;
                    (ci.lo, ci.hi)
                } else {
                    (f64::NAN, f64::NAN)
                };
                Ok(CellSummary {
                    axis: self.axis.name().into(),
                    axis_value: c.label.clone(),
                    replicas: c.logs.len(),
                    first_window_mean: mean(&firsts),
                    final_window_mean: mean(&finals),
                    final_ci_lo: lo,
                    final_ci_hi: hi,
                })
            })
            .collect()
    }

    /// Paired one-sided Wilcoxon test of `a > b` on final-window means.
    pub fn compare(&self, a: &str, b: &str) -> Result<Comparison> {
        let get = |l: &str| self.cell(l).ok_or_else(|| Error::Domain(format!("no sweep cell `{l}`")));
        let r = wilcoxon_signed_rank_greater(&get(a)?.final_means(), &get(b)?.final_means())?;
        Ok(Comparison {
            axis: self.axis.name().into(),
            greater: a.into(),
            lesser: b.into(),
            w_plus: r.w_plus,
            p_value: r.p_value,
        })
    }

    /// Every ordered pair of cells.
    pub fn comparisons(&self) -> Result<Vec<Comparison>> {
        let mut out = Vec::new();
        for a in &self.cells {
            for b in &self.cells {
                if a.label != b.label {
                    out.push(self.compare(&a.label, &b.label)?);
                }
            }
        }
        Ok(out)
    }
}

/// One row of the aggregate curve CSV.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub axis_value: String,
    pub episode: usize,
    pub mean_reward: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub moving_avg: f64,
}

fn curve_rows(cell: &CellResult) -> Result<Vec<CurveRow>> {
    let curve = cell.mean_curve();
    let ma = moving_average(&curve, MOVING_AVERAGE_WINDOW);
    curve
        .iter()
        .enumerate()
        .map(|(e, &m)| {
            let (lo, hi) = if cell.logs.len() >= 2 {
                let v: Vec<f64> = cell.logs.iter().map(|l| l.episodes[e].raw_reward).collect();
                let ci = mean_ci(&v, 0.95)?;
                (ci.lo, ci.hi)
            } else {
                (m, m)
            };
            Ok(CurveRow {
                axis_value: cell.label.clone(),
                episode: e,
                mean_reward: m,
                ci_lo: lo,
                ci_hi: hi,
                moving_avg: ma[e],
            })
        })
        .collect()
}

/// Runs every cell and replica without writing anything.
pub fn run_sweep(sweep: &ResolvedSweep, jobs: usize) -> Result<AblationReport> {
    let cells = sweep.cells()?;
    let mut work = Vec::new();
    for c in &cells {
        for &s in &c.config.seeds {
            work.push((c.config.clone(), s, Some((sweep.axis.name().to_string(), c.value.label()))));
        }
    }
    let mut runs = run_many(jobs, &work)?.into_iter();
    let cells = cells
        .iter()
        .map(|c| CellResult {
            label: c.value.label(),
            logs: runs.by_ref().take(c.config.seeds.len()).map(|r| r.log).collect(),
        })
        .collect();
    Ok(AblationReport { axis: sweep.axis, cells })
}

/// `ablate`: runs the sweep, writes per-replica logs under
/// `out/<axis>/<value>/`, plus `curves_<axis>.csv`, `summary_<axis>.csv` and
/// `comparisons_<axis>.csv`.
pub fn ablate(sweep: &ResolvedSweep, out: &Path, jobs: usize) -> Result<AblationReport> {
    let report = run_sweep(sweep, jobs)?;
    let axis = sweep.axis.name();
    for c in &report.cells {
        let dir = out.join(axis).join(&c.label);
        create_dir(&dir)?;
        for log in &c.logs {
            log.write_jsonl(&run_log_path(&dir, log.seed))?;
        }
    }
    let mut curves = Vec::new();
    for c in &report.cells {
        curves.extend(curve_rows(c)?);
    }
    write_csv(&out.join(format!("curves_{axis}.csv")), &curves)?;
    write_csv(&out.join(format!("summary_{axis}.csv")), &report.summaries()?)?;
    write_csv(&out.join(format!("comparisons_{axis}.csv")), &report.comparisons()?)?;
    Ok(report)
}

/// One row of the long-format plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotRow {
    pub episode: usize,
    pub seed: u64,
    pub axis_value: String,
    pub raw_reward: f64,
    pub moving_avg: f64,
}

pub fn plot_rows(logs: &[RunLog]) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for log in logs {
        let rewards = log.raw_rewards();
        let ma = moving_average(&rewards, MOVING_AVERAGE_WINDOW);
        let value = log.axis.as_ref().map(|a| a.1.clone()).unwrap_or_default();
        for (e, (&r, &m)) in rewards.iter().zip(&ma).enumerate() {
            rows.push(PlotRow {
                episode: log.episodes[e].episode,
                seed: log.seed,
                axis_value: value.clone(),
                raw_reward: r,
                moving_avg: m,
            });
        }
    }
    rows
}

/// `plotdata`: reads run logs and writes one long CSV.
pub fn plotdata(paths: &[PathBuf], out: &Path) -> Result<usize> {
    let logs = paths.iter().map(|p| RunLog::read_jsonl(p)).collect::<Result<Vec<_>>>()?;
    let rows = plot_rows(&logs);
    write_csv(out, &rows)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.environment.width = 4;
        c.environment.height = 3;
        c.environment.episode_len = 5;
        c.network.width = 6;
        c.network.depth = 2;
        c.actor.iterations = 40;
        c.seeds = vec![3, 4];
        c
    }

    #[test]
    fn replicas_are_deterministic() {
        let c = tiny();
        let a = run_single(&c, 3, None).unwrap();
        let b = run_single(&c, 3, None).unwrap();
        assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
        assert_eq!(a.log.episodes.len(), 8);
        let other = run_single(&c, 4, None).unwrap();
        assert_ne!(a.log.to_jsonl(), other.log.to_jsonl());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let c = tiny();
        let work: Vec<_> = c.seeds.iter().map(|&s| (c.clone(), s, None)).collect();
        let one = run_many(1, &work).unwrap();
        let four = run_many(4, &work).unwrap();
        for (x, y) in one.iter().zip(&four) {
            assert_eq!(x.log.to_jsonl(), y.log.to_jsonl());
        }
    }

    #[test]
    fn train_all_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.critic.log = true;
        let s = train_all(&c, dir.path(), 2).unwrap();
        assert_eq!(s.len(), 2);
        for seed in [3, 4] {
            let log = RunLog::read_jsonl(&run_log_path(dir.path(), seed)).unwrap();
            assert_eq!(log.episodes.len(), 8);
            assert!(dir.path().join(format!("critic_seed{seed}.csv")).exists());
            let (net, side) = checkpoint::load(&dir.path().join(format!("checkpoints/actor_1_seed{seed}.bin"))).unwrap();
            assert_eq!(side.config_hash, c.hash());
            assert_eq!(net.width(), 6);
        }
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn plot_rows_follow_logs() {
        let c = tiny();
        let logs: Vec<RunLog> = [3, 4].iter().map(|&s| run_single(&c, s, Some(("width".into(), "6".into()))).unwrap().log).collect();
        let rows = plot_rows(&logs);
        assert_eq!(rows.len(), 16);
        assert!(rows.iter().all(|r| r.axis_value == "6"));
        assert!((rows[7].moving_avg - logs[0].raw_rewards()[3..8].iter().sum::<f64>() / 5.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_cells_are_paired_and_written() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = ResolvedSweep::new(tiny(), SweepAxis::Signal, 3, 1);
        let report = ablate(&sweep, dir.path(), 2).unwrap();
        assert_eq!(report.cells.len(), 2);
        let seeds: Vec<u64> = report.cells[0].logs.iter().map(|l| l.seed).collect();
        assert_eq!(seeds, report.cells[1].logs.iter().map(|l| l.seed).collect::<Vec<_>>());
        for f in ["curves_signal.csv", "summary_signal.csv", "comparisons_signal.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(report.compare("td", "q").unwrap().p_value <= 1.0);
    }
}
