//! `decac`: train, ablate, verify and export plot data.
//!
//! Exit codes: 0 on success, 2 for invalid configuration, 1 for any other
//! failure (including an empty log glob or a failing verify check).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decac_core::config::{RunConfig, SweepSpec, PAPER_REPETITIONS};
use decac_core::error::Error;
use decac_core::harness;
use decac_core::verify::{self, Mutations};

#[derive(Parser)]
#[command(name = "decac", version, about = "Decentralized neural actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunOpts {
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, env = "DECAC_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for replicas and sweep cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Use the full-length horizon (and repetition count for sweeps).
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config.
    Train {
        config: PathBuf,
        /// Run this single seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run an ablation sweep.
    Ablate {
        sweep: PathBuf,
        /// Master seed for the replica streams; overrides the sweep file.
        #[arg(long)]
        seed: Option<u64>,
        /// Replicas per cell; overrides the sweep file.
        #[arg(long)]
        repetitions: Option<usize>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run the built-in property and oracle checks.
    Verify {
        /// Corrupt the analytic network gradient (negative control).
        #[arg(long, hide = true)]
        mutate_gradient: bool,
    },
    /// Merge run logs into one long-format CSV.
    Plotdata {
        /// Glob matching JSONL run logs.
        pattern: String,
        /// Output CSV; defaults to `plotdata.csv` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let mut cur = e;
    while let Error::Aborted { source, .. } = cur {
        cur = source;
    }
    match cur {
        Error::Config { .. } | Error::Parse { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn out_dir(opts: &RunOpts, cfg_dir: Option<&Path>) -> PathBuf {
    opts.out.clone().or_else(|| cfg_dir.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("runs"))
}

fn train(config: &Path, seed: Option<u64>, opts: &RunOpts) -> Result<(), Error> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if opts.paper_scale {
        cfg.apply_paper_scale();
    }
    cfg.validate()?;
    let out = out_dir(opts, cfg.output_dir.as_deref());
    for s in harness::train_all(&cfg, &out, opts.jobs.max(1))? {
        println!(
            "seed {}: {} episodes, first-window reward {:.4}, final-window reward {:.4}, config {} -> {}",
            s.seed,
            s.episodes,
            s.first_window_mean,
            s.final_window_mean,
            &s.config_hash[..12],
            out.display()
        );
    }
    Ok(())
}

fn ablate(path: &Path, seed: Option<u64>, repetitions: Option<usize>, opts: &RunOpts) -> Result<(), Error> {
    let mut sweep = SweepSpec::load(path)?;
    if opts.paper_scale {
        sweep.base.apply_paper_scale();
        sweep.repetitions = PAPER_REPETITIONS;
    }
    if let Some(r) = repetitions {
        sweep.repetitions = r;
    }
    if let Some(s) = seed {
        sweep.master_seed = s;
    }
    let out = out_dir(opts, sweep.base.output_dir.as_deref());
    let report = harness::ablate(&sweep, &out, opts.jobs.max(1))?;
    println!("{:<12} {:>8} {:>12} {:>12} {:>24}", sweep.axis.name(), "replicas", "first", "final", "final 95% CI");
    for s in report.summaries()? {
        println!(
            "{:<12} {:>8} {:>12.4} {:>12.4}   [{:>9.4}, {:>9.4}]",
            s.axis_value, s.replicas, s.first_window_mean, s.final_window_mean, s.final_ci_lo, s.final_ci_hi
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn run_verify(mutate_gradient: bool) -> ExitCode {
    let report = verify::run(Mutations {
        corrupt_gradient: mutate_gradient,
    });
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("consensus decay per topology:");
    for r in &report.decay {
        println!(
            "  {:<8} N={}  measured rate {:.4}  bound {:.4}  lambda2 {:.4}",
            r.topology, r.n, r.measured_rate, r.bound, r.lambda2
        );
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failing checks: {}", report.failures().join(", "));
        ExitCode::from(1)
    }
}

fn plotdata(pattern: &str, out: Option<PathBuf>) -> ExitCode {
    let paths: Vec<PathBuf> = match glob::glob(pattern) {
        Ok(g) => g.filter_map(|p| p.ok()).collect(),
        Err(e) => {
            eprintln!("error: bad glob `{pattern}`: {e}");
            return ExitCode::from(1);
        }
    };
    if paths.is_empty() {
        eprintln!("error: no run logs match `{pattern}`");
        return ExitCode::from(1);
    }
    let out = out.unwrap_or_else(|| PathBuf::from("plotdata.csv"));
    match harness::plotdata(&paths, &out) {
        Ok(rows) => {
            println!("{rows} rows from {} logs -> {}", paths.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, seed, opts } => train(config, *seed, opts),
        Command::Ablate {
            sweep,
            seed,
            repetitions,
            opts,
        } => ablate(sweep, *seed, *repetitions, opts),
        Command::Verify { mutate_gradient } => return run_verify(*mutate_gradient),
        Command::Plotdata { pattern, out } => return plotdata(pattern, out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
