use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use otafeel::config::{load_scenario, ScenarioConfig};
use otafeel::experiments::{design_block, design_crb, pareto_at, pareto_for, run_seeds, write_convergence, write_pareto, write_run};
use otafeel::export::{export_metrics, write_metadata, SslRow};
use otafeel::feel::{Baseline, World};
use otafeel::ssl::{SslParams, SslReport};
use otafeel::{Error, Result};

/// Over-the-air federated learning with collaborative target localization.
///
/// Exit status: 0 on success, 2 on configuration errors, 3 when the sensing
/// constraint is infeasible, 1 otherwise.
#[derive(Parser)]
#[command(name = "otafeel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Scenario {
    /// Scenario JSON; the built-in default when omitted.
    #[arg(long, visible_alias = "scenario")]
    config: Option<PathBuf>,
}

impl Scenario {
    fn load(&self) -> Result<ScenarioConfig> {
        match &self.config {
            Some(p) => load_scenario(p),
            None => Ok(ScenarioConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run baselines over seeds; writes rounds.csv and run.json.
    Run {
        #[command(flatten)]
        scenario: Scenario,
        /// Number of seeds, starting at --first-seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// Comma-separated baseline names.
        #[arg(long, value_delimiter = ',', default_value = "collabsensefed,perfect_feel,ota_feel,single_shot")]
        baselines: Vec<String>,
        /// Overrides the scenario's round count.
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, visible_alias = "out-dir", default_value = "out")]
        out: PathBuf,
    },
    /// Design the beamformers of one coherence block; writes solution JSON and convergence CSV.
    SolveMoop {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// Overrides the scenario's epsilon0.
        #[arg(long)]
        epsilon0: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep epsilon0 and write the resulting front.
    Pareto {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// Log-spaced points between the bound floor and the unconstrained design.
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Explicit comma-separated epsilon0 values; overrides --points.
        #[arg(long, value_delimiter = ',')]
        epsilon0_list: Option<Vec<f64>>,
        #[arg(long, default_value = "out/pareto.csv")]
        out: PathBuf,
    },
    /// Print the sensing bounds of one block's design as JSON.
    Crb {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        block: usize,
    },
    /// Sensing signaling load over a list of antenna counts.
    Ssl {
        #[arg(long, default_value_t = 10)]
        k: u64,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
        m: Vec<u64>,
        /// Echo samples per antenna.
        #[arg(long, default_value_t = 200)]
        s: u64,
        #[arg(long, default_value_t = 3)]
        d: u64,
        #[arg(long, default_value_t = 50)]
        rounds: u64,
        #[arg(long, default_value_t = 5)]
        tau: u64,
        #[arg(long, default_value = "out/ssl.csv")]
        out: PathBuf,
    },
    /// Quick end-to-end check on a reduced scenario.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn with_epsilon(mut cfg: ScenarioConfig, epsilon0: Option<f64>) -> Result<ScenarioConfig> {
    if let Some(e) = epsilon0 {
        cfg.solver.epsilon0 = e;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { scenario, seeds, first_seed, baselines, rounds, out } => {
            let mut cfg = scenario.load()?;
            if let Some(r) = rounds {
                cfg.protocol.rounds = r;
                cfg.validate()?;
            }
            let baselines = baselines.iter().map(|b| b.trim().parse()).collect::<Result<Vec<Baseline>>>()?;
            let seeds: Vec<u64> = (first_seed..first_seed + seeds).collect();
            info!("running {} baseline(s) on {} seed(s)", baselines.len(), seeds.len());
            let runs = run_seeds(&cfg, &baselines, &seeds)?;
            write_run(&out, &cfg, &baselines, &runs)?;
            for r in &runs {
                for o in &r.outputs {
                    if let Some(l) = o.logs.last() {
                        println!("seed {} {:<16} sensing_mse {:>10.4} accuracy {:.4}", r.seed, o.baseline.name(), l.sensing_mse, l.task_accuracy);
                    }
                }
            }
            info!("wrote {}", out.display());
        }
        Command::SolveMoop { scenario, seed, block, epsilon0, out } => {
            let world = World::new(&with_epsilon(scenario.load()?, epsilon0)?, seed)?;
            let sol = design_block(&world, block)?;
            write_metadata(&sol, &out.join("solution.json"))?;
            write_convergence(&out.join("convergence.csv"), &format!("seed{seed}-block{block}"), &sol)?;
            println!("mse {:.6e} crb_l {:.6e} iters {} converged {}", sol.mse, sol.crb_l, sol.iters, sol.converged);
        }
        Command::Pareto { scenario, seed, block, points, epsilon0_list, out } => {
            let world = World::new(&scenario.load()?, seed)?;
            let front = match epsilon0_list {
                Some(list) => pareto_at(&world, block, &list)?,
                None => pareto_for(&world, block, points)?,
            };
            write_pareto(&out, &front)?;
            for p in &front.points {
                println!("epsilon0 {:.6e} crb_l {:.6e} mse {:.6e}", p.epsilon0, p.crb_l, p.mse);
            }
            for (e, why) in &front.skipped {
                println!("skipped epsilon0 {e:.6e}: {why}");
            }
        }
        Command::Crb { scenario, seed, block } => {
            let world = World::new(&scenario.load()?, seed)?;
            let sol = design_block(&world, block)?;
            let report = design_crb(&world, &sol)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Parameter(e.to_string()))?);
        }
        Command::Ssl { k, m, s, d, rounds, tau, out } => {
            let reports = SslReport::sweep_antennas(SslParams { k, m: 1, s, d, rounds, tau }, &m)?;
            export_metrics(&reports.iter().map(SslRow::from).collect::<Vec<_>>(), &out)?;
            for r in &reports {
                println!("M {:>3} centralized {:>8} distributed {:>4}", r.params.m, r.centralized, r.distributed);
            }
        }
        Command::Selftest => selftest()?,
    }
    Ok(())
}

fn selftest() -> Result<()> {
    let check = |ok: bool, what: &str| -> Result<()> {
        println!("{} {what}", if ok { "ok  " } else { "FAIL" });
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("selftest: {what}")))
        }
    };
    check(otafeel::ssl::ssl_centralized(10, 8, 200) == 32_000, "centralized signaling load")?;
    check(otafeel::ssl::ssl_distributed(3, 50, 5) == 30, "distributed signaling load")?;
    let mut cfg = ScenarioConfig { k: 4, n: 8, t: 8, ..ScenarioConfig::default() };
    cfg.geometry.rho_grid = [5, 5, 2];
    cfg.protocol.rounds = 6;
    cfg.protocol.train_samples = 400;
    cfg.protocol.test_samples = 200;
    let runs = run_seeds(&cfg, &[Baseline::CollabSenseFed], &[0])?;
    let logs = &runs[0].outputs[0].logs;
    check(logs.len() == 6 && logs.iter().all(|l| l.sensing_mse.is_finite() && l.task_loss.is_finite()), "reduced joint run")?;
    let dir = std::env::temp_dir().join(format!("otafeel-selftest-{}", std::process::id()));
    write_run(&dir, &cfg, &[Baseline::CollabSenseFed], &runs)?;
    check(Path::new(&dir.join("rounds.csv")).exists(), "metric export")?;
    std::fs::remove_dir_all(&dir).map_err(|source| Error::Io { path: dir, source })?;
    Ok(())
}
