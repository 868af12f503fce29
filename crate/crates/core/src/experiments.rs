//! Orchestration over seeds and baselines, and the files a run leaves behind.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::crb::{crb_report, CrbReport};
use crate::error::Result;
use crate::export::{export_metrics, write_metadata, ConvergenceRow, ParetoRow, RoundRow};
use crate::feel::{run_baseline, Baseline, LearningTask, RunOptions, RunOutput, World};
use crate::geometry::Position3;
use crate::moop::{bcd_solve, epsilon0_span, log_spaced, pareto_sweep, MoopConfig, MoopProblem, MoopSolution, ParetoFront};
use crate::signaling::{AggregationWeights, TaskKind};

/// Every baseline of one seed, sharing world and task.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub rho: f64,
    pub target: Position3,
    pub outputs: Vec<RunOutput>,
}

impl SeedRun {
    pub fn output(&self, baseline: Baseline) -> Option<&RunOutput> {
        self.outputs.iter().find(|o| o.baseline == baseline)
    }
}

/// Runs `baselines` on every seed; seeds fan out to the thread pool and the
/// result keeps the order of `seeds`.
pub fn run_seeds(cfg: &ScenarioConfig, baselines: &[Baseline], seeds: &[u64]) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    seeds
        .par_iter()
        .map(|&seed| {
            let world = World::new(cfg, seed)?;
            let task = world.synthetic_task()?;
            let outputs = baselines
                .iter()
                .map(|&b| run_baseline(&world, &task as &dyn LearningTask, b, RunOptions::default()))
                .collect::<Result<Vec<_>>>()?;
            Ok(SeedRun { seed, rho: world.rho, target: world.target, outputs })
        })
        .collect()
}

/// Rows ordered by seed, then baseline as given, then round.
pub fn round_rows(runs: &[SeedRun]) -> Vec<RoundRow> {
    runs.iter()
        .flat_map(|r| r.outputs.iter().flat_map(move |o| o.logs.iter().map(move |l| RoundRow::new(l, o.baseline, r.seed))))
        .collect()
}

/// Seed-wise mean of a per-round metric; NaN entries propagate.
pub fn mean_curve(runs: &[SeedRun], baseline: Baseline, metric: impl Fn(&crate::feel::RoundLog) -> f64) -> Vec<f64> {
    let outs: Vec<&RunOutput> = runs.iter().filter_map(|r| r.output(baseline)).collect();
    let Some(first) = outs.first() else { return Vec::new() };
    (0..first.logs.len())
        .map(|i| outs.iter().map(|o| metric(&o.logs[i])).sum::<f64>() / outs.len() as f64)
        .collect()
}

/// Means of consecutive non-overlapping windows; a short tail forms its own window.
pub fn window_means(curve: &[f64], width: usize) -> Vec<f64> {
    curve.chunks(width.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Metric of the last round per seed, in seed order.
pub fn final_values(runs: &[SeedRun], baseline: Baseline, metric: impl Fn(&crate::feel::RoundLog) -> f64) -> Vec<f64> {
    runs.iter().filter_map(|r| r.output(baseline)).filter_map(|o| o.logs.last().map(&metric)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedMeta {
    pub seed: u64,
    pub rho: f64,
    pub target: Position3,
    /// `(baseline, per-frame tr(J^-1), accumulated tr(J^-1))` for sensing baselines.
    pub crb: Vec<(String, Option<f64>, Option<f64>)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub config: ScenarioConfig,
    pub baselines: Vec<String>,
    pub seeds: Vec<SeedMeta>,
}

impl RunMetadata {
    pub fn new(cfg: &ScenarioConfig, baselines: &[Baseline], runs: &[SeedRun]) -> Self {
        let names: Vec<String> = baselines.iter().map(|b| b.name().to_owned()).collect();
        let seeds = runs
            .iter()
            .map(|r| SeedMeta {
                seed: r.seed,
                rho: r.rho,
                target: r.target,
                crb: r
                    .outputs
                    .iter()
                    .filter(|o| o.baseline.iterative_sensing())
                    .map(|o| (o.baseline.name().to_owned(), o.crb_frame, o.crb_cumulative))
                    .collect(),
            })
            .collect();
        let seed_ids: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        Self { run_id: run_id(cfg, &names, &seed_ids), config: cfg.clone(), baselines: names, seeds }
    }
}

/// 16 hex digits identifying config, baselines and seeds (FNV-1a over their JSON).
pub fn run_id(cfg: &ScenarioConfig, baselines: &[String], seeds: &[u64]) -> String {
    let text = serde_json::to_string(&(cfg, baselines, seeds)).unwrap_or_default();
    let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{hash:016x}")
}

/// `rounds.csv` plus `run.json` in `dir`.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, baselines: &[Baseline], runs: &[SeedRun]) -> Result<()> {
    export_metrics(&round_rows(runs), &dir.join("rounds.csv"))?;
    write_metadata(&RunMetadata::new(cfg, baselines, runs), &dir.join("run.json"))
}

/// Beamformer design for one coherence block of the joint protocol.
pub fn design_block(world: &World, block: usize) -> Result<MoopSolution> {
    let task = world.synthetic_task()?;
    let weights = AggregationWeights::for_tasks(&[TaskKind::Sensing, TaskKind::Learning], &task.sample_counts())?;
    let channels = world.channels(block)?;
    bcd_solve(&world.problem(&channels, &weights), &world.cfg.solver())
}

/// Sensing bounds of a designed block at the world's target.
pub fn design_crb(world: &World, sol: &MoopSolution) -> Result<CrbReport> {
    crb_report(
        &sol.precoders,
        &world.target,
        &world.array,
        &world.devices,
        &world.region,
        world.cfg.rho_grid(),
        world.pulses.len(),
        &world.varsigma,
    )
}

/// `points` targets log-spaced over the span where the sensing constraint can
/// bind, widened to a factor of 3 when that span is narrower.
pub fn pareto_for(world: &World, block: usize, points: usize) -> Result<ParetoFront> {
    pareto_over(world, block, |problem, base| {
        let (lo, hi) = epsilon0_span(problem, base)?;
        Ok(log_spaced(lo, hi.max(3.0 * lo), points))
    })
}

/// Front over an explicit list of `epsilon0` values.
pub fn pareto_at(world: &World, block: usize, epsilons: &[f64]) -> Result<ParetoFront> {
    pareto_over(world, block, |_, _| Ok(epsilons.to_vec()))
}

fn pareto_over(world: &World, block: usize, grid: impl FnOnce(&MoopProblem<'_>, &MoopConfig) -> Result<Vec<f64>>) -> Result<ParetoFront> {
    let task = world.synthetic_task()?;
    let weights = AggregationWeights::for_tasks(&[TaskKind::Sensing, TaskKind::Learning], &task.sample_counts())?;
    let channels = world.channels(block)?;
    let problem = world.problem(&channels, &weights);
    let base = world.cfg.solver();
    pareto_sweep(&grid(&problem, &base)?, &problem, &base)
}

pub fn write_pareto(path: &Path, front: &ParetoFront) -> Result<()> {
    export_metrics(&front.points.iter().map(ParetoRow::from).collect::<Vec<_>>(), path)
}

pub fn write_convergence(path: &Path, label: &str, sol: &MoopSolution) -> Result<()> {
    export_metrics(&ConvergenceRow::from_solution(label, sol), path)
}
