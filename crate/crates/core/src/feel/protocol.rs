//! The joint learning/localization protocol over the simulated uplink, and
//! the baselines it is compared against.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DVector, Matrix3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::task::{make_synthetic_task, LearningTask, SyntheticSizes, SyntheticTask};
use crate::config::{ScenarioConfig, StatisticsMode};
use crate::crb::{compute_rho, crb, fisher_info, FisherInfo};
use crate::error::{Error, Result};
use crate::geometry::{
    place_devices, place_target, sample_rayleigh_channels, ArrayModel, ChannelSet, DeviceGeometry, Position3, TargetRegion,
    MIN_SEPARATION,
};
use crate::linalg::CVec;
use crate::moop::{bcd_solve, MoopProblem, MoopSolution};
use crate::ota::{apply_receiver, ps_receive};
use crate::seeds::{Purpose, SeedBank};
use crate::sensing::{joint_ml_oracle, single_shot_estimate, EchoModel, EchoMoments, OracleSettings, SensingContext, SufficientStatistic};
use crate::signaling::{encode_symbol, transmit_signal, AggregationWeights, PrecoderSet, PulseBook, TaskKind};

/// Targets closer than this to a device are redrawn.
pub const TARGET_CLEARANCE: f64 = 2.0 * MIN_SEPARATION;

/// One seeded instance of a scenario: placement, array, pulses and `rho`.
#[derive(Clone, Debug)]
pub struct World {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub seeds: SeedBank,
    pub devices: DeviceGeometry,
    pub target: Position3,
    pub region: TargetRegion,
    pub array: ArrayModel,
    pub pulses: PulseBook,
    pub rho: f64,
    pub varsigma2: Vec<f64>,
    pub varsigma: Vec<f64>,
}

impl World {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedBank::new(SeedBank::new(cfg.master_seed).seed(Purpose::Trials, seed));
        let ring = &cfg.geometry.devices;
        let devices = place_devices(seeds.seed(Purpose::Devices, 0), cfg.k, ring.r_in, ring.r_out, ring.arc_deg)?;
        let region = cfg.geometry.target;
        let mut target = None;
        for draw in 0..1000 {
            let v = place_target(seeds.seed(Purpose::Target, draw), &region)?;
            if devices.nearest(&v).1 >= TARGET_CLEARANCE {
                target = Some(v);
                break;
            }
        }
        let target = target.ok_or_else(|| Error::param("could not place the target clear of every device"))?;
        let array = cfg.array();
        let rho = compute_rho(&array, &devices, &region, cfg.rho_grid())?;
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            seeds,
            devices,
            target,
            region,
            array,
            pulses: PulseBook::new(cfg.pulse_family, cfg.k, cfg.t)?,
            rho,
            varsigma2: cfg.varsigma2(),
            varsigma: cfg.varsigma(),
        })
    }

    /// Channels of coherence block `block`.
    pub fn channels(&self, block: usize) -> Result<ChannelSet> {
        sample_rayleigh_channels(self.seeds.seed(Purpose::Channels, block as u64), self.cfg.k, self.cfg.n, self.cfg.m)
    }

    pub fn synthetic_task(&self) -> Result<SyntheticTask> {
        let p = &self.cfg.protocol;
        make_synthetic_task(
            self.seeds.seed(Purpose::DataSplit, 0),
            self.cfg.k,
            p.dirichlet_alpha,
            p.features,
            p.classes,
            SyntheticSizes { train: p.train_samples, test: p.test_samples },
        )
    }

    pub fn blocks(&self) -> usize {
        self.cfg.protocol.rounds.div_ceil(self.cfg.protocol.coherence_rounds)
    }

    pub fn problem<'a>(&'a self, channels: &'a ChannelSet, weights: &'a AggregationWeights) -> MoopProblem<'a> {
        MoopProblem { channels, weights, pulses: &self.pulses, sigma2: self.cfg.sigma2, rho: self.rho, varsigma: &self.varsigma }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Joint sensing and learning over the air (Setup III).
    CollabSenseFed,
    /// Learning only, noiseless orthogonal uplink.
    PerfectFeel,
    /// Learning only, over the air.
    OtaFeel,
    /// Local statistics from the first round averaged once; learning afterwards.
    SingleShot,
    /// Sensing only, noiseless orthogonal uplink (Setup I).
    SensingPerfect,
    /// Sensing only, over the air (Setup II).
    SensingOta,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::CollabSenseFed,
        Baseline::PerfectFeel,
        Baseline::OtaFeel,
        Baseline::SingleShot,
        Baseline::SensingPerfect,
        Baseline::SensingOta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::CollabSenseFed => "collabsensefed",
            Baseline::PerfectFeel => "perfect_feel",
            Baseline::OtaFeel => "ota_feel",
            Baseline::SingleShot => "single_shot",
            Baseline::SensingPerfect => "sensing_perfect",
            Baseline::SensingOta => "sensing_ota",
        }
    }

    /// Rows of the transmitted parameter vector, in order.
    pub fn tasks(self) -> Vec<TaskKind> {
        match self {
            Baseline::CollabSenseFed => vec![TaskKind::Sensing, TaskKind::Learning],
            Baseline::PerfectFeel | Baseline::OtaFeel | Baseline::SingleShot => vec![TaskKind::Learning],
            Baseline::SensingPerfect | Baseline::SensingOta => vec![TaskKind::Sensing],
        }
    }

    pub fn perfect_uplink(self) -> bool {
        matches!(self, Baseline::PerfectFeel | Baseline::SensingPerfect)
    }

    /// Whether the target estimate is refined every interval.
    pub fn iterative_sensing(self) -> bool {
        self.tasks().contains(&TaskKind::Sensing)
    }

    pub fn learns(self) -> bool {
        self.tasks().contains(&TaskKind::Learning)
    }

    /// Whether devices transmit through designed precoders (and so illuminate the target).
    pub fn transmits(self) -> bool {
        self != Baseline::PerfectFeel
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(vec![format!("baseline: unknown name {s:?}")]))
    }
}

/// Beamformers of one coherence block.
#[derive(Clone, Debug)]
pub struct BlockDesign {
    pub channels: ChannelSet,
    pub solution: MoopSolution,
}

/// Per-block designs for one baseline; empty for a perfect uplink without transmissions.
#[derive(Clone, Debug)]
pub struct BeamformerSchedule {
    pub tasks: Vec<TaskKind>,
    pub weights: AggregationWeights,
    pub blocks: Vec<BlockDesign>,
}

/// Solves the beamformer design once per coherence block. The sensing
/// constraint applies only when a sensing row is present.
pub fn design_schedule(world: &World, tasks: &[TaskKind], samples: &[usize]) -> Result<BeamformerSchedule> {
    let weights = AggregationWeights::for_tasks(tasks, samples)?;
    let mut solver = world.cfg.solver();
    if !tasks.contains(&TaskKind::Sensing) {
        solver.epsilon0 = f64::MAX;
    }
    let blocks = (0..world.blocks())
        .into_par_iter()
        .map(|b| {
            let channels = world.channels(b)?;
            let solution = bcd_solve(&world.problem(&channels, &weights), &solver)?;
            Ok(BlockDesign { channels, solution })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamformerSchedule { tasks: tasks.to_vec(), weights, blocks })
}

/// Per-round metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based.
    pub round: usize,
    /// `||v - v_hat||^2`, m^2; NaN when the baseline does not localize.
    pub sensing_mse: f64,
    /// Mean squared aggregation error per interval, in standardized units.
    pub agg_mse: f64,
    pub task_loss: f64,
    pub task_accuracy: f64,
    /// Sensing lower bound of the round's beamformers; NaN without a sensing row.
    pub crb_l: f64,
}

/// Server-side state.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolState {
    pub v_est: Position3,
    pub model: Vec<f64>,
    /// 0-based round.
    pub round: usize,
    /// 0-based interval within the round.
    pub interval: usize,
}

/// What one interval's aggregation produced versus the exact weighted sums.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTrace {
    pub round: usize,
    pub interval: usize,
    /// Recovered aggregates per task row, in standardized units.
    pub recovered: Vec<f64>,
    /// `sum_k w_k g_k` per task row, in standardized units.
    pub exact: Vec<f64>,
    /// Common scales that turn standardized units back into raw gradients.
    pub scales: Vec<f64>,
    pub v_before: Position3,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub record_trace: bool,
    /// Keep every statistic the devices used, keyed by the round it was used in.
    pub record_stats: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub baseline: Baseline,
    pub seed: u64,
    pub logs: Vec<RoundLog>,
    pub final_state: ProtocolState,
    /// Mean squared aggregation error per task row over the run.
    pub task_agg_mse: Vec<f64>,
    /// `tr(J^-1)` at the true target for one frame with the last block's beamformers.
    pub crb_frame: Option<f64>,
    /// `tr(J^-1)` at the true target accumulated over every sensed interval.
    pub crb_cumulative: Option<f64>,
    pub trace: Vec<IntervalTrace>,
    /// `(round, statistics)` pairs, one per change of statistics.
    pub stats_log: Vec<(usize, Vec<SufficientStatistic>)>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn pilot<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Runs one baseline end to end.
///
/// Per round the devices first take their local learning steps, then for each
/// of the `d` intervals transmit `[sensing entry, model entry]` (rows per
/// [`Baseline::tasks`]) through their precoders. The server aggregates,
/// moves coordinate `t mod 3` of the target estimate against the clipped
/// sensing aggregate (step `eta_v`, decayed per round) and adds the model
/// aggregate to entry `t`.
/// Devices collect echoes of their own transmissions and refresh their
/// statistics at every pulse-frame boundary.
///
/// Standardization uses one scale per row and round shared by all devices
/// (the largest device RMS), so the superposed sum can be rescaled exactly.
/// Until the first statistic exists the sensing row carries random +-1 pilots.
pub fn run_protocol(
    world: &World,
    task: &dyn LearningTask,
    baseline: Baseline,
    schedule: Option<&BeamformerSchedule>,
    opts: RunOptions,
) -> Result<RunOutput> {
    let cfg = &world.cfg;
    let p = &cfg.protocol;
    let k_dev = cfg.k;
    if task.devices() != k_dev {
        return Err(Error::dim(format!("task has {} devices, scenario {k_dev}", task.devices())));
    }
    let d = task.dim();
    let frame = world.pulses.len();
    let tasks = baseline.tasks();
    let sens_row = tasks.iter().position(|t| *t == TaskKind::Sensing);
    let learn_row = tasks.iter().position(|t| *t == TaskKind::Learning);
    let samples = task.sample_counts();
    let weights = match schedule {
        Some(s) => {
            if s.tasks != tasks || s.blocks.len() < world.blocks() {
                return Err(Error::param(format!("schedule does not match baseline {baseline}")));
            }
            s.weights.clone()
        }
        None if baseline.transmits() => return Err(Error::param(format!("baseline {baseline} needs a beamformer schedule"))),
        None => AggregationWeights::for_tasks(&tasks, &samples)?,
    };
    let echo = EchoModel::new(&world.array, &world.devices, &world.target)?;
    let ctx = SensingContext::new(&world.array, &world.devices);
    let mut state = ProtocolState { v_est: world.region.center(), model: task.initial_model(), round: 0, interval: 0 };
    let mut frame_moments = vec![EchoMoments::new(cfg.m); k_dev];
    let mut total_moments = vec![EchoMoments::new(cfg.m); k_dev];
    let mut stats: Option<Vec<SufficientStatistic>> = None;
    let mut pilot_rng = world.seeds.rng(Purpose::ProtocolInit, 0);
    let mut tau = 0usize;
    let mut sensed_intervals = vec![0usize; world.blocks()];
    let mut agg_sq = vec![0.0; tasks.len()];
    let mut agg_n = 0usize;
    let mut out = RunOutput {
        baseline,
        seed: world.seed,
        logs: Vec::with_capacity(p.rounds),
        final_state: state.clone(),
        task_agg_mse: Vec::new(),
        crb_frame: None,
        crb_cumulative: None,
        trace: Vec::new(),
        stats_log: Vec::new(),
    };
    let k_scale = k_dev as f64;

    for round in 0..p.rounds {
        let eta_round = if p.eta_v_decay > 0.0 { p.eta_v / (1.0 + round as f64 / p.eta_v_decay).sqrt() } else { p.eta_v };
        state.round = round;
        let block = round / p.coherence_rounds;
        let design = schedule.map(|s| &s.blocks[block]);
        let mut noise_rng = world.seeds.rng(Purpose::UplinkNoise, round as u64);
        let mut echo_rng = world.seeds.rng(Purpose::EchoNoise, round as u64);
        // the single-shot baseline spends its first round on the statistic upload
        let upload_round = baseline == Baseline::SingleShot && round == 0;
        let deltas: Option<Vec<Vec<f64>>> = (baseline.learns() && !upload_round).then(|| {
            (0..k_dev).into_par_iter().map(|k| task.local_update(&state.model, k, p.local_epochs, p.eta_model)).collect()
        });
        let s_learn = deltas.as_ref().map_or(0.0, |ds| ds.iter().map(|v| rms(v)).fold(0.0, f64::max));
        let sensing_live = baseline.iterative_sensing() && stats.is_some();
        let s_sense = match (&stats, sensing_live) {
            (Some(st), true) => st
                .iter()
                .map(|s| ctx.local_loss_grad(s, &state.v_est).map(|g| rms(&g)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max),
            _ => 0.0,
        };
        let illuminates = baseline.iterative_sensing() || upload_round;
        let mut round_sq = 0.0;

        for t in 0..d {
            state.interval = t;
            let pt = tau % frame;
            let coord = t % 3;
            let sense_grads: Option<Vec<f64>> = match (&stats, sensing_live && s_sense > 0.0) {
                (Some(st), true) => Some(
                    st.iter()
                        .map(|s| ctx.local_loss_grad(s, &state.v_est).map(|g| g[coord] / s_sense))
                        .collect::<Result<Vec<_>>>()?,
                ),
                _ => None,
            };
            let symbols: Vec<DVector<f64>> = (0..k_dev)
                .map(|k| {
                    DVector::from_fn(tasks.len(), |row, _| {
                        if Some(row) == sens_row {
                            match &sense_grads {
                                Some(g) => g[k],
                                None => pilot(&mut pilot_rng),
                            }
                        } else if upload_round {
                            pilot(&mut pilot_rng)
                        } else {
                            deltas.as_ref().map_or(0.0, |ds| if s_learn > 0.0 { ds[k][t] / s_learn } else { 0.0 })
                        }
                    })
                })
                .collect();
            let exact: Vec<f64> =
                (0..tasks.len()).map(|row| (0..k_dev).map(|k| weights.w[k][row] * symbols[k][row]).sum()).collect();
            let recovered = match design {
                Some(des) => {
                    let pre = &des.solution.precoders;
                    let xs: Vec<CVec> = (0..k_dev)
                        .map(|k| transmit_signal(&encode_symbol(&pre.c[k], &symbols[k])?, world.pulses.pulse(k, pt)))
                        .collect::<Result<_>>()?;
                    if illuminates {
                        let us = echo.receive_all(&xs, &mut echo_rng, &world.varsigma2)?;
                        for k in 0..k_dev {
                            frame_moments[k].push(&us[k], &xs[k]);
                            total_moments[k].push(&us[k], &xs[k]);
                        }
                        sensed_intervals[block] += 1;
                    }
                    if baseline.perfect_uplink() {
                        exact.clone()
                    } else {
                        let y = ps_receive(&xs, &des.channels, &mut noise_rng, cfg.sigma2)?;
                        apply_receiver(des.solution.receivers.at(pt), &y)?.iter().map(|z| z.re).collect()
                    }
                }
                None => exact.clone(),
            };
            if opts.record_trace {
                out.trace.push(IntervalTrace {
                    round,
                    interval: t,
                    recovered: recovered.clone(),
                    exact: exact.clone(),
                    scales: tasks.iter().map(|tk| if *tk == TaskKind::Sensing { s_sense } else { s_learn }).collect(),
                    v_before: state.v_est,
                });
            }
            let counted = !upload_round && (sense_grads.is_some() || deltas.is_some());
            if counted {
                for row in 0..tasks.len() {
                    let e = (recovered[row] - exact[row]).powi(2);
                    agg_sq[row] += e;
                    round_sq += e;
                }
                agg_n += 1;
            }
            if let (Some(row), Some(_)) = (sens_row, &sense_grads) {
                let step = -eta_round * recovered[row].clamp(-p.grad_clip, p.grad_clip);
                let moved = state.v_est.with_coord(coord, state.v_est.coord(coord) + step);
                state.v_est = world.region.clamp(&moved);
            }
            if let (Some(row), Some(_)) = (learn_row, &deltas) {
                state.model[t] += recovered[row] * s_learn / k_scale;
            }
            tau += 1;
            if illuminates && design.is_some() && tau.is_multiple_of(frame) && baseline.iterative_sensing() {
                let source = match p.statistics {
                    StatisticsMode::PerFrame => &frame_moments,
                    StatisticsMode::Cumulative => &total_moments,
                };
                let fresh = source
                    .iter()
                    .enumerate()
                    .map(|(k, m)| m.whiten(cfg.power, world.varsigma[k], k))
                    .collect::<Result<Vec<_>>>()?;
                if opts.record_stats {
                    out.stats_log.push((round, fresh.clone()));
                }
                stats = Some(fresh);
                frame_moments.iter_mut().for_each(|m| *m = EchoMoments::new(cfg.m));
            }
        }

        if upload_round {
            state.v_est = single_shot_from(world, &ctx, &total_moments)?;
        }
        let eval = task.evaluate(&state.model);
        let sensing = baseline.iterative_sensing() || baseline == Baseline::SingleShot;
        out.logs.push(RoundLog {
            round: round + 1,
            sensing_mse: if sensing { state.v_est.distance_sq(&world.target) } else { f64::NAN },
            agg_mse: if baseline.perfect_uplink() { 0.0 } else { round_sq / d as f64 },
            task_loss: eval.loss,
            task_accuracy: eval.accuracy,
            crb_l: match (design, sens_row) {
                (Some(des), Some(_)) => des.solution.crb_l,
                _ => f64::NAN,
            },
        });
    }

    out.task_agg_mse = agg_sq.iter().map(|s| s / agg_n.max(1) as f64).collect();
    if let (Some(s), true) = (schedule, baseline.iterative_sensing()) {
        let last = &s.blocks[(p.rounds - 1) / p.coherence_rounds].solution.precoders;
        out.crb_frame = crb_at(world, last, frame).ok();
        let mut j = Matrix3::zeros();
        for (b, &n) in sensed_intervals.iter().enumerate() {
            if n > 0 {
                j += fisher_info(&s.blocks[b].solution.precoders, &world.target, &world.array, &world.devices, n, &world.varsigma)?.j;
            }
        }
        out.crb_cumulative = FisherInfo::from_matrix(j).and_then(|f| crb(&f)).ok();
    }
    out.final_state = state;
    Ok(out)
}

fn crb_at(world: &World, pre: &PrecoderSet, frame_len: usize) -> Result<f64> {
    crb(&fisher_info(pre, &world.target, &world.array, &world.devices, frame_len, &world.varsigma)?)
}

/// Local maximum-likelihood estimate per device from its own statistic, averaged.
fn single_shot_from(world: &World, ctx: &SensingContext<'_>, moments: &[EchoMoments]) -> Result<Position3> {
    let settings = OracleSettings::default();
    let local = moments
        .par_iter()
        .enumerate()
        .map(|(k, m)| {
            let st = m.whiten(world.cfg.power, world.varsigma[k], k)?;
            joint_ml_oracle(ctx, std::slice::from_ref(&st), &world.region, &settings)
        })
        .collect::<Result<Vec<_>>>()?;
    single_shot_estimate(&local)
}

/// The joint protocol with its own beamformer schedule.
pub fn run_collabsensefed(world: &World, task: &dyn LearningTask, opts: RunOptions) -> Result<RunOutput> {
    run_baseline(world, task, Baseline::CollabSenseFed, opts)
}

/// Designs the schedule a baseline needs and runs it.
pub fn run_baseline(world: &World, task: &dyn LearningTask, baseline: Baseline, opts: RunOptions) -> Result<RunOutput> {
    let schedule = if baseline.transmits() {
        Some(design_schedule(world, &baseline.tasks(), &task.sample_counts())?)
    } else {
        None
    };
    run_protocol(world, task, baseline, schedule.as_ref(), opts)
}

/// Perfect FEEL, OTA-FEEL and single-shot on the same world and task.
pub fn run_baselines(world: &World, task: &dyn LearningTask) -> Result<Vec<RunOutput>> {
    [Baseline::PerfectFeel, Baseline::OtaFeel, Baseline::SingleShot]
        .into_iter()
        .map(|b| run_baseline(world, task, b, RunOptions::default()))
        .collect()
}
