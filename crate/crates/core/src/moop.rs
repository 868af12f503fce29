//! Epsilon-constraint beamformer design by block-coordinate descent.
//!
//! The sensing objective enters only through the total precoder energy, so the
//! constraint `CRB_L <= epsilon0` becomes `sum_k ||C_k||_F^2 >= epsilon^-1` with
//! `epsilon^-1 = rho sigma_bar^2 / (epsilon0 T)`. Each outer iteration solves the
//! receivers in closed form (M1), solves the precoders of the convex relaxation
//! (M2), then projects back onto the constraint set.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crb::{crb_lower_from_energy, energy_for_bound};
use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{frob_sq, inner, CMat};
use crate::ota::{optimal_receiver, time_avg_mse, ReceiverSet};
use crate::signaling::{AggregationWeights, PrecoderSet, PulseBook};

/// Projected-gradient settings for the M2 subproblem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerSolverParams {
    /// First trial step, before Barzilai-Borwein steps take over.
    pub initial_step: f64,
    /// Armijo backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Armijo sufficient-decrease constant in (0, 1).
    pub armijo: f64,
    pub max_iters: usize,
    /// KKT residual tolerance, relative to `max(1, ||C_k||_F)`.
    pub kkt_tol: f64,
}

impl Default for InnerSolverParams {
    fn default() -> Self {
        Self { initial_step: 1.0, backtrack: 0.5, armijo: 1e-4, max_iters: 5000, kkt_tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoopConfig {
    /// Largest tolerated sensing lower bound, m^2.
    pub epsilon0: f64,
    /// Per-device power budget `P`. Not serialized: scenarios carry it as `P`.
    #[serde(skip)]
    pub power: f64,
    pub max_outer_iters: usize,
    pub tol_rel: f64,
    pub inner: InnerSolverParams,
    pub init_seed: u64,
    /// History length of the safeguarded Anderson extrapolation; 0 gives plain alternation.
    pub anderson_depth: usize,
}

impl Default for MoopConfig {
    fn default() -> Self {
        Self {
            epsilon0: 1.0,
            power: 1.0,
            max_outer_iters: 50,
            tol_rel: 1e-4,
            inner: InnerSolverParams::default(),
            init_seed: 0,
            anderson_depth: 3,
        }
    }
}

impl MoopConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            errs.push(format!("moop.epsilon0: must be positive and finite, got {}", self.epsilon0));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            errs.push(format!("moop.power: must be positive and finite, got {}", self.power));
        }
        if !(self.tol_rel > 0.0) {
            errs.push(format!("moop.tol_rel: must be positive, got {}", self.tol_rel));
        }
        if self.max_outer_iters == 0 {
            errs.push("moop.max_outer_iters: must be at least 1".into());
        }
        let i = &self.inner;
        if !(i.initial_step > 0.0) {
            errs.push("moop.inner.initial_step: must be positive".into());
        }
        if !(i.backtrack > 0.0 && i.backtrack < 1.0) {
            errs.push("moop.inner.backtrack: must lie in (0, 1)".into());
        }
        if !(i.armijo > 0.0 && i.armijo < 1.0) {
            errs.push("moop.inner.armijo: must lie in (0, 1)".into());
        }
        if i.max_iters == 0 {
            errs.push("moop.inner.max_iters: must be at least 1".into());
        }
        if !(i.kkt_tol > 0.0) {
            errs.push("moop.inner.kkt_tol: must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Fixed data of one design problem.
#[derive(Clone, Copy, Debug)]
pub struct MoopProblem<'a> {
    pub channels: &'a ChannelSet,
    pub weights: &'a AggregationWeights,
    pub pulses: &'a PulseBook,
    pub sigma2: f64,
    pub rho: f64,
    pub varsigma: &'a [f64],
}

impl MoopProblem<'_> {
    pub fn devices(&self) -> usize {
        self.channels.devices()
    }

    pub fn frame_len(&self) -> usize {
        self.pulses.len()
    }

    /// `epsilon^-1 = rho sigma_bar^2 / (epsilon0 T)`: the total energy needed for `CRB_L <= epsilon0`.
    pub fn epsilon_inv(&self, epsilon0: f64) -> Result<f64> {
        energy_for_bound(epsilon0, self.rho, self.frame_len(), self.varsigma)
    }

    pub fn crb_lower(&self, precoders: &PrecoderSet) -> Result<f64> {
        crb_lower_from_energy(precoders.energy(), self.rho, self.frame_len(), self.varsigma)
    }

    fn check(&self) -> Result<()> {
        let k = self.devices();
        if self.weights.devices() != k || self.pulses.devices() != k || self.varsigma.len() != k {
            return Err(Error::dim(format!(
                "device counts disagree: channels {k}, weights {}, pulses {}, noise levels {}",
                self.weights.devices(),
                self.pulses.devices(),
                self.varsigma.len()
            )));
        }
        if !(self.rho > 0.0) {
            return Err(Error::param("rho must be positive"));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(Error::param("sigma2 must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MoopSolution {
    #[serde(skip)]
    pub precoders: PrecoderSet,
    #[serde(skip)]
    pub receivers: ReceiverSet,
    pub alphas: Vec<f64>,
    pub mse: f64,
    pub crb_l: f64,
    pub epsilon_inv: f64,
    pub iters: usize,
    /// MSE before the first iteration and after each outer iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Closed-form receivers `M*[t]` for every interval of the frame.
pub fn solve_marginal_m1(
    precoders: &PrecoderSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &PulseBook,
    sigma2: f64,
) -> Result<ReceiverSet> {
    let m = (0..pulses.len())
        .into_par_iter()
        .map(|t| optimal_receiver(precoders, channels, weights, &pulses.at(t), sigma2))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReceiverSet { m })
}

/// Per-device quadratic `tr(C^H Q C) - 2 Re tr(B^H C)` obtained by expanding
/// the time-averaged aggregation error for fixed receivers.
#[derive(Clone, Debug)]
pub struct DeviceQuadratic {
    pub q: CMat,
    pub b: CMat,
    /// Constant term `||W_k||_F^2`; the objective plus this equals the device's error share.
    pub offset: f64,
}

impl DeviceQuadratic {
    pub fn value(&self, c: &CMat) -> f64 {
        inner(c, &(&self.q * c)).re - 2.0 * inner(&self.b, c).re + self.offset
    }

    /// Gradient with respect to the real and imaginary parts, packed as a complex matrix.
    pub fn gradient(&self, c: &CMat) -> CMat {
        (&self.q * c - &self.b) * Complex64::new(2.0, 0.0)
    }
}

pub fn device_quadratics(
    receivers: &ReceiverSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &PulseBook,
) -> Result<Vec<DeviceQuadratic>> {
    if receivers.len() != pulses.len() {
        return Err(Error::dim(format!("{} receivers for a frame of {} intervals", receivers.len(), pulses.len())));
    }
    let t_len = pulses.len() as f64;
    Ok((0..channels.devices())
        .map(|k| {
            let h = &channels.h[k];
            let w = weights.matrix(k);
            let mdim = h.ncols();
            let mut q = CMat::zeros(mdim, mdim);
            let mut b = CMat::zeros(mdim, w.nrows());
            for (t, m) in receivers.m.iter().enumerate() {
                let hm = h.ad_mul(m);
                q += &hm * hm.adjoint();
                b += &hm * &w * pulses.pulse(k, t).conj();
            }
            let s = Complex64::new(1.0 / t_len, 0.0);
            DeviceQuadratic { q: q * s, b: b * s, offset: frob_sq(&w) }
        })
        .collect())
}

fn project_ball(c: &CMat, radius2: f64) -> CMat {
    let n2 = frob_sq(c);
    if n2 <= radius2 {
        c.clone()
    } else {
        c * Complex64::new((radius2 / n2).sqrt(), 0.0)
    }
}

/// Outcome of one projected-gradient solve.
#[derive(Clone, Debug)]
pub struct InnerResult {
    pub c: CMat,
    pub iters: usize,
    pub kkt_residual: f64,
}

/// Minimizes a device quadratic over `||C||_F^2 <= radius2` by projected
/// gradient with Barzilai-Borwein steps and Armijo backtracking.
pub fn solve_ball_qp(quad: &DeviceQuadratic, start: &CMat, radius2: f64, params: &InnerSolverParams) -> InnerResult {
    let kkt = |c: &CMat, g: &CMat| frob_sq(&(c - project_ball(&(c - g), radius2))).sqrt();
    let mut c = project_ball(start, radius2);
    let mut g = quad.gradient(&c);
    let mut f = quad.value(&c);
    let mut step = params.initial_step;
    // a Lipschitz-based first step avoids a long initial backtrack
    let lip = 2.0 * quad.q.norm();
    if lip > 0.0 {
        step = step.min(1.0 / lip);
    }
    for it in 0..params.max_iters {
        let res = kkt(&c, &g);
        if res <= params.kkt_tol * frob_sq(&c).sqrt().max(1.0) {
            return InnerResult { c, iters: it, kkt_residual: res };
        }
        let mut s = step;
        let (c_new, f_new) = loop {
            let cand = project_ball(&(&c - &g * Complex64::new(s, 0.0)), radius2);
            let fc = quad.value(&cand);
            let decrease = inner(&g, &(&c - &cand)).re;
            if fc <= f - params.armijo * decrease || s < 1e-20 {
                break (cand, fc);
            }
            s *= params.backtrack;
        };
        let g_new = quad.gradient(&c_new);
        let dc = &c_new - &c;
        let dg = &g_new - &g;
        let sy = inner(&dc, &dg).re;
        step = if sy > 0.0 { frob_sq(&dc) / sy } else { s * 2.0 };
        c = c_new;
        g = g_new;
        f = f_new;
    }
    let res = kkt(&c, &g);
    InnerResult { c, iters: params.max_iters, kkt_residual: res }
}

fn check_budget(devices: usize, power: f64, epsilon_inv: f64) -> Result<()> {
    let budget = devices as f64 * power;
    if !(epsilon_inv >= 0.0) {
        return Err(Error::param("epsilon^-1 must be non-negative"));
    }
    if epsilon_inv > budget * (1.0 + 1e-12) {
        return Err(Error::Infeasible { epsilon_inv, budget });
    }
    Ok(())
}

/// Precoder step of the relaxation, warm-started at `start`. With fixed
/// receivers the relaxed problem separates into one ball-constrained quadratic
/// per device (`alpha_k = P` is always feasible for the relaxation), and the
/// returned `alpha_k` are the achieved `||C_k||_F^2`.
#[allow(clippy::too_many_arguments)]
pub fn solve_marginal_m2_from(
    receivers: &ReceiverSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &PulseBook,
    power: f64,
    epsilon_inv: f64,
    start: &PrecoderSet,
    params: &InnerSolverParams,
) -> Result<(Vec<f64>, PrecoderSet)> {
    check_budget(channels.devices(), power, epsilon_inv)?;
    if start.devices() != channels.devices() {
        return Err(Error::dim("warm start has the wrong number of devices"));
    }
    let quads = device_quadratics(receivers, channels, weights, pulses)?;
    let results: Vec<InnerResult> = quads
        .par_iter()
        .zip(start.c.par_iter())
        .map(|(q, c0)| solve_ball_qp(q, c0, power, params))
        .collect();
    for (k, r) in results.iter().enumerate() {
        if r.kkt_residual > params.kkt_tol * frob_sq(&r.c).sqrt().max(1.0) {
            warn!("device {k}: precoder step stopped at KKT residual {:.3e}", r.kkt_residual);
        }
    }
    let c: Vec<CMat> = results.into_iter().map(|r| r.c).collect();
    let alphas = c.iter().map(frob_sq).collect();
    Ok((alphas, PrecoderSet::new(c)?))
}

/// [`solve_marginal_m2_from`] started at zero with default solver settings.
pub fn solve_marginal_m2(
    receivers: &ReceiverSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &PulseBook,
    power: f64,
    epsilon_inv: f64,
) -> Result<(Vec<f64>, PrecoderSet)> {
    let (m, i) = (channels.device_antennas(), weights.tasks());
    let zero = PrecoderSet::new(vec![CMat::zeros(m, i); channels.devices()])?;
    solve_marginal_m2_from(receivers, channels, weights, pulses, power, epsilon_inv, &zero, &InnerSolverParams::default())
}

/// Clips `alpha` to `[0, P]`, lifts it uniformly over devices with slack until
/// `sum alpha >= epsilon^-1`, then rescales each `C_k` to `||C_k||_F^2 = alpha_k`.
/// Devices with `C_k = 0` keep `alpha_k = 0`.
pub fn project_feasible(alphas: &[f64], precoders: &PrecoderSet, power: f64, epsilon_inv: f64) -> Result<(Vec<f64>, PrecoderSet)> {
    let k = precoders.devices();
    if alphas.len() != k {
        return Err(Error::dim(format!("{} alphas for {} devices", alphas.len(), k)));
    }
    check_budget(k, power, epsilon_inv)?;
    let norms: Vec<f64> = precoders.powers();
    let active: Vec<bool> = norms.iter().map(|&n| n > 0.0).collect();
    if active.iter().all(|a| !a) {
        if epsilon_inv > 0.0 {
            return Err(Error::DegeneratePrecoder(0));
        }
        return Ok((vec![0.0; k], precoders.clone()));
    }
    let mut a: Vec<f64> = alphas.iter().zip(&active).map(|(&x, &on)| if on { x.clamp(0.0, power) } else { 0.0 }).collect();
    loop {
        let deficit = epsilon_inv - a.iter().sum::<f64>();
        if deficit <= 0.0 {
            break;
        }
        let slack: Vec<usize> = (0..k).filter(|&i| active[i] && a[i] < power).collect();
        if slack.is_empty() {
            let inactive = (0..k).find(|&i| !active[i]).unwrap_or(0);
            return Err(Error::DegeneratePrecoder(inactive));
        }
        let share = deficit / slack.len() as f64;
        for &i in &slack {
            a[i] = (a[i] + share).min(power);
        }
        // exact lift when no coordinate saturated; guards round-off loops
        if slack.iter().all(|&i| a[i] < power) {
            break;
        }
    }
    let c = precoders
        .c
        .iter()
        .zip(a.iter().zip(&norms))
        .map(|(c, (&ak, &nk))| if nk > 0.0 { c * Complex64::new((ak / nk).sqrt(), 0.0) } else { c.clone() })
        .collect();
    Ok((a, PrecoderSet::new(c)?))
}

/// Algorithm-level solve from the configured random initialization.
pub fn bcd_solve(problem: &MoopProblem<'_>, config: &MoopConfig) -> Result<MoopSolution> {
    let init = PrecoderSet::initial(
        config.init_seed,
        problem.devices(),
        problem.channels.device_antennas(),
        problem.weights.tasks(),
        config.power,
    )?;
    bcd_solve_from(problem, config, init)
}

fn flatten(c: &PrecoderSet) -> DVector<f64> {
    DVector::from_iterator(
        c.devices() * c.antennas() * c.tasks() * 2,
        c.c.iter().flat_map(|ck| ck.iter().flat_map(|z| [z.re, z.im])),
    )
}

fn unflatten(x: &DVector<f64>, like: &PrecoderSet) -> Result<PrecoderSet> {
    let (m, i) = (like.antennas(), like.tasks());
    let per = m * i * 2;
    PrecoderSet::new(
        (0..like.devices())
            .map(|k| CMat::from_fn(m, i, |r, col| {
                let idx = k * per + 2 * (col * m + r);
                Complex64::new(x[idx], x[idx + 1])
            }))
            .collect(),
    )
}

/// Anderson mixing of the fixed-point map `x -> G(x)` from its recent history
/// (oldest first); `None` when the least-squares problem is degenerate.
fn anderson_candidate(xs: &VecDeque<DVector<f64>>, gs: &VecDeque<DVector<f64>>) -> Option<DVector<f64>> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let r: Vec<DVector<f64>> = xs.iter().zip(gs).map(|(x, g)| g - x).collect();
    let len = r[0].len();
    let dr = DMatrix::from_fn(len, n - 1, |row, j| r[j + 1][row] - r[j][row]);
    let dg = DMatrix::from_fn(len, n - 1, |row, j| gs[j + 1][row] - gs[j][row]);
    let gamma = dr.svd(true, true).solve(&r[n - 1], 1e-10).ok()?;
    let x = &gs[n - 1] - dg * gamma;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Block-coordinate descent from a given precoder set.
///
/// Each outer iteration runs M2 at the current receivers, projects, and
/// re-solves M1. When `anderson_depth > 0` an Anderson-extrapolated precoder set
/// built from recent iterations is also projected and evaluated, and replaces
/// the plain step only if its MSE is lower, so the trace never rises because of
/// it. Stops when the relative MSE change drops below `tol_rel`; the returned
/// point is always the best iterate seen, including the start.
pub fn bcd_solve_from(problem: &MoopProblem<'_>, config: &MoopConfig, init: PrecoderSet) -> Result<MoopSolution> {
    config.validate()?;
    problem.check()?;
    let epsilon_inv = problem.epsilon_inv(config.epsilon0)?;
    check_budget(problem.devices(), config.power, epsilon_inv)?;
    let (ch, w, book, s2) = (problem.channels, problem.weights, problem.pulses, problem.sigma2);
    let evaluate = |c: &PrecoderSet| -> Result<(f64, ReceiverSet)> {
        let m = solve_marginal_m1(c, ch, w, book, s2)?;
        Ok((time_avg_mse(&m, c, ch, w, book, s2)?, m))
    };

    let init_alphas = init.powers();
    let (mut alphas, mut c) = project_feasible(&init_alphas, &init, config.power, epsilon_inv)?;
    let (mut f, mut m) = evaluate(&c)?;
    let mut trace = vec![f];
    let mut best = (f, alphas.clone(), c.clone(), m.clone());
    let mut converged = false;
    let mut iters = 0;
    let mut hist_x: VecDeque<DVector<f64>> = VecDeque::new();
    let mut hist_g: VecDeque<DVector<f64>> = VecDeque::new();
    for it in 1..=config.max_outer_iters {
        iters = it;
        let (a2, c2) = solve_marginal_m2_from(&m, ch, w, book, config.power, epsilon_inv, &c, &config.inner)?;
        let (mut a_next, mut c_next) = project_feasible(&a2, &c2, config.power, epsilon_inv)?;
        let (mut f_next, mut m_next) = evaluate(&c_next)?;
        if config.anderson_depth > 0 {
            hist_x.push_back(flatten(&c));
            hist_g.push_back(flatten(&c_next));
            while hist_x.len() > config.anderson_depth + 1 {
                hist_x.pop_front();
                hist_g.pop_front();
            }
            if let Some(x) = anderson_candidate(&hist_x, &hist_g) {
                let raw = unflatten(&x, &c)?;
                let clipped: Vec<f64> = raw.powers().iter().map(|p| p.min(config.power)).collect();
                if let Ok((a_acc, c_acc)) = project_feasible(&clipped, &raw, config.power, epsilon_inv) {
                    let (f_acc, m_acc) = evaluate(&c_acc)?;
                    if f_acc < f_next {
                        (a_next, c_next, f_next, m_next) = (a_acc, c_acc, f_acc, m_acc);
                    }
                }
            }
        }
        trace.push(f_next);
        let rel = (f - f_next).abs() / f.abs().max(f64::MIN_POSITIVE);
        (alphas, c, f, m) = (a_next, c_next, f_next, m_next);
        if f < best.0 {
            best = (f, alphas.clone(), c.clone(), m.clone());
        }
        if rel < config.tol_rel {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("block-coordinate descent hit {} iterations without meeting tol_rel; returning the best iterate", config.max_outer_iters);
    }
    let (mse, alphas, precoders, receivers) = best;
    let crb_l = problem.crb_lower(&precoders)?;
    Ok(MoopSolution { precoders, receivers, alphas, mse, crb_l, epsilon_inv, iters, objective_trace: trace, converged })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub epsilon0: f64,
    pub crb_l: f64,
    pub mse: f64,
    pub iters: usize,
    pub converged: bool,
    /// Target whose design replaced this one's own solve, if any.
    pub adopted_from: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ParetoFront {
    /// Sorted by ascending `crb_l`.
    pub points: Vec<ParetoPoint>,
    /// Infeasible or failed targets with the reason.
    pub skipped: Vec<(f64, String)>,
}

impl ParetoFront {
    /// True when no point is strictly dominated by another in (crb_l, mse).
    pub fn is_non_dominated(&self) -> bool {
        self.points.iter().all(|p| {
            !self.points.iter().any(|q| q.crb_l <= p.crb_l && q.mse <= p.mse && (q.crb_l < p.crb_l || q.mse < p.mse))
        })
    }
}

/// One independent block-coordinate solve per `epsilon0`, run in parallel.
///
/// Every returned design is feasible for any target at least as loose as its
/// own achieved `crb_l`, so each target then takes the lowest-MSE design in
/// the pool that satisfies it (ties go to the smaller `crb_l`). By
/// construction MSE is non-increasing in the target and no point strictly
/// dominates another. `adopted_from` records targets whose own solve lost.
pub fn pareto_sweep(epsilons: &[f64], problem: &MoopProblem<'_>, base: &MoopConfig) -> Result<ParetoFront> {
    if epsilons.is_empty() {
        return Err(Error::param("empty epsilon0 list"));
    }
    let outcomes: Vec<(f64, Result<MoopSolution>)> = epsilons
        .par_iter()
        .map(|&e| (e, bcd_solve(problem, &MoopConfig { epsilon0: e, ..*base })))
        .collect();
    let mut front = ParetoFront::default();
    let mut pool: Vec<ParetoPoint> = Vec::new();
    for (e, outcome) in outcomes {
        match outcome {
            Ok(s) => pool.push(ParetoPoint {
                epsilon0: e,
                crb_l: s.crb_l,
                mse: s.mse,
                iters: s.iters,
                converged: s.converged,
                adopted_from: None,
            }),
            Err(err @ (Error::Infeasible { .. } | Error::DegeneratePrecoder(_))) => front.skipped.push((e, err.to_string())),
            Err(err) => return Err(err),
        }
    }
    for own in &pool {
        let best = pool
            .iter()
            .filter(|c| c.crb_l <= own.epsilon0)
            .min_by(|a, b| a.mse.total_cmp(&b.mse).then(a.crb_l.total_cmp(&b.crb_l)))
            .unwrap_or(own);
        let adopted = best.epsilon0 != own.epsilon0 && (best.mse, best.crb_l) != (own.mse, own.crb_l);
        front.points.push(ParetoPoint {
            epsilon0: own.epsilon0,
            crb_l: best.crb_l,
            mse: best.mse,
            iters: own.iters,
            converged: own.converged,
            adopted_from: adopted.then_some(best.epsilon0),
        });
    }
    front.points.sort_by(|a, b| a.crb_l.total_cmp(&b.crb_l).then(a.epsilon0.total_cmp(&b.epsilon0)));
    front.skipped.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(front)
}

/// Range of `epsilon0` over which the constraint matters: from the bound at
/// full power on every device to the bound of the unconstrained design.
pub fn epsilon0_span(problem: &MoopProblem<'_>, base: &MoopConfig) -> Result<(f64, f64)> {
    let lo = crb_lower_from_energy(problem.devices() as f64 * base.power, problem.rho, problem.frame_len(), problem.varsigma)?;
    // epsilon0 = infinity gives epsilon^-1 = 0
    let free = bcd_solve(problem, &MoopConfig { epsilon0: f64::MAX, ..*base })?;
    Ok((lo, free.crb_l.max(lo)))
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_rayleigh_channels;
    use crate::linalg::complex_normal_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        ch: ChannelSet,
        w: AggregationWeights,
        book: PulseBook,
        varsigma: Vec<f64>,
    }

    fn fixture(seed: u64, k: usize, n: usize, m: usize, i: usize, t: usize) -> Fixture {
        Fixture {
            ch: sample_rayleigh_channels(seed, k, n, m).unwrap(),
            w: AggregationWeights::uniform(k, i, 1.0 / k as f64),
            book: PulseBook::dft(k, t).unwrap(),
            varsigma: vec![1e-3; k],
        }
    }

    impl Fixture {
        fn problem(&self, sigma2: f64, rho: f64) -> MoopProblem<'_> {
            MoopProblem { channels: &self.ch, weights: &self.w, pulses: &self.book, sigma2, rho, varsigma: &self.varsigma }
        }
    }

    #[test]
    fn m1_single_interval_matches_receiver() {
        let fx = fixture(1, 3, 6, 2, 1, 3);
        let book = PulseBook::from_matrix(fx.book.matrix().columns(0, 1).into_owned()).unwrap();
        let pre = PrecoderSet::initial(2, 3, 2, 1, 1.0).unwrap();
        let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &book, 0.1).unwrap();
        assert_eq!(rx.len(), 1);
        assert_eq!(rx.m[0], optimal_receiver(&pre, &fx.ch, &fx.w, &book.at(0), 0.1).unwrap());
    }

    #[test]
    fn m1_repeats_for_repeated_pulses() {
        let fx = fixture(3, 2, 4, 2, 1, 2);
        let col = fx.book.matrix().column(1).into_owned();
        let book = PulseBook::from_matrix(CMat::from_columns(&[col.clone(), col])).unwrap();
        let pre = PrecoderSet::initial(4, 2, 2, 1, 1.0).unwrap();
        let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &book, 0.2).unwrap();
        assert_eq!(rx.m[0], rx.m[1]);
    }

    #[test]
    fn quadratic_reproduces_time_averaged_mse() {
        let fx = fixture(5, 4, 6, 3, 2, 4);
        let pre = PrecoderSet::initial(6, 4, 3, 2, 1.0).unwrap();
        let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &fx.book, 0.3).unwrap();
        let quads = device_quadratics(&rx, &fx.ch, &fx.w, &fx.book).unwrap();
        let noise: f64 = rx.m.iter().map(|m| 0.3 * frob_sq(m)).sum::<f64>() / 4.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let other = PrecoderSet::new((0..4).map(|_| complex_normal_matrix(&mut rng, 3, 2, 1.0)).collect()).unwrap();
        let total: f64 = quads.iter().zip(&other.c).map(|(q, c)| q.value(c)).sum::<f64>() + noise;
        let direct = time_avg_mse(&rx, &other, &fx.ch, &fx.w, &fx.book, 0.3).unwrap();
        assert!((total - direct).abs() < 1e-10 * direct);
        // gradient by finite differences along a random direction
        let d = complex_normal_matrix(&mut rng, 3, 2, 1.0);
        let h = 1e-6;
        let fd = (quads[0].value(&(&other.c[0] + &d * Complex64::new(h, 0.0))) - quads[0].value(&(&other.c[0] - &d * Complex64::new(h, 0.0)))) / (2.0 * h);
        let an = inner(&quads[0].gradient(&other.c[0]), &d).re;
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0));
    }

    #[test]
    fn unconstrained_optimum_has_zero_gradient() {
        // large budget keeps the ball inactive
        let fx = fixture(8, 3, 8, 2, 1, 3);
        let pre = PrecoderSet::initial(9, 3, 2, 1, 1.0).unwrap();
        let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &fx.book, 0.05).unwrap();
        let (alphas, c) = solve_marginal_m2(&rx, &fx.ch, &fx.w, &fx.book, 1e6, 0.0).unwrap();
        let quads = device_quadratics(&rx, &fx.ch, &fx.w, &fx.book).unwrap();
        for (q, ck) in quads.iter().zip(&c.c) {
            assert!(frob_sq(&q.gradient(ck)).sqrt() < 1e-5 * frob_sq(ck).sqrt().max(1.0));
        }
        assert!(alphas.iter().all(|&a| a < 1e6));
    }

    #[test]
    fn infeasible_budget_is_reported() {
        let fx = fixture(10, 2, 4, 2, 1, 2);
        let pre = PrecoderSet::initial(11, 2, 2, 1, 1.0).unwrap();
        let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &fx.book, 0.1).unwrap();
        match solve_marginal_m2(&rx, &fx.ch, &fx.w, &fx.book, 1.0, 2.5) {
            Err(Error::Infeasible { epsilon_inv, budget }) => {
                assert_eq!(epsilon_inv, 2.5);
                assert_eq!(budget, 2.0);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn scalar_instance_matches_brute_force() {
        // K = M = I = T = 1: C is one complex number in the disc |c|^2 <= P
        let fx = fixture(12, 1, 3, 1, 1, 1);
        let pre = PrecoderSet::initial(13, 1, 1, 1, 1.0).unwrap();
        for &(sigma2, power) in &[(0.5, 1.0), (0.01, 0.05), (2.0, 3.0)] {
            let rx = solve_marginal_m1(&pre, &fx.ch, &fx.w, &fx.book, sigma2).unwrap();
            let q = &device_quadratics(&rx, &fx.ch, &fx.w, &fx.book).unwrap()[0];
            let (_, sol) = solve_marginal_m2(&rx, &fx.ch, &fx.w, &fx.book, power, 0.0).unwrap();
            let got = q.value(&sol.c[0]);
            let r = f64::sqrt(power);
            let n = 801;
            let mut best = f64::INFINITY;
            for i in 0..n {
                for j in 0..n {
                    let x = -r + 2.0 * r * i as f64 / (n - 1) as f64;
                    let y = -r + 2.0 * r * j as f64 / (n - 1) as f64;
                    if x * x + y * y <= power {
                        best = best.min(q.value(&CMat::from_element(1, 1, Complex64::new(x, y))));
                    }
                }
            }
            assert!(got <= best + 1e-4, "solver {got} vs grid {best}");
            assert!(best - got < 1e-4 + 1e-2 * best.abs());
        }
    }

    #[test]
    fn projection_rules() {
        let c = CMat::from_element(2, 1, Complex64::new(2f64.sqrt(), 0.0));
        let pre = PrecoderSet::new(vec![c.clone()]).unwrap();
        // ||C||^2 = 4 and alpha = 1 halves C
        let (a, p) = project_feasible(&[1.0], &pre, 5.0, 0.0).unwrap();
        assert_eq!(a, vec![1.0]);
        assert!((frob_sq(&(&p.c[0] - &c * Complex64::new(0.5, 0.0)))).sqrt() < 1e-15);
        // fixed point
        let (a2, p2) = project_feasible(&[4.0], &pre, 5.0, 3.0).unwrap();
        assert_eq!(a2, vec![4.0]);
        assert!(frob_sq(&(&p2.c[0] - &c)) < 1e-28);
        let zero = PrecoderSet::new(vec![CMat::zeros(2, 1); 2]).unwrap();
        assert!(matches!(project_feasible(&[0.0, 0.0], &zero, 1.0, 0.5), Err(Error::DegeneratePrecoder(_))));
    }

    #[test]
    fn projection_output_is_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        use rand::Rng;
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let power = rng.random_range(0.1..3.0);
            let eps_inv = rng.random_range(0.0..(k as f64 * power));
            let pre = PrecoderSet::new((0..k).map(|_| complex_normal_matrix(&mut rng, 3, 2, 1.0)).collect()).unwrap();
            let alphas: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..4.0)).collect();
            let (a, p) = project_feasible(&alphas, &pre, power, eps_inv).unwrap();
            assert!(a.iter().all(|&x| (-1e-9..=power + 1e-9).contains(&x)));
            assert!(a.iter().sum::<f64>() >= eps_inv - 1e-9);
            for (x, c) in a.iter().zip(&p.c) {
                assert!((frob_sq(c) - x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bcd_respects_constraints_and_descends() {
        let fx = fixture(15, 6, 8, 4, 2, 8);
        let problem = fx.problem(0.1, 1.0);
        let lo = crb_lower_from_energy(6.0, 1.0, 8, &fx.varsigma).unwrap();
        let cfg = MoopConfig { epsilon0: lo * 1.5, ..MoopConfig::default() };
        let sol = bcd_solve(&problem, &cfg).unwrap();
        assert!(sol.precoders.satisfies_power(1.0, 1e-6));
        assert!(sol.precoders.energy() >= sol.epsilon_inv * (1.0 - 1e-6));
        assert!(sol.crb_l <= cfg.epsilon0 * (1.0 + 1e-9));
        assert!(sol.mse <= sol.objective_trace[0] + 1e-12);
        let direct = time_avg_mse(&sol.receivers, &sol.precoders, &fx.ch, &fx.w, &fx.book, 0.1).unwrap();
        assert!((direct - sol.mse).abs() < 1e-12 * sol.mse);
    }

    #[test]
    fn bcd_warm_start_at_solution_stops_immediately() {
        let fx = fixture(16, 5, 8, 3, 2, 5);
        let problem = fx.problem(0.1, 1.0);
        let cfg = MoopConfig { epsilon0: f64::MAX, tol_rel: 1e-9, max_outer_iters: 500, ..MoopConfig::default() };
        let sol = bcd_solve(&problem, &cfg).unwrap();
        let again = bcd_solve_from(&problem, &MoopConfig { tol_rel: 1e-4, ..cfg }, sol.precoders.clone()).unwrap();
        assert_eq!(again.iters, 1);
        assert!(again.converged);
    }

    #[test]
    fn noise_dominated_receivers_vanish() {
        let fx = fixture(17, 4, 6, 2, 1, 4);
        let problem = fx.problem(1e9, 1.0);
        let sol = bcd_solve(&problem, &MoopConfig { epsilon0: f64::MAX, ..MoopConfig::default() }).unwrap();
        assert!(sol.receivers.m.iter().all(|m| frob_sq(m) < 1e-15));
        let ceiling: f64 = (0..4).map(|k| frob_sq(&fx.w.matrix(k))).sum();
        assert!((sol.mse / ceiling - 1.0).abs() < 1e-6);
        assert!(sol.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)));
    }

    #[test]
    fn pareto_single_point_and_sorting() {
        let fx = fixture(18, 4, 6, 2, 2, 4);
        let problem = fx.problem(0.1, 1.0);
        let base = MoopConfig::default();
        let lo = crb_lower_from_energy(4.0, 1.0, 4, &fx.varsigma).unwrap();
        let one = pareto_sweep(&[lo * 2.0], &problem, &base).unwrap();
        let direct = bcd_solve(&problem, &MoopConfig { epsilon0: lo * 2.0, ..base }).unwrap();
        assert_eq!(one.points.len(), 1);
        assert_eq!(one.points[0].mse, direct.mse);
        let many = pareto_sweep(&[lo * 4.0, lo * 0.5, lo * 1.5], &problem, &base).unwrap();
        assert_eq!(many.skipped.len(), 1);
        assert!(many.points.windows(2).all(|w| w[0].crb_l <= w[1].crb_l));
    }

    #[test]
    fn pooled_front_is_monotone_and_non_dominated() {
        let fx = fixture(21, 5, 6, 2, 2, 8);
        let problem = fx.problem(1e-4, 1.0);
        let base = MoopConfig { max_outer_iters: 15, ..MoopConfig::default() };
        let lo = crb_lower_from_energy(5.0, 1.0, 8, &fx.varsigma).unwrap();
        let front = pareto_sweep(&log_spaced(lo, lo * 3.0, 6), &problem, &base).unwrap();
        assert!(front.is_non_dominated());
        let mut by_target = front.points.clone();
        by_target.sort_by(|a, b| a.epsilon0.total_cmp(&b.epsilon0));
        assert!(by_target.windows(2).all(|w| w[1].mse <= w[0].mse));
        assert!(front.points.iter().all(|p| p.crb_l <= p.epsilon0 * (1.0 + 1e-9)));
        assert!(front.points.windows(2).all(|w| w[1].mse <= w[0].mse));
    }

    #[test]
    fn log_spacing() {
        let v = log_spaced(1.0, 100.0, 3);
        assert!((v[1] - 10.0).abs() < 1e-12 && (v[2] - 100.0).abs() < 1e-12);
        assert_eq!(log_spaced(2.0, 3.0, 1), vec![2.0]);
    }
}
