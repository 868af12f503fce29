//! Target echoes, matched filtering, whitened sufficient statistics and the
//! maximum-likelihood localization losses built on them.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{with_device, ArrayModel, DeviceGeometry, GridResolution, Position3, TargetRegion};
use crate::linalg::{complex_normal_vector, frob_sq, hermitian_power, inner, CMat, CVec};

/// Relative ridge added before the inverse square root in whitening.
pub const WHITENING_RIDGE: f64 = 1e-6;

/// Array responses of every device toward one fixed target.
#[derive(Clone, Debug)]
pub struct EchoModel {
    responses: Vec<CVec>,
}

impl EchoModel {
    pub fn new(array: &ArrayModel, devices: &DeviceGeometry, target: &Position3) -> Result<Self> {
        let responses = devices
            .positions
            .iter()
            .enumerate()
            .map(|(k, d)| with_device(array.response(d, target), k))
            .collect::<Result<_>>()?;
        Ok(Self { responses })
    }

    pub fn response(&self, k: usize) -> &CVec {
        &self.responses[k]
    }

    /// `sum_l a_l^T x_l[t]`, the scalar reflected toward every device.
    pub fn reflection(&self, xs: &[CVec]) -> Result<Complex64> {
        if xs.len() != self.responses.len() {
            return Err(Error::dim(format!("{} signals for {} devices", xs.len(), self.responses.len())));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, x) in self.responses.iter().zip(xs) {
            if a.len() != x.len() {
                return Err(Error::dim("signal length differs from the array size"));
            }
            acc += (a.transpose() * x)[0];
        }
        Ok(acc)
    }

    /// `u_k[t] = sum_l a_k a_l^T x_l[t] + nu_k[t]`, `nu_k ~ CN(0, varsigma2 I)`.
    pub fn receive<R: Rng + ?Sized>(&self, k: usize, xs: &[CVec], rng: &mut R, varsigma2: f64) -> Result<CVec> {
        if varsigma2 < 0.0 {
            return Err(Error::param("echo noise variance must be non-negative"));
        }
        let refl = self.reflection(xs)?;
        let a = &self.responses[k];
        let mut u = a * refl;
        if varsigma2 > 0.0 {
            u += complex_normal_vector(rng, a.len(), varsigma2);
        }
        Ok(u)
    }
}

impl EchoModel {
    /// Echoes at every device for one interval; the reflection is shared.
    pub fn receive_all<R: Rng + ?Sized>(&self, xs: &[CVec], rng: &mut R, varsigma2: &[f64]) -> Result<Vec<CVec>> {
        if varsigma2.len() != self.responses.len() {
            return Err(Error::dim(format!("{} noise levels for {} devices", varsigma2.len(), self.responses.len())));
        }
        let refl = self.reflection(xs)?;
        self.responses
            .iter()
            .zip(varsigma2)
            .map(|(a, &v)| {
                if v < 0.0 {
                    return Err(Error::param("echo noise variance must be non-negative"));
                }
                let mut u = a * refl;
                if v > 0.0 {
                    u += complex_normal_vector(rng, a.len(), v);
                }
                Ok(u)
            })
            .collect()
    }
}

pub fn receive_echo<R: Rng + ?Sized>(
    xs: &[CVec],
    k: usize,
    target: &Position3,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    rng: &mut R,
    varsigma2: f64,
) -> Result<CVec> {
    EchoModel::new(array, devices, target)?.receive(k, xs, rng, varsigma2)
}

/// `Xi_k = 1/(P T) sum_t u_k[t] x_k[t]^H` over one frame.
pub fn matched_filter(us: &[CVec], xs: &[CVec], power: f64) -> Result<CMat> {
    if us.len() != xs.len() || us.is_empty() {
        return Err(Error::dim(format!("frame length mismatch: {} echoes, {} transmit signals", us.len(), xs.len())));
    }
    let m = us[0].len();
    let mut xi = CMat::zeros(m, xs[0].len());
    for (u, x) in us.iter().zip(xs) {
        xi.ger(Complex64::new(1.0, 0.0), u, &x.conjugate(), Complex64::new(1.0, 0.0));
    }
    Ok(xi / Complex64::new(power * us.len() as f64, 0.0))
}

/// `R_{l,k} = 1/(P T) sum_t x_l[t] x_k[t]^H`.
pub fn sample_correlation(xl: &[CVec], xk: &[CVec], power: f64) -> Result<CMat> {
    matched_filter(xl, xk, power)
}

/// Whitened matched-filter output of one device, together with the root
/// matrix `B_k` such that the noiseless statistic equals `A_k(v) B_k`.
#[derive(Clone, Debug)]
pub struct SufficientStatistic {
    pub device: usize,
    pub xi_hat: CMat,
    pub root: CMat,
    pub frame_len: usize,
    pub varsigma: f64,
    /// Set when the transmit covariance was rank deficient and the ridge was needed.
    pub regularized: bool,
}

fn whiten_with(xi: &CMat, cov: &CMat, power: f64, frame_len: usize, varsigma: f64, device: usize) -> Result<SufficientStatistic> {
    if xi.shape() != cov.shape() {
        return Err(Error::dim("matched-filter output and covariance shapes differ"));
    }
    if !(varsigma > 0.0 && power > 0.0) || frame_len == 0 {
        return Err(Error::param("whitening needs P > 0, T > 0 and varsigma > 0"));
    }
    let m = cov.nrows();
    let tr = cov.trace().re;
    if !(tr > 0.0) {
        return Err(Error::DegeneratePrecoder(device));
    }
    let normalized = cov / Complex64::new(power, 0.0);
    let ridge = WHITENING_RIDGE * tr / power / m as f64;
    let eig = (&normalized + normalized.adjoint()).map(|z| z * 0.5).symmetric_eigen();
    let lam_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = lam_min <= ridge;
    let w = hermitian_power(&normalized, -0.5, ridge);
    let scale = Complex64::new((power * frame_len as f64).sqrt() / varsigma, 0.0);
    let xi_hat = xi * &w * scale;
    let root = cov * &w / Complex64::new(power.sqrt(), 0.0);
    Ok(SufficientStatistic { device, xi_hat, root, frame_len, varsigma, regularized })
}

/// `Xi_hat_k = sqrt(P T)/varsigma_k * Xi_k (C_k C_k^H / P)^{-1/2}` with a ridge of
/// [`WHITENING_RIDGE`] times the mean eigenvalue under the inverse root.
pub fn whiten(xi: &CMat, c: &CMat, power: f64, frame_len: usize, varsigma: f64, device: usize) -> Result<SufficientStatistic> {
    if c.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::DegeneratePrecoder(device));
    }
    whiten_with(xi, &(c * c.adjoint()), power, frame_len, varsigma, device)
}

/// Like [`whiten`], but with the realized frame covariance `1/T sum_t x_k x_k^H`
/// in place of its expectation `C_k C_k^H`. A device knows its own transmit
/// sequence, so this removes the finite-frame mismatch between the two.
pub fn whiten_realized(xi: &CMat, xs: &[CVec], power: f64, varsigma: f64, device: usize) -> Result<SufficientStatistic> {
    if xs.is_empty() {
        return Err(Error::dim("empty frame"));
    }
    let m = xs[0].len();
    let mut cov = CMat::zeros(m, m);
    for x in xs {
        cov.ger(Complex64::new(1.0, 0.0), x, &x.conjugate(), Complex64::new(1.0, 0.0));
    }
    cov /= Complex64::new(xs.len() as f64, 0.0);
    whiten_with(xi, &cov, power, xs.len(), varsigma, device)
}

/// Running sums `sum_t u_k x_k^H` and `sum_t x_k x_k^H` of one device.
#[derive(Clone, Debug, PartialEq)]
pub struct EchoMoments {
    pub cross: CMat,
    pub gram: CMat,
    pub count: usize,
}

impl EchoMoments {
    pub fn new(antennas: usize) -> Self {
        Self { cross: CMat::zeros(antennas, antennas), gram: CMat::zeros(antennas, antennas), count: 0 }
    }

    pub fn push(&mut self, u: &CVec, x: &CVec) {
        let one = Complex64::new(1.0, 0.0);
        self.cross.ger(one, u, &x.conjugate(), one);
        self.gram.ger(one, x, &x.conjugate(), one);
        self.count += 1;
    }

    /// Same result as [`whiten_realized`] over every pushed interval.
    pub fn whiten(&self, power: f64, varsigma: f64, device: usize) -> Result<SufficientStatistic> {
        if self.count == 0 {
            return Err(Error::dim("empty frame"));
        }
        let n = Complex64::new(self.count as f64, 0.0);
        let xi = &self.cross / (n * power);
        whiten_with(&xi, &(&self.gram / n), power, self.count, varsigma, device)
    }
}

/// `A_k(v) = sqrt(T / varsigma_k^2) a_k a_k^T` and its three coordinate partials.
#[derive(Clone, Debug)]
pub struct SensingModelMatrix {
    pub a: CMat,
    pub da: [CMat; 3],
}

pub fn sensing_model(array: &ArrayModel, device: &Position3, v: &Position3, frame_len: usize, varsigma: f64) -> Result<SensingModelMatrix> {
    let (a, g) = array.response_and_grad(device, v)?;
    let s = Complex64::new((frame_len as f64).sqrt() / varsigma, 0.0);
    let at = a.transpose();
    let outer = &a * &at * s;
    let da = std::array::from_fn(|i| (&g[i] * &at + &a * g[i].transpose()) * s);
    Ok(SensingModelMatrix { a: outer, da })
}

/// Array model plus device positions: everything a device needs to evaluate its loss.
#[derive(Clone, Copy, Debug)]
pub struct SensingContext<'a> {
    pub array: &'a ArrayModel,
    pub devices: &'a DeviceGeometry,
}

impl<'a> SensingContext<'a> {
    pub fn new(array: &'a ArrayModel, devices: &'a DeviceGeometry) -> Self {
        Self { array, devices }
    }

    fn model(&self, stat: &SufficientStatistic, v: &Position3) -> Result<SensingModelMatrix> {
        let dev = self
            .devices
            .positions
            .get(stat.device)
            .ok_or_else(|| Error::param(format!("statistic refers to unknown device {}", stat.device)))?;
        with_device(sensing_model(self.array, dev, v, stat.frame_len, stat.varsigma), stat.device)
    }

    /// `l_k(v) = ||Xi_hat_k - A_k(v) B_k||_F^2`.
    pub fn local_loss(&self, stat: &SufficientStatistic, v: &Position3) -> Result<f64> {
        let model = self.model(stat, v)?;
        Ok(frob_sq(&(&stat.xi_hat - model.a * &stat.root)))
    }

    /// Loss and its gradient `-2 Re tr(R^H dA_i B_k)` with `R` the residual.
    pub fn local_loss_and_grad(&self, stat: &SufficientStatistic, v: &Position3) -> Result<(f64, [f64; 3])> {
        let model = self.model(stat, v)?;
        let resid = &stat.xi_hat - &model.a * &stat.root;
        let grad = std::array::from_fn(|i| -2.0 * inner(&resid, &(&model.da[i] * &stat.root)).re);
        Ok((frob_sq(&resid), grad))
    }

    pub fn local_loss_grad(&self, stat: &SufficientStatistic, v: &Position3) -> Result<[f64; 3]> {
        Ok(self.local_loss_and_grad(stat, v)?.1)
    }

    pub fn total_loss(&self, stats: &[SufficientStatistic], v: &Position3) -> Result<f64> {
        stats.iter().map(|s| self.local_loss(s, v)).sum()
    }

    pub fn total_loss_and_grad(&self, stats: &[SufficientStatistic], v: &Position3) -> Result<(f64, [f64; 3])> {
        let mut loss = 0.0;
        let mut grad = [0.0; 3];
        for s in stats {
            let (l, g) = self.local_loss_and_grad(s, v)?;
            loss += l;
            for i in 0..3 {
                grad[i] += g[i];
            }
        }
        Ok((loss, grad))
    }

    /// Residual vector (real and imaginary parts stacked) and its Jacobian, for
    /// Gauss-Newton refinement.
    fn residual_system(&self, stats: &[SufficientStatistic], v: &Position3) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
        let mut r = Vec::new();
        let mut jac = Vec::new();
        for s in stats {
            let model = self.model(s, v)?;
            let resid = &s.xi_hat - &model.a * &s.root;
            let d: [CMat; 3] = std::array::from_fn(|i| &model.da[i] * &s.root);
            for (idx, z) in resid.iter().enumerate() {
                r.push(z.re);
                r.push(z.im);
                // residual = Xi - A B, so its derivative is -dA B
                jac.push(std::array::from_fn(|i| -d[i][idx].re));
                jac.push(std::array::from_fn(|i| -d[i][idx].im));
            }
        }
        Ok((r, jac))
    }
}

/// Settings for the grid-plus-refinement maximum-likelihood search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSettings {
    pub grid: GridResolution,
    pub refine_iters: usize,
    /// Number of best grid points refined independently.
    pub starts: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { grid: GridResolution::new(41, 41, 7), refine_iters: 200, starts: 4 }
    }
}

/// Damped Gauss-Newton refinement of `sum_k l_k` from `start`. Steps that
/// increase the loss or hit the singular region are rejected and the damping grows.
pub fn refine_ml(ctx: &SensingContext<'_>, stats: &[SufficientStatistic], start: Position3, iters: usize) -> Result<(Position3, f64)> {
    refine_projected(ctx, stats, start, iters, |p| p)
}

/// Damped Gauss-Newton where every candidate is mapped through `project` before evaluation.
fn refine_projected(
    ctx: &SensingContext<'_>,
    stats: &[SufficientStatistic],
    start: Position3,
    iters: usize,
    project: impl Fn(Position3) -> Position3,
) -> Result<(Position3, f64)> {
    let mut v = project(start);
    let mut loss = ctx.total_loss(stats, &v)?;
    let mut damping = 1e-3;
    for _ in 0..iters {
        let (r, jac) = ctx.residual_system(stats, &v)?;
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (row, &ri) in jac.iter().zip(&r) {
            for a in 0..3 {
                jtr[a] += row[a] * ri;
                for b in 0..3 {
                    jtj[(a, b)] += row[a] * row[b];
                }
            }
        }
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj;
            for a in 0..3 {
                lhs[(a, a)] += damping * scale;
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&(-jtr))) else {
                damping *= 10.0;
                continue;
            };
            let cand = project(Position3::new(v.x + step[0], v.y + step[1], v.z + step[2]));
            match ctx.total_loss(stats, &cand) {
                Ok(l) if l < loss => {
                    let rel = (loss - l) / loss.max(f64::MIN_POSITIVE);
                    let moved = cand.distance_sq(&v).sqrt();
                    v = cand;
                    loss = l;
                    damping = (damping / 3.0).max(1e-12);
                    improved = true;
                    if rel < 1e-15 || moved < 1e-10 {
                        return Ok((v, loss));
                    }
                    break;
                }
                _ => damping *= 4.0,
            }
        }
        if !improved {
            break;
        }
    }
    Ok((v, loss))
}

/// Centralized maximum-likelihood reference: grid search of `sum_k l_k` over the
/// region, then refinement of the best few grid points, kept inside the region.
pub fn joint_ml_oracle(
    ctx: &SensingContext<'_>,
    stats: &[SufficientStatistic],
    region: &TargetRegion,
    settings: &OracleSettings,
) -> Result<Position3> {
    if settings.grid.is_empty() {
        return Err(Error::param("empty search grid"));
    }
    if stats.is_empty() {
        return Err(Error::param("no sufficient statistics supplied"));
    }
    region.validate()?;
    let grid = region.grid(settings.grid);
    let mut scored: Vec<(f64, Position3)> = grid
        .par_iter()
        .filter_map(|p| ctx.total_loss(stats, p).ok().map(|l| (l, *p)))
        .collect();
    if scored.is_empty() {
        return Err(Error::param("every grid point is singular"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.x.total_cmp(&b.1.x)).then(a.1.y.total_cmp(&b.1.y)).then(a.1.z.total_cmp(&b.1.z)));
    let starts = settings.starts.max(1).min(scored.len());
    let mut best: Option<(Position3, f64)> = None;
    for (_, p) in &scored[..starts] {
        let (v, l) = refine_projected(ctx, stats, *p, settings.refine_iters, |q| region.clamp(&q))?;
        if best.as_ref().is_none_or(|b| l < b.1) {
            best = Some((v, l));
        }
    }
    Ok(best.expect("at least one start").0)
}

/// Arithmetic mean of per-device estimates.
pub fn single_shot_estimate(estimates: &[Position3]) -> Result<Position3> {
    if estimates.is_empty() {
        return Err(Error::param("no local estimates"));
    }
    let n = estimates.len() as f64;
    let sum = estimates.iter().fold([0.0; 3], |acc, p| [acc[0] + p.x, acc[1] + p.y, acc[2] + p.z]);
    Ok(Position3::new(sum[0] / n, sum[1] / n, sum[2] / n))
}
