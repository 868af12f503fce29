//! Fisher information of the target coordinates, Cramér-Rao bounds, and the
//! energy-only lower bound on the worst-case bound.
//!
//! The whitened statistics carry unit-variance circular complex noise, so the
//! log-likelihood is `-sum_k ||Xi_hat_k - A_k(v) B_k||_F^2` up to a constant and
//! its information matrix is `J_ij = 2 Re sum_k tr(A_k^i G_k A_k^j^H)` with
//! `G_k = C_k C_k^H`. All bounds below carry the same factor of two.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{with_device, ArrayModel, DeviceGeometry, GridResolution, Position3, TargetRegion, MIN_SEPARATION};
use crate::linalg::{frob_sq, inner, CMat};
use crate::sensing::sensing_model;
use crate::signaling::PrecoderSet;

/// Eigenvalue ratio below which `J` is treated as singular.
pub const IDENTIFIABILITY_RATIO: f64 = 1e-12;

/// 3x3 Fisher information matrix, in 1/m^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherInfo {
    pub j: Matrix3<f64>,
}

impl FisherInfo {
    /// Symmetrizes `j`; rejects non-finite entries.
    pub fn from_matrix(j: Matrix3<f64>) -> Result<Self> {
        if j.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("Fisher information has non-finite entries"));
        }
        Ok(Self { j: (j + j.transpose()) * 0.5 })
    }

    pub fn trace(&self) -> f64 {
        self.j.trace()
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let e = self.j.symmetric_eigenvalues();
        let mut v = [e[0], e[1], e[2]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn is_identifiable(&self) -> bool {
        let [lo, _, hi] = self.eigenvalues();
        hi > 0.0 && lo > IDENTIFIABILITY_RATIO * hi
    }

    /// `tr(J^{-1})`.
    pub fn crb(&self) -> Result<f64> {
        crb(self)
    }
}

pub fn fisher_info(
    precoders: &PrecoderSet,
    v: &Position3,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    frame_len: usize,
    varsigma: &[f64],
) -> Result<FisherInfo> {
    check_inputs(precoders, devices, frame_len, varsigma)?;
    let grams = precoders.grams();
    let mut j = Matrix3::zeros();
    for (k, pos) in devices.positions.iter().enumerate() {
        let model = with_device(sensing_model(array, pos, v, frame_len, varsigma[k]), k)?;
        let ga: [CMat; 3] = std::array::from_fn(|i| &grams[k] * model.da[i].adjoint());
        for a in 0..3 {
            for b in a..3 {
                // tr(A^a G A^b^H) = <A^a^H, G A^b^H>
                let t = inner(&model.da[a].adjoint(), &ga[b]).re;
                j[(a, b)] += 2.0 * t;
                if a != b {
                    j[(b, a)] += 2.0 * t;
                }
            }
        }
    }
    FisherInfo::from_matrix(j)
}

fn check_inputs(precoders: &PrecoderSet, devices: &DeviceGeometry, frame_len: usize, varsigma: &[f64]) -> Result<()> {
    if frame_len == 0 {
        return Err(Error::param("frame length T must be at least 1"));
    }
    if precoders.devices() != devices.len() || varsigma.len() != devices.len() {
        return Err(Error::dim(format!(
            "{} precoders, {} devices, {} noise levels",
            precoders.devices(),
            devices.len(),
            varsigma.len()
        )));
    }
    if varsigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::param("echo noise standard deviations must be positive"));
    }
    Ok(())
}

/// `tr(J^{-1})`; errors when `J` is numerically singular.
pub fn crb(info: &FisherInfo) -> Result<f64> {
    if !info.is_identifiable() {
        let [lo, _, hi] = info.eigenvalues();
        return Err(Error::Unidentifiable(format!("Fisher information eigenvalues span [{lo:.3e}, {hi:.3e}]")));
    }
    let inv = info
        .j
        .cholesky()
        .ok_or_else(|| Error::Unidentifiable("Fisher information is not positive definite".into()))?
        .inverse();
    Ok(inv.trace())
}

/// Largest CRB over a grid, the maximizing position, and how many grid points
/// were skipped because they are unidentifiable or too close to a device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub crb: f64,
    pub argmax: Position3,
    pub excluded: usize,
    pub evaluated: usize,
}

pub fn worst_case_crb_on(
    precoders: &PrecoderSet,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    points: &[Position3],
    frame_len: usize,
    varsigma: &[f64],
) -> Result<WorstCase> {
    if points.is_empty() {
        return Err(Error::param("empty grid"));
    }
    check_inputs(precoders, devices, frame_len, varsigma)?;
    let values: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            if devices.nearest(p).1 < MIN_SEPARATION {
                return None;
            }
            fisher_info(precoders, p, array, devices, frame_len, varsigma).and_then(|f| crb(&f)).ok()
        })
        .collect();
    let mut best: Option<(f64, Position3)> = None;
    let mut excluded = 0;
    for (v, p) in values.iter().zip(points) {
        match v {
            Some(c) if best.is_none_or(|b| *c > b.0) => best = Some((*c, *p)),
            Some(_) => {}
            None => excluded += 1,
        }
    }
    let (crb, argmax) = best.ok_or_else(|| Error::Unidentifiable(format!("all {} grid points are unidentifiable", points.len())))?;
    Ok(WorstCase { crb, argmax, excluded, evaluated: points.len() - excluded })
}

/// Maximum of [`crb`] over the region grid.
pub fn worst_case_crb(
    precoders: &PrecoderSet,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    region: &TargetRegion,
    res: GridResolution,
    frame_len: usize,
    varsigma: &[f64],
) -> Result<WorstCase> {
    region.validate()?;
    worst_case_crb_on(precoders, array, devices, &region.grid(res), frame_len, varsigma)
}

/// Entrywise bound `2 E({C_k}) sum_k ||A_k^i||_F ||A_k^j||_F` on `|J_ij|`.
pub fn fim_entry_bound(
    precoders: &PrecoderSet,
    v: &Position3,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    frame_len: usize,
    varsigma: &[f64],
) -> Result<Matrix3<f64>> {
    check_inputs(precoders, devices, frame_len, varsigma)?;
    let energy = precoders.energy();
    let mut bound = Matrix3::zeros();
    for (k, pos) in devices.positions.iter().enumerate() {
        let model = with_device(sensing_model(array, pos, v, frame_len, varsigma[k]), k)?;
        let norms: [f64; 3] = std::array::from_fn(|i| frob_sq(&model.da[i]).sqrt());
        for a in 0..3 {
            for b in 0..3 {
                bound[(a, b)] += norms[a] * norms[b];
            }
        }
    }
    Ok(bound * (2.0 * energy))
}

/// Grid estimate of the derivative-energy constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    /// `9 eps / 2`.
    pub rho: f64,
    /// `eps = 1 / max_grid max_k sum_i ||d_i(a_k a_k^T)||_F^2`.
    pub epsilon: f64,
    pub argmax: Position3,
    /// Grid points within [`MIN_SEPARATION`] of a device.
    pub excluded: usize,
}

/// `max_k sum_i ||d_i(a_k a_k^T)||_F^2` at `v`.
pub fn derivative_energy(array: &ArrayModel, devices: &DeviceGeometry, v: &Position3) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, pos) in devices.positions.iter().enumerate() {
        // unit T and varsigma leave the bare outer-product derivative
        let model = with_device(sensing_model(array, pos, v, 1, 1.0), k)?;
        worst = worst.max(model.da.iter().map(frob_sq).sum());
    }
    Ok(worst)
}

pub fn rho_estimate_on(array: &ArrayModel, devices: &DeviceGeometry, points: &[Position3]) -> Result<RhoEstimate> {
    if points.is_empty() {
        return Err(Error::param("empty grid"));
    }
    if devices.is_empty() {
        return Err(Error::param("no devices"));
    }
    let values: Vec<Option<f64>> = points
        .par_iter()
        .map(|p| {
            if devices.nearest(p).1 < MIN_SEPARATION {
                None
            } else {
                derivative_energy(array, devices, p).ok()
            }
        })
        .collect();
    let mut best: Option<(f64, Position3)> = None;
    let mut excluded = 0;
    for (v, p) in values.iter().zip(points) {
        match v {
            Some(e) if best.is_none_or(|b| *e > b.0) => best = Some((*e, *p)),
            Some(_) => {}
            None => excluded += 1,
        }
    }
    let (max_energy, argmax) =
        best.ok_or_else(|| Error::SingularGeometry { device: devices.nearest(&points[0]).0, distance: devices.nearest(&points[0]).1 })?;
    if !(max_energy.is_finite() && max_energy > 0.0) {
        return Err(Error::param(format!("derivative energy {max_energy} is not finite and positive")));
    }
    let epsilon = 1.0 / max_energy;
    Ok(RhoEstimate { rho: 4.5 * epsilon, epsilon, argmax, excluded })
}

pub fn rho_estimate(array: &ArrayModel, devices: &DeviceGeometry, region: &TargetRegion, res: GridResolution) -> Result<RhoEstimate> {
    region.validate()?;
    rho_estimate_on(array, devices, &region.grid(res))
}

/// The constant `rho` of the energy-only lower bound, from a region grid.
pub fn compute_rho(array: &ArrayModel, devices: &DeviceGeometry, region: &TargetRegion, res: GridResolution) -> Result<f64> {
    Ok(rho_estimate(array, devices, region, res)?.rho)
}

/// `sigma_bar^2` with `1/sigma_bar^2 = sum_k 1/varsigma_k^2`.
pub fn sigma_bar2(varsigma: &[f64]) -> Result<f64> {
    if varsigma.is_empty() || varsigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::param("echo noise standard deviations must be positive"));
    }
    Ok(1.0 / varsigma.iter().map(|s| 1.0 / (s * s)).sum::<f64>())
}

/// `CRB_L = rho sigma_bar^2 / (T E)` from a total energy `E`.
pub fn crb_lower_from_energy(energy: f64, rho: f64, frame_len: usize, varsigma: &[f64]) -> Result<f64> {
    if frame_len == 0 {
        return Err(Error::param("frame length T must be at least 1"));
    }
    if !(rho > 0.0) {
        return Err(Error::param("rho must be positive"));
    }
    if !(energy > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(rho * sigma_bar2(varsigma)? / (frame_len as f64 * energy))
}

pub fn crb_lower_bound(precoders: &PrecoderSet, rho: f64, frame_len: usize, varsigma: &[f64]) -> Result<f64> {
    if varsigma.len() != precoders.devices() {
        return Err(Error::dim(format!("{} noise levels for {} devices", varsigma.len(), precoders.devices())));
    }
    crb_lower_from_energy(precoders.energy(), rho, frame_len, varsigma)
}

/// Total energy at which the lower bound equals `target` (inverse of
/// [`crb_lower_from_energy`]).
pub fn energy_for_bound(target: f64, rho: f64, frame_len: usize, varsigma: &[f64]) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::param("target bound must be positive"));
    }
    Ok(rho * sigma_bar2(varsigma)? / (frame_len as f64 * target))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub crb_at_v: f64,
    pub crb_worst: f64,
    pub crb_lower: f64,
    pub rho: f64,
    pub sigma_bar2: f64,
    pub worst_position: Position3,
    pub excluded_points: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn crb_report(
    precoders: &PrecoderSet,
    v: &Position3,
    array: &ArrayModel,
    devices: &DeviceGeometry,
    region: &TargetRegion,
    res: GridResolution,
    frame_len: usize,
    varsigma: &[f64],
) -> Result<CrbReport> {
    let at_v = crb(&fisher_info(precoders, v, array, devices, frame_len, varsigma)?)?;
    let worst = worst_case_crb(precoders, array, devices, region, res, frame_len, varsigma)?;
    let rho = rho_estimate(array, devices, region, res)?;
    Ok(CrbReport {
        crb_at_v: at_v,
        crb_worst: worst.crb,
        crb_lower: crb_lower_bound(precoders, rho.rho, frame_len, varsigma)?,
        rho: rho.rho,
        sigma_bar2: sigma_bar2(varsigma)?,
        worst_position: worst.argmax,
        excluded_points: worst.excluded.max(rho.excluded),
    })
}
