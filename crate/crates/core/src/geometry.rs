//! Device and target placement, far-field array responses and Rayleigh uplink channels.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_normal_matrix, CMat, CVec};
use crate::seeds::rng_from_seed;

/// Geometries closer than this (in meters) to a device are rejected.
pub const MIN_SEPARATION: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Position3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.to_array()[i]
    }

    pub fn with_coord(mut self, i: usize, value: f64) -> Self {
        match i {
            0 => self.x = value,
            1 => self.y = value,
            _ => self.z = value,
        }
        self
    }

    pub fn distance(&self, other: &Position3) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Position3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn radius_xy(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Device positions on an annular sector centered on the +x axis around the
/// parameter server at the origin. Devices sit at ground level (z = 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub positions: Vec<Position3>,
    pub arc_deg: f64,
    pub r_in: f64,
    pub r_out: f64,
}

impl DeviceGeometry {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Smallest distance from `p` to any device, with the device index.
    pub fn nearest(&self, p: &Position3) -> (usize, f64) {
        self.positions
            .iter()
            .enumerate()
            .map(|(k, q)| (k, q.distance(p)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub r_in: f64,
    pub r_out: f64,
    pub arc_deg: f64,
    pub alt_min: f64,
    pub alt_max: f64,
}

impl TargetRegion {
    pub fn validate(&self) -> Result<()> {
        check_sector(self.r_in, self.r_out, self.arc_deg)?;
        if !(self.alt_min.is_finite() && self.alt_max.is_finite()) || self.alt_min > self.alt_max {
            return Err(Error::param(format!(
                "altitude range [{}, {}] is empty",
                self.alt_min, self.alt_max
            )));
        }
        Ok(())
    }

    /// Maps unit-cube coordinates `(u_r, u_phi, u_z)` onto the region so that
    /// uniform `u` gives a uniform point in the sector area.
    pub fn point_at(&self, u_r: f64, u_phi: f64, u_z: f64) -> Position3 {
        let r = (self.r_in.powi(2) + u_r * (self.r_out.powi(2) - self.r_in.powi(2))).sqrt();
        let half = self.arc_deg.to_radians() / 2.0;
        let phi = -half + u_phi * 2.0 * half;
        let z = self.alt_min + u_z * (self.alt_max - self.alt_min);
        Position3::new(r * phi.cos(), r * phi.sin(), z)
    }

    /// Regular grid over `(radius, azimuth, altitude)` with the given counts per axis.
    pub fn grid(&self, res: GridResolution) -> Vec<Position3> {
        let lin = |a: f64, b: f64, n: usize, i: usize| {
            if n <= 1 {
                (a + b) / 2.0
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        };
        let half = self.arc_deg.to_radians() / 2.0;
        let mut out = Vec::with_capacity(res.radial * res.angular * res.vertical);
        for ir in 0..res.radial {
            let r = lin(self.r_in, self.r_out, res.radial, ir);
            for ia in 0..res.angular {
                let phi = lin(-half, half, res.angular, ia);
                for iz in 0..res.vertical {
                    let z = lin(self.alt_min, self.alt_max, res.vertical, iz);
                    out.push(Position3::new(r * phi.cos(), r * phi.sin(), z));
                }
            }
        }
        out
    }

    /// Center of the sector in `(radius, azimuth, altitude)`.
    pub fn center(&self) -> Position3 {
        let r = (self.r_in + self.r_out) / 2.0;
        Position3::new(r, 0.0, (self.alt_min + self.alt_max) / 2.0)
    }

    /// Clamps radius, azimuth and altitude of `p` into the region. Points
    /// already inside are returned unchanged.
    pub fn clamp(&self, p: &Position3) -> Position3 {
        let half = self.arc_deg.to_radians() / 2.0;
        let r = p.radius_xy().clamp(self.r_in, self.r_out);
        let phi = if p.x == 0.0 && p.y == 0.0 { 0.0 } else { p.y.atan2(p.x).clamp(-half, half) };
        Position3::new(r * phi.cos(), r * phi.sin(), p.z.clamp(self.alt_min, self.alt_max))
    }

    pub fn contains(&self, p: &Position3, tol: f64) -> bool {
        let r = p.radius_xy();
        let phi = p.y.atan2(p.x).to_degrees().abs();
        r >= self.r_in - tol
            && r <= self.r_out + tol
            && phi <= self.arc_deg / 2.0 + tol
            && p.z >= self.alt_min - tol
            && p.z <= self.alt_max + tol
    }
}

/// Grid point counts along radius, azimuth and altitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResolution {
    pub radial: usize,
    pub angular: usize,
    pub vertical: usize,
}

impl GridResolution {
    pub const fn new(radial: usize, angular: usize, vertical: usize) -> Self {
        Self { radial, angular, vertical }
    }

    pub fn len(&self) -> usize {
        self.radial * self.angular * self.vertical
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for GridResolution {
    fn default() -> Self {
        Self::new(21, 21, 4)
    }
}

fn check_sector(r_in: f64, r_out: f64, arc_deg: f64) -> Result<()> {
    if !(r_in.is_finite() && r_out.is_finite() && r_in > 0.0 && r_in < r_out) {
        return Err(Error::param(format!("radii must satisfy 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")));
    }
    if !(arc_deg > 0.0 && arc_deg <= 360.0) {
        return Err(Error::param(format!("arc must lie in (0, 360] degrees, got {arc_deg}")));
    }
    Ok(())
}

pub fn place_devices(seed: u64, k: usize, r_in: f64, r_out: f64, arc_deg: f64) -> Result<DeviceGeometry> {
    if k == 0 {
        return Err(Error::param("at least one device is required"));
    }
    check_sector(r_in, r_out, arc_deg)?;
    let mut rng = rng_from_seed(seed);
    let sector = TargetRegion { r_in, r_out, arc_deg, alt_min: 0.0, alt_max: 0.0 };
    let positions = (0..k)
        .map(|_| {
            let (ur, ua): (f64, f64) = (rng.random(), rng.random());
            sector.point_at(ur, ua, 0.0)
        })
        .collect();
    Ok(DeviceGeometry { positions, arc_deg, r_in, r_out })
}

pub fn place_target(seed: u64, region: &TargetRegion) -> Result<Position3> {
    region.validate()?;
    let mut rng = rng_from_seed(seed);
    let (ur, ua, uz): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    Ok(region.point_at(ur, ua, uz))
}

/// Uniform linear array with a far-field, path-loss weighted response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayModel {
    pub elements: usize,
    pub wavelength: f64,
    pub element_spacing: f64,
    pub alpha0: f64,
}

/// Geometry terms shared by the response and its gradient.
struct LineOfSight {
    dist: f64,
    delta: [f64; 3],
    gain: f64,
    sin_theta: f64,
}

impl ArrayModel {
    pub fn half_wavelength(elements: usize, wavelength: f64, alpha0: f64) -> Self {
        Self { elements, wavelength, element_spacing: wavelength / 2.0, alpha0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements == 0 {
            return Err(Error::param("array needs at least one element"));
        }
        if !(self.wavelength > 0.0 && self.element_spacing > 0.0 && self.alpha0 > 0.0) {
            return Err(Error::param("wavelength, element spacing and alpha0 must be positive"));
        }
        Ok(())
    }

    fn line_of_sight(&self, device: &Position3, target: &Position3) -> Result<LineOfSight> {
        let delta = [target.x - device.x, target.y - device.y, target.z - device.z];
        let dist = device.distance(target);
        if !(dist >= MIN_SEPARATION) {
            return Err(Error::SingularGeometry { device: usize::MAX, distance: dist });
        }
        Ok(LineOfSight { dist, delta, gain: self.alpha0 / (dist * dist), sin_theta: delta[2] / dist })
    }

    fn phase_rate(&self) -> f64 {
        2.0 * PI * self.element_spacing / self.wavelength
    }

    /// Response `a_k(v)` of the array at `device` toward `target`.
    pub fn response(&self, device: &Position3, target: &Position3) -> Result<CVec> {
        let los = self.line_of_sight(device, target)?;
        let w = self.phase_rate() * los.sin_theta;
        Ok(CVec::from_fn(self.elements, |m, _| Complex64::from_polar(los.gain, -w * m as f64)))
    }

    /// Partial derivatives of [`Self::response`] with respect to the target coordinates.
    pub fn response_grad(&self, device: &Position3, target: &Position3) -> Result<[CVec; 3]> {
        Ok(self.response_and_grad(device, target)?.1)
    }

    pub fn response_and_grad(&self, device: &Position3, target: &Position3) -> Result<(CVec, [CVec; 3])> {
        let los = self.line_of_sight(device, target)?;
        let rate = self.phase_rate();
        let w = rate * los.sin_theta;
        let a = CVec::from_fn(self.elements, |m, _| Complex64::from_polar(los.gain, -w * m as f64));
        let d2 = los.dist * los.dist;
        let grad = std::array::from_fn(|i| {
            // d(alpha)/alpha and d(sin theta) along coordinate i
            let dlog_gain = -2.0 * los.delta[i] / d2;
            let dsin = if i == 2 { 1.0 / los.dist } else { 0.0 } - los.delta[2] * los.delta[i] / (d2 * los.dist);
            CVec::from_fn(self.elements, |m, _| {
                a[m] * Complex64::new(dlog_gain, -rate * m as f64 * dsin)
            })
        });
        Ok((a, grad))
    }
}

/// Uplink channel matrices `H_k` (N x M), one per device.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub h: Vec<CMat>,
}

impl ChannelSet {
    pub fn devices(&self) -> usize {
        self.h.len()
    }

    pub fn server_antennas(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    pub fn device_antennas(&self) -> usize {
        self.h.first().map_or(0, |h| h.ncols())
    }
}

pub fn sample_rayleigh_channels(seed: u64, k: usize, n: usize, m: usize) -> Result<ChannelSet> {
    if k == 0 || n == 0 || m == 0 {
        return Err(Error::param("channel dimensions must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(ChannelSet { h: (0..k).map(|_| complex_normal_matrix(&mut rng, n, m, 1.0)).collect() })
}

/// Tags a singular-geometry error with the offending device index.
pub(crate) fn with_device<T>(r: Result<T>, device: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::SingularGeometry { distance, .. } => Error::SingularGeometry { device, distance },
        other => other,
    })
}
