//! Pulse books, precoders, parameter standardization and transmit-symbol construction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, random_unitary, CMat, CVec};
use crate::seeds::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseFamily {
    #[default]
    Dft,
    Hadamard,
}

/// Unit-modulus, mutually orthogonal pulse sequences, one row per device.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseBook {
    p: CMat,
}

impl PulseBook {
    pub fn new(family: PulseFamily, devices: usize, length: usize) -> Result<Self> {
        match family {
            PulseFamily::Dft => Self::dft(devices, length),
            PulseFamily::Hadamard => Self::hadamard(devices, length),
        }
    }

    /// First `k` rows of the `t x t` DFT matrix, `p_k[t] = exp(-j 2 pi k t / T)`.
    pub fn dft(k: usize, t: usize) -> Result<Self> {
        if k == 0 || t < k {
            return Err(Error::param(format!("DFT pulses need 1 <= K <= T, got K={k}, T={t}")));
        }
        let p = CMat::from_fn(k, t, |row, col| {
            let phase = -2.0 * PI * ((row * col) % t) as f64 / t as f64;
            Complex64::from_polar(1.0, phase)
        });
        Ok(Self { p })
    }

    /// First `k` rows of the Sylvester-ordered Walsh-Hadamard matrix of order `t`.
    pub fn hadamard(k: usize, t: usize) -> Result<Self> {
        if !t.is_power_of_two() {
            return Err(Error::param(format!("Hadamard pulses need a power-of-two length, got {t}")));
        }
        if k == 0 || k > t {
            return Err(Error::param(format!("Hadamard pulses need 1 <= K <= T, got K={k}, T={t}")));
        }
        // H[r][c] = (-1)^{popcount(r & c)}
        let p = CMat::from_fn(k, t, |row, col| {
            if (row & col).count_ones() % 2 == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(-1.0, 0.0)
            }
        });
        Ok(Self { p })
    }

    /// Wraps an explicit `K x T` pulse matrix; every entry must have unit modulus.
    pub fn from_matrix(p: CMat) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::param("empty pulse matrix"));
        }
        if p.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::Contract("pulses must have unit modulus".into()));
        }
        Ok(Self { p })
    }

    pub fn devices(&self) -> usize {
        self.p.nrows()
    }

    pub fn len(&self) -> usize {
        self.p.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.p.ncols() == 0
    }

    pub fn pulse(&self, k: usize, t: usize) -> Complex64 {
        self.p[(k, t)]
    }

    /// Pulses of all devices at interval `t`.
    pub fn at(&self, t: usize) -> Vec<Complex64> {
        self.p.column(t).iter().copied().collect()
    }

    pub fn matrix(&self) -> &CMat {
        &self.p
    }

    /// `G[k][l] = sum_t p_k*[t] p_l[t]`.
    pub fn gram(&self) -> CMat {
        self.p.conjugate() * self.p.transpose()
    }

    /// Every pulse multiplied by a common phase `e^{j phi}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let r = Complex64::from_polar(1.0, phi);
        Self { p: self.p.map(|z| z * r) }
    }
}

/// Device precoders `C_k` (M x I).
#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderSet {
    pub c: Vec<CMat>,
}

impl PrecoderSet {
    pub fn new(c: Vec<CMat>) -> Result<Self> {
        let first = c.first().ok_or_else(|| Error::param("empty precoder set"))?.shape();
        if c.iter().any(|ck| ck.shape() != first) {
            return Err(Error::dim("all precoders must share one shape"));
        }
        Ok(Self { c })
    }

    /// `C_k = sqrt(P / I)` times the first `I` columns of a seeded random unitary.
    pub fn initial(seed: u64, devices: usize, antennas: usize, tasks: usize, power: f64) -> Result<Self> {
        if tasks == 0 || tasks > antennas {
            return Err(Error::param(format!("need 1 <= I <= M, got I={tasks}, M={antennas}")));
        }
        let mut rng = rng_from_seed(seed);
        let s = Complex64::new((power / tasks as f64).sqrt(), 0.0);
        let c = (0..devices)
            .map(|_| random_unitary(&mut rng, antennas).columns(0, tasks).map(|z| z * s))
            .collect();
        Self::new(c)
    }

    pub fn devices(&self) -> usize {
        self.c.len()
    }

    pub fn antennas(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn tasks(&self) -> usize {
        self.c[0].ncols()
    }

    pub fn power(&self, k: usize) -> f64 {
        frob_sq(&self.c[k])
    }

    pub fn powers(&self) -> Vec<f64> {
        self.c.iter().map(frob_sq).collect()
    }

    /// `E({C_k}) = sum_k ||C_k||_F^2`.
    pub fn energy(&self) -> f64 {
        self.powers().iter().sum()
    }

    /// `C_k C_k^H` for every device.
    pub fn grams(&self) -> Vec<CMat> {
        self.c.iter().map(|c| c * c.adjoint()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let f = Complex64::new(factor, 0.0);
        Self { c: self.c.iter().map(|c| c.map(|z| z * f)).collect() }
    }

    pub fn satisfies_power(&self, budget: f64, tol: f64) -> bool {
        self.powers().iter().all(|&p| p <= budget + tol)
    }
}

/// Mean and scale used to standardize one block of parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub mean: f64,
    pub scale: f64,
    /// Set when the block had zero variance; its standardized values are all zero.
    pub degenerate: bool,
}

impl BlockStats {
    pub fn restore(&self, value: f64) -> f64 {
        value * self.scale + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub stats: BlockStats,
}

impl Standardized {
    pub fn restore(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.stats.restore(v)).collect()
    }
}

/// Centers and scales a block to zero mean and unit (population) variance.
pub fn standardize(raw: &[f64]) -> Result<Standardized> {
    if raw.len() < 2 {
        return Err(Error::param("standardization needs at least two values per block"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite parameter in block"));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    if scale <= f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE) {
        return Ok(Standardized {
            values: vec![0.0; raw.len()],
            stats: BlockStats { mean, scale: 0.0, degenerate: true },
        });
    }
    Ok(Standardized {
        values: raw.iter().map(|v| (v - mean) / scale).collect(),
        stats: BlockStats { mean, scale, degenerate: false },
    })
}

/// Standardized per-interval parameters of every device: `values[k]` is `I x T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradients {
    pub values: Vec<DMatrix<f64>>,
    pub stats: Vec<Vec<BlockStats>>,
}

impl TaskGradients {
    /// Standardizes every `(device, task)` row of `raw` independently.
    pub fn from_raw(raw: &[DMatrix<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(raw.len());
        let mut stats = Vec::with_capacity(raw.len());
        for block in raw {
            let mut out = DMatrix::zeros(block.nrows(), block.ncols());
            let mut row_stats = Vec::with_capacity(block.nrows());
            for i in 0..block.nrows() {
                let row: Vec<f64> = block.row(i).iter().copied().collect();
                let s = standardize(&row)?;
                for (t, v) in s.values.iter().enumerate() {
                    out[(i, t)] = *v;
                }
                row_stats.push(s.stats);
            }
            values.push(out);
            stats.push(row_stats);
        }
        Ok(Self { values, stats })
    }

    /// `g_k[t]`.
    pub fn symbol(&self, k: usize, t: usize) -> DVector<f64> {
        self.values[k].column(t).into_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Sensing,
    Learning,
}

/// Diagonal aggregation weights `W_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationWeights {
    pub w: Vec<DVector<f64>>,
}

impl AggregationWeights {
    /// Sensing rows get weight 1 (the joint loss is an unweighted sum). Learning
    /// rows get `K n_k / sum n`: federated-averaging weights rescaled to mean
    /// one so both rows carry equal weight in the MSE. The server divides the
    /// learning aggregate by `K`.
    pub fn for_tasks(tasks: &[TaskKind], samples: &[usize]) -> Result<Self> {
        if tasks.is_empty() || samples.is_empty() {
            return Err(Error::param("weights need at least one task and one device"));
        }
        let total: usize = samples.iter().sum();
        if total == 0 {
            return Err(Error::param("total sample count is zero"));
        }
        let w = samples
            .iter()
            .map(|&n| {
                DVector::from_iterator(
                    tasks.len(),
                    tasks.iter().map(|t| match t {
                        TaskKind::Sensing => 1.0,
                        TaskKind::Learning => samples.len() as f64 * n as f64 / total as f64,
                    }),
                )
            })
            .collect();
        Ok(Self { w })
    }

    pub fn uniform(devices: usize, tasks: usize, weight: f64) -> Self {
        Self { w: vec![DVector::from_element(tasks, weight); devices] }
    }

    pub fn devices(&self) -> usize {
        self.w.len()
    }

    pub fn tasks(&self) -> usize {
        self.w.first().map_or(0, |w| w.len())
    }

    pub fn matrix(&self, k: usize) -> CMat {
        CMat::from_diagonal(&self.w[k].map(|x| Complex64::new(x, 0.0)))
    }
}

/// `s_k[t] = C_k g_k[t]`.
pub fn encode_symbol(c: &CMat, g: &DVector<f64>) -> Result<CVec> {
    if c.ncols() != g.len() {
        return Err(Error::dim(format!("precoder has {} columns but {} parameters were given", c.ncols(), g.len())));
    }
    Ok(c * g.map(|x| Complex64::new(x, 0.0)))
}

/// `x_k[t] = s_k[t] p_k[t]` for a unit-modulus pulse.
pub fn transmit_signal(s: &CVec, pulse: Complex64) -> Result<CVec> {
    if (pulse.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("pulse modulus {} is not 1", pulse.norm())));
    }
    Ok(s * pulse)
}
