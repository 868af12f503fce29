//! Over-the-air aggregation at the parameter server: superposition, receive
//! beamforming, aggregation error and the MMSE receiver.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{complex_normal_vector, frob_sq, solve_hpd, CMat, CVec};
use crate::signaling::{AggregationWeights, PrecoderSet, PulseBook};

/// Receive beamformers `M[t]` (N x I), one per pulse interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverSet {
    pub m: Vec<CMat>,
}

impl ReceiverSet {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn at(&self, t: usize) -> &CMat {
        &self.m[t % self.m.len()]
    }
}

/// `y[t] = sum_k H_k x_k[t] + z[t]` with `z ~ CN(0, sigma2 I)`.
pub fn ps_receive<R: Rng + ?Sized>(xs: &[CVec], channels: &ChannelSet, rng: &mut R, sigma2: f64) -> Result<CVec> {
    if xs.len() != channels.devices() {
        return Err(Error::dim(format!("{} transmit signals for {} channels", xs.len(), channels.devices())));
    }
    if sigma2 < 0.0 {
        return Err(Error::param("noise variance must be non-negative"));
    }
    let n = channels.server_antennas();
    let mut y = CVec::zeros(n);
    for (x, h) in xs.iter().zip(&channels.h) {
        if x.len() != h.ncols() {
            return Err(Error::dim(format!("signal of length {} for a channel with {} columns", x.len(), h.ncols())));
        }
        y.gemv(Complex64::new(1.0, 0.0), h, x, Complex64::new(1.0, 0.0));
    }
    if sigma2 > 0.0 {
        y += complex_normal_vector(rng, n, sigma2);
    }
    Ok(y)
}

/// `r[t] = M[t]^H y[t]`.
pub fn apply_receiver(m: &CMat, y: &CVec) -> Result<CVec> {
    if m.nrows() != y.len() {
        return Err(Error::dim(format!("receiver has {} rows but y has length {}", m.nrows(), y.len())));
    }
    Ok(m.ad_mul(y))
}

fn check_dims(precoders: &PrecoderSet, channels: &ChannelSet, weights: &AggregationWeights, pulses: &[Complex64]) -> Result<()> {
    let k = precoders.devices();
    if channels.devices() != k || weights.devices() != k || pulses.len() != k {
        return Err(Error::dim(format!(
            "device counts disagree: precoders {k}, channels {}, weights {}, pulses {}",
            channels.devices(),
            weights.devices(),
            pulses.len()
        )));
    }
    if weights.tasks() != precoders.tasks() {
        return Err(Error::dim("weights and precoders disagree on the number of tasks"));
    }
    Ok(())
}

/// Closed-form aggregation sum-error at one interval:
/// `sum_k ||M^H H_k C_k p_k - W_k||_F^2 + sigma2 ||M||_F^2`.
pub fn aggregation_mse(
    m: &CMat,
    precoders: &PrecoderSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &[Complex64],
    sigma2: f64,
) -> f64 {
    let mut total = sigma2 * frob_sq(m);
    for k in 0..precoders.devices() {
        let eff = m.ad_mul(&(&channels.h[k] * &precoders.c[k])) * pulses[k];
        total += frob_sq(&(eff - weights.matrix(k)));
    }
    total
}

/// Time average of [`aggregation_mse`] over the pulse frame.
pub fn time_avg_mse(
    receivers: &ReceiverSet,
    precoders: &PrecoderSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    book: &PulseBook,
    sigma2: f64,
) -> Result<f64> {
    if receivers.len() != book.len() {
        return Err(Error::dim(format!("{} receivers for a frame of {} intervals", receivers.len(), book.len())));
    }
    check_dims(precoders, channels, weights, &book.at(0))?;
    let total: f64 = (0..book.len())
        .map(|t| aggregation_mse(&receivers.m[t], precoders, channels, weights, &book.at(t), sigma2))
        .sum();
    Ok(total / book.len() as f64)
}

/// MMSE receiver
/// `M*[t] = (sum_k H_k C_k C_k^H H_k^H + sigma2 I)^{-1} sum_k p_k[t] H_k C_k W_k^H`.
pub fn optimal_receiver(
    precoders: &PrecoderSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &[Complex64],
    sigma2: f64,
) -> Result<CMat> {
    check_dims(precoders, channels, weights, pulses)?;
    let (gram, rhs) = receiver_system(precoders, channels, weights, pulses, sigma2);
    solve_receiver(gram, &rhs)
}

/// Left-hand Gram matrix and right-hand side of the MMSE normal equations.
pub(crate) fn receiver_system(
    precoders: &PrecoderSet,
    channels: &ChannelSet,
    weights: &AggregationWeights,
    pulses: &[Complex64],
    sigma2: f64,
) -> (CMat, CMat) {
    let n = channels.server_antennas();
    let i = precoders.tasks();
    let mut gram = CMat::identity(n, n) * Complex64::new(sigma2, 0.0);
    let mut rhs = CMat::zeros(n, i);
    for k in 0..precoders.devices() {
        let hc = &channels.h[k] * &precoders.c[k];
        gram += &hc * hc.adjoint();
        rhs += &hc * weights.matrix(k).adjoint() * pulses[k];
    }
    (gram, rhs)
}

pub(crate) fn solve_receiver(gram: CMat, rhs: &CMat) -> Result<CMat> {
    if rhs.iter().all(|z| z.norm() == 0.0) {
        return Ok(CMat::zeros(rhs.nrows(), rhs.ncols()));
    }
    // symmetrize to absorb round-off before the Cholesky factorization
    let gram = (&gram + gram.adjoint()).map(|z| z * 0.5);
    solve_hpd(gram, rhs).ok_or_else(|| {
        Error::Singular("receiver normal equations are not positive definite; use sigma2 > 0".into())
    })
}
