//! Sensing signaling load: how many real scalars leave the devices for the
//! purpose of localization, plus a nominal cost model of the beamformer design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw echoes forwarded to the server: `s` complex samples per antenna per device.
pub fn ssl_centralized(k: u64, m: u64, s: u64) -> u64 {
    2 * k * m * s
}

/// Distributed localization: `d` gradient entries per round over `R` rounds,
/// each sensing entry sharing its slot with `tau` learning entries. Rounded up.
pub fn ssl_distributed(d: u64, rounds: u64, tau: u64) -> u64 {
    (d * rounds).div_ceil(tau.max(1))
}

/// Nominal operation count `L (K N M^2 + N^3 + (K M I)^3)` for `L` outer iterations.
pub fn complexity_estimate(k: u64, n: u64, m: u64, i: u64, outer: u64) -> f64 {
    let (k, n, m, i, l) = (k as f64, n as f64, m as f64, i as f64, outer as f64);
    l * (k * n * m * m + n.powi(3) + (k * m * i).powi(3))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SslParams {
    pub k: u64,
    pub m: u64,
    pub s: u64,
    pub d: u64,
    pub rounds: u64,
    pub tau: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SslReport {
    pub centralized: u64,
    pub distributed: u64,
    pub params: SslParams,
}

impl SslReport {
    pub fn new(params: SslParams) -> Result<Self> {
        let SslParams { k, m, s, d, rounds, tau } = params;
        if [k, m, s, d, rounds, tau].contains(&0) {
            return Err(Error::param(format!("signaling-load parameters must be positive: {params:?}")));
        }
        Ok(Self { centralized: ssl_centralized(k, m, s), distributed: ssl_distributed(d, rounds, tau), params })
    }

    /// One report per antenna count, the rest held fixed.
    pub fn sweep_antennas(base: SslParams, antennas: &[u64]) -> Result<Vec<Self>> {
        antennas.iter().map(|&m| Self::new(SslParams { m, ..base })).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        assert_eq!(ssl_centralized(10, 8, 200), 32_000);
        assert_eq!(ssl_centralized(1, 1, 1), 2);
        assert_eq!(ssl_centralized(10, 16, 200), 2 * ssl_centralized(10, 8, 200));
        assert_eq!(ssl_distributed(3, 50, 5), 30);
        assert_eq!(ssl_distributed(3, 1, 1), 3);
        assert_eq!(ssl_distributed(3, 50, 7), 22);
    }

    #[test]
    fn complexity_counts_and_cubic_growth() {
        assert_eq!(complexity_estimate(1, 1, 1, 1, 1), 3.0);
        let ratio = complexity_estimate(30, 16, 4, 2, 1) / complexity_estimate(15, 16, 4, 2, 1);
        assert!((ratio - 8.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn distributed_load_ignores_antennas() {
        let base = SslParams { k: 10, m: 1, s: 200, d: 3, rounds: 50, tau: 5 };
        let reports = SslReport::sweep_antennas(base, &[2, 4, 8, 16, 32, 64]).unwrap();
        assert!(reports.iter().all(|r| r.distributed == 30));
        assert_eq!(reports[2].centralized, 32_000);
        assert!(SslReport::new(SslParams { tau: 0, ..base }).is_err());
    }
}
