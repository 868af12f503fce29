//! Versioned JSON scenario files.
//!
//! Only `K`, `M` and `N` are required; every other key falls back to the
//! defaults of [`ScenarioConfig::default`]. Validation collects every
//! violation with its key path before failing.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ArrayModel, GridResolution, TargetRegion};
use crate::moop::MoopConfig;
use crate::signaling::PulseFamily;

pub const SCHEMA_VERSION: u32 = 1;
pub const REQUIRED_KEYS: [&str; 3] = ["K", "M", "N"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsMode {
    /// Each frame's statistic is built from that frame's echoes only.
    PerFrame,
    /// Each frame end rebuilds the statistic from every echo collected so far.
    Cumulative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceRing {
    pub r_in: f64,
    pub r_out: f64,
    pub arc_deg: f64,
}

impl Default for DeviceRing {
    fn default() -> Self {
        Self { r_in: 50.0, r_out: 100.0, arc_deg: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub devices: DeviceRing,
    pub target: TargetRegion,
    /// Grid used to evaluate the bound constant `rho`.
    pub rho_grid: [usize; 3],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = GridResolution::default();
        Self {
            devices: DeviceRing::default(),
            target: TargetRegion { r_in: 100.0, r_out: 110.0, arc_deg: 20.0, alt_min: 0.0, alt_max: 3.0 },
            rho_grid: [g.radial, g.angular, g.vertical],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub rounds: usize,
    /// Target step, metres per unit of the round's common gradient scale.
    pub eta_v: f64,
    /// Step decay horizon in rounds: the step in round `r` is `eta_v / sqrt(1 + r / eta_v_decay)`.
    /// Zero keeps the step constant.
    pub eta_v_decay: f64,
    /// Clip on the magnitude of each aggregated sensing entry.
    pub grad_clip: f64,
    pub eta_model: f64,
    pub local_epochs: usize,
    pub dirichlet_alpha: f64,
    /// Rounds per channel coherence block; beamformers are redesigned per block.
    pub coherence_rounds: usize,
    pub classes: usize,
    pub features: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub statistics: StatisticsMode,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            eta_v: 0.1,
            eta_v_decay: 20.0,
            grad_clip: 10.0,
            eta_model: 0.1,
            local_epochs: 5,
            dirichlet_alpha: 0.4,
            coherence_rounds: 4,
            classes: 4,
            features: 7,
            train_samples: 3000,
            test_samples: 1000,
            statistics: StatisticsMode::Cumulative,
        }
    }
}

impl ProtocolConfig {
    /// Model dimension, and so the number of intervals per round.
    pub fn model_dim(&self) -> usize {
        self.classes * (self.features + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Pulse length.
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "P")]
    pub power: f64,
    pub sigma2: f64,
    /// Per-device echo noise variances; empty means `1e-6` for every device.
    pub varsigma2: Vec<f64>,
    pub geometry: GeometryConfig,
    pub wavelength: f64,
    pub element_spacing: f64,
    pub alpha0: f64,
    pub pulse_family: PulseFamily,
    pub solver: MoopConfig,
    pub protocol: ProtocolConfig,
    pub master_seed: u64,
}

pub const DEFAULT_VARSIGMA2: f64 = 1e-6;

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            k: 15,
            m: 4,
            n: 16,
            t: 16,
            i: 2,
            power: 1.0,
            sigma2: 1e-3,
            varsigma2: Vec::new(),
            geometry: GeometryConfig::default(),
            wavelength: 0.1,
            element_spacing: 0.05,
            alpha0: 1.0,
            pulse_family: PulseFamily::Dft,
            solver: MoopConfig::default(),
            protocol: ProtocolConfig::default(),
            master_seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn array(&self) -> ArrayModel {
        ArrayModel { elements: self.m, wavelength: self.wavelength, element_spacing: self.element_spacing, alpha0: self.alpha0 }
    }

    pub fn rho_grid(&self) -> GridResolution {
        let [r, a, v] = self.geometry.rho_grid;
        GridResolution::new(r, a, v)
    }

    /// Echo noise variances with the empty-list default expanded.
    pub fn varsigma2(&self) -> Vec<f64> {
        if self.varsigma2.is_empty() {
            vec![DEFAULT_VARSIGMA2; self.k]
        } else {
            self.varsigma2.clone()
        }
    }

    /// Echo noise standard deviations.
    pub fn varsigma(&self) -> Vec<f64> {
        self.varsigma2().iter().map(|v| v.sqrt()).collect()
    }

    /// Solver settings with the scenario's power budget.
    pub fn solver(&self) -> MoopConfig {
        MoopConfig { power: self.power, ..self.solver }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        need(self.version == SCHEMA_VERSION, format!("version: unsupported schema version {} (expected {SCHEMA_VERSION})", self.version));
        need(self.k >= 1, "K: must be at least 1".into());
        need(self.m >= 1, "M: must be at least 1".into());
        need(self.n >= 1, "N: must be at least 1".into());
        need(self.i >= 1 && self.i <= self.m, format!("I: must satisfy 1 <= I <= M, got I={} with M={}", self.i, self.m));
        need(self.t >= self.k, format!("T: pulse length {} is shorter than K={}", self.t, self.k));
        if self.pulse_family == PulseFamily::Hadamard {
            need(self.t.is_power_of_two(), format!("T: Hadamard pulses need a power-of-two length, got {}", self.t));
        }
        need(self.power > 0.0 && self.power.is_finite(), format!("P: must be positive and finite, got {}", self.power));
        need(self.sigma2 > 0.0 && self.sigma2.is_finite(), format!("sigma2: must be positive and finite, got {}", self.sigma2));
        if !self.varsigma2.is_empty() {
            need(self.varsigma2.len() == self.k, format!("varsigma2: expected {} entries, got {}", self.k, self.varsigma2.len()));
            for (j, v) in self.varsigma2.iter().enumerate() {
                need(*v > 0.0 && v.is_finite(), format!("varsigma2[{j}]: must be positive and finite, got {v}"));
            }
        }
        let d = &self.geometry.devices;
        need(d.r_in > 0.0 && d.r_in < d.r_out && d.r_out.is_finite(), format!("geometry.devices: need 0 < r_in < r_out, got {} and {}", d.r_in, d.r_out));
        need(d.arc_deg > 0.0 && d.arc_deg <= 360.0, format!("geometry.devices.arc_deg: must lie in (0, 360], got {}", d.arc_deg));
        let target = self.geometry.target.validate();
        need(target.is_ok(), format!("geometry.target: {}", target.err().map(|e| e.to_string()).unwrap_or_default()));
        need(self.geometry.rho_grid.iter().all(|&n| n >= 1), "geometry.rho_grid: every resolution must be at least 1".into());
        need(self.wavelength > 0.0, format!("wavelength: must be positive, got {}", self.wavelength));
        need(self.element_spacing > 0.0, format!("element_spacing: must be positive, got {}", self.element_spacing));
        need(self.alpha0 > 0.0, format!("alpha0: must be positive, got {}", self.alpha0));
        let p = &self.protocol;
        need(p.rounds >= 1, "protocol.rounds: must be at least 1".into());
        need(p.eta_v_decay >= 0.0 && p.eta_v_decay.is_finite(), format!("protocol.eta_v_decay: must be non-negative, got {}", p.eta_v_decay));
        need(p.eta_v > 0.0 && p.eta_v.is_finite(), format!("protocol.eta_v: must be positive, got {}", p.eta_v));
        need(p.grad_clip > 0.0, format!("protocol.grad_clip: must be positive, got {}", p.grad_clip));
        need(p.eta_model > 0.0 && p.eta_model.is_finite(), format!("protocol.eta_model: must be positive, got {}", p.eta_model));
        need(p.local_epochs >= 1, "protocol.local_epochs: must be at least 1".into());
        need(p.dirichlet_alpha > 0.0 && p.dirichlet_alpha.is_finite(), format!("protocol.dirichlet_alpha: must be positive, got {}", p.dirichlet_alpha));
        need(p.coherence_rounds >= 1, "protocol.coherence_rounds: must be at least 1".into());
        need(p.classes >= 2, "protocol.classes: must be at least 2".into());
        need(p.features >= 1, "protocol.features: must be at least 1".into());
        need(p.model_dim() >= 3, "protocol: model dimension classes*(features+1) must be at least 3".into());
        need(p.train_samples >= self.k, format!("protocol.train_samples: need at least one sample per device, got {}", p.train_samples));
        need(p.test_samples >= 1, "protocol.test_samples: must be at least 1".into());
        if let Err(Error::Config(mut solver_errs)) = self.solver().validate() {
            for e in &mut solver_errs {
                *e = e.replacen("moop.", "solver.", 1);
            }
            errs.extend(solver_errs);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Parses, fills defaults and validates a scenario from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("<root>: not valid JSON: {e}")]))?;
        let obj = value.as_object().ok_or_else(|| Error::Config(vec!["<root>: expected a JSON object".into()]))?;
        let missing: Vec<String> =
            REQUIRED_KEYS.iter().filter(|k| !obj.contains_key(**k)).map(|k| format!("{k}: required key is missing")).collect();
        if !missing.is_empty() {
            return Err(Error::Config(missing));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(vec![format!("schema: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    ScenarioConfig::from_json(&text).map_err(|e| match e {
        Error::Config(errs) => Error::Config(errs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

pub fn save_scenario(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_json() + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
