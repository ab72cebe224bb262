// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::NoiseModel;
use crate::chip::{ArrayGeometry, ProcessParams};
use crate::device::{Environment, MismatchModel};
use crate::error::{Error, Result};
use crate::metrics::{AcfBound, NistConfig};
use crate::reference;
use crate::stabilize::MAX_ENROLL_VPW;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    /// Kelvin.
    pub temperature: Vec<f64>,
    /// External supply, V.
    pub supply: Vec<f64>,
    /// P-well bias, V.
    pub vpw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stabilization {
    pub golden_votes: usize,
    /// Votes per enrollment sweep point.
    pub enroll_votes: usize,
    pub tmv_k: usize,
    /// Reads per chip at nominal for BER statistics.
    pub n_evals: usize,
    /// Reads per sweep point.
    pub sweep_evals: usize,
    pub evb_vpw: Vec<f64>,
    /// Temperatures of the reference enrollment, K.
    pub oracle_temperatures: Vec<f64>,
    /// Mask reconfigured cells that remain unstable.
    pub mask_residual: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub acf_max_lag: usize,
    pub acf_bound: AcfBound,
    pub nist: NistConfig,
    /// Bins of the Hamming-distance histograms.
    pub hd_bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub geometry: ArrayGeometry,
    pub process: ProcessParams,
    pub mismatch: MismatchModel,
    pub noise: NoiseModel,
    pub nominal: Environment,
    pub grids: Grids,
    pub stabilization: Stabilization,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    /// The calibrated reference experiment over ten chips.
    pub fn reference() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seeds: (1..=10).collect(),
            geometry: ArrayGeometry::default(),
            process: reference::process(),
            mismatch: reference::mismatch(),
            noise: reference::noise(),
            nominal: reference::nominal(),
            grids: Grids {
                temperature: reference::temperature_grid(10.0),
                supply: (0..=7).map(|i| 0.7 + 0.1 * i as f64).collect(),
                vpw: vec![-0.4, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4],
            },
            stabilization: Stabilization {
                golden_votes: 1001,
                enroll_votes: 11,
                tmv_k: 11,
                n_evals: 2000,
                sweep_evals: 101,
                evb_vpw: vec![-0.4, -0.2, 0.0, 0.2, 0.4],
                oracle_temperatures: reference::temperature_grid(20.0),
                mask_residual: true,
            },
            metrics: MetricsConfig {
                acf_max_lag: 4000,
                acf_bound: AcfBound::default(),
                nist: NistConfig::default(),
                hd_bins: 50,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.process.validate()?;
        self.mismatch.validate()?;
        self.noise.validate()?;
        self.nominal.validate(self.process.inverter.nmos.fermi_phi)?;
        self.metrics.nist.validate()?;
        let s = &self.stabilization;
        for (name, k) in [("golden_votes", s.golden_votes), ("enroll_votes", s.enroll_votes), ("tmv_k", s.tmv_k)] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("stabilization.{name} must be odd, got {k}")));
            }
        }
        if s.golden_votes < 3 {
            return Err(Error::Config("stabilization.golden_votes must be >= 3".into()));
        }
        if s.n_evals == 0 || s.sweep_evals == 0 {
            return Err(Error::Config("stabilization.n_evals and sweep_evals must be >= 1".into()));
        }
        if let Some(v) = s.evb_vpw.iter().chain(&self.grids.vpw).find(|v| !(v.abs() <= MAX_ENROLL_VPW + 1e-12)) {
            return Err(Error::Config(format!("body bias {v} V outside ±{MAX_ENROLL_VPW} V")));
        }
        if let Some(t) = s.oracle_temperatures.iter().chain(&self.grids.temperature).find(|t| !(**t > 0.0)) {
            return Err(Error::Config(format!("temperature {t} K must be positive")));
        }
        if let Some(v) = self.grids.supply.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Config(format!("supply {v} V must be >= 0")));
        }
        if self.metrics.hd_bins == 0 {
            return Err(Error::Config("metrics.hd_bins must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_round_trips_through_toml() {
        let cfg = ExperimentConfig::reference();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = ExperimentConfig::reference().to_toml().replace("tmv_k", "tmv_kk");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("tmv_kk"), "{err}");
    }

    #[test]
    fn even_votes_rejected() {
        let mut cfg = ExperimentConfig::reference();
        cfg.stabilization.tmv_k = 10;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn body_bias_bound_enforced() {
        let mut cfg = ExperimentConfig::reference();
        cfg.stabilization.evb_vpw.push(0.5);
        assert!(cfg.validate().is_err());
    }
}
