// SPDX-License-Identifier: Apache-2.0

//! The four-stage subthreshold inverter chain.
//!
//! Stage 1 has its input tied to its output, so it sits at its own switching
//! voltage `V_M1`. That voltage drives stage 2, whose switching voltage is
//! `V_M2`; the sign of `V_M1 − V_M2` is amplified to a full-swing bit by the
//! remaining stages. Reconfiguration merges stages 1 and 2 into one inverter
//! of doubled width that is compared against stage 3 instead.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::device::{vt, Environment, TransistorParams, VthDeviation};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::solver::bisect;

pub const STAGES: usize = 4;

/// Bisection tolerance for switching voltages.
pub const VM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Nmos = 0,
    Pmos = 1,
}

/// Device types of one inverter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverterParams {
    pub nmos: TransistorParams,
    pub pmos: TransistorParams,
}

impl InverterParams {
    pub fn device(&self, role: Role) -> &TransistorParams {
        match role {
            Role::Nmos => &self.nmos,
            Role::Pmos => &self.pmos,
        }
    }
}

/// Sampled deviations of the eight transistors of a cell, indexed
/// `[stage][role]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMismatch {
    pub devices: [[VthDeviation; 2]; STAGES],
}

impl CellMismatch {
    pub const ZERO: Self = Self {
        devices: [[VthDeviation::ZERO; 2]; STAGES],
    };

    pub fn stage(&self, s: usize) -> (VthDeviation, VthDeviation) {
        (self.devices[s][0], self.devices[s][1])
    }

    /// Deviations of the merged first stage: the average of stages 1 and 2.
    pub fn merged(&self) -> (VthDeviation, VthDeviation) {
        (
            VthDeviation::mean(&self.devices[0][0], &self.devices[1][0]),
            VthDeviation::mean(&self.devices[0][1], &self.devices[1][1]),
        )
    }

    /// Every device's static threshold magnitude moved by `dv`.
    pub fn shifted(&self, dv: f64) -> Self {
        let mut out = *self;
        for stage in out.devices.iter_mut() {
            for d in stage.iter_mut() {
                *d = d.shifted(dv);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellMode {
    #[default]
    Original,
    Reconfigured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Input-referred comparison noise per evaluation, V.
    pub sigma_n: f64,
    pub gain_original: f64,
    pub gain_reconfigured: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            sigma_n: 0.0,
            gain_original: 4.0,
            gain_reconfigured: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_n >= 0.0) {
            return Err(Error::Config(format!("noise.sigma_n must be >= 0, got {}", self.sigma_n)));
        }
        if !(self.gain_original > 1.0 && self.gain_reconfigured > 1.0) {
            return Err(Error::Config("noise gains must be > 1".into()));
        }
        Ok(())
    }

    /// Input-referred noise of a cell in `mode`; a chain with less gain
    /// refers more of its noise back to the decision node.
    pub fn effective_sigma(&self, mode: CellMode) -> f64 {
        match mode {
            CellMode::Original => self.sigma_n,
            CellMode::Reconfigured => self.sigma_n * self.gain_original / self.gain_reconfigured,
        }
    }
}

/// Switching voltage of one inverter: the input voltage at which the NMOS
/// current (`V_GS = V_DS = V`) equals the PMOS current (`V_SG = V_SD = V_VDD − V`).
pub fn switching_voltage(
    inv: &InverterParams,
    n_dev: &VthDeviation,
    p_dev: &VthDeviation,
    env: &Environment,
    v_vdd: f64,
    width_factor: f64,
) -> Result<f64> {
    if !(v_vdd > 0.0) {
        return Err(Error::Domain(format!("v_vdd must be positive, got {v_vdd}")));
    }
    let n = inv.nmos.scaled_width(width_factor).operating(env, n_dev);
    let p = inv.pmos.scaled_width(width_factor).operating(env, p_dev);
    let v_t = vt(env.temperature);
    bisect(
        |v| n.ln_current(v, v, v_t) - p.ln_current(v_vdd - v, v_vdd - v, v_t),
        0.0,
        v_vdd,
        VM_TOLERANCE,
    )
    .map(|r| r.x)
}

/// Switching voltages of the four stages in their original topology.
pub fn stage_switching_voltages(
    inv: &InverterParams,
    cell: &CellMismatch,
    env: &Environment,
    v_vdd: f64,
) -> Result<[f64; STAGES]> {
    let mut out = [0.0; STAGES];
    for (s, v) in out.iter_mut().enumerate() {
        let (n, p) = cell.stage(s);
        *v = switching_voltage(inv, &n, &p, env, v_vdd, 1.0)?;
    }
    Ok(out)
}

/// Signed decision margin: `V_M1 − V_M2` in the original topology and
/// `V_M1* − V_M3` after reconfiguration.
pub fn decision_margin(
    inv: &InverterParams,
    cell: &CellMismatch,
    mode: CellMode,
    env: &Environment,
    v_vdd: f64,
) -> Result<f64> {
    match mode {
        CellMode::Original => {
            let (n1, p1) = cell.stage(0);
            let (n2, p2) = cell.stage(1);
            Ok(switching_voltage(inv, &n1, &p1, env, v_vdd, 1.0)?
                - switching_voltage(inv, &n2, &p2, env, v_vdd, 1.0)?)
        }
        CellMode::Reconfigured => {
            let (nm, pm) = cell.merged();
            let (n3, p3) = cell.stage(2);
            Ok(switching_voltage(inv, &nm, &pm, env, v_vdd, 2.0)?
                - switching_voltage(inv, &n3, &p3, env, v_vdd, 1.0)?)
        }
    }
}

/// Outcome of one read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    /// `true` is logical '1'.
    pub bit: bool,
    /// Margin and noise were both exactly zero; the bit is a convention.
    pub degenerate: bool,
}

/// Logical output for a sampled decision voltage. The original chain reads
/// '0' for a positive margin; the reconfigured chain has one inverting stage
/// fewer, so it reads '1'. An exact zero reads '1' in both modes.
pub fn output_bit(v: f64, mode: CellMode) -> bool {
    match mode {
        CellMode::Original => v <= 0.0,
        CellMode::Reconfigured => v >= 0.0,
    }
}

/// Margins beyond this many noise sigmas read deterministically; a standard
/// normal exceeds it with probability below 1e-32.
pub const DETERMINISTIC_SIGMAS: f64 = 12.0;

/// One noisy read of a cell whose margin is already known.
pub fn decide_bit(margin: f64, noise: &NoiseModel, mode: CellMode, stream: &mut RandomStream) -> Decision {
    let sigma = noise.effective_sigma(mode);
    let v = if sigma > 0.0 && margin.abs() < DETERMINISTIC_SIGMAS * sigma {
        margin + sigma * stream.normal()
    } else {
        margin
    };
    Decision {
        bit: output_bit(v, mode),
        degenerate: v == 0.0,
    }
}

/// One noisy read of a cell, margin included.
pub fn evaluate_bit(
    inv: &InverterParams,
    cell: &CellMismatch,
    mode: CellMode,
    env: &Environment,
    v_vdd: f64,
    noise: &NoiseModel,
    stream: &mut RandomStream,
) -> Result<Decision> {
    let m = decision_margin(inv, cell, mode, env, v_vdd)?;
    Ok(decide_bit(m, noise, mode, stream))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that a read disagrees with the sign of `margin`.
pub fn flip_probability(margin: f64, noise: &NoiseModel, mode: CellMode) -> f64 {
    let sigma = noise.effective_sigma(mode);
    if margin == 0.0 {
        return 0.5;
    }
    if sigma == 0.0 {
        return 0.0;
    }
    normal_cdf(-margin.abs() / sigma)
}
