// SPDX-License-Identifier: Apache-2.0

//! Calibrated reference parameter set.
//!
//! Plausible 65 nm thick-oxide values. The native width and regulator bias
//! come from [`calibrate_regulator`]; the mismatch and noise magnitudes were
//! tuned once against the target error statistics and then frozen.

use crate::cell::{InverterParams, NoiseModel};
use crate::chip::ProcessParams;
use crate::device::{celsius, Environment, MismatchModel, Polarity, TransistorParams, T_REF};
use crate::error::Result;
use crate::regulator::{calibrate_native_width, solve_bias_for, RegulatorConfig};

/// Regulated supply the bias is solved for, V.
pub const TARGET_VVDD: f64 = 0.57;
pub const NOMINAL_SUPPLY: f64 = 1.2;
pub const NATIVE_WIDTH: f64 = 1.3116331002906497e-5;
pub const NOMINAL_VBIAS: f64 = 0.3989440917184894;

pub fn nmos() -> TransistorParams {
    TransistorParams {
        polarity: Polarity::N,
        mobility_cox: 300e-6,
        width_w: 0.4e-6,
        length_l: 0.5e-6,
        slope_m: 1.4,
        vth_nominal: 0.45,
        body_gamma: 0.2,
        fermi_phi: 0.35,
        vth_temp_coeff: 1.5e-3,
    }
}

pub fn pmos() -> TransistorParams {
    TransistorParams {
        polarity: Polarity::P,
        ..nmos()
    }
}

pub fn native() -> TransistorParams {
    TransistorParams {
        width_w: NATIVE_WIDTH,
        length_l: 1.0e-6,
        slope_m: 1.3,
        vth_nominal: -0.05,
        ..nmos()
    }
}

pub fn inverter() -> InverterParams {
    InverterParams {
        nmos: nmos(),
        pmos: pmos(),
    }
}

pub fn process() -> ProcessParams {
    ProcessParams {
        inverter: inverter(),
        native: native(),
        vm_fraction: 0.5,
        global_vth_sigma: 0.02,
    }
}

pub fn mismatch() -> MismatchModel {
    MismatchModel {
        pelgrom_avt: 9.5e-9,
        tempco_sigma: 5.5e-6,
        gamma_sigma_rel: 0.02,
        tempco_gamma_correlation: 0.85,
    }
}

pub fn noise() -> NoiseModel {
    NoiseModel {
        sigma_n: 1.65e-4,
        gain_original: 4.0,
        gain_reconfigured: 3.0,
    }
}

/// 27 °C, 1.2 V, no body bias.
pub fn nominal() -> Environment {
    Environment {
        temperature: T_REF,
        supply_vdd: NOMINAL_SUPPLY,
        bias_vbias: NOMINAL_VBIAS,
        body_vpw: 0.0,
    }
}

/// Column regulator of the reference array.
pub fn regulator() -> RegulatorConfig {
    process().regulator(32)
}

/// −55 °C to 125 °C in `step_c` increments, in kelvin.
pub fn temperature_grid(step_c: f64) -> Vec<f64> {
    let n = (180.0 / step_c).round() as usize;
    (0..=n).map(|i| celsius(-55.0 + i as f64 * step_c)).collect()
}

/// Native width that zeroes the regulated supply's temperature drift over
/// −55…125 °C, and the bias that then puts `V_VDD` at [`TARGET_VVDD`].
pub fn calibrate_regulator() -> Result<(f64, f64)> {
    let mut cfg = regulator();
    let mut bias = NOMINAL_VBIAS;
    let mut width = NATIVE_WIDTH;
    for _ in 0..4 {
        let env = Environment { bias_vbias: bias, ..nominal() };
        width = calibrate_native_width(&cfg, &env, celsius(-55.0), celsius(125.0), 1e-7, 1e-3)?;
        cfg.native.width_w = width;
        bias = solve_bias_for(&cfg, &nominal(), TARGET_VVDD)?;
    }
    Ok((width, bias))
}
