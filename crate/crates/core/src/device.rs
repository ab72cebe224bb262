// SPDX-License-Identifier: Apache-2.0

//! Transistor-level physics: thermal voltage, threshold voltage under body
//! bias and temperature, the subthreshold current law, and Pelgrom mismatch
//! sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Reference temperature for threshold and mobility parameters (27 °C).
pub const T_REF: f64 = 300.15;

/// Exponent of the mobility power law `μ(T) = μ(T_REF)·(T/T_REF)^MOBILITY_EXPONENT`.
pub const MOBILITY_EXPONENT: f64 = -1.5;

/// Convert degrees Celsius to kelvin.
pub fn celsius(t: f64) -> f64 {
    t + 273.15
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Boltzmann constant, J/K.
    pub boltzmann_k: f64,
    /// Elementary charge, C.
    pub electron_charge_q: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            boltzmann_k: 1.380649e-23,
            electron_charge_q: 1.602176634e-19,
        }
    }
}

/// `kT/q` in volts.
pub fn thermal_voltage(constants: &PhysicalConstants, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature} K"
        )));
    }
    Ok(constants.boltzmann_k * temperature / constants.electron_charge_q)
}

/// Thermal voltage with the SI constants.
pub fn vt(temperature: f64) -> f64 {
    let c = PhysicalConstants::default();
    c.boltzmann_k * temperature / c.electron_charge_q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    N,
    P,
}

/// Physical parameters of one device type.
///
/// Voltages of P-type devices are stored as magnitudes, so `vth_nominal`
/// is `|V_th|` and the same formulas serve both polarities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransistorParams {
    pub polarity: Polarity,
    /// μ·C_ox at `T_REF`, A/V².
    pub mobility_cox: f64,
    pub width_w: f64,
    pub length_l: f64,
    /// Subthreshold slope factor, > 1.
    pub slope_m: f64,
    /// Nominal threshold at `T_REF` and zero body bias (negative for native devices).
    pub vth_nominal: f64,
    /// Body factor γ, V^0.5.
    pub body_gamma: f64,
    /// Fermi potential φ_F, V.
    pub fermi_phi: f64,
    /// Threshold decrease per kelvin, V/K.
    pub vth_temp_coeff: f64,
}

impl TransistorParams {
    pub fn validate(&self, name: &str) -> Result<()> {
        let positive = [
            ("mobility_cox", self.mobility_cox),
            ("width_w", self.width_w),
            ("length_l", self.length_l),
            ("fermi_phi", self.fermi_phi),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name}.{field} must be > 0, got {v}")));
            }
        }
        if !(self.slope_m > 1.0) {
            return Err(Error::Config(format!(
                "{name}.slope_m must be > 1, got {}",
                self.slope_m
            )));
        }
        if !(self.vth_temp_coeff >= 0.0) {
            return Err(Error::Config(format!(
                "{name}.vth_temp_coeff must be >= 0, got {}",
                self.vth_temp_coeff
            )));
        }
        if !(self.body_gamma >= 0.0) || !self.vth_nominal.is_finite() {
            return Err(Error::Config(format!("{name}: body_gamma/vth_nominal invalid")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.width_w * self.length_l
    }

    /// μ·C_ox at temperature `t`.
    pub fn mobility_cox_at(&self, t: f64) -> f64 {
        self.mobility_cox * (t / T_REF).powf(MOBILITY_EXPONENT)
    }

    /// Same device with the width scaled by `factor` (stage merging doubles it).
    pub fn scaled_width(&self, factor: f64) -> Self {
        Self {
            width_w: self.width_w * factor,
            ..*self
        }
    }

    /// Device biased at `env` with sampled deviation `dev`.
    pub fn operating(&self, env: &Environment, dev: &VthDeviation) -> OperatingDevice {
        let v_sb = body_source_voltage(env);
        OperatingDevice {
            strength: self.mobility_cox_at(env.temperature) * self.width_w / self.length_l,
            slope: effective_slope(self, dev, v_sb),
            vth: effective_vth_at(self, dev, v_sb, env.temperature),
        }
    }
}

/// Operating point of the die.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    /// Kelvin.
    pub temperature: f64,
    /// External supply, V.
    pub supply_vdd: f64,
    /// Gate bias of the native regulating transistor, V.
    pub bias_vbias: f64,
    /// P-well bias of the cell array, V.
    pub body_vpw: f64,
}

impl Environment {
    pub fn validate(&self, fermi_phi: f64) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0 K, got {}",
                self.temperature
            )));
        }
        if !(self.supply_vdd >= 0.0) {
            return Err(Error::Config(format!(
                "supply_vdd must be >= 0, got {}",
                self.supply_vdd
            )));
        }
        if !(self.body_vpw.abs() <= 2.0 * fermi_phi) {
            return Err(Error::Config(format!(
                "|body_vpw| = {} exceeds 2·φ_F = {}",
                self.body_vpw.abs(),
                2.0 * fermi_phi
            )));
        }
        Ok(())
    }

    pub fn with_temperature(self, temperature: f64) -> Self {
        Self { temperature, ..self }
    }

    pub fn with_supply(self, supply_vdd: f64) -> Self {
        Self { supply_vdd, ..self }
    }

    pub fn with_vpw(self, body_vpw: f64) -> Self {
        Self { body_vpw, ..self }
    }
}

/// Source-to-body voltage seen by array devices.
///
/// A positive p-well bias forward-biases the NMOS body junction, so
/// `V_SB = -V_PW`. The deep n-well of the PMOS devices is swept with the
/// opposite sign, which in magnitude terms gives them the same `V_SB`.
pub fn body_source_voltage(env: &Environment) -> f64 {
    -env.body_vpw
}

/// Pelgrom mismatch coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchModel {
    /// Pelgrom area coefficient A_Vt, V·m.
    pub pelgrom_avt: f64,
    /// Std-dev of the per-device threshold temperature coefficient, V/K.
    pub tempco_sigma: f64,
    /// Std-dev of the body factor relative to its nominal value.
    pub gamma_sigma_rel: f64,
    /// Correlation between the tempco and body-factor deviations of one
    /// device. Both are driven by the local channel doping.
    #[serde(default)]
    pub tempco_gamma_correlation: f64,
}

impl MismatchModel {
    pub fn zero() -> Self {
        Self {
            pelgrom_avt: 0.0,
            tempco_sigma: 0.0,
            gamma_sigma_rel: 0.0,
            tempco_gamma_correlation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("pelgrom_avt", self.pelgrom_avt),
            ("tempco_sigma", self.tempco_sigma),
            ("gamma_sigma_rel", self.gamma_sigma_rel),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("mismatch.{field} must be >= 0, got {v}")));
            }
        }
        if !(self.tempco_gamma_correlation.abs() <= 1.0) {
            return Err(Error::Config(format!(
                "mismatch.tempco_gamma_correlation must lie in [-1, 1], got {}",
                self.tempco_gamma_correlation
            )));
        }
        Ok(())
    }

    /// Static threshold std-dev for a device of the given geometry.
    pub fn sigma_vth(&self, params: &TransistorParams) -> f64 {
        self.pelgrom_avt / params.area().sqrt()
    }
}

/// Sampled deviation of one transistor from its nominal parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VthDeviation {
    /// Static threshold offset, V.
    pub static_vth: f64,
    /// Offset of the threshold temperature coefficient, V/K.
    pub tempco: f64,
    /// Offset of the body factor, V^0.5.
    pub gamma: f64,
}

impl VthDeviation {
    pub const ZERO: Self = Self {
        static_vth: 0.0,
        tempco: 0.0,
        gamma: 0.0,
    };

    /// Component-wise mean; a device of twice the area built from `a` and `b`.
    pub fn mean(a: &Self, b: &Self) -> Self {
        Self {
            static_vth: 0.5 * (a.static_vth + b.static_vth),
            tempco: 0.5 * (a.tempco + b.tempco),
            gamma: 0.5 * (a.gamma + b.gamma),
        }
    }

    pub fn shifted(self, dv: f64) -> Self {
        Self {
            static_vth: self.static_vth + dv,
            ..self
        }
    }
}

/// Body-effect term `γ(√|2φ_F + V_SB| − √|2φ_F|)`.
fn body_term(gamma: f64, fermi_phi: f64, v_sb: f64) -> f64 {
    let two_phi = 2.0 * fermi_phi;
    gamma * ((two_phi + v_sb).abs().sqrt() - two_phi.abs().sqrt())
}

/// Threshold voltage with body bias and temperature applied.
pub fn effective_vth(params: &TransistorParams, env: &Environment, dev: &VthDeviation) -> f64 {
    effective_vth_at(params, dev, body_source_voltage(env), env.temperature)
}

/// [`effective_vth`] with the source-body voltage given explicitly.
pub fn effective_vth_at(
    params: &TransistorParams,
    dev: &VthDeviation,
    v_sb: f64,
    temperature: f64,
) -> f64 {
    params.vth_nominal + dev.static_vth + body_term(params.body_gamma + dev.gamma, params.fermi_phi, v_sb)
        - (params.vth_temp_coeff + dev.tempco) * (temperature - T_REF)
}

/// Slope factor of a device whose body factor deviates by `dev.gamma`.
///
/// The depletion-capacitance part of the slope factor is
/// `γ / (2√(2φ_F + V_SB))`, so a body-factor deviation moves it by the same
/// law. The nominal `slope_m` is kept as given.
pub fn effective_slope(params: &TransistorParams, dev: &VthDeviation, v_sb: f64) -> f64 {
    let surface = (2.0 * params.fermi_phi + v_sb).abs().max(1e-3).sqrt();
    params.slope_m + dev.gamma / (2.0 * surface)
}

/// Subthreshold drain current
/// `μC_ox (W/L)(m−1)V_T² exp((V_GS − V_th)/(mV_T)) (1 − exp(−V_DS/V_T))`.
pub fn subthreshold_current(
    params: &TransistorParams,
    v_gs: f64,
    v_ds: f64,
    vth_eff: f64,
    v_t: f64,
) -> f64 {
    OperatingDevice {
        strength: params.mobility_cox * params.width_w / params.length_l,
        slope: params.slope_m,
        vth: vth_eff,
    }
    .current(v_gs, v_ds, v_t)
}

/// A device with all environment and mismatch corrections folded in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingDevice {
    /// μ·C_ox·W/L at the operating temperature.
    pub strength: f64,
    pub slope: f64,
    pub vth: f64,
}

impl OperatingDevice {
    pub fn current(&self, v_gs: f64, v_ds: f64, v_t: f64) -> f64 {
        self.ln_current(v_gs, v_ds, v_t).exp()
    }

    /// Natural log of the current; `-inf` at `v_ds <= 0`.
    pub fn ln_current(&self, v_gs: f64, v_ds: f64, v_t: f64) -> f64 {
        if v_ds <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let prefactor = (self.strength * (self.slope - 1.0) * v_t * v_t).ln();
        prefactor + (v_gs - self.vth) / (self.slope * v_t) + (-(-v_ds / v_t).exp()).ln_1p()
    }
}

/// Draw one transistor's deviation.
///
/// Static offset ~ N(0, A_Vt/√(WL)); tempco ~ N(0, tempco_sigma); body
/// factor ~ N(0, gamma_sigma_rel·γ), correlated with the tempco draw by
/// `tempco_gamma_correlation`.
pub fn sample_mismatch(
    model: &MismatchModel,
    params: &TransistorParams,
    stream: &mut RandomStream,
) -> VthDeviation {
    let z_static = stream.normal();
    let z_tempco = stream.normal();
    let z_gamma = stream.normal();
    let rho = model.tempco_gamma_correlation;
    let z_gamma = rho * z_tempco + (1.0 - rho * rho).sqrt() * z_gamma;
    VthDeviation {
        static_vth: model.sigma_vth(params) * z_static,
        tempco: model.tempco_sigma * z_tempco,
        gamma: model.gamma_sigma_rel * params.body_gamma * z_gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};
    use approx::assert_abs_diff_eq;

    fn nmos() -> TransistorParams {
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

    fn env() -> Environment {
        Environment {
            temperature: T_REF,
            supply_vdd: 1.2,
            bias_vbias: 0.4,
            body_vpw: 0.0,
        }
    }

    #[test]
    fn thermal_voltage_values() {
        let c = PhysicalConstants::default();
        // Independent evaluation of k·T/q with the SI constants.
        let expect = |t: f64| t * 1.380649e-23 / 1.602176634e-19;
        assert_abs_diff_eq!(thermal_voltage(&c, 300.15).unwrap(), 25.865e-3, epsilon = 1e-5);
        assert_abs_diff_eq!(thermal_voltage(&c, 218.15).unwrap(), 18.799e-3, epsilon = 1e-5);
        assert_abs_diff_eq!(thermal_voltage(&c, 398.15).unwrap(), 34.310e-3, epsilon = 1e-5);
        for t in [1.0, 77.0, 300.15, 500.0] {
            assert_abs_diff_eq!(thermal_voltage(&c, t).unwrap(), expect(t), epsilon = 1e-15);
        }
    }

    #[test]
    fn thermal_voltage_rejects_nonpositive_temperature() {
        let c = PhysicalConstants::default();
        assert!(matches!(thermal_voltage(&c, 0.0), Err(Error::Domain(_))));
        assert!(matches!(thermal_voltage(&c, -3.0), Err(Error::Domain(_))));
    }

    #[test]
    fn vth_reduces_to_nominal() {
        let p = nmos();
        assert_eq!(effective_vth(&p, &env(), &VthDeviation::ZERO), 0.45);
        let flat = TransistorParams { body_gamma: 0.0, ..p };
        for vsb in [-0.4, 0.0, 0.3] {
            assert_eq!(effective_vth_at(&flat, &VthDeviation::ZERO, vsb, T_REF), 0.45);
        }
    }

    #[test]
    fn vth_body_effect_value() {
        let p = nmos();
        let got = effective_vth_at(&p, &VthDeviation::ZERO, 0.4, T_REF);
        let want = 0.45 + 0.2 * (1.1f64.sqrt() - 0.7f64.sqrt());
        assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 0.492430, epsilon = 1e-6);
        // env route: V_SB = −V_PW
        assert_eq!(effective_vth(&p, &env().with_vpw(-0.4), &VthDeviation::ZERO), got);
    }

    #[test]
    fn vth_temperature_slope() {
        let p = nmos();
        let dev = VthDeviation {
            tempco: 0.2e-3,
            ..VthDeviation::ZERO
        };
        let hot = effective_vth(&p, &env().with_temperature(T_REF + 100.0), &dev);
        assert_abs_diff_eq!(hot, 0.45 - 1.7e-3 * 100.0, epsilon = 1e-12);
    }

    #[test]
    fn current_drain_factor() {
        let p = nmos();
        let v_t = vt(T_REF);
        assert_eq!(subthreshold_current(&p, 0.3, 0.0, 0.45, v_t), 0.0);
        let sat = subthreshold_current(&p, 0.3, 1.0, 0.45, v_t);
        let near = subthreshold_current(&p, 0.3, 10.0 * v_t, 0.45, v_t);
        assert!((1.0 - near / sat).abs() < 5e-5);
        let wide = TransistorParams {
            width_w: 2.0 * p.width_w,
            ..p
        };
        let ratio = subthreshold_current(&wide, 0.3, 0.2, 0.45, v_t)
            / subthreshold_current(&p, 0.3, 0.2, 0.45, v_t);
        assert_abs_diff_eq!(ratio, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn current_closed_form() {
        let p = nmos();
        let v_t = vt(T_REF);
        let (vgs, vds) = (0.25, 0.1);
        let want = 300e-6 * 0.8 * 0.4 * v_t * v_t * ((vgs - 0.45) / (1.4 * v_t)).exp()
            * (1.0 - (-vds / v_t).exp());
        let got = subthreshold_current(&p, vgs, vds, 0.45, v_t);
        assert_abs_diff_eq!(got / want, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_mismatch_model_gives_zero_deviation() {
        let mut s = RandomStream::new(StreamKey::new(1, Domain::Auxiliary, 0, 0, 0));
        for _ in 0..100 {
            let d = sample_mismatch(&MismatchModel::zero(), &nmos(), &mut s);
            assert_eq!(d, VthDeviation::ZERO);
        }
    }

    #[test]
    fn environment_validation() {
        assert!(env().validate(0.35).is_ok());
        assert!(env().with_vpw(0.71).validate(0.35).is_err());
        assert!(env().with_temperature(0.0).validate(0.35).is_err());
        assert!(env().with_supply(-0.1).validate(0.35).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(nmos().validate("n").is_ok());
        let bad = TransistorParams { slope_m: 1.0, ..nmos() };
        assert!(bad.validate("n").is_err());
        let bad = TransistorParams { width_w: 0.0, ..nmos() };
        assert!(bad.validate("n").is_err());
        let bad = TransistorParams { vth_temp_coeff: -1e-3, ..nmos() };
        assert!(bad.validate("n").is_err());
    }
}
