// SPDX-License-Identifier: Apache-2.0

//! Native-transistor supply regulation.
//!
//! A native (near-zero threshold) NMOS biased at `V_BIAS` acts as a source
//! follower whose source is the virtual supply `V_VDD` of one or more cells.
//! Only the first inverter stage of each cell draws appreciable current, so
//! `V_VDD` settles where the native current equals `N` times the current of
//! one first-stage pull-down device biased at `V_M = vm_fraction · V_VDD`.

use serde::{Deserialize, Serialize};

use crate::device::{
    effective_slope, effective_vth_at, vt, Environment, OperatingDevice, TransistorParams,
    VthDeviation,
};
use crate::error::{Error, Result};
use crate::solver::{bisect, Root};

/// Bisection tolerance for `V_VDD`.
pub const VVDD_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegulatorConfig {
    /// The native regulating transistor (M0).
    pub native: TransistorParams,
    /// First-stage NMOS of the load cells (M2).
    pub pull_down: TransistorParams,
    /// Cells sharing one native device (1 = cell-wise, 32 = one column).
    pub cells_per_regulator: u32,
    /// `V_M / V_VDD` of the first stage.
    pub vm_fraction: f64,
    /// Sampled deviation of this regulator's native device.
    #[serde(default)]
    pub native_dev: VthDeviation,
    /// Deviation common to the load devices (die-level corner).
    #[serde(default)]
    pub pull_down_dev: VthDeviation,
}

impl RegulatorConfig {
    pub fn new(native: TransistorParams, pull_down: TransistorParams, cells_per_regulator: u32) -> Self {
        Self {
            native,
            pull_down,
            cells_per_regulator,
            vm_fraction: 0.5,
            native_dev: VthDeviation::ZERO,
            pull_down_dev: VthDeviation::ZERO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.native.validate("native")?;
        self.pull_down.validate("pull_down")?;
        if self.cells_per_regulator < 1 {
            return Err(Error::Config("cells_per_regulator must be >= 1".into()));
        }
        if !(self.vm_fraction > 0.0 && self.vm_fraction < 1.0) {
            return Err(Error::Config(format!(
                "vm_fraction must lie in (0, 1), got {}",
                self.vm_fraction
            )));
        }
        Ok(())
    }

    /// Native device at `env`. It sits outside the body-biased array well.
    fn native_at(&self, env: &Environment) -> OperatingDevice {
        OperatingDevice {
            strength: self.native.mobility_cox_at(env.temperature) * self.native.width_w
                / self.native.length_l,
            slope: effective_slope(&self.native, &self.native_dev, 0.0),
            vth: effective_vth_at(&self.native, &self.native_dev, 0.0, env.temperature),
        }
    }

    fn pull_down_at(&self, env: &Environment) -> OperatingDevice {
        self.pull_down.operating(env, &self.pull_down_dev)
    }
}

/// Closed-form virtual supply with both drain factors dropped and
/// `V_M = V_VDD / 2`:
///
/// `V_VDD = a·V_T·ln(μ0C0·W0·L2·(m0−1) / (N·μ2C2·W2·L0·(m2−1))) + b·V_th2 + c·(V_BIAS − V_th0)`
///
/// with `a = 2m0m2/(m0+2m2)`, `b = 2m0/(m0+2m2)`, `c = 2m2/(m0+2m2)`.
/// The external supply does not appear.
pub fn virtual_vdd_closed_form(cfg: &RegulatorConfig, env: &Environment) -> Result<f64> {
    let native = cfg.native_at(env);
    let load = cfg.pull_down_at(env);
    let (m0, m2) = (native.slope, load.slope);
    let arg = native.strength * (m0 - 1.0)
        / (cfg.cells_per_regulator as f64 * load.strength * (m2 - 1.0));
    if !(arg > 0.0) || !arg.is_finite() {
        return Err(Error::Config(format!("regulator log argument is {arg}")));
    }
    let denom = m0 + 2.0 * m2;
    let v_t = vt(env.temperature);
    Ok(2.0 * m0 * m2 / denom * v_t * arg.ln()
        + 2.0 * m0 / denom * load.vth
        + 2.0 * m2 / denom * (env.bias_vbias - native.vth))
}

/// Log-ratio of native current to total load current at virtual supply `v`.
/// Strictly decreasing in `v`.
fn balance(cfg: &RegulatorConfig, native: &OperatingDevice, load: &OperatingDevice, env: &Environment, v: f64) -> f64 {
    let v_t = vt(env.temperature);
    let vm = cfg.vm_fraction * v;
    native.ln_current(env.bias_vbias - v, env.supply_vdd - v, v_t)
        - (cfg.cells_per_regulator as f64).ln()
        - load.ln_current(vm, vm, v_t)
}

/// Virtual supply from the full current balance, drain factors included.
pub fn virtual_vdd_fixed_point(cfg: &RegulatorConfig, env: &Environment) -> Result<f64> {
    fixed_point_root(cfg, env).map(|r| r.x)
}

/// [`virtual_vdd_fixed_point`] with the step count exposed.
pub fn fixed_point_root(cfg: &RegulatorConfig, env: &Environment) -> Result<Root> {
    if !(env.supply_vdd > 0.0) {
        return Err(Error::Convergence(format!(
            "no bracket: supply_vdd = {} V leaves no room for V_VDD",
            env.supply_vdd
        )));
    }
    let native = cfg.native_at(env);
    let load = cfg.pull_down_at(env);
    bisect(
        |v| balance(cfg, &native, &load, env, v),
        0.0,
        env.supply_vdd,
        VVDD_TOLERANCE,
    )
    .map_err(|e| {
        Error::Convergence(format!(
            "regulator at T = {} K, VDD = {} V, V_BIAS = {} V: {e}",
            env.temperature, env.supply_vdd, env.bias_vbias
        ))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub env: Environment,
    pub vvdd: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(temperature, mV/V)` for every temperature with at least two supply points.
    pub line_sensitivity: Vec<(f64, f64)>,
    /// `(supply, mV)` max−min over temperature for every supply with at least
    /// two temperature points.
    pub temperature_span: Vec<(f64, f64)>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("temperature_K,supply_V,vbias_V,vvdd_V,converged\n");
        for r in &self.rows {
            let v = r.vvdd.map(|v| format!("{v:.9}")).unwrap_or_default();
            out.push_str(&format!(
                "{:.4},{:.6},{:.6},{},{}\n",
                r.env.temperature,
                r.env.supply_vdd,
                r.env.bias_vbias,
                v,
                u8::from(r.vvdd.is_some())
            ));
        }
        out
    }
}

fn group_extent<K, V>(rows: &[SweepRow], key: K, var: V) -> Vec<(f64, f64, f64)>
where
    K: Fn(&Environment) -> f64,
    V: Fn(&Environment) -> f64,
{
    // (key, span of var, span of vvdd)
    let mut keys: Vec<f64> = rows.iter().map(|r| key(&r.env)).collect();
    keys.sort_by(f64::total_cmp);
    keys.dedup();
    let mut out = Vec::new();
    for k in keys {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| key(&r.env) == k)
            .filter_map(|r| r.vvdd.map(|v| (var(&r.env), v)))
            .collect();
        let (vmin, vmax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        if pts.len() < 2 || vmax <= vmin {
            continue;
        }
        let (ymin, ymax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        out.push((k, vmax - vmin, ymax - ymin));
    }
    out
}

/// Fixed-point `V_VDD` over a grid of operating points.
pub fn sensitivity_sweep(cfg: &RegulatorConfig, grid: &[Environment]) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::Config("sensitivity sweep needs a non-empty grid".into()));
    }
    let rows: Vec<SweepRow> = grid
        .iter()
        .map(|env| match virtual_vdd_fixed_point(cfg, env) {
            Ok(v) => SweepRow {
                env: *env,
                vvdd: Some(v),
                error: None,
            },
            Err(e) => SweepRow {
                env: *env,
                vvdd: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let line_sensitivity = group_extent(&rows, |e| e.temperature, |e| e.supply_vdd)
        .into_iter()
        .map(|(t, dv, dy)| (t, 1e3 * dy / dv))
        .collect();
    let temperature_span = group_extent(&rows, |e| e.supply_vdd, |e| e.temperature)
        .into_iter()
        .map(|(s, _, dy)| (s, 1e3 * dy))
        .collect();
    Ok(SweepTable {
        rows,
        line_sensitivity,
        temperature_span,
    })
}

/// Native width `W0` that makes the closed-form `V_VDD` equal at `t_lo` and
/// `t_hi`, found by bisection on `ln W0` over `[w_lo, w_hi]`.
pub fn calibrate_native_width(
    cfg: &RegulatorConfig,
    env: &Environment,
    t_lo: f64,
    t_hi: f64,
    w_lo: f64,
    w_hi: f64,
) -> Result<f64> {
    let drift = |ln_w: f64| -> f64 {
        let mut c = *cfg;
        c.native.width_w = ln_w.exp();
        let lo = virtual_vdd_closed_form(&c, &env.with_temperature(t_lo));
        let hi = virtual_vdd_closed_form(&c, &env.with_temperature(t_hi));
        match (lo, hi) {
            (Ok(a), Ok(b)) => b - a,
            _ => f64::NAN,
        }
    };
    bisect(drift, w_lo.ln(), w_hi.ln(), 1e-12).map(|r| r.x.exp())
}

/// `V_BIAS` at which the fixed-point `V_VDD` equals `target`.
pub fn solve_bias_for(cfg: &RegulatorConfig, env: &Environment, target: f64) -> Result<f64> {
    bisect(
        |vb| match virtual_vdd_fixed_point(cfg, &Environment { bias_vbias: vb, ..*env }) {
            Ok(v) => v - target,
            Err(_) => f64::NAN,
        },
        -0.5,
        env.supply_vdd,
        1e-9,
    )
    .map(|r| r.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Polarity, T_REF};
    use approx::assert_abs_diff_eq;

    fn dev(m: f64, vth: f64, w: f64, l: f64) -> TransistorParams {
        TransistorParams {
            polarity: Polarity::N,
            mobility_cox: 300e-6,
            width_w: w,
            length_l: l,
            slope_m: m,
            vth_nominal: vth,
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
    fn symmetric_case_log_term_vanishes() {
        // m0 = m2 and equal (μC W/L)(m−1): log argument 1 for N = 1.
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 1e-6, 1e-6), dev(1.3, 0.45, 1e-6, 1e-6), 1);
        let v = virtual_vdd_closed_form(&cfg, &env()).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0 * (0.45 + 0.4 + 0.05), epsilon = 1e-12);
    }

    #[test]
    fn column_sharing_offset() {
        let mut cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 1);
        let v1 = virtual_vdd_closed_form(&cfg, &env()).unwrap();
        cfg.cells_per_regulator = 32;
        let v32 = virtual_vdd_closed_form(&cfg, &env()).unwrap();
        let a = 2.0 * 1.3 * 1.4 / (1.3 + 2.8);
        assert_abs_diff_eq!(v1 - v32, a * vt(T_REF) * 32f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_matches_closed_form() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        let r = fixed_point_root(&cfg, &env()).unwrap();
        let c = virtual_vdd_closed_form(&cfg, &env()).unwrap();
        assert!((r.x - c).abs() < 1e-3, "{} vs {}", r.x, c);
        assert!(r.steps <= 60);
    }

    #[test]
    fn more_load_lowers_vvdd() {
        let mut cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 16);
        let a = virtual_vdd_fixed_point(&cfg, &env()).unwrap();
        cfg.cells_per_regulator = 32;
        let b = virtual_vdd_fixed_point(&cfg, &env()).unwrap();
        assert!(b < a);
    }

    #[test]
    fn vvdd_increases_with_bias() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        let lo = virtual_vdd_fixed_point(&cfg, &env()).unwrap();
        let hi = virtual_vdd_fixed_point(&cfg, &Environment { bias_vbias: 0.45, ..env() }).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn zero_supply_is_a_convergence_error() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        assert!(matches!(
            virtual_vdd_fixed_point(&cfg, &env().with_supply(0.0)),
            Err(Error::Convergence(_))
        ));
    }

    #[test]
    fn single_point_sweep_has_no_sensitivity() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        let t = sensitivity_sweep(&cfg, &[env()]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.line_sensitivity.is_empty());
        assert!(t.temperature_span.is_empty());
        assert!(sensitivity_sweep(&cfg, &[]).is_err());
    }

    #[test]
    fn two_temperature_supply_sweep_reports_two_sensitivities() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        let mut grid = Vec::new();
        for t in [T_REF, T_REF + 50.0] {
            for s in [0.7, 1.0, 1.4] {
                grid.push(env().with_temperature(t).with_supply(s));
            }
        }
        let t = sensitivity_sweep(&cfg, &grid).unwrap();
        assert_eq!(t.line_sensitivity.len(), 2);
        assert_eq!(t.temperature_span.len(), 3);
        let csv = t.to_csv();
        assert!(csv.starts_with("temperature_K,supply_V,vbias_V,vvdd_V,converged\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn failed_points_are_marked() {
        let cfg = RegulatorConfig::new(dev(1.3, -0.05, 10e-6, 1e-6), dev(1.4, 0.45, 0.4e-6, 0.5e-6), 32);
        let t = sensitivity_sweep(&cfg, &[env(), env().with_supply(0.0)]).unwrap();
        assert!(t.rows[1].vvdd.is_none());
        assert!(t.rows[1].error.is_some());
        assert!(t.to_csv().lines().nth(2).unwrap().ends_with(",,0"));
    }
}
