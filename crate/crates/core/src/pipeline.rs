// SPDX-License-Identifier: Apache-2.0

//! Per-chip experiment flow: golden key, raw reads, enrollment,
//! stabilization and the sweeps built on top of them.
//!
//! Every step draws noise from a fixed session number so that a run is a
//! pure function of the configuration and the chip seed.

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::chip::{evaluate_array, generate_chip, ChipInstance, SupplyMode};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{
    self, autocorrelation, hamming_distances, histogram, nist_800_22_subset, nist_battery, shannon_entropy,
    Battery, ChipKeys, EvalReport, HdReport, Summary,
};
use crate::stabilize::{
    apply_stabilization, collect_golden, enroll_mask, enroll_mask_temperature, enroll_rmap_evb,
    enroll_rmap_temperature_oracle, precision_recall, Enrollment, GoldenKey, Mask, RMap, Stabilized,
};

/// Noise sessions of the pipeline steps.
pub mod session {
    pub const GOLDEN: u64 = 1;
    pub const RAW: u64 = 2;
    pub const STABILIZED_GOLDEN: u64 = 3;
    pub const STABILIZED: u64 = 4;
    pub const TMV: u64 = 5;
    pub const DIRECT_GOLDEN: u64 = 6;
    /// Enrollment sweeps take `base + point`.
    pub const ENROLL: u64 = 1_000;
    pub const MASK: u64 = 2_000;
    pub const DETECTION: u64 = 3_000;
    /// Sweep curves take `base + 16 * point + curve`.
    pub const TEMPERATURE_SWEEP: u64 = 10_000;
    pub const SUPPLY_SWEEP: u64 = 20_000;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Evb,
    TempOracle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Evb => "evb",
            Method::TempOracle => "temp-oracle",
        })
    }
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<ChipInstance> {
    generate_chip(seed, cfg.geometry, cfg.process.clone(), cfg.mismatch)
}

/// Golden key at nominal with every cell in the original topology.
pub fn raw_golden(cfg: &ExperimentConfig, chip: &ChipInstance) -> Result<GoldenKey> {
    let s = &cfg.stabilization;
    collect_golden(chip, &cfg.nominal, &RMap::empty(chip), &cfg.noise, s.golden_votes, session::GOLDEN)
}

/// Enrollment state of one chip.
#[derive(Clone, Debug, PartialEq)]
pub struct Enrolled {
    pub method: Method,
    pub golden: GoldenKey,
    pub enrollment: Enrollment,
    /// Golden key re-collected with the R-MAP applied.
    pub stabilized_golden: GoldenKey,
    pub mask: Mask,
}

impl Enrolled {
    pub fn rmap(&self) -> &RMap {
        &self.enrollment.rmap
    }
}

pub fn enroll(cfg: &ExperimentConfig, chip: &ChipInstance, method: Method) -> Result<Enrolled> {
    let s = &cfg.stabilization;
    let noise = &cfg.noise;
    let golden = raw_golden(cfg, chip)?;
    let enrollment = match method {
        Method::Evb => enroll_rmap_evb(chip, &golden, &s.evb_vpw, noise, s.enroll_votes, session::ENROLL)?,
        Method::TempOracle => enroll_rmap_temperature_oracle(
            chip,
            &golden,
            &s.oracle_temperatures,
            noise,
            s.enroll_votes,
            session::ENROLL,
        )?,
    };
    let rmap = &enrollment.rmap;
    let stabilized_golden =
        collect_golden(chip, &cfg.nominal, rmap, noise, s.golden_votes, session::STABILIZED_GOLDEN)?;
    let mask = match (s.mask_residual, method) {
        (false, _) => Mask::empty(chip),
        (true, Method::Evb) => {
            enroll_mask(chip, &stabilized_golden, rmap, &s.evb_vpw, noise, s.enroll_votes, session::MASK)?
        }
        (true, Method::TempOracle) => enroll_mask_temperature(
            chip,
            &stabilized_golden,
            rmap,
            &s.oracle_temperatures,
            noise,
            s.enroll_votes,
            session::MASK,
        )?,
    };
    Ok(Enrolled {
        method,
        golden,
        enrollment,
        stabilized_golden,
        mask,
    })
}

/// Reads of one chip at nominal.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Single reads, original topology.
    pub raw: Vec<BitMatrix>,
    /// TMV outputs, original topology.
    pub tmv: Stabilized,
    /// TMV outputs with the R-MAP and mask applied.
    pub stabilized: Stabilized,
}

pub fn evaluate(cfg: &ExperimentConfig, chip: &ChipInstance, enrolled: &Enrolled) -> Result<Evaluation> {
    let s = &cfg.stabilization;
    let noise = &cfg.noise;
    let raw = evaluate_array(chip, &cfg.nominal, &RMap::empty(chip), noise, s.n_evals, session::RAW)?.reads;
    let tmv = apply_stabilization(
        chip,
        &RMap::empty(chip),
        &Mask::empty(chip),
        &cfg.nominal,
        noise,
        s.tmv_k,
        s.n_evals,
        session::TMV,
    )?;
    let stabilized = apply_stabilization(
        chip,
        enrolled.rmap(),
        &enrolled.mask,
        &cfg.nominal,
        noise,
        s.tmv_k,
        s.n_evals,
        session::STABILIZED,
    )?;
    Ok(Evaluation { raw, tmv, stabilized })
}

/// Reliability figures of one chip at nominal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipStats {
    pub seed: u64,
    pub method: Method,
    pub n_evals: usize,
    pub tmv_k: usize,
    pub raw_ber: f64,
    pub raw_unstable_fraction: f64,
    pub tmv_ber: f64,
    /// R-MAP and TMV, every cell kept.
    pub rmap_tmv_ber: f64,
    /// R-MAP, TMV and mask.
    pub stabilized_ber: f64,
    pub reconfigured: usize,
    pub masked: usize,
    pub kept: usize,
    /// `raw_ber / stabilized_ber`; absent when no stabilized read failed.
    pub improvement: Option<f64>,
}

impl ChipStats {
    pub fn monotone(&self) -> bool {
        self.raw_ber >= self.tmv_ber && self.tmv_ber >= self.stabilized_ber
    }
}

pub fn chip_stats(cfg: &ExperimentConfig, chip: &ChipInstance, enrolled: &Enrolled, eval: &Evaluation) -> Result<ChipStats> {
    let golden = &enrolled.golden.bits;
    let sg = &enrolled.stabilized_golden.bits;
    let raw_ber = metrics::ber(golden, &eval.raw, None)?;
    let stabilized_ber = metrics::ber(sg, &eval.stabilized.outputs, Some(&eval.stabilized.keep))?;
    Ok(ChipStats {
        seed: chip.seed,
        method: enrolled.method,
        n_evals: cfg.stabilization.n_evals,
        tmv_k: cfg.stabilization.tmv_k,
        raw_ber,
        raw_unstable_fraction: metrics::unstable_fraction(golden, &eval.raw, None)?,
        tmv_ber: metrics::ber(golden, &eval.tmv.outputs, None)?,
        rmap_tmv_ber: metrics::ber(sg, &eval.stabilized.outputs, None)?,
        stabilized_ber,
        reconfigured: enrolled.rmap().count(),
        masked: enrolled.mask.count(),
        kept: eval.stabilized.keep.count_ones(),
        improvement: (stabilized_ber > 0.0).then(|| raw_ber / stabilized_ber),
    })
}

/// Everything the pipeline produces for one chip.
#[derive(Clone, Debug, PartialEq)]
pub struct ChipRun {
    pub chip: ChipInstance,
    pub enrolled: Enrolled,
    pub eval: Evaluation,
    pub stats: ChipStats,
}

pub fn run_chip(cfg: &ExperimentConfig, seed: u64, method: Method) -> Result<ChipRun> {
    let chip = generate(cfg, seed)?;
    let enrolled = enroll(cfg, &chip, method)?;
    let eval = evaluate(cfg, &chip, &enrolled)?;
    let stats = chip_stats(cfg, &chip, &enrolled, &eval)?;
    Ok(ChipRun {
        chip,
        enrolled,
        eval,
        stats,
    })
}

/// Cumulative BER and unstable fraction after each raw read.
pub fn ber_growth_csv(golden: &BitMatrix, reads: &[BitMatrix]) -> Result<String> {
    let unstable = metrics::unstable_growth(golden, reads, None)?;
    let mut out = String::from("n_evals,ber,unstable_fraction\n");
    let mut flips = 0usize;
    for (e, (r, u)) in reads.iter().zip(&unstable).enumerate() {
        flips += golden.hamming(r);
        let ber = flips as f64 / (golden.len() * (e + 1)) as f64;
        out.push_str(&format!("{},{ber:.9},{u:.9}\n", e + 1));
    }
    Ok(out)
}

/// BER of the four stabilization variants at one temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub raw: f64,
    pub tmv: f64,
    pub evb_reconfig: f64,
    pub temp_oracle: f64,
}

/// BER over the temperature grid: single reads, TMV, EVB R-MAP with TMV and
/// temperature-oracle R-MAP with TMV. Each variant is compared with its own
/// nominal golden key.
pub fn temperature_curves(
    cfg: &ExperimentConfig,
    chip: &ChipInstance,
    evb: &Enrolled,
    oracle: &Enrolled,
) -> Result<Vec<TemperatureRow>> {
    let s = &cfg.stabilization;
    let noise = &cfg.noise;
    let n = s.sweep_evals;
    let empty = RMap::empty(chip);
    let none = Mask::empty(chip);
    cfg.grids
        .temperature
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            let env = cfg.nominal.with_temperature(t);
            let base = session::TEMPERATURE_SWEEP + 16 * p as u64;
            let raw = evaluate_array(chip, &env, &empty, noise, n, base)?.reads;
            let tmv = apply_stabilization(chip, &empty, &none, &env, noise, s.tmv_k, n, base + 1)?;
            let e = apply_stabilization(chip, evb.rmap(), &evb.mask, &env, noise, s.tmv_k, n, base + 2)?;
            let o = apply_stabilization(chip, oracle.rmap(), &oracle.mask, &env, noise, s.tmv_k, n, base + 3)?;
            Ok(TemperatureRow {
                temperature: t,
                raw: metrics::ber(&evb.golden.bits, &raw, None)?,
                tmv: metrics::ber(&evb.golden.bits, &tmv.outputs, None)?,
                evb_reconfig: metrics::ber(&evb.stabilized_golden.bits, &e.outputs, Some(&e.keep))?,
                temp_oracle: metrics::ber(&oracle.stabilized_golden.bits, &o.outputs, Some(&o.keep))?,
            })
        })
        .collect()
}

pub fn temperature_csv(rows: &[TemperatureRow]) -> String {
    let mut out = String::from("temperature_K,ber_raw,ber_tmv,ber_evb_reconfig,ber_temp_oracle\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            r.temperature, r.raw, r.tmv, r.evb_reconfig, r.temp_oracle
        ));
    }
    out
}

/// Raw BER against the external supply, with and without the regulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupplyRow {
    pub supply: f64,
    pub regulated: f64,
    pub direct: f64,
}

pub fn supply_curves(cfg: &ExperimentConfig, chip: &ChipInstance, golden: &GoldenKey) -> Result<Vec<SupplyRow>> {
    let s = &cfg.stabilization;
    let noise = &cfg.noise;
    let direct = chip.clone().with_supply_mode(SupplyMode::Direct);
    let empty = RMap::empty(chip);
    let direct_golden = collect_golden(&direct, &cfg.nominal, &empty, noise, s.golden_votes, session::DIRECT_GOLDEN)?;
    cfg.grids
        .supply
        .iter()
        .enumerate()
        .map(|(p, &v)| {
            let env = cfg.nominal.with_supply(v);
            let base = session::SUPPLY_SWEEP + 16 * p as u64;
            let reg = evaluate_array(chip, &env, &empty, noise, s.sweep_evals, base)?.reads;
            let dir = evaluate_array(&direct, &env, &empty, noise, s.sweep_evals, base + 1)?.reads;
            Ok(SupplyRow {
                supply: v,
                regulated: metrics::ber(&golden.bits, &reg, None)?,
                direct: metrics::ber(&direct_golden.bits, &dir, None)?,
            })
        })
        .collect()
}

pub fn supply_csv(rows: &[SupplyRow]) -> String {
    let mut out = String::from("supply_V,ber_regulated,ber_direct\n");
    for r in rows {
        out.push_str(&format!("{},{:.9},{:.9}\n", r.supply, r.regulated, r.direct));
    }
    out
}

/// Single-point EVB flags scored against the temperature-oracle set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub vpw: f64,
    pub flagged: usize,
    pub truly_unstable: usize,
    pub detection_rate: Option<f64>,
    pub recall: Option<f64>,
}

pub fn detection_curve(
    cfg: &ExperimentConfig,
    chip: &ChipInstance,
    golden: &GoldenKey,
    truth: &BitMatrix,
) -> Result<Vec<DetectionRow>> {
    let s = &cfg.stabilization;
    if cfg.grids.vpw.is_empty() {
        return Ok(Vec::new());
    }
    let e = enroll_rmap_evb(chip, golden, &cfg.grids.vpw, &cfg.noise, s.enroll_votes, session::DETECTION)?;
    e.points
        .iter()
        .map(|p| {
            let pr = precision_recall(&p.flagged, truth)?;
            Ok(DetectionRow {
                vpw: p.env.body_vpw,
                flagged: pr.flagged,
                truly_unstable: pr.truth,
                detection_rate: pr.precision,
                recall: pr.recall,
            })
        })
        .collect()
}

pub fn detection_csv(rows: &[DetectionRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.9}"));
    let mut out = String::from("vpw_V,flagged,truly_unstable,detection_rate,recall\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.vpw,
            r.flagged,
            r.truly_unstable,
            opt(r.detection_rate),
            opt(r.recall)
        ));
    }
    out
}

/// Histogram of the intra- and inter-die populations over `[0, 1]`.
pub fn hd_histogram_csv(report: &HdReport, bins: usize) -> String {
    let intra = histogram(&report.intra, bins);
    let inter = histogram(&report.inter, bins);
    let mut out = String::from("bin_low,bin_high,intra,inter\n");
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        out.push_str(&format!("{lo:.6},{hi:.6},{},{}\n", intra[b], inter[b]));
    }
    out
}

/// Summary of a chip population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub chips: Vec<ChipStats>,
    pub raw_ber: Option<Summary>,
    pub stabilized_ber: Option<Summary>,
    /// Mean raw BER over mean stabilized BER.
    pub improvement: Option<f64>,
    pub monotone_on_every_chip: bool,
    pub raw_inter_hd: Option<Summary>,
    pub raw_intra_hd: Option<Summary>,
    pub raw_separation: Option<f64>,
    pub eval: EvalReport,
    pub nist: Battery,
}

/// Concatenated raw golden keys in seed order.
pub fn key_stream(runs: &[ChipRun]) -> Vec<bool> {
    runs.iter().flat_map(|r| r.enrolled.golden.bits.to_bools()).collect()
}

/// HD populations: `(raw, stabilized)`.
pub fn hd_reports(runs: &[ChipRun]) -> Result<(HdReport, HdReport)> {
    let raw: Vec<_> = runs
        .iter()
        .map(|r| ChipKeys {
            golden: &r.enrolled.golden.bits,
            readouts: &r.eval.raw,
            keep: None,
        })
        .collect();
    let stab: Vec<_> = runs
        .iter()
        .map(|r| ChipKeys {
            golden: &r.enrolled.stabilized_golden.bits,
            readouts: &r.eval.stabilized.outputs,
            keep: Some(&r.eval.stabilized.keep),
        })
        .collect();
    Ok((hamming_distances(&raw)?, hamming_distances(&stab)?))
}

pub fn experiment_report(cfg: &ExperimentConfig, runs: &[ChipRun]) -> Result<ExperimentReport> {
    let chips: Vec<ChipStats> = runs.iter().map(|r| r.stats.clone()).collect();
    let raw_ber = Summary::of(&chips.iter().map(|c| c.raw_ber).collect::<Vec<_>>());
    let stabilized_ber = Summary::of(&chips.iter().map(|c| c.stabilized_ber).collect::<Vec<_>>());
    let improvement = match (&raw_ber, &stabilized_ber) {
        (Some(r), Some(s)) if s.mean > 0.0 => Some(r.mean / s.mean),
        _ => None,
    };
    let (raw_hd, stab_hd) = hd_reports(runs)?;
    let bits = key_stream(runs);
    let m = &cfg.metrics;
    let max_lag = m.acf_max_lag.min(bits.len().saturating_sub(1));
    let eval = EvalReport {
        ber: raw_ber.as_ref().map_or(0.0, |s| s.mean),
        unstable_fraction: Summary::of(&chips.iter().map(|c| c.raw_unstable_fraction).collect::<Vec<_>>())
            .map_or(0.0, |s| s.mean),
        n_evals: cfg.stabilization.n_evals,
        intra_hd: stab_hd.intra_summary.clone(),
        inter_hd: stab_hd.inter_summary.clone(),
        separation: stab_hd.separation,
        autocorr: autocorrelation(&bits, max_lag, &m.acf_bound)?,
        entropy_bits: shannon_entropy(&bits)?,
        test_results: nist_800_22_subset(&bits, &m.nist),
    };
    Ok(ExperimentReport {
        seeds: runs.iter().map(|r| r.chip.seed).collect(),
        monotone_on_every_chip: chips.iter().all(ChipStats::monotone),
        chips,
        raw_ber,
        stabilized_ber,
        improvement,
        raw_inter_hd: raw_hd.inter_summary,
        raw_intra_hd: raw_hd.intra_summary,
        raw_separation: raw_hd.separation,
        eval,
        nist: nist_battery(&bits, &m.nist)?,
    })
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::ArrayGeometry;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::reference();
        cfg.geometry = ArrayGeometry {
            rows: 16,
            cols: 32,
            cells_per_regulator: 16,
        };
        cfg.stabilization.golden_votes = 101;
        cfg.stabilization.n_evals = 50;
        cfg.stabilization.sweep_evals = 11;
        cfg.grids.temperature = vec![233.15, 300.15, 398.15];
        cfg
    }

    #[test]
    fn run_is_reproducible() {
        let cfg = small();
        let a = run_chip(&cfg, 7, Method::Evb).unwrap();
        let b = run_chip(&cfg, 7, Method::Evb).unwrap();
        assert_eq!(a, b);
        assert!(a.stats.kept + a.stats.masked == a.chip.n_cells());
    }

    #[test]
    fn growth_csv_ends_at_unstable_fraction() {
        let cfg = small();
        let run = run_chip(&cfg, 3, Method::Evb).unwrap();
        let csv = ber_growth_csv(&run.enrolled.golden.bits, &run.eval.raw).unwrap();
        assert_eq!(csv.lines().count(), cfg.stabilization.n_evals + 1);
        let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert!((last[1] - run.stats.raw_ber).abs() < 1e-9);
        assert!((last[2] - run.stats.raw_unstable_fraction).abs() < 1e-9);
    }

    #[test]
    fn empty_grids_give_header_only() {
        let mut cfg = small();
        cfg.grids.temperature.clear();
        cfg.grids.supply.clear();
        cfg.grids.vpw.clear();
        let run = run_chip(&cfg, 1, Method::Evb).unwrap();
        let oracle = enroll(&cfg, &run.chip, Method::TempOracle).unwrap();
        let t = temperature_curves(&cfg, &run.chip, &run.enrolled, &oracle).unwrap();
        assert_eq!(temperature_csv(&t).lines().count(), 1);
        let s = supply_curves(&cfg, &run.chip, &run.enrolled.golden).unwrap();
        assert_eq!(supply_csv(&s).lines().count(), 1);
        let d = detection_curve(&cfg, &run.chip, &run.enrolled.golden, &oracle.rmap().reconfigure).unwrap();
        assert_eq!(detection_csv(&d).lines().count(), 1);
    }
}
