// SPDX-License-Identifier: Apache-2.0

//! Subcommand implementations. Per-chip work runs in parallel; files are
//! written afterwards in seed order by a single writer.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use pufsim::chip::ChipInstance;
use pufsim::config::ExperimentConfig;
use pufsim::metrics::Summary;
use pufsim::pipeline::{
    self, ber_growth_csv, chip_stats, detection_csv, detection_curve, experiment_report, hd_histogram_csv,
    hd_reports, supply_csv, supply_curves, temperature_csv, temperature_curves, ChipRun, ChipStats, Enrolled,
    Method,
};
use pufsim::stabilize::{precision_recall, Enrollment, GoldenKey, Mask, RMap};
use pufsim::BitMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::Output;

fn chip_path(root: &Path, seed: u64) -> std::path::PathBuf {
    root.join("generate").join(format!("chip_{seed}.json"))
}

fn enroll_dir(root: &Path, method: Method) -> std::path::PathBuf {
    root.join("enroll").join(method.to_string())
}

fn read(path: &Path, hint: &str) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("missing {}; run `pufsim {hint}` first", path.display()))
}

fn load_chip(cfg: &ExperimentConfig, root: &Path, seed: u64) -> Result<ChipInstance> {
    let path = chip_path(root, seed);
    let chip: ChipInstance = serde_json::from_slice(&read(&path, "generate")?)
        .with_context(|| format!("parsing {}", path.display()))?;
    if chip.seed != seed || chip.geometry != cfg.geometry {
        bail!("{} does not match the configured seed and geometry", path.display());
    }
    Ok(chip)
}

fn load_bits(cfg: &ExperimentConfig, path: &Path, hint: &str) -> Result<BitMatrix> {
    let g = &cfg.geometry;
    BitMatrix::from_packed_bytes(g.rows, g.cols, &read(path, hint)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_enrolled(cfg: &ExperimentConfig, root: &Path, seed: u64, method: Method) -> Result<Enrolled> {
    let dir = enroll_dir(root, method);
    let hint = format!("enroll --method {method}");
    let text = |name: String| -> Result<String> {
        let p = dir.join(name);
        String::from_utf8(read(&p, &hint)?).with_context(|| format!("{} is not text", p.display()))
    };
    let rmap = RMap::from_text(&text(format!("chip_{seed}.rmap"))?)?;
    let mask = Mask::from_text(&text(format!("chip_{seed}.mask"))?)?;
    let key = |bits: BitMatrix| GoldenKey {
        bits,
        collected_at: cfg.nominal,
        votes: cfg.stabilization.golden_votes,
    };
    Ok(Enrolled {
        method,
        golden: key(load_bits(cfg, &dir.join(format!("golden_{seed}.bin")), &hint)?),
        stabilized_golden: key(load_bits(cfg, &dir.join(format!("stabilized_golden_{seed}.bin")), &hint)?),
        enrollment: Enrollment { rmap, points: Vec::new() },
        mask,
    })
}

/// Run `f` for every seed in parallel and hand the results to the writer in
/// seed order. Failing seeds are logged in the manifest.
fn per_seed<T: Send>(
    cfg: &ExperimentConfig,
    out: &mut Output,
    f: impl Fn(u64) -> Result<T> + Sync,
    mut write: impl FnMut(&mut Output, u64, T) -> Result<()>,
) -> Result<()> {
    let results: Vec<Result<T>> = cfg.seeds.par_iter().map(|&s| f(s)).collect();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r.and_then(|v| write(out, seed, v)) {
            Ok(()) => {}
            Err(e) => out.error(format!("seed {seed}: {e:#}")),
        }
    }
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    per_seed(
        cfg,
        out,
        |seed| Ok(pipeline::generate(cfg, seed)?),
        |out, seed, chip| out.write(&format!("chip_{seed}.json"), &serde_json::to_vec(&chip)?),
    )?;
    println!("generated {} chip(s)", cfg.seeds.len());
    Ok(())
}

#[derive(Serialize)]
struct PointReport {
    #[serde(rename = "temperature_K")]
    temperature: f64,
    #[serde(rename = "vpw_V")]
    vpw: f64,
    flagged: usize,
}

#[derive(Serialize)]
struct EnrollChip {
    seed: u64,
    reconfigured: usize,
    reconfigured_fraction: f64,
    masked: usize,
    points: Vec<PointReport>,
}

#[derive(Serialize)]
struct EnrollReport {
    method: Method,
    chips: Vec<EnrollChip>,
    flagged_fraction: Option<Summary>,
}

fn write_enrolled(out: &mut Output, seed: u64, e: &Enrolled) -> Result<()> {
    out.write(&format!("chip_{seed}.rmap"), e.rmap().to_text().as_bytes())?;
    out.write(&format!("chip_{seed}.mask"), e.mask.to_text().as_bytes())?;
    out.write_bits(&format!("golden_{seed}"), &e.golden.bits)?;
    out.write_bits(&format!("stabilized_golden_{seed}"), &e.stabilized_golden.bits)
}

pub fn enroll(cfg: &ExperimentConfig, method: Method, out: &mut Output) -> Result<()> {
    let root = out.root().to_path_buf();
    let mut chips = Vec::new();
    per_seed(
        cfg,
        out,
        |seed| {
            let chip = load_chip(cfg, &root, seed)?;
            Ok(pipeline::enroll(cfg, &chip, method)?)
        },
        |out, seed, e| {
            write_enrolled(out, seed, &e)?;
            chips.push(EnrollChip {
                seed,
                reconfigured: e.rmap().count(),
                reconfigured_fraction: e.rmap().fraction(),
                masked: e.mask.count(),
                points: e
                    .enrollment
                    .points
                    .iter()
                    .map(|p| PointReport {
                        temperature: p.env.temperature,
                        vpw: p.env.body_vpw,
                        flagged: p.flagged.count_ones(),
                    })
                    .collect(),
            });
            Ok(())
        },
    )?;
    let fractions: Vec<f64> = chips.iter().map(|c| c.reconfigured_fraction).collect();
    let report = EnrollReport {
        method,
        flagged_fraction: Summary::of(&fractions),
        chips,
    };
    if let Some(s) = &report.flagged_fraction {
        println!("{method}: flagged {:.2}% of cells (mean over {} chip(s))", 100.0 * s.mean, s.count);
    }
    out.write_json("report.json", &report)?;

    // set comparison when the other method has already run
    let other = match method {
        Method::Evb => Method::TempOracle,
        Method::TempOracle => Method::Evb,
    };
    if enroll_dir(&root, other).is_dir() {
        let mut csv = String::from("seed,evb_flagged,temp_oracle_flagged,both,precision,recall\n");
        for &seed in &cfg.seeds {
            let evb = load_enrolled(cfg, &root, seed, Method::Evb);
            let oracle = load_enrolled(cfg, &root, seed, Method::TempOracle);
            if let (Ok(e), Ok(o)) = (evb, oracle) {
                let pr = precision_recall(&e.rmap().reconfigure, &o.rmap().reconfigure)?;
                let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
                csv.push_str(&format!(
                    "{seed},{},{},{},{},{}\n",
                    pr.flagged,
                    pr.truth,
                    pr.true_positive,
                    opt(pr.precision),
                    opt(pr.recall)
                ));
            }
        }
        out.write_series("precision_recall", &csv)?;
    }
    Ok(())
}

fn load_run(cfg: &ExperimentConfig, root: &Path, seed: u64, method: Method) -> Result<ChipRun> {
    let chip = load_chip(cfg, root, seed)?;
    let enrolled = load_enrolled(cfg, root, seed, method)?;
    let eval = pipeline::evaluate(cfg, &chip, &enrolled)?;
    let stats = chip_stats(cfg, &chip, &enrolled, &eval)?;
    Ok(ChipRun {
        chip,
        enrolled,
        eval,
        stats,
    })
}

fn print_stats(stats: &[ChipStats]) {
    for s in stats {
        println!(
            "seed {}: raw BER {:.4}%  TMV-{} {:.4}%  stabilized {:.6}%  ({} reconfigured, {} masked)",
            s.seed,
            100.0 * s.raw_ber,
            s.tmv_k,
            100.0 * s.tmv_ber,
            100.0 * s.stabilized_ber,
            s.reconfigured,
            s.masked
        );
    }
}

pub fn evaluate(cfg: &ExperimentConfig, method: Method, out: &mut Output) -> Result<()> {
    let root = out.root().to_path_buf();
    let mut stats = Vec::new();
    per_seed(
        cfg,
        out,
        |seed| {
            let run = load_run(cfg, &root, seed, method)?;
            let growth = ber_growth_csv(&run.enrolled.golden.bits, &run.eval.raw)?;
            Ok((run.stats, growth))
        },
        |out, seed, (s, growth)| {
            out.write_series(&format!("ber_vs_evals_{seed}"), &growth)?;
            stats.push(s);
            Ok(())
        },
    )?;
    print_stats(&stats);
    out.write_json("stats.json", &stats)
}

pub fn sweep(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let root = out.root().to_path_buf();
    per_seed(
        cfg,
        out,
        |seed| {
            let chip = load_chip(cfg, &root, seed)?;
            let evb = load_enrolled(cfg, &root, seed, Method::Evb)?;
            let oracle = load_enrolled(cfg, &root, seed, Method::TempOracle)?;
            let t = temperature_curves(cfg, &chip, &evb, &oracle)?;
            let s = supply_curves(cfg, &chip, &evb.golden)?;
            let d = detection_curve(cfg, &chip, &evb.golden, &oracle.rmap().reconfigure)?;
            Ok((temperature_csv(&t), supply_csv(&s), detection_csv(&d)))
        },
        |out, seed, (t, s, d)| {
            out.write_series(&format!("ber_vs_temperature_{seed}"), &t)?;
            out.write_series(&format!("ber_vs_supply_{seed}"), &s)?;
            out.write_series(&format!("detection_vs_vpw_{seed}"), &d)
        },
    )
}

/// Generate, enroll and evaluate in one pass without reading artifacts.
pub fn stabilize(cfg: &ExperimentConfig, method: Method, out: &mut Output) -> Result<()> {
    let mut stats = Vec::new();
    per_seed(
        cfg,
        out,
        |seed| Ok(pipeline::run_chip(cfg, seed, method)?),
        |out, seed, run| {
            write_enrolled(out, seed, &run.enrolled)?;
            out.write_bits(&format!("keep_{seed}"), &run.eval.stabilized.keep)?;
            if let Some(first) = run.eval.stabilized.outputs.first() {
                out.write_bits(&format!("response_{seed}"), first)?;
            }
            stats.push(run.stats);
            Ok(())
        },
    )?;
    print_stats(&stats);
    let raw = Summary::of(&stats.iter().map(|s| s.raw_ber).collect::<Vec<_>>());
    let stab = Summary::of(&stats.iter().map(|s| s.stabilized_ber).collect::<Vec<_>>());
    if let (Some(r), Some(s)) = (&raw, &stab) {
        println!("mean raw BER {:.4}%, stabilized {:.6}%", 100.0 * r.mean, 100.0 * s.mean);
    }
    out.write_json("stats.json", &stats)
}

pub fn report(cfg: &ExperimentConfig, method: Method, out: &mut Output) -> Result<()> {
    let root = out.root().to_path_buf();
    let loaded: Vec<Result<ChipRun>> = cfg.seeds.par_iter().map(|&s| load_run(cfg, &root, s, method)).collect();
    let mut runs = Vec::new();
    for (seed, r) in cfg.seeds.iter().zip(loaded) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => out.error(format!("seed {seed}: {e:#}")),
        }
    }
    if runs.is_empty() {
        return Err(anyhow!("no chip could be loaded"));
    }
    let rep = experiment_report(cfg, &runs)?;
    let (raw_hd, stab_hd) = hd_reports(&runs)?;
    out.write_json("report.json", &rep)?;
    out.write("summary.txt", rep.eval.to_text().as_bytes())?;
    out.write_series("hd_histogram", &hd_histogram_csv(&stab_hd, cfg.metrics.hd_bins))?;
    out.write_series("hd_histogram_raw", &hd_histogram_csv(&raw_hd, cfg.metrics.hd_bins))?;
    out.write_series("autocorrelation", &rep.eval.autocorr.to_csv())?;
    out.write_series("nist", &rep.nist.to_csv())?;
    print!("{}", rep.eval.to_text());
    println!("NIST rows passed: {}/{}", rep.nist.rows_passed(), rep.nist.rows_run());
    Ok(())
}
