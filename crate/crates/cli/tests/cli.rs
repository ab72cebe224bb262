// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs of the `pufsim` binary on a reduced configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pufsim::config::ExperimentConfig;
use serde_json::Value;
use tempfile::TempDir;

const QUICK: &str = include_str!("../../../configs/quick.toml");
const REFERENCE: &str = include_str!("../../../configs/reference.toml");

fn quick() -> ExperimentConfig {
    ExperimentConfig::from_toml(QUICK).expect("quick config parses")
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self::with_text(&cfg.to_toml())
    }

    fn with_text(text: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("cfg.toml"), text).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn pufsim(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_pufsim"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg("cfg.toml")
            .arg("--out")
            .arg("out")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let o = self.pufsim(args);
        assert!(
            o.status.success(),
            "pufsim {args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        o
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_slice(&fs::read(self.out().join(rel)).unwrap()).unwrap()
    }
}

/// Every file under `dir` except manifests, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn shipped_reference_config_matches_builtin() {
    assert_eq!(ExperimentConfig::from_toml(REFERENCE).unwrap(), ExperimentConfig::reference());
}

#[test]
fn generate_is_reproducible() {
    let a = Run::new(&quick());
    let b = Run::new(&quick());
    a.ok(&["--seed", "7", "generate"]);
    b.ok(&["--seed", "7", "generate"]);
    let chip_a = fs::read(a.out().join("generate/chip_7.json")).unwrap();
    let chip_b = fs::read(b.out().join("generate/chip_7.json")).unwrap();
    assert_eq!(chip_a, chip_b);
}

#[test]
fn each_seed_gets_a_distinct_chip() {
    let r = Run::new(&quick());
    let seeds: Vec<String> = (1..=10).map(|s| s.to_string()).collect();
    let mut args: Vec<&str> = seeds.iter().flat_map(|s| ["--seed", s.as_str()]).collect();
    args.push("generate");
    r.ok(&args);
    let chips: std::collections::BTreeSet<Vec<u8>> = (1..=10)
        .map(|s| fs::read(r.out().join(format!("generate/chip_{s}.json"))).unwrap())
        .collect();
    assert_eq!(chips.len(), 10);
    assert_eq!(r.json("generate/manifest.json")["seeds"], serde_json::json!((1..=10).collect::<Vec<u64>>()));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let r = Run::with_text(&QUICK.replace("tmv_k", "tmv_kk"));
    let o = r.pufsim(&["generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tmv_kk"));
}

#[test]
fn invalid_config_value_is_a_config_error() {
    let mut cfg = quick();
    cfg.stabilization.tmv_k = 10;
    let o = Run::new(&cfg).pufsim(&["generate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tmv_k"));
}

#[test]
fn enroll_without_chips_is_a_runtime_error() {
    let r = Run::new(&quick());
    let o = r.pufsim(&["enroll"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pufsim generate"));
    let manifest = r.json("enroll/evb/manifest.json");
    assert_eq!(manifest["complete"], Value::Bool(false));
    assert!(!manifest["errors"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_needs_both_enrollments() {
    let r = Run::new(&quick());
    r.ok(&["generate"]);
    r.ok(&["enroll", "--method", "evb"]);
    assert_eq!(r.pufsim(&["sweep"]).status.code(), Some(1));
}

#[test]
fn zero_bias_only_enrollment_flags_few_cells() {
    let mut cfg = quick();
    let full = Run::new(&cfg);
    full.ok(&["generate"]);
    full.ok(&["enroll"]);
    cfg.stabilization.evb_vpw = vec![0.0];
    let zero = Run::new(&cfg);
    zero.ok(&["generate"]);
    zero.ok(&["enroll"]);
    let a = full.json("enroll/evb/report.json");
    let b = zero.json("enroll/evb/report.json");
    for (ca, cb) in a["chips"].as_array().unwrap().iter().zip(b["chips"].as_array().unwrap()) {
        let f = cb["reconfigured_fraction"].as_f64().unwrap();
        assert!(f < 0.01, "zero-bias enrollment flagged {f}");
        assert!(cb["reconfigured"].as_u64() < ca["reconfigured"].as_u64());
    }
}

#[test]
fn both_methods_give_a_comparison_table() {
    let r = Run::new(&quick());
    r.ok(&["generate"]);
    r.ok(&["enroll", "--method", "evb"]);
    assert!(!r.out().join("enroll/evb/precision_recall.csv").exists());
    r.ok(&["enroll", "--method", "temp-oracle"]);
    let table = fs::read_to_string(r.out().join("enroll/temp-oracle/precision_recall.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "seed,evb_flagged,temp_oracle_flagged,both,precision,recall");
    assert_eq!(lines.len(), 1 + quick().seeds.len());
}

#[test]
fn empty_sweep_grids_give_header_only_tables() {
    let mut cfg = quick();
    cfg.seeds = vec![1];
    cfg.grids.temperature.clear();
    cfg.grids.supply.clear();
    cfg.grids.vpw.clear();
    let r = Run::new(&cfg);
    r.ok(&["generate"]);
    r.ok(&["enroll", "--method", "evb"]);
    r.ok(&["enroll", "--method", "temp-oracle"]);
    r.ok(&["sweep"]);
    for stem in ["ber_vs_temperature_1", "ber_vs_supply_1", "detection_vs_vpw_1"] {
        let text = fs::read_to_string(r.out().join(format!("sweep/{stem}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1, "{stem}: {text}");
    }
}

#[test]
fn report_manifest_records_config_and_seeds() {
    let r = Run::new(&quick());
    for cmd in ["generate", "enroll", "report"] {
        r.ok(&["--seed", "2", "--seed", "3", cmd]);
    }
    let m = r.json("report/evb/manifest.json");
    assert_eq!(m["seeds"], serde_json::json!([2, 3]));
    assert_eq!(m["complete"], Value::Bool(true));
    let hash = m["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(hash, r.json("enroll/evb/manifest.json")["config_hash"].as_str().unwrap());
    for f in m["files"].as_array().unwrap() {
        let path = r.out().join(f["path"].as_str().unwrap());
        assert_eq!(fs::metadata(path).unwrap().len(), f["bytes"].as_u64().unwrap());
    }

    let mut other = quick();
    other.stabilization.tmv_k = 9;
    let r2 = Run::new(&other);
    r2.ok(&["--seed", "2", "--seed", "3", "generate"]);
    assert_ne!(r2.json("generate/manifest.json")["config_hash"].as_str().unwrap(), hash);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let one = Run::new(&quick());
    let many = Run::new(&quick());
    for r in [(&one, "1"), (&many, "8")] {
        for cmd in ["generate", "enroll", "stabilize", "report"] {
            r.0.ok(&["--threads", r.1, cmd]);
        }
    }
    let a = snapshot(&one.out());
    let b = snapshot(&many.out());
    assert!(!a.is_empty());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between thread counts", k.display());
    }
}

#[test]
fn json_format_writes_json_series() {
    let r = Run::new(&quick());
    for cmd in ["generate", "enroll", "evaluate"] {
        r.ok(&["--seed", "1", "--format", "json", cmd]);
    }
    let series = r.json("evaluate/evb/ber_vs_evals_1.json");
    let rows = series.as_array().unwrap();
    assert_eq!(rows.len(), quick().stabilization.n_evals);
    assert!(rows[0]["ber"].is_number());
    assert!(!r.out().join("evaluate/evb/ber_vs_evals_1.csv").exists());
}

#[test]
fn zero_threads_is_rejected() {
    let o = Run::new(&quick()).pufsim(&["--threads", "0", "generate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let o = Run::new(&quick()).ok(&["selftest"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 6);
    assert!(!text.contains("FAIL"));
}
