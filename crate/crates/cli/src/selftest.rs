// SPDX-License-Identifier: Apache-2.0

//! Quick oracle checks of the installed model.

use pufsim::cell::CellMode;
use pufsim::chip::{generate_chip, ArrayGeometry};
use pufsim::device::{celsius, Environment};
use pufsim::metrics::nist::frequency;
use pufsim::reference;
use pufsim::regulator::{virtual_vdd_closed_form, virtual_vdd_fixed_point};
use pufsim::rng::{Domain, RandomStream, StreamKey};
use pufsim::stabilize::{tmv, tmv_error_probability, StabilityLedger};

fn check(name: &str, pass: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn regulator() -> bool {
    let cfg = reference::regulator();
    let mut worst: f64 = 0.0;
    for t in [-55.0, -10.0, 27.0, 80.0, 125.0] {
        for dv in [-0.04, -0.02, 0.0, 0.02, 0.04] {
            let base = reference::nominal().with_temperature(celsius(t));
            let env = Environment { bias_vbias: base.bias_vbias + dv, ..base };
            match (virtual_vdd_closed_form(&cfg, &env), virtual_vdd_fixed_point(&cfg, &env)) {
                (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                _ => worst = f64::INFINITY,
            }
        }
    }
    let lo = virtual_vdd_closed_form(&cfg, &reference::nominal().with_supply(0.7));
    let hi = virtual_vdd_closed_form(&cfg, &reference::nominal().with_supply(1.4));
    let same = matches!((lo, hi), (Ok(a), Ok(b)) if a.to_bits() == b.to_bits());
    check(
        "regulator",
        worst < 1e-3 && same,
        format!("closed form vs fixed point {:.4} mV, supply-independent = {same}", worst * 1e3),
    )
}

fn variance_ratio() -> bool {
    let g = ArrayGeometry {
        rows: 160,
        cols: 125,
        cells_per_regulator: 32,
    };
    let Ok(chip) = generate_chip(1, g, reference::process(), reference::mismatch()) else {
        return check("variance ratio", false, "chip generation failed".into());
    };
    let env = reference::nominal();
    let n = chip.n_cells();
    let (Ok(o), Ok(r)) = (
        chip.margins(&env, &vec![CellMode::Original; n]),
        chip.margins(&env, &vec![CellMode::Reconfigured; n]),
    ) else {
        return check("variance ratio", false, "margin evaluation failed".into());
    };
    let ratio = std_dev(&o) / std_dev(&r);
    check(
        "variance ratio",
        (ratio / (2.0f64 / 1.5).sqrt() - 1.0).abs() < 0.03,
        format!("std(original)/std(reconfigured) = {ratio:.4} over {n} cells (1.1547 +-3%)"),
    )
}

fn tmv_tail() -> bool {
    const TRIALS: u64 = 50_000;
    let mut worst: f64 = 0.0;
    for (j, p) in [0.05, 0.1, 0.3].into_iter().enumerate() {
        let errors = (0..TRIALS)
            .filter(|&t| {
                let mut s = RandomStream::new(StreamKey::new(1, Domain::Auxiliary, j as u64, t, 1));
                let v: Vec<bool> = (0..11).map(|_| s.uniform() < p).collect();
                tmv(&v, 11).unwrap_or(false)
            })
            .count();
        let exact = tmv_error_probability(p, 11).unwrap_or(f64::NAN);
        let sd = (exact * (1.0 - exact) / TRIALS as f64).sqrt();
        worst = worst.max((errors as f64 / TRIALS as f64 - exact).abs() / sd);
    }
    check("tmv tail", worst <= 3.0, format!("Monte Carlo vs binomial, worst {worst:.2} sd"))
}

fn ledger_closure() -> bool {
    let mut worst: f64 = 0.0;
    for i in 0..=10 {
        for j in 0..=10 {
            let l = StabilityLedger::new(i as f64 / 10.0, j as f64 / 10.0).expect("probabilities in range");
            worst = worst.max((l.total() - 1.0).abs());
        }
    }
    check("outcome classes", worst < 1e-12, format!("max |sum - 1| = {worst:.1e}"))
}

fn frequency_example() -> bool {
    let bits: Vec<bool> = "1011010101".chars().map(|c| c == '1').collect();
    let p = frequency(&bits).p_value;
    check("frequency test", (p - 0.527089).abs() <= 1e-6, format!("p = {p:.6} (0.527089)"))
}

fn determinism() -> bool {
    let g = ArrayGeometry {
        rows: 32,
        cols: 32,
        cells_per_regulator: 32,
    };
    let a = generate_chip(5, g, reference::process(), reference::mismatch());
    let b = generate_chip(5, g, reference::process(), reference::mismatch());
    let same = matches!((&a, &b), (Ok(x), Ok(y)) if x == y);
    check("determinism", same, format!("regenerated chip identical = {same}"))
}

pub fn run() -> bool {
    [
        regulator(),
        variance_ratio(),
        tmv_tail(),
        ledger_closure(),
        frequency_example(),
        determinism(),
    ]
    .iter()
    .all(|&ok| ok)
}
