// SPDX-License-Identifier: Apache-2.0

//! Statistical and physical properties of the device, cell and chip models,
//! each checked against an independent estimate.

use pufsim::cell::{decide_bit, flip_probability, output_bit, CellMode};
use pufsim::chip::{generate_chip, ArrayGeometry, ChipInstance, SupplyMode};
use pufsim::device::{sample_mismatch, MismatchModel};
use pufsim::reference;
use pufsim::rng::{Domain, RandomStream, StreamKey};

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn chip(seed: u64, rows: usize, cols: usize) -> ChipInstance {
    let g = ArrayGeometry {
        rows,
        cols,
        cells_per_regulator: 16,
    };
    generate_chip(seed, g, reference::process(), reference::mismatch()).unwrap()
}

fn draws(model: &MismatchModel, width_factor: f64, n: u64) -> Vec<f64> {
    let dev = reference::nmos().scaled_width(width_factor);
    (0..n)
        .map(|i| {
            let mut s = RandomStream::new(StreamKey::new(3, Domain::Auxiliary, i, 0, 0));
            sample_mismatch(model, &dev, &mut s).static_vth
        })
        .collect()
}

#[test]
fn pelgrom_area_law() {
    let model = reference::mismatch();
    let n = 200_000;
    let (m1, s1) = moments(&draws(&model, 1.0, n));
    let (_, s4) = moments(&draws(&model, 4.0, n));
    let expected = model.pelgrom_avt / reference::nmos().area().sqrt();
    // the std of a sample std is about s / sqrt(2n)
    let tol = 4.0 * expected / (2.0 * n as f64).sqrt();
    assert!(m1.abs() < 4.0 * expected / (n as f64).sqrt(), "mean {m1}");
    assert!((s1 - expected).abs() < tol, "{s1} vs {expected}");
    assert!((s4 - expected / 2.0).abs() < tol, "{s4} vs {}", expected / 2.0);
}

#[test]
fn mismatch_components_have_configured_moments() {
    let model = reference::mismatch();
    let dev = reference::nmos();
    let n = 100_000u64;
    let (mut t, mut g) = (Vec::new(), Vec::new());
    for i in 0..n {
        let mut s = RandomStream::new(StreamKey::new(4, Domain::Auxiliary, i, 0, 0));
        let d = sample_mismatch(&model, &dev, &mut s);
        t.push(d.tempco);
        g.push(d.gamma);
    }
    let (mt, st) = moments(&t);
    let (mg, sg) = moments(&g);
    let cov = t.iter().zip(&g).map(|(a, b)| (a - mt) * (b - mg)).sum::<f64>() / (n as f64 - 1.0);
    let rho = cov / (st * sg);
    assert!((st / model.tempco_sigma - 1.0).abs() < 0.02);
    assert!((sg / (model.gamma_sigma_rel * dev.body_gamma) - 1.0).abs() < 0.02);
    assert!((rho - model.tempco_gamma_correlation).abs() < 0.01, "rho {rho}");
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let n = 100_000u64;
    let a: Vec<f64> = (0..n)
        .map(|i| RandomStream::new(StreamKey::new(9, Domain::Noise, i, 0, 0)).normal())
        .collect();
    let b: Vec<f64> = (0..n)
        .map(|i| RandomStream::new(StreamKey::new(9, Domain::Noise, i, 1, 0)).normal())
        .collect();
    let c: Vec<f64> = (0..n)
        .map(|i| RandomStream::new(StreamKey::new(9, Domain::CellMismatch, i, 0, 0)).normal())
        .collect();
    let corr = |x: &[f64], y: &[f64]| {
        let (mx, sx) = moments(x);
        let (my, sy) = moments(y);
        x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / ((n as f64 - 1.0) * sx * sy)
    };
    let bound = 4.0 / (n as f64).sqrt();
    assert!(corr(&a, &b).abs() < bound);
    assert!(corr(&a, &c).abs() < bound);
    let (m, s) = moments(&a);
    assert!(m.abs() < bound && (s - 1.0).abs() < 0.01);
}

#[test]
fn flip_rate_matches_normal_tail() {
    let noise = reference::noise();
    let n = 1_000_000u64;
    for mode in [CellMode::Original, CellMode::Reconfigured] {
        let sigma = noise.effective_sigma(mode);
        for k in [0.5, 1.0, 2.0, 4.0] {
            let margin = k * sigma;
            let stable_bit = output_bit(margin, mode);
            let flips = (0..n)
                .filter(|&e| {
                    let mut s = RandomStream::new(StreamKey::new(5, Domain::Noise, k.to_bits(), mode as u64, e));
                    decide_bit(margin, &noise, mode, &mut s).bit != stable_bit
                })
                .count();
            let p = flip_probability(margin, &noise, mode);
            let mc = flips as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((mc - p).abs() <= 4.0 * sd, "{mode:?} k={k}: {mc} vs {p}");
        }
    }
}

#[test]
fn global_shift_leaves_bitmap_nearly_unchanged() {
    let geometry = ArrayGeometry {
        rows: 64,
        cols: 64,
        cells_per_regulator: 32,
    };
    let mut flat = reference::process();
    flat.global_vth_sigma = 0.0;
    let mut shifted = reference::process();
    shifted.global_vth_sigma = 0.05;
    let a = generate_chip(21, geometry, flat, reference::mismatch()).unwrap();
    let b = generate_chip(21, geometry, shifted, reference::mismatch()).unwrap();
    assert!(b.global_vth_shift.abs() > 1e-3, "seed gives a visible shift");
    let env = reference::nominal();
    let modes = vec![CellMode::Original; a.n_cells()];
    let ma = a.margins(&env, &modes).unwrap();
    let mb = b.margins(&env, &modes).unwrap();
    let differ = ma.iter().zip(&mb).filter(|(x, y)| (**x > 0.0) != (**y > 0.0)).count();
    let sigma = reference::noise().effective_sigma(CellMode::Original);
    // any cell that changes sign must sit within the noise band of zero
    for (x, y) in ma.iter().zip(&mb) {
        if (*x > 0.0) != (*y > 0.0) {
            assert!(x.abs() < 3.0 * sigma, "margin {x} flipped under global shift");
        }
    }
    assert!((differ as f64) < 0.005 * a.n_cells() as f64, "{differ} cells changed");
}

#[test]
fn regulation_reduces_supply_induced_flips() {
    let reg = chip(31, 64, 64);
    let direct = reg.clone().with_supply_mode(SupplyMode::Direct);
    let env = reference::nominal();
    let modes = vec![CellMode::Original; reg.n_cells()];
    let count = |c: &ChipInstance| {
        let base = c.margins(&env, &modes).unwrap();
        [0.7, 0.8, 0.9, 1.0, 1.1, 1.3, 1.4]
            .iter()
            .map(|&v| {
                let m = c.margins(&env.with_supply(v), &modes).unwrap();
                m.iter().zip(&base).filter(|(a, b)| (**a > 0.0) != (**b > 0.0)).count()
            })
            .sum::<usize>()
    };
    let (r, d) = (count(&reg), count(&direct));
    assert!(d > r, "direct {d} vs regulated {r}");
}

#[test]
fn regulated_supply_is_flat_across_external_supply() {
    let c = chip(32, 32, 8);
    let env = reference::nominal();
    let lo = c.virtual_vdds(&env.with_supply(0.7)).unwrap();
    let hi = c.virtual_vdds(&env.with_supply(1.4)).unwrap();
    for (a, b) in lo.iter().zip(&hi) {
        assert!((a - b).abs() < 1e-3);
        assert!((a - reference::TARGET_VVDD).abs() < 0.05, "v_vdd {a}");
    }
}

#[test]
fn reconfiguration_probability_scaling() {
    let c = chip(41, 320, 256);
    let env = reference::nominal();
    let n = c.n_cells();
    let mo = c.margins(&env, &vec![CellMode::Original; n]).unwrap();
    let mr = c.margins(&env, &vec![CellMode::Reconfigured; n]).unwrap();
    // density near zero scales as 1/sigma: the reconfigured margin is
    // narrower by sqrt(2 / 1.5)
    let small = 1e-3;
    let po = mo.iter().filter(|m| m.abs() < small).count() as f64 / n as f64;
    let pr = mr.iter().filter(|m| m.abs() < small).count() as f64 / n as f64;
    let ratio = pr / po;
    assert!((ratio / (2.0f64 / 1.5).sqrt() - 1.0).abs() < 0.08, "ratio {ratio}");
    // original and reconfigured margins are uncorrelated, so the joint
    // instability follows the product law
    let wide = 3e-3;
    let po = mo.iter().filter(|m| m.abs() < wide).count() as f64 / n as f64;
    let pr = mr.iter().filter(|m| m.abs() < wide).count() as f64 / n as f64;
    let both = mo.iter().zip(&mr).filter(|(a, b)| a.abs() < wide && b.abs() < wide).count() as f64 / n as f64;
    assert!((both / (po * pr) - 1.0).abs() < 0.15, "joint {both} vs {}", po * pr);
}
