// SPDX-License-Identifier: Apache-2.0

//! A subset of the NIST SP 800-22 rev. 1a statistical test suite.
//!
//! Every test follows the reference formulas of the standard and its C
//! implementation. Inputs shorter than a test's recommended minimum are
//! reported as skipped.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::cell::normal_cdf;
use crate::error::{Error, Result};

fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x)
    }
}

fn pm1(bits: &[bool]) -> impl Iterator<Item = i64> + '_ {
    bits.iter().map(|&b| if b { 1 } else { -1 })
}

/// Statistic and p-value of one test on one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Frequency (monobit) test: `s = |Σ(2ε − 1)| / √n`.
pub fn frequency(bits: &[bool]) -> Outcome {
    let s = pm1(bits).sum::<i64>().abs() as f64 / (bits.len() as f64).sqrt();
    Outcome {
        statistic: s,
        p_value: erfc(s / std::f64::consts::SQRT_2),
    }
}

/// Frequency within blocks of `m` bits.
pub fn block_frequency(bits: &[bool], m: usize) -> Outcome {
    let blocks = bits.len() / m;
    let chi2 = 4.0
        * m as f64
        * bits
            .chunks_exact(m)
            .take(blocks)
            .map(|b| (b.iter().filter(|&&x| x).count() as f64 / m as f64 - 0.5).powi(2))
            .sum::<f64>();
    Outcome {
        statistic: chi2,
        p_value: igamc(blocks as f64 / 2.0, chi2 / 2.0),
    }
}

/// Cumulative sums test, forward (`reverse = false`) or backward.
pub fn cumulative_sums(bits: &[bool], reverse: bool) -> Outcome {
    let n = bits.len() as f64;
    let mut s = 0i64;
    let mut z = 0i64;
    let steps: Box<dyn Iterator<Item = i64>> = if reverse {
        Box::new(pm1(bits).collect::<Vec<_>>().into_iter().rev())
    } else {
        Box::new(pm1(bits))
    };
    for x in steps {
        s += x;
        z = z.max(s.abs());
    }
    let zf = z as f64;
    if z == 0 {
        return Outcome { statistic: 0.0, p_value: 1.0 };
    }
    let sq = n.sqrt();
    // loop bounds truncate toward zero, as in the reference implementation
    let range = |a: f64, b: f64| (a.trunc() as i64)..=(b.trunc() as i64);
    let mut sum1 = 0.0;
    for k in range((-n / zf + 1.0) / 4.0, (n / zf - 1.0) / 4.0) {
        let k = k as f64;
        sum1 += normal_cdf((4.0 * k + 1.0) * zf / sq) - normal_cdf((4.0 * k - 1.0) * zf / sq);
    }
    let mut sum2 = 0.0;
    for k in range((-n / zf - 3.0) / 4.0, (n / zf - 1.0) / 4.0) {
        let k = k as f64;
        sum2 += normal_cdf((4.0 * k + 3.0) * zf / sq) - normal_cdf((4.0 * k + 1.0) * zf / sq);
    }
    Outcome {
        statistic: zf,
        p_value: (1.0 - sum1 + sum2).clamp(0.0, 1.0),
    }
}

/// Runs test. Fails with p = 0 when the frequency prerequisite
/// `|π − ½| < 2/√n` does not hold.
pub fn runs(bits: &[bool]) -> Outcome {
    let n = bits.len() as f64;
    let pi = bits.iter().filter(|&&b| b).count() as f64 / n;
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Outcome {
            statistic: v as f64,
            p_value: 0.0,
        };
    }
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    let den = 2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi);
    Outcome {
        statistic: v as f64,
        p_value: erfc(num / den),
    }
}

struct LongestRunTable {
    m: usize,
    low: usize,
    probs: &'static [f64],
}

const LONGEST_RUN_TABLES: [(usize, LongestRunTable); 3] = [
    (750_000, LongestRunTable { m: 10_000, low: 10, probs: &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727] }),
    (6272, LongestRunTable { m: 128, low: 4, probs: &[0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847] }),
    (128, LongestRunTable { m: 8, low: 1, probs: &[0.21484375, 0.3671875, 0.23046875, 0.1875] }),
];

pub const LONGEST_RUN_MIN_LEN: usize = 128;

/// Longest run of ones in a block; block size chosen from `n`.
pub fn longest_run(bits: &[bool]) -> Result<Outcome> {
    let n = bits.len();
    let table = &LONGEST_RUN_TABLES
        .iter()
        .find(|(min, _)| n >= *min)
        .ok_or_else(|| Error::Domain(format!("longest-run test needs at least {LONGEST_RUN_MIN_LEN} bits")))?
        .1;
    let classes = table.probs.len();
    let blocks = n / table.m;
    let mut v = vec![0usize; classes];
    for block in bits.chunks_exact(table.m).take(blocks) {
        let (mut run, mut best) = (0usize, 0usize);
        for &b in block {
            run = if b { run + 1 } else { 0 };
            best = best.max(run);
        }
        let class = best.clamp(table.low, table.low + classes - 1) - table.low;
        v[class] += 1;
    }
    let nb = blocks as f64;
    let chi2: f64 = v
        .iter()
        .zip(table.probs)
        .map(|(&obs, &p)| (obs as f64 - nb * p).powi(2) / (nb * p))
        .sum();
    Ok(Outcome {
        statistic: chi2,
        p_value: igamc((classes - 1) as f64 / 2.0, chi2 / 2.0),
    })
}

/// Discrete Fourier transform (spectral) test with the rev. 1a variance
/// `n · 0.95 · 0.05 / 4`. Returns the outcome and `(N1, N0)`.
pub fn dft(bits: &[bool]) -> (Outcome, f64, f64) {
    let n = bits.len();
    let mut buf: Vec<Complex<f64>> = pm1(bits).map(|x| Complex::new(x as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let threshold = ((1.0f64 / 0.05).ln() * n as f64).sqrt();
    let n1 = buf[1..n / 2].iter().filter(|c| c.norm() < threshold).count() as f64;
    let n0 = 0.95 * n as f64 / 2.0;
    let d = (n1 - n0) / (n as f64 * 0.95 * 0.05 / 4.0).sqrt();
    (
        Outcome {
            statistic: d,
            p_value: erfc(d.abs() / std::f64::consts::SQRT_2),
        },
        n1,
        n0,
    )
}

/// `ψ²_m` over overlapping (cyclically extended) `m`-bit patterns.
fn psi_sq(bits: &[bool], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let counts = pattern_counts(bits, m);
    let n = bits.len() as f64;
    (1u64 << m) as f64 / n * counts.iter().map(|&c| (c * c) as f64).sum::<f64>() - n
}

fn pattern_counts(bits: &[bool], m: usize) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    for i in 0..n {
        let mut idx = 0usize;
        for j in 0..m {
            idx = (idx << 1) | bits[(i + j) % n] as usize;
        }
        counts[idx] += 1;
    }
    counts
}

/// Serial test of pattern length `m`; returns the two p-values.
pub fn serial(bits: &[bool], m: usize) -> (Outcome, Outcome) {
    let p0 = psi_sq(bits, m);
    let p1 = if m >= 1 { psi_sq(bits, m - 1) } else { 0.0 };
    let p2 = if m >= 2 { psi_sq(bits, m - 2) } else { 0.0 };
    let d1 = p0 - p1;
    let d2 = p0 - 2.0 * p1 + p2;
    let m = m as i32;
    (
        Outcome {
            statistic: d1,
            p_value: igamc(2f64.powi(m - 2), d1 / 2.0),
        },
        Outcome {
            statistic: d2,
            p_value: igamc(2f64.powi(m - 3), d2 / 2.0),
        },
    )
}

/// Approximate entropy test with block length `m`.
pub fn approximate_entropy(bits: &[bool], m: usize) -> Outcome {
    let n = bits.len() as f64;
    let phi = |m: usize| -> f64 {
        if m == 0 {
            return 0.0;
        }
        pattern_counts(bits, m)
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    Outcome {
        statistic: chi2,
        p_value: igamc(2f64.powi(m as i32 - 1), chi2 / 2.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NistConfig {
    pub alpha: f64,
    /// Bits per tested sequence.
    pub sequence_len: usize,
    pub block_frequency_m: usize,
    /// Serial pattern length; `⌊log2 n⌋ − 3` when absent.
    #[serde(default)]
    pub serial_m: Option<usize>,
    /// Approximate-entropy block length; `⌊log2 n⌋ − 6` when absent.
    #[serde(default)]
    pub apen_m: Option<usize>,
    /// Minimum share of passing sequences for a test row to pass.
    pub min_pass_rate: f64,
}

impl Default for NistConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            sequence_len: 1024,
            block_frequency_m: 128,
            serial_m: None,
            apen_m: None,
            min_pass_rate: 0.96,
        }
    }
}

impl NistConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("nist.alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.sequence_len == 0 || self.block_frequency_m == 0 {
            return Err(Error::Config("nist.sequence_len and nist.block_frequency_m must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_pass_rate) {
            return Err(Error::Config("nist.min_pass_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Outcome of one test row on one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// `None` when skipped.
    pub pass: Option<bool>,
    pub skipped: Option<String>,
}

impl TestResult {
    fn ran(name: &str, o: Outcome, alpha: f64) -> Self {
        Self {
            name: name.into(),
            statistic: Some(o.statistic),
            p_value: Some(o.p_value),
            pass: Some(o.p_value >= alpha),
            skipped: None,
        }
    }

    fn skip(name: &str, why: String) -> Self {
        Self {
            name: name.into(),
            statistic: None,
            p_value: None,
            pass: None,
            skipped: Some(why),
        }
    }

    pub fn describe(&self) -> String {
        match (&self.skipped, self.p_value, self.statistic) {
            (Some(why), _, _) => format!("skipped ({why})"),
            (None, Some(p), Some(s)) => format!(
                "p {p:.6}  stat {s:.6}  {}",
                if self.pass == Some(true) { "pass" } else { "FAIL" }
            ),
            _ => "-".into(),
        }
    }
}

pub const TEST_NAMES: [&str; 10] = [
    "frequency",
    "block_frequency",
    "cumulative_sums_forward",
    "cumulative_sums_backward",
    "runs",
    "longest_run",
    "fft",
    "serial_1",
    "serial_2",
    "approximate_entropy",
];

fn floor_log2(n: usize) -> usize {
    (usize::BITS - 1 - n.max(1).leading_zeros()) as usize
}

/// Run every test of the subset on one sequence.
pub fn nist_800_22_subset(bits: &[bool], cfg: &NistConfig) -> Vec<TestResult> {
    let n = bits.len();
    let a = cfg.alpha;
    let short = |min: usize| format!("needs n >= {min}, got {n}");
    let mut out = Vec::with_capacity(TEST_NAMES.len());
    let basic = |name: &str, min: usize, f: &dyn Fn() -> Outcome| {
        if n >= min {
            TestResult::ran(name, f(), a)
        } else {
            TestResult::skip(name, short(min))
        }
    };
    out.push(basic("frequency", 100, &|| frequency(bits)));
    let m = cfg.block_frequency_m;
    out.push(if n >= 100 && m >= 20 && m as f64 > 0.01 * n as f64 && n / m < 100 && n / m >= 1 {
        TestResult::ran("block_frequency", block_frequency(bits, m), a)
    } else {
        TestResult::skip("block_frequency", format!("block size {m} unsuitable for n = {n}"))
    });
    out.push(basic("cumulative_sums_forward", 100, &|| cumulative_sums(bits, false)));
    out.push(basic("cumulative_sums_backward", 100, &|| cumulative_sums(bits, true)));
    out.push(basic("runs", 100, &|| runs(bits)));
    out.push(match longest_run(bits) {
        Ok(o) => TestResult::ran("longest_run", o, a),
        Err(_) => TestResult::skip("longest_run", short(LONGEST_RUN_MIN_LEN)),
    });
    out.push(basic("fft", 1000, &|| dft(bits).0));
    let lg = floor_log2(n);
    let sm = cfg.serial_m.unwrap_or(lg.saturating_sub(3));
    if sm >= 2 && sm + 2 < lg {
        let (p1, p2) = serial(bits, sm);
        out.push(TestResult::ran("serial_1", p1, a));
        out.push(TestResult::ran("serial_2", p2, a));
    } else {
        let why = format!("pattern length {sm} needs 2 <= m < log2(n) - 2");
        out.push(TestResult::skip("serial_1", why.clone()));
        out.push(TestResult::skip("serial_2", why));
    }
    let am = cfg.apen_m.unwrap_or(lg.saturating_sub(6));
    out.push(if am >= 1 && am + 5 < lg {
        TestResult::ran("approximate_entropy", approximate_entropy(bits, am), a)
    } else {
        TestResult::skip("approximate_entropy", format!("block length {am} needs 1 <= m < log2(n) - 5"))
    });
    out
}

/// Pass statistics of one test row over many sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryRow {
    pub name: String,
    pub sequences: usize,
    pub passed: usize,
    pub pass_rate: Option<f64>,
    pub mean_p: Option<f64>,
    /// Uniformity of the p-values: χ² over ten equal bins.
    pub uniformity_p: Option<f64>,
    /// `None` when every sequence skipped the test.
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Battery {
    pub sequence_len: usize,
    pub sequences: usize,
    pub rows: Vec<BatteryRow>,
}

impl Battery {
    pub fn rows_passed(&self) -> usize {
        self.rows.iter().filter(|r| r.pass == Some(true)).count()
    }

    pub fn rows_run(&self) -> usize {
        self.rows.iter().filter(|r| r.pass.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let mut out = String::from("test,sequences,passed,pass_rate,mean_p,uniformity_p,pass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.name,
                r.sequences,
                r.passed,
                opt(r.pass_rate),
                opt(r.mean_p),
                opt(r.uniformity_p),
                r.pass.map_or("skipped".to_string(), |p| p.to_string())
            ));
        }
        out
    }
}

/// Split `bits` into `sequence_len`-bit sequences (a trailing remainder is
/// dropped) and run the subset on each.
pub fn nist_battery(bits: &[bool], cfg: &NistConfig) -> Result<Battery> {
    cfg.validate()?;
    let seqs: Vec<&[bool]> = bits.chunks_exact(cfg.sequence_len).collect();
    if seqs.is_empty() {
        return Err(Error::Domain(format!(
            "{} bits do not fill one {}-bit sequence",
            bits.len(),
            cfg.sequence_len
        )));
    }
    let results: Vec<Vec<TestResult>> = seqs.iter().map(|s| nist_800_22_subset(s, cfg)).collect();
    let rows = TEST_NAMES
        .iter()
        .enumerate()
        .map(|(t, name)| {
            let ps: Vec<f64> = results.iter().filter_map(|r| r[t].p_value).collect();
            let passed = results.iter().filter(|r| r[t].pass == Some(true)).count();
            let ran = ps.len();
            let pass_rate = (ran > 0).then(|| passed as f64 / ran as f64);
            let mut bins = [0usize; 10];
            for p in &ps {
                bins[((p * 10.0) as usize).min(9)] += 1;
            }
            let expected = ran as f64 / 10.0;
            let uniformity_p = (ran > 0).then(|| {
                let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
                igamc(4.5, chi2 / 2.0)
            });
            BatteryRow {
                name: name.to_string(),
                sequences: ran,
                passed,
                pass_rate,
                mean_p: (ran > 0).then(|| ps.iter().sum::<f64>() / ran as f64),
                uniformity_p,
                pass: pass_rate.map(|r| r >= cfg.min_pass_rate),
            }
        })
        .collect();
    Ok(Battery {
        sequence_len: cfg.sequence_len,
        sequences: seqs.len(),
        rows,
    })
}
