// SPDX-License-Identifier: Apache-2.0

//! Reliability, uniqueness and randomness metrics.

pub mod nist;

use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};

pub use nist::{nist_800_22_subset, nist_battery, Battery, BatteryRow, NistConfig, TestResult};

fn check_all(golden: &BitMatrix, readouts: &[BitMatrix], keep: Option<&BitMatrix>) -> Result<()> {
    for r in readouts {
        golden.check_shape(r)?;
    }
    if let Some(k) = keep {
        golden.check_shape(k)?;
    }
    Ok(())
}

fn kept(golden: &BitMatrix, keep: Option<&BitMatrix>) -> usize {
    keep.map_or(golden.len(), BitMatrix::count_ones)
}

fn differing(a: &BitMatrix, b: &BitMatrix, keep: Option<&BitMatrix>) -> usize {
    match keep {
        Some(k) => a.hamming_within(b, k),
        None => a.hamming(b),
    }
}

/// Mismatching reads over `cells × readouts`, counting only kept cells.
pub fn ber(golden: &BitMatrix, readouts: &[BitMatrix], keep: Option<&BitMatrix>) -> Result<f64> {
    check_all(golden, readouts, keep)?;
    let cells = kept(golden, keep);
    if readouts.is_empty() || cells == 0 {
        return Ok(0.0);
    }
    let flips: usize = readouts.iter().map(|r| differing(golden, r, keep)).sum();
    Ok(flips as f64 / (cells * readouts.len()) as f64)
}

/// Share of kept cells that disagree with `golden` in at least one readout.
pub fn unstable_fraction(golden: &BitMatrix, readouts: &[BitMatrix], keep: Option<&BitMatrix>) -> Result<f64> {
    Ok(unstable_growth(golden, readouts, keep)?.last().copied().unwrap_or(0.0))
}

/// Unstable fraction after each readout in turn.
pub fn unstable_growth(golden: &BitMatrix, readouts: &[BitMatrix], keep: Option<&BitMatrix>) -> Result<Vec<f64>> {
    check_all(golden, readouts, keep)?;
    let cells = kept(golden, keep);
    let mut ever = BitMatrix::zeros(golden.rows(), golden.cols());
    Ok(readouts
        .iter()
        .map(|r| {
            ever = ever.or(&golden.xor(r));
            let n = keep.map_or(ever.count_ones(), |k| ever.and(k).count_ones());
            if cells == 0 {
                0.0
            } else {
                n as f64 / cells as f64
            }
        })
        .collect())
}

/// Differing share of two keys over kept cells.
pub fn fractional_hd(a: &BitMatrix, b: &BitMatrix, keep: Option<&BitMatrix>) -> Result<f64> {
    a.check_shape(b)?;
    let cells = kept(a, keep);
    if cells == 0 {
        return Err(Error::Domain("no cells left to compare".into()));
    }
    Ok(differing(a, b, keep) as f64 / cells as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: values.len(),
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Hamming-distance populations of a set of chips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdReport {
    pub intra: Vec<f64>,
    pub inter: Vec<f64>,
    pub intra_summary: Option<Summary>,
    pub inter_summary: Option<Summary>,
    /// `mean(inter) / mean(intra)`; absent without both populations or when
    /// the intra mean is zero.
    pub separation: Option<f64>,
}

/// One chip's golden key, its readouts and the cells it keeps.
#[derive(Clone, Copy, Debug)]
pub struct ChipKeys<'a> {
    pub golden: &'a BitMatrix,
    pub readouts: &'a [BitMatrix],
    pub keep: Option<&'a BitMatrix>,
}

/// Intra-die HD of every readout against its own golden key and inter-die HD
/// of every pair of golden keys (over cells kept by both chips).
pub fn hamming_distances(chips: &[ChipKeys<'_>]) -> Result<HdReport> {
    let mut intra = Vec::new();
    for c in chips {
        for r in c.readouts {
            intra.push(fractional_hd(c.golden, r, c.keep)?);
        }
    }
    let mut inter = Vec::new();
    for (i, a) in chips.iter().enumerate() {
        for b in &chips[i + 1..] {
            let keep = match (a.keep, b.keep) {
                (Some(x), Some(y)) => Some(x.and(y)),
                (Some(x), None) | (None, Some(x)) => Some(x.clone()),
                (None, None) => None,
            };
            inter.push(fractional_hd(a.golden, b.golden, keep.as_ref())?);
        }
    }
    let intra_summary = Summary::of(&intra);
    let inter_summary = Summary::of(&inter);
    let separation = match (&intra_summary, &inter_summary) {
        (Some(a), Some(e)) if a.mean > 0.0 => Some(e.mean / a.mean),
        _ => None,
    };
    Ok(HdReport {
        intra,
        inter,
        intra_summary,
        inter_summary,
        separation,
    })
}

/// Counts of `values` in `bins` equal-width bins over `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
    let mut out = vec![0; bins];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins.saturating_sub(1));
        if bins > 0 {
            out[b] += 1;
        }
    }
    out
}

/// White-noise bound `z · √(scale / N)` for the autocorrelation of `N` bits.
///
/// The default `z = 1.96`, `scale = 2` gives 0.013696 at `N = 40960`. That
/// is the two-sided 95% bound for an effective sample size of `N / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcfBound {
    pub z: f64,
    pub scale: f64,
}

impl Default for AcfBound {
    fn default() -> Self {
        Self { z: 1.96, scale: 2.0 }
    }
}

impl AcfBound {
    pub fn value(&self, n: usize) -> f64 {
        self.z * (self.scale / n as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autocorrelation {
    /// `(lag, r)` for lags `1..=max_lag`.
    pub values: Vec<(usize, f64)>,
    pub bound: f64,
}

impl Autocorrelation {
    pub fn fraction_within(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.values.iter().filter(|(_, r)| r.abs() <= self.bound).count() as f64 / self.values.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,autocorrelation,bound\n");
        for (lag, r) in &self.values {
            out.push_str(&format!("{lag},{r:.9},{:.9}\n", self.bound));
        }
        out
    }
}

/// Normalized autocorrelation of the ±1-mapped sequence: mean removed,
/// divided by the biased (denominator `N`) variance. A constant sequence has
/// no variance and is reported as fully correlated.
pub fn autocorrelation(bits: &[bool], max_lag: usize, bound: &AcfBound) -> Result<Autocorrelation> {
    let n = bits.len();
    if max_lag >= n {
        return Err(Error::Domain(format!("max_lag {max_lag} must be below length {n}")));
    }
    let x: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var: f64 = d.iter().map(|v| v * v).sum();
    let values = (1..=max_lag)
        .map(|k| {
            let r = if var == 0.0 {
                1.0
            } else {
                d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / var
            };
            (k, r)
        })
        .collect();
    Ok(Autocorrelation {
        values,
        bound: bound.value(n),
    })
}

/// Binary entropy of the share of ones, in bits per bit.
pub fn shannon_entropy(bits: &[bool]) -> Result<f64> {
    if bits.is_empty() {
        return Err(Error::Domain("entropy of an empty sequence".into()));
    }
    let p = bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64;
    Ok(binary_entropy(p))
}

pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    h(p) + h(1.0 - p)
}

/// The full metric bundle of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ber: f64,
    pub unstable_fraction: f64,
    pub n_evals: usize,
    pub intra_hd: Option<Summary>,
    pub inter_hd: Option<Summary>,
    pub separation: Option<f64>,
    pub autocorr: Autocorrelation,
    pub entropy_bits: f64,
    pub test_results: Vec<TestResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned two-column text.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        let summary = |s: &Option<Summary>| {
            s.as_ref()
                .map_or("-".to_string(), |s| format!("mean {:.6}  std {:.6}  n {}", s.mean, s.std, s.count))
        };
        let mut rows = vec![
            ("ber".to_string(), format!("{:.6e}", self.ber)),
            ("unstable_fraction".to_string(), format!("{:.6}", self.unstable_fraction)),
            ("n_evals".to_string(), self.n_evals.to_string()),
            ("intra_hd".to_string(), summary(&self.intra_hd)),
            ("inter_hd".to_string(), summary(&self.inter_hd)),
            ("separation".to_string(), opt(self.separation)),
            ("entropy_bits".to_string(), format!("{:.6}", self.entropy_bits)),
            (
                "autocorr_within_bound".to_string(),
                format!("{:.4} (bound {:.6}, {} lags)", self.autocorr.fraction_within(), self.autocorr.bound, self.autocorr.values.len()),
            ),
        ];
        for t in &self.test_results {
            rows.push((format!("nist.{}", t.name), t.describe()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(bits: &[u8]) -> BitMatrix {
        BitMatrix::from_bools(1, bits.len(), &bits.iter().map(|&b| b == 1).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ber_by_definition() {
        let g = BitMatrix::zeros(10, 10);
        assert_eq!(ber(&g, &[g.clone()], None).unwrap(), 0.0);
        assert_eq!(ber(&g, &[g.not()], None).unwrap(), 1.0);
        let mut r = vec![g.clone(), g.clone(), g.clone()];
        for (k, i) in [(0, 1), (0, 2), (1, 3), (1, 50), (2, 99), (2, 0)] {
            r[k].set(i, true);
        }
        assert!((ber(&g, &r, None).unwrap() - 0.02).abs() < 1e-15);
        assert!(ber(&g, &[BitMatrix::zeros(5, 5)], None).is_err());
    }

    #[test]
    fn masked_cells_leave_denominator() {
        let g = m(&[0, 0, 0, 0]);
        let r = m(&[1, 0, 0, 0]);
        let keep = m(&[0, 1, 1, 1]);
        assert_eq!(ber(&g, &[r.clone()], Some(&keep)).unwrap(), 0.0);
        let keep = m(&[1, 1, 0, 0]);
        assert_eq!(ber(&g, &[r], Some(&keep)).unwrap(), 0.5);
    }

    #[test]
    fn unstable_one_flip() {
        let g = BitMatrix::zeros(32, 128);
        let mut reads = vec![g.clone(); 2000];
        reads[1234].set(77, true);
        assert_eq!(unstable_fraction(&g, &reads, None).unwrap(), 1.0 / 4096.0);
        assert_eq!(unstable_fraction(&g, &vec![g.clone(); 5], None).unwrap(), 0.0);
    }

    #[test]
    fn hd_identical_and_complement() {
        let a = m(&[1, 0, 1, 1, 0]);
        assert_eq!(fractional_hd(&a, &a, None).unwrap(), 0.0);
        assert_eq!(fractional_hd(&a, &a.not(), None).unwrap(), 1.0);
    }

    #[test]
    fn single_chip_has_no_inter() {
        let g = m(&[1, 0, 1, 1]);
        let reads = vec![m(&[1, 0, 1, 0])];
        let r = hamming_distances(&[ChipKeys { golden: &g, readouts: &reads, keep: None }]).unwrap();
        assert!(r.inter_summary.is_none() && r.separation.is_none());
        assert_eq!(r.intra, vec![0.25]);
    }

    #[test]
    fn acf_special_sequences() {
        let ones = vec![true; 100];
        let a = autocorrelation(&ones, 10, &AcfBound::default()).unwrap();
        assert!(a.values.iter().all(|&(_, r)| r == 1.0));
        let n = 1000;
        let alt: Vec<bool> = (0..n).map(|i| i % 2 == 1).collect();
        let a = autocorrelation(&alt, 20, &AcfBound::default()).unwrap();
        for &(k, r) in &a.values {
            // biased estimator: ±(N − k)/N
            let want = if k % 2 == 1 { -1.0 } else { 1.0 } * (n - k) as f64 / n as f64;
            assert!((r - want).abs() < 1e-12);
        }
        assert!(autocorrelation(&alt, n, &AcfBound::default()).is_err());
    }

    #[test]
    fn acf_bound_at_reference_length() {
        let b = AcfBound::default().value(40960);
        assert!((b - 1.96 * (2.0f64 / 40960.0).sqrt()).abs() < 1e-15);
        assert!((b / 0.01385 - 1.0).abs() < 0.1);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        let p: f64 = 0.489;
        let oracle = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) / 2f64.ln();
        assert!((binary_entropy(p) - oracle).abs() < 1e-15);
        assert!((binary_entropy(p) - 0.99965).abs() < 5e-6);
        assert!(shannon_entropy(&[]).is_err());
    }

    fn matrix(rows: usize, cols: usize, seed: u64) -> BitMatrix {
        let mut x = seed | 1;
        BitMatrix::from_fn(rows, cols, |_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x & 1 == 1
        })
    }

    proptest! {
        #[test]
        fn hd_is_a_metric(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let (a, b, c) = (matrix(4, 16, s1), matrix(4, 16, s2), matrix(4, 16, s3));
            let d = |x: &BitMatrix, y: &BitMatrix| fractional_hd(x, y, None).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &b) == 0.0, a == b);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
        }

        #[test]
        fn entropy_complement_invariant(s in any::<u64>(), n in 1usize..300) {
            let bits = matrix(1, n, s).to_bools();
            let inv: Vec<bool> = bits.iter().map(|b| !b).collect();
            prop_assert!((shannon_entropy(&bits).unwrap() - shannon_entropy(&inv).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn ber_below_unstable(s in any::<u64>(), n in 1usize..20) {
            let g = matrix(3, 7, s);
            let reads: Vec<_> = (0..n).map(|i| g.xor(&matrix(3, 7, s ^ (i as u64 + 1)).and(&matrix(3, 7, s.rotate_left(9) + i as u64)))).collect();
            let b = ber(&g, &reads, None).unwrap();
            let growth = unstable_growth(&g, &reads, None).unwrap();
            prop_assert!(b <= *growth.last().unwrap() + 1e-15);
            prop_assert!(growth.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn permutation_invariance(s in any::<u64>(), shift_r in 0usize..5, shift_c in 0usize..9) {
            let (rows, cols) = (5, 9);
            let g = matrix(rows, cols, s);
            let reads: Vec<_> = (0..4).map(|i| g.xor(&matrix(rows, cols, s ^ (i + 7)).and(&matrix(rows, cols, s ^ (i + 99))))).collect();
            let keep = matrix(rows, cols, s.wrapping_mul(3));
            let rp: Vec<usize> = (0..rows).map(|r| (r + shift_r) % rows).collect();
            let cp: Vec<usize> = (0..cols).map(|c| (c * 2 + shift_c) % cols).collect();
            let p = |x: &BitMatrix| x.permuted(&rp, &cp);
            let preads: Vec<_> = reads.iter().map(p).collect();
            prop_assert_eq!(ber(&g, &reads, Some(&keep)).unwrap(), ber(&p(&g), &preads, Some(&p(&keep))).unwrap());
            prop_assert_eq!(unstable_fraction(&g, &reads, Some(&keep)).unwrap(),
                            unstable_fraction(&p(&g), &preads, Some(&p(&keep))).unwrap());
            prop_assert_eq!(shannon_entropy(&g.to_bools()).unwrap(), shannon_entropy(&p(&g).to_bools()).unwrap());
            let other = matrix(rows, cols, !s);
            prop_assert_eq!(fractional_hd(&g, &other, None).unwrap(), fractional_hd(&p(&g), &p(&other), None).unwrap());
        }
    }
}
