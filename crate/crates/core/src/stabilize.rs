// SPDX-License-Identifier: Apache-2.0

//! Golden keys, temporal majority voting, reconfiguration maps and masks.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::bits::BitMatrix;
use crate::cell::{CellMode, NoiseModel};
use crate::chip::{evaluate_array, ChipInstance};
use crate::device::Environment;
use crate::error::{Error, Result};

/// Largest body-bias magnitude accepted by the enrollment sweep, V.
pub const MAX_ENROLL_VPW: f64 = 0.4;

fn check_odd(k: usize, what: &str) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::Config(format!("{what} must be odd, got {k}")));
    }
    Ok(())
}

/// Reference response of one die.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenKey {
    pub bits: BitMatrix,
    pub collected_at: Environment,
    pub votes: usize,
}

/// Per-cell majority of `votes` reads at `env` under `rmap`.
pub fn collect_golden(
    chip: &ChipInstance,
    env: &Environment,
    rmap: &RMap,
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<GoldenKey> {
    check_odd(votes, "votes")?;
    if votes < 3 {
        return Err(Error::Config(format!("golden key needs at least 3 votes, got {votes}")));
    }
    Ok(GoldenKey {
        bits: voted_bits(chip, env, rmap, noise, votes, session)?,
        collected_at: *env,
        votes,
    })
}

fn voted_bits(
    chip: &ChipInstance,
    env: &Environment,
    rmap: &RMap,
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<BitMatrix> {
    noise.validate()?;
    let modes = rmap.modes(chip)?;
    let margins = chip.margins(env, &modes)?;
    let ones = chip.ones_counts(&chip.read_plan(&margins, &modes, noise), session, votes as u64);
    Ok(chip.bit_matrix(|i| 2 * ones[i] as usize > votes))
}

/// Majority of `k` samples.
pub fn tmv(samples: &[bool], k: usize) -> Result<bool> {
    check_odd(k, "TMV length")?;
    if samples.len() != k {
        return Err(Error::Dimension {
            expected: format!("{k} samples"),
            actual: format!("{}", samples.len()),
        });
    }
    Ok(2 * samples.iter().filter(|&&b| b).count() > k)
}

/// Majority of each run of `k` consecutive reads.
pub fn tmv_reads(reads: &[BitMatrix], k: usize) -> Result<Vec<BitMatrix>> {
    check_odd(k, "TMV length")?;
    if reads.len() % k != 0 {
        return Err(Error::Dimension {
            expected: format!("a multiple of {k} reads"),
            actual: format!("{}", reads.len()),
        });
    }
    Ok(reads
        .par_chunks(k)
        .map(|group| {
            let proto = &group[0];
            BitMatrix::from_fn(proto.rows(), proto.cols(), |i| {
                2 * group.iter().filter(|r| r.get(i)).count() > k
            })
        })
        .collect())
}

/// Probability that a `k`-vote majority is wrong when each vote is wrong
/// independently with probability `p`: `P(Bin(k, p) ≥ (k + 1) / 2)`.
pub fn tmv_error_probability(p: f64, k: usize) -> Result<f64> {
    check_odd(k, "TMV length")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(p);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    Ok(((k + 1) / 2..=k)
        .map(|j| (ln_binomial(k as u64, j as u64) + j as f64 * lp + (k - j) as f64 * lq).exp())
        .sum::<f64>()
        .min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Evb,
    TempOracle,
    Manual,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Evb => "evb",
            Provenance::TempOracle => "temp-oracle",
            Provenance::Manual => "manual",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evb" => Ok(Provenance::Evb),
            "temp-oracle" => Ok(Provenance::TempOracle),
            "manual" => Ok(Provenance::Manual),
            _ => Err(Error::Parse(format!("unknown provenance {s:?}"))),
        }
    }
}

/// Cells to evaluate in the reconfigured topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RMap {
    pub chip_id: u64,
    pub reconfigure: BitMatrix,
    pub provenance: Provenance,
    pub sweep: String,
}

impl RMap {
    pub fn empty(chip: &ChipInstance) -> Self {
        Self {
            chip_id: chip.chip_id,
            reconfigure: chip.bit_matrix(|_| false),
            provenance: Provenance::Manual,
            sweep: String::new(),
        }
    }

    pub fn modes(&self, chip: &ChipInstance) -> Result<Vec<CellMode>> {
        chip.bit_matrix(|_| false).check_shape(&self.reconfigure)?;
        Ok(self
            .reconfigure
            .iter()
            .map(|r| if r { CellMode::Reconfigured } else { CellMode::Original })
            .collect())
    }

    pub fn count(&self) -> usize {
        self.reconfigure.count_ones()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.reconfigure.len() as f64
    }

    pub fn to_text(&self) -> String {
        flags_to_text("rmap", self.chip_id, Some(self.provenance), &self.sweep, &self.reconfigure)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f = flags_from_text(text, "rmap")?;
        Ok(Self {
            chip_id: f.chip_id,
            reconfigure: f.bits,
            provenance: f.provenance.ok_or_else(|| Error::Parse("rmap without provenance".into()))?,
            sweep: f.sweep,
        })
    }
}

/// Cells excluded from keys and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub chip_id: u64,
    pub discard: BitMatrix,
    pub sweep: String,
}

impl Mask {
    pub fn empty(chip: &ChipInstance) -> Self {
        Self {
            chip_id: chip.chip_id,
            discard: chip.bit_matrix(|_| false),
            sweep: String::new(),
        }
    }

    pub fn keep(&self) -> BitMatrix {
        self.discard.not()
    }

    pub fn count(&self) -> usize {
        self.discard.count_ones()
    }

    pub fn to_text(&self) -> String {
        flags_to_text("mask", self.chip_id, None, &self.sweep, &self.discard)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f = flags_from_text(text, "mask")?;
        Ok(Self {
            chip_id: f.chip_id,
            discard: f.bits,
            sweep: f.sweep,
        })
    }
}

const FLAGS_MAGIC: &str = "pufsim-flags v1";
const RUNS_PER_LINE: usize = 32;

fn flags_to_text(kind: &str, chip_id: u64, provenance: Option<Provenance>, sweep: &str, bits: &BitMatrix) -> String {
    let mut out = format!("{FLAGS_MAGIC}\nkind {kind}\nchip_id {chip_id}\ngeometry {} {}\n", bits.rows(), bits.cols());
    if let Some(p) = provenance {
        out.push_str(&format!("provenance {p}\n"));
    }
    out.push_str(&format!("sweep {}\nruns\n", sweep.replace(['\n', '\r'], " ")));
    // alternating run lengths, starting with a (possibly empty) run of zeros
    let mut runs = Vec::new();
    let (mut current, mut len) = (false, 0usize);
    for b in bits.iter() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    for line in runs.chunks(RUNS_PER_LINE) {
        let words: Vec<String> = line.iter().map(|r| r.to_string()).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

struct ParsedFlags {
    chip_id: u64,
    provenance: Option<Provenance>,
    sweep: String,
    bits: BitMatrix,
}

fn flags_from_text(text: &str, kind: &str) -> Result<ParsedFlags> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(FLAGS_MAGIC) {
        return Err(Error::Parse(format!("missing {FLAGS_MAGIC:?} header")));
    }
    let (mut chip_id, mut geometry, mut provenance, mut sweep, mut seen_kind) = (None, None, None, String::new(), None);
    for line in lines.by_ref() {
        let line = line.trim_end();
        if line == "runs" {
            break;
        }
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        let bad = |what: &str| Error::Parse(format!("bad {what}: {value:?}"));
        match key {
            "kind" => seen_kind = Some(value.to_string()),
            "chip_id" => chip_id = Some(value.parse::<u64>().map_err(|_| bad("chip_id"))?),
            "geometry" => {
                let dims: Vec<usize> = value
                    .split_whitespace()
                    .map(|v| v.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("geometry"))?;
                if dims.len() != 2 {
                    return Err(bad("geometry"));
                }
                geometry = Some((dims[0], dims[1]));
            }
            "provenance" => provenance = Some(value.parse()?),
            "sweep" => sweep = value.to_string(),
            _ => return Err(Error::Parse(format!("unknown header key {key:?}"))),
        }
    }
    if seen_kind.as_deref() != Some(kind) {
        return Err(Error::Parse(format!("expected kind {kind}, found {seen_kind:?}")));
    }
    let chip_id = chip_id.ok_or_else(|| Error::Parse("missing chip_id".into()))?;
    let (rows, cols) = geometry.ok_or_else(|| Error::Parse("missing geometry".into()))?;
    let mut flags = Vec::with_capacity(rows * cols);
    let mut value = false;
    for word in lines.flat_map(str::split_whitespace) {
        let run: usize = word.parse().map_err(|_| Error::Parse(format!("bad run length {word:?}")))?;
        if flags.len() + run > rows * cols {
            return Err(Error::Parse("runs exceed geometry".into()));
        }
        flags.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    Ok(ParsedFlags {
        chip_id,
        provenance,
        sweep,
        bits: BitMatrix::from_bools(rows, cols, &flags)?,
    })
}

/// Cells whose voted bit differs from the golden key at one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrollmentPoint {
    pub env: Environment,
    pub flagged: BitMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Enrollment {
    pub rmap: RMap,
    pub points: Vec<EnrollmentPoint>,
}

/// Vote at every point of `envs` under `base` and flag cells disagreeing with
/// `golden`. Point `p` uses noise session `session + p`.
pub fn flag_unstable(
    chip: &ChipInstance,
    golden: &GoldenKey,
    base: &RMap,
    envs: &[Environment],
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Vec<EnrollmentPoint>> {
    check_odd(votes, "votes")?;
    envs.iter()
        .enumerate()
        .map(|(p, env)| {
            let voted = voted_bits(chip, env, base, noise, votes, session + p as u64)?;
            golden.bits.check_shape(&voted)?;
            Ok(EnrollmentPoint {
                env: *env,
                flagged: voted.xor(&golden.bits),
            })
        })
        .collect()
}

fn union(points: &[EnrollmentPoint], chip: &ChipInstance) -> BitMatrix {
    points.iter().fold(chip.bit_matrix(|_| false), |acc, p| acc.or(&p.flagged))
}

fn describe(name: &str, values: &[f64], votes: usize) -> String {
    let v: Vec<String> = values.iter().map(|x| format!("{x}")).collect();
    format!("{name}={} votes={votes}", v.join(","))
}

/// Emulated-variation enrollment: sweep the p-well bias at the golden key's
/// temperature and supply.
pub fn enroll_rmap_evb(
    chip: &ChipInstance,
    golden: &GoldenKey,
    vpw_sweep: &[f64],
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Enrollment> {
    if let Some(v) = vpw_sweep.iter().find(|v| !(v.abs() <= MAX_ENROLL_VPW + 1e-12)) {
        return Err(Error::Config(format!("vpw sweep point {v} outside ±{MAX_ENROLL_VPW} V")));
    }
    let envs: Vec<_> = vpw_sweep.iter().map(|&v| golden.collected_at.with_vpw(v)).collect();
    let points = flag_unstable(chip, golden, &RMap::empty(chip), &envs, noise, votes, session)?;
    Ok(Enrollment {
        rmap: RMap {
            chip_id: chip.chip_id,
            reconfigure: union(&points, chip),
            provenance: Provenance::Evb,
            sweep: describe("vpw_V", vpw_sweep, votes),
        },
        points,
    })
}

/// Reference enrollment by sweeping temperature.
pub fn enroll_rmap_temperature_oracle(
    chip: &ChipInstance,
    golden: &GoldenKey,
    temp_grid: &[f64],
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Enrollment> {
    let envs: Vec<_> = temp_grid.iter().map(|&t| golden.collected_at.with_temperature(t)).collect();
    let points = flag_unstable(chip, golden, &RMap::empty(chip), &envs, noise, votes, session)?;
    Ok(Enrollment {
        rmap: RMap {
            chip_id: chip.chip_id,
            reconfigure: union(&points, chip),
            provenance: Provenance::TempOracle,
            sweep: describe("temperature_K", temp_grid, votes),
        },
        points,
    })
}

/// Second enrollment pass over the reconfigured chip: reconfigured cells that
/// still disagree with the stabilized golden key anywhere on the sweep are
/// discarded.
pub fn enroll_mask(
    chip: &ChipInstance,
    stabilized_golden: &GoldenKey,
    rmap: &RMap,
    vpw_sweep: &[f64],
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Mask> {
    let envs: Vec<_> = vpw_sweep
        .iter()
        .map(|&v| stabilized_golden.collected_at.with_vpw(v))
        .collect();
    let sweep = describe("vpw_V", vpw_sweep, votes);
    mask_over(chip, stabilized_golden, rmap, &envs, sweep, noise, votes, session)
}

/// Masking pass over the reference temperature grid.
pub fn enroll_mask_temperature(
    chip: &ChipInstance,
    stabilized_golden: &GoldenKey,
    rmap: &RMap,
    temp_grid: &[f64],
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Mask> {
    let envs: Vec<_> = temp_grid
        .iter()
        .map(|&t| stabilized_golden.collected_at.with_temperature(t))
        .collect();
    let sweep = describe("temperature_K", temp_grid, votes);
    mask_over(chip, stabilized_golden, rmap, &envs, sweep, noise, votes, session)
}

#[allow(clippy::too_many_arguments)]
fn mask_over(
    chip: &ChipInstance,
    stabilized_golden: &GoldenKey,
    rmap: &RMap,
    envs: &[Environment],
    sweep: String,
    noise: &NoiseModel,
    votes: usize,
    session: u64,
) -> Result<Mask> {
    let points = flag_unstable(chip, stabilized_golden, rmap, envs, noise, votes, session)?;
    Ok(Mask {
        chip_id: chip.chip_id,
        discard: union(&points, chip).and(&rmap.reconfigure),
        sweep,
    })
}

/// TMV-aggregated reads of a stabilized chip.
#[derive(Clone, Debug, PartialEq)]
pub struct Stabilized {
    pub outputs: Vec<BitMatrix>,
    /// Cells that take part in keys and metrics.
    pub keep: BitMatrix,
}

/// `n_outputs` TMV-`k` outputs: reconfigured cells read in merged mode and
/// masked cells excluded through `keep`.
#[allow(clippy::too_many_arguments)]
pub fn apply_stabilization(
    chip: &ChipInstance,
    rmap: &RMap,
    mask: &Mask,
    env: &Environment,
    noise: &NoiseModel,
    tmv_k: usize,
    n_outputs: usize,
    session: u64,
) -> Result<Stabilized> {
    check_odd(tmv_k, "tmv_k")?;
    let r = evaluate_array(chip, env, rmap, noise, tmv_k * n_outputs, session)?;
    r.reads[0].check_shape(&mask.discard)?;
    Ok(Stabilized {
        outputs: tmv_reads(&r.reads, tmv_k)?,
        keep: mask.keep(),
    })
}

/// Set comparison of a flag map against a reference set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub flagged: usize,
    pub truth: usize,
    pub true_positive: usize,
    /// `None` when nothing is flagged.
    pub precision: Option<f64>,
    /// `None` when the reference set is empty.
    pub recall: Option<f64>,
}

pub fn precision_recall(flagged: &BitMatrix, truth: &BitMatrix) -> Result<PrecisionRecall> {
    flagged.check_shape(truth)?;
    let tp = flagged.and(truth).count_ones();
    let (f, t) = (flagged.count_ones(), truth.count_ones());
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(PrecisionRecall {
        flagged: f,
        truth: t,
        true_positive: tp,
        precision: ratio(tp, f),
        recall: ratio(tp, t),
    })
}

/// Share of flagged cells that are truly unstable.
pub fn detection_rate(flagged: &BitMatrix, truly_unstable: &BitMatrix) -> Result<Option<f64>> {
    Ok(precision_recall(flagged, truly_unstable)?.precision)
}

/// Outcome classes of the reconfigurable cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellClass {
    /// Stable in the original topology, reads '0'.
    StableZero,
    /// Stable in the original topology, reads '1'.
    StableOne,
    /// Stabilized by reconfiguration, reads '1'.
    ReconfiguredOne,
    /// Stabilized by reconfiguration, reads '0'.
    ReconfiguredZero,
    /// Unstable in both topologies.
    Unstable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub class: CellClass,
    pub probability: f64,
}

/// Probabilities of the five outcome classes given the chance `p_o` that a
/// cell is unstable as built and `p_r` that it is still unstable after
/// reconfiguration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityLedger {
    pub p_o: f64,
    pub p_r: f64,
}

impl StabilityLedger {
    pub fn new(p_o: f64, p_r: f64) -> Result<Self> {
        for p in [p_o, p_r] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(Self { p_o, p_r })
    }

    pub fn rows(&self) -> [LedgerRow; 5] {
        let (po, pr) = (self.p_o, self.p_r);
        [
            LedgerRow { class: CellClass::StableZero, probability: 0.5 * (1.0 - po) },
            LedgerRow { class: CellClass::StableOne, probability: 0.5 * (1.0 - po) },
            LedgerRow { class: CellClass::ReconfiguredOne, probability: 0.5 * po * (1.0 - pr) },
            LedgerRow { class: CellClass::ReconfiguredZero, probability: 0.5 * po * (1.0 - pr) },
            LedgerRow { class: CellClass::Unstable, probability: po * pr },
        ]
    }

    pub fn total(&self) -> f64 {
        self.rows().iter().map(|r| r.probability).sum()
    }

    /// Share of cells still unstable after reconfiguration.
    pub fn residual(&self) -> f64 {
        self.p_o * self.p_r
    }

    /// Empirical ledger: `unstable_original` are the cells flagged in the
    /// original topology, `unstable_reconfigured` those among them still
    /// flagged after reconfiguration.
    pub fn from_flags(unstable_original: &BitMatrix, unstable_reconfigured: &BitMatrix) -> Result<Self> {
        unstable_original.check_shape(unstable_reconfigured)?;
        let n_o = unstable_original.count_ones();
        let n_r = unstable_reconfigured.and(unstable_original).count_ones();
        let p_o = n_o as f64 / unstable_original.len() as f64;
        let p_r = if n_o == 0 { 0.0 } else { n_r as f64 / n_o as f64 };
        Self::new(p_o, p_r)
    }
}

/// Class of one cell from its stability in each topology and its stable bit.
pub fn classify(unstable_original: bool, unstable_reconfigured: bool, bit: bool) -> CellClass {
    match (unstable_original, unstable_reconfigured, bit) {
        (false, _, false) => CellClass::StableZero,
        (false, _, true) => CellClass::StableOne,
        (true, false, true) => CellClass::ReconfiguredOne,
        (true, false, false) => CellClass::ReconfiguredZero,
        (true, true, _) => CellClass::Unstable,
    }
}
