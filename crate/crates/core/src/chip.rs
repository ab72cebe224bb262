// SPDX-License-Identifier: Apache-2.0

//! Cell arrays, per-column regulators and array-level evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitMatrix;
use crate::cell::{
    decide_bit, decision_margin, output_bit, CellMismatch, CellMode, InverterParams, NoiseModel, Role,
    DETERMINISTIC_SIGMAS, STAGES,
};
use crate::device::{sample_mismatch, Environment, MismatchModel, TransistorParams, VthDeviation};
use crate::error::{Error, Result};
use crate::regulator::{virtual_vdd_fixed_point, RegulatorConfig};
use crate::rng::{Domain, RandomStream, StreamKey};
use crate::stabilize::RMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Cells of one column sharing a regulator.
    pub cells_per_regulator: usize,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 128,
            cells_per_regulator: 32,
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!("geometry {}x{} is empty", self.rows, self.cols)));
        }
        if self.cells_per_regulator == 0 || self.rows % self.cells_per_regulator != 0 {
            return Err(Error::Config(format!(
                "geometry.cells_per_regulator = {} must divide rows = {}",
                self.cells_per_regulator, self.rows
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn regulators_per_column(&self) -> usize {
        self.rows / self.cells_per_regulator
    }

    pub fn n_regulators(&self) -> usize {
        self.cols * self.regulators_per_column()
    }

    /// Regulator feeding the cell at row-major index `cell`.
    pub fn regulator_of(&self, cell: usize) -> usize {
        let (row, col) = (cell / self.cols, cell % self.cols);
        col * self.regulators_per_column() + row / self.cells_per_regulator
    }
}

/// Device types shared by every die of a process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessParams {
    pub inverter: InverterParams,
    pub native: TransistorParams,
    pub vm_fraction: f64,
    /// Std-dev of the die-level threshold shift, V.
    pub global_vth_sigma: f64,
}

impl ProcessParams {
    pub fn validate(&self) -> Result<()> {
        self.inverter.nmos.validate("inverter.nmos")?;
        self.inverter.pmos.validate("inverter.pmos")?;
        self.native.validate("native")?;
        if !(self.vm_fraction > 0.0 && self.vm_fraction < 1.0) {
            return Err(Error::Config(format!("vm_fraction must be in (0, 1), got {}", self.vm_fraction)));
        }
        if !(self.global_vth_sigma >= 0.0) {
            return Err(Error::Config("global_vth_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn regulator(&self, cells_per_regulator: usize) -> RegulatorConfig {
        RegulatorConfig {
            vm_fraction: self.vm_fraction,
            ..RegulatorConfig::new(self.native, self.inverter.nmos, cells_per_regulator as u32)
        }
    }
}

/// Where the cells' supply comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupplyMode {
    /// Per-regulator virtual supply from the native device.
    #[default]
    Regulated,
    /// Regulator bypassed; cells run from the external supply.
    Direct,
}

/// One simulated die.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChipInstance {
    pub chip_id: u64,
    pub seed: u64,
    pub geometry: ArrayGeometry,
    pub process: ProcessParams,
    pub mismatch: MismatchModel,
    pub global_vth_shift: f64,
    /// Row-major.
    pub cells: Vec<CellMismatch>,
    pub regulators: Vec<RegulatorConfig>,
    #[serde(default)]
    pub supply_mode: SupplyMode,
}

/// Sample a die. The result is a pure function of the arguments.
pub fn generate_chip(
    seed: u64,
    geometry: ArrayGeometry,
    process: ProcessParams,
    mismatch: MismatchModel,
) -> Result<ChipInstance> {
    geometry.validate()?;
    process.validate()?;
    mismatch.validate()?;
    let global_vth_shift = process.global_vth_sigma
        * RandomStream::new(StreamKey::new(seed, Domain::ChipGlobal, 0, 0, 0)).normal();
    let cells = (0..geometry.n_cells())
        .into_par_iter()
        .map(|i| {
            let mut c = CellMismatch::ZERO;
            for s in 0..STAGES {
                for role in [Role::Nmos, Role::Pmos] {
                    let mut stream =
                        RandomStream::new(StreamKey::new(seed, Domain::CellMismatch, i as u64, s as u64, role as u64));
                    c.devices[s][role as usize] =
                        sample_mismatch(&mismatch, process.inverter.device(role), &mut stream);
                }
            }
            c.shifted(global_vth_shift)
        })
        .collect();
    let template = process.regulator(geometry.cells_per_regulator);
    let regulators = (0..geometry.n_regulators())
        .map(|j| {
            let mut stream = RandomStream::new(StreamKey::new(seed, Domain::RegulatorMismatch, j as u64, 0, 0));
            RegulatorConfig {
                native_dev: sample_mismatch(&mismatch, &process.native, &mut stream).shifted(global_vth_shift),
                pull_down_dev: VthDeviation::ZERO.shifted(global_vth_shift),
                ..template
            }
        })
        .collect();
    Ok(ChipInstance {
        chip_id: seed,
        seed,
        geometry,
        process,
        mismatch,
        global_vth_shift,
        cells,
        regulators,
        supply_mode: SupplyMode::Regulated,
    })
}

impl ChipInstance {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn with_supply_mode(mut self, mode: SupplyMode) -> Self {
        self.supply_mode = mode;
        self
    }

    /// Supply seen by each regulator's cells.
    pub fn virtual_vdds(&self, env: &Environment) -> Result<Vec<f64>> {
        env.validate(self.process.inverter.nmos.fermi_phi)?;
        match self.supply_mode {
            SupplyMode::Direct => Ok(vec![env.supply_vdd; self.regulators.len()]),
            SupplyMode::Regulated => self
                .regulators
                .par_iter()
                .enumerate()
                .map(|(j, reg)| {
                    virtual_vdd_fixed_point(reg, env).map_err(|e| {
                        let col = j / self.geometry.regulators_per_column();
                        Error::Convergence(format!("regulator {j} (column {col}): {e}"))
                    })
                })
                .collect(),
        }
    }

    /// Decision margin of every cell under `modes`.
    pub fn margins(&self, env: &Environment, modes: &[CellMode]) -> Result<Vec<f64>> {
        if modes.len() != self.n_cells() {
            return Err(Error::Dimension {
                expected: format!("{} cell modes", self.n_cells()),
                actual: format!("{}", modes.len()),
            });
        }
        let vdds = self.virtual_vdds(env)?;
        (0..self.n_cells())
            .into_par_iter()
            .map(|i| {
                decision_margin(
                    &self.process.inverter,
                    &self.cells[i],
                    modes[i],
                    env,
                    vdds[self.geometry.regulator_of(i)],
                )
            })
            .collect()
    }

    fn stream(&self, cell: usize, session: u64, eval: u64) -> RandomStream {
        RandomStream::new(StreamKey::new(self.chip_id, Domain::Noise, cell as u64, session, eval))
    }

    /// Split cells into those whose reads are fixed by their margin and
    /// those that need a noise draw.
    pub fn read_plan(&self, margins: &[f64], modes: &[CellMode], noise: &NoiseModel) -> ReadPlan {
        let mut base = self.bit_matrix(|_| false);
        let mut degenerate = base.clone();
        let mut live = Vec::new();
        for (i, (&m, &mode)) in margins.iter().zip(modes).enumerate() {
            let sigma = noise.effective_sigma(mode);
            if sigma > 0.0 && m.abs() < DETERMINISTIC_SIGMAS * sigma {
                live.push(i);
            } else {
                base.set(i, output_bit(m, mode));
                degenerate.set(i, m == 0.0);
            }
        }
        ReadPlan {
            base,
            degenerate,
            live,
            margins: margins.to_vec(),
            modes: modes.to_vec(),
            noise: *noise,
        }
    }

    /// Read `eval` of every cell; returns the bits and the degenerate flags.
    pub fn read(&self, plan: &ReadPlan, session: u64, eval: u64) -> (BitMatrix, BitMatrix) {
        let mut bits = plan.base.clone();
        let mut degenerate = plan.degenerate.clone();
        for &i in &plan.live {
            let d = decide_bit(plan.margins[i], &plan.noise, plan.modes[i], &mut self.stream(i, session, eval));
            bits.set(i, d.bit);
            if d.degenerate {
                degenerate.set(i, true);
            }
        }
        (bits, degenerate)
    }

    /// Number of '1' reads per cell over evaluations `0..n_evals`.
    pub fn ones_counts(&self, plan: &ReadPlan, session: u64, n_evals: u64) -> Vec<u32> {
        let mut counts: Vec<u32> = (0..self.n_cells())
            .map(|i| if plan.base.get(i) { n_evals as u32 } else { 0 })
            .collect();
        let live: Vec<u32> = plan
            .live
            .par_iter()
            .map(|&i| {
                (0..n_evals)
                    .filter(|&e| {
                        decide_bit(plan.margins[i], &plan.noise, plan.modes[i], &mut self.stream(i, session, e)).bit
                    })
                    .count() as u32
            })
            .collect();
        for (&i, c) in plan.live.iter().zip(live) {
            counts[i] = c;
        }
        counts
    }

    pub fn bit_matrix(&self, f: impl FnMut(usize) -> bool) -> BitMatrix {
        BitMatrix::from_fn(self.geometry.rows, self.geometry.cols, f)
    }
}

/// Precomputed read state of a chip at one operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadPlan {
    /// Bits of the cells whose reads are deterministic.
    pub base: BitMatrix,
    pub degenerate: BitMatrix,
    /// Cells close enough to threshold to need a noise draw.
    pub live: Vec<usize>,
    pub margins: Vec<f64>,
    pub modes: Vec<CellMode>,
    pub noise: NoiseModel,
}

/// Repeated reads of a chip at one operating point.
#[derive(Clone, Debug, PartialEq)]
pub struct Readouts {
    pub env: Environment,
    pub modes: Vec<CellMode>,
    pub reads: Vec<BitMatrix>,
    /// Cells that read an exact zero decision voltage at least once.
    pub degenerate: BitMatrix,
}

impl Readouts {
    /// Per-cell majority over all reads (ties read '1').
    pub fn majority(&self) -> BitMatrix {
        let n = self.reads.len();
        let proto = &self.reads[0];
        BitMatrix::from_fn(proto.rows(), proto.cols(), |i| {
            2 * self.reads.iter().filter(|r| r.get(i)).count() >= n
        })
    }

    /// Per-cell count of reads disagreeing with `reference`.
    pub fn flip_counts(&self, reference: &BitMatrix) -> Vec<u32> {
        let mut counts = vec![0u32; reference.len()];
        for r in &self.reads {
            for (i, c) in counts.iter_mut().enumerate() {
                *c += (r.get(i) != reference.get(i)) as u32;
            }
        }
        counts
    }
}

/// `n_evals` noisy reads of every cell; read `e` of cell `i` draws its noise
/// from the stream keyed by `(chip_id, i, session, e)`.
pub fn evaluate_array(
    chip: &ChipInstance,
    env: &Environment,
    rmap: &RMap,
    noise: &NoiseModel,
    n_evals: usize,
    session: u64,
) -> Result<Readouts> {
    if n_evals == 0 {
        return Err(Error::Config("n_evals must be >= 1".into()));
    }
    noise.validate()?;
    let modes = rmap.modes(chip)?;
    let margins = chip.margins(env, &modes)?;
    let plan = chip.read_plan(&margins, &modes, noise);
    let (reads, degenerate): (Vec<_>, Vec<_>) =
        (0..n_evals as u64).into_par_iter().map(|e| chip.read(&plan, session, e)).unzip();
    let degenerate = degenerate.iter().fold(plan.degenerate.clone(), |acc, d| acc.or(d));
    Ok(Readouts {
        env: *env,
        modes,
        reads,
        degenerate,
    })
}

/// Aggregate of one sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub readouts: Readouts,
    pub majority: BitMatrix,
    /// Reads disagreeing with the reference key, per cell.
    pub flips: Vec<u32>,
}

impl SweepPoint {
    pub fn env(&self) -> Environment {
        self.readouts.env
    }

    pub fn n_evals(&self) -> usize {
        self.readouts.reads.len()
    }

    /// Flip rate over kept cells; `keep = None` keeps all.
    pub fn ber(&self, keep: Option<&BitMatrix>) -> f64 {
        let (flips, cells) = self
            .flips
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.is_none_or(|k| k.get(*i)))
            .fold((0u64, 0u64), |(f, c), (_, &n)| (f + n as u64, c + 1));
        if cells == 0 {
            0.0
        } else {
            flips as f64 / (cells * self.n_evals() as u64) as f64
        }
    }

    pub fn unstable_fraction(&self, keep: Option<&BitMatrix>) -> f64 {
        let (bad, cells) = self
            .flips
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.is_none_or(|k| k.get(*i)))
            .fold((0u64, 0u64), |(b, c), (_, &n)| (b + (n > 0) as u64, c + 1));
        if cells == 0 {
            0.0
        } else {
            bad as f64 / cells as f64
        }
    }
}

/// Evaluate every grid point and compare against `reference`. Point `p`
/// uses noise session `session + p`.
pub fn environment_sweep(
    chip: &ChipInstance,
    grid: &[Environment],
    rmap: &RMap,
    noise: &NoiseModel,
    n_evals: usize,
    reference: &BitMatrix,
    session: u64,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Config("environment grid is empty".into()));
    }
    grid.iter()
        .enumerate()
        .map(|(p, env)| {
            let readouts = evaluate_array(chip, env, rmap, noise, n_evals, session + p as u64)?;
            reference.check_shape(&readouts.reads[0])?;
            let flips = readouts.flip_counts(reference);
            Ok(SweepPoint {
                majority: readouts.majority(),
                readouts,
                flips,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "temperature_K,supply_V,vbias_V,vpw_V,n_evals,ber,unstable_fraction";

/// Sweep aggregates as CSV; an empty sweep yields the header only.
pub fn sweep_csv(points: &[SweepPoint], keep: Option<&BitMatrix>) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in points {
        let e = p.env();
        out.push_str(&format!(
            "{},{},{},{},{},{:.9},{:.9}\n",
            e.temperature,
            e.supply_vdd,
            e.bias_vbias,
            e.body_vpw,
            p.n_evals(),
            p.ber(keep),
            p.unstable_fraction(keep)
        ));
    }
    out
}
