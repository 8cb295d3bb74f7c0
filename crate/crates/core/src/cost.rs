//! Time/energy accounting for checkpointing, recovery and recomputation.
//!
//! Time is in picoseconds; energy is in abstract units where one ALU op
//! costs 1. Every charge lands in exactly one bucket of [`CostLedger`].

use std::ops::{Add, AddAssign, Mul, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::Opcode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    #[serde(default)]
    pub time: u64,
    #[serde(default)]
    pub energy: u64,
}

impl Cost {
    pub const ZERO: Cost = Cost { time: 0, energy: 0 };

    pub const fn new(time: u64, energy: u64) -> Self {
        Cost { time, energy }
    }

    pub fn is_zero(self) -> bool {
        self == Cost::ZERO
    }
}

impl std::fmt::Display for Cost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ps / {} energy", self.time, self.energy)
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost::new(self.time + rhs.time, self.energy + rhs.energy)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl Sub for Cost {
    type Output = Cost;
    fn sub(self, rhs: Cost) -> Cost {
        Cost::new(self.time - rhs.time, self.energy - rhs.energy)
    }
}

impl Mul<u64> for Cost {
    type Output = Cost;
    fn mul(self, n: u64) -> Cost {
        Cost::new(self.time * n, self.energy * n)
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

/// Operating frequency 1.09 GHz: one cycle is ~917 ps.
const CYCLE_PS: u64 = 917;
const L1_PS: u64 = 3_660;
const L2_PS: u64 = 24_770;
const DRAM_PS: u64 = 120_000;
const ALU_ENERGY: u64 = 1;
// A configuration choice, not a measured figure: memory traffic costs two
// orders of magnitude more energy than an ALU op.
const MEM_ENERGY: u64 = 100 * ALU_ENERGY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// `const` and every ALU op except `mul`.
    pub c_alu: Cost,
    pub c_mul: Cost,
    pub c_mem_read: Cost,
    pub c_mem_write: Cost,
    /// One undo record (old value of a line) written to the in-memory log.
    pub c_log_write: Cost,
    /// Write-back of one dirty line at checkpoint establishment.
    pub c_flush: Cost,
    /// Per participating core, per establishment or recovery.
    pub c_coord: Cost,
    /// Per word restored from the log (architectural words included).
    pub c_restore: Cost,
    pub c_rcmp_inst: Cost,
    /// Per captured slice input word stored alongside an address-map entry.
    pub c_buf_write: Cost,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_alu: Cost::new(CYCLE_PS, ALU_ENERGY),
            c_mul: Cost::new(CYCLE_PS, ALU_ENERGY),
            c_mem_read: Cost::new(L1_PS, MEM_ENERGY),
            c_mem_write: Cost::new(L1_PS, MEM_ENERGY),
            c_log_write: Cost::new(DRAM_PS, MEM_ENERGY),
            c_flush: Cost::new(DRAM_PS, MEM_ENERGY),
            c_coord: Cost::new(L2_PS, 10 * ALU_ENERGY),
            // Reads the log record and writes the word back: two accesses.
            c_restore: Cost::new(DRAM_PS, 2 * MEM_ENERGY),
            c_rcmp_inst: Cost::new(CYCLE_PS, ALU_ENERGY),
            c_buf_write: Cost::new(L1_PS, 10 * ALU_ENERGY),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl CostParams {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn exec(&self, op: Opcode) -> Cost {
        match op {
            Opcode::Mul => self.c_mul,
            Opcode::Load => self.c_mem_read,
            Opcode::Store => self.c_mem_write,
            Opcode::Halt | Opcode::AssocAddr | Opcode::Repeat | Opcode::End => Cost::ZERO,
            _ => self.c_alu,
        }
    }

    pub fn cost_of(&self, event: CostEvent) -> Cost {
        match event {
            CostEvent::Exec(op) => self.exec(op),
            CostEvent::LogWrite | CostEvent::ArchSave => self.c_log_write,
            CostEvent::Flush => self.c_flush,
            CostEvent::CoordCheckpoint | CostEvent::CoordRecovery => self.c_coord,
            CostEvent::BufWrite => self.c_buf_write,
            CostEvent::Restore => self.c_restore,
            CostEvent::RecomputeInst => self.c_rcmp_inst,
            CostEvent::RecomputeWrite => self.c_mem_write,
        }
    }
}

/// Chargeable event kinds. Wasted work is not an event: it is work already
/// charged as execution and reclassified via [`CostLedger::reclassify_waste`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostEvent {
    Exec(Opcode),
    LogWrite,
    /// Saving one architectural word at establishment.
    ArchSave,
    Flush,
    CoordCheckpoint,
    BufWrite,
    CoordRecovery,
    Restore,
    RecomputeInst,
    /// Writing a recomputed value back to memory.
    RecomputeWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bucket {
    Exec,
    Checkpoint,
    RollBack,
    Recompute,
}

impl CostEvent {
    pub fn bucket(self) -> Bucket {
        match self {
            CostEvent::Exec(_) => Bucket::Exec,
            CostEvent::LogWrite
            | CostEvent::ArchSave
            | CostEvent::Flush
            | CostEvent::CoordCheckpoint
            | CostEvent::BufWrite => Bucket::Checkpoint,
            CostEvent::CoordRecovery | CostEvent::Restore => Bucket::RollBack,
            CostEvent::RecomputeInst | CostEvent::RecomputeWrite => Bucket::Recompute,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalFate {
    /// Closed by a checkpoint establishment.
    Sealed,
    /// Undone by a global rollback before it could be sealed.
    Discarded,
    /// Still accumulating when the program finished.
    Open,
}

/// Checkpoint-side cost accrued while one interval was live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalCharge {
    pub interval: u32,
    pub fate: IntervalFate,
    pub o_wr_chk: Cost,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryCharge {
    pub occur: u64,
    pub detect: u64,
    pub o_waste: Cost,
    pub o_roll_back: Cost,
    pub o_rcmp: Cost,
}

impl RecoveryCharge {
    pub fn total(&self) -> Cost {
        self.o_waste + self.o_roll_back + self.o_rcmp
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    /// Every executed instruction, re-executions included.
    pub exec: Cost,
    pub o_chk: Cost,
    pub o_waste: Cost,
    pub o_roll_back: Cost,
    pub o_rcmp: Cost,
    /// Number of checkpoint establishments.
    pub n_chk: u64,
    pub intervals: Vec<IntervalCharge>,
    pub recoveries: Vec<RecoveryCharge>,
}

impl CostLedger {
    pub fn charge(&mut self, params: &CostParams, event: CostEvent, magnitude: u64) -> Cost {
        let c = params.cost_of(event) * magnitude;
        *self.bucket_mut(event.bucket()) += c;
        c
    }

    fn bucket_mut(&mut self, b: Bucket) -> &mut Cost {
        match b {
            Bucket::Exec => &mut self.exec,
            Bucket::Checkpoint => &mut self.o_chk,
            Bucket::RollBack => &mut self.o_roll_back,
            Bucket::Recompute => &mut self.o_rcmp,
        }
    }

    /// Moves lost work from useful execution into waste.
    pub fn reclassify_waste(&mut self, lost: Cost) {
        self.o_waste += lost;
    }

    /// Useful work: execution that survived into the final result.
    pub fn base(&self) -> Cost {
        self.exec - self.o_waste
    }

    pub fn o_rec(&self) -> Cost {
        self.o_waste + self.o_roll_back + self.o_rcmp
    }

    pub fn total(&self) -> Cost {
        self.base() + self.o_chk + self.o_rec()
    }

    /// Sum of per-interval checkpoint contributions; equals `o_chk`.
    pub fn interval_sum(&self) -> Cost {
        self.intervals.iter().map(|i| i.o_wr_chk).sum()
    }

    /// Mean `o_wr_chk` over sealed intervals.
    pub fn mean_o_wr_chk(&self) -> Cost {
        let sealed: Vec<_> = self
            .intervals
            .iter()
            .filter(|i| i.fate == IntervalFate::Sealed)
            .collect();
        if sealed.is_empty() {
            return Cost::ZERO;
        }
        let n = sealed.len() as u64;
        let s: Cost = sealed.iter().map(|i| i.o_wr_chk).sum();
        Cost::new(s.time / n, s.energy / n)
    }

    /// Associative, commutative aggregation across independent runs.
    pub fn merge(&mut self, other: &CostLedger) {
        self.exec += other.exec;
        self.o_chk += other.o_chk;
        self.o_waste += other.o_waste;
        self.o_roll_back += other.o_roll_back;
        self.o_rcmp += other.o_rcmp;
        self.n_chk += other.n_chk;
        self.intervals.extend_from_slice(&other.intervals);
        self.recoveries.extend_from_slice(&other.recoveries);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("baseline total {0} is zero; overhead is undefined")]
    ZeroBaseline(&'static str),
    #[error("error schedules differ between the compared runs")]
    MismatchedSchedules,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub time_pct: f64,
    pub energy_pct: f64,
    pub edp: f64,
    pub baseline_edp: f64,
}

pub fn edp(c: Cost) -> f64 {
    c.time as f64 * c.energy as f64
}

pub fn overhead_report(ledger: &CostLedger, baseline: &CostLedger) -> Result<Overhead, ReportError> {
    overhead_between(ledger.total(), baseline.total())
}

pub fn overhead_between(total: Cost, baseline: Cost) -> Result<Overhead, ReportError> {
    if baseline.time == 0 {
        return Err(ReportError::ZeroBaseline("time"));
    }
    if baseline.energy == 0 {
        return Err(ReportError::ZeroBaseline("energy"));
    }
    let pct = |x: u64, b: u64| (x as f64 - b as f64) / b as f64 * 100.0;
    Ok(Overhead {
        time_pct: pct(total.time, baseline.time),
        energy_pct: pct(total.energy, baseline.energy),
        edp: edp(total),
        baseline_edp: edp(baseline),
    })
}

/// Percentage by which `edp_a` undercuts `edp_b`.
pub fn edp_reduction(edp_a: f64, edp_b: f64) -> Result<f64, ReportError> {
    if edp_b == 0.0 {
        return Err(ReportError::ZeroBaseline("EDP"));
    }
    Ok((edp_b - edp_a) / edp_b * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakEven {
    pub holds: bool,
    /// `rollback − (rollback_rcmp + rcmp)`; negative when violated.
    pub margin: i128,
}

/// Recomputation pays off when restoring the smaller log plus recomputing
/// costs no more than restoring the full log.
pub fn breakeven_terms(rollback_rcmp: u64, rcmp: u64, rollback: u64) -> BreakEven {
    let margin = rollback as i128 - (rollback_rcmp as i128 + rcmp as i128);
    BreakEven {
        holds: margin >= 0,
        margin,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakEvenReport {
    pub per_recovery_time: Vec<BreakEven>,
    pub per_recovery_energy: Vec<BreakEven>,
    pub aggregate_time: BreakEven,
    pub aggregate_energy: BreakEven,
}

impl BreakEvenReport {
    pub fn holds(&self) -> bool {
        self.aggregate_time.holds && self.aggregate_energy.holds
    }
}

pub fn breakeven(amnesic: &CostLedger, baseline: &CostLedger) -> Result<BreakEvenReport, ReportError> {
    let same_schedule = amnesic.recoveries.len() == baseline.recoveries.len()
        && amnesic
            .recoveries
            .iter()
            .zip(&baseline.recoveries)
            .all(|(a, b)| (a.occur, a.detect) == (b.occur, b.detect));
    if !same_schedule {
        return Err(ReportError::MismatchedSchedules);
    }
    let pairs = || amnesic.recoveries.iter().zip(&baseline.recoveries);
    Ok(BreakEvenReport {
        per_recovery_time: pairs()
            .map(|(a, b)| breakeven_terms(a.o_roll_back.time, a.o_rcmp.time, b.o_roll_back.time))
            .collect(),
        per_recovery_energy: pairs()
            .map(|(a, b)| breakeven_terms(a.o_roll_back.energy, a.o_rcmp.energy, b.o_roll_back.energy))
            .collect(),
        aggregate_time: breakeven_terms(
            amnesic.o_roll_back.time,
            amnesic.o_rcmp.time,
            baseline.o_roll_back.time,
        ),
        aggregate_energy: breakeven_terms(
            amnesic.o_roll_back.energy,
            amnesic.o_rcmp.energy,
            baseline.o_roll_back.energy,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_write_lands_in_checkpoint_bucket() {
        let p = CostParams::default();
        let mut l = CostLedger::default();
        l.charge(&p, CostEvent::LogWrite, 1);
        assert_eq!(l.o_chk, p.c_log_write);
        assert_eq!(l.exec + l.o_roll_back + l.o_rcmp, Cost::ZERO);
    }

    #[test]
    fn three_instruction_recomputation() {
        let p = CostParams::default();
        let mut l = CostLedger::default();
        l.charge(&p, CostEvent::RecomputeInst, 3);
        l.charge(&p, CostEvent::RecomputeWrite, 1);
        assert_eq!(l.o_rcmp, p.c_rcmp_inst * 3 + p.c_mem_write);
    }

    #[test]
    fn coordination_of_eight_cores() {
        let p = CostParams::default();
        let mut l = CostLedger::default();
        l.charge(&p, CostEvent::CoordCheckpoint, 8);
        assert_eq!(l.o_chk, p.c_coord * 8);
    }

    fn ledger_with_total(time: u64, energy: u64) -> CostLedger {
        CostLedger {
            exec: Cost::new(time, energy),
            ..Default::default()
        }
    }

    #[test]
    fn identical_ledgers_have_zero_overhead() {
        let a = ledger_with_total(100, 50);
        let o = overhead_report(&a, &a).unwrap();
        assert_eq!(o.time_pct, 0.0);
        assert_eq!(o.energy_pct, 0.0);
    }

    #[test]
    fn ten_percent_time_overhead() {
        let o = overhead_report(&ledger_with_total(110, 1), &ledger_with_total(100, 1)).unwrap();
        assert!((o.time_pct - 10.0).abs() < 1e-12);
    }

    #[test]
    fn edp_and_its_reduction() {
        assert_eq!(edp(Cost::new(2, 3)), 6.0);
        assert_eq!(edp(Cost::new(4, 4)), 16.0);
        assert_eq!(edp_reduction(6.0, 16.0).unwrap(), 62.5);
    }

    #[test]
    fn zero_baseline_is_an_error() {
        let z = CostLedger::default();
        assert!(overhead_report(&ledger_with_total(1, 1), &z).is_err());
    }

    #[test]
    fn breakeven_examples() {
        assert_eq!(breakeven_terms(7, 2, 10), BreakEven { holds: true, margin: 1 });
        assert_eq!(breakeven_terms(9, 3, 10), BreakEven { holds: false, margin: -2 });
        assert_eq!(breakeven_terms(10, 0, 10), BreakEven { holds: true, margin: 0 });
    }

    #[test]
    fn breakeven_rejects_mismatched_schedules() {
        let mut a = CostLedger::default();
        a.recoveries.push(RecoveryCharge {
            occur: 5,
            detect: 9,
            o_waste: Cost::ZERO,
            o_roll_back: Cost::ZERO,
            o_rcmp: Cost::ZERO,
        });
        let b = CostLedger::default();
        assert_eq!(breakeven(&a, &b), Err(ReportError::MismatchedSchedules));
    }

    #[test]
    fn conservation_by_construction() {
        let p = CostParams::default();
        let mut l = CostLedger::default();
        l.charge(&p, CostEvent::Exec(Opcode::Add), 40);
        l.charge(&p, CostEvent::Flush, 3);
        l.charge(&p, CostEvent::Restore, 2);
        l.reclassify_waste(p.c_alu * 10);
        assert_eq!(l.total(), l.exec + l.o_chk + l.o_roll_back + l.o_rcmp);
        assert_eq!(l.base(), p.c_alu * 30);
    }

    #[test]
    fn merge_is_commutative() {
        let p = CostParams::default();
        let mut a = CostLedger::default();
        a.charge(&p, CostEvent::LogWrite, 2);
        let mut b = CostLedger::default();
        b.charge(&p, CostEvent::Exec(Opcode::Load), 5);
        b.n_chk = 3;
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab.total(), ba.total());
        assert_eq!(ab.n_chk, ba.n_chk);
    }

    #[test]
    fn params_parse_from_dotted_keys() {
        let p = CostParams::from_toml("c_rcmp_inst.time = 5\nc_buf_write = { time = 0, energy = 0 }\n").unwrap();
        assert_eq!(p.c_rcmp_inst, Cost::new(5, 0));
        assert_eq!(p.c_buf_write, Cost::ZERO);
        assert_eq!(p.c_flush, CostParams::default().c_flush);
        assert!(CostParams::from_toml("c_bogus = 1").is_err());
    }
}
