//! Fail-stop error schedules, safe-checkpoint selection and rollback.
//!
//! Times here are progress values: total instructions executed across cores.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{communication_groups, Coordination, Engine, IntegrityError, Meter, Scheme, Undo};
use crate::cost::{Cost, CostEvent, RecoveryCharge};
use crate::isa::{Addr, CoreId, Word};
use crate::machine::{ArchSnapshot, CoreSet, IntervalId, Machine, Touch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub occur: u64,
    pub detect: u64,
    /// Decides the rolled-back group under local coordination.
    pub victim: CoreId,
}

impl ErrorEvent {
    pub fn new(occur: u64, latency: u64, victim: CoreId) -> Self {
        ErrorEvent {
            occur,
            detect: occur + latency,
            victim,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("error {index}: detection latency {latency} exceeds the checkpoint period {period}")]
    LatencyTooLong { index: usize, latency: u64, period: u64 },
    #[error("error {index}: detected at {detect}, after the run ends at {total}")]
    PastEnd { index: usize, detect: u64, total: u64 },
    #[error("error {index} occurs at {occur}, before error {} is detected at {prev_detect}", index - 1)]
    Nested { index: usize, occur: u64, prev_detect: u64 },
    #[error("error {index}: victim core {victim} does not exist")]
    NoSuchCore { index: usize, victim: CoreId },
    #[error("{count} errors with latency {latency} do not fit in {total} instructions")]
    TooDense { count: usize, latency: u64, total: u64 },
}

/// Checks the standing assumptions: latency within one checkpoint period,
/// detection before the run ends, no error during another's recovery.
pub fn validate_schedule(errors: &[ErrorEvent], total: u64, period: u64, cores: usize) -> Result<(), ScheduleError> {
    for (i, e) in errors.iter().enumerate() {
        let latency = e.detect.saturating_sub(e.occur);
        if e.detect < e.occur || latency > period {
            return Err(ScheduleError::LatencyTooLong { index: i, latency, period });
        }
        if e.detect >= total {
            return Err(ScheduleError::PastEnd {
                index: i,
                detect: e.detect,
                total,
            });
        }
        if e.victim >= cores {
            return Err(ScheduleError::NoSuchCore { index: i, victim: e.victim });
        }
        if i > 0 && e.occur <= errors[i - 1].detect {
            return Err(ScheduleError::Nested {
                index: i,
                occur: e.occur,
                prev_detect: errors[i - 1].detect,
            });
        }
    }
    Ok(())
}

/// `count` errors spread uniformly over the run: the span is cut into equal
/// slots and each error occurs at a uniform point of its slot, early enough
/// to be detected inside it. Taking a prefix of a longer schedule keeps the
/// earlier errors unchanged.
pub fn uniform_schedule(
    count: usize,
    total: u64,
    latency: u64,
    cores: usize,
    seed: u64,
) -> Result<Vec<ErrorEvent>, ScheduleError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let span = total.saturating_sub(1);
    let width = span / count as u64;
    if width < latency + 1 {
        return Err(ScheduleError::TooDense { count, latency, total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count as u64)
        .map(|i| {
            let lo = i * width;
            let hi = lo + width - latency - 1;
            let occur = rng.gen_range(lo..=hi);
            let victim = rng.gen_range(0..cores.max(1));
            ErrorEvent::new(occur, latency, victim)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafePoint {
    Initial,
    Checkpoint(IntervalId),
}

/// Most recent checkpoint established no later than the error occurred;
/// checkpoints established between occurrence and detection are tainted.
/// `checkpoints` holds `(id, established_at)` of retained checkpoints.
pub fn select_safe_checkpoint(occur: u64, checkpoints: &[(IntervalId, u64)]) -> SafePoint {
    checkpoints
        .iter()
        .filter(|&&(_, at)| at <= occur)
        .max_by_key(|&&(id, at)| (at, id))
        .map_or(SafePoint::Initial, |&(id, _)| SafePoint::Checkpoint(id))
}

/// Interval to roll back to: the initial state is interval 0.
pub fn target_interval(engine: &Engine, occur: u64) -> Result<IntervalId, IntegrityError> {
    let points: Vec<(IntervalId, u64)> = engine
        .logs()
        .filter(|l| l.id > 0)
        .map(|l| (l.id, l.established_at))
        .collect();
    let id = match select_safe_checkpoint(occur, &points) {
        SafePoint::Initial => 0,
        SafePoint::Checkpoint(id) => id,
    };
    engine.log(id).map(|_| id).ok_or(IntegrityError::MissingLog(id))
}

/// Cores that roll back together: everyone under global coordination, the
/// victim's communication group across the undone intervals otherwise.
///
/// Touches are merged over all undone intervals before grouping, so a line
/// written by one core in interval k and by another in k+1 couples them:
/// undoing the first write alone would clobber the second.
pub fn recovery_group(engine: &Engine, m: &Machine, target: IntervalId, victim: CoreId) -> CoreSet {
    match engine.config().coordination {
        Coordination::Global => CoreSet::all(m.cores()),
        Coordination::Local => {
            let mut merged: HashMap<Addr, Touch> = HashMap::new();
            for lines in (target..=engine.current()).filter_map(|j| m.touched(j)) {
                for (&line, t) in lines {
                    let e = merged.entry(line).or_default();
                    e.readers = e.readers.union(t.readers);
                    e.writers = e.writers.union(t.writers);
                }
            }
            communication_groups(m.cores(), [&merged])
                .into_iter()
                .find(|g| g.contains(victim))
                .expect("the partition covers every core")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Shadow {
    memory: Vec<Word>,
    arch: ArchSnapshot,
}

/// Full copies of memory and architectural state at every boundary (debug only).
#[derive(Clone, Debug, Default)]
pub struct ShadowOracle {
    snaps: BTreeMap<IntervalId, Shadow>,
    checks: u64,
}

impl ShadowOracle {
    pub fn record(&mut self, interval: IntervalId, m: &Machine) {
        self.snaps.insert(
            interval,
            Shadow {
                memory: m.data_memory().to_vec(),
                arch: m.snapshot_arch(),
            },
        );
    }

    pub fn drop_before(&mut self, keep_from: IntervalId) {
        self.snaps = self.snaps.split_off(&keep_from);
    }

    pub fn drop_after(&mut self, keep_to: IntervalId) {
        self.snaps.split_off(&(keep_to + 1));
    }

    /// Number of comparisons that passed.
    pub fn checks(&self) -> u64 {
        self.checks
    }

    fn word(&self, interval: IntervalId, m: &Machine, addr: Addr) -> Option<Word> {
        self.snaps
            .get(&interval)
            .map(|s| s.memory[(addr - m.program().data.lo) as usize])
    }

    fn check_word(&mut self, interval: IntervalId, m: &Machine, addr: Addr, got: Word) -> Result<(), IntegrityError> {
        match self.word(interval, m, addr) {
            Some(expected) if expected != got => Err(IntegrityError::RestoreMismatch {
                interval,
                addr,
                got,
                expected,
            }),
            Some(_) => {
                self.checks += 1;
                Ok(())
            }
            None => Ok(()),
        }
    }

    /// Whole-machine comparison against the boundary snapshot.
    pub fn verify_global(&mut self, interval: IntervalId, m: &Machine) -> Result<(), IntegrityError> {
        let s = self.snaps.get(&interval).ok_or(IntegrityError::ShadowMismatch {
            interval,
            what: "no shadow snapshot".into(),
        })?;
        if s.memory != m.data_memory() {
            let addr = s
                .memory
                .iter()
                .zip(m.data_memory())
                .position(|(a, b)| a != b)
                .map_or(0, |i| i as u64 + m.program().data.lo);
            return Err(IntegrityError::ShadowMismatch {
                interval,
                what: format!("memory differs first at address {addr}"),
            });
        }
        if s.arch != m.snapshot_arch() {
            return Err(IntegrityError::ShadowMismatch {
                interval,
                what: "architectural state differs".into(),
            });
        }
        self.checks += 1;
        Ok(())
    }

    /// Comparison restricted to `group`'s cores and the lines it restored.
    pub fn verify_group(
        &mut self,
        interval: IntervalId,
        m: &Machine,
        group: CoreSet,
        lines: &[Addr],
    ) -> Result<(), IntegrityError> {
        let s = self.snaps.get(&interval).ok_or(IntegrityError::ShadowMismatch {
            interval,
            what: "no shadow snapshot".into(),
        })?;
        for c in group.iter() {
            if s.arch.cores[c] != *m.core(c) {
                return Err(IntegrityError::ShadowMismatch {
                    interval,
                    what: format!("core {c} architectural state differs"),
                });
            }
        }
        let lo = m.program().data.lo;
        for &line in lines {
            for a in m.line_addrs(line) {
                let i = (a - lo) as usize;
                if s.memory[i] != m.data_memory()[i] {
                    return Err(IntegrityError::ShadowMismatch {
                        interval,
                        what: format!("restored address {a} differs"),
                    });
                }
            }
        }
        self.checks += 1;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackOutcome {
    pub target: IntervalId,
    pub group: CoreSet,
    pub logged_words: u64,
    pub recomputed_words: u64,
    /// Distinct lines restored, oldest interval's view.
    #[serde(skip)]
    pub lines: Vec<Addr>,
    pub charge: RecoveryCharge,
}

/// Rolls `group` back to the opening of interval `target`.
///
/// Undo records are applied newest interval first, recomputing omitted words
/// through their slices; then architectural state is restored. Under global
/// coordination newer logs are discarded and `target` accumulates again;
/// under local coordination only records written by `group` are undone and
/// the caller re-executes the group up to the detection point.
#[allow(clippy::too_many_arguments)]
pub fn rollback(
    engine: &mut Engine,
    m: &mut Machine,
    meter: &mut Meter,
    exec: &[Cost],
    err: &ErrorEvent,
    target: IntervalId,
    group: CoreSet,
    mut shadow: Option<&mut ShadowOracle>,
) -> Result<RollbackOutcome, IntegrityError> {
    let before = meter.ledger.clone();
    let local = engine.config().coordination == Coordination::Local;
    let scheme = engine.config().scheme;
    let (arch, opening) = {
        let log = engine.log(target).ok_or(IntegrityError::MissingLog(target))?;
        (log.arch.clone(), log.opening_exec.clone())
    };

    let lost: Cost = group.iter().map(|c| exec[c] - opening[c]).sum();
    meter.ledger.reclassify_waste(lost);

    let records = engine.take_records(m, target, local.then_some(group))?;
    let mut logged_words = 0;
    let mut recomputed_words = 0;
    let mut lines = Vec::with_capacity(records.len());
    for (interval, line, rec) in &records {
        let (interval, line) = (*interval, *line);
        match &rec.undo {
            Undo::Logged(words) => {
                for (addr, &w) in m.line_addrs(line).zip(words) {
                    if let Some(s) = shadow.as_deref_mut() {
                        s.check_word(interval, m, addr, w)?;
                    }
                    m.poke(addr, w);
                }
                logged_words += words.len() as u64;
                meter.charge(m, rec.writer, CostEvent::Restore, words.len() as u64);
            }
            Undo::Omitted(entries) => {
                if scheme == Scheme::Baseline {
                    return Err(IntegrityError::OmittedInBaseline { interval, line });
                }
                let addrs: Vec<Addr> = m.line_addrs(line).collect();
                if entries.len() != addrs.len() || entries.iter().zip(&addrs).any(|(e, &a)| e.mem_addr != a) {
                    return Err(IntegrityError::MissingAddrMapEntry { interval, line });
                }
                for e in entries {
                    let slice = m.slices().get(e.slice).ok_or(IntegrityError::UnknownSlice(e.slice))?;
                    let len = slice.len() as u64;
                    let v = slice.recompute_with(&e.leaves);
                    if let Some(s) = shadow.as_deref_mut() {
                        s.check_word(interval, m, e.mem_addr, v)?;
                    }
                    m.poke(e.mem_addr, v);
                    meter.charge(m, rec.writer, CostEvent::RecomputeInst, len);
                    meter.charge(m, rec.writer, CostEvent::RecomputeWrite, 1);
                }
                recomputed_words += entries.len() as u64;
            }
        }
        if local {
            m.clear_log_bit(line);
        }
        lines.push(line);
    }
    lines.sort_unstable();
    lines.dedup();

    let words = arch.words_per_core();
    let coordinated = !local || group.len() > 1;
    for c in group.iter() {
        meter.charge(m, c, CostEvent::Restore, words);
        if coordinated {
            meter.charge(m, c, CostEvent::CoordRecovery, 1);
        }
    }

    if local {
        m.restore_cores(&arch, group);
        for c in group.iter() {
            m.set_epoch(c, target);
        }
        m.forget_touches(group, target);
        engine.reset_opening(target, group, exec);
        if let Some(s) = shadow {
            s.verify_group(target, m, group, &lines)?;
        }
    } else {
        m.restore_arch(&arch);
        for c in 0..m.cores() {
            m.set_epoch(c, target);
        }
        m.clear_log_bits();
        m.drop_touched_from(target);
        engine.reopen(target, exec);
        if let Some(s) = shadow {
            s.verify_global(target, m)?;
            s.drop_after(target);
        }
    }

    let after = &meter.ledger;
    let charge = RecoveryCharge {
        occur: err.occur,
        detect: err.detect,
        o_waste: after.o_waste - before.o_waste,
        o_roll_back: after.o_roll_back - before.o_roll_back,
        o_rcmp: after.o_rcmp - before.o_rcmp,
    };
    meter.ledger.recoveries.push(charge);
    Ok(RollbackOutcome {
        target,
        group,
        logged_words,
        recomputed_words,
        lines,
        charge,
    })
}

/// Rollback for a baseline engine; meeting an omitted line is an integrity error.
#[allow(clippy::too_many_arguments)]
pub fn rollback_baseline(
    engine: &mut Engine,
    m: &mut Machine,
    meter: &mut Meter,
    exec: &[Cost],
    err: &ErrorEvent,
    target: IntervalId,
    group: CoreSet,
    shadow: Option<&mut ShadowOracle>,
) -> Result<RollbackOutcome, IntegrityError> {
    assert_eq!(engine.config().scheme, Scheme::Baseline, "baseline rollback on an amnesic engine");
    rollback(engine, m, meter, exec, err, target, group, shadow)
}

/// Rollback for an amnesic engine, regenerating omitted words by recomputation.
#[allow(clippy::too_many_arguments)]
pub fn rollback_amnesic(
    engine: &mut Engine,
    m: &mut Machine,
    meter: &mut Meter,
    exec: &[Cost],
    err: &ErrorEvent,
    target: IntervalId,
    group: CoreSet,
    shadow: Option<&mut ShadowOracle>,
) -> Result<RollbackOutcome, IntegrityError> {
    assert_eq!(engine.config().scheme, Scheme::Amnesic, "amnesic rollback on a baseline engine");
    rollback(engine, m, meter, exec, err, target, group, shadow)
}
