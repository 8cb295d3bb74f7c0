//! Incremental log-based checkpointing, baseline and amnesic.
//!
//! Interval `k` is opened by checkpoint `k`; interval 0 is opened by the
//! initial state. Every line first written in an interval gets an undo record
//! holding its old words, unless (amnesic scheme) every word of the line has a
//! live AddrMap association, in which case the record keeps the associations
//! instead and recovery regenerates the words by recomputation.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{Cost, CostEvent, CostLedger, CostParams, IntervalCharge, IntervalFate};
use crate::isa::{Addr, CoreId, Opcode, Word};
use crate::machine::{ArchSnapshot, CoreSet, Fault, IntervalId, Machine, Touch};
use crate::slice::SliceId;

pub const DEFAULT_ADDR_MAP_CAPACITY: usize = 4096;
/// Sealed logs kept besides the accumulating one.
pub const RETAINED_LOGS: usize = 2;
/// Words of bookkeeping per AddrMap entry (address plus slice reference).
pub const MAP_ENTRY_WORDS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Baseline,
    Amnesic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coordination {
    Global,
    Local,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineConfig {
    pub scheme: Scheme,
    pub coordination: Coordination,
    pub addr_map_capacity: usize,
    /// Keep the old words of every record for the checkpoint dump.
    pub record_lines: bool,
}

impl EngineConfig {
    pub fn new(scheme: Scheme, coordination: Coordination) -> Self {
        EngineConfig {
            scheme,
            coordination,
            addr_map_capacity: DEFAULT_ADDR_MAP_CAPACITY,
            record_lines: false,
        }
    }
}

/// Cost parameters plus the ledger they are charged into.
#[derive(Clone, Debug, Default)]
pub struct Meter {
    pub params: CostParams,
    pub ledger: CostLedger,
}

impl Meter {
    pub fn new(params: CostParams) -> Self {
        Meter {
            params,
            ledger: CostLedger::default(),
        }
    }

    /// Charges the ledger and advances `core`'s clock by the same amount.
    pub fn charge(&mut self, m: &mut Machine, core: CoreId, event: CostEvent, magnitude: u64) -> Cost {
        let c = self.ledger.charge(&self.params, event, magnitude);
        m.charge(core, c);
        c
    }

    /// Books an instruction whose latency the machine already applied to its clock.
    pub fn record_exec(&mut self, op: Opcode) -> Cost {
        self.ledger.charge(&self.params, CostEvent::Exec(op), 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveAssoc {
    pub slice: SliceId,
    pub leaves: Vec<Word>,
    pub created: IntervalId,
}

/// An association consumed by an omission: `mem_addr`'s old value in
/// `interval` is regenerated by running `slice` over `leaves`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddrMapEntry {
    pub mem_addr: Addr,
    pub slice: SliceId,
    pub leaves: Vec<Word>,
    pub interval: IntervalId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Undo {
    Logged(Vec<Word>),
    Omitted(Vec<AddrMapEntry>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UndoRecord {
    pub writer: CoreId,
    pub undo: Undo,
    /// AddrMap state of each word just before the first write; reinstated on rollback.
    pub prior: Vec<Option<LiveAssoc>>,
}

#[derive(Clone, Debug)]
pub struct CheckpointLog {
    pub id: IntervalId,
    /// Progress (instructions executed in total) at the opening boundary.
    pub established_at: u64,
    pub arch: ArchSnapshot,
    /// Per-core execution cost at the opening; lost work is measured from here.
    pub opening_exec: Vec<Cost>,
    pub records: BTreeMap<Addr, UndoRecord>,
    pub groups: Vec<CoreSet>,
    pub sealed: bool,
    pub wr_cost: Cost,
}

impl CheckpointLog {
    pub fn logged_lines(&self) -> impl Iterator<Item = (Addr, &[Word])> {
        self.records.iter().filter_map(|(&l, r)| match &r.undo {
            Undo::Logged(w) => Some((l, w.as_slice())),
            Undo::Omitted(_) => None,
        })
    }

    pub fn omitted_lines(&self) -> impl Iterator<Item = (Addr, &[AddrMapEntry])> {
        self.records.iter().filter_map(|(&l, r)| match &r.undo {
            Undo::Omitted(e) => Some((l, e.as_slice())),
            Undo::Logged(_) => None,
        })
    }

    fn bound_entries(&self) -> usize {
        self.omitted_lines().map(|(_, e)| e.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSize {
    /// Old-value words had nothing been omitted.
    pub gross: u64,
    pub omitted: u64,
    /// Captured leaf words held by the associations this log consumed.
    pub capture: u64,
    pub map_entries: u64,
    /// gross − omitted + capture + per-entry overhead.
    pub net: u64,
}

impl CheckpointSize {
    /// Words actually logged.
    pub fn logged(&self) -> u64 {
        self.gross - self.omitted
    }
}

pub fn checkpoint_size(log: &CheckpointLog) -> CheckpointSize {
    let mut s = CheckpointSize::default();
    for r in log.records.values() {
        match &r.undo {
            Undo::Logged(w) => s.gross += w.len() as u64,
            Undo::Omitted(entries) => {
                s.gross += entries.len() as u64;
                s.omitted += entries.len() as u64;
                s.map_entries += entries.len() as u64;
                s.capture += entries.iter().map(|e| e.leaves.len() as u64).sum::<u64>();
            }
        }
    }
    s.net = s.gross - s.omitted + s.capture + MAP_ENTRY_WORDS * s.map_entries;
    s
}

/// What became of one interval's log, with its final contents summarized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub interval: IntervalId,
    pub established_at: u64,
    pub fate: IntervalFate,
    pub size: CheckpointSize,
    pub groups: Vec<CoreSet>,
    pub o_wr_chk: Cost,
    /// Line contents, kept only when the engine records lines.
    #[serde(skip)]
    pub logged: Vec<(Addr, Vec<Word>)>,
    #[serde(skip)]
    pub omitted: Vec<Addr>,
}

impl fmt::Display for IntervalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fate = match self.fate {
            IntervalFate::Sealed => "sealed",
            IntervalFate::Discarded => "discarded",
            IntervalFate::Open => "open",
        };
        write!(f, "interval {} at {} {fate} groups", self.interval, self.established_at)?;
        for g in &self.groups {
            write!(f, " {g}")?;
        }
        writeln!(f)?;
        for (line, words) in &self.logged {
            write!(f, "  entry {line}")?;
            for w in words {
                write!(f, " {w}")?;
            }
            writeln!(f)?;
        }
        for line in &self.omitted {
            writeln!(f, "  omitted {line}")?;
        }
        f.write_str("end")
    }
}

/// Renders interval records in the stable checkpoint dump format.
pub fn dump_checkpoints(records: &[IntervalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("no retained log for interval {0}")]
    MissingLog(IntervalId),
    #[error("omitted line {line} of interval {interval} lacks an AddrMap entry for some word")]
    MissingAddrMapEntry { interval: IntervalId, line: Addr },
    #[error("slice {0:?} referenced by the AddrMap is not in the slice table")]
    UnknownSlice(SliceId),
    #[error("baseline rollback met omitted line {line} in interval {interval}")]
    OmittedInBaseline { interval: IntervalId, line: Addr },
    #[error("word {addr} restored from interval {interval} is {got}, shadow holds {expected}")]
    RestoreMismatch {
        interval: IntervalId,
        addr: Addr,
        got: Word,
        expected: Word,
    },
    #[error("state after rollback to interval {interval} differs from its shadow snapshot: {what}")]
    ShadowMismatch { interval: IntervalId, what: String },
    #[error("re-execution after local rollback did not reproduce the detection-time state: {0}")]
    CatchUpMismatch(String),
    #[error(transparent)]
    Fault(#[from] Fault),
}

/// Partition of `cores` into connected components of the sharing relation:
/// cores touching a common line are related when the line has a writer.
pub fn communication_groups<'a>(cores: usize, touched: impl IntoIterator<Item = &'a HashMap<Addr, Touch>>) -> Vec<CoreSet> {
    let mut parent: Vec<usize> = (0..cores).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for lines in touched {
        for t in lines.values() {
            if t.writers.is_empty() {
                continue;
            }
            let mut members = t.cores().iter();
            let Some(first) = members.next() else { continue };
            for c in members {
                let (a, b) = (find(&mut parent, first), find(&mut parent, c));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, CoreSet> = BTreeMap::new();
    for c in 0..cores {
        let r = find(&mut parent, c);
        groups.entry(r).or_default().insert(c);
    }
    groups.into_values().collect()
}

/// Incremental checkpoint store: retained logs, the AddrMap, and charging.
#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    logs: VecDeque<CheckpointLog>,
    live: HashMap<Addr, LiveAssoc>,
    bound: usize,
    overflow: u64,
    capacity_fallbacks: u64,
    history: Vec<IntervalRecord>,
    cores: usize,
}

impl Engine {
    /// Opens interval 0 on the machine's current (initial) state at no cost.
    pub fn new(cfg: EngineConfig, m: &Machine, exec: &[Cost]) -> Self {
        let mut e = Engine {
            cfg,
            logs: VecDeque::new(),
            live: HashMap::new(),
            bound: 0,
            overflow: 0,
            capacity_fallbacks: 0,
            history: Vec::new(),
            cores: m.cores(),
        };
        e.logs.push_back(open_log(0, m, exec));
        e
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn current(&self) -> IntervalId {
        self.logs.back().expect("an interval is always open").id
    }

    pub fn log(&self, id: IntervalId) -> Option<&CheckpointLog> {
        self.logs.iter().find(|l| l.id == id)
    }

    pub(crate) fn log_mut(&mut self, id: IntervalId) -> Option<&mut CheckpointLog> {
        self.logs.iter_mut().find(|l| l.id == id)
    }

    /// Retained logs, oldest first; the last one is accumulating.
    pub fn logs(&self) -> impl Iterator<Item = &CheckpointLog> {
        self.logs.iter()
    }

    /// Number of sealed logs currently retained.
    pub fn retained_sealed(&self) -> usize {
        self.logs.iter().filter(|l| l.sealed).count()
    }

    pub fn live(&self, addr: Addr) -> Option<&LiveAssoc> {
        self.live.get(&addr)
    }

    /// Live plus bound AddrMap entries.
    pub fn occupancy(&self) -> usize {
        self.live.len() + self.bound
    }

    /// Associations dropped because the AddrMap was full.
    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    /// Omittable lines that were logged because the AddrMap was full.
    pub fn capacity_fallbacks(&self) -> u64 {
        self.capacity_fallbacks
    }

    pub fn history(&self) -> &[IntervalRecord] {
        &self.history
    }

    pub fn charge_interval(
        &mut self,
        m: &mut Machine,
        meter: &mut Meter,
        interval: IntervalId,
        core: CoreId,
        event: CostEvent,
        magnitude: u64,
    ) {
        let c = meter.charge(m, core, event, magnitude);
        if let Some(log) = self.log_mut(interval) {
            log.wr_cost += c;
        }
    }

    /// Handles a first-write callback: log the old words or omit them.
    pub fn on_first_write(
        &mut self,
        m: &mut Machine,
        meter: &mut Meter,
        core: CoreId,
        line: Addr,
        old: Vec<Word>,
    ) -> Result<(), IntegrityError> {
        let interval = m.epoch(core);
        if self.log(interval).is_none() {
            return Err(IntegrityError::MissingLog(interval));
        }
        let words = old.len();
        let prior: Vec<Option<LiveAssoc>> = match self.cfg.scheme {
            Scheme::Baseline => vec![None; words],
            Scheme::Amnesic => m.line_addrs(line).map(|a| self.live.get(&a).cloned()).collect(),
        };
        let omittable = self.cfg.scheme == Scheme::Amnesic && prior.iter().all(Option::is_some);
        let fits = self.occupancy() + words <= self.cfg.addr_map_capacity;
        if omittable && !fits {
            self.capacity_fallbacks += 1;
        }
        let undo = if omittable && fits {
            self.bound += words;
            Undo::Omitted(
                m.line_addrs(line)
                    .zip(&prior)
                    .map(|(a, p)| {
                        let p = p.as_ref().expect("checked omittable");
                        AddrMapEntry {
                            mem_addr: a,
                            slice: p.slice,
                            leaves: p.leaves.clone(),
                            interval,
                        }
                    })
                    .collect(),
            )
        } else {
            self.charge_interval(m, meter, interval, core, CostEvent::LogWrite, words as u64);
            Undo::Logged(old)
        };
        // Write-back of the dirtied line at the next establishment.
        self.charge_interval(m, meter, interval, core, CostEvent::Flush, 1);
        let log = self.log_mut(interval).expect("checked above");
        let fresh = log
            .records
            .insert(
                line,
                UndoRecord {
                    writer: core,
                    undo,
                    prior,
                },
            )
            .is_none();
        debug_assert!(fresh, "line {line} logged twice in interval {interval}");
        Ok(())
    }

    /// Handles the store callback: the stored word either gains an
    /// association (its slice fired) or loses any stale one.
    pub fn on_store(
        &mut self,
        m: &mut Machine,
        meter: &mut Meter,
        core: CoreId,
        addr: Addr,
        assoc: Option<SliceId>,
    ) -> Result<(), IntegrityError> {
        if self.cfg.scheme != Scheme::Amnesic {
            return Ok(());
        }
        self.live.remove(&addr);
        let Some(id) = assoc else { return Ok(()) };
        if self.occupancy() >= self.cfg.addr_map_capacity {
            self.overflow += 1;
            return Ok(());
        }
        let slice = m.slices().get(id).ok_or(IntegrityError::UnknownSlice(id))?;
        let leaves: Vec<Word> = slice.leaves.iter().map(|l| l.value).collect();
        let interval = m.epoch(core);
        self.charge_interval(m, meter, interval, core, CostEvent::BufWrite, leaves.len() as u64);
        self.live.insert(
            addr,
            LiveAssoc {
                slice: id,
                leaves,
                created: interval,
            },
        );
        Ok(())
    }

    /// Seals the accumulating interval and opens the next one at the
    /// machine's current state.
    pub fn establish(&mut self, m: &mut Machine, meter: &mut Meter, exec: &[Cost]) -> IntervalId {
        let closing = self.current();
        let groups = match self.cfg.coordination {
            Coordination::Global => vec![CoreSet::all(self.cores)],
            Coordination::Local => communication_groups(self.cores, m.touched(closing)),
        };
        let arch_words = m.snapshot_arch().words_per_core();
        for c in 0..self.cores {
            self.charge_interval(m, meter, closing, c, CostEvent::ArchSave, arch_words);
        }
        for g in &groups {
            if self.cfg.coordination == Coordination::Global || g.len() > 1 {
                for c in g.iter() {
                    self.charge_interval(m, meter, closing, c, CostEvent::CoordCheckpoint, 1);
                }
            }
        }
        meter.ledger.n_chk += 1;
        {
            let log = self.logs.back_mut().expect("an interval is always open");
            log.sealed = true;
            log.groups = groups;
        }
        let next = closing + 1;
        self.logs.push_back(open_log(next, m, exec));
        for c in 0..self.cores {
            m.set_epoch(c, next);
        }
        while self.retained_sealed() > RETAINED_LOGS {
            let old = self.logs.pop_front().expect("nonempty");
            self.retire(old, IntervalFate::Sealed);
        }
        let oldest = self.logs.front().expect("nonempty").id;
        m.drop_touched_before(oldest);
        next
    }

    fn retire(&mut self, log: CheckpointLog, fate: IntervalFate) {
        self.bound -= log.bound_entries();
        self.history.push(IntervalRecord {
            interval: log.id,
            established_at: log.established_at,
            fate,
            size: checkpoint_size(&log),
            groups: log.groups.clone(),
            o_wr_chk: log.wr_cost,
            logged: if self.cfg.record_lines {
                log.logged_lines().map(|(l, w)| (l, w.to_vec())).collect()
            } else {
                Vec::new()
            },
            omitted: if self.cfg.record_lines {
                log.omitted_lines().map(|(l, _)| l).collect()
            } else {
                Vec::new()
            },
        });
    }

    /// Removes the undo records of intervals `from` onwards (only those
    /// written by `group`, when given), newest interval first, and reinstates
    /// the AddrMap state each record saw before its first write.
    pub(crate) fn take_records(
        &mut self,
        m: &Machine,
        from: IntervalId,
        group: Option<CoreSet>,
    ) -> Result<Vec<(IntervalId, Addr, UndoRecord)>, IntegrityError> {
        if self.log(from).is_none() {
            return Err(IntegrityError::MissingLog(from));
        }
        let mut out = Vec::new();
        for log in self.logs.iter_mut().rev().take_while(|l| l.id >= from) {
            let lines: Vec<Addr> = log
                .records
                .iter()
                .filter(|(_, r)| group.is_none_or(|g| g.contains(r.writer)))
                .map(|(&l, _)| l)
                .collect();
            for line in lines {
                let rec = log.records.remove(&line).expect("listed above");
                out.push((log.id, line, rec));
            }
        }
        for (_, line, rec) in &out {
            if let Undo::Omitted(e) = &rec.undo {
                self.bound -= e.len();
            }
            for (addr, prior) in m.line_addrs(*line).zip(&rec.prior) {
                match prior {
                    Some(p) => {
                        self.live.insert(addr, p.clone());
                    }
                    None => {
                        self.live.remove(&addr);
                    }
                }
            }
        }
        Ok(out)
    }

    /// After a global rollback to `target`: discards newer logs and reopens
    /// `target` as the accumulating interval.
    pub(crate) fn reopen(&mut self, target: IntervalId, exec: &[Cost]) {
        while self.current() > target {
            let log = self.logs.pop_back().expect("target is retained");
            self.retire(log, IntervalFate::Discarded);
        }
        let log = self.logs.back_mut().expect("target is retained");
        debug_assert!(log.records.is_empty());
        log.sealed = false;
        log.groups.clear();
        log.opening_exec = exec.to_vec();
    }

    /// Restarts lost-work measurement for `cores` at the opening of `interval`.
    pub(crate) fn reset_opening(&mut self, interval: IntervalId, cores: CoreSet, exec: &[Cost]) {
        if let Some(log) = self.log_mut(interval) {
            for c in cores.iter() {
                log.opening_exec[c] = exec[c];
            }
        }
    }

    /// Moves every remaining log into the history and the ledger.
    pub fn finish(&mut self, m: &Machine, meter: &mut Meter) {
        if let Some(log) = self.logs.back_mut() {
            log.groups = match self.cfg.coordination {
                Coordination::Local => communication_groups(self.cores, m.touched(log.id)),
                Coordination::Global => vec![CoreSet::all(self.cores)],
            };
        }
        while let Some(log) = self.logs.pop_front() {
            let fate = if log.sealed {
                IntervalFate::Sealed
            } else {
                IntervalFate::Open
            };
            self.retire(log, fate);
        }
        meter.ledger.intervals = self
            .history
            .iter()
            .map(|r| IntervalCharge {
                interval: r.interval,
                fate: r.fate,
                o_wr_chk: r.o_wr_chk,
            })
            .collect();
    }
}

fn open_log(id: IntervalId, m: &Machine, exec: &[Cost]) -> CheckpointLog {
    let arch = m.snapshot_arch();
    CheckpointLog {
        id,
        established_at: arch.progress(),
        arch,
        opening_exec: exec.to_vec(),
        records: BTreeMap::new(),
        groups: Vec::new(),
        sealed: false,
        wr_cost: Cost::ZERO,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::harness::{prepare_program, ExperimentConfig};
    use crate::slice::SliceTable;
    use crate::text::parse_program;

    /// Two sliced stores (to 16 and 17) and a copy store (to 18), then a
    /// second pass rewriting the same three words.
    const PROG: &str = "
.registers 8
.ro 0 16
.data 16 32
.init 16 1
.init 17 2
.init 18 3
.init 20 40
.core 0
const r1, 5
const r2, 7
add r3, r1, r2
store r3, [r0+16]
mul r5, r3, 3
store r5, [r0+17]
load r4, [r0+20]
store r4, [r0+18]
const r6, 9
store r6, [r0+16]
store r6, [r0+17]
store r4, [r0+18]
halt
";

    fn machine() -> (Machine, Arc<SliceTable>) {
        let prep = prepare_program(parse_program(PROG).unwrap(), &ExperimentConfig::default()).unwrap();
        let m = Machine::new(Arc::clone(&prep.program), Arc::clone(&prep.slices), CostParams::default()).unwrap();
        (m, prep.slices)
    }

    fn engine(m: &Machine, scheme: Scheme, capacity: usize) -> (Engine, Meter, Vec<Cost>) {
        let mut cfg = EngineConfig::new(scheme, Coordination::Global);
        cfg.addr_map_capacity = capacity;
        cfg.record_lines = true;
        let exec = vec![Cost::ZERO; m.cores()];
        (Engine::new(cfg, m, &exec), Meter::new(CostParams::default()), exec)
    }

    fn ids(t: &SliceTable) -> Vec<SliceId> {
        t.slices().map(|s| s.id).collect()
    }

    #[test]
    fn line_without_association_is_logged() {
        let (mut m, _) = machine();
        let (mut e, mut meter, _) = engine(&m, Scheme::Amnesic, 64);
        e.on_first_write(&mut m, &mut meter, 0, 16, vec![1]).unwrap();
        let log = e.log(0).unwrap();
        assert_eq!(log.logged_lines().collect::<Vec<_>>(), vec![(16, &[1][..])]);
        let p = CostParams::default();
        assert_eq!(log.wr_cost, p.c_log_write + p.c_flush);
    }

    #[test]
    fn line_with_association_is_omitted() {
        let (mut m, t) = machine();
        let id = ids(&t)[0];
        let (mut e, mut meter, _) = engine(&m, Scheme::Amnesic, 64);
        e.on_store(&mut m, &mut meter, 0, 16, Some(id)).unwrap();
        e.on_first_write(&mut m, &mut meter, 0, 16, vec![12]).unwrap();
        let log = e.log(0).unwrap();
        assert_eq!(log.logged_lines().count(), 0);
        let omitted: Vec<_> = log.omitted_lines().collect();
        assert_eq!(omitted.len(), 1);
        assert_eq!(omitted[0].1[0].slice, id);
        // The same association under the baseline scheme is ignored.
        let (mut m, _) = machine();
        let (mut b, mut meter, _) = engine(&m, Scheme::Baseline, 64);
        b.on_store(&mut m, &mut meter, 0, 16, Some(id)).unwrap();
        assert!(b.live(16).is_none());
        b.on_first_write(&mut m, &mut meter, 0, 16, vec![12]).unwrap();
        assert_eq!(b.log(0).unwrap().logged_lines().count(), 1);
    }

    #[test]
    fn later_association_replaces_earlier() {
        let (mut m, t) = machine();
        let (a, b) = (ids(&t)[0], ids(&t)[1]);
        let (mut e, mut meter, _) = engine(&m, Scheme::Amnesic, 64);
        e.on_store(&mut m, &mut meter, 0, 16, Some(a)).unwrap();
        e.on_store(&mut m, &mut meter, 0, 16, Some(b)).unwrap();
        assert_eq!(e.live(16).unwrap().slice, b);
        assert_eq!(e.occupancy(), 1);
        // A store without a firing slice makes the word unrecomputable again.
        e.on_store(&mut m, &mut meter, 0, 16, None).unwrap();
        assert!(e.live(16).is_none());
    }

    #[test]
    fn full_addr_map_falls_back_to_logging() {
        let (mut m, t) = machine();
        let id = ids(&t)[0];
        let (mut e, mut meter, _) = engine(&m, Scheme::Amnesic, 1);
        e.on_store(&mut m, &mut meter, 0, 16, Some(id)).unwrap();
        e.on_store(&mut m, &mut meter, 0, 17, Some(id)).unwrap();
        assert_eq!(e.overflow(), 1);
        e.on_first_write(&mut m, &mut meter, 0, 16, vec![12]).unwrap();
        assert_eq!(e.capacity_fallbacks(), 1);
        assert_eq!(e.log(0).unwrap().logged_lines().count(), 1);
    }

    #[test]
    fn only_two_sealed_logs_are_retained() {
        let (mut m, _) = machine();
        let (mut e, mut meter, exec) = engine(&m, Scheme::Baseline, 64);
        for expect in 1..=3 {
            assert_eq!(e.establish(&mut m, &mut meter, &exec), expect);
        }
        let ids: Vec<IntervalId> = e.logs().map(|l| l.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(e.retained_sealed(), 2);
        assert_eq!(meter.ledger.n_chk, 3);
        assert_eq!(e.history().len(), 1);
        assert_eq!(e.history()[0].fate, IntervalFate::Sealed);
    }

    #[test]
    fn empty_interval_costs_only_the_establishment() {
        let (mut m, _) = machine();
        let (mut e, mut meter, exec) = engine(&m, Scheme::Amnesic, 64);
        e.establish(&mut m, &mut meter, &exec);
        let log = e.log(0).unwrap();
        assert_eq!(checkpoint_size(log), CheckpointSize::default());
        let p = CostParams::default();
        let words = m.snapshot_arch().words_per_core();
        assert_eq!(log.wr_cost, p.cost_of(CostEvent::ArchSave) * words + p.cost_of(CostEvent::CoordCheckpoint));
    }

    #[test]
    fn second_pass_is_partly_omitted() {
        use crate::sim::{simulate, SimConfig};
        let prep = prepare_program(parse_program(PROG).unwrap(), &ExperimentConfig::default()).unwrap();
        assert_eq!(prep.slices.len(), 4);
        let run = |scheme| {
            let mut cfg = SimConfig::plain();
            let mut ec = EngineConfig::new(scheme, Coordination::Global);
            ec.record_lines = true;
            cfg.engine = Some(ec);
            cfg.boundaries = vec![8];
            simulate(Arc::clone(&prep.program), Arc::clone(&prep.slices), CostParams::default(), &cfg).unwrap()
        };
        let base = run(Scheme::Baseline);
        let amn = run(Scheme::Amnesic);
        // Initial words carry no associations, so interval 0 is fully logged.
        assert_eq!(amn.intervals[0].size, base.intervals[0].size);
        assert_eq!(base.intervals[1].size.gross, 3);
        let s = amn.intervals[1].size;
        assert_eq!((s.gross, s.omitted), (3, 2));
        assert_eq!(amn.intervals[1].omitted, vec![16, 17]);
        assert_eq!(amn.intervals[1].logged, vec![(18, vec![40])]);
        assert_eq!(base.final_hash, amn.final_hash);
    }

    #[test]
    fn groups_follow_written_lines() {
        let mut lines = HashMap::new();
        let set = |cs: &[usize]| {
            let mut s = CoreSet::default();
            cs.iter().for_each(|&c| s.insert(c));
            s
        };
        lines.insert(1, Touch { readers: set(&[1]), writers: set(&[0]) });
        lines.insert(2, Touch { readers: set(&[]), writers: set(&[2]) });
        // Read-only sharing does not couple cores.
        lines.insert(3, Touch { readers: set(&[2, 3]), writers: set(&[]) });
        let g = communication_groups(4, [&lines]);
        assert_eq!(g, vec![set(&[0, 1]), set(&[2]), set(&[3])]);
        lines.insert(4, Touch { readers: set(&[3]), writers: set(&[1]) });
        assert_eq!(communication_groups(4, [&lines]), vec![set(&[0, 1, 3]), set(&[2])]);
    }

    fn log_with(records: Vec<(Addr, Undo)>, m: &Machine) -> CheckpointLog {
        let mut log = open_log(0, m, &[Cost::ZERO]);
        for (line, undo) in records {
            log.records.insert(line, UndoRecord { writer: 0, undo, prior: Vec::new() });
        }
        log
    }

    fn entry(addr: Addr, leaves: usize) -> AddrMapEntry {
        AddrMapEntry {
            mem_addr: addr,
            slice: SliceId(0),
            leaves: vec![0; leaves],
            interval: 0,
        }
    }

    #[test]
    fn size_accounting() {
        let (m, _) = machine();
        let all_logged = log_with((0..4).map(|a| (a, Undo::Logged(vec![a as Word]))).collect(), &m);
        let s = checkpoint_size(&all_logged);
        assert_eq!((s.gross, s.omitted, s.logged(), s.net), (4, 0, 4, 4));

        let mixed = log_with(
            vec![
                (0, Undo::Logged(vec![1])),
                (1, Undo::Omitted(vec![entry(1, 0)])),
                (2, Undo::Omitted(vec![entry(2, 0)])),
                (3, Undo::Omitted(vec![entry(3, 0)])),
            ],
            &m,
        );
        let s = checkpoint_size(&mixed);
        assert_eq!(s.omitted * 100 / s.gross, 75);

        // Capture plus bookkeeping can outweigh what omission saves.
        let heavy = log_with(vec![(0, Undo::Logged(vec![1])), (1, Undo::Omitted(vec![entry(1, 2)]))], &m);
        let s = checkpoint_size(&heavy);
        assert_eq!((s.gross, s.net), (2, 1 + 2 + MAP_ENTRY_WORDS));
    }
}
