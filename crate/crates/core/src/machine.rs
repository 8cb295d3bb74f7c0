//! Deterministic multicore execution engine.
//!
//! Cores step in fixed round-robin order over a flat word-addressed memory.
//! Each core carries an interval epoch; the first store to a line in the
//! storing core's current epoch raises a [`Callback::FirstWrite`] carrying
//! the line's old contents. Per-line reader/writer sets are kept per epoch.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{Cost, CostParams};
use crate::isa::{Addr, CoreId, Instruction, Operand, Word};
use crate::program::{match_loops, Program};
use crate::slice::{SiteKey, SliceId, SliceTable};
use crate::trace::{OperandRead, TraceEvent};

pub type IntervalId = u32;

pub const MAX_CORES: usize = 64;

/// Set of core ids, at most [`MAX_CORES`].
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoreSet(pub u64);

impl CoreSet {
    pub fn all(n: usize) -> Self {
        if n >= 64 {
            CoreSet(u64::MAX)
        } else {
            CoreSet((1u64 << n) - 1)
        }
    }

    pub fn single(c: CoreId) -> Self {
        CoreSet(1 << c)
    }

    pub fn insert(&mut self, c: CoreId) {
        self.0 |= 1 << c;
    }

    pub fn remove(&mut self, c: CoreId) {
        self.0 &= !(1 << c);
    }

    pub fn contains(self, c: CoreId) -> bool {
        self.0 & (1 << c) != 0
    }

    pub fn union(self, o: CoreSet) -> CoreSet {
        CoreSet(self.0 | o.0)
    }

    pub fn minus(self, o: CoreSet) -> CoreSet {
        CoreSet(self.0 & !o.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = CoreId> {
        (0..64).filter(move |&c| self.0 & (1 << c) != 0)
    }
}

impl fmt::Debug for CoreSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for CoreSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Touch {
    pub readers: CoreSet,
    pub writers: CoreSet,
}

impl Touch {
    pub fn cores(&self) -> CoreSet {
        self.readers.union(self.writers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct LoopFrame {
    body_start: usize,
    remaining: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CoreState {
    pub regs: Vec<Word>,
    pub pc: usize,
    loops: Vec<LoopFrame>,
    pub halted: bool,
    /// Instructions executed so far (trace events produced).
    pub executed: u64,
    /// Dynamic execution count per store site.
    occurrences: Vec<u64>,
}

/// Register files, PCs, loop state and the scheduler cursor; never memory.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ArchSnapshot {
    pub cores: Vec<CoreState>,
    pub cursor: usize,
}

impl ArchSnapshot {
    /// Total instructions executed across cores at the snapshot point.
    pub fn progress(&self) -> u64 {
        self.cores.iter().map(|c| c.executed).sum()
    }

    /// Words a restore of one core writes back (registers plus PC).
    pub fn words_per_core(&self) -> u64 {
        self.cores.first().map_or(0, |c| c.regs.len() as u64 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Callback {
    /// First store to `line` in the storing core's current interval.
    FirstWrite { core: CoreId, line: Addr, old: Vec<Word> },
    /// Every store, after the first-write callback (if any).
    Store { core: CoreId, addr: Addr, assoc: Option<SliceId> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub event: TraceEvent,
    pub callbacks: Vec<Callback>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Fault {
    #[error("core {core}, instruction {index}: store to read-only address {addr}")]
    ReadOnlyStore { core: CoreId, index: usize, addr: Addr },
    #[error("core {core}, instruction {index}: address {addr} outside every region")]
    OutOfRegion { core: CoreId, index: usize, addr: Word },
    #[error("program has {0} cores; at most {MAX_CORES} are supported")]
    TooManyCores(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunLimit {
    /// Stop once this many instructions have executed in total.
    Steps(u64),
    /// Stop once any core's clock reaches this many time units.
    Time(u64),
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct Machine {
    program: Arc<Program>,
    slices: Arc<SliceTable>,
    loop_partner: Vec<Vec<usize>>,
    cores: Vec<CoreState>,
    cursor: usize,
    ro: Vec<Word>,
    data: Vec<Word>,
    line_words: u64,
    epochs: Vec<IntervalId>,
    log_bits: HashMap<Addr, IntervalId>,
    touched: BTreeMap<IntervalId, HashMap<Addr, Touch>>,
    tracking: bool,
    clocks: Vec<Cost>,
    seq: u64,
    params: CostParams,
}

impl Machine {
    pub fn new(program: Arc<Program>, slices: Arc<SliceTable>, params: CostParams) -> Result<Self, Fault> {
        let n = program.cores();
        if n > MAX_CORES {
            return Err(Fault::TooManyCores(n));
        }
        let mut ro = vec![0; program.read_only.len() as usize];
        let mut data = vec![0; program.data.len() as usize];
        for &(a, v) in &program.init {
            if program.read_only.contains(a) {
                ro[(a - program.read_only.lo) as usize] = v;
            } else if program.data.contains(a) {
                data[(a - program.data.lo) as usize] = v;
            }
        }
        let cores = program
            .streams
            .iter()
            .map(|s| CoreState {
                regs: vec![0; program.registers],
                pc: 0,
                loops: Vec::new(),
                halted: false,
                executed: 0,
                occurrences: vec![0; s.len()],
            })
            .collect();
        Ok(Machine {
            loop_partner: program.streams.iter().map(|s| match_loops(s)).collect(),
            program,
            slices,
            cores,
            cursor: 0,
            ro,
            data,
            line_words: 1,
            epochs: vec![0; n],
            log_bits: HashMap::new(),
            touched: BTreeMap::new(),
            tracking: true,
            clocks: vec![Cost::ZERO; n],
            seq: 0,
            params,
        })
    }

    /// Coarsens the logging granularity; must be set before execution starts.
    pub fn with_line_words(mut self, words: u64) -> Self {
        assert!(words >= 1, "a line holds at least one word");
        self.line_words = words;
        self
    }

    /// Disables first-write and sharing bookkeeping (no checkpoint engine attached).
    pub fn without_tracking(mut self) -> Self {
        self.tracking = false;
        self
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn slices(&self) -> &SliceTable {
        &self.slices
    }

    pub fn cores(&self) -> usize {
        self.cores.len()
    }

    pub fn core(&self, c: CoreId) -> &CoreState {
        &self.cores[c]
    }

    pub fn line_words(&self) -> u64 {
        self.line_words
    }

    pub fn all_halted(&self) -> bool {
        self.cores.iter().all(|c| c.halted)
    }

    pub fn progress(&self) -> u64 {
        self.cores.iter().map(|c| c.executed).sum()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn set_cursor(&mut self, c: usize) {
        self.cursor = c;
    }

    pub fn clock(&self, c: CoreId) -> Cost {
        self.clocks[c]
    }

    /// Aggregate core time and energy.
    pub fn total_clock(&self) -> Cost {
        self.clocks.iter().copied().sum()
    }

    /// Advances a core's clock for work done on its behalf outside `step`.
    pub fn charge(&mut self, c: CoreId, cost: Cost) {
        self.clocks[c] += cost;
    }

    pub fn epoch(&self, c: CoreId) -> IntervalId {
        self.epochs[c]
    }

    pub fn set_epoch(&mut self, c: CoreId, id: IntervalId) {
        self.epochs[c] = id;
    }

    pub fn line_of(&self, addr: Addr) -> Addr {
        let lo = self.program.data.lo;
        lo + (addr - lo) / self.line_words * self.line_words
    }

    /// Addresses covered by the line starting at `line`.
    pub fn line_addrs(&self, line: Addr) -> std::ops::Range<Addr> {
        line..(line + self.line_words).min(self.program.data.hi)
    }

    pub fn read(&self, addr: Addr) -> Option<Word> {
        let p = &self.program;
        if p.data.contains(addr) {
            Some(self.data[(addr - p.data.lo) as usize])
        } else if p.read_only.contains(addr) {
            Some(self.ro[(addr - p.read_only.lo) as usize])
        } else {
            None
        }
    }

    /// Writes a data word without any bookkeeping (restoration path).
    pub fn poke(&mut self, addr: Addr, value: Word) {
        let lo = self.program.data.lo;
        assert!(self.program.data.contains(addr), "poke outside data region: {addr}");
        self.data[(addr - lo) as usize] = value;
    }

    pub fn data_memory(&self) -> &[Word] {
        &self.data
    }

    pub fn snapshot_arch(&self) -> ArchSnapshot {
        ArchSnapshot {
            cores: self.cores.clone(),
            cursor: self.cursor,
        }
    }

    pub fn restore_arch(&mut self, snap: &ArchSnapshot) {
        self.cores.clone_from(&snap.cores);
        self.cursor = snap.cursor;
    }

    /// Restores only the cores in `group`; the cursor is left alone.
    pub fn restore_cores(&mut self, snap: &ArchSnapshot, group: CoreSet) {
        for c in group.iter() {
            self.cores[c].clone_from(&snap.cores[c]);
        }
    }

    pub fn touched(&self, interval: IntervalId) -> Option<&HashMap<Addr, Touch>> {
        self.touched.get(&interval)
    }

    /// Forgets sharing information for intervals older than `keep_from`.
    pub fn drop_touched_before(&mut self, keep_from: IntervalId) {
        self.touched = self.touched.split_off(&keep_from);
    }

    /// Forgets sharing information for `from` and every later interval.
    pub fn drop_touched_from(&mut self, from: IntervalId) {
        self.touched.split_off(&from);
    }

    /// Removes `group`'s accesses from intervals `from` onwards.
    pub fn forget_touches(&mut self, group: CoreSet, from: IntervalId) {
        for (_, lines) in self.touched.range_mut(from..) {
            lines.retain(|_, t| {
                t.readers = t.readers.minus(group);
                t.writers = t.writers.minus(group);
                !t.cores().is_empty()
            });
        }
    }

    pub fn clear_log_bits(&mut self) {
        self.log_bits.clear();
    }

    pub fn clear_log_bit(&mut self, line: Addr) {
        self.log_bits.remove(&line);
    }

    /// Whether the line has been logged (or omitted) in `interval`.
    pub fn log_bit(&self, line: Addr, interval: IntervalId) -> bool {
        self.log_bits.get(&line) == Some(&interval)
    }

    fn touch(&mut self, core: CoreId, line: Addr, write: bool) {
        let t = self
            .touched
            .entry(self.epochs[core])
            .or_default()
            .entry(line)
            .or_default();
        if write {
            t.writers.insert(core);
        } else {
            t.readers.insert(core);
        }
    }

    /// Resolves loop markers; returns false (and halts) when the stream is exhausted.
    fn settle(&mut self, c: CoreId) -> bool {
        let stream = &self.program.streams[c];
        let core = &mut self.cores[c];
        loop {
            let Some(instr) = stream.get(core.pc) else {
                core.halted = true;
                return false;
            };
            match *instr {
                Instruction::Repeat { count } => {
                    if count == 0 {
                        core.pc = self.loop_partner[c][core.pc] + 1;
                    } else {
                        core.frames_push(core.pc + 1, count);
                        core.pc += 1;
                    }
                }
                Instruction::End => {
                    let top = core.loops.last_mut().expect("validated program has balanced loops");
                    top.remaining -= 1;
                    if top.remaining > 0 {
                        core.pc = top.body_start;
                    } else {
                        core.loops.pop();
                        core.pc += 1;
                    }
                }
                // Stray marker; only reachable in unvalidated programs.
                Instruction::AssocAddr { .. } => core.pc += 1,
                _ => return true,
            }
        }
    }

    fn effective(&self, c: CoreId, index: usize, base: Word, offset: i64) -> Result<Addr, Fault> {
        let ea = base.wrapping_add(offset);
        if ea < 0 || self.read(ea as Addr).is_none() {
            return Err(Fault::OutOfRegion { core: c, index, addr: ea });
        }
        Ok(ea as Addr)
    }

    /// Executes one instruction of core `c`. Returns `None` if the core is
    /// (or just became) halted without executing anything.
    pub fn step(&mut self, c: CoreId) -> Result<Option<Step>, Fault> {
        if self.cores[c].halted || !self.settle(c) {
            return Ok(None);
        }
        let pc = self.cores[c].pc;
        let program = Arc::clone(&self.program);
        let instr = program.streams[c][pc];
        let mut event = TraceEvent {
            core: c,
            seq: self.seq,
            instr_index: pc,
            opcode: instr.opcode(),
            dest: instr.dest(),
            operands: [None, None],
            written: None,
            addr: None,
            assoc: None,
        };
        let mut callbacks = Vec::new();
        let mut next_pc = pc + 1;
        let read_op = |regs: &[Word], o: Operand| match o {
            Operand::Reg(r) => OperandRead::reg(r, regs[r.index()]),
            Operand::Imm(v) => OperandRead::imm(v),
        };

        match instr {
            Instruction::Const { dest, imm } => {
                self.cores[c].regs[dest.index()] = imm;
                event.operands[0] = Some(OperandRead::imm(imm));
                event.written = Some(imm);
            }
            Instruction::Alu { op, dest, a, b } => {
                let regs = &self.cores[c].regs;
                let (ra, rb) = (read_op(regs, a), read_op(regs, b));
                let v = op.eval(ra.value, rb.value);
                self.cores[c].regs[dest.index()] = v;
                event.operands = [Some(ra), Some(rb)];
                event.written = Some(v);
            }
            Instruction::Load { dest, addr } => {
                let base = self.cores[c].regs[addr.base.index()];
                let ea = self.effective(c, pc, base, addr.offset)?;
                let v = self.read(ea).expect("checked by effective");
                if self.tracking && self.program.data.contains(ea) {
                    self.touch(c, self.line_of(ea), false);
                }
                self.cores[c].regs[dest.index()] = v;
                event.operands[0] = Some(OperandRead::reg(addr.base, base));
                event.written = Some(v);
                event.addr = Some(ea);
            }
            Instruction::Store { src, addr } => {
                let base = self.cores[c].regs[addr.base.index()];
                let value = self.cores[c].regs[src.index()];
                let ea = base.wrapping_add(addr.offset);
                if ea >= 0 && self.program.read_only.contains(ea as Addr) {
                    return Err(Fault::ReadOnlyStore {
                        core: c,
                        index: pc,
                        addr: ea as Addr,
                    });
                }
                if ea < 0 || !self.program.data.contains(ea as Addr) {
                    return Err(Fault::OutOfRegion { core: c, index: pc, addr: ea });
                }
                let ea = ea as Addr;
                if self.tracking {
                    let line = self.line_of(ea);
                    let epoch = self.epochs[c];
                    if self.log_bits.get(&line) != Some(&epoch) {
                        let old = self.line_addrs(line).map(|a| self.read(a).unwrap_or(0)).collect();
                        callbacks.push(Callback::FirstWrite { core: c, line, old });
                        self.log_bits.insert(line, epoch);
                    }
                    self.touch(c, line, true);
                }
                self.poke(ea, value);

                let occurrence = self.cores[c].occurrences[pc];
                self.cores[c].occurrences[pc] += 1;
                if let Some(Instruction::AssocAddr { .. }) = program.streams[c].get(pc + 1) {
                    next_pc = pc + 2;
                    event.assoc = self.slices.site(SiteKey {
                        core: c,
                        instr_index: pc,
                        occurrence,
                    });
                }
                callbacks.push(Callback::Store {
                    core: c,
                    addr: ea,
                    assoc: event.assoc,
                });
                event.operands = [
                    Some(OperandRead::reg(src, value)),
                    Some(OperandRead::reg(addr.base, base)),
                ];
                event.written = Some(value);
                event.addr = Some(ea);
            }
            Instruction::Halt => {
                self.cores[c].halted = true;
                next_pc = pc;
            }
            Instruction::AssocAddr { .. } | Instruction::Repeat { .. } | Instruction::End => {
                unreachable!("settled above")
            }
        }

        let core = &mut self.cores[c];
        core.pc = next_pc;
        core.executed += 1;
        self.clocks[c] += self.params.exec(event.opcode);
        self.seq += 1;
        Ok(Some(Step { event, callbacks }))
    }

    /// Steps the next runnable core after the cursor in round-robin order.
    pub fn step_next(&mut self) -> Result<Option<Step>, Fault> {
        let n = self.cores.len();
        for k in 0..n {
            let c = (self.cursor + k) % n;
            if let Some(step) = self.step(c)? {
                self.cursor = (c + 1) % n;
                return Ok(Some(step));
            }
        }
        Ok(None)
    }

    /// Round-robin over `group` only, each core stopping at its quota of
    /// executed instructions. `cursor` is the caller's private scheduler position.
    pub fn step_next_within(
        &mut self,
        group: CoreSet,
        quotas: &[u64],
        cursor: &mut usize,
    ) -> Result<Option<Step>, Fault> {
        let n = self.cores.len();
        for k in 0..n {
            let c = (*cursor + k) % n;
            if !group.contains(c) || self.cores[c].executed >= quotas[c] {
                continue;
            }
            if let Some(step) = self.step(c)? {
                *cursor = (c + 1) % n;
                return Ok(Some(step));
            }
        }
        Ok(None)
    }

    pub fn run_until(&mut self, limit: RunLimit) -> Result<Vec<TraceEvent>, Fault> {
        let mut events = Vec::new();
        loop {
            let stop = match limit {
                RunLimit::Steps(n) => self.progress() >= n,
                RunLimit::Time(t) => self.clocks.iter().any(|c| c.time >= t),
                RunLimit::Unbounded => false,
            };
            if stop {
                break;
            }
            match self.step_next()? {
                Some(step) => events.push(step.event),
                None => break,
            }
        }
        Ok(events)
    }

    /// Digest of data memory plus every core's registers and PC.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.data {
            h.update(w.to_le_bytes());
        }
        for core in &self.cores {
            for r in &core.regs {
                h.update(r.to_le_bytes());
            }
            h.update((core.pc as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl CoreState {
    fn frames_push(&mut self, body_start: usize, remaining: u32) {
        self.loops.push(LoopFrame { body_start, remaining });
    }
}
