//! Backward recomputation slices over dynamic traces.
//!
//! [`build_def_use`] links every operand in a trace to the event that
//! produced it. [`extract_rslice`] walks those links back from a store
//! through arithmetic/logic events only, stopping at loads and initial
//! register values, whose words are captured as slice inputs. Slices longer
//! than the threshold, or needing more captured inputs than allowed, are
//! rejected. [`annotate`] pairs each sliced store with an `assoc` marker.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Addr, CoreId, Instruction, Opcode, Operand, Reg, Word};
use crate::program::{Program, Region};
use crate::trace::TraceEvent;

pub const DEFAULT_THRESHOLD: usize = 10;
pub const DEFAULT_MAX_LEAVES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceId(pub u32);

/// One dynamic execution of a static store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteKey {
    pub core: CoreId,
    pub instr_index: usize,
    /// Zero-based count of earlier executions of the same store.
    pub occurrence: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafProvenance {
    /// Word loaded from the read-only region.
    ReadOnlyLoad,
    /// Word loaded from mutable memory, or a register value from before the trace.
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leaf {
    /// Scratch register the value is placed in before replay.
    pub slot: u16,
    pub value: Word,
    pub provenance: LeafProvenance,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RSlice {
    pub id: SliceId,
    pub target: SiteKey,
    pub target_addr: Addr,
    pub leaves: Vec<Leaf>,
    /// Producers first; registers name scratch slots.
    pub instructions: Vec<Instruction>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("slice {0:?} contains non-compute opcode {1}")]
    NonCompute(SliceId, Opcode),
    #[error("slice {0:?} reads scratch slot {1} before it is defined")]
    UndefinedSlot(SliceId, u16),
    #[error("slice {0:?} has no instructions")]
    Empty(SliceId),
    #[error("duplicate slice id {0:?}")]
    DuplicateId(SliceId),
    #[error("two slices target the same dynamic store {0:?}")]
    DuplicateSite(SiteKey),
}

impl RSlice {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    fn scratch_size(&self) -> usize {
        let leaf_max = self.leaves.iter().map(|l| l.slot as usize + 1).max().unwrap_or(0);
        let instr_max = self
            .instructions
            .iter()
            .flat_map(|i| i.registers())
            .map(|r| r.index() + 1)
            .max()
            .unwrap_or(0);
        leaf_max.max(instr_max)
    }

    /// Structural check: compute-only, every read slot defined beforehand.
    pub fn check(&self) -> Result<(), SliceError> {
        if self.instructions.is_empty() {
            return Err(SliceError::Empty(self.id));
        }
        let mut defined: HashSet<u16> = self.leaves.iter().map(|l| l.slot).collect();
        for instr in &self.instructions {
            match *instr {
                Instruction::Const { dest, .. } => {
                    defined.insert(dest.0);
                }
                Instruction::Alu { dest, a, b, .. } => {
                    for o in [a, b] {
                        if let Operand::Reg(r) = o {
                            if !defined.contains(&r.0) {
                                return Err(SliceError::UndefinedSlot(self.id, r.0));
                            }
                        }
                    }
                    defined.insert(dest.0);
                }
                other => return Err(SliceError::NonCompute(self.id, other.opcode())),
            }
        }
        Ok(())
    }

    /// Replays the slice in an isolated scratch register file.
    pub fn recompute(&self) -> Word {
        let values: Vec<Word> = self.leaves.iter().map(|l| l.value).collect();
        self.recompute_with(&values)
    }

    /// Replays the slice over externally held leaf values, in leaf order.
    pub fn recompute_with(&self, leaf_values: &[Word]) -> Word {
        assert_eq!(leaf_values.len(), self.leaves.len(), "one value per leaf");
        let mut scratch = vec![0 as Word; self.scratch_size()];
        for (leaf, &v) in self.leaves.iter().zip(leaf_values) {
            scratch[leaf.slot as usize] = v;
        }
        let mut out = 0;
        for instr in &self.instructions {
            let (dest, v) = match *instr {
                Instruction::Const { dest, imm } => (dest, imm),
                Instruction::Alu { op, dest, a, b } => {
                    let val = |o: Operand| match o {
                        Operand::Reg(r) => scratch[r.index()],
                        Operand::Imm(v) => v,
                    };
                    (dest, op.eval(val(a), val(b)))
                }
                _ => unreachable!("slices hold compute instructions only"),
            };
            scratch[dest.index()] = v;
            out = v;
        }
        out
    }

    pub fn captured_words(&self) -> usize {
        self.leaves.len()
    }
}

/// Slices by id, indexed by the dynamic store each one regenerates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SliceTable {
    slices: BTreeMap<SliceId, RSlice>,
    by_site: HashMap<SiteKey, SliceId>,
}

impl SliceTable {
    pub fn insert(&mut self, slice: RSlice) -> Result<(), SliceError> {
        slice.check()?;
        if self.slices.contains_key(&slice.id) {
            return Err(SliceError::DuplicateId(slice.id));
        }
        if self.by_site.contains_key(&slice.target) {
            return Err(SliceError::DuplicateSite(slice.target));
        }
        self.by_site.insert(slice.target, slice.id);
        self.slices.insert(slice.id, slice);
        Ok(())
    }

    pub fn get(&self, id: SliceId) -> Option<&RSlice> {
        self.slices.get(&id)
    }

    pub fn site(&self, key: SiteKey) -> Option<SliceId> {
        self.by_site.get(&key).copied()
    }

    pub fn slices(&self) -> impl Iterator<Item = &RSlice> {
        self.slices.values()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

/// Where an operand value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Producer {
    /// Position in the trace of the producing event.
    Event(usize),
    /// Register or memory contents from before the trace started.
    Initial,
    Immediate,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace position {0}: sequence numbers must strictly increase")]
    NonMonotone(usize),
    #[error("trace position {pos}: core {core} reads {reg} = {value}, never written and not the initial 0")]
    UnwrittenRegister { pos: usize, core: CoreId, reg: Reg, value: Word },
    #[error("trace position {pos}: load of address {addr} returned {got}, last store wrote {expected}")]
    InconsistentLoad { pos: usize, addr: Addr, got: Word, expected: Word },
}

/// Def-use links for one complete trace.
#[derive(Debug)]
pub struct DefUseIndex<'t> {
    trace: &'t [TraceEvent],
    read_only: Region,
    operands: Vec<[Producer; 2]>,
    /// Producer of the loaded word, for loads.
    memory: Vec<Option<Producer>>,
    occurrence: Vec<u64>,
}

pub fn build_def_use(trace: &[TraceEvent], read_only: Region) -> Result<DefUseIndex<'_>, TraceError> {
    let mut last_reg: HashMap<(CoreId, Reg), usize> = HashMap::new();
    let mut last_store: HashMap<Addr, usize> = HashMap::new();
    let mut counts: HashMap<(CoreId, usize), u64> = HashMap::new();
    let mut operands = Vec::with_capacity(trace.len());
    let mut memory = Vec::with_capacity(trace.len());
    let mut occurrence = Vec::with_capacity(trace.len());

    for (pos, e) in trace.iter().enumerate() {
        if pos > 0 && trace[pos - 1].seq >= e.seq {
            return Err(TraceError::NonMonotone(pos));
        }
        let mut prods = [Producer::Immediate; 2];
        for (slot, op) in e.operands.iter().enumerate() {
            let Some(op) = op else { continue };
            prods[slot] = match op.reg {
                None => Producer::Immediate,
                Some(r) => match last_reg.get(&(e.core, r)) {
                    Some(&p) => Producer::Event(p),
                    None if op.value == 0 => Producer::Initial,
                    None => {
                        return Err(TraceError::UnwrittenRegister {
                            pos,
                            core: e.core,
                            reg: r,
                            value: op.value,
                        })
                    }
                },
            };
        }
        operands.push(prods);

        let mem = match (e.opcode, e.addr) {
            (Opcode::Load, Some(a)) => Some(match last_store.get(&a) {
                Some(&s) => {
                    let expected = trace[s].written.unwrap_or_default();
                    let got = e.written.unwrap_or_default();
                    if expected != got {
                        return Err(TraceError::InconsistentLoad {
                            pos,
                            addr: a,
                            got,
                            expected,
                        });
                    }
                    Producer::Event(s)
                }
                None => Producer::Initial,
            }),
            _ => None,
        };
        memory.push(mem);

        let occ = if e.opcode == Opcode::Store {
            let n = counts.entry((e.core, e.instr_index)).or_insert(0);
            *n += 1;
            *n - 1
        } else {
            0
        };
        occurrence.push(occ);

        if let Some(d) = e.dest {
            last_reg.insert((e.core, d), pos);
        }
        if let (Opcode::Store, Some(a)) = (e.opcode, e.addr) {
            last_store.insert(a, pos);
        }
    }
    Ok(DefUseIndex {
        trace,
        read_only,
        operands,
        memory,
        occurrence,
    })
}

impl<'t> DefUseIndex<'t> {
    pub fn trace(&self) -> &'t [TraceEvent] {
        self.trace
    }

    pub fn operand_producer(&self, pos: usize, slot: usize) -> Producer {
        self.operands[pos][slot]
    }

    pub fn memory_producer(&self, pos: usize) -> Option<Producer> {
        self.memory[pos]
    }

    pub fn site_of(&self, pos: usize) -> SiteKey {
        let e = &self.trace[pos];
        SiteKey {
            core: e.core,
            instr_index: e.instr_index,
            occurrence: self.occurrence[pos],
        }
    }

    pub fn store_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.trace
            .iter()
            .enumerate()
            .filter(|(_, e)| e.opcode == Opcode::Store)
            .map(|(p, _)| p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SliceLimits {
    pub threshold: usize,
    pub max_leaves: usize,
}

impl Default for SliceLimits {
    fn default() -> Self {
        SliceLimits {
            threshold: DEFAULT_THRESHOLD,
            max_leaves: DEFAULT_MAX_LEAVES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    /// Stored word is a loaded or initial value: nothing to recompute.
    Empty,
    /// More instructions than the threshold (counted up to threshold + 1).
    Length(usize),
    TooManyLeaves(usize),
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Empty => f.write_str("no compute instructions"),
            Rejection::Length(n) => write!(f, "length {n} exceeds threshold"),
            Rejection::TooManyLeaves(n) => write!(f, "{n} captured inputs exceed the limit"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum LeafKey {
    InitialReg(Reg),
    Load(usize),
}

/// Extracts the slice regenerating the word stored by the event at `pos`.
pub fn extract_rslice(
    index: &DefUseIndex<'_>,
    pos: usize,
    limits: SliceLimits,
    id: SliceId,
) -> Result<RSlice, Rejection> {
    let trace = index.trace;
    let store = &trace[pos];
    assert_eq!(store.opcode, Opcode::Store, "extract_rslice needs a store event");

    let root = match index.operands[pos][0] {
        Producer::Event(p) if trace[p].opcode.is_compute() => p,
        _ => return Err(Rejection::Empty),
    };

    let mut nodes: BTreeSet<usize> = BTreeSet::new();
    let mut leaves: BTreeSet<LeafKey> = BTreeSet::new();
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        if !nodes.insert(p) {
            continue;
        }
        if nodes.len() > limits.threshold {
            return Err(Rejection::Length(nodes.len()));
        }
        let e = &trace[p];
        if e.opcode == Opcode::Const {
            continue;
        }
        for (slot, op) in e.operands.iter().enumerate() {
            let Some(op) = op else { continue };
            let Some(reg) = op.reg else { continue };
            match index.operands[p][slot] {
                Producer::Event(q) if trace[q].opcode.is_compute() => stack.push(q),
                Producer::Event(q) => {
                    leaves.insert(LeafKey::Load(q));
                }
                Producer::Initial => {
                    leaves.insert(LeafKey::InitialReg(reg));
                }
                Producer::Immediate => {}
            }
        }
    }
    if leaves.len() > limits.max_leaves {
        return Err(Rejection::TooManyLeaves(leaves.len()));
    }

    let leaf_slot: HashMap<LeafKey, u16> = leaves.iter().enumerate().map(|(i, k)| (*k, i as u16)).collect();
    let base = leaves.len();
    let node_slot: HashMap<usize, u16> = nodes
        .iter()
        .enumerate()
        .map(|(k, &p)| (p, (base + k) as u16))
        .collect();

    let leaf_list = leaves
        .iter()
        .map(|k| match *k {
            LeafKey::Load(q) => {
                let e = &trace[q];
                let ro = e.addr.is_some_and(|a| index.read_only.contains(a));
                Leaf {
                    slot: leaf_slot[k],
                    value: e.written.unwrap_or_default(),
                    provenance: if ro {
                        LeafProvenance::ReadOnlyLoad
                    } else {
                        LeafProvenance::Boundary
                    },
                }
            }
            LeafKey::InitialReg(_) => Leaf {
                slot: leaf_slot[k],
                value: 0,
                provenance: LeafProvenance::Boundary,
            },
        })
        .collect();

    let instructions = nodes
        .iter()
        .map(|&p| {
            let e = &trace[p];
            let dest = Reg(node_slot[&p]);
            if e.opcode == Opcode::Const {
                return Instruction::Const {
                    dest,
                    imm: e.operands[0].map(|o| o.value).unwrap_or_default(),
                };
            }
            let operand = |slot: usize| {
                let op = e.operands[slot].expect("ALU events read two operands");
                match (op.reg, index.operands[p][slot]) {
                    (None, _) | (_, Producer::Immediate) => Operand::Imm(op.value),
                    (Some(_), Producer::Event(q)) if trace[q].opcode.is_compute() => Operand::Reg(Reg(node_slot[&q])),
                    (Some(_), Producer::Event(q)) => Operand::Reg(Reg(leaf_slot[&LeafKey::Load(q)])),
                    (Some(r), Producer::Initial) => Operand::Reg(Reg(leaf_slot[&LeafKey::InitialReg(r)])),
                }
            };
            Instruction::Alu {
                op: e.opcode.alu().expect("compute events other than const are ALU ops"),
                dest,
                a: operand(0),
                b: operand(1),
            }
        })
        .collect();

    Ok(RSlice {
        id,
        target: index.site_of(pos),
        target_addr: store.addr.expect("store events carry an address"),
        leaves: leaf_list,
        instructions,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceStats {
    pub stores_seen: u64,
    pub stores_sliced: u64,
    pub stores_rejected_length: u64,
    pub stores_rejected_unavailable: u64,
    pub length_histogram: BTreeMap<usize, u64>,
}

impl SliceStats {
    pub fn sliced_fraction(&self) -> f64 {
        if self.stores_seen == 0 {
            0.0
        } else {
            self.stores_sliced as f64 / self.stores_seen as f64
        }
    }
}

/// Extracts a slice for every store in the trace, numbering accepted slices from 0.
pub fn extract_all(index: &DefUseIndex<'_>, limits: SliceLimits) -> (Vec<RSlice>, SliceStats) {
    let mut stats = SliceStats::default();
    let mut out = Vec::new();
    for pos in index.store_positions() {
        stats.stores_seen += 1;
        match extract_rslice(index, pos, limits, SliceId(out.len() as u32)) {
            Ok(s) => {
                stats.stores_sliced += 1;
                *stats.length_histogram.entry(s.len()).or_insert(0) += 1;
                out.push(s);
            }
            Err(Rejection::Length(_)) => stats.stores_rejected_length += 1,
            Err(Rejection::Empty | Rejection::TooManyLeaves(_)) => stats.stores_rejected_unavailable += 1,
        }
    }
    (out, stats)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnnotateError {
    #[error("program already carries assoc markers")]
    AlreadyAnnotated,
    #[error("slice {0:?} targets core {1}, instruction {2}, which is not a store")]
    NotAStore(SliceId, CoreId, usize),
    #[error(transparent)]
    Table(#[from] SliceError),
}

/// Inserts an `assoc` marker after every store that has at least one slice
/// and returns the slice table keyed by the annotated instruction indices.
pub fn annotate(program: &Program, slices: &[RSlice]) -> Result<(Program, SliceTable), AnnotateError> {
    if program.is_annotated() {
        return Err(AnnotateError::AlreadyAnnotated);
    }
    let mut seen: HashSet<SiteKey> = HashSet::new();
    let mut sites: HashSet<(CoreId, usize)> = HashSet::new();
    for s in slices {
        let t = s.target;
        let is_store = program
            .streams
            .get(t.core)
            .and_then(|st| st.get(t.instr_index))
            .is_some_and(|i| matches!(i, Instruction::Store { .. }));
        if !is_store {
            return Err(AnnotateError::NotAStore(s.id, t.core, t.instr_index));
        }
        if !seen.insert(t) {
            return Err(SliceError::DuplicateSite(t).into());
        }
        sites.insert((t.core, t.instr_index));
    }

    let mut out = program.clone();
    let mut remap: Vec<Vec<usize>> = Vec::with_capacity(program.cores());
    for (c, stream) in program.streams.iter().enumerate() {
        let mut annotated = Vec::with_capacity(stream.len());
        let mut map = Vec::with_capacity(stream.len());
        for (i, instr) in stream.iter().enumerate() {
            map.push(annotated.len());
            annotated.push(*instr);
            if let (true, Instruction::Store { addr, .. }) = (sites.contains(&(c, i)), instr) {
                annotated.push(Instruction::AssocAddr {
                    addr: *addr,
                    site: (annotated.len() - 1) as u32,
                });
            }
        }
        out.streams[c] = annotated;
        remap.push(map);
    }

    let mut table = SliceTable::default();
    for s in slices {
        let mut s = s.clone();
        s.target.instr_index = remap[s.target.core][s.target.instr_index];
        table.insert(s)?;
    }
    Ok((out, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{AluOp, MemRef};
    use crate::trace::OperandRead;

    /// Hand-built trace events for a single core.
    struct TraceBuilder {
        events: Vec<TraceEvent>,
    }

    impl TraceBuilder {
        fn new() -> Self {
            TraceBuilder { events: Vec::new() }
        }

        fn push(&mut self, opcode: Opcode, dest: Option<u16>, ops: [Option<OperandRead>; 2], written: Option<Word>, addr: Option<Addr>) {
            let seq = self.events.len() as u64;
            self.events.push(TraceEvent {
                core: 0,
                seq,
                instr_index: seq as usize,
                opcode,
                dest: dest.map(Reg),
                operands: ops,
                written,
                addr,
                assoc: None,
            });
        }

        fn konst(&mut self, d: u16, v: Word) {
            self.push(Opcode::Const, Some(d), [Some(OperandRead::imm(v)), None], Some(v), None);
        }

        fn alu(&mut self, op: AluOp, d: u16, a: (u16, Word), b: Option<(u16, Word)>, imm: Word) {
            let b = match b {
                Some((r, v)) => OperandRead::reg(Reg(r), v),
                None => OperandRead::imm(imm),
            };
            let v = op.eval(a.1, b.value);
            self.push(op.opcode(), Some(d), [Some(OperandRead::reg(Reg(a.0), a.1)), Some(b)], Some(v), None);
        }

        fn load(&mut self, d: u16, addr: Addr, v: Word) {
            self.push(Opcode::Load, Some(d), [Some(OperandRead::reg(Reg(0), 0)), None], Some(v), Some(addr));
        }

        fn store(&mut self, src: u16, v: Word, addr: Addr) {
            self.push(
                Opcode::Store,
                None,
                [Some(OperandRead::reg(Reg(src), v)), Some(OperandRead::reg(Reg(0), 0))],
                Some(v),
                Some(addr),
            );
        }
    }

    const RO: Region = Region { lo: 0, hi: 64 };

    #[test]
    fn direct_def_use() {
        let mut t = TraceBuilder::new();
        t.konst(1, 5);
        t.alu(AluOp::Add, 2, (1, 5), Some((1, 5)), 0);
        let idx = build_def_use(&t.events, RO).unwrap();
        assert_eq!(idx.operand_producer(1, 0), Producer::Event(0));
        assert_eq!(idx.operand_producer(1, 1), Producer::Event(0));
    }

    #[test]
    fn read_only_load_is_initial_state() {
        let mut t = TraceBuilder::new();
        t.load(1, 7, 42);
        let idx = build_def_use(&t.events, RO).unwrap();
        assert_eq!(idx.memory_producer(0), Some(Producer::Initial));
    }

    #[test]
    fn load_after_store_links_to_store() {
        let mut t = TraceBuilder::new();
        t.konst(1, 3);
        t.store(1, 3, 100);
        t.load(2, 100, 3);
        let idx = build_def_use(&t.events, RO).unwrap();
        assert_eq!(idx.memory_producer(2), Some(Producer::Event(1)));
    }

    #[test]
    fn unwritten_nonzero_register_is_malformed() {
        let mut t = TraceBuilder::new();
        t.alu(AluOp::Add, 2, (1, 9), None, 1);
        assert!(matches!(
            build_def_use(&t.events, RO),
            Err(TraceError::UnwrittenRegister { pos: 0, .. })
        ));
    }

    #[test]
    fn non_monotone_seq_is_malformed() {
        let mut t = TraceBuilder::new();
        t.konst(1, 1);
        t.konst(2, 2);
        t.events[1].seq = 0;
        assert_eq!(build_def_use(&t.events, RO).unwrap_err(), TraceError::NonMonotone(1));
    }

    #[test]
    fn constant_sum_slice() {
        let mut t = TraceBuilder::new();
        t.konst(1, 5);
        t.konst(2, 7);
        t.alu(AluOp::Add, 3, (1, 5), Some((2, 7)), 0);
        t.store(3, 12, 100);
        let idx = build_def_use(&t.events, RO).unwrap();
        let s = extract_rslice(&idx, 3, SliceLimits::default(), SliceId(0)).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.leaves.is_empty());
        assert_eq!(s.recompute(), 12);
        assert_eq!(s.target_addr, 100);
    }

    #[test]
    fn figure_two_shape() {
        // i5, i4 are constants; i3 = i4 ^ i5; i2 = i3 * i4; i1 = i2 - 1 is the stored value.
        let mut t = TraceBuilder::new();
        t.konst(5, 2); // i5
        t.konst(4, 3); // i4
        t.alu(AluOp::Xor, 3, (4, 3), Some((5, 2)), 0); // i3 = 1
        t.alu(AluOp::Mul, 2, (3, 1), Some((4, 3)), 0); // i2 = 3
        t.konst(9, 0); // unrelated
        t.alu(AluOp::Sub, 1, (2, 3), None, 1); // i1 = 2
        t.store(1, 2, 120);
        let idx = build_def_use(&t.events, RO).unwrap();
        let s = extract_rslice(&idx, 6, SliceLimits::default(), SliceId(0)).unwrap();
        assert_eq!(s.len(), 5);
        let ops: Vec<_> = s.instructions.iter().map(|i| i.opcode()).collect();
        assert_eq!(ops, vec![Opcode::Const, Opcode::Const, Opcode::Xor, Opcode::Mul, Opcode::Sub]);
        assert_eq!(s.recompute(), 2);
        assert_eq!(s.target_addr, 120);
    }

    #[test]
    fn eleven_chained_adds_exceed_threshold_ten() {
        let mut t = TraceBuilder::new();
        t.konst(1, 0);
        let mut v = 0;
        for _ in 0..11 {
            t.alu(AluOp::Add, 1, (1, v), None, 1);
            v += 1;
        }
        t.store(1, v, 100);
        let idx = build_def_use(&t.events, RO).unwrap();
        let pos = t.events.len() - 1;
        assert!(matches!(
            extract_rslice(&idx, pos, SliceLimits::default(), SliceId(0)),
            Err(Rejection::Length(_))
        ));
        // Eleven adds plus the const: accepted once the threshold allows 12.
        let limits = SliceLimits {
            threshold: 12,
            ..Default::default()
        };
        assert_eq!(extract_rslice(&idx, pos, limits, SliceId(0)).unwrap().len(), 12);
    }

    #[test]
    fn mutable_load_capture_rule() {
        // Stored straight from a mutable load: nothing to recompute.
        let mut t = TraceBuilder::new();
        t.load(1, 100, 41);
        t.store(1, 41, 101);
        let idx = build_def_use(&t.events, RO).unwrap();
        assert_eq!(extract_rslice(&idx, 1, SliceLimits::default(), SliceId(0)), Err(Rejection::Empty));

        // One intervening add: length 1, one boundary leaf holding the loaded word.
        let mut t = TraceBuilder::new();
        t.load(1, 100, 41);
        t.alu(AluOp::Add, 2, (1, 41), None, 1);
        t.store(2, 42, 101);
        let idx = build_def_use(&t.events, RO).unwrap();
        let s = extract_rslice(&idx, 2, SliceLimits::default(), SliceId(0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(
            s.leaves,
            vec![Leaf {
                slot: 0,
                value: 41,
                provenance: LeafProvenance::Boundary
            }]
        );
        assert_eq!(s.recompute(), 42);
    }

    #[test]
    fn read_only_leaf_and_leaf_cap() {
        let mut t = TraceBuilder::new();
        for (r, a) in [(1u16, 1u64), (2, 2), (3, 3), (4, 4), (5, 5)] {
            t.load(r, a, a as Word * 10);
        }
        t.alu(AluOp::Add, 6, (1, 10), Some((2, 20)), 0);
        t.alu(AluOp::Add, 6, (6, 30), Some((3, 30)), 0);
        t.alu(AluOp::Add, 6, (6, 60), Some((4, 40)), 0);
        t.store(6, 100, 100);
        t.alu(AluOp::Add, 6, (6, 100), Some((5, 50)), 0);
        t.store(6, 150, 101);
        let idx = build_def_use(&t.events, RO).unwrap();
        let s = extract_rslice(&idx, 8, SliceLimits::default(), SliceId(0)).unwrap();
        assert_eq!(s.leaves.len(), 4);
        assert!(s.leaves.iter().all(|l| l.provenance == LeafProvenance::ReadOnlyLoad));
        assert_eq!(s.recompute(), 100);
        assert_eq!(
            extract_rslice(&idx, 10, SliceLimits::default(), SliceId(1)),
            Err(Rejection::TooManyLeaves(5))
        );
    }

    #[test]
    fn stats_partition_stores() {
        let mut t = TraceBuilder::new();
        t.konst(1, 1);
        t.store(1, 1, 100);
        t.load(2, 100, 1);
        t.store(2, 1, 101);
        let idx = build_def_use(&t.events, RO).unwrap();
        let (slices, stats) = extract_all(&idx, SliceLimits::default());
        assert_eq!(slices.len(), 1);
        assert_eq!(stats.stores_seen, 2);
        assert_eq!(stats.stores_sliced + stats.stores_rejected_length + stats.stores_rejected_unavailable, 2);
        assert_eq!(stats.length_histogram.get(&1), Some(&1));
    }

    fn store_program() -> Program {
        let mut p = Program::new(1);
        p.data = Region::new(64, 128);
        p.streams[0] = vec![
            Instruction::Const { dest: Reg(1), imm: 5 },
            Instruction::Store {
                src: Reg(1),
                addr: MemRef { base: Reg(0), offset: 70 },
            },
            Instruction::Halt,
        ];
        p
    }

    fn slice_at(id: u32, idx: usize, occ: u64) -> RSlice {
        RSlice {
            id: SliceId(id),
            target: SiteKey {
                core: 0,
                instr_index: idx,
                occurrence: occ,
            },
            target_addr: 70,
            leaves: vec![],
            instructions: vec![Instruction::Const { dest: Reg(0), imm: 5 }],
        }
    }

    #[test]
    fn annotate_inserts_marker_after_store() {
        let (p, table) = annotate(&store_program(), &[slice_at(0, 1, 0)]).unwrap();
        assert_eq!(p.streams[0].len(), 4);
        assert!(matches!(p.streams[0][2], Instruction::AssocAddr { site: 1, .. }));
        assert!(p.validate().is_empty());
        assert_eq!(
            table.site(SiteKey {
                core: 0,
                instr_index: 1,
                occurrence: 0
            }),
            Some(SliceId(0))
        );
    }

    #[test]
    fn annotate_without_slices_is_identity() {
        let (p, table) = annotate(&store_program(), &[]).unwrap();
        assert_eq!(p, store_program());
        assert!(table.is_empty());
    }

    #[test]
    fn annotate_rejects_duplicates_and_non_stores() {
        assert!(matches!(
            annotate(&store_program(), &[slice_at(0, 1, 0), slice_at(1, 1, 0)]),
            Err(AnnotateError::Table(SliceError::DuplicateSite(_)))
        ));
        assert!(matches!(
            annotate(&store_program(), &[slice_at(0, 0, 0)]),
            Err(AnnotateError::NotAStore(..))
        ));
    }

    #[test]
    fn table_rejects_malformed_slices() {
        let mut bad = slice_at(0, 1, 0);
        bad.instructions = vec![Instruction::Alu {
            op: AluOp::Add,
            dest: Reg(1),
            a: Operand::Reg(Reg(0)),
            b: Operand::Imm(1),
        }];
        assert_eq!(SliceTable::default().insert(bad), Err(SliceError::UndefinedSlot(SliceId(0), 0)));
        let mut bad = slice_at(0, 1, 0);
        bad.instructions = vec![Instruction::Halt];
        assert!(matches!(SliceTable::default().insert(bad), Err(SliceError::NonCompute(..))));
    }
}
