//! Program container, memory layout and static validation.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{Addr, CoreId, Instruction, Operand, Reg, Word, DEFAULT_REGISTERS};

/// Half-open address interval `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Region {
    pub lo: Addr,
    pub hi: Addr,
}

impl Region {
    pub fn new(lo: Addr, hi: Addr) -> Self {
        Region { lo, hi }
    }

    pub fn contains(&self, addr: Addr) -> bool {
        self.lo <= addr && addr < self.hi
    }

    pub fn len(&self) -> u64 {
        self.hi.saturating_sub(self.lo)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        !self.is_empty() && !other.is_empty() && self.lo < other.hi && other.lo < self.hi
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub registers: usize,
    pub read_only: Region,
    pub data: Region,
    pub init: Vec<(Addr, Word)>,
    /// One instruction stream per core.
    pub streams: Vec<Vec<Instruction>>,
}

impl Program {
    pub fn new(cores: usize) -> Self {
        Program {
            registers: DEFAULT_REGISTERS,
            read_only: Region::default(),
            data: Region::default(),
            init: Vec::new(),
            streams: vec![Vec::new(); cores],
        }
    }

    pub fn cores(&self) -> usize {
        self.streams.len()
    }

    pub fn is_annotated(&self) -> bool {
        self.streams
            .iter()
            .flatten()
            .any(|i| matches!(i, Instruction::AssocAddr { .. }))
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        validate_program(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticKind {
    RegisterRange,
    ReadOnlyStore,
    AddressOutOfRegion,
    RegionLayout,
    InitOutOfRegion,
    UnbalancedRepeat,
    MisplacedAssoc,
    NoCores,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub core: Option<CoreId>,
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.core, self.index) {
            (Some(c), Some(i)) => write!(f, "core {c}, instruction {i}: {}", self.message),
            (Some(c), None) => write!(f, "core {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

fn diag(kind: DiagnosticKind, core: Option<CoreId>, index: Option<usize>, message: String) -> Diagnostic {
    Diagnostic {
        kind,
        core,
        index,
        message,
    }
}

/// Returns every invariant violation; an empty list means the program is valid.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if p.streams.is_empty() {
        out.push(diag(DiagnosticKind::NoCores, None, None, "program has no instruction streams".into()));
    }
    for (name, r) in [("read-only", p.read_only), ("data", p.data)] {
        if r.lo > r.hi {
            out.push(diag(
                DiagnosticKind::RegionLayout,
                None,
                None,
                format!("{name} region {r} has lo > hi"),
            ));
        }
    }
    if p.read_only.overlaps(&p.data) {
        out.push(diag(
            DiagnosticKind::RegionLayout,
            None,
            None,
            format!("read-only region {} overlaps data region {}", p.read_only, p.data),
        ));
    }
    for &(addr, _) in &p.init {
        if !p.read_only.contains(addr) && !p.data.contains(addr) {
            out.push(diag(
                DiagnosticKind::InitOutOfRegion,
                None,
                None,
                format!("initial value at address {addr} lies outside every region"),
            ));
        }
    }
    for (core, stream) in p.streams.iter().enumerate() {
        validate_stream(p, core, stream, &mut out);
    }
    out
}

fn validate_stream(p: &Program, core: CoreId, stream: &[Instruction], out: &mut Vec<Diagnostic>) {
    // Registers holding statically known values; loops forget whatever their
    // bodies write since the first iteration sees different values than the rest.
    let mut known: HashMap<Reg, Word> = HashMap::new();
    let mut loop_starts: Vec<usize> = Vec::new();

    for (idx, instr) in stream.iter().enumerate() {
        for r in instr.registers() {
            if r.index() >= p.registers {
                out.push(diag(
                    DiagnosticKind::RegisterRange,
                    Some(core),
                    Some(idx),
                    format!("register {r} outside [0, {})", p.registers),
                ));
            }
        }
        match *instr {
            Instruction::Const { dest, imm } => {
                known.insert(dest, imm);
            }
            Instruction::Alu { op, dest, a, b } => {
                let val = |o: Operand| match o {
                    Operand::Imm(v) => Some(v),
                    Operand::Reg(r) => known.get(&r).copied(),
                };
                match (val(a), val(b)) {
                    (Some(x), Some(y)) => {
                        known.insert(dest, op.eval(x, y));
                    }
                    _ => {
                        known.remove(&dest);
                    }
                }
            }
            Instruction::Load { dest, addr } => {
                if let Some(&base) = known.get(&addr.base) {
                    let ea = base.wrapping_add(addr.offset);
                    if !in_regions(p, ea) {
                        out.push(diag(
                            DiagnosticKind::AddressOutOfRegion,
                            Some(core),
                            Some(idx),
                            format!("load from address {ea} outside every region"),
                        ));
                    }
                }
                known.remove(&dest);
            }
            Instruction::Store { addr, .. } => {
                if let Some(&base) = known.get(&addr.base) {
                    let ea = base.wrapping_add(addr.offset);
                    if ea >= 0 && p.read_only.contains(ea as Addr) {
                        out.push(diag(
                            DiagnosticKind::ReadOnlyStore,
                            Some(core),
                            Some(idx),
                            format!("store to address {ea} inside read-only region {}", p.read_only),
                        ));
                    } else if !in_regions(p, ea) {
                        out.push(diag(
                            DiagnosticKind::AddressOutOfRegion,
                            Some(core),
                            Some(idx),
                            format!("store to address {ea} outside every region"),
                        ));
                    }
                }
            }
            Instruction::AssocAddr { addr, site } => {
                let paired = idx
                    .checked_sub(1)
                    .and_then(|prev| match stream[prev] {
                        Instruction::Store { addr: sa, .. } => Some((prev, sa)),
                        _ => None,
                    });
                match paired {
                    Some((prev, sa)) if sa == addr && site as usize == prev => {}
                    _ => out.push(diag(
                        DiagnosticKind::MisplacedAssoc,
                        Some(core),
                        Some(idx),
                        "assoc must directly follow the store it names, with the same address".into(),
                    )),
                }
            }
            Instruction::Repeat { .. } => {
                loop_starts.push(idx);
                forget_written(&mut known, body_of(stream, idx));
            }
            Instruction::End => match loop_starts.pop() {
                Some(start) => forget_written(&mut known, &stream[start + 1..idx]),
                None => out.push(diag(
                    DiagnosticKind::UnbalancedRepeat,
                    Some(core),
                    Some(idx),
                    "end without matching repeat".into(),
                )),
            },
            Instruction::Halt => {}
        }
    }
    for start in loop_starts {
        out.push(diag(
            DiagnosticKind::UnbalancedRepeat,
            Some(core),
            Some(start),
            "repeat without matching end".into(),
        ));
    }
}

fn in_regions(p: &Program, ea: Word) -> bool {
    ea >= 0 && (p.read_only.contains(ea as Addr) || p.data.contains(ea as Addr))
}

/// Body of the loop opened at `start` (up to the matching `end`, or the stream tail).
fn body_of(stream: &[Instruction], start: usize) -> &[Instruction] {
    let mut depth = 0usize;
    for (i, instr) in stream.iter().enumerate().skip(start + 1) {
        match instr {
            Instruction::Repeat { .. } => depth += 1,
            Instruction::End if depth == 0 => return &stream[start + 1..i],
            Instruction::End => depth -= 1,
            _ => {}
        }
    }
    &stream[start + 1..]
}

fn forget_written(known: &mut HashMap<Reg, Word>, body: &[Instruction]) {
    for instr in body {
        if let Some(d) = instr.dest() {
            known.remove(&d);
        }
    }
}

/// For each `repeat`, the index of its matching `end` (and vice versa).
/// Only meaningful for streams that validate.
pub fn match_loops(stream: &[Instruction]) -> Vec<usize> {
    let mut partner = vec![usize::MAX; stream.len()];
    let mut open = Vec::new();
    for (i, instr) in stream.iter().enumerate() {
        match instr {
            Instruction::Repeat { .. } => open.push(i),
            Instruction::End => {
                if let Some(s) = open.pop() {
                    partner[s] = i;
                    partner[i] = s;
                }
            }
            _ => {}
        }
    }
    partner
}
