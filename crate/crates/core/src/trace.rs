//! Dynamic execution records.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::isa::{Addr, CoreId, Opcode, Reg, Word};
use crate::slice::SliceId;

/// One operand as read by an executing instruction. `reg` is `None` for immediates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperandRead {
    pub reg: Option<Reg>,
    pub value: Word,
}

impl OperandRead {
    pub fn reg(reg: Reg, value: Word) -> Self {
        OperandRead { reg: Some(reg), value }
    }

    pub fn imm(value: Word) -> Self {
        OperandRead { reg: None, value }
    }
}

/// One executed instruction.
///
/// Operand slots: `const` has its immediate in slot 0; ALU ops read `a`, `b`;
/// `load` reads its base register; `store` reads the value register then the
/// base register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub core: CoreId,
    pub seq: u64,
    pub instr_index: usize,
    pub opcode: Opcode,
    pub dest: Option<Reg>,
    pub operands: [Option<OperandRead>; 2],
    /// Register result for compute/load, stored word for store.
    pub written: Option<Word>,
    pub addr: Option<Addr>,
    /// Slice fired atomically with this store, if any.
    pub assoc: Option<SliceId>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} c{} @{} {}", self.seq, self.core, self.instr_index, self.opcode)?;
        if let Some(d) = self.dest {
            write!(f, " dest={d}")?;
        }
        for op in self.operands.iter().flatten() {
            match op.reg {
                Some(r) => write!(f, " {r}={}", op.value)?,
                None => write!(f, " imm={}", op.value)?,
            }
        }
        if let Some(w) = self.written {
            write!(f, " val={w}")?;
        }
        if let Some(a) = self.addr {
            write!(f, " addr={a}")?;
        }
        if let Some(s) = self.assoc {
            write!(f, " assoc={}", s.0)?;
        }
        Ok(())
    }
}

/// Renders a trace in the stable one-event-per-line dump format.
pub fn dump_trace<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}
