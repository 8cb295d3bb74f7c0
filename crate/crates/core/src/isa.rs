//! The mini instruction set: 64-bit two's-complement words, a flat register
//! file, base+offset addressing and a bounded `repeat` loop construct.

use std::fmt;

use serde::{Deserialize, Serialize};

pub type Word = i64;
pub type Addr = u64;
pub type CoreId = usize;

/// Default architectural register count.
pub const DEFAULT_REGISTERS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reg(pub u16);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(Word),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v}"),
        }
    }
}

/// `[base + offset]` address expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemRef {
    pub base: Reg,
    pub offset: i64,
}

impl fmt::Display for MemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.offset < 0 {
            write!(f, "[{} - {}]", self.base, self.offset.unsigned_abs())
        } else {
            write!(f, "[{} + {}]", self.base, self.offset)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
}

impl AluOp {
    pub const ALL: [AluOp; 7] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Mul,
        AluOp::Xor,
        AluOp::And,
        AluOp::Or,
        AluOp::Shl,
    ];

    /// Wrapping 64-bit semantics; shift amounts are masked to `[0, 63]`.
    pub fn eval(self, a: Word, b: Word) -> Word {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Xor => a ^ b,
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Shl => a.wrapping_shl((b & 63) as u32),
        }
    }

    pub fn opcode(self) -> Opcode {
        match self {
            AluOp::Add => Opcode::Add,
            AluOp::Sub => Opcode::Sub,
            AluOp::Mul => Opcode::Mul,
            AluOp::Xor => Opcode::Xor,
            AluOp::And => Opcode::And,
            AluOp::Or => Opcode::Or,
            AluOp::Shl => Opcode::Shl,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opcode {
    Const,
    Add,
    Sub,
    Mul,
    Xor,
    And,
    Or,
    Shl,
    Load,
    Store,
    AssocAddr,
    Repeat,
    End,
    Halt,
}

impl Opcode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Const => "const",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Xor => "xor",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Shl => "shl",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::AssocAddr => "assoc",
            Opcode::Repeat => "repeat",
            Opcode::End => "end",
            Opcode::Halt => "halt",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Some(match s {
            "const" => Opcode::Const,
            "add" => Opcode::Add,
            "sub" => Opcode::Sub,
            "mul" => Opcode::Mul,
            "xor" => Opcode::Xor,
            "and" => Opcode::And,
            "or" => Opcode::Or,
            "shl" => Opcode::Shl,
            "load" => Opcode::Load,
            "store" => Opcode::Store,
            "assoc" => Opcode::AssocAddr,
            "repeat" => Opcode::Repeat,
            "end" => Opcode::End,
            "halt" => Opcode::Halt,
            _ => return None,
        })
    }

    pub fn alu(self) -> Option<AluOp> {
        Some(match self {
            Opcode::Add => AluOp::Add,
            Opcode::Sub => AluOp::Sub,
            Opcode::Mul => AluOp::Mul,
            Opcode::Xor => AluOp::Xor,
            Opcode::And => AluOp::And,
            Opcode::Or => AluOp::Or,
            Opcode::Shl => AluOp::Shl,
            _ => return None,
        })
    }

    /// Arithmetic/logic ops, including `const`: the only opcodes allowed in a slice.
    pub fn is_compute(self) -> bool {
        self == Opcode::Const || self.alu().is_some()
    }

    /// Structural ops that steer control flow but never produce a trace event.
    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Repeat | Opcode::End)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Const { dest: Reg, imm: Word },
    Alu { op: AluOp, dest: Reg, a: Operand, b: Operand },
    Load { dest: Reg, addr: MemRef },
    Store { src: Reg, addr: MemRef },
    /// Pairs the immediately preceding store with the slice table. `site`
    /// is that store's instruction index; the dynamic occurrence picks the slice.
    AssocAddr { addr: MemRef, site: u32 },
    Repeat { count: u32 },
    End,
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Const { .. } => Opcode::Const,
            Instruction::Alu { op, .. } => op.opcode(),
            Instruction::Load { .. } => Opcode::Load,
            Instruction::Store { .. } => Opcode::Store,
            Instruction::AssocAddr { .. } => Opcode::AssocAddr,
            Instruction::Repeat { .. } => Opcode::Repeat,
            Instruction::End => Opcode::End,
            Instruction::Halt => Opcode::Halt,
        }
    }

    pub fn dest(&self) -> Option<Reg> {
        match *self {
            Instruction::Const { dest, .. }
            | Instruction::Alu { dest, .. }
            | Instruction::Load { dest, .. } => Some(dest),
            _ => None,
        }
    }

    /// Every register the instruction names, destination included.
    pub fn registers(&self) -> Vec<Reg> {
        let mut regs = Vec::with_capacity(3);
        match *self {
            Instruction::Const { dest, .. } => regs.push(dest),
            Instruction::Alu { dest, a, b, .. } => {
                regs.push(dest);
                for op in [a, b] {
                    if let Operand::Reg(r) = op {
                        regs.push(r);
                    }
                }
            }
            Instruction::Load { dest, addr } => {
                regs.push(dest);
                regs.push(addr.base);
            }
            Instruction::Store { src, addr } => {
                regs.push(src);
                regs.push(addr.base);
            }
            Instruction::AssocAddr { addr, .. } => regs.push(addr.base),
            Instruction::Repeat { .. } | Instruction::End | Instruction::Halt => {}
        }
        regs
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Const { dest, imm } => write!(f, "const {dest}, {imm}"),
            Instruction::Alu { op, dest, a, b } => {
                write!(f, "{} {dest}, {a}, {b}", op.opcode().mnemonic())
            }
            Instruction::Load { dest, addr } => write!(f, "load {dest}, {addr}"),
            Instruction::Store { src, addr } => write!(f, "store {src}, {addr}"),
            Instruction::AssocAddr { addr, site } => write!(f, "assoc {addr}, {site}"),
            Instruction::Repeat { count } => write!(f, "repeat {count}"),
            Instruction::End => f.write_str("end"),
            Instruction::Halt => f.write_str("halt"),
        }
    }
}
