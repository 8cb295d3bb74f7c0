//! Line-oriented text format for programs and their slice tables.
//!
//! ```text
//! program   := { line "\n" }
//! line      := [ directive | instr ] [ "#" comment ]
//! directive := ".registers" N | ".ro" LO HI | ".data" LO HI | ".init" ADDR VALUE
//!            | ".core" N
//!            | ".slice" ID "core=" N "site=" N "occ=" N "addr=" ADDR
//!            | ".leaf" SLOT VALUE ("ro" | "boundary") | ".op" instr | ".endslice"
//! instr     := "const" reg "," int
//!            | alu reg "," operand "," operand
//!            | "load" reg "," mem | "store" reg "," mem
//!            | "assoc" mem "," N | "repeat" N | "end" | "halt"
//! alu       := "add" | "sub" | "mul" | "xor" | "and" | "or" | "shl"
//! operand   := reg | int
//! mem       := "[" reg [ ("+" | "-") N ] "]"
//! reg       := "r" N
//! ```
//!
//! `.core N` starts the stream of core `N`; cores must appear in order.

use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{Instruction, MemRef, Opcode, Operand, Reg, Word};
use crate::program::{Program, Region};
use crate::slice::{Leaf, LeafProvenance, RSlice, SiteKey, SliceId, SliceTable};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}, byte offset {offset}: {message}")]
pub struct ParseError {
    pub line: usize,
    /// Byte offset of the start of the offending line within the input.
    pub offset: usize,
    pub message: String,
}

pub fn serialize_program(p: &Program) -> String {
    let mut out = String::new();
    write_program(&mut out, p);
    out
}

pub fn serialize_annotated(p: &Program, table: &SliceTable) -> String {
    let mut out = String::new();
    write_program(&mut out, p);
    for s in table.slices() {
        let _ = writeln!(
            out,
            ".slice {} core={} site={} occ={} addr={}",
            s.id.0, s.target.core, s.target.instr_index, s.target.occurrence, s.target_addr
        );
        for leaf in &s.leaves {
            let prov = match leaf.provenance {
                LeafProvenance::ReadOnlyLoad => "ro",
                LeafProvenance::Boundary => "boundary",
            };
            let _ = writeln!(out, ".leaf {} {} {}", leaf.slot, leaf.value, prov);
        }
        for i in &s.instructions {
            let _ = writeln!(out, ".op {i}");
        }
        out.push_str(".endslice\n");
    }
    out
}

fn write_program(out: &mut String, p: &Program) {
    let _ = writeln!(out, ".registers {}", p.registers);
    let _ = writeln!(out, ".ro {} {}", p.read_only.lo, p.read_only.hi);
    let _ = writeln!(out, ".data {} {}", p.data.lo, p.data.hi);
    for (a, v) in &p.init {
        let _ = writeln!(out, ".init {a} {v}");
    }
    for (c, stream) in p.streams.iter().enumerate() {
        let _ = writeln!(out, ".core {c}");
        let mut depth = 1;
        for i in stream {
            if matches!(i, Instruction::End) {
                depth = (depth - 1).max(1);
            }
            let _ = writeln!(out, "{:indent$}{i}", "", indent = depth * 2);
            if matches!(i, Instruction::Repeat { .. }) {
                depth += 1;
            }
        }
    }
}

pub fn parse_program(input: &str) -> Result<Program, ParseError> {
    let (p, table) = parse_annotated(input)?;
    if !table.is_empty() {
        return Err(ParseError {
            line: 0,
            offset: 0,
            message: "unexpected slice table in plain program".into(),
        });
    }
    Ok(p)
}

/// Byte-level entry point; invalid UTF-8 is reported at its offset.
pub fn parse_program_bytes(bytes: &[u8]) -> Result<Program, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let offset = e.valid_up_to();
        ParseError {
            line: bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1,
            offset,
            message: "invalid UTF-8".into(),
        }
    })?;
    parse_program(text)
}

struct PendingSlice {
    id: SliceId,
    target: SiteKey,
    addr: u64,
    leaves: Vec<Leaf>,
    instructions: Vec<Instruction>,
}

pub fn parse_annotated(input: &str) -> Result<(Program, SliceTable), ParseError> {
    let mut program = Program::new(0);
    let mut table = SliceTable::default();
    let mut current_core: Option<usize> = None;
    let mut pending: Option<PendingSlice> = None;
    let mut offset = 0usize;

    for (lineno, raw) in input.split_inclusive('\n').enumerate() {
        let line_start = offset;
        offset += raw.len();
        let err = |message: String| ParseError {
            line: lineno + 1,
            offset: line_start,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (head, rest) = split_head(line);
        if pending.is_some() && !matches!(head, ".leaf" | ".op" | ".endslice") {
            return Err(err(format!("expected .leaf, .op or .endslice, found `{head}`")));
        }
        match head {
            ".registers" => program.registers = parse_uint(rest).map_err(err)? as usize,
            ".ro" => program.read_only = parse_region(rest).map_err(err)?,
            ".data" => program.data = parse_region(rest).map_err(err)?,
            ".init" => {
                let f = fields(rest, 2).map_err(err)?;
                program
                    .init
                    .push((parse_uint(f[0]).map_err(err)?, parse_int(f[1]).map_err(err)?));
            }
            ".core" => {
                let c = parse_uint(rest).map_err(err)? as usize;
                if c != program.streams.len() {
                    return Err(err(format!(
                        "expected .core {}, found .core {c}",
                        program.streams.len()
                    )));
                }
                program.streams.push(Vec::new());
                current_core = Some(c);
            }
            ".slice" => {
                let f = fields(rest, 5).map_err(err)?;
                let id = SliceId(parse_uint(f[0]).map_err(err)? as u32);
                let core = parse_uint(keyed(f[1], "core").map_err(err)?).map_err(err)? as usize;
                let site = parse_uint(keyed(f[2], "site").map_err(err)?).map_err(err)? as usize;
                let occ = parse_uint(keyed(f[3], "occ").map_err(err)?).map_err(err)?;
                let addr = parse_uint(keyed(f[4], "addr").map_err(err)?).map_err(err)?;
                pending = Some(PendingSlice {
                    id,
                    target: SiteKey {
                        core,
                        instr_index: site,
                        occurrence: occ,
                    },
                    addr,
                    leaves: Vec::new(),
                    instructions: Vec::new(),
                });
            }
            ".leaf" | ".op" | ".endslice" => {
                let Some(ps) = pending.as_mut() else {
                    return Err(err(format!("`{head}` outside a .slice block")));
                };
                match head {
                    ".leaf" => {
                        let f = fields(rest, 3).map_err(err)?;
                        let provenance = match f[2] {
                            "ro" => LeafProvenance::ReadOnlyLoad,
                            "boundary" => LeafProvenance::Boundary,
                            other => return Err(err(format!("unknown leaf provenance `{other}`"))),
                        };
                        ps.leaves.push(Leaf {
                            slot: parse_uint(f[0]).map_err(err)? as u16,
                            value: parse_int(f[1]).map_err(err)?,
                            provenance,
                        });
                    }
                    ".op" => ps.instructions.push(parse_instruction(rest).map_err(err)?),
                    _ => {
                        let ps = pending.take().expect("checked above");
                        let slice = RSlice {
                            id: ps.id,
                            target: ps.target,
                            target_addr: ps.addr,
                            leaves: ps.leaves,
                            instructions: ps.instructions,
                        };
                        table.insert(slice).map_err(|e| err(e.to_string()))?;
                    }
                }
            }
            _ if head.starts_with('.') => return Err(err(format!("unknown directive `{head}`"))),
            _ => {
                let Some(c) = current_core else {
                    return Err(err("instruction before any .core directive".into()));
                };
                program.streams[c].push(parse_instruction(line).map_err(err)?);
            }
        }
    }
    if pending.is_some() {
        return Err(ParseError {
            line: input.lines().count(),
            offset: input.len(),
            message: "unterminated .slice block".into(),
        });
    }
    Ok((program, table))
}

fn split_head(line: &str) -> (&str, &str) {
    match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], line[i..].trim()),
        None => (line, ""),
    }
}

fn fields(rest: &str, n: usize) -> Result<Vec<&str>, String> {
    let f: Vec<&str> = rest.split_whitespace().collect();
    if f.len() != n {
        return Err(format!("expected {n} fields, found {}", f.len()));
    }
    Ok(f)
}

fn keyed<'a>(field: &'a str, key: &str) -> Result<&'a str, String> {
    field
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| format!("expected `{key}=`, found `{field}`"))
}

fn parse_uint(s: &str) -> Result<u64, String> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| format!("expected unsigned integer, found `{}`", s.trim()))
}

fn parse_int(s: &str) -> Result<Word, String> {
    s.trim()
        .parse::<Word>()
        .map_err(|_| format!("expected integer, found `{}`", s.trim()))
}

fn parse_region(rest: &str) -> Result<Region, String> {
    let f = fields(rest, 2)?;
    Ok(Region::new(parse_uint(f[0])?, parse_uint(f[1])?))
}

fn parse_reg(s: &str) -> Result<Reg, String> {
    let s = s.trim();
    s.strip_prefix('r')
        .and_then(|n| n.parse::<u16>().ok())
        .map(Reg)
        .ok_or_else(|| format!("expected register, found `{s}`"))
}

fn parse_operand(s: &str) -> Result<Operand, String> {
    let s = s.trim();
    if s.starts_with('r') {
        parse_reg(s).map(Operand::Reg)
    } else {
        parse_int(s).map(Operand::Imm)
    }
}

fn parse_mem(s: &str) -> Result<MemRef, String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("expected `[reg +/- offset]`, found `{s}`"))?;
    let (base, offset) = if let Some(i) = inner.find(['+', '-']) {
        let mag = parse_uint(&inner[i + 1..])? as i64;
        let off = if inner.as_bytes()[i] == b'-' { -mag } else { mag };
        (&inner[..i], off)
    } else {
        (inner, 0)
    };
    Ok(MemRef {
        base: parse_reg(base)?,
        offset,
    })
}

/// Splits operands on commas that are not inside brackets.
fn operands(rest: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, ch) in rest.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(rest[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = rest[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

pub fn parse_instruction(line: &str) -> Result<Instruction, String> {
    let (head, rest) = split_head(line.trim());
    let op = Opcode::from_mnemonic(head).ok_or_else(|| format!("unknown mnemonic `{head}`"))?;
    let args = operands(rest);
    let want = |n: usize| -> Result<(), String> {
        if args.len() != n {
            Err(format!("`{head}` takes {n} operand(s), found {}", args.len()))
        } else {
            Ok(())
        }
    };
    Ok(match op {
        Opcode::Const => {
            want(2)?;
            Instruction::Const {
                dest: parse_reg(args[0])?,
                imm: parse_int(args[1])?,
            }
        }
        Opcode::Load => {
            want(2)?;
            Instruction::Load {
                dest: parse_reg(args[0])?,
                addr: parse_mem(args[1])?,
            }
        }
        Opcode::Store => {
            want(2)?;
            Instruction::Store {
                src: parse_reg(args[0])?,
                addr: parse_mem(args[1])?,
            }
        }
        Opcode::AssocAddr => {
            want(2)?;
            Instruction::AssocAddr {
                addr: parse_mem(args[0])?,
                site: parse_uint(args[1])? as u32,
            }
        }
        Opcode::Repeat => {
            want(1)?;
            Instruction::Repeat {
                count: parse_uint(args[0])? as u32,
            }
        }
        Opcode::End => {
            want(0)?;
            Instruction::End
        }
        Opcode::Halt => {
            want(0)?;
            Instruction::Halt
        }
        _ => {
            want(3)?;
            Instruction::Alu {
                op: op.alu().expect("remaining opcodes are ALU ops"),
                dest: parse_reg(args[0])?,
                a: parse_operand(args[1])?,
                b: parse_operand(args[2])?,
            }
        }
    })
}
