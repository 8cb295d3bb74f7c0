#![allow(dead_code)]

use proptest::prelude::*;

/// Straight-line single- or multi-core programs over a small address space:
/// read-only words 0..8, mutable words 8..24.
pub fn program_text(cores: usize, bodies: &[Vec<Op>]) -> String {
    let mut s = String::from(".registers 8\n.ro 0 8\n.data 8 24\n");
    for a in 0..24 {
        s.push_str(&format!(".init {a} {}\n", (a * 7) % 13 - 6));
    }
    for (c, body) in bodies.iter().enumerate().take(cores) {
        s.push_str(&format!(".core {c}\n"));
        for op in body {
            s.push_str(&op.text());
            s.push('\n');
        }
        s.push_str("halt\n");
    }
    s
}

#[derive(Clone, Debug)]
pub enum Op {
    Const(u8, i64),
    Alu(&'static str, u8, u8, Result<u8, i64>),
    Load(u8, u64),
    Store(u8, u64),
    Repeat(u32, Vec<Op>),
}

impl Op {
    fn text(&self) -> String {
        match self {
            Op::Const(d, v) => format!("const r{d}, {v}"),
            Op::Alu(op, d, a, Ok(b)) => format!("{op} r{d}, r{a}, r{b}"),
            Op::Alu(op, d, a, Err(k)) => format!("{op} r{d}, r{a}, {k}"),
            Op::Load(d, a) => format!("load r{d}, [r0+{a}]"),
            Op::Store(s, a) => format!("store r{s}, [r0+{a}]"),
            Op::Repeat(n, body) => {
                let mut s = format!("repeat {n}\n");
                for op in body {
                    s.push_str(&op.text());
                    s.push('\n');
                }
                s.push_str("end");
                s
            }
        }
    }
}

fn reg() -> impl Strategy<Value = u8> {
    1u8..8
}

pub fn flat_op(data: std::ops::Range<u64>) -> impl Strategy<Value = Op> {
    let ops = prop::sample::select(vec!["add", "sub", "mul", "xor", "and", "or"]);
    prop_oneof![
        1 => (reg(), -20i64..20).prop_map(|(d, v)| Op::Const(d, v)),
        3 => (ops, reg(), reg(), prop_oneof![reg().prop_map(Ok), (-9i64..9).prop_map(Err)])
            .prop_map(|(o, d, a, b)| Op::Alu(o, d, a, b)),
        1 => (reg(), 0u64..24).prop_map(|(d, a)| Op::Load(d, a)),
        2 => (reg(), data).prop_map(|(s, a)| Op::Store(s, a)),
    ]
}

pub fn body(data: std::ops::Range<u64>, len: usize) -> impl Strategy<Value = Vec<Op>> {
    let flat = flat_op(data.clone());
    let looped = (2u32..4, prop::collection::vec(flat_op(data), 1..6)).prop_map(|(n, b)| Op::Repeat(n, b));
    prop::collection::vec(prop_oneof![6 => flat, 1 => looped], 1..len)
}

pub fn cores_and_bodies() -> impl Strategy<Value = (usize, Vec<Vec<Op>>)> {
    (1usize..=4).prop_flat_map(|n| (Just(n), prop::collection::vec(body(8..24, 25), n)))
}
