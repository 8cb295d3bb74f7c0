//! Synthetic workloads with a tunable share of recomputable stores.
//!
//! Each core owns a block of read-only inputs and a block of mutable outputs
//! and sweeps over its outputs `iterations` times. Every output element is
//! computed by one pattern, picked per element by a seeded coin with bias
//! `recomputable_fraction`:
//!
//! * recomputable: a short ALU chain (2 to 10 ops) over at most four loaded
//!   inputs, so the extractor accepts it at the default threshold and leaf cap;
//! * not recomputable: a straight copy of a mutable word (nothing to
//!   recompute), a five-input sum (too many captured inputs) or a chain of
//!   11 to 48 ops (too long at the default threshold, accepted at larger ones).
//!
//! `mixed` also has cores 2k and 2k+1 read each other's outputs, so those
//! pairs communicate and no other pair does.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::ConfigError;
use crate::isa::{Addr, AluOp, Instruction, MemRef, Operand, Reg, Word};
use crate::program::{Program, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    StreamingStore,
    Reduction,
    Stencil,
    Mixed,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 4] = [
        WorkloadKind::StreamingStore,
        WorkloadKind::Reduction,
        WorkloadKind::Stencil,
        WorkloadKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::StreamingStore => "streaming-store",
            WorkloadKind::Reduction => "reduction",
            WorkloadKind::Stencil => "stencil",
            WorkloadKind::Mixed => "mixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub cores: usize,
    /// Sweeps over the output block.
    pub iterations: u32,
    /// Output words across all cores (the same number of read-only inputs is added).
    pub footprint: u64,
    pub recomputable_fraction: f64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Mixed,
            cores: 4,
            iterations: 20,
            footprint: 256,
            recomputable_fraction: 0.5,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let spec: WorkloadSpec = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<workload>".into(),
            message: e.to_string(),
        })?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.cores == 0 || self.cores > crate::machine::MAX_CORES {
            return bad(format!("cores must be in 1..={}, got {}", crate::machine::MAX_CORES, self.cores));
        }
        if self.kind == WorkloadKind::Mixed && !self.cores.is_multiple_of(2) && self.cores > 1 {
            return bad(format!("mixed workloads pair cores; {} is odd", self.cores));
        }
        if self.footprint / (self.cores as u64) < MIN_BLOCK {
            return bad(format!(
                "footprint {} gives fewer than {MIN_BLOCK} words per core",
                self.footprint
            ));
        }
        if !(0.0..=1.0).contains(&self.recomputable_fraction) {
            return bad(format!("recomputable_fraction {} outside [0, 1]", self.recomputable_fraction));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        Ok(())
    }
}

const MIN_BLOCK: u64 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub program: Program,
    /// Share of store executions built to be recomputable.
    pub achieved_fraction: f64,
    pub store_sites: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pattern {
    /// Chain over one or more read-only inputs.
    Short { ro_inputs: u64, len: usize },
    /// Chain over the partner core's output word plus one read-only input.
    Shared { len: usize },
    Copy,
    /// Straight copy of the partner core's output word.
    SharedCopy,
    Wide,
    Long { len: usize },
}

impl Pattern {
    fn recomputable(self) -> bool {
        matches!(self, Pattern::Short { .. } | Pattern::Shared { .. })
    }
}

struct Layout {
    block: u64,
    ro: Region,
    data: Region,
}

impl Layout {
    fn ro(&self, core: usize, i: u64) -> Addr {
        self.ro.lo + core as u64 * self.block + i % self.block
    }

    fn out(&self, core: usize, i: u64) -> Addr {
        self.data.lo + core as u64 * self.block + i % self.block
    }
}

const ACC: Reg = Reg(1);
const TMP: Reg = Reg(2);

fn mem(addr: Addr) -> MemRef {
    MemRef {
        base: Reg(0),
        offset: addr as i64,
    }
}

fn load(dest: Reg, addr: Addr) -> Instruction {
    Instruction::Load { dest, addr: mem(addr) }
}

fn alu(op: AluOp, dest: Reg, a: Reg, b: Operand) -> Instruction {
    Instruction::Alu {
        op,
        dest,
        a: Operand::Reg(a),
        b,
    }
}

/// Appends `n` dependent ops on the accumulator.
fn chain(code: &mut Vec<Instruction>, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let op = *[AluOp::Add, AluOp::Mul, AluOp::Xor, AluOp::Sub]
            .choose(rng)
            .expect("nonempty");
        let imm = match op {
            AluOp::Mul => rng.gen_range(2..=7),
            _ => rng.gen_range(1..=97),
        };
        code.push(alu(op, ACC, ACC, Operand::Imm(imm)));
    }
}

/// Loads `inputs` words and folds them into the accumulator (`inputs - 1` adds).
fn gather(code: &mut Vec<Instruction>, addrs: &[Addr]) {
    code.push(load(ACC, addrs[0]));
    for &a in &addrs[1..] {
        code.push(load(TMP, a));
        code.push(alu(AluOp::Add, ACC, ACC, Operand::Reg(TMP)));
    }
}

fn emit(code: &mut Vec<Instruction>, rng: &mut ChaCha8Rng, lay: &Layout, core: usize, i: u64, p: Pattern) {
    let b = lay.block;
    match p {
        Pattern::Short { ro_inputs, len } => {
            let addrs: Vec<Addr> = (0..ro_inputs).map(|k| lay.ro(core, i + k)).collect();
            gather(code, &addrs);
            chain(code, rng, len - (ro_inputs as usize - 1));
        }
        Pattern::Shared { len } => {
            let partner = core ^ 1;
            gather(code, &[lay.out(partner, i), lay.ro(core, i)]);
            chain(code, rng, len - 1);
        }
        Pattern::Copy => code.push(load(ACC, lay.out(core, i + 1))),
        Pattern::SharedCopy => code.push(load(ACC, lay.out(core ^ 1, i))),
        Pattern::Wide => {
            let addrs: Vec<Addr> = (0..5).map(|k| lay.out(core, i + b - 2 + k)).collect();
            gather(code, &addrs);
        }
        Pattern::Long { len } => {
            code.push(load(ACC, lay.ro(core, i)));
            chain(code, rng, len);
        }
    }
    code.push(Instruction::Store {
        src: ACC,
        addr: mem(lay.out(core, i)),
    });
}

fn pick(kind: WorkloadKind, rng: &mut ChaCha8Rng, recomputable: bool, shared_ok: bool) -> Pattern {
    let kind = if kind == WorkloadKind::Mixed {
        if shared_ok && rng.gen_bool(0.25) {
            return if recomputable {
                Pattern::Shared {
                    len: rng.gen_range(2..=10),
                }
            } else {
                Pattern::SharedCopy
            };
        }
        *[WorkloadKind::StreamingStore, WorkloadKind::Reduction, WorkloadKind::Stencil]
            .choose(rng)
            .expect("nonempty")
    } else {
        kind
    };
    match (kind, recomputable) {
        (WorkloadKind::StreamingStore, true) => Pattern::Short {
            ro_inputs: 1,
            len: rng.gen_range(2..=10),
        },
        (WorkloadKind::StreamingStore, false) => Pattern::Copy,
        (WorkloadKind::Reduction, true) => Pattern::Short {
            ro_inputs: 2,
            len: rng.gen_range(2..=10),
        },
        (WorkloadKind::Reduction, false) => Pattern::Long {
            len: rng.gen_range(11..=48),
        },
        (WorkloadKind::Stencil, true) => Pattern::Short {
            ro_inputs: 3,
            len: rng.gen_range(3..=10),
        },
        (WorkloadKind::Stencil, false) => Pattern::Wide,
        (WorkloadKind::Mixed, _) => unreachable!("resolved above"),
    }
}

pub fn generate(spec: &WorkloadSpec) -> Result<Generated, ConfigError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.cores;
    let block = spec.footprint / n as u64;
    let span = block * n as u64;
    let lay = Layout {
        block,
        ro: Region::new(0, span),
        data: Region::new(span, 2 * span),
    };

    let mut p = Program::new(n);
    p.read_only = lay.ro;
    p.data = lay.data;
    for a in lay.ro.lo..lay.data.hi {
        let v: Word = rng.gen_range(-1000..=1000);
        if v != 0 {
            p.init.push((a, v));
        }
    }

    let mut recomputable_sites = 0usize;
    let mut sites = 0usize;
    for core in 0..n {
        let shared_ok = spec.kind == WorkloadKind::Mixed && n > 1;
        let mut body = Vec::new();
        for i in 0..block {
            let recomputable = rng.gen_bool(spec.recomputable_fraction);
            let pat = pick(spec.kind, &mut rng, recomputable, shared_ok);
            if pat.recomputable() {
                recomputable_sites += 1;
            }
            sites += 1;
            emit(&mut body, &mut rng, &lay, core, i, pat);
        }
        let stream = &mut p.streams[core];
        stream.push(Instruction::Repeat {
            count: spec.iterations,
        });
        stream.extend(body);
        stream.push(Instruction::End);
        stream.push(Instruction::Halt);
    }
    Ok(Generated {
        program: p,
        achieved_fraction: recomputable_sites as f64 / sites as f64,
        store_sites: sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_valid() {
        for kind in WorkloadKind::ALL {
            let spec = WorkloadSpec {
                kind,
                ..WorkloadSpec::default()
            };
            let a = generate(&spec).unwrap();
            assert_eq!(a, generate(&spec).unwrap());
            assert!(a.program.validate().is_empty(), "{kind:?}: {:?}", a.program.validate());
        }
    }

    #[test]
    fn spec_parses_from_key_value_text() {
        let s = WorkloadSpec::from_toml(
            "kind = \"stencil\"\ncores = 2\niterations = 3\nfootprint = 64\nrecomputable_fraction = 0.25\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(s.kind, WorkloadKind::Stencil);
        assert_eq!(s.cores, 2);
        assert!(WorkloadSpec::from_toml("kind = \"stencil\"\nbogus = 1").is_err());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut s = WorkloadSpec {
            footprint: 8,
            ..Default::default()
        };
        assert!(generate(&s).is_err());
        s = WorkloadSpec::default();
        s.recomputable_fraction = 1.5;
        assert!(generate(&s).is_err());
        s = WorkloadSpec::default();
        s.cores = 3;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn fraction_extremes() {
        for f in [0.0, 1.0] {
            let g = generate(&WorkloadSpec {
                recomputable_fraction: f,
                ..WorkloadSpec::default()
            })
            .unwrap();
            assert_eq!(g.achieved_fraction, f);
        }
    }
}
