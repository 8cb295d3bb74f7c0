//! One simulation: machine plus (optionally) a checkpoint engine, boundary
//! placement, error injection and recovery, with cost conservation checked
//! at the end.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Coordination, Engine, EngineConfig, IntegrityError, IntervalRecord, Meter};
use crate::cost::{Cost, CostEvent, CostLedger, CostParams};
use crate::isa::Word;
use crate::machine::{ArchSnapshot, Callback, CoreSet, Fault, IntervalId, Machine, Step};
use crate::program::Program;
use crate::recovery::{recovery_group, rollback, target_interval, ErrorEvent, ShadowOracle};
use crate::slice::SliceTable;
use crate::trace::TraceEvent;

#[derive(Clone, Debug)]
pub struct SimConfig {
    /// `None` runs without checkpointing at all.
    pub engine: Option<EngineConfig>,
    /// Progress values at which checkpoints are established.
    pub boundaries: Vec<u64>,
    pub errors: Vec<ErrorEvent>,
    pub line_words: u64,
    pub debug_oracle: bool,
    pub record_trace: bool,
}

impl SimConfig {
    pub fn plain() -> Self {
        SimConfig {
            engine: None,
            boundaries: Vec::new(),
            errors: Vec::new(),
            line_words: 1,
            debug_oracle: false,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub error: ErrorEvent,
    pub target: IntervalId,
    pub group: CoreSet,
    pub logged_words: u64,
    pub recomputed_words: u64,
    /// State digest right after undo and restore, before any re-execution.
    pub restored_hash: String,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub ledger: CostLedger,
    pub intervals: Vec<IntervalRecord>,
    pub recoveries: Vec<RecoveryRecord>,
    pub final_hash: String,
    pub progress: u64,
    pub clocks: Vec<Cost>,
    pub addr_map_overflow: u64,
    pub capacity_fallbacks: u64,
    pub oracle_checks: u64,
    pub trace: Vec<TraceEvent>,
    pub final_memory: Vec<Word>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Fault(#[from] Fault),
    #[error(transparent)]
    Integrity(#[from] IntegrityError),
    #[error("error schedule given without a checkpoint engine")]
    ErrorsWithoutEngine,
    #[error("cost conservation violated: clocks sum to {clocks}, ledger totals {ledger}")]
    Conservation { clocks: Cost, ledger: Cost },
}

struct Run {
    m: Machine,
    meter: Meter,
    engine: Option<Engine>,
    shadow: Option<ShadowOracle>,
    exec: Vec<Cost>,
    trace: Vec<TraceEvent>,
    record_trace: bool,
}

impl Run {
    fn absorb(&mut self, step: Step) -> Result<(), IntegrityError> {
        let c = step.event.core;
        self.exec[c] += self.meter.record_exec(step.event.opcode);
        if let Some(engine) = self.engine.as_mut() {
            for cb in step.callbacks {
                match cb {
                    Callback::FirstWrite { core, line, old } => {
                        engine.on_first_write(&mut self.m, &mut self.meter, core, line, old)?
                    }
                    Callback::Store { core, addr, assoc } => {
                        engine.on_store(&mut self.m, &mut self.meter, core, addr, assoc)?
                    }
                }
            }
        }
        if self.record_trace {
            self.trace.push(step.event);
        }
        Ok(())
    }

    fn establish(&mut self) {
        let engine = self.engine.as_mut().expect("boundaries need an engine");
        let id = engine.establish(&mut self.m, &mut self.meter, &self.exec);
        if let Some(s) = self.shadow.as_mut() {
            s.record(id, &self.m);
            let oldest = engine.logs().next().expect("nonempty").id;
            s.drop_before(oldest);
        }
    }

    /// Moves group core `c` into later intervals whose opening it has reached again.
    fn advance_epoch(&mut self, c: usize, group: CoreSet) {
        let engine = self.engine.as_mut().expect("catch-up needs an engine");
        while self.m.epoch(c) < engine.current() {
            let next = self.m.epoch(c) + 1;
            let opening = engine.log(next).expect("intervals after the target are retained").arch.cores[c].executed;
            if self.m.core(c).executed < opening {
                break;
            }
            let closing = self.m.epoch(c);
            let words = engine.log(next).expect("retained").arch.words_per_core();
            engine.charge_interval(&mut self.m, &mut self.meter, closing, c, CostEvent::ArchSave, words);
            if group.len() > 1 {
                engine.charge_interval(&mut self.m, &mut self.meter, closing, c, CostEvent::CoordCheckpoint, 1);
            }
            self.m.set_epoch(c, next);
            engine.reset_opening(next, CoreSet::single(c), &self.exec);
        }
    }

    fn recover(&mut self, err: &ErrorEvent, boundaries: &[u64], next_boundary: &mut usize) -> Result<RecoveryRecord, SimError> {
        let engine = self.engine.as_mut().expect("recovery needs an engine");
        let target = target_interval(engine, err.occur)?;
        let group = recovery_group(engine, &self.m, target, err.victim);
        let local = engine.config().coordination == Coordination::Local;
        let quotas: Vec<u64> = (0..self.m.cores()).map(|c| self.m.core(c).executed).collect();
        let cursor = self.m.cursor();
        let detection: Option<(Vec<Word>, ArchSnapshot)> =
            (local && self.shadow.is_some()).then(|| (self.m.data_memory().to_vec(), self.m.snapshot_arch()));

        let out = rollback(
            engine,
            &mut self.m,
            &mut self.meter,
            &self.exec,
            err,
            target,
            group,
            self.shadow.as_mut(),
        )?;
        let record = RecoveryRecord {
            error: *err,
            target,
            group,
            logged_words: out.logged_words,
            recomputed_words: out.recomputed_words,
            restored_hash: self.m.state_hash(),
        };

        if local {
            let mut rr = engine.log(target).expect("target retained").arch.cursor;
            loop {
                for c in group.iter() {
                    self.advance_epoch(c, group);
                }
                match self.m.step_next_within(group, &quotas, &mut rr)? {
                    Some(step) => self.absorb(step)?,
                    None => break,
                }
            }
            self.m.set_cursor(cursor);
            if let Some((memory, arch)) = detection {
                if memory != self.m.data_memory() {
                    return Err(IntegrityError::CatchUpMismatch("memory differs".into()).into());
                }
                if arch != self.m.snapshot_arch() {
                    return Err(IntegrityError::CatchUpMismatch("architectural state differs".into()).into());
                }
            }
        } else {
            let p = self.m.progress();
            *next_boundary = boundaries.partition_point(|&b| b <= p);
        }
        Ok(record)
    }
}

pub fn simulate(
    program: Arc<Program>,
    slices: Arc<SliceTable>,
    params: CostParams,
    cfg: &SimConfig,
) -> Result<SimResult, SimError> {
    if cfg.engine.is_none() && !cfg.errors.is_empty() {
        return Err(SimError::ErrorsWithoutEngine);
    }
    let mut m = Machine::new(program, slices, params)?.with_line_words(cfg.line_words);
    if cfg.engine.is_none() {
        m = m.without_tracking();
    }
    let n = m.cores();
    let exec = vec![Cost::ZERO; n];
    let engine = cfg.engine.map(|ec| Engine::new(ec, &m, &exec));
    let shadow = (cfg.debug_oracle && engine.is_some()).then(|| {
        let mut s = ShadowOracle::default();
        s.record(0, &m);
        s
    });
    let mut run = Run {
        m,
        meter: Meter::new(params),
        engine,
        shadow,
        exec,
        trace: Vec::new(),
        record_trace: cfg.record_trace,
    };

    let boundaries: &[u64] = if run.engine.is_some() { &cfg.boundaries } else { &[] };
    let mut next_boundary = 0;
    let mut next_error = 0;
    let mut recoveries = Vec::new();
    loop {
        let p = run.m.progress();
        while next_boundary < boundaries.len() && boundaries[next_boundary] <= p {
            if boundaries[next_boundary] == p {
                run.establish();
            }
            next_boundary += 1;
        }
        if next_error < cfg.errors.len() && cfg.errors[next_error].detect == p {
            let err = cfg.errors[next_error];
            next_error += 1;
            recoveries.push(run.recover(&err, boundaries, &mut next_boundary)?);
            continue;
        }
        match run.m.step_next()? {
            Some(step) => run.absorb(step)?,
            None => break,
        }
    }

    let (overflow, fallbacks, intervals) = match run.engine.as_mut() {
        Some(e) => {
            e.finish(&run.m, &mut run.meter);
            (e.overflow(), e.capacity_fallbacks(), e.history().to_vec())
        }
        None => (0, 0, Vec::new()),
    };
    let clocks: Vec<Cost> = (0..n).map(|c| run.m.clock(c)).collect();
    let total = run.m.total_clock();
    if total != run.meter.ledger.total() || run.meter.ledger.interval_sum() != run.meter.ledger.o_chk {
        return Err(SimError::Conservation {
            clocks: total,
            ledger: run.meter.ledger.total(),
        });
    }
    Ok(SimResult {
        ledger: run.meter.ledger,
        intervals,
        recoveries,
        final_hash: run.m.state_hash(),
        progress: run.m.progress(),
        clocks,
        addr_map_overflow: overflow,
        capacity_fallbacks: fallbacks,
        oracle_checks: run.shadow.as_ref().map_or(0, |s| s.checks()),
        trace: run.trace,
        final_memory: run.m.data_memory().to_vec(),
    })
}

/// Checkpoint boundaries splitting `total` instructions into `count + 1`
/// equal intervals.
pub fn uniform_boundaries(total: u64, count: u64) -> Vec<u64> {
    (1..=count).map(|i| total * i / (count + 1)).collect()
}

/// Shortest distance between consecutive boundaries, counting the start.
pub fn min_period(boundaries: &[u64], total: u64) -> u64 {
    let mut prev = 0;
    let mut min = u64::MAX;
    for &b in boundaries.iter().chain(std::iter::once(&total)) {
        min = min.min(b - prev);
        prev = b;
    }
    min
}
