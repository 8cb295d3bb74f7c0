//! Experiment driver: the nine configurations, sweeps and reports.
//!
//! A run goes calibration (plain execution, full trace) → slice extraction →
//! annotation → one simulation per configuration on the annotated program.
//! Checkpoints are placed at uniform quantiles of the calibration run's
//! instruction count.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{
    dump_checkpoints, Coordination, EngineConfig, IntervalRecord, Scheme, DEFAULT_ADDR_MAP_CAPACITY,
};
use crate::cost::{
    breakeven, edp, overhead_between, Cost, CostLedger, CostParams, ConfigError, IntervalFate,
};
use crate::program::Program;
use crate::recovery::{uniform_schedule, validate_schedule, ErrorEvent, ScheduleError};
use crate::sim::{min_period, simulate, uniform_boundaries, RecoveryRecord, SimConfig, SimError};
use crate::slice::{annotate, build_def_use, extract_all, AnnotateError, SliceLimits, SliceStats, SliceTable, TraceError};
use crate::trace::{dump_trace, TraceEvent};
use crate::workload::{generate, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigName {
    #[serde(rename = "No_Ckpt")]
    NoCkpt,
    #[serde(rename = "Ckpt_NE")]
    CkptNe,
    #[serde(rename = "Ckpt_E")]
    CkptE,
    #[serde(rename = "Amn_NE")]
    AmnNe,
    #[serde(rename = "Amn_E")]
    AmnE,
    #[serde(rename = "Ckpt_NE_Loc")]
    CkptNeLoc,
    #[serde(rename = "Ckpt_E_Loc")]
    CkptELoc,
    #[serde(rename = "Amn_NE_Loc")]
    AmnNeLoc,
    #[serde(rename = "Amn_E_Loc")]
    AmnELoc,
}

impl ConfigName {
    pub const ALL: [ConfigName; 9] = [
        ConfigName::NoCkpt,
        ConfigName::CkptNe,
        ConfigName::CkptE,
        ConfigName::AmnNe,
        ConfigName::AmnE,
        ConfigName::CkptNeLoc,
        ConfigName::CkptELoc,
        ConfigName::AmnNeLoc,
        ConfigName::AmnELoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfigName::NoCkpt => "No_Ckpt",
            ConfigName::CkptNe => "Ckpt_NE",
            ConfigName::CkptE => "Ckpt_E",
            ConfigName::AmnNe => "Amn_NE",
            ConfigName::AmnE => "Amn_E",
            ConfigName::CkptNeLoc => "Ckpt_NE_Loc",
            ConfigName::CkptELoc => "Ckpt_E_Loc",
            ConfigName::AmnNeLoc => "Amn_NE_Loc",
            ConfigName::AmnELoc => "Amn_E_Loc",
        }
    }

    pub fn scheme(self) -> Option<Scheme> {
        use ConfigName::*;
        match self {
            NoCkpt => None,
            CkptNe | CkptE | CkptNeLoc | CkptELoc => Some(Scheme::Baseline),
            AmnNe | AmnE | AmnNeLoc | AmnELoc => Some(Scheme::Amnesic),
        }
    }

    pub fn coordination(self) -> Coordination {
        use ConfigName::*;
        match self {
            CkptNeLoc | CkptELoc | AmnNeLoc | AmnELoc => Coordination::Local,
            _ => Coordination::Global,
        }
    }

    pub fn with_errors(self) -> bool {
        use ConfigName::*;
        matches!(self, CkptE | AmnE | CkptELoc | AmnELoc)
    }

    /// The baseline configuration an amnesic one is compared against.
    pub fn baseline_twin(self) -> Option<ConfigName> {
        use ConfigName::*;
        match self {
            AmnNe => Some(CkptNe),
            AmnE => Some(CkptE),
            AmnNeLoc => Some(CkptNeLoc),
            AmnELoc => Some(CkptELoc),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ConfigName::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown configuration `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSpec {
    /// Explicit occurrence times (progress units); overrides `count`.
    pub times: Option<Vec<u64>>,
    pub count: usize,
    /// Draw this many errors and keep the first `count` (sweeps over counts
    /// use one draw so smaller schedules are prefixes of larger ones).
    pub draw: Option<usize>,
    /// Defaults to half the shortest checkpoint period.
    pub latency: Option<u64>,
    /// Victim core for explicit times; drawn otherwise.
    pub victim: usize,
    pub seed: u64,
}

impl Default for ErrorSpec {
    fn default() -> Self {
        ErrorSpec {
            times: None,
            count: 1,
            draw: None,
            latency: None,
            victim: 0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workload: WorkloadSpec,
    pub checkpoints: u64,
    pub threshold: usize,
    pub max_leaves: usize,
    pub errors: ErrorSpec,
    pub costs: CostParams,
    pub addr_map_capacity: usize,
    pub line_words: u64,
    pub configs: Vec<ConfigName>,
    pub debug_oracle: bool,
    /// Keep line contents of every interval for the checkpoint dump.
    pub record_lines: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            workload: WorkloadSpec::default(),
            checkpoints: 25,
            threshold: crate::slice::DEFAULT_THRESHOLD,
            max_leaves: crate::slice::DEFAULT_MAX_LEAVES,
            errors: ErrorSpec::default(),
            costs: CostParams::default(),
            addr_map_capacity: DEFAULT_ADDR_MAP_CAPACITY,
            line_words: 1,
            configs: ConfigName::ALL.to_vec(),
            debug_oracle: false,
            record_lines: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<config>".into(),
            message: e.to_string(),
        })?;
        cfg.check()?;
        Ok(cfg)
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
        self.workload.check()?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.threshold == 0 {
            return bad("threshold must be positive");
        }
        if self.line_words == 0 {
            return bad("line_words must be positive");
        }
        if self.configs.is_empty() {
            return bad("no configurations selected");
        }
        Ok(())
    }

    pub fn limits(&self) -> SliceLimits {
        SliceLimits {
            threshold: self.threshold,
            max_leaves: self.max_leaves,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid program: {0}")]
    Program(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("{config}: {source}")]
    Sim {
        config: String,
        #[source]
        source: SimError,
    },
    #[error("malformed trace: {0}")]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error("integrity failure: {0}")]
    Integrity(String),
    #[error("writing {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// 2 for invalid configuration, 3 for integrity or verification failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Program(_) | HarnessError::Schedule(_) => 2,
            HarnessError::Sim {
                source: SimError::ErrorsWithoutEngine,
                ..
            } => 2,
            HarnessError::Sim { config, .. } if config == "calibration" => 2,
            HarnessError::Sim { .. }
            | HarnessError::Trace(_)
            | HarnessError::Annotate(_)
            | HarnessError::Integrity(_) => 3,
            HarnessError::Io { .. } => 1,
        }
    }
}

/// Everything the configurations share: the annotated program and placement.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub plain: Arc<Program>,
    pub program: Arc<Program>,
    pub slices: Arc<SliceTable>,
    pub stats: SliceStats,
    pub total: u64,
    pub boundaries: Vec<u64>,
    pub period: u64,
    pub achieved_fraction: Option<f64>,
    /// Final state of the annotated program run without checkpointing.
    pub reference_hash: String,
    pub trace: Vec<TraceEvent>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let g = generate(&cfg.workload)?;
    let mut p = prepare_program(g.program, cfg)?;
    p.achieved_fraction = Some(g.achieved_fraction);
    Ok(p)
}

/// Calibrates, extracts and annotates an arbitrary program.
pub fn prepare_program(program: Program, cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let diags = program.validate();
    if !diags.is_empty() {
        let msgs: Vec<String> = diags.iter().map(|d| d.message.clone()).collect();
        return Err(HarnessError::Program(msgs.join("; ")));
    }
    if program.is_annotated() {
        return Err(HarnessError::Program("expected a program without assoc markers".into()));
    }
    let plain = Arc::new(program);
    let sim = |source| HarnessError::Sim {
        config: "calibration".into(),
        source,
    };
    let mut calib_cfg = SimConfig::plain();
    calib_cfg.record_trace = true;
    calib_cfg.line_words = cfg.line_words;
    let calib = simulate(Arc::clone(&plain), Arc::new(SliceTable::default()), cfg.costs, &calib_cfg).map_err(sim)?;

    let index = build_def_use(&calib.trace, plain.read_only)?;
    let (slices, stats) = extract_all(&index, cfg.limits());
    for s in &slices {
        let stored = index
            .store_positions()
            .find(|&p| index.site_of(p) == s.target)
            .and_then(|p| calib.trace[p].written);
        if stored != Some(s.recompute()) {
            return Err(HarnessError::Integrity(format!(
                "slice {:?} does not reproduce the stored word",
                s.id
            )));
        }
    }
    let (annotated, table) = annotate(&plain, &slices)?;
    let program = Arc::new(annotated);
    let slices = Arc::new(table);
    let mut ref_cfg = SimConfig::plain();
    ref_cfg.line_words = cfg.line_words;
    let reference = simulate(Arc::clone(&program), Arc::clone(&slices), cfg.costs, &ref_cfg).map_err(sim)?;
    // Markers shift instruction indices but must not change the computation.
    if reference.progress != calib.progress || reference.final_memory != calib.final_memory {
        return Err(HarnessError::Integrity("annotation changed the program's behaviour".into()));
    }
    let total = calib.progress;
    let boundaries = uniform_boundaries(total, cfg.checkpoints);
    Ok(Prepared {
        plain,
        program,
        slices,
        stats,
        total,
        period: min_period(&boundaries, total),
        boundaries,
        achieved_fraction: None,
        reference_hash: reference.final_hash,
        trace: calib.trace,
    })
}

pub fn error_schedule(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<ErrorEvent>, HarnessError> {
    let e = &cfg.errors;
    let latency = e.latency.unwrap_or(prep.period / 2);
    let cores = prep.program.cores();
    let events = match &e.times {
        Some(times) => times.iter().map(|&t| ErrorEvent::new(t, latency, e.victim)).collect(),
        None => {
            let draw = e.draw.unwrap_or(e.count).max(e.count);
            let mut v = uniform_schedule(draw, prep.total, latency, cores, e.seed)?;
            v.truncate(e.count);
            v
        }
    };
    validate_schedule(&events, prep.total, prep.period, cores)?;
    Ok(events)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeTotals {
    pub gross_words: u64,
    pub omitted_words: u64,
    pub capture_words: u64,
    pub net_words: u64,
    /// Largest single checkpoint, in logged words.
    pub max_logged_words: u64,
    pub max_net_words: u64,
}

impl SizeTotals {
    pub fn of(intervals: &[IntervalRecord]) -> Self {
        let mut t = SizeTotals::default();
        for r in intervals.iter().filter(|r| r.fate != IntervalFate::Discarded) {
            t.gross_words += r.size.gross;
            t.omitted_words += r.size.omitted;
            t.capture_words += r.size.capture;
            t.net_words += r.size.net;
            t.max_logged_words = t.max_logged_words.max(r.size.logged());
            t.max_net_words = t.max_net_words.max(r.size.net);
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ConfigName,
    pub ledger: CostLedger,
    pub sizes: SizeTotals,
    pub intervals: Vec<IntervalRecord>,
    pub recoveries: Vec<RecoveryRecord>,
    pub final_hash: String,
    pub clocks: Vec<Cost>,
    pub addr_map_overflow: u64,
    pub capacity_fallbacks: u64,
    pub oracle_checks: u64,
}

pub fn run_config(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    name: ConfigName,
    errors: &[ErrorEvent],
) -> Result<RunResult, HarnessError> {
    let engine = name.scheme().map(|scheme| EngineConfig {
        scheme,
        coordination: name.coordination(),
        addr_map_capacity: cfg.addr_map_capacity,
        record_lines: cfg.record_lines,
    });
    let sim_cfg = SimConfig {
        engine,
        boundaries: prep.boundaries.clone(),
        errors: if name.with_errors() { errors.to_vec() } else { Vec::new() },
        line_words: cfg.line_words,
        debug_oracle: cfg.debug_oracle,
        record_trace: false,
    };
    let r = simulate(Arc::clone(&prep.program), Arc::clone(&prep.slices), cfg.costs, &sim_cfg).map_err(|source| {
        HarnessError::Sim {
            config: name.name().into(),
            source,
        }
    })?;
    Ok(RunResult {
        config: name,
        sizes: SizeTotals::of(&r.intervals),
        ledger: r.ledger,
        intervals: r.intervals,
        recoveries: r.recoveries,
        final_hash: r.final_hash,
        clocks: r.clocks,
        addr_map_overflow: r.addr_map_overflow,
        capacity_fallbacks: r.capacity_fallbacks,
        oracle_checks: r.oracle_checks,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub total_instructions: u64,
    pub checkpoints: u64,
    pub boundaries: Vec<u64>,
    pub errors: Vec<ErrorEvent>,
    pub slice_stats: SliceStats,
    pub achieved_fraction: Option<f64>,
    pub reference_hash: String,
    pub results: Vec<RunResult>,
}

impl Experiment {
    pub fn result(&self, name: ConfigName) -> Option<&RunResult> {
        self.results.iter().find(|r| r.config == name)
    }
}

/// Runs every selected configuration and checks that they all end in the
/// error-free final state.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, cfg)
}

pub fn run_prepared(prep: &Prepared, cfg: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    let errors = error_schedule(cfg, prep)?;
    let mut names = cfg.configs.clone();
    names.sort();
    names.dedup();
    let results: Vec<RunResult> = names
        .par_iter()
        .map(|&n| run_config(prep, cfg, n, &errors))
        .collect::<Result<_, _>>()?;
    for r in &results {
        if r.final_hash != prep.reference_hash {
            return Err(HarnessError::Integrity(format!(
                "{} ends in state {} but the error-free run ends in {}",
                r.config, r.final_hash, prep.reference_hash
            )));
        }
    }
    Ok(Experiment {
        total_instructions: prep.total,
        checkpoints: cfg.checkpoints,
        boundaries: prep.boundaries.clone(),
        errors,
        slice_stats: prep.stats.clone(),
        achieved_fraction: prep.achieved_fraction,
        reference_hash: prep.reference_hash.clone(),
        results,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Threshold,
    Errors,
    Checkpoints,
    Cores,
    Fraction,
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "threshold" => Ok(SweepAxis::Threshold),
            "errors" => Ok(SweepAxis::Errors),
            "checkpoints" => Ok(SweepAxis::Checkpoints),
            "cores" => Ok(SweepAxis::Cores),
            "fraction" => Ok(SweepAxis::Fraction),
            _ => Err(format!("unknown sweep axis `{s}`")),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Threshold => "threshold",
            SweepAxis::Errors => "errors",
            SweepAxis::Checkpoints => "checkpoints",
            SweepAxis::Cores => "cores",
            SweepAxis::Fraction => "fraction",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Both `None` for a plain run.
    pub axis: Option<SweepAxis>,
    pub value: Option<f64>,
    pub experiment: Experiment,
}

/// The configuration for one sweep point.
pub fn sweep_config(base: &ExperimentConfig, axis: SweepAxis, value: f64, all: &[f64]) -> Result<ExperimentConfig, ConfigError> {
    let mut c = base.clone();
    let whole = |v: f64| -> Result<u64, ConfigError> {
        if v < 0.0 || v.fract() != 0.0 {
            Err(ConfigError::Invalid(format!("{axis} takes whole numbers, got {v}")))
        } else {
            Ok(v as u64)
        }
    };
    match axis {
        SweepAxis::Threshold => c.threshold = whole(value)? as usize,
        SweepAxis::Errors => {
            c.errors.count = whole(value)? as usize;
            let max = all.iter().fold(0.0f64, |a, &b| a.max(b));
            c.errors.draw = Some(whole(max)? as usize);
        }
        SweepAxis::Checkpoints => c.checkpoints = whole(value)?,
        SweepAxis::Cores => {
            let per_core = base.workload.footprint / base.workload.cores as u64;
            c.workload.cores = whole(value)? as usize;
            c.workload.footprint = per_core * c.workload.cores as u64;
        }
        SweepAxis::Fraction => c.workload.recomputable_fraction = value,
    }
    c.check()?;
    Ok(c)
}

pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>, HarnessError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep needs at least one value".into()).into());
    }
    let cfgs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| sweep_config(base, axis, v, values))
        .collect::<Result<_, _>>()?;
    cfgs.par_iter()
        .zip(values)
        .map(|(c, &v)| {
            Ok(SweepPoint {
                axis: Some(axis),
                value: Some(v),
                experiment: run_experiment(c)?,
            })
        })
        .collect()
}

/// One report line per configuration; derived columns are recomputable
/// from the raw columns beside them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_value: Option<f64>,
    pub config: ConfigName,
    pub total_time: u64,
    pub total_energy: u64,
    pub base_time: u64,
    pub base_energy: u64,
    pub o_chk_time: u64,
    pub o_chk_energy: u64,
    pub o_waste_time: u64,
    pub o_waste_energy: u64,
    pub o_roll_back_time: u64,
    pub o_roll_back_energy: u64,
    pub o_rcmp_time: u64,
    pub o_rcmp_energy: u64,
    pub n_chk: u64,
    pub recoveries: u64,
    pub gross_words: u64,
    pub omitted_words: u64,
    pub capture_words: u64,
    pub net_words: u64,
    pub max_logged_words: u64,
    pub time_overhead_pct: Option<f64>,
    pub energy_overhead_pct: Option<f64>,
    pub edp: f64,
    /// Versus the baseline twin (amnesic rows only).
    pub edp_reduction_pct: Option<f64>,
    pub overall_reduction_pct: Option<f64>,
    pub max_reduction_pct: Option<f64>,
    pub net_reduction_pct: Option<f64>,
    pub breakeven_holds: Option<bool>,
    pub breakeven_margin_time: Option<i128>,
    pub breakeven_margin_energy: Option<i128>,
    pub addr_map_overflow: u64,
    pub final_hash: String,
}

fn pct(saved: f64, whole: f64) -> Option<f64> {
    (whole != 0.0).then(|| saved / whole * 100.0)
}

pub fn report_rows(exp: &Experiment, axis: Option<SweepAxis>, value: Option<f64>) -> Vec<ReportRow> {
    let reference = exp.result(ConfigName::NoCkpt).map(|r| r.ledger.total());
    exp.results
        .iter()
        .map(|r| {
            let l = &r.ledger;
            let total = l.total();
            let ov = reference.and_then(|b| overhead_between(total, b).ok());
            let twin = r.config.baseline_twin().and_then(|t| exp.result(t));
            let (mut edp_red, mut overall, mut max_red, mut net_red) = (None, None, None, None);
            let (mut be_holds, mut be_t, mut be_e) = (None, None, None);
            if r.config.scheme() == Some(Scheme::Amnesic) {
                overall = pct(r.sizes.omitted_words as f64, r.sizes.gross_words as f64);
                net_red = pct(
                    r.sizes.gross_words as f64 - r.sizes.net_words as f64,
                    r.sizes.gross_words as f64,
                );
            }
            if let Some(t) = twin {
                edp_red = crate::cost::edp_reduction(edp(total), edp(t.ledger.total())).ok();
                max_red = pct(
                    t.sizes.max_logged_words as f64 - r.sizes.max_logged_words as f64,
                    t.sizes.max_logged_words as f64,
                );
                if r.config.with_errors() {
                    if let Ok(b) = breakeven(l, &t.ledger) {
                        be_holds = Some(b.holds());
                        be_t = Some(b.aggregate_time.margin);
                        be_e = Some(b.aggregate_energy.margin);
                    }
                }
            }
            ReportRow {
                sweep_axis: axis,
                sweep_value: value,
                config: r.config,
                total_time: total.time,
                total_energy: total.energy,
                base_time: l.base().time,
                base_energy: l.base().energy,
                o_chk_time: l.o_chk.time,
                o_chk_energy: l.o_chk.energy,
                o_waste_time: l.o_waste.time,
                o_waste_energy: l.o_waste.energy,
                o_roll_back_time: l.o_roll_back.time,
                o_roll_back_energy: l.o_roll_back.energy,
                o_rcmp_time: l.o_rcmp.time,
                o_rcmp_energy: l.o_rcmp.energy,
                n_chk: l.n_chk,
                recoveries: l.recoveries.len() as u64,
                gross_words: r.sizes.gross_words,
                omitted_words: r.sizes.omitted_words,
                capture_words: r.sizes.capture_words,
                net_words: r.sizes.net_words,
                max_logged_words: r.sizes.max_logged_words,
                time_overhead_pct: ov.map(|o| o.time_pct),
                energy_overhead_pct: ov.map(|o| o.energy_pct),
                edp: edp(total),
                edp_reduction_pct: edp_red,
                overall_reduction_pct: overall,
                max_reduction_pct: max_red,
                net_reduction_pct: net_red,
                breakeven_holds: be_holds,
                breakeven_margin_time: be_t,
                breakeven_margin_energy: be_e,
                addr_map_overflow: r.addr_map_overflow,
                final_hash: r.final_hash.clone(),
            }
        })
        .collect()
}

/// Checkpoint size over time, one line per interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_value: Option<f64>,
    pub config: ConfigName,
    pub interval: u32,
    pub established_at: u64,
    pub fate: IntervalFate,
    pub gross_words: u64,
    pub omitted_words: u64,
    pub logged_words: u64,
    pub capture_words: u64,
    pub net_words: u64,
    pub reduction_pct: Option<f64>,
    pub o_wr_chk_time: u64,
    pub o_wr_chk_energy: u64,
}

pub fn interval_rows(exp: &Experiment, axis: Option<SweepAxis>, value: Option<f64>) -> Vec<IntervalRow> {
    exp.results
        .iter()
        .flat_map(|r| {
            r.intervals.iter().map(move |i| IntervalRow {
                sweep_axis: axis,
                sweep_value: value,
                config: r.config,
                interval: i.interval,
                established_at: i.established_at,
                fate: i.fate,
                gross_words: i.size.gross,
                omitted_words: i.size.omitted,
                logged_words: i.size.logged(),
                capture_words: i.size.capture,
                net_words: i.size.net,
                reduction_pct: pct(i.size.omitted as f64, i.size.gross as f64),
                o_wr_chk_time: i.o_wr_chk.time,
                o_wr_chk_energy: i.o_wr_chk.energy,
            })
        })
        .collect()
}

/// Raw results of a `run` or `sweep`, as written to `results.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub points: Vec<SweepPoint>,
}

impl ResultsFile {
    pub fn single(exp: Experiment) -> Self {
        ResultsFile {
            points: vec![SweepPoint {
                axis: None,
                value: None,
                experiment: exp,
            }],
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `report.csv`, `report.json` and `intervals.csv` into `dir`.
pub fn write_reports(dir: &Path, results: &ResultsFile) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for p in &results.points {
        rows.extend(report_rows(&p.experiment, p.axis, p.value));
        series.extend(interval_rows(&p.experiment, p.axis, p.value));
    }
    write_csv(&dir.join("report.csv"), &rows)?;
    write_json(&dir.join("report.json"), &rows)?;
    write_csv(&dir.join("intervals.csv"), &series)
}

/// Writes `results.json` (raw ledgers) plus the derived reports.
pub fn write_results(dir: &Path, results: &ResultsFile) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("results.json"), results)?;
    write_reports(dir, results)
}

pub fn read_results(path: &Path) -> Result<ResultsFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| {
        HarnessError::Config(ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

pub fn write_trace(path: &Path, trace: &[TraceEvent]) -> Result<(), HarnessError> {
    std::fs::write(path, dump_trace(trace)).map_err(io_err(path))
}

pub fn write_checkpoint_dump(path: &Path, exp: &Experiment) -> Result<(), HarnessError> {
    let mut out = String::new();
    for r in &exp.results {
        if r.config.scheme().is_none() {
            continue;
        }
        out.push_str(&format!("config {}\n", r.config));
        out.push_str(&dump_checkpoints(&r.intervals));
    }
    std::fs::write(path, out).map_err(io_err(path))
}
