use std::fs;
use std::process::Command;

use amnesic::harness::{
    prepare_program, report_rows, run_experiment, run_prepared, sweep, write_results, ConfigName, ExperimentConfig,
    ResultsFile, SweepAxis,
};
use amnesic::text::parse_program;
use amnesic::workload::{WorkloadKind, WorkloadSpec};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        workload: WorkloadSpec {
            kind: WorkloadKind::Mixed,
            cores: 2,
            iterations: 6,
            footprint: 64,
            ..Default::default()
        },
        checkpoints: 6,
        ..Default::default()
    }
}

#[test]
fn no_ckpt_alone_reports_zero_overhead() {
    let cfg = ExperimentConfig {
        configs: vec![ConfigName::NoCkpt],
        ..small()
    };
    let e = run_experiment(&cfg).unwrap();
    let rows = report_rows(&e, None, None);
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.o_chk_time, r.o_waste_time, r.o_roll_back_time, r.o_rcmp_time), (0, 0, 0, 0));
    assert_eq!(r.time_overhead_pct, Some(0.0));
    assert_eq!(r.energy_overhead_pct, Some(0.0));
    assert_eq!(r.n_chk, 0);
}

#[test]
fn checkpointing_costs_time_and_omission_saves_words() {
    let mut cfg = small();
    cfg.workload.recomputable_fraction = 1.0;
    let e = run_experiment(&cfg).unwrap();
    let rows = report_rows(&e, None, None);
    let row = |n| rows.iter().find(|r| r.config == n).unwrap();
    assert!(row(ConfigName::CkptNe).time_overhead_pct.unwrap() > 0.0);
    let (c, a) = (row(ConfigName::CkptNe), row(ConfigName::AmnNe));
    assert!(a.gross_words - a.omitted_words < c.gross_words);
    // Derived columns follow from the raw ones beside them.
    let overall = a.omitted_words as f64 / a.gross_words as f64 * 100.0;
    assert_eq!(a.overall_reduction_pct, Some(overall));
    assert_eq!(a.edp, a.total_time as f64 * a.total_energy as f64);
    let none = row(ConfigName::NoCkpt);
    let ov = (c.total_time as f64 - none.total_time as f64) / none.total_time as f64 * 100.0;
    assert_eq!(c.time_overhead_pct, Some(ov));
    assert!(c.overall_reduction_pct.is_none());
}

#[test]
fn checkpoint_sweep_places_exactly_that_many() {
    let pts = sweep(&small(), SweepAxis::Checkpoints, &[25.0, 50.0]).unwrap();
    for (p, want) in pts.iter().zip([25, 50]) {
        assert_eq!(p.experiment.result(ConfigName::CkptNe).unwrap().ledger.n_chk, want);
        assert_eq!(p.experiment.boundaries.len(), want as usize);
    }
    assert!(sweep(&small(), SweepAxis::Threshold, &[]).is_err());
    assert!(sweep(&small(), SweepAxis::Cores, &[2.5]).is_err());
}

#[test]
fn core_sweep_keeps_the_per_core_block() {
    let pts = sweep(&small(), SweepAxis::Cores, &[2.0, 4.0]).unwrap();
    let gross = |i: usize| pts[i].experiment.result(ConfigName::CkptNe).unwrap().sizes.gross_words;
    assert!(gross(1) > gross(0));
}

/// A long run of recomputable rewrites followed by a burst of copies: the
/// largest checkpoint is the burst, which nothing can shrink.
#[test]
fn overall_reduction_can_be_large_while_max_reduction_is_nil() {
    let mut text = String::from(".registers 8\n.ro 0 64\n.data 64 256\n.core 0\nrepeat 40\n");
    for i in 0..8 {
        text.push_str(&format!("const r1, {i}\nadd r2, r1, 3\nstore r2, [r0+{}]\n", 64 + i));
    }
    text.push_str("end\n");
    for i in 0..100 {
        text.push_str(&format!("load r3, [r0+{}]\nstore r3, [r0+{}]\n", 72 + i, 150 + i % 100));
    }
    text.push_str("halt\n");
    let cfg = ExperimentConfig {
        checkpoints: 10,
        configs: vec![ConfigName::NoCkpt, ConfigName::CkptNe, ConfigName::AmnNe],
        ..Default::default()
    };
    let prep = prepare_program(parse_program(&text).unwrap(), &cfg).unwrap();
    let e = run_prepared(&prep, &cfg).unwrap();
    let rows = report_rows(&e, None, None);
    let a = rows.iter().find(|r| r.config == ConfigName::AmnNe).unwrap();
    assert_eq!(a.max_reduction_pct, Some(0.0));
    assert!(a.overall_reduction_pct.unwrap() > 25.0, "{:?}", a.overall_reduction_pct);
}

#[test]
fn reports_are_byte_identical_across_reruns() {
    let mut cfg = small();
    cfg.errors.count = 2;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let e = run_experiment(&cfg).unwrap();
        write_results(d.path(), &ResultsFile::single(e)).unwrap();
    }
    for f in ["results.json", "report.csv", "report.json", "intervals.csv"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn config_file_round_trips_and_rejects_unknown_keys() {
    let text = r#"
checkpoints = 12
threshold = 20
configs = ["No_Ckpt", "Amn_E_Loc"]

[workload]
kind = "stencil"
cores = 2
footprint = 32

[errors]
times = [100, 400]
latency = 20
victim = 1

[costs]
c_rcmp_inst = { time = 5, energy = 2 }
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.checkpoints, 12);
    assert_eq!(cfg.workload.kind, WorkloadKind::Stencil);
    assert_eq!(cfg.workload.iterations, WorkloadSpec::default().iterations);
    assert_eq!(cfg.configs, vec![ConfigName::NoCkpt, ConfigName::AmnELoc]);
    assert_eq!(cfg.errors.times, Some(vec![100, 400]));
    assert_eq!(cfg.costs.c_rcmp_inst.time, 5);
    assert!(ExperimentConfig::from_toml("checkpoint = 3").is_err());
    assert!(ExperimentConfig::from_toml("configs = []").is_err());
    assert!(ExperimentConfig::from_toml("[workload]\ncores = 3\nkind = \"mixed\"").is_err());
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_amnesic")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_run_report_and_extract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "checkpoints = 5\n[workload]\ncores = 2\niterations = 4\nfootprint = 32\n").unwrap();
    let out = dir.path().join("out");
    let dump = dir.path().join("ck.txt");
    let trace = dir.path().join("trace.txt");
    let (code, stdout, stderr) = cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--debug-oracle",
        "--checkpoint-dump",
        dump.to_str().unwrap(),
        "--trace-dump",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("Amn_E_Loc"));
    assert!(fs::read_to_string(&dump).unwrap().contains("interval 0 at 0"));
    assert!(fs::read_to_string(&trace).unwrap().lines().count() > 10);

    let again = dir.path().join("again");
    let (code, _, stderr) = cli(&["report", out.join("results.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(fs::read(out.join("report.csv")).unwrap(), fs::read(again.join("report.csv")).unwrap());

    let ann = dir.path().join("a.txt");
    let (code, stdout, _) = cli(&["extract", "--config", cfg.to_str().unwrap(), "--annotated", ann.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("sliced"));
    let (p, table) = amnesic::text::parse_annotated(&fs::read_to_string(&ann).unwrap()).unwrap();
    assert!(p.is_annotated());
    assert!(!table.is_empty());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "checkpoints = \"many\"\n").unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]).0, 2);
    assert_eq!(cli(&["run", "--config", "/nonexistent/c.toml"]).0, 2);

    // Stores outside every region fault during calibration.
    let prog = dir.path().join("p.txt");
    fs::write(&prog, ".registers 2\n.data 0 4\n.core 0\nstore r1, [r0+9]\nhalt\n").unwrap();
    let out = dir.path().join("o");
    let (code, _, stderr) = cli(&["run", "--program", prog.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");

    fs::write(&prog, ".registers 2\n.data 0 4\n.core 0\nstore r1, [r0+1]\nhalt\n").unwrap();
    let (code, _, stderr) = cli(&["run", "--program", prog.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stderr}");
}
