mod common;

use std::collections::BTreeSet;

use amnesic::checkpoint::Scheme;
use amnesic::harness::{error_schedule, prepare_program, run_prepared, ConfigName, ExperimentConfig};
use amnesic::text::parse_program;
use common::{cores_and_bodies, program_text};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn omitted_and_logged_lines_partition_the_baseline_log(
        (n, bodies) in cores_and_bodies(),
        checkpoints in 1u64..6,
    ) {
        let p = parse_program(&program_text(n, &bodies)).unwrap();
        let cfg = ExperimentConfig {
            checkpoints,
            record_lines: true,
            configs: vec![ConfigName::CkptNe, ConfigName::AmnNe, ConfigName::CkptNeLoc, ConfigName::AmnNeLoc],
            ..Default::default()
        };
        let prep = prepare_program(p, &cfg).unwrap();
        let exp = run_prepared(&prep, &cfg).unwrap();
        for (base, amn) in [(ConfigName::CkptNe, ConfigName::AmnNe), (ConfigName::CkptNeLoc, ConfigName::AmnNeLoc)] {
            let b = exp.result(base).unwrap();
            let a = exp.result(amn).unwrap();
            prop_assert_eq!(a.intervals.len(), b.intervals.len());
            for (bi, ai) in b.intervals.iter().zip(&a.intervals) {
                prop_assert_eq!(bi.interval, ai.interval);
                let want: BTreeSet<u64> = bi.logged.iter().map(|(l, _)| *l).collect();
                prop_assert_eq!(want.len(), bi.logged.len());
                let mut got: Vec<u64> = ai.logged.iter().map(|(l, _)| *l).chain(ai.omitted.iter().copied()).collect();
                got.sort();
                let unique: BTreeSet<u64> = got.iter().copied().collect();
                prop_assert_eq!(unique.len(), got.len(), "address logged twice in interval {}", ai.interval);
                prop_assert_eq!(unique, want);
                prop_assert_eq!(ai.size.gross, bi.size.gross);
                // Logged words agree where both schemes log.
                for (l, w) in &ai.logged {
                    prop_assert_eq!(Some(w), bi.logged.iter().find(|(x, _)| x == l).map(|(_, w)| w));
                }
            }
        }
    }

    #[test]
    fn every_configuration_recovers_to_the_error_free_state(
        (n, bodies) in cores_and_bodies(),
        checkpoints in 2u64..6,
        errors in 1usize..4,
        seed in any::<u64>(),
    ) {
        let p = parse_program(&program_text(n, &bodies)).unwrap();
        let mut cfg = ExperimentConfig {
            checkpoints,
            debug_oracle: true,
            ..Default::default()
        };
        cfg.errors.count = errors;
        cfg.errors.seed = seed;
        let prep = prepare_program(p, &cfg).unwrap();
        prop_assume!(error_schedule(&cfg, &prep).is_ok());
        let exp = run_prepared(&prep, &cfg).unwrap();
        for r in &exp.results {
            prop_assert_eq!(&r.final_hash, &exp.reference_hash);
            if r.config.with_errors() {
                prop_assert_eq!(r.recoveries.len(), errors);
            }
            if r.config.scheme().is_some() && !exp.errors.is_empty() && r.config.with_errors() {
                prop_assert!(r.oracle_checks > 0 || r.recoveries.iter().all(|x| x.logged_words + x.recomputed_words == 0));
            }
        }
        // Twin runs: recomputation restores exactly what the full log restores.
        for (a, b) in [(ConfigName::AmnE, ConfigName::CkptE), (ConfigName::AmnELoc, ConfigName::CkptELoc)] {
            let (a, b) = (exp.result(a).unwrap(), exp.result(b).unwrap());
            prop_assert_eq!(a.config.scheme(), Some(Scheme::Amnesic));
            for (x, y) in a.recoveries.iter().zip(&b.recoveries) {
                prop_assert_eq!(&x.restored_hash, &y.restored_hash);
                prop_assert_eq!(x.target, y.target);
                prop_assert_eq!(x.group, y.group);
                prop_assert_eq!(x.logged_words + x.recomputed_words, y.logged_words);
            }
        }
    }
}
