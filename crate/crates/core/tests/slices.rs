mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use amnesic::cost::CostParams;
use amnesic::harness::{prepare_program, ExperimentConfig};
use amnesic::sim::{simulate, SimConfig};
use amnesic::slice::{build_def_use, extract_all, SiteKey, SliceLimits};
use amnesic::text::parse_program;
use common::{body, program_text};
use proptest::prelude::*;

fn trace_of(text: &str) -> (amnesic::program::Program, Vec<amnesic::trace::TraceEvent>) {
    let p = parse_program(text).unwrap();
    let mut cfg = SimConfig::plain();
    cfg.record_trace = true;
    let r = simulate(
        Arc::new(p.clone()),
        Arc::new(Default::default()),
        CostParams::default(),
        &cfg,
    )
    .unwrap();
    (p, r.trace)
}

fn sliced_sites(trace: &[amnesic::trace::TraceEvent], ro: amnesic::program::Region, threshold: usize) -> BTreeSet<SiteKey> {
    let index = build_def_use(trace, ro).unwrap();
    let limits = SliceLimits {
        threshold,
        max_leaves: 4,
    };
    extract_all(&index, limits).0.into_iter().map(|s| s.target).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_slice_reproduces_its_store(b in body(8..24, 30)) {
        let text = program_text(1, &[b]);
        let (p, trace) = trace_of(&text);
        let index = build_def_use(&trace, p.read_only).unwrap();
        let (slices, stats) = extract_all(&index, SliceLimits { threshold: 10, max_leaves: 4 });
        for s in &slices {
            prop_assert!(s.len() <= 10);
            let pos = index.store_positions().find(|&q| index.site_of(q) == s.target).unwrap();
            prop_assert_eq!(Some(s.recompute()), trace[pos].written);
            prop_assert_eq!(Some(s.target_addr), trace[pos].addr);
        }
        prop_assert_eq!(stats.stores_sliced as usize, slices.len());
        // The annotated program computes exactly what the plain one does.
        prop_assert!(prepare_program(p, &ExperimentConfig::default()).is_ok());
    }

    #[test]
    fn raising_the_threshold_never_loses_a_slice(b in body(8..24, 40)) {
        let text = program_text(1, &[b]);
        let (p, trace) = trace_of(&text);
        let mut prev = BTreeSet::new();
        for t in [1, 2, 5, 10, 20, 50] {
            let now = sliced_sites(&trace, p.read_only, t);
            prop_assert!(prev.is_subset(&now), "threshold {t} dropped {:?}", prev.difference(&now).collect::<Vec<_>>());
            prev = now;
        }
    }
}

#[test]
fn store_in_loop_fires_once_per_iteration() {
    let text = "
.registers 4
.ro 0 4
.data 4 8
.core 0
repeat 3
const r1, 5
add r2, r1, 7
store r2, [r0+4]
end
halt
";
    let prep = prepare_program(parse_program(text).unwrap(), &ExperimentConfig::default()).unwrap();
    assert_eq!(prep.slices.len(), 3);
    let mut cfg = SimConfig::plain();
    cfg.record_trace = true;
    let r = simulate(Arc::clone(&prep.program), Arc::clone(&prep.slices), CostParams::default(), &cfg).unwrap();
    let fired: Vec<_> = r.trace.iter().filter_map(|e| e.assoc).collect();
    assert_eq!(fired.len(), 3);
    assert_eq!(fired.iter().collect::<BTreeSet<_>>().len(), 3);
    assert_eq!(r.final_memory[0], 12);
}
