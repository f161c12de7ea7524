use std::path::PathBuf;

use pana_core::report::{export_ledger, ledger_rows, Report};
use pana_core::scenario::{LatencySpec, Scenario};
use pana_core::sim::{self, RunStatus};
use proptest::prelude::*;

fn stress() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/stress.toml");
    Scenario::load(path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Whatever the network does, the audit trail stays consistent.
    #[test]
    fn invariants_survive_any_network(
        seed in any::<u64>(),
        loss in 0.0f64..0.6,
        dup in 0.0f64..1.0,
        min in 1u64..10,
        spread in 0u64..40,
    ) {
        let mut s = stress();
        for l in &mut s.links {
            l.loss = loss;
            l.dup = dup;
            l.latency = LatencySpec::Range([min, min + spread]);
        }
        prop_assert!(s.validate().is_empty());
        let out = sim::run(&s, seed).unwrap();
        prop_assert_eq!(out.status, RunStatus::Completed);
        let ledger = export_ledger(&ledger_rows(&out.initial_ledger, &out.final_ledger));
        let report = Report::from_export(&out.audit.export(), Some(&ledger)).unwrap();
        prop_assert!(report.all_passed(), "{}", report.render_text(&[]));
    }

    /// Two runs with one seed agree byte for byte.
    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), loss in 0.0f64..0.5) {
        let mut s = stress();
        for l in &mut s.links {
            l.loss = loss;
        }
        let a = sim::run(&s, seed).unwrap();
        let b = sim::run(&s, seed).unwrap();
        prop_assert_eq!(a.audit.export(), b.audit.export());
        prop_assert_eq!(a.transcript_export(), b.transcript_export());
    }
}
