#![no_main]
use aleph_ipomdp::harness::ExperimentPlan;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = ExperimentPlan::from_json(s) {
        // Anything accepted must survive a round trip.
        let text = serde_json::to_string(&plan).unwrap();
        let again = ExperimentPlan::from_json(&text).unwrap();
        assert_eq!(plan.cells(), again.cells());
    }
});
