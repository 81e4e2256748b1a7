#![no_main]
use aleph_ipomdp::harness::{parse_float_list, parse_seed_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(seeds) = parse_seed_list(s) {
        assert!(!seeds.is_empty());
    }
    if let Ok(xs) = parse_float_list(s) {
        assert!(xs.iter().all(|x| x.is_finite()));
    }
});
