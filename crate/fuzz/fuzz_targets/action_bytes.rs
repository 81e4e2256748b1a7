#![no_main]
use aleph_ipomdp::domain::{decode_actions, encode_actions, ActionKind};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for kind in [ActionKind::Offer, ActionKind::Response, ActionKind::Row, ActionKind::Column] {
        if let Ok(actions) = decode_actions(kind, data) {
            assert_eq!(encode_actions(&actions), data);
        }
    }
});
