#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::metrics::PrecomputedEmbeddings;

fuzz_target!(|data: &[u8]| {
    let Ok(e) = PrecomputedEmbeddings::parse(data) else { return };
    assert_eq!(PrecomputedEmbeddings::parse(&serde_json::to_vec(&e).unwrap()).unwrap(), e);
});
