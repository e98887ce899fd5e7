#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::modulate::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(model) = decode_checkpoint(data) else { return };
    let bytes = encode_checkpoint(&model);
    assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
});
