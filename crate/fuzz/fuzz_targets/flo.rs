#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::{decode_flo, encode_flo};

fuzz_target!(|data: &[u8]| {
    let Ok(grid) = decode_flo(data) else { return };
    let bytes = encode_flo(&grid).expect("decoded flow has 2 channels");
    let again = decode_flo(&bytes).expect("re-encoded flow decodes");
    assert_eq!(encode_flo(&again).unwrap(), bytes);
});
