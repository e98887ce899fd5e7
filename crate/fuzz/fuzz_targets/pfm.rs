#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::{decode_pfm, encode_pfm};

fuzz_target!(|data: &[u8]| {
    let Ok(grid) = decode_pfm(data) else { return };
    let Ok(bytes) = encode_pfm(&grid) else { return };
    let again = decode_pfm(&bytes).expect("re-encoded pfm decodes");
    let same = grid.as_slice().iter().zip(again.as_slice()).all(|(a, b)| (*a as f32).to_bits() == (*b as f32).to_bits());
    assert!(same && grid.height() == again.height() && grid.width() == again.width());
});
