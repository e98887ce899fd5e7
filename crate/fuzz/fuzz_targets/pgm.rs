#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::{decode_mask_pgm, decode_pgm, encode_mask_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(pgm) = decode_pgm(data) {
        assert_eq!(decode_pgm(&encode_pgm(&pgm)).unwrap(), pgm);
    }
    if let Ok(mask) = decode_mask_pgm(data) {
        assert_eq!(decode_mask_pgm(&encode_mask_pgm(&mask)).unwrap(), mask);
    }
});
