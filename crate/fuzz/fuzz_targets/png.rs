#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::{decode_mask_png, decode_png_rgb, encode_mask_png, encode_png_rgb};

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = decode_png_rgb(data) {
        let again = decode_png_rgb(&encode_png_rgb(&frame).unwrap()).unwrap();
        assert!(again == frame);
    }
    if let Ok(mask) = decode_mask_png(data) {
        assert_eq!(decode_mask_png(&encode_mask_png(&mask).unwrap()).unwrap(), mask);
    }
});
