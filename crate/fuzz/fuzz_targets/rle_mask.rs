#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::RunLengthMask;

fuzz_target!(|data: &[u8]| {
    let Ok(rle) = RunLengthMask::parse(data) else { return };
    let Ok(mask) = rle.to_mask() else { return };
    assert_eq!(RunLengthMask::from_mask(&mask).to_mask().unwrap(), mask);
});
