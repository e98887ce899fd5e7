#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::camproj::PoseSeq;

fuzz_target!(|data: &[u8]| {
    let Ok(poses) = PoseSeq::parse(data) else { return };
    assert_eq!(PoseSeq::parse(&poses.to_json()).unwrap(), poses);
});
