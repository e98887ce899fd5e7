#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::camproj::Intrinsics;

fuzz_target!(|data: &[u8]| {
    let Ok(k) = Intrinsics::parse(data) else { return };
    assert!(k.validate().is_ok());
    assert_eq!(Intrinsics::parse(&serde_json::to_vec(&k).unwrap()).unwrap(), k);
});
