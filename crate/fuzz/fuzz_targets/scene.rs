#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::synth::SceneSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = SceneSpec::parse(data) else { return };
    assert_eq!(SceneSpec::parse(&spec.to_json()).unwrap(), spec);
});
