#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::pipeline::InferConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = InferConfig::parse(data) else { return };
    assert!(cfg.validate().is_ok());
    assert_eq!(InferConfig::parse(&serde_json::to_vec(&cfg).unwrap()).unwrap(), cfg);
});
