#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::modulate::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = TrainConfig::from_toml(text) else { return };
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
});
