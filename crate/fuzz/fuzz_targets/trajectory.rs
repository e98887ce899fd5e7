#![no_main]
use libfuzzer_sys::fuzz_target;
use motionctl_core::io::TrajectoryFile;

fuzz_target!(|data: &[u8]| {
    let Ok(file) = TrajectoryFile::parse(data) else { return };
    let json = file.to_json();
    let again = TrajectoryFile::parse(&json).expect("serialized trajectory parses");
    assert_eq!(again, file);
    if let Ok(set) = file.to_track_set() {
        assert_eq!(TrajectoryFile::from_track_set(&set).to_track_set().unwrap(), set);
    }
});
