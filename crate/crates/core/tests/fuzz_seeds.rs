//! Every checked-in fuzz seed must decode, so the corpus exercises the happy path.

use std::path::Path;

use motionctl_core::camproj::{Intrinsics, PoseSeq};
use motionctl_core::io::{decode_flo, decode_pfm, decode_pgm, decode_png_rgb, decode_mask_png, RunLengthMask, TrajectoryFile};
use motionctl_core::metrics::PrecomputedEmbeddings;
use motionctl_core::modulate::{decode_checkpoint, TrainConfig};
use motionctl_core::pipeline::InferConfig;
use motionctl_core::synth::SceneSpec;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .flatten()
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    assert!(!out.is_empty(), "{target}: no seeds");
    out
}

fn check(target: &str, decode: impl Fn(&[u8]) -> bool) {
    for (name, bytes) in seeds(target) {
        assert!(decode(&bytes), "{target}/{name} does not decode");
    }
}

#[test]
fn binary_seeds_decode() {
    check("flo", |b| decode_flo(b).is_ok());
    check("pgm", |b| decode_pgm(b).is_ok());
    check("pfm", |b| decode_pfm(b).is_ok());
    check("png", |b| decode_png_rgb(b).is_ok() || decode_mask_png(b).is_ok());
    check("checkpoint", |b| decode_checkpoint(b).is_ok());
}

#[test]
fn text_seeds_decode() {
    check("trajectory", |b| TrajectoryFile::parse(b).is_ok());
    check("rle_mask", |b| RunLengthMask::parse(b).and_then(|m| m.to_mask()).is_ok());
    check("scene", |b| SceneSpec::parse(b).is_ok());
    check("poses", |b| PoseSeq::parse(b).is_ok());
    check("intrinsics", |b| Intrinsics::parse(b).is_ok());
    check("embeddings", |b| PrecomputedEmbeddings::parse(b).is_ok());
    check("train_config", |b| std::str::from_utf8(b).is_ok_and(|t| TrainConfig::from_toml(t).is_ok()));
    check("infer_config", |b| InferConfig::parse(b).is_ok());
}
