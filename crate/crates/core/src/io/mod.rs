//! File formats and directory layouts shared by the CLI and the HTTP service.

pub mod flo;
pub mod png;
pub mod pnm;
pub mod trajectory;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BitMask2D, BitMaskSeq, FlowField, Grid, VideoClip};

pub use flo::{decode_flo, encode_flo};
pub use png::{decode_mask_png, decode_png_rgb, encode_mask_png, encode_png_rgb};
pub use pnm::{decode_mask_pgm, decode_pfm, decode_pgm, encode_mask_pgm, encode_pfm, encode_pgm};
pub use trajectory::{RunLengthMask, TrajectoryFile};

pub fn frame_name(i: usize) -> String {
    format!("frame_{:04}.png", i + 1)
}

pub fn flow_name(i: usize) -> String {
    format!("flow_{:04}.flo", i + 1)
}

pub fn visibility_name(i: usize) -> String {
    format!("vis_{:04}.pgm", i + 1)
}

pub fn traj_name(i: usize) -> String {
    format!("traj_{:04}.flo", i + 1)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `(name, bytes)` pairs into a directory.
pub fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    for (name, bytes) in files {
        write_file(&dir.join(name), bytes)?;
    }
    Ok(())
}

/// Files in `dir` named `{prefix}NNNN{suffix}`, in frame order.
pub fn numbered_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(num) = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_suffix(suffix))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.push((num, entry.path()));
        }
    }
    found.sort();
    for (i, (num, path)) in found.iter().enumerate() {
        if *num != i + 1 {
            return Err(Error::File {
                path: path.clone(),
                message: format!("expected frame number {}", i + 1),
            });
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn read_clip_dir(dir: &Path, frame_rate: f64) -> Result<VideoClip> {
    let paths = numbered_files(dir, "frame_", ".png")?;
    if paths.is_empty() {
        return Err(Error::File {
            path: dir.to_path_buf(),
            message: "no frame_NNNN.png files".into(),
        });
    }
    let frames = paths
        .iter()
        .map(|p| decode_png_rgb(&read_file(p)?).map_err(|e| e.in_file(p)))
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, frame_rate).map_err(|e| e.in_file(dir))
}

pub fn clip_files(clip: &VideoClip) -> Result<Vec<(String, Vec<u8>)>> {
    clip.frames()
        .iter()
        .enumerate()
        .map(|(i, f)| Ok((frame_name(i), encode_png_rgb(f)?)))
        .collect()
}

pub fn flow_files(flow: &FlowField, name: fn(usize) -> String) -> Result<Vec<(String, Vec<u8>)>> {
    (0..flow.len())
        .map(|i| Ok((name(i), encode_flo(&flow.frame_grid(i))?)))
        .collect()
}

/// Read `{prefix}NNNN.flo` files; returns `None` when there are none.
pub fn read_flow_dir(dir: &Path, prefix: &str) -> Result<Option<FlowField>> {
    let paths = numbered_files(dir, prefix, ".flo")?;
    if paths.is_empty() {
        return Ok(None);
    }
    let frames = paths
        .iter()
        .map(|p| decode_flo(&read_file(p)?).map_err(|e| e.in_file(p)))
        .collect::<Result<Vec<Grid>>>()?;
    FlowField::from_frames(&frames)
        .map(Some)
        .map_err(|e| e.in_file(dir))
}

pub fn read_visibility_dir(dir: &Path) -> Result<BitMaskSeq> {
    let paths = numbered_files(dir, "vis_", ".pgm")?;
    let masks = paths
        .iter()
        .map(|p| decode_mask_pgm(&read_file(p)?).map_err(|e| e.in_file(p)))
        .collect::<Result<Vec<BitMask2D>>>()?;
    BitMaskSeq::new(masks).map_err(|e| e.in_file(dir))
}

/// Masks by extension: `.png`, `.json` (run-length), anything else PGM.
pub fn read_mask(path: &Path) -> Result<BitMask2D> {
    let bytes = read_file(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let mask = match ext {
        "png" => decode_mask_png(&bytes),
        "json" => RunLengthMask::parse(&bytes).and_then(|r| r.to_mask()),
        _ => decode_mask_pgm(&bytes),
    };
    mask.map_err(|e| e.in_file(path))
}
