use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use motionctl_core::camproj::{pose_to_trajectories, DepthMap, Intrinsics, PoseSeq};
use motionctl_core::condition::{RatioSemantics, SamplerConfig};
use motionctl_core::grid::{BitMaskSeq, VideoClip};
use motionctl_core::io::{
    clip_files, decode_pfm, decode_pgm, decode_png_rgb, encode_mask_pgm, flow_files, flow_name, read_clip_dir, read_file,
    read_flow_dir, read_mask, read_visibility_dir, visibility_name, write_file, write_files, TrajectoryFile,
};
use motionctl_core::metrics::{evaluate, BlockMatcher, Embedder, FlowTracker, HistogramEmbedder, PrecomputedEmbeddings, SceneOracle};
use motionctl_core::modulate::checkpoint::encode_checkpoint;
use motionctl_core::modulate::{train_toy as train, TrainConfig};
use motionctl_core::modulate::model::LATENT_POOL;
use motionctl_core::pipeline::{infer_condition, read_condition_dir, run_preview, train_condition, Crop};
use motionctl_core::propagate::DensifyConfig;
use motionctl_core::synth::{ground_truth, random_scene, render_clip, RandomSceneConfig, SceneSpec};
use motionctl_core::Error;
use serde_json::{json, Value};

use crate::{write_summary, CliError, ConditionArgs, EvalArgs, Mode, PreviewArgs, SynthArgs, TrainArgs, CameraArgs, ServeArgs, TrackerKind, EmbedderKind, Semantics};

type CliResult<T> = Result<T, CliError>;

pub const SCENE_FILE: &str = "scene.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRAIN_CONFIG_FILE: &str = "train.toml";

fn in_file<T>(r: motionctl_core::Result<T>, path: &Path) -> CliResult<T> {
    r.map_err(|e| CliError::from(e.in_file(path)))
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    Ok(read_file(path)?)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str, why: &str) -> CliResult<&'a PathBuf> {
    v.as_ref().ok_or_else(|| CliError::new(format!("--{flag} is required {why}")))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn write_clip(dir: &Path, spec: &SceneSpec) -> CliResult<usize> {
    let clip = render_clip(spec)?;
    let gt = ground_truth(spec)?;
    let mut files = clip_files(&clip)?;
    files.extend(flow_files(&gt.flow, flow_name)?);
    for (i, m) in gt.visibility.masks().iter().enumerate() {
        files.push((visibility_name(i), encode_mask_pgm(m)));
    }
    let mut scene = spec.to_json();
    scene.push(b'\n');
    files.push((SCENE_FILE.to_string(), scene));
    write_files(dir, &files)?;
    Ok(files.len())
}

pub fn synth(a: &SynthArgs) -> CliResult<Value> {
    let specs: Vec<SceneSpec> = match (&a.scene, a.random) {
        (Some(path), false) => vec![in_file(SceneSpec::parse(&read(path)?), path)?],
        (None, true) => {
            if a.count == 0 {
                return Err(CliError::new("--count: must be at least 1"));
            }
            let cfg = RandomSceneConfig {
                frames: a.frames,
                height: a.height,
                width: a.width,
                max_blobs: a.max_blobs,
                max_speed: a.max_speed,
                ..RandomSceneConfig::default()
            };
            let specs: Vec<SceneSpec> = (0..a.count as u64).map(|i| random_scene(a.seed.wrapping_add(i), &cfg)).collect();
            for s in &specs {
                s.validate()?;
            }
            specs
        }
        _ => return Err(CliError::new("synth needs exactly one of --scene or --random")),
    };
    let mut files = 0;
    if specs.len() == 1 {
        files += write_clip(&a.out, &specs[0])?;
    } else {
        for (i, s) in specs.iter().enumerate() {
            files += write_clip(&a.out.join(format!("clip_{:04}", i + 1)), s)?;
        }
    }
    let s = &specs[0];
    Ok(json!({
        "command": "synth",
        "out": path_str(&a.out),
        "clips": specs.len(),
        "frames": s.frames,
        "height": s.height,
        "width": s.width,
        "files": files,
    }))
}

fn sampler(k: usize, r_min: f64, semantics: Semantics, threshold: f64, seed: u64) -> CliResult<SamplerConfig> {
    let cfg = SamplerConfig {
        k,
        r_min,
        threshold,
        seed,
        semantics: match semantics {
            Semantics::MaskOut => RatioSemantics::MaskOut,
            Semantics::Keep => RatioSemantics::Keep,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_visibility(dir: &Path, flow_len: usize, h: usize, w: usize) -> CliResult<BitMaskSeq> {
    match read_visibility_dir(dir) {
        Ok(seq) => Ok(seq),
        Err(e) => {
            let has_files = std::fs::read_dir(dir)
                .map(|it| it.flatten().any(|e| e.file_name().to_string_lossy().starts_with("vis_")))
                .unwrap_or(false);
            if has_files {
                Err(e.into())
            } else {
                let ones = motionctl_core::grid::BitMask2D::ones(h, w);
                Ok(BitMaskSeq::new(vec![ones; flow_len])?)
            }
        }
    }
}

pub fn condition(a: &ConditionArgs) -> CliResult<Value> {
    let out = match a.mode {
        Mode::Train => {
            let dir = required(&a.flow, "flow", "in train mode")?;
            let flow = read_flow_dir(dir, "flow_")?
                .ok_or_else(|| CliError::new(format!("{}: no flow_NNNN.flo files", dir.display())))?;
            let vis_dir = a.vis.as_ref().unwrap_or(dir);
            let vis = read_visibility(vis_dir, flow.len(), flow.height(), flow.width())?;
            train_condition(&flow, &vis, &sampler(a.k, a.r_min, a.semantics, a.threshold, a.seed)?)?
        }
        Mode::Infer => {
            let traj_path = required(&a.traj, "traj", "in infer mode")?;
            let brush_path = required(&a.brush, "brush", "in infer mode")?;
            let traj = in_file(TrajectoryFile::parse(&read(traj_path)?), traj_path)?;
            let brush = read_mask(brush_path)?;
            let frames = a.frames.unwrap_or(traj.frames);
            in_file(infer_condition(&traj.strokes(), frames, a.k, &brush), traj_path)?
        }
    };
    write_files(&a.out, &out.files()?)?;
    Ok(json!({
        "command": "condition",
        "mode": match a.mode { Mode::Train => "train", Mode::Infer => "infer" },
        "out": path_str(&a.out),
        "frames": out.cond.len(),
        "height": out.cond.height(),
        "width": out.cond.width(),
        "tracks": out.tracks.len(),
        "mask_pixels": out.cond.motion_mask().count_ones(),
    }))
}

pub fn preview(a: &PreviewArgs) -> CliResult<Value> {
    let first = in_file(decode_png_rgb(&read(&a.image)?), &a.image)?;
    let cond = read_condition_dir(&a.cond)?;
    let out = in_file(run_preview(&first, &cond, &DensifyConfig { power: a.power }), &a.cond)?;
    write_files(&a.out, &out.files(a.write_flow)?)?;
    Ok(json!({
        "command": "preview",
        "out": path_str(&a.out),
        "frames": out.clip.len(),
        "flow_written": a.write_flow,
    }))
}

fn clip_dirs(dataset: &Path) -> CliResult<Vec<PathBuf>> {
    if dataset.join("frame_0001.png").exists() {
        return Ok(vec![dataset.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dataset).map_err(|e| CliError::new(format!("{}: {e}", dataset.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("frame_0001.png").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::new(format!("{}: no clip directories with frame_0001.png", dataset.display())));
    }
    Ok(dirs)
}

pub fn train_toy(a: &TrainArgs) -> CliResult<Value> {
    let (mut cfg, rank_in_file) = match &a.train_config {
        Some(path) => {
            let text = String::from_utf8(read(path)?).map_err(|_| CliError::new(format!("{}: not UTF-8", path.display())))?;
            let cfg = in_file(TrainConfig::from_toml(&text), path)?;
            let has_rank = text
                .parse::<toml::Table>()
                .ok()
                .and_then(|t| t.get("model").and_then(|m| m.get("lora_rank")).map(|_| ()))
                .is_some();
            (cfg, has_rank)
        }
        None => (TrainConfig { seed: a.seed, ..TrainConfig::default() }, false),
    };
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    if a.zero_condition {
        cfg.zero_condition = true;
    }
    // The default rank exceeds the toy maps; cap it.
    let requested = a.lora_rank.unwrap_or(if rank_in_file { cfg.model.lora_rank } else { 32 });
    cfg.model.lora_rank = requested.min(cfg.model.max_lora_rank()).max(1);
    cfg.validate()?;

    let mut dataset = Vec::new();
    for (i, dir) in clip_dirs(&a.dataset)?.iter().enumerate() {
        let clip: VideoClip = read_clip_dir(dir, 8.0)?;
        let flow = read_flow_dir(dir, "flow_")?
            .ok_or_else(|| CliError::new(format!("{}: no flow_NNNN.flo files", dir.display())))?;
        let vis = read_visibility(dir, flow.len(), flow.height(), flow.width())?;
        // Both the region grid and the toy latent need whole tiles.
        let crop = in_file(Crop::center(flow.height(), flow.width(), lcm(a.k.max(1), 2 * LATENT_POOL)), dir)?;
        let (clip, flow, vis) = (crop.clip(&clip), crop.flow(&flow), crop.masks(&vis));
        let seed = a.seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let out = in_file(train_condition(&flow, &vis, &sampler(a.k, a.r_min, a.semantics, a.threshold, seed)?), dir)?;
        dataset.push((clip, out.cond));
    }
    let outcome = train(&dataset, &cfg)?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    write_file(&a.out.join(CHECKPOINT_FILE), &encode_checkpoint(&outcome.model))?;
    write_file(&a.out.join(LOSS_FILE), csv.as_bytes())?;
    write_file(&a.out.join(TRAIN_CONFIG_FILE), cfg.to_toml().as_bytes())?;
    Ok(json!({
        "command": "train-toy",
        "out": path_str(&a.out),
        "clips": dataset.len(),
        "steps": cfg.steps,
        "lora_rank_requested": requested,
        "lora_rank": cfg.model.lora_rank,
        "first_loss": outcome.losses.first(),
        "final_loss": outcome.losses.last(),
    }))
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

pub fn eval(a: &EvalArgs) -> CliResult<Value> {
    let clip = read_clip_dir(&a.clip, 8.0)?;
    let traj = in_file(TrajectoryFile::parse(&read(&a.traj)?), &a.traj)?;
    let reference = in_file(traj.to_track_set(), &a.traj)?;
    let flow_dir = a.flow.as_ref().unwrap_or(&a.clip);
    let flow = read_flow_dir(flow_dir, "flow_")?;
    let embedder: Box<dyn Embedder> = match a.embedder {
        EmbedderKind::Histogram => Box::new(HistogramEmbedder),
        EmbedderKind::File => {
            let path = required(&a.embeddings, "embeddings", "with --embedder file")?;
            Box::new(in_file(PrecomputedEmbeddings::parse(&read(path)?), path)?)
        }
    };
    let report = match (a.tracker, &a.scene, &flow) {
        (TrackerKind::Oracle, Some(path), _) => {
            let spec = in_file(SceneSpec::parse(&read(path)?), path)?;
            evaluate(&reference, &clip, &SceneOracle { spec }, embedder.as_ref(), flow.as_ref())
        }
        (TrackerKind::Oracle, None, Some(f)) => {
            evaluate(&reference, &clip, &FlowTracker { flow: f.clone() }, embedder.as_ref(), Some(f))
        }
        (TrackerKind::Oracle, None, None) => {
            return Err(CliError::new(format!(
                "{}: the oracle tracker needs flow_NNNN.flo files or --scene",
                flow_dir.display()
            )))
        }
        (TrackerKind::Blockmatch, _, _) => {
            evaluate(&reference, &clip, &BlockMatcher::default(), embedder.as_ref(), flow.as_ref())
        }
    }
    .map_err(|e| match e {
        Error::Format { .. } => CliError::from(e.in_file(&a.traj)),
        other => CliError::from(other),
    })?;
    if let Some(out) = &a.out {
        write_file(out, &report.to_json())?;
    }
    Ok(json!({
        "command": "eval",
        "tracker": match a.tracker { TrackerKind::Oracle => "oracle", TrackerKind::Blockmatch => "blockmatch" },
        "report": serde_json::to_value(&report).expect("report serializes"),
        "out": a.out.as_deref().map(path_str),
    }))
}

pub fn camera(a: &CameraArgs) -> CliResult<Value> {
    let bytes = read(&a.depth)?;
    let is_pfm = a.depth.extension().and_then(|e| e.to_str()) == Some("pfm");
    let depth = if is_pfm {
        in_file(decode_pfm(&bytes).and_then(|g| DepthMap::from_grid(&g)), &a.depth)?
    } else {
        in_file(decode_pgm(&bytes).and_then(|p| DepthMap::from_pgm(&p, a.depth_scale)), &a.depth)?
    };
    let k = in_file(Intrinsics::parse(&read(&a.intrinsics)?), &a.intrinsics)?;
    let poses = in_file(PoseSeq::parse(&read(&a.poses)?), &a.poses)?;
    let out = pose_to_trajectories(&depth, &k, &poses, a.stride)?;
    write_file(&a.out, &TrajectoryFile::from_track_set(&out.tracks).to_json())?;
    if let Some(mask) = &a.mask_out {
        write_file(mask, &encode_mask_pgm(&out.mask))?;
    }
    Ok(json!({
        "command": "camera",
        "out": path_str(&a.out),
        "frames": poses.len(),
        "tracks": out.tracks.len(),
        "dropped": out.dropped,
    }))
}

pub fn serve(a: &ServeArgs, out: &mut dyn Write) -> CliResult<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::new(format!("--port: cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::new(e.to_string()))?;
        write_summary(out, &json!({"command": "serve", "listening": local.to_string()}))?;
        let cfg = motionctl_serve::ServeConfig {
            ttl: Duration::from_secs(a.ttl_secs),
            cors_origin: a.cors_origin.clone(),
        };
        motionctl_serve::serve(listener, cfg)
            .await
            .map_err(|e| CliError::new(format!("serve: {e}")))
    })
}
