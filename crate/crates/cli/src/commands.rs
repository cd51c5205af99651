//! Subcommand implementations.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use wildnvs_core::appearance::{cluster_embeddings, encode_appearance};
use wildnvs_core::assembly::{Ablation, BatchBuilder, InferenceOptions};
use wildnvs_core::camera::{
    canned_trajectory, interpolate_trajectory, Intrinsics, TrajectoryKind, TrajectoryParams,
};
use wildnvs_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use wildnvs_core::codec::Codec;
use wildnvs_core::config::RunConfig;
use wildnvs_core::denoiser::{generate_views, train as train_model, SampleOptions};
use wildnvs_core::eval::{
    ablation_csv, appearance_matched_reference, evaluate_model, psnr, ssim, AblationRow,
    EvalContext,
};
use wildnvs_core::math::{Mat3, Rigid, Vec3};
use wildnvs_core::scenefmt::{
    load_scene, parse_colmap_text, read_image, sparse_depths_for_view, write_ppm, Scene,
};
use wildnvs_core::synthdata::{generate_scene, SynthConfig};
use wildnvs_core::tensor::Tensor;
use wildnvs_core::warp::{align_depth_ransac, warp_to_all_slots, WarpOptions};
use wildnvs_core::{Real, Rigidr, Tensorr, Vec3r};

pub fn gen_data(
    out: &Path,
    scenes: usize,
    views: usize,
    classes: usize,
    seed: u64,
    res: usize,
    start_index: u64,
) -> Result<()> {
    let config = SynthConfig {
        resolution: res,
        num_views: views,
        appearance_classes: classes,
        seed,
        scene_index: start_index,
        ..SynthConfig::default()
    };
    config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    std::fs::create_dir_all(out)?;
    for i in 0..scenes {
        let scene: Scene<Real> = generate_scene(&SynthConfig {
            scene_index: start_index + i as u64,
            ..config
        });
        let dir = out.join(&scene.name);
        wildnvs_core::scenefmt::save_scene(&scene, &dir)
            .with_context(|| format!("writing {}", dir.display()))?;
    }
    println!(
        "wrote {scenes} scenes to {} (views={views}, classes={classes}, res={res}, seed={seed}, start_index={start_index})",
        out.display()
    );
    Ok(())
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).context("parsing TOML config")?,
        _ => serde_json::from_str(&text).context("parsing JSON config")?,
    };
    Ok(cfg)
}

/// Loads either a native scene directory or a COLMAP text export.
fn load_any_scene(dir: &Path) -> Result<Scene<Real>> {
    if dir.join("manifest.json").is_file() {
        Ok(load_scene(dir)?)
    } else if dir.join("cameras.txt").is_file() {
        Ok(parse_colmap_text(dir)?)
    } else {
        bail!(
            "{} is neither a native scene (manifest.json) nor a COLMAP text export (cameras.txt)",
            dir.display()
        )
    }
}

fn load_scene_dirs(data: &Path) -> Result<Vec<Scene<Real>>> {
    if data.join("manifest.json").is_file() || data.join("cameras.txt").is_file() {
        return Ok(vec![load_any_scene(data)?]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenes found under {}", data.display());
    }
    dirs.iter()
        .map(|d| Ok(load_scene::<Real>(d)?))
        .collect()
}

pub fn train(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    ablation: Ablation,
    steps: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_run_config(config)?;
    if let Some(steps) = steps {
        cfg.train.steps = steps;
    }
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Err(problems) = cfg.validate() {
        bail!("invalid config:\n  {}", problems.join("\n  "));
    }
    let scenes = load_scene_dirs(data)?;
    for scene in &scenes {
        if scene.resolution() != cfg.model.image_res {
            bail!(
                "scene {} resolution {} does not match model image_res {}",
                scene.name,
                scene.resolution(),
                cfg.model.image_res
            );
        }
    }
    let schedule = cfg.schedule.build::<Real>();
    let trained = train_model(
        &scenes,
        &cfg.model,
        &cfg.denoiser,
        &schedule,
        ablation,
        &cfg.train,
    );
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(
        out,
        &Checkpoint {
            model: cfg.model,
            denoiser_cfg: cfg.denoiser,
            schedule_cfg: cfg.schedule,
            ablation,
            config_hash: cfg.hash(),
            denoiser: trained.denoiser,
            encoder: trained.encoder,
        },
    )?;
    let log_path = out.with_extension("log.csv");
    let mut log = String::from("step,loss\n");
    for entry in &trained.log {
        log.push_str(&format!("{},{:.9}\n", entry.step, entry.loss));
    }
    std::fs::write(&log_path, log)?;
    let last = trained.log.last().map(|e| e.loss).unwrap_or(f64::NAN);
    println!(
        "trained {:?} for {} steps on {} scenes; final loss {last:.6}; checkpoint {} log {}",
        ablation,
        cfg.train.steps,
        scenes.len(),
        out.display(),
        log_path.display()
    );
    Ok(())
}

/// Fixation point for canned trajectories: centroid of the source view's
/// sparse depths, unprojected to world space.
fn fixation_point(scene: &Scene<Real>, source: usize) -> Result<Vec3r> {
    let view = &scene.views[source];
    let sparse = sparse_depths_for_view(scene, source);
    if sparse.is_empty() {
        bail!("scene has no sparse depths visible from view {source}");
    }
    let inv = view.pose.inverse();
    let mut sum = Vec3::zero();
    for sd in &sparse {
        let dir = view.intrinsics.unproject_dir(sd.u, sd.v);
        sum = sum.add(&inv.apply(&dir.scale(sd.depth)));
    }
    Ok(sum.scale(1.0 / sparse.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trajectory {
    Lateral,
    ZoomOut,
    Circular,
    File,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TrajectoryEntry {
    View { view: usize },
    Pose { pose: [f64; 12] },
}

fn pose_from_12(n: &[f64; 12]) -> Rigidr {
    let mut r = Mat3::identity();
    let mut t = Vec3::zero();
    for i in 0..3 {
        for j in 0..3 {
            r.0[i][j] = n[i * 4 + j];
        }
        t.0[i] = n[i * 4 + 3];
    }
    Rigid::new(r, t)
}

pub struct NvsArgs {
    pub ckpt: PathBuf,
    pub scene: PathBuf,
    pub source_view: usize,
    pub trajectory: Trajectory,
    pub trajectory_file: Option<PathBuf>,
    pub frames: usize,
    pub cfg: f64,
    pub out: PathBuf,
    pub seed: u64,
}

struct LoadedModel {
    ckpt: Checkpoint<Real>,
    codec: Codec,
    schedule: wildnvs_core::schedule::NoiseSchedule<Real>,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let ckpt = load_checkpoint::<Real>(path)?;
    let codec = Codec::new(ckpt.model.image_res, ckpt.model.latent_res)?;
    let schedule = ckpt.schedule_cfg.build::<Real>();
    Ok(LoadedModel {
        ckpt,
        codec,
        schedule,
    })
}

fn check_scene_matches(scene: &Scene<Real>, model: &LoadedModel) -> Result<()> {
    if scene.resolution() != model.ckpt.model.image_res {
        bail!(
            "scene resolution {} does not match checkpoint image_res {}",
            scene.resolution(),
            model.ckpt.model.image_res
        );
    }
    Ok(())
}

fn write_frame(dir: &Path, name: &str, image: &Tensorr) -> Result<()> {
    write_ppm(&dir.join(name), image)?;
    Ok(())
}

fn grayscale(mask: &[bool], n: usize) -> Tensorr {
    let mut img = Tensor::zeros(3, n, n);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                img.set(c, i / n, i % n, 1.0);
            }
        }
    }
    img
}

pub fn nvs(args: NvsArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let scene = load_any_scene(&args.scene)?;
    check_scene_matches(&scene, &model)?;
    if args.source_view >= scene.views.len() {
        bail!("source view {} out of range", args.source_view);
    }
    if args.frames == 0 {
        bail!("--frames must be >= 1");
    }
    let source = &scene.views[args.source_view];

    // Target cameras plus, for trajectory-file view references, the GT
    // view index each frame corresponds to.
    let mut cameras: Vec<(Intrinsics<Real>, Rigidr)> = Vec::new();
    let mut gt_views: Vec<Option<usize>> = Vec::new();
    match args.trajectory {
        Trajectory::File => {
            let path = args
                .trajectory_file
                .as_ref()
                .ok_or_else(|| anyhow!("--trajectory file requires --trajectory-file"))?;
            let text = std::fs::read_to_string(path)?;
            let entries: Vec<TrajectoryEntry> =
                serde_json::from_str(&text).context("parsing trajectory file")?;
            for entry in entries {
                match entry {
                    TrajectoryEntry::View { view } => {
                        if view >= scene.views.len() {
                            bail!("trajectory references view {view} out of range");
                        }
                        cameras.push((scene.views[view].intrinsics, scene.views[view].pose));
                        gt_views.push(Some(view));
                    }
                    TrajectoryEntry::Pose { pose } => {
                        cameras.push((source.intrinsics, pose_from_12(&pose)));
                        gt_views.push(None);
                    }
                }
            }
        }
        canned => {
            if args.frames < 2 {
                bail!("canned trajectories need --frames >= 2");
            }
            let fixation = fixation_point(&scene, args.source_view)?;
            // Lateral and zoom extents scale with the scene's near depth.
            let depth_scale = {
                let depths: Vec<Real> = sparse_depths_for_view(&scene, args.source_view)
                    .iter()
                    .map(|sd| sd.depth)
                    .collect();
                wildnvs_core::camera::percentile(&depths, 0.1)
            };
            let (kind, magnitude) = match canned {
                Trajectory::Lateral => (TrajectoryKind::Lateral, 0.5 * depth_scale),
                Trajectory::ZoomOut => (TrajectoryKind::ZoomOut, 0.5 * depth_scale),
                Trajectory::Circular => (TrajectoryKind::Circular, std::f64::consts::TAU),
                Trajectory::File => unreachable!(),
            };
            let params = TrajectoryParams {
                frames: args.frames,
                magnitude,
                fixation,
            };
            for pose in canned_trajectory(kind, &source.pose, &params) {
                cameras.push((source.intrinsics, pose));
                gt_views.push(None);
            }
        }
    }

    std::fs::create_dir_all(&args.out)?;
    let builder = BatchBuilder::new(
        &model.ckpt.model,
        &model.codec,
        &model.schedule,
        &model.ckpt.encoder,
    );
    let opts = SampleOptions {
        cfg_scale: args.cfg,
        ablation: model.ckpt.ablation,
        ..SampleOptions::new(model.ckpt.schedule_cfg.timesteps, args.cfg)
    };
    let images = generate_views(
        &model.ckpt.denoiser,
        &builder,
        &scene,
        &[args.source_view],
        &cameras,
        &opts,
        &InferenceOptions::default(),
        args.seed,
    )?;
    let warps = warp_to_all_slots(&scene, args.source_view, &cameras, &WarpOptions::default())?;
    let n = scene.resolution();
    for (i, (image, warp)) in images.iter().zip(&warps).enumerate() {
        write_frame(&args.out, &format!("frame_{i:03}.ppm"), image)?;
        write_frame(&args.out, &format!("warp_{i:03}.ppm"), &warp.rgb)?;
        write_frame(
            &args.out,
            &format!("coverage_{i:03}.ppm"),
            &grayscale(&warp.coverage, n),
        )?;
    }

    // Frames with ground-truth views get a metrics report.
    let scored: Vec<(usize, usize)> = gt_views
        .iter()
        .enumerate()
        .filter_map(|(frame, gt)| gt.map(|v| (frame, v)))
        .collect();
    if !scored.is_empty() {
        let mut csv = String::from("frame,view,psnr,ssim\n");
        for (frame, view) in scored {
            let reference = appearance_matched_reference(&scene, args.source_view, view);
            csv.push_str(&format!(
                "{frame},{view},{:.6},{:.6}\n",
                psnr(&images[frame], &reference),
                ssim(&images[frame], &reference)
            ));
        }
        std::fs::write(args.out.join("eval.csv"), csv)?;
    }
    println!(
        "wrote {} frames (+warp previews) to {}",
        images.len(),
        args.out.display()
    );
    Ok(())
}

pub struct InterpolateArgs {
    pub ckpt: PathBuf,
    pub scene: PathBuf,
    pub start: usize,
    pub end: usize,
    pub frames: usize,
    pub appearance_from_start: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub cfg: f64,
}

pub fn interpolate(args: InterpolateArgs) -> Result<()> {
    let model = load_model(&args.ckpt)?;
    let scene = load_any_scene(&args.scene)?;
    check_scene_matches(&scene, &model)?;
    if args.start >= scene.views.len() || args.end >= scene.views.len() || args.start == args.end {
        bail!("--start and --end must be distinct valid view indices");
    }
    if args.frames < 3 {
        bail!("--frames must be >= 3 (two endpoints plus interior frames)");
    }
    let (start, end) = (&scene.views[args.start], &scene.views[args.end]);
    // Interior cameras: intrinsics from the start view, poses interpolated
    // (translation lerp, rotation slerp).
    let poses = interpolate_trajectory(&start.pose, &end.pose, args.frames);
    let cameras: Vec<(Intrinsics<Real>, Rigidr)> = poses[1..args.frames - 1]
        .iter()
        .map(|p| (start.intrinsics, *p))
        .collect();

    let builder = BatchBuilder::new(
        &model.ckpt.model,
        &model.codec,
        &model.schedule,
        &model.ckpt.encoder,
    );
    let opts = SampleOptions {
        cfg_scale: args.cfg,
        ablation: model.ckpt.ablation,
        ..SampleOptions::new(model.ckpt.schedule_cfg.timesteps, args.cfg)
    };
    let inference = InferenceOptions {
        appearance_from: if args.appearance_from_start { 0 } else { 1 },
        external_appearance: None,
    };
    let images = generate_views(
        &model.ckpt.denoiser,
        &builder,
        &scene,
        &[args.start, args.end],
        &cameras,
        &opts,
        &inference,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out)?;
    write_frame(&args.out, "frame_000.ppm", &start.image)?;
    for (i, image) in images.iter().enumerate() {
        write_frame(&args.out, &format!("frame_{:03}.ppm", i + 1), image)?;
    }
    write_frame(
        &args.out,
        &format!("frame_{:03}.ppm", args.frames - 1),
        &end.image,
    )?;
    println!(
        "wrote {} interpolation frames to {}",
        args.frames,
        args.out.display()
    );
    Ok(())
}

pub fn appearance_transfer(
    ckpt: &Path,
    scene_dir: &Path,
    source_view: usize,
    appearance_image: &Path,
    out: &Path,
    seed: u64,
    cfg: f64,
) -> Result<()> {
    let model = load_model(ckpt)?;
    let scene = load_any_scene(scene_dir)?;
    check_scene_matches(&scene, &model)?;
    if source_view >= scene.views.len() {
        bail!("source view {source_view} out of range");
    }
    let raw = read_image::<Real>(appearance_image)?;
    let n = model.ckpt.model.image_res;
    let (padded, _, _, _) = wildnvs_core::scenefmt::resize_and_pad(&raw, n);
    let latent = model.codec.encode(&padded)?;
    let embedding = encode_appearance(&model.ckpt.encoder, &latent)?;

    let cameras: Vec<(Intrinsics<Real>, Rigidr)> = (0..scene.views.len())
        .filter(|&i| i != source_view)
        .map(|i| (scene.views[i].intrinsics, scene.views[i].pose))
        .collect();
    if cameras.is_empty() {
        bail!("scene needs at least one non-source view to generate");
    }
    let builder = BatchBuilder::new(
        &model.ckpt.model,
        &model.codec,
        &model.schedule,
        &model.ckpt.encoder,
    );
    let opts = SampleOptions {
        cfg_scale: cfg,
        ablation: model.ckpt.ablation,
        ..SampleOptions::new(model.ckpt.schedule_cfg.timesteps, cfg)
    };
    let inference = InferenceOptions {
        appearance_from: 0,
        external_appearance: Some(embedding),
    };
    let images = generate_views(
        &model.ckpt.denoiser,
        &builder,
        &scene,
        &[source_view],
        &cameras,
        &opts,
        &inference,
        seed,
    )?;
    std::fs::create_dir_all(out)?;
    for (i, image) in images.iter().enumerate() {
        write_frame(out, &format!("frame_{i:03}.ppm"), image)?;
    }
    println!(
        "wrote {} appearance-transfer frames to {}",
        images.len(),
        out.display()
    );
    Ok(())
}

pub fn cluster(ckpt: &Path, images: &Path, k: usize, out: &Path, seed: u64) -> Result<()> {
    let model = load_model(ckpt)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(images)
        .with_context(|| format!("reading {}", images.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("png")
            )
        })
        .collect();
    files.sort();
    if files.len() < k {
        bail!("found {} images, need at least k = {k}", files.len());
    }
    let n = model.ckpt.model.image_res;
    let mut embeddings: Vec<Vec<Real>> = Vec::with_capacity(files.len());
    for file in &files {
        let raw = read_image::<Real>(file)?;
        let (padded, _, _, _) = wildnvs_core::scenefmt::resize_and_pad(&raw, n);
        let latent = model.codec.encode(&padded)?;
        embeddings.push(encode_appearance(&model.ckpt.encoder, &latent)?.0);
    }
    let result = cluster_embeddings(&embeddings, k, seed)?;
    let mut csv = String::from("file,label,pca_x,pca_y\n");
    for ((file, label), pca) in files.iter().zip(&result.labels).zip(&result.pca_2d) {
        csv.push_str(&format!(
            "{},{label},{:.6},{:.6}\n",
            file.file_name().unwrap_or_default().to_string_lossy(),
            pca[0],
            pca[1]
        ));
    }
    std::fs::write(out, csv)?;
    println!(
        "clustered {} images into {k} clusters; labels written to {}",
        files.len(),
        out.display()
    );
    Ok(())
}

pub fn warp_preview(scene_dir: &Path, source: usize, target: usize, out: &Path) -> Result<()> {
    let scene = load_any_scene(scene_dir)?;
    if source >= scene.views.len() || target >= scene.views.len() {
        bail!("view indices out of range");
    }
    let mono = scene.views[source]
        .depth
        .as_ref()
        .ok_or_else(|| anyhow!("view {source} has no depth map"))?;
    let sparse = sparse_depths_for_view(&scene, source);
    let alignment = align_depth_ransac(
        mono,
        &sparse,
        wildnvs_core::warp::RANSAC_ITERS,
        wildnvs_core::warp::RANSAC_TAU,
        0,
    )?;
    let cameras = vec![
        (scene.views[source].intrinsics, scene.views[source].pose),
        (scene.views[target].intrinsics, scene.views[target].pose),
    ];
    let warps = warp_to_all_slots(&scene, source, &cameras, &WarpOptions::default())?;
    std::fs::create_dir_all(out)?;
    let n = scene.resolution();
    write_frame(out, "self_warp.ppm", &warps[0].rgb)?;
    write_frame(out, "warp.ppm", &warps[1].rgb)?;
    write_frame(out, "coverage.ppm", &grayscale(&warps[1].coverage, n))?;
    println!(
        "warp {source} -> {target}: alignment scale {:.6} shift {:.6} rms {:.2e}, inliers {}/{}, coverage {:.1}%",
        alignment.scale,
        alignment.shift,
        alignment.residual_rms,
        alignment.inlier_mask.iter().filter(|m| **m).count(),
        alignment.inlier_mask.len(),
        100.0 * warps[1].coverage_fraction()
    );
    Ok(())
}

pub fn eval(
    ckpts: &[PathBuf],
    data: &Path,
    out: &Path,
    steps: usize,
    cfg: f64,
    seed: u64,
) -> Result<()> {
    let scenes = load_scene_dirs(data)?;
    let models: Vec<LoadedModel> = ckpts
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<_>>()?;
    for m in &models {
        if m.ckpt.model != models[0].ckpt.model {
            bail!("all checkpoints must share one model geometry");
        }
    }
    for scene in &scenes {
        if scene.resolution() != models[0].ckpt.model.image_res {
            bail!("scene resolution does not match checkpoints");
        }
    }
    let ctx = EvalContext {
        model_cfg: &models[0].ckpt.model,
        codec: &models[0].codec,
        schedule: &models[0].schedule,
        metric_encoder: &models[0].ckpt.encoder,
        sample_steps: steps,
        cfg_scale: cfg,
        seed,
    };
    let mut rows = Vec::new();
    for m in &models {
        let report = evaluate_model(
            &ctx,
            &m.ckpt.denoiser,
            &m.ckpt.encoder,
            m.ckpt.ablation,
            &scenes,
        )?;
        rows.push(AblationRow {
            ablation: m.ckpt.ablation,
            report,
        });
    }
    let csv = ablation_csv(&rows);
    std::fs::write(out, &csv)?;
    print!("{csv}");
    println!("evaluated {} checkpoints on {} scenes -> {}", ckpts.len(), scenes.len(), out.display());
    Ok(())
}
