//! End-to-end pipelines built from a [`RunConfig`].

use std::fmt::Write as _;

use radfield_core::codec::{run_compression_experiment, ExperimentError, SavingsRecord};
use radfield_core::depthnav::{morph_open, opacity_mask, processed_disparity, DepthError};
use radfield_core::dynamic::{render_dynamic, train_dynamic, DeformationField, DynamicError, DynamicTrainConfig};
use radfield_core::metrics::{psnr, ssim, MetricError};
use radfield_core::render::{render_frame, FrameMaps, RadianceField, RenderError};
use radfield_core::scene::{animate_scene, generate_scene, SceneError, VoxelScene};
use radfield_core::train::{train, PosedImage, TrainError, TrainReport};
use radfield_core::{CameraPose, ImageF, MultiresField};

use crate::config::{ConfigError, DisparitySpec, DynamicSpec, OrbitSpec, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scene")]
    Scene(#[from] SceneError),
    #[error("camera")]
    Camera(#[from] radfield_core::camera::CameraError),
    #[error("field")]
    Field(#[from] radfield_core::field::FieldError),
    #[error("render")]
    Render(#[from] RenderError),
    #[error("training")]
    Train(#[from] TrainError),
    #[error("dynamic")]
    Dynamic(#[from] DynamicError),
    #[error("compression")]
    Experiment(#[from] ExperimentError),
    #[error("metrics")]
    Metric(#[from] MetricError),
    #[error("disparity")]
    Depth(#[from] DepthError),
    #[error("the config has no dynamic section")]
    NotDynamic,
}

/// Renders `field` from every pose; `alpha` keeps the opacity maps.
pub fn render_views<F: RadianceField + Sync + ?Sized>(
    field: &F,
    poses: &[CameraPose],
    orbit: &OrbitSpec,
    samples: usize,
    time: f64,
    alpha: bool,
) -> Result<Vec<PosedImage>, PipelineError> {
    poses
        .iter()
        .map(|p| {
            let m = render_frame(field, p, orbit.width(), orbit.image_height(), samples)?;
            Ok(PosedImage { pose: *p, image: m.rgb, alpha: alpha.then_some(m.opacity), time })
        })
        .collect()
}

pub fn oracle_scene(cfg: &RunConfig) -> Result<VoxelScene, PipelineError> {
    Ok(generate_scene(&cfg.scene)?)
}

fn dynamic_spec(cfg: &RunConfig) -> Result<&DynamicSpec, PipelineError> {
    cfg.dynamic.as_ref().ok_or(PipelineError::NotDynamic)
}

/// Training views of the oracle; one orbit per capture time for dynamic configs.
pub fn training_set(cfg: &RunConfig, scene: &VoxelScene) -> Result<Vec<PosedImage>, PipelineError> {
    let poses = cfg.views.poses()?;
    match &cfg.dynamic {
        None => render_views(scene, &poses, &cfg.views, cfg.oracle_samples, 0.0, cfg.alpha),
        Some(d) => {
            let mut out = Vec::with_capacity(poses.len() * d.times.len());
            for &t in &d.times {
                let moved = animate_scene(scene, &d.track, t)?;
                out.extend(render_views(&moved, &poses, &cfg.views, cfg.oracle_samples, t, cfg.alpha)?);
            }
            Ok(out)
        }
    }
}

/// Drops the opacity maps unless the config asks for them.
pub fn apply_alpha_setting(cfg: &RunConfig, mut views: Vec<PosedImage>) -> Vec<PosedImage> {
    if !cfg.alpha {
        views.iter_mut().for_each(|v| v.alpha = None);
    }
    views
}

pub fn train_static(cfg: &RunConfig, views: &[PosedImage]) -> Result<(MultiresField, TrainReport), PipelineError> {
    cfg.validate()?;
    let mut field = cfg.field.build(cfg.scene.bounds()?, cfg.field_seed())?;
    let report = train(&mut field, views, &cfg.train)?;
    field.quantize_to_f32();
    Ok((field, report))
}

pub fn train_dynamic_model(
    cfg: &RunConfig,
    views: &[PosedImage],
) -> Result<(MultiresField, DeformationField, TrainReport), PipelineError> {
    cfg.validate()?;
    let d = dynamic_spec(cfg)?;
    let bounds = cfg.scene.bounds()?;
    let mut canonical = cfg.field.build(bounds, cfg.field_seed())?;
    let mut defo = DeformationField::zeros(bounds, d.deformation_resolution, d.keys)?;
    let tc = DynamicTrainConfig { train: cfg.train.clone(), warmup_iterations: d.warmup_iterations };
    let report = train_dynamic(&mut canonical, &mut defo, views, &tc)?;
    canonical.quantize_to_f32();
    defo.quantize_to_f32();
    Ok((canonical, defo, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub frame_idx: usize,
    pub time: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// `frame_idx,psnr_db,ssim`; infinite PSNR is written as `inf`.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("frame_idx,psnr_db,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.frame_idx, fmt_psnr(r.psnr_db), r.ssim);
    }
    s
}

/// As [`eval_csv`] with a `time` column.
pub fn timed_eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("frame_idx,time,psnr_db,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.frame_idx, r.time, fmt_psnr(r.psnr_db), r.ssim);
    }
    s
}

pub fn compare(frame_idx: usize, time: f64, reference: &ImageF, test: &ImageF, max: f64) -> Result<EvalRow, PipelineError> {
    Ok(EvalRow { frame_idx, time, psnr_db: psnr(reference, test, max)?, ssim: ssim(reference, test, max)? })
}

/// Held-out oracle renders and field renders.
pub struct StaticEval {
    pub rows: Vec<EvalRow>,
    pub oracle: Vec<FrameMaps>,
    pub rendered: Vec<FrameMaps>,
}

pub fn evaluate_static(cfg: &RunConfig, scene: &VoxelScene, field: &MultiresField) -> Result<StaticEval, PipelineError> {
    let (w, h) = (cfg.holdout.width(), cfg.holdout.image_height());
    let mut out = StaticEval { rows: Vec::new(), oracle: Vec::new(), rendered: Vec::new() };
    for (i, p) in cfg.holdout.poses()?.iter().enumerate() {
        let gt = render_frame(scene, p, w, h, cfg.oracle_samples)?;
        let pr = render_frame(field, p, w, h, cfg.oracle_samples)?;
        out.rows.push(compare(i, 0.0, &gt.rgb, &pr.rgb, 1.0)?);
        out.oracle.push(gt);
        out.rendered.push(pr);
    }
    Ok(out)
}

/// Capture trajectory and the oracle frames along it.
pub fn capture(cfg: &RunConfig, scene: &VoxelScene) -> Result<(Vec<CameraPose>, Vec<ImageF>), PipelineError> {
    let traj = &cfg.compression.trajectory;
    let poses = traj.poses()?;
    let frames = render_views(scene, &poses, traj, cfg.oracle_samples, 0.0, false)?.into_iter().map(|v| v.image).collect();
    Ok((poses, frames))
}

pub fn compression<F: RadianceField + Sync + ?Sized>(
    cfg: &RunConfig,
    reference: &F,
    reference_samples: usize,
    poses: &[CameraPose],
    frames: &[ImageF],
) -> Result<Vec<SavingsRecord>, PipelineError> {
    let res: Vec<(usize, usize)> = cfg.compression.resolutions.iter().map(|r| (r[0], r[1])).collect();
    Ok(run_compression_experiment(reference, poses, frames, &res, cfg.compression.q, reference_samples)?)
}

/// Mean savings per resolution, in the config's order.
pub fn mean_savings(records: &[SavingsRecord], resolutions: &[[usize; 2]]) -> Vec<f64> {
    resolutions
        .iter()
        .map(|r| {
            let v: Vec<f64> = records.iter().filter(|s| s.resolution == (r[0], r[1])).map(|s| s.savings_percent).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        })
        .collect()
}

/// Opacity threshold, opening and crop of the disparity map.
pub fn processed_disparity_map(maps: &FrameMaps, p: &DisparitySpec) -> Result<ImageF, PipelineError> {
    let mask = morph_open(&opacity_mask(&maps.opacity, p.tau)?, p.kernel, p.iterations)?;
    Ok(processed_disparity(&maps.disparity, &mask)?)
}

/// `min(v / norm, 1)` per pixel.
pub fn normalize_map(map: &ImageF, norm: f64) -> ImageF {
    let mut out = map.clone();
    out.data_mut().iter_mut().for_each(|v| *v = (*v / norm).min(1.0));
    out
}

pub struct DynamicEval {
    pub rows: Vec<EvalRow>,
    /// Normalized processed disparity maps: `(oracle, model)` per row.
    pub maps: Vec<(ImageF, ImageF)>,
}

/// Processed disparity of the model vs the animated oracle at every
/// held-out pose and capture time. Both maps are divided by the oracle's
/// largest disparity and compared with peak value 1.
pub fn evaluate_dynamic(
    cfg: &RunConfig,
    scene: &VoxelScene,
    canonical: &MultiresField,
    defo: &DeformationField,
) -> Result<DynamicEval, PipelineError> {
    let d = dynamic_spec(cfg)?;
    let (w, h) = (cfg.holdout.width(), cfg.holdout.image_height());
    let poses = cfg.holdout.poses()?;
    let mut out = DynamicEval { rows: Vec::new(), maps: Vec::new() };
    for &t in &d.times {
        let moved = animate_scene(scene, &d.track, t)?;
        for p in &poses {
            let gt = render_frame(&moved, p, w, h, cfg.oracle_samples)?;
            let pr = render_dynamic(canonical, defo, p, t, w, h, cfg.oracle_samples)?;
            let norm = gt.disparity.data().iter().copied().fold(0.0, f64::max);
            let norm = if norm > 0.0 { norm } else { 1.0 };
            let a = normalize_map(&processed_disparity_map(&gt, &cfg.disparity)?, norm);
            let b = normalize_map(&processed_disparity_map(&pr, &cfg.disparity)?, norm);
            out.rows.push(compare(out.rows.len(), t, &a, &b, 1.0)?);
            out.maps.push((a, b));
        }
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
