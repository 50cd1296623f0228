//! Dataset directories laid out like common NeRF datasets.
//!
//! `transforms.json` holds shared intrinsics and one entry per view with a
//! camera-to-world matrix in the OpenGL camera convention (`x` right, `y` up,
//! looking down `-z`), the image path and optional `time` and opacity map.
//! Internally cameras look down `+z` with `y` down, so matrices are converted
//! by flipping the `y` and `z` camera axes.

use std::path::{Path, PathBuf};

use radfield_core::train::PosedImage;
use radfield_core::{CameraPose, Intrinsics};
use serde::{Deserialize, Serialize};

use crate::io::{self, IoError, MapScale};

pub const TRANSFORMS_FILE: &str = "transforms.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    /// 16-bit PGM opacity of the view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opacity_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transforms {
    pub camera_angle_x: f64,
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    pub frames: Vec<FrameEntry>,
}

/// Flips the camera `y` and `z` axes; its own inverse.
pub fn flip_camera_axes(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = *m;
    for row in &mut out {
        row[1] = -row[1];
        row[2] = -row[2];
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("view {index}: {reason}")]
    View { index: usize, reason: String },
    #[error("dataset has no views")]
    Empty,
    #[error("views have different sizes or intrinsics")]
    Mixed,
}

/// Writes images, opacity maps and `transforms.json` into `dir`.
pub fn write_dataset(dir: &Path, views: &[PosedImage]) -> Result<(), DatasetError> {
    let first = views.first().ok_or(DatasetError::Empty)?;
    let (w, h) = (first.image.width(), first.image.height());
    let k = first.pose.intrinsics();
    if views.iter().any(|v| (v.image.width(), v.image.height()) != (w, h) || v.pose.intrinsics() != k) {
        return Err(DatasetError::Mixed);
    }
    let dynamic = views.iter().any(|v| v.time != 0.0);
    let mut frames = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let file_path = format!("images/r_{i:03}.ppm");
        io::write_ppm(&dir.join(&file_path), &v.image.to_frame())?;
        let opacity_path = match &v.alpha {
            Some(a) => {
                let p = format!("images/r_{i:03}_opacity.pgm");
                io::write_map(&dir.join(&p), a, MapScale { scale: 65535.0 })?;
                Some(p)
            }
            None => None,
        };
        frames.push(FrameEntry {
            file_path,
            transform_matrix: flip_camera_axes(v.pose.matrix()),
            time: dynamic.then_some(v.time),
            opacity_path,
        });
    }
    let t = Transforms {
        camera_angle_x: 2.0 * (0.5 * w as f64 / k.fx).atan(),
        fl_x: k.fx,
        fl_y: k.fy,
        cx: k.cx,
        cy: k.cy,
        w,
        h,
        frames,
    };
    io::write_json(&dir.join(TRANSFORMS_FILE), &t)?;
    Ok(())
}

pub fn read_transforms(dir: &Path) -> Result<Transforms, DatasetError> {
    Ok(io::read_json(&dir.join(TRANSFORMS_FILE))?)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Loads every view; images are converted to `[0, 1]`.
pub fn read_dataset(dir: &Path) -> Result<Vec<PosedImage>, DatasetError> {
    let t = read_transforms(dir)?;
    if t.frames.is_empty() {
        return Err(DatasetError::Empty);
    }
    let k = Intrinsics { fx: t.fl_x, fy: t.fl_y, cx: t.cx, cy: t.cy };
    t.frames
        .iter()
        .enumerate()
        .map(|(index, f)| {
            let view_err = |reason: String| DatasetError::View { index, reason };
            let pose = CameraPose::new(flip_camera_axes(&f.transform_matrix), k).map_err(|e| view_err(e.to_string()))?;
            let image = io::read_ppm(&resolve(dir, &f.file_path))?.to_float();
            if (image.width(), image.height()) != (t.w, t.h) {
                return Err(view_err(format!("image is {}x{}, expected {}x{}", image.width(), image.height(), t.w, t.h)));
            }
            let alpha = f.opacity_path.as_deref().map(|p| io::read_map(&resolve(dir, p))).transpose()?;
            let time = f.time.unwrap_or(0.0);
            if !(0.0..=1.0).contains(&time) {
                return Err(view_err(format!("time {time} is outside [0, 1]")));
            }
            Ok(PosedImage { pose, image, alpha, time })
        })
        .collect()
}
