//! Savings of field-referenced residual coding over intra coding.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{compression_savings, encode_frame, encode_intra, CodecError};
use crate::camera::CameraPose;
use crate::image::ImageF;
use crate::render::{render_frame, RadianceField, RenderError};

pub const SAVINGS_CSV_HEADER: &str = "frame_idx,resolution,i_size,p_size,savings_percent";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("{poses} poses but {frames} frames")]
    Misaligned { poses: usize, frames: usize },
    #[error("frame {0} does not have the capture resolution")]
    FrameShape(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavingsRecord {
    pub frame_idx: usize,
    pub resolution: (usize, usize),
    /// Intra-coded size of the real frame.
    pub i_size: usize,
    /// Size of the residual against the field-rendered reference.
    pub p_size: usize,
    pub savings_percent: f64,
}

/// For every pose, renders the field at the capture resolution, then for
/// every target resolution area-downsamples both the real frame and the
/// render, quantizes them to 8 bits and measures intra vs residual sizes.
pub fn run_compression_experiment<F: RadianceField + Sync + ?Sized>(
    field: &F,
    trajectory: &[CameraPose],
    real_frames: &[ImageF],
    resolutions: &[(usize, usize)],
    q: u8,
    n_samples: usize,
) -> Result<Vec<SavingsRecord>, ExperimentError> {
    if trajectory.len() != real_frames.len() {
        return Err(ExperimentError::Misaligned { poses: trajectory.len(), frames: real_frames.len() });
    }
    let mut out = Vec::with_capacity(trajectory.len() * resolutions.len());
    for (idx, (pose, real)) in trajectory.iter().zip(real_frames).enumerate() {
        let (w, h) = (real.width(), real.height());
        if real.channels() != 3 {
            return Err(ExperimentError::FrameShape(idx));
        }
        let reference = render_frame(field, pose, w, h, n_samples)?.rgb;
        for &(rw, rh) in resolutions {
            let real_r = real.resize_area(rw, rh).to_frame();
            let ref_r = reference.resize_area(rw, rh).to_frame();
            let i_size = encode_intra(&real_r, q)?.len();
            let p_size = encode_frame(&real_r, &ref_r, q)?.len();
            let savings_percent = compression_savings(i_size, p_size).expect("intra stream is never empty");
            out.push(SavingsRecord { frame_idx: idx, resolution: (rw, rh), i_size, p_size, savings_percent });
        }
    }
    Ok(out)
}

/// CSV report. The leading comment records that intra/residual modes of
/// this codec stand in for I/P frames of a production video codec.
pub fn savings_csv(records: &[SavingsRecord]) -> String {
    let mut s = String::new();
    s.push_str("# I = intra-mode residual stream (zero reference), P = residual against the field render; same codec for both\n");
    s.push_str(SAVINGS_CSV_HEADER);
    s.push('\n');
    for r in records {
        let res = format!("{}x{}", r.resolution.0, r.resolution.1);
        let _ = writeln!(s, "{},{},{},{},{}", r.frame_idx, res, r.i_size, r.p_size, r.savings_percent);
    }
    s
}
