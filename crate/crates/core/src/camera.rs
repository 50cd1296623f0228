//! Pinhole cameras, ray generation and orbit trajectories.
//!
//! Camera space follows the computer-vision convention: `+x` right, `+y`
//! down, `+z` forward. Pixel `(u, v)` is sampled at its center `(u + 0.5, v + 0.5)`.

use alloc::vec::Vec;

use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("rotation block is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation block has determinant {0}, expected +1")]
    Reflection(f64),
    #[error("focal lengths must be positive, got fx={fx} fy={fy}")]
    Focal { fx: f64, fy: f64 },
    #[error("bottom row of the pose matrix must be (0, 0, 0, 1)")]
    NotAffine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn from_fov_x(width: usize, height: usize, fov_x: f64) -> Self {
        let f = 0.5 * width as f64 / libm::tan(0.5 * fov_x);
        Intrinsics { fx: f, fy: f, cx: 0.5 * width as f64, cy: 0.5 * height as f64 }
    }

    /// Same field of view at a different resolution.
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> Self {
        let sx = to.0 as f64 / from.0 as f64;
        let sy = to.1 as f64 / from.1 as f64;
        Intrinsics { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    world_from_camera: [[f64; 4]; 4],
    intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(world_from_camera: [[f64; 4]; 4], intrinsics: Intrinsics) -> Result<Self, CameraError> {
        let m = &world_from_camera;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(CameraError::NotAffine);
        }
        let rot = Mat3([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        let err = rot.orthonormality_error();
        if !(err <= 1e-6) {
            return Err(CameraError::NotOrthonormal(err));
        }
        let det = rot.determinant();
        if det <= 0.0 {
            return Err(CameraError::Reflection(det));
        }
        let Intrinsics { fx, fy, .. } = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::Focal { fx, fy });
        }
        Ok(CameraPose { world_from_camera, intrinsics })
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(right);
        Self::from_rotation_translation(Mat3::from_columns(right, down, forward), eye, intrinsics)
    }

    pub fn from_rotation_translation(rot: Mat3, t: Vec3, intrinsics: Intrinsics) -> Result<Self, CameraError> {
        let r = &rot.0;
        Self::new(
            [
                [r[0][0], r[0][1], r[0][2], t.x],
                [r[1][0], r[1][1], r[1][2], t.y],
                [r[2][0], r[2][1], r[2][2], t.z],
                [0.0, 0.0, 0.0, 1.0],
            ],
            intrinsics,
        )
    }

    pub fn matrix(&self) -> &[[f64; 4]; 4] {
        &self.world_from_camera
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        CameraPose { world_from_camera: self.world_from_camera, intrinsics }
    }

    pub fn origin(&self) -> Vec3 {
        let m = &self.world_from_camera;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.world_from_camera;
        Mat3([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ])
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation().column(2)
    }

    /// Same camera moved by `offset` in world space.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut m = self.world_from_camera;
        m[0][3] += offset.x;
        m[1][3] += offset.y;
        m[2][3] += offset.z;
        CameraPose { world_from_camera: m, intrinsics: self.intrinsics }
    }

    /// Unit world-space direction through the center of pixel `(u, v)`.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vec3 {
        let k = &self.intrinsics;
        let d = Vec3::new((u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0);
        self.rotation().mul_vec(d.normalize())
    }

    /// Pose as transmitted on the wire: 16 row-major matrix entries and (fx, fy, cx, cy).
    pub fn to_f32(&self) -> ([f32; 16], [f32; 4]) {
        let mut m = [0f32; 16];
        for (i, v) in self.world_from_camera.iter().flatten().enumerate() {
            m[i] = *v as f32;
        }
        let k = &self.intrinsics;
        (m, [k.fx as f32, k.fy as f32, k.cx as f32, k.cy as f32])
    }

    pub fn from_f32(m: &[f32; 16], k: &[f32; 4]) -> Result<Self, CameraError> {
        let mut w = [[0f64; 4]; 4];
        for (i, v) in m.iter().enumerate() {
            w[i / 4][i % 4] = *v as f64;
        }
        Self::new(w, Intrinsics { fx: k[0] as f64, fy: k[1] as f64, cx: k[2] as f64, cy: k[3] as f64 })
    }

    /// The pose after a round trip through its `f32` wire form.
    pub fn quantized_f32(&self) -> Result<Self, CameraError> {
        let (m, k) = self.to_f32();
        Self::from_f32(&m, &k)
    }
}

/// Ray `o + t d` restricted to `[t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction, t_near: 0.0, t_far: f64::INFINITY }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// One ray per pixel center, row-major.
pub fn generate_rays(pose: &CameraPose, width: usize, height: usize) -> Vec<Ray> {
    let origin = pose.origin();
    let mut rays = Vec::with_capacity(width * height);
    for v in 0..height {
        for u in 0..width {
            rays.push(Ray::new(origin, pose.pixel_direction(u, v)));
        }
    }
    rays
}

/// Evenly spaced poses on a horizontal circle around `center`, all looking at it.
///
/// Pose `k` sits at azimuth `2πk/frames`, `height` above the center (world `+z` is up).
pub fn orbit_trajectory(
    center: Vec3,
    radius: f64,
    height: f64,
    frames: usize,
    intrinsics: Intrinsics,
) -> Result<Vec<CameraPose>, CameraError> {
    orbit_trajectory_with_phase(center, radius, height, frames, 0.0, intrinsics)
}

/// As [`orbit_trajectory`] with every azimuth offset by `phase` radians.
pub fn orbit_trajectory_with_phase(
    center: Vec3,
    radius: f64,
    height: f64,
    frames: usize,
    phase: f64,
    intrinsics: Intrinsics,
) -> Result<Vec<CameraPose>, CameraError> {
    (0..frames)
        .map(|k| {
            let az = phase + 2.0 * core::f64::consts::PI * k as f64 / frames as f64;
            let eye = center + Vec3::new(radius * libm::cos(az), radius * libm::sin(az), height);
            CameraPose::look_at(eye, center, Vec3::new(0.0, 0.0, 1.0), intrinsics)
        })
        .collect()
}
