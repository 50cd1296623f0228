//! Procedural voxel scenes used as ground truth.
//!
//! A [`SceneSpec`] lists analytic primitives; [`generate_scene`] point-samples
//! them at voxel centers. The resulting [`VoxelScene`] is itself a
//! [`RadianceField`] (trilinear between voxel centers, clamped at the
//! border), so ground-truth frames go through exactly the same compositing as
//! learned fields.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::camera::CameraPose;
use crate::math::{Mat3, Vec3};
use crate::render::{render_frame, FieldValue, FrameMaps, RadianceField, RenderError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("primitive {0} extends outside the scene bounds")]
    PrimitiveOutOfBounds(usize),
    #[error("primitive {0} has invalid parameters")]
    InvalidPrimitive(usize),
    #[error("resolution must be at least 2 per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("invalid scene bounds")]
    Bounds,
    #[error("texture amplitude must lie in [0, 1] and the cell size must be positive")]
    Texture,
    #[error("time {0} is outside [0, 1]")]
    TimeRange(f64),
    #[error("motion track: {0}")]
    Track(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { half_extent: [f64; 3] },
    Sphere { radius: f64 },
    /// Axis along the local `z`.
    Cylinder { radius: f64, half_height: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Rotation vector (axis times angle, radians).
    #[serde(default)]
    pub rotation: [f64; 3],
    pub albedo: [f64; 3],
    /// Volume density in 1 / world unit.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub resolution: [usize; 3],
    pub bounds_center: [f64; 3],
    pub bounds_half_extent: [f64; 3],
    pub primitives: Vec<Primitive>,
    /// Amplitude of a blocky solid albedo texture fixed in world space and
    /// evaluated per query, so it is not limited by `resolution` (0 = flat colors).
    #[serde(default)]
    pub texture_amplitude: f64,
    /// Texture block edge in world units.
    #[serde(default = "default_texture_cell")]
    pub texture_cell: f64,
}

fn default_texture_cell() -> f64 {
    0.125
}

impl SceneSpec {
    pub fn bounds(&self) -> Result<Aabb, SceneError> {
        Aabb::new(Vec3::from_array(self.bounds_center), Vec3::from_array(self.bounds_half_extent))
            .map_err(|_| SceneError::Bounds)
    }

    /// The reference scene in `[-1, 1]^3`: a floor slab, a box, a sphere and a
    /// cylinder at `res^3`.
    pub fn standard(res: usize) -> Self {
        SceneSpec {
            seed: 7,
            resolution: [res; 3],
            bounds_center: [0.0; 3],
            bounds_half_extent: [1.0; 3],
            primitives: vec![
                Primitive {
                    shape: Shape::Box { half_extent: [0.8, 0.8, 0.08] },
                    center: [0.0, 0.0, -0.62],
                    rotation: [0.0; 3],
                    albedo: [0.75, 0.7, 0.55],
                    density: 25.0,
                },
                Primitive {
                    shape: Shape::Box { half_extent: [0.22, 0.3, 0.25] },
                    center: [-0.3, 0.25, -0.3],
                    rotation: [0.0, 0.0, 0.5],
                    albedo: [0.85, 0.2, 0.15],
                    density: 25.0,
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.28 },
                    center: [0.35, -0.25, -0.25],
                    rotation: [0.0; 3],
                    albedo: [0.2, 0.75, 0.3],
                    density: 25.0,
                },
                Primitive {
                    shape: Shape::Cylinder { radius: 0.15, half_height: 0.4 },
                    center: [0.3, 0.4, -0.14],
                    rotation: [0.0; 3],
                    albedo: [0.2, 0.35, 0.9],
                    density: 25.0,
                },
            ],
            texture_amplitude: 0.0,
            texture_cell: default_texture_cell(),
        }
    }

    /// A floor, a base block and an upright arm (primitive 2) for the
    /// articulated-motion scenes; see [`MotionTrack::arm_swing`].
    pub fn arm(res: usize) -> Self {
        let block = |half: [f64; 3], center: [f64; 3], albedo: [f64; 3]| Primitive {
            shape: Shape::Box { half_extent: half },
            center,
            rotation: [0.0; 3],
            albedo,
            density: 25.0,
        };
        SceneSpec {
            seed: 3,
            resolution: [res; 3],
            bounds_center: [0.0; 3],
            bounds_half_extent: [1.0; 3],
            primitives: vec![
                block([0.8, 0.8, 0.08], [0.0, 0.0, -0.62], [0.7, 0.7, 0.65]),
                block([0.22, 0.22, 0.12], [0.0, 0.0, -0.42], [0.3, 0.3, 0.8]),
                block([0.09, 0.09, 0.32], [0.0, 0.0, 0.02], [0.9, 0.5, 0.1]),
            ],
            texture_amplitude: 0.0,
            texture_cell: default_texture_cell(),
        }
    }

    /// `count` random primitives inside `[-1, 1]^3`, fully determined by `seed`.
    pub fn random(seed: u64, count: usize, res: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let primitives = (0..count)
            .map(|_| {
                let size = rng.random_range(0.1..0.3);
                let shape = match rng.random_range(0..3) {
                    0 => Shape::Box { half_extent: [size, rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)] },
                    1 => Shape::Sphere { radius: size },
                    _ => Shape::Cylinder { radius: size * 0.7, half_height: size },
                };
                // Rotated extents stay below sqrt(3) * 0.3 < 0.55.
                let lim = 1.0 - 0.55;
                Primitive {
                    shape,
                    center: [rng.random_range(-lim..lim), rng.random_range(-lim..lim), rng.random_range(-lim..lim)],
                    rotation: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    albedo: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                    density: rng.random_range(5.0..30.0),
                }
            })
            .collect();
        SceneSpec {
            seed,
            resolution: [res; 3],
            bounds_center: [0.0; 3],
            bounds_half_extent: [1.0; 3],
            primitives,
            texture_amplitude: 0.0,
            texture_cell: default_texture_cell(),
        }
    }
}

/// A primitive with a resolved world placement.
#[derive(Debug, Clone, Copy)]
struct Placed {
    shape: Shape,
    center: Vec3,
    /// World from local.
    rotation: Mat3,
    albedo: [f64; 3],
    density: f64,
}

impl Placed {
    fn from_primitive(p: &Primitive) -> Self {
        Placed {
            shape: p.shape,
            center: Vec3::from_array(p.center),
            rotation: Mat3::from_rotation_vector(Vec3::from_array(p.rotation)),
            albedo: p.albedo,
            density: p.density,
        }
    }

    fn local(&self, x: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(x - self.center)
    }

    fn contains(&self, x: Vec3) -> bool {
        let l = self.local(x);
        match self.shape {
            Shape::Box { half_extent: h } => {
                libm::fabs(l.x) <= h[0] && libm::fabs(l.y) <= h[1] && libm::fabs(l.z) <= h[2]
            }
            Shape::Sphere { radius } => l.dot(l) <= radius * radius,
            Shape::Cylinder { radius, half_height } => {
                l.x * l.x + l.y * l.y <= radius * radius && libm::fabs(l.z) <= half_height
            }
        }
    }

    fn local_half_extent(&self) -> Vec3 {
        match self.shape {
            Shape::Box { half_extent } => Vec3::from_array(half_extent),
            Shape::Sphere { radius } => Vec3::splat(radius),
            Shape::Cylinder { radius, half_height } => Vec3::new(radius, radius, half_height),
        }
    }

    fn valid(&self) -> bool {
        let h = self.local_half_extent();
        let pos = |v: f64| v > 0.0 && v.is_finite();
        pos(h.x) && pos(h.y) && pos(h.z) && self.density >= 0.0 && self.albedo.iter().all(|c| (0.0..=1.0).contains(c))
    }

    /// World-space half extent of the rotated local box.
    fn world_half_extent(&self) -> Vec3 {
        let h = self.local_half_extent();
        let r = &self.rotation.0;
        let row = |i: usize| libm::fabs(r[i][0]) * h.x + libm::fabs(r[i][1]) * h.y + libm::fabs(r[i][2]) * h.z;
        Vec3::new(row(0), row(1), row(2))
    }
}

/// Voxel grid of density and albedo, sampled at voxel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelScene {
    resolution: [usize; 3],
    bounds: Aabb,
    /// `(r, g, b, σ)` per voxel, x fastest.
    voxels: Vec<[f64; 4]>,
    spec: SceneSpec,
}

impl VoxelScene {
    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn voxel_size(&self) -> Vec3 {
        let s = self.bounds.size();
        Vec3::new(s.x / self.resolution[0] as f64, s.y / self.resolution[1] as f64, s.z / self.resolution[2] as f64)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let v = self.voxel_size();
        self.bounds.min()
            + Vec3::new((i as f64 + 0.5) * v.x, (j as f64 + 0.5) * v.y, (k as f64 + 0.5) * v.z)
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn density(&self, i: usize, j: usize, k: usize) -> f64 {
        self.voxels[self.idx(i, j, k)][3]
    }

    pub fn albedo(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let v = self.voxels[self.idx(i, j, k)];
        [v[0], v[1], v[2]]
    }

    /// Every density value, x fastest.
    pub fn densities(&self) -> impl Iterator<Item = f64> + '_ {
        self.voxels.iter().map(|v| v[3])
    }

    /// Raw voxel payload `(r, g, b, σ)`, x fastest.
    pub fn voxels(&self) -> &[[f64; 4]] {
        &self.voxels
    }
}

impl RadianceField for VoxelScene {
    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn query(&self, x: Vec3) -> FieldValue {
        let lo = self.bounds.min();
        let v = self.voxel_size();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let g = ((x[a] - lo[a]) / v[a] - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (libm::floor(g) as usize).min(n - 2);
            base[a] = i;
            frac[a] = g - i as f64;
        }
        let mut acc = [0.0; 4];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            if w == 0.0 {
                continue;
            }
            let vox = &self.voxels[self.idx(base[0] + dx, base[1] + dy, base[2] + dz)];
            for f in 0..4 {
                acc[f] += w * vox[f];
            }
        }
        let f = texture_factor(self.spec.seed, x, self.spec.texture_cell, self.spec.texture_amplitude);
        let rgb = if f == 1.0 { [acc[0], acc[1], acc[2]] } else { [acc[0], acc[1], acc[2]].map(|c| (c * f).clamp(0.0, 1.0)) };
        FieldValue { rgb, sigma: acc[3] }
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic brightness factor in `[1 - a, 1 + a]` for the world-space
/// texture block containing `x`.
fn texture_factor(seed: u64, x: Vec3, cell: f64, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return 1.0;
    }
    let q = |v: f64| libm::floor(v / cell) as i64 as u64;
    let mut h = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for v in [q(x.x), q(x.y), q(x.z)] {
        h = mix64(h ^ v);
    }
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    1.0 + amplitude * (2.0 * u - 1.0)
}

fn rasterize(spec: &SceneSpec, placed: &[Placed]) -> Result<VoxelScene, SceneError> {
    let res = spec.resolution;
    if res.iter().any(|&n| n < 2) {
        return Err(SceneError::Resolution(res));
    }
    let bounds = spec.bounds()?;
    let mut scene = VoxelScene { resolution: res, bounds, voxels: vec![[0.0; 4]; res[0] * res[1] * res[2]], spec: spec.clone() };
    for k in 0..res[2] {
        for j in 0..res[1] {
            for i in 0..res[0] {
                let x = scene.voxel_center(i, j, k);
                // Later primitives overwrite earlier ones.
                if let Some(p) = placed.iter().rev().find(|p| p.contains(x)) {
                    let a = p.albedo;
                    let idx = scene.idx(i, j, k);
                    scene.voxels[idx] = [a[0], a[1], a[2], p.density];
                }
            }
        }
    }
    Ok(scene)
}

/// Voxelizes a scene specification.
pub fn generate_scene(spec: &SceneSpec) -> Result<VoxelScene, SceneError> {
    let bounds = spec.bounds()?;
    if !((0.0..=1.0).contains(&spec.texture_amplitude) && spec.texture_cell > 0.0 && spec.texture_cell.is_finite()) {
        return Err(SceneError::Texture);
    }
    let placed: Vec<Placed> = spec.primitives.iter().map(Placed::from_primitive).collect();
    for (i, p) in placed.iter().enumerate() {
        if !p.valid() {
            return Err(SceneError::InvalidPrimitive(i));
        }
        let ext = p.world_half_extent();
        let slack = 1e-9;
        if !(bounds.contains(p.center + ext * (1.0 - slack)) && bounds.contains(p.center - ext * (1.0 - slack))) {
            return Err(SceneError::PrimitiveOutOfBounds(i));
        }
    }
    rasterize(spec, &placed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub t: f64,
    pub translation: [f64; 3],
    /// Rotation vector about the track pivot.
    pub rotation: [f64; 3],
}

/// Rigid keyframed motion of one primitive over normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionTrack {
    pub primitive: usize,
    /// Rotation center in world space; defaults to the primitive center.
    #[serde(default)]
    pub pivot: Option<[f64; 3]>,
    pub keyframes: Vec<Keyframe>,
}

impl MotionTrack {
    pub fn validate(&self) -> Result<(), SceneError> {
        let first = self.keyframes.first().ok_or(SceneError::Track("no keyframes"))?;
        if first.t != 0.0 || first.translation != [0.0; 3] || first.rotation != [0.0; 3] {
            return Err(SceneError::Track("first keyframe must be the identity at t = 0"));
        }
        if self.keyframes.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(SceneError::Track("keyframe times must be strictly increasing"));
        }
        if self.keyframes.iter().any(|k| !(0.0..=1.0).contains(&k.t)) {
            return Err(SceneError::Track("keyframe times must lie in [0, 1]"));
        }
        Ok(())
    }

    /// The arm of [`SceneSpec::arm`] tilting about `x` around its foot,
    /// reaching `angle` radians at `t = 1` (three keyframes).
    pub fn arm_swing(angle: f64) -> Self {
        let key = |t: f64| Keyframe { t, translation: [0.0; 3], rotation: [angle * t, 0.0, 0.0] };
        MotionTrack { primitive: 2, pivot: Some([0.0, 0.0, -0.3]), keyframes: vec![key(0.0), key(0.5), key(1.0)] }
    }

    /// Linearly interpolated `(translation, rotation vector)` at `t`; holds
    /// the last keyframe after its time.
    pub fn pose_at(&self, t: f64) -> (Vec3, Vec3) {
        let k = &self.keyframes;
        let last = k[k.len() - 1];
        if t >= last.t {
            return (Vec3::from_array(last.translation), Vec3::from_array(last.rotation));
        }
        let i = k.iter().rposition(|kf| kf.t <= t).unwrap_or(0);
        let (a, b) = (k[i], k[i + 1]);
        let s = (t - a.t) / (b.t - a.t);
        let l = |x: [f64; 3], y: [f64; 3]| Vec3::from_array(x) + (Vec3::from_array(y) - Vec3::from_array(x)) * s;
        (l(a.translation, b.translation), l(a.rotation, b.rotation))
    }
}

/// The scene with the tracked primitive moved to its pose at `t`. Stateless:
/// always re-voxelized from the scene's own specification.
pub fn animate_scene(scene: &VoxelScene, track: &MotionTrack, t: f64) -> Result<VoxelScene, SceneError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(SceneError::TimeRange(t));
    }
    track.validate()?;
    let spec = &scene.spec;
    let mut placed: Vec<Placed> = spec.primitives.iter().map(Placed::from_primitive).collect();
    let target = placed.get_mut(track.primitive).ok_or(SceneError::Track("primitive index out of range"))?;
    let (translation, rotvec) = track.pose_at(t);
    let r = Mat3::from_rotation_vector(rotvec);
    let pivot = track.pivot.map(Vec3::from_array).unwrap_or(target.center);
    target.center = pivot + r.mul_vec(target.center - pivot) + translation;
    target.rotation = r.mul_mat(&target.rotation);
    rasterize(spec, &placed)
}

/// Ground-truth maps of a voxel scene, using the learned renderer's compositing.
pub fn trace_ground_truth(
    scene: &VoxelScene,
    pose: &CameraPose,
    width: usize,
    height: usize,
    samples_per_ray: usize,
) -> Result<FrameMaps, RenderError> {
    render_frame(scene, pose, width, height, samples_per_ray)
}
