//! Discrete volume rendering shared by the learned fields and the scene oracle.
//!
//! Along a clipped ray `[t_n, t_f]` split into `n` equal segments of length
//! `δ`, sample `i` sits at the segment midpoint `t_i`. With
//! `α_i = 1 - exp(-σ_i δ)` and `T_i = Π_{j<i} (1 - α_j)` the weights are
//! `w_i = T_i α_i` and
//!
//! ```text
//! rgb       = Σ w_i c_i
//! opacity   = Σ w_i
//! depth     = Σ w_i t_i / max(opacity, ε)
//! disparity = opacity / max(depth, ε)     (0 where opacity < 1e-6)
//! ```

use alloc::vec::Vec;

use crate::aabb::Aabb;
use crate::camera::{CameraPose, Ray};
use crate::image::ImageF;
use crate::math::Vec3;

pub const DEPTH_EPSILON: f64 = 1e-10;
/// Pixels with less accumulated opacity than this get zero disparity.
pub const MIN_OPACITY: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("ray is not clipped to the field bounds (t_near={t_near}, t_far={t_far})")]
    Unclipped { t_near: f64, t_far: f64 },
    #[error("at least 2 samples per ray are required, got {0}")]
    TooFewSamples(usize),
}

/// Color and density at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldValue {
    pub rgb: [f64; 3],
    pub sigma: f64,
}

/// Anything that can be volume rendered.
pub trait RadianceField {
    fn bounds(&self) -> Aabb;

    /// Value at a point inside [`RadianceField::bounds`]. Points in the
    /// containment slack are clamped onto the box.
    fn query(&self, x: Vec3) -> FieldValue;
}

impl<F: RadianceField + ?Sized> RadianceField for &F {
    fn bounds(&self) -> Aabb {
        (**self).bounds()
    }

    fn query(&self, x: Vec3) -> FieldValue {
        (**self).query(x)
    }
}

/// Slab test. Returns the entry/exit parameters intersected with the ray's
/// own interval, with the entry clamped to be non-negative.
pub fn clip_ray_aabb(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    let lo = bounds.min();
    let hi = bounds.max();
    let mut t0 = libm::fmax(ray.t_near, 0.0);
    let mut t1 = ray.t_far;
    for axis in 0..3 {
        let o = ray.origin[axis];
        let d = ray.direction[axis];
        if d == 0.0 {
            if o < lo[axis] || o > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut a, mut b) = ((lo[axis] - o) * inv, (hi[axis] - o) * inv);
        if a > b {
            core::mem::swap(&mut a, &mut b);
        }
        t0 = libm::fmax(t0, a);
        t1 = libm::fmin(t1, b);
        if t0 > t1 {
            return None;
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// The ray restricted to `bounds`, or `None` on a miss.
pub fn clipped(ray: &Ray, bounds: &Aabb) -> Option<Ray> {
    clip_ray_aabb(ray, bounds).map(|(t_near, t_far)| Ray { t_near, t_far, ..*ray })
}

fn check_clipped(ray: &Ray, bounds: &Aabb, n_samples: usize) -> Result<(), RenderError> {
    if n_samples < 2 {
        return Err(RenderError::TooFewSamples(n_samples));
    }
    let ok = ray.t_near >= 0.0
        && ray.t_far.is_finite()
        && ray.t_near < ray.t_far
        && bounds.contains(ray.at(ray.t_near))
        && bounds.contains(ray.at(ray.t_far));
    if ok {
        Ok(())
    } else {
        Err(RenderError::Unclipped { t_near: ray.t_near, t_far: ray.t_far })
    }
}

/// Midpoint parameters `t_i` and the common segment length.
pub fn sample_points(ray: &Ray, n_samples: usize) -> (impl Iterator<Item = f64>, f64) {
    let delta = (ray.t_far - ray.t_near) / n_samples as f64;
    let t_near = ray.t_near;
    ((0..n_samples).map(move |i| t_near + (i as f64 + 0.5) * delta), delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub disparity: f64,
}

/// Front-to-back compositing state.
#[derive(Debug, Clone, Copy)]
pub struct Compositor {
    transmittance: f64,
    rgb: [f64; 3],
    opacity: f64,
    depth_sum: f64,
}

impl Default for Compositor {
    fn default() -> Self {
        Compositor { transmittance: 1.0, rgb: [0.0; 3], opacity: 0.0, depth_sum: 0.0 }
    }
}

impl Compositor {
    /// Adds one segment and returns its weight `w_i`.
    pub fn push(&mut self, value: FieldValue, t: f64, delta: f64) -> f64 {
        let optical = value.sigma * delta;
        let alpha = -libm::expm1(-optical);
        let w = self.transmittance * alpha;
        for c in 0..3 {
            self.rgb[c] += w * value.rgb[c];
        }
        self.opacity += w;
        self.depth_sum += w * t;
        self.transmittance *= libm::exp(-optical);
        w
    }

    /// Transmittance in front of the next segment.
    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn finish(&self) -> RayOutput {
        let depth = if self.opacity > 0.0 { self.depth_sum / libm::fmax(self.opacity, DEPTH_EPSILON) } else { 0.0 };
        let disparity =
            if self.opacity < MIN_OPACITY { 0.0 } else { self.opacity / libm::fmax(depth, DEPTH_EPSILON) };
        RayOutput { rgb: self.rgb, opacity: self.opacity, depth, disparity }
    }
}

/// Renders a ray that has already been clipped to the field bounds.
pub fn render_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, n_samples: usize) -> Result<RayOutput, RenderError> {
    check_clipped(ray, &field.bounds(), n_samples)?;
    let mut comp = Compositor::default();
    let (ts, delta) = sample_points(ray, n_samples);
    for t in ts {
        comp.push(field.query(ray.at(t)), t, delta);
    }
    Ok(comp.finish())
}

/// Clips and renders; rays that miss the bounds come back black and transparent.
pub fn render_unclipped_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, n_samples: usize) -> Result<RayOutput, RenderError> {
    match clipped(ray, &field.bounds()) {
        Some(r) => render_ray(field, &r, n_samples),
        None if n_samples < 2 => Err(RenderError::TooFewSamples(n_samples)),
        None => Ok(RayOutput::default()),
    }
}

/// Per-sample record kept by the forward pass for backpropagation.
#[derive(Debug, Clone, Copy)]
pub struct SampleRecord {
    pub rgb: [f64; 3],
    pub weight: f64,
    /// Transmittance after this segment, `T_{i+1}`.
    pub transmittance_after: f64,
}

/// Forward pass over precomputed field values that keeps what backward needs.
pub fn composite_with_records(values: &[FieldValue], delta: f64, t_near: f64, records: &mut Vec<SampleRecord>) -> RayOutput {
    records.clear();
    let mut comp = Compositor::default();
    for (i, v) in values.iter().enumerate() {
        let t = t_near + (i as f64 + 0.5) * delta;
        let weight = comp.push(*v, t, delta);
        records.push(SampleRecord { rgb: v.rgb, weight, transmittance_after: comp.transmittance() });
    }
    comp.finish()
}

/// Gradient of `L` with respect to each sample's color and density, given
/// `dL/d(rgb)` of the composited color.
///
/// `dC/dc_i = w_i` and `dC/dσ_i = δ (T_{i+1} c_i - (C - Σ_{j≤i} w_j c_j))`.
pub fn composite_backward(
    records: &[SampleRecord],
    rgb: [f64; 3],
    delta: f64,
    d_rgb: [f64; 3],
    mut sink: impl FnMut(usize, [f64; 3], f64),
) {
    let mut prefix = [0.0; 3];
    for (i, r) in records.iter().enumerate() {
        for c in 0..3 {
            prefix[c] += r.weight * r.rgb[c];
        }
        let mut d_sigma = 0.0;
        let mut d_c = [0.0; 3];
        for c in 0..3 {
            d_sigma += d_rgb[c] * (r.transmittance_after * r.rgb[c] - (rgb[c] - prefix[c]));
            d_c[c] = d_rgb[c] * r.weight;
        }
        sink(i, d_c, d_sigma * delta);
    }
}

/// Per-view rendered maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMaps {
    pub rgb: ImageF,
    pub opacity: ImageF,
    pub depth: ImageF,
    pub disparity: ImageF,
}

impl FrameMaps {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    fn from_outputs(width: usize, height: usize, out: &[RayOutput]) -> Self {
        let one = |f: fn(&RayOutput) -> f64| {
            ImageF::from_vec(width, height, 1, out.iter().map(f).collect()).expect("sizes match")
        };
        let rgb = ImageF::from_vec(width, height, 3, out.iter().flat_map(|o| o.rgb).collect()).expect("sizes match");
        FrameMaps { rgb, opacity: one(|o| o.opacity), depth: one(|o| o.depth), disparity: one(|o| o.disparity) }
    }
}

/// Renders every pixel of `pose`. Rows are independent, so the result does
/// not depend on how the work is scheduled.
pub fn render_frame<F: RadianceField + Sync + ?Sized>(
    field: &F,
    pose: &CameraPose,
    width: usize,
    height: usize,
    n_samples: usize,
) -> Result<FrameMaps, RenderError> {
    if n_samples < 2 {
        return Err(RenderError::TooFewSamples(n_samples));
    }
    let mut out = alloc::vec![RayOutput::default(); width * height];
    let origin = pose.origin();
    let row = |v: usize, dst: &mut [RayOutput]| -> Result<(), RenderError> {
        for (u, px) in dst.iter_mut().enumerate() {
            *px = render_unclipped_ray(field, &Ray::new(origin, pose.pixel_direction(u, v)), n_samples)?;
        }
        Ok(())
    };
    if width > 0 {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.par_chunks_mut(width).enumerate().try_for_each(|(v, dst)| row(v, dst))?;
        }
        #[cfg(not(feature = "parallel"))]
        for (v, dst) in out.chunks_mut(width).enumerate() {
            row(v, dst)?;
        }
    }
    Ok(FrameMaps::from_outputs(width, height, &out))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant {
        bounds: Aabb,
        value: FieldValue,
    }

    impl RadianceField for Constant {
        fn bounds(&self) -> Aabb {
            self.bounds
        }
        fn query(&self, _x: Vec3) -> FieldValue {
            self.value
        }
    }

    /// Opaque half-space `x >= wall`.
    struct Wall {
        wall: f64,
    }

    impl RadianceField for Wall {
        fn bounds(&self) -> Aabb {
            Aabb::unit()
        }
        fn query(&self, x: Vec3) -> FieldValue {
            let sigma = if x.x >= self.wall { 1e3 } else { 0.0 };
            FieldValue { rgb: [1.0, 1.0, 1.0], sigma }
        }
    }

    fn x_ray() -> Ray {
        Ray::new(Vec3::new(-5.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0))
    }

    #[test]
    fn slab_clip_axis_aligned() {
        assert_eq!(clip_ray_aabb(&x_ray(), &Aabb::unit()), Some((4.0, 6.0)));
    }

    #[test]
    fn slab_clip_parallel_outside_misses() {
        let ray = Ray::new(Vec3::new(-5.0, 2.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(clip_ray_aabb(&ray, &Aabb::unit()), None);
        let behind = Ray::new(Vec3::new(5.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(clip_ray_aabb(&behind, &Aabb::unit()), None);
    }

    #[test]
    fn slab_clip_inside_origin_starts_at_zero() {
        let ray = Ray::new(Vec3::new(0.25, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(clip_ray_aabb(&ray, &Aabb::unit()), Some((0.0, 1.0)));
    }

    #[test]
    fn slab_clip_respects_ray_interval() {
        let ray = Ray { t_near: 4.5, t_far: 5.0, ..x_ray() };
        assert_eq!(clip_ray_aabb(&ray, &Aabb::unit()), Some((4.5, 5.0)));
    }

    #[test]
    fn empty_field_renders_nothing() {
        let f = Constant { bounds: Aabb::unit(), value: FieldValue { rgb: [0.7; 3], sigma: 0.0 } };
        let r = clipped(&x_ray(), &Aabb::unit()).unwrap();
        let out = render_ray(&f, &r, 64).unwrap();
        assert_eq!(out, RayOutput::default());
    }

    #[test]
    fn homogeneous_medium_matches_closed_form() {
        let c = [0.2, 0.5, 0.9];
        let sigma0 = 0.8;
        let f = Constant { bounds: Aabb::unit(), value: FieldValue { rgb: c, sigma: sigma0 } };
        let r = clipped(&x_ray(), &Aabb::unit()).unwrap();
        let out = render_ray(&f, &r, 256).unwrap();
        let expected_alpha = 1.0 - (-sigma0 * 2.0f64).exp();
        for ch in 0..3 {
            let want = c[ch] * expected_alpha;
            assert!((out.rgb[ch] - want).abs() <= 0.01 * want, "{} vs {}", out.rgb[ch], want);
        }
    }

    #[test]
    fn opaque_wall_depth_and_disparity() {
        let wall = 0.3;
        let ray = clipped(&x_ray(), &Aabb::unit()).unwrap();
        let n = 128;
        let out = render_ray(&Wall { wall }, &ray, n).unwrap();
        let d = wall + 5.0;
        let spacing = 2.0 / n as f64;
        assert!((out.depth - d).abs() <= spacing, "depth {}", out.depth);
        assert!((out.disparity - 1.0 / d).abs() < 1e-3, "disparity {}", out.disparity);
        assert!((out.opacity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_unclipped_rays_and_few_samples() {
        let f = Wall { wall: 0.0 };
        assert!(matches!(render_ray(&f, &x_ray(), 8), Err(RenderError::Unclipped { .. })));
        let r = clipped(&x_ray(), &Aabb::unit()).unwrap();
        assert_eq!(render_ray(&f, &r, 1), Err(RenderError::TooFewSamples(1)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let values: Vec<FieldValue> = (0..6)
            .map(|i| FieldValue {
                rgb: [0.1 * i as f64, 0.9 - 0.1 * i as f64, 0.5],
                sigma: 0.3 + 0.7 * i as f64,
            })
            .collect();
        let delta = 0.17;
        let g = [0.3, -1.2, 0.7];
        let loss = |vals: &[FieldValue]| {
            let mut rec = Vec::new();
            let out = composite_with_records(vals, delta, 0.0, &mut rec);
            (0..3).map(|c| g[c] * out.rgb[c]).sum::<f64>()
        };
        let mut rec = Vec::new();
        let out = composite_with_records(&values, delta, 0.0, &mut rec);
        let mut analytic = alloc::vec![([0.0; 3], 0.0); values.len()];
        composite_backward(&rec, out.rgb, delta, g, |i, dc, ds| analytic[i] = (dc, ds));
        let h = 1e-6;
        for i in 0..values.len() {
            let mut p = values.clone();
            let mut m = values.clone();
            p[i].sigma += h;
            m[i].sigma -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - analytic[i].1).abs() < 1e-8, "sigma {i}: {fd} vs {}", analytic[i].1);
            for c in 0..3 {
                let mut p = values.clone();
                let mut m = values.clone();
                p[i].rgb[c] += h;
                m[i].rgb[c] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!((fd - analytic[i].0[c]).abs() < 1e-8);
            }
        }
    }
}
