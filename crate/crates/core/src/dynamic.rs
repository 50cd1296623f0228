//! Dynamic scenes: a canonical field plus a keyed displacement grid.
//!
//! A sample at world position `x` and time `t` is looked up in the canonical
//! field at `x + Δ(x, t)`. `Δ` is trilinear over a `(D + 1)^3` vertex grid
//! and linear in time between `M` evenly spaced keys. Key 0 (t = 0) is not
//! stored: the canonical field is the scene at t = 0.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::camera::CameraPose;
use crate::field::{ByteReader, FieldError, MultiresField, FEATURES};
use crate::math::Vec3;
use crate::render::{render_frame, FieldValue, FrameMaps, RadianceField, RenderError};
use crate::train::{accumulate_batch, Adam, Differentiable, PosedImage, RaySampler, TrainConfig, TrainError, TrainReport};

const DEFORM_MAGIC: &[u8; 4] = b"DFRM";
const DEFORM_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicError {
    #[error("time {0} is outside [0, 1]")]
    TimeRange(f64),
    #[error("deformation grid needs resolution >= 1 and at least 2 time keys (got {resolution}, {keys})")]
    Grid { resolution: usize, keys: usize },
    #[error("dataset image {0} has a time outside [0, 1]")]
    DatasetTime(usize),
    #[error("deformation checkpoint: {0}")]
    Checkpoint(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Time-keyed displacement grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    bounds: Aabb,
    resolution: usize,
    keys: usize,
    /// Keys `1..M`, each `(D + 1)^3` vertices of 3 components, x fastest.
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Footprint {
    vertices: [usize; 8],
    weights: [f64; 8],
}

impl DeformationField {
    pub fn zeros(bounds: Aabb, resolution: usize, keys: usize) -> Result<Self, DynamicError> {
        if resolution == 0 || keys < 2 {
            return Err(DynamicError::Grid { resolution, keys });
        }
        let n1 = resolution + 1;
        Ok(DeformationField { bounds, resolution, keys, params: vec![0.0; (keys - 1) * n1 * n1 * n1 * 3] })
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vertex_count(&self) -> usize {
        let n1 = self.resolution + 1;
        n1 * n1 * n1
    }

    /// Time of key `k`.
    pub fn key_time(&self, k: usize) -> f64 {
        k as f64 / (self.keys - 1) as f64
    }

    /// Sets every vertex of key `k >= 1` to `value`.
    pub fn fill_key(&mut self, k: usize, value: Vec3) {
        assert!(k >= 1 && k < self.keys, "key {k} is not stored");
        let n = self.vertex_count();
        for v in 0..n {
            let o = ((k - 1) * n + v) * 3;
            self.params[o..o + 3].copy_from_slice(&value.to_array());
        }
    }

    fn footprint(&self, x: Vec3) -> Footprint {
        let p = self.bounds.normalize(x);
        let n = self.resolution;
        let n1 = n + 1;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = p[a] * n as f64;
            let i = (libm::floor(g) as usize).min(n - 1);
            base[a] = i;
            frac[a] = g - i as f64;
        }
        let mut vertices = [0usize; 8];
        let mut weights = [0.0; 8];
        for c in 0..8 {
            let d = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            weights[c] = w;
            vertices[c] = (base[0] + d[0]) + (base[1] + d[1]) * n1 + (base[2] + d[2]) * n1 * n1;
        }
        Footprint { vertices, weights }
    }

    /// Key segment `(k, f)` with `t = (k + f) / (M - 1)`, `f ∈ [0, 1]`.
    fn segment(&self, t: f64) -> (usize, f64) {
        let s = t * (self.keys - 1) as f64;
        let k = (libm::floor(s) as usize).min(self.keys - 2);
        (k, s - k as f64)
    }

    fn key_value(&self, k: usize, fp: &Footprint) -> Vec3 {
        if k == 0 {
            return Vec3::ZERO;
        }
        let base = (k - 1) * self.vertex_count();
        let mut out = Vec3::ZERO;
        for c in 0..8 {
            let o = (base + fp.vertices[c]) * 3;
            out += Vec3::new(self.params[o], self.params[o + 1], self.params[o + 2]) * fp.weights[c];
        }
        out
    }

    /// Displacement without range checks; `t` is clamped to `[0, 1]`.
    pub fn deform_unchecked(&self, x: Vec3, t: f64) -> Vec3 {
        if t <= 0.0 {
            return Vec3::ZERO;
        }
        let t = t.min(1.0);
        let fp = self.footprint(x);
        let (k, f) = self.segment(t);
        let a = self.key_value(k, &fp);
        let b = self.key_value(k + 1, &fp);
        a * (1.0 - f) + b * f
    }

    /// Adds `d loss / d params` for upstream `d loss / dΔ` at `(x, t)`.
    pub fn accumulate_backward(&self, x: Vec3, t: f64, upstream: Vec3, grad: &mut [f64]) {
        if t <= 0.0 {
            return;
        }
        let fp = self.footprint(x);
        let (k, f) = self.segment(t.min(1.0));
        let n = self.vertex_count();
        for (key, wt) in [(k, 1.0 - f), (k + 1, f)] {
            if key == 0 || wt == 0.0 {
                continue;
            }
            let base = (key - 1) * n;
            for c in 0..8 {
                let w = wt * fp.weights[c];
                let o = (base + fp.vertices[c]) * 3;
                grad[o] += w * upstream.x;
                grad[o + 1] += w * upstream.y;
                grad[o + 2] += w * upstream.z;
            }
        }
    }

    /// Largest `|Δ(x, t) - Δ(x, t')| / |t - t'|` over all `x`: the
    /// steepest per-component key-to-key change times `M - 1`.
    pub fn time_lipschitz(&self) -> f64 {
        let n = self.vertex_count() * 3;
        let mut worst: f64 = 0.0;
        for k in 0..self.keys - 1 {
            for i in 0..n {
                let a = if k == 0 { 0.0 } else { self.params[(k - 1) * n + i] };
                let b = self.params[k * n + i];
                worst = worst.max(libm::fabs(b - a));
            }
        }
        worst * (self.keys - 1) as f64
    }

    pub fn max_abs_displacement(&self) -> f64 {
        self.params.iter().fold(0.0, |m: f64, v| m.max(libm::fabs(*v)))
    }

    /// `"DFRM" | version u16 | D u32 | M u32 | bounds 6 × f64 | keys 1..M as f32`, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(62 + self.params.len() * 4);
        out.extend_from_slice(DEFORM_MAGIC);
        out.extend_from_slice(&DEFORM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.resolution as u32).to_le_bytes());
        out.extend_from_slice(&(self.keys as u32).to_le_bytes());
        for v in self.bounds.center().to_array().into_iter().chain(self.bounds.half_extent().to_array()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DynamicError> {
        let bad = |_| DynamicError::Checkpoint("truncated");
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(bad)? != DEFORM_MAGIC {
            return Err(DynamicError::Checkpoint("bad magic"));
        }
        if r.u16().map_err(bad)? != DEFORM_VERSION {
            return Err(DynamicError::Checkpoint("unsupported version"));
        }
        let resolution = r.u32().map_err(bad)? as usize;
        let keys = r.u32().map_err(bad)? as usize;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = r.f64().map_err(bad)?;
        }
        let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))
            .map_err(|_| DynamicError::Checkpoint("invalid bounds"))?;
        if resolution > 1024 || keys > 1024 {
            return Err(DynamicError::Checkpoint("grid too large"));
        }
        let mut d = Self::zeros(bounds, resolution, keys)?;
        if r.remaining().len() != d.params.len() * 4 {
            return Err(DynamicError::Checkpoint("payload length mismatch"));
        }
        for v in &mut d.params {
            *v = r.f32().map_err(bad)? as f64;
        }
        Ok(d)
    }

    pub fn quantize_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }
}

/// Displacement at `(x, t)`; exactly zero at `t = 0`.
pub fn deform(defo: &DeformationField, x: Vec3, t: f64) -> Result<Vec3, DynamicError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DynamicError::TimeRange(t));
    }
    Ok(defo.deform_unchecked(x, t))
}

/// The canonical field seen through the deformation at a fixed time.
/// Points displaced outside the bounds are empty.
#[derive(Debug, Clone, Copy)]
pub struct DeformedField<'a> {
    pub canonical: &'a MultiresField,
    pub defo: &'a DeformationField,
    pub t: f64,
}

impl RadianceField for DeformedField<'_> {
    fn bounds(&self) -> Aabb {
        RadianceField::bounds(self.canonical)
    }

    fn query(&self, x: Vec3) -> FieldValue {
        if self.t == 0.0 {
            return self.canonical.sample_raw(x).value;
        }
        let y = x + self.defo.deform_unchecked(x, self.t);
        if RadianceField::bounds(self.canonical).contains(y) {
            self.canonical.sample_raw(y).value
        } else {
            FieldValue::default()
        }
    }
}

pub fn render_dynamic(
    canonical: &MultiresField,
    defo: &DeformationField,
    pose: &CameraPose,
    t: f64,
    width: usize,
    height: usize,
    n_samples: usize,
) -> Result<FrameMaps, DynamicError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DynamicError::TimeRange(t));
    }
    Ok(render_frame(&DeformedField { canonical, defo, t }, pose, width, height, n_samples)?)
}

/// Canonical field plus deformation as one trainable model. Gradient layout:
/// canonical parameters first, then deformation parameters.
pub struct DynamicModel<'a> {
    pub canonical: &'a MultiresField,
    pub defo: &'a DeformationField,
    /// Central-difference step of the canonical spatial gradient.
    pub h: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DynamicCache {
    raw: [f64; FEATURES],
    y: Vec3,
    inside: bool,
}

impl DynamicModel<'_> {
    /// Half the finest canonical voxel edge (smallest axis).
    pub fn default_step(canonical: &MultiresField) -> f64 {
        let s = canonical.finest_spacing();
        0.5 * s.x.min(s.y).min(s.z)
    }
}

impl Differentiable for DynamicModel<'_> {
    type Cache = DynamicCache;

    fn bounds(&self) -> Aabb {
        RadianceField::bounds(self.canonical)
    }

    fn param_count(&self) -> usize {
        self.canonical.params().len() + self.defo.params().len()
    }

    fn forward(&self, x: Vec3, t: f64) -> (FieldValue, DynamicCache) {
        let y = x + self.defo.deform_unchecked(x, t);
        if !RadianceField::bounds(self.canonical).contains(y) {
            return (FieldValue::default(), DynamicCache { y, ..Default::default() });
        }
        let s = self.canonical.sample_raw(y);
        (s.value, DynamicCache { raw: s.raw, y, inside: true })
    }

    fn backward(&self, x: Vec3, t: f64, cache: &DynamicCache, upstream: &FieldValue, grad: &mut [f64]) {
        if !cache.inside {
            return;
        }
        let (g_canon, g_defo) = grad.split_at_mut(self.canonical.params().len());
        self.canonical.accumulate_backward(cache.y, &cache.raw, upstream, g_canon);
        if t <= 0.0 {
            return;
        }
        let jac = self.canonical.spatial_gradient(cache.y, self.h);
        let mut d_y = [0.0; 3];
        for (a, d) in d_y.iter_mut().enumerate() {
            *d = (0..3).map(|c| upstream.rgb[c] * jac[c][a]).sum::<f64>() + upstream.sigma * jac[3][a];
        }
        self.defo.accumulate_backward(x, t, Vec3::from_array(d_y), g_defo);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicTrainConfig {
    pub train: TrainConfig,
    /// Leading iterations that only sample t = 0 views (canonical only).
    #[serde(default)]
    pub warmup_iterations: usize,
}

/// Jointly optimizes the canonical field and the deformation grid.
pub fn train_dynamic(
    canonical: &mut MultiresField,
    defo: &mut DeformationField,
    dataset: &[PosedImage],
    config: &DynamicTrainConfig,
) -> Result<TrainReport, DynamicError> {
    let cfg = &config.train;
    cfg.validate()?;
    if let Some(i) = dataset.iter().position(|p| !(0.0..=1.0).contains(&p.time)) {
        return Err(DynamicError::DatasetTime(i));
    }
    let bounds = RadianceField::bounds(canonical);
    let mut sampler = RaySampler::new(dataset, bounds, cfg.seed)?;
    let canonical_views: Vec<PosedImage> = dataset.iter().filter(|p| p.time == 0.0).cloned().collect();
    let mut warm_sampler = if config.warmup_iterations > 0 && !canonical_views.is_empty() {
        Some(RaySampler::new(&canonical_views, bounds, cfg.seed ^ 0x5eed)?)
    } else {
        None
    };
    let nc = canonical.params().len();
    let mut adam = Adam::new(nc + defo.params().len(), cfg);
    let mut grad = vec![0.0; adam.len()];
    let h = DynamicModel::default_step(canonical);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = match warm_sampler.as_mut() {
            Some(s) if it < config.warmup_iterations => s.batch(cfg.rays_per_batch),
            _ => sampler.batch(cfg.rays_per_batch),
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let model = DynamicModel { canonical, defo, h };
        let loss = accumulate_batch(&model, &batch, cfg.n_samples, 1.0 / (3 * batch.len()) as f64, &mut grad);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration: it }.into());
        }
        adam.begin_step();
        adam.update_segment(0, canonical.params_mut(), &grad[..nc]);
        adam.update_segment(nc, defo.params_mut(), &grad[nc..]);
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

/// Canonical checkpoint followed by the deformation section.
pub fn dynamic_checkpoint(canonical: &MultiresField, defo: &DeformationField) -> Vec<u8> {
    let mut out = canonical.to_checkpoint();
    out.extend_from_slice(&defo.to_bytes());
    out
}

pub fn parse_dynamic_checkpoint(bytes: &[u8]) -> Result<(MultiresField, DeformationField), DynamicError> {
    let (canonical, used) = MultiresField::from_checkpoint(bytes)?;
    let defo = DeformationField::from_bytes(&bytes[used..])?;
    Ok((canonical, defo))
}

/// A deterministic random deformation, mostly for tests.
pub fn random_deformation(bounds: Aabb, resolution: usize, keys: usize, amplitude: f64, seed: u64) -> Result<DeformationField, DynamicError> {
    use rand::Rng;
    let mut d = DeformationField::zeros(bounds, resolution, keys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in &mut d.params {
        *p = rng.random_range(-amplitude..=amplitude);
    }
    Ok(d)
}
