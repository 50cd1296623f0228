//! Multiresolution vertex-feature grid with analytic feature gradients.
//!
//! Each level `l` is a lattice of `(N_l + 1)^3` vertices over the field
//! bounds. A vertex stores four raw features `(f_r, f_g, f_b, f_σ)`. A query
//! trilinearly interpolates the eight enclosing vertices on every level,
//! sums the results across levels and activates them: sigmoid for color,
//! softplus for density. Levels with more vertices than the table size `T`
//! are addressed through a spatial hash and share slots on collision.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::aabb::Aabb;
use crate::math::{sigmoid, softplus, Vec3};
use crate::render::{FieldValue, RadianceField};

pub const FEATURES: usize = 4;
pub const MIN_TABLE_SIZE: usize = 1 << 4;
const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];
const CHECKPOINT_MAGIC: &[u8; 4] = b"RFLD";
const CHECKPOINT_VERSION: u16 = 1;
/// Half width of the uniform feature initialization.
pub const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("invalid level schedule: n_min={n_min}, n_max={n_max}, levels={levels}")]
    Schedule { n_min: usize, n_max: usize, levels: usize },
    #[error("table size {0} is below the minimum of 16")]
    TableSize(usize),
    #[error("level {0} does not exist")]
    Level(usize),
    #[error("vertex ({i}, {j}, {k}) is outside level {level} with resolution {resolution}")]
    Index { level: usize, i: usize, j: usize, k: usize, resolution: usize },
    #[error("position {0:?} is outside the field bounds")]
    OutOfBounds([f64; 3]),
    #[error("checkpoint: {0}")]
    Checkpoint(&'static str),
}

/// Per-level lattice resolutions growing geometrically from `n_min` to `n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    n_min: usize,
    n_max: usize,
    growth: f64,
    resolutions: Vec<usize>,
}

impl LevelSchedule {
    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Growth factor `b` between consecutive levels.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn levels(&self) -> usize {
        self.resolutions.len()
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }
}

/// `b = exp((ln n_max - ln n_min) / (L - 1))`, `N_l = round(n_min · b^l)`.
/// A single level uses `n_min`.
pub fn level_resolutions(n_min: usize, n_max: usize, levels: usize) -> Result<LevelSchedule, FieldError> {
    if n_min < 2 || n_min > n_max || levels == 0 {
        return Err(FieldError::Schedule { n_min, n_max, levels });
    }
    if levels == 1 {
        return Ok(LevelSchedule { n_min, n_max, growth: 1.0, resolutions: vec![n_min] });
    }
    let growth = libm::exp((libm::log(n_max as f64) - libm::log(n_min as f64)) / (levels - 1) as f64);
    let resolutions = (0..levels)
        .map(|l| libm::round(n_min as f64 * libm::pow(growth, l as f64)) as usize)
        .collect();
    Ok(LevelSchedule { n_min, n_max, growth, resolutions })
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    resolution: usize,
    /// First slot of this level in the shared store.
    offset: usize,
    slots: usize,
    hashed: bool,
}

/// Trilinear footprint of a point on one level.
#[derive(Debug, Clone, Copy)]
struct Corners {
    slots: [usize; 8],
    weights: [f64; 8],
}

/// Activated value plus the summed raw features it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: FieldValue,
    pub raw: [f64; FEATURES],
}

/// Gradient contributions of one query: `8 · L` `(slot, d/d features)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    pub entries: Vec<(usize, [f64; FEATURES])>,
}

impl SparseGrad {
    /// Adds every entry into a dense parameter-shaped buffer.
    pub fn add_to(&self, dense: &mut [f64]) {
        for (slot, g) in &self.entries {
            for f in 0..FEATURES {
                dense[slot * FEATURES + f] += g[f];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiresField {
    schedule: LevelSchedule,
    table_size: usize,
    bounds: Aabb,
    levels: Vec<Level>,
    params: Vec<f64>,
}

impl MultiresField {
    /// All features zero.
    pub fn zeros(schedule: LevelSchedule, table_size: usize, bounds: Aabb) -> Result<Self, FieldError> {
        if table_size < MIN_TABLE_SIZE {
            return Err(FieldError::TableSize(table_size));
        }
        let mut offset = 0;
        let levels: Vec<Level> = schedule
            .resolutions
            .iter()
            .map(|&resolution| {
                let vertices = (resolution + 1).pow(3);
                let hashed = vertices > table_size;
                let slots = if hashed { table_size } else { vertices };
                let level = Level { resolution, offset, slots, hashed };
                offset += slots;
                level
            })
            .collect();
        Ok(MultiresField { schedule, table_size, bounds, levels, params: vec![0.0; offset * FEATURES] })
    }

    /// Features drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn random(schedule: LevelSchedule, table_size: usize, bounds: Aabb, seed: u64) -> Result<Self, FieldError> {
        let mut field = Self::zeros(schedule, table_size, bounds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut field.params {
            *p = rng.random_range(-INIT_SCALE..=INIT_SCALE);
        }
        Ok(field)
    }

    pub fn schedule(&self) -> &LevelSchedule {
        &self.schedule
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn is_hashed(&self, level: usize) -> bool {
        self.levels[level].hashed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn slot_count(&self) -> usize {
        self.params.len() / FEATURES
    }

    /// Raw features of a store slot.
    pub fn slot(&self, slot: usize) -> [f64; FEATURES] {
        let p = &self.params[slot * FEATURES..(slot + 1) * FEATURES];
        [p[0], p[1], p[2], p[3]]
    }

    pub fn set_slot(&mut self, slot: usize, features: [f64; FEATURES]) {
        self.params[slot * FEATURES..(slot + 1) * FEATURES].copy_from_slice(&features);
    }

    /// Store slot of a lattice vertex: row-major `i + j(N+1) + k(N+1)^2` on
    /// dense levels, spatial hash modulo `T` on hashed ones. The returned
    /// index is local to the level.
    pub fn vertex_index(&self, level: usize, (i, j, k): (usize, usize, usize)) -> Result<usize, FieldError> {
        let lv = self.levels.get(level).ok_or(FieldError::Level(level))?;
        let n = lv.resolution;
        if i > n || j > n || k > n {
            return Err(FieldError::Index { level, i, j, k, resolution: n });
        }
        Ok(local_index(lv, self.table_size, i, j, k))
    }

    /// Global store slot of a lattice vertex.
    pub fn global_slot(&self, level: usize, ijk: (usize, usize, usize)) -> Result<usize, FieldError> {
        Ok(self.levels[level].offset + self.vertex_index(level, ijk)?)
    }

    /// Finest lattice spacing along each axis.
    pub fn finest_spacing(&self) -> Vec3 {
        let n = self.levels.iter().map(|l| l.resolution).max().unwrap_or(1) as f64;
        self.bounds.size() * (1.0 / n)
    }

    fn corners(&self, lv: &Level, p: Vec3) -> Corners {
        let n = lv.resolution;
        let nf = n as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = p[a] * nf;
            let i = (libm::floor(g) as usize).min(n - 1);
            base[a] = i;
            frac[a] = g - i as f64;
        }
        let mut slots = [0usize; 8];
        let mut weights = [0.0f64; 8];
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
            slots[c] = lv.offset + local_index(lv, self.table_size, base[0] + dx, base[1] + dy, base[2] + dz);
        }
        Corners { slots, weights }
    }

    /// Unchecked forward query; `x` is clamped into the bounds.
    pub fn sample_raw(&self, x: Vec3) -> FieldSample {
        let p = self.bounds.normalize(x);
        let mut raw = [0.0; FEATURES];
        for lv in &self.levels {
            let c = self.corners(lv, p);
            for k in 0..8 {
                let w = c.weights[k];
                let s = &self.params[c.slots[k] * FEATURES..c.slots[k] * FEATURES + FEATURES];
                raw[0] += w * s[0];
                raw[1] += w * s[1];
                raw[2] += w * s[2];
                raw[3] += w * s[3];
            }
        }
        FieldSample { value: activate(raw), raw }
    }

    /// Color in `(0, 1)^3` and density `>= 0` at `x`.
    pub fn sample_field(&self, x: Vec3) -> Result<FieldValue, FieldError> {
        self.check_bounds(x)?;
        Ok(self.sample_raw(x).value)
    }

    fn check_bounds(&self, x: Vec3) -> Result<(), FieldError> {
        if self.bounds.contains(x) {
            Ok(())
        } else {
            Err(FieldError::OutOfBounds(x.to_array()))
        }
    }

    /// Gradient of the raw features (pre-activation) given `dL/d(rgb, σ)`.
    fn raw_gradient(raw: &[f64; FEATURES], upstream: &FieldValue) -> [f64; FEATURES] {
        let mut g = [0.0; FEATURES];
        for c in 0..3 {
            let s = sigmoid(raw[c]);
            g[c] = upstream.rgb[c] * s * (1.0 - s);
        }
        g[3] = upstream.sigma * sigmoid(raw[3]);
        g
    }

    /// Backward pass of [`MultiresField::sample_field`] for upstream gradient
    /// `dL/d(rgb, σ)`. Touches `8 · L` slots.
    pub fn sample_field_backward(&self, x: Vec3, upstream: &FieldValue) -> Result<SparseGrad, FieldError> {
        self.check_bounds(x)?;
        let raw = self.sample_raw(x).raw;
        let g = Self::raw_gradient(&raw, upstream);
        let p = self.bounds.normalize(x);
        let mut entries = Vec::with_capacity(8 * self.levels.len());
        for lv in &self.levels {
            let c = self.corners(lv, p);
            for k in 0..8 {
                let w = c.weights[k];
                entries.push((c.slots[k], [w * g[0], w * g[1], w * g[2], w * g[3]]));
            }
        }
        Ok(SparseGrad { entries })
    }

    /// Dense accumulation variant of the backward pass used by the trainer.
    /// `raw` must come from [`MultiresField::sample_raw`] at the same `x`.
    pub fn accumulate_backward(&self, x: Vec3, raw: &[f64; FEATURES], upstream: &FieldValue, grad: &mut [f64]) {
        let g = Self::raw_gradient(raw, upstream);
        let p = self.bounds.normalize(x);
        for lv in &self.levels {
            let c = self.corners(lv, p);
            for k in 0..8 {
                let w = c.weights[k];
                let dst = &mut grad[c.slots[k] * FEATURES..c.slots[k] * FEATURES + FEATURES];
                dst[0] += w * g[0];
                dst[1] += w * g[1];
                dst[2] += w * g[2];
                dst[3] += w * g[3];
            }
        }
    }

    /// Central-difference Jacobian `d(r, g, b, σ)/dx` with step `h` per axis.
    /// Steps are shortened at the bounds so both probes stay inside.
    pub fn spatial_gradient(&self, x: Vec3, h: f64) -> [[f64; 3]; 4] {
        let mut jac = [[0.0; 3]; 4];
        let lo = self.bounds.min();
        let hi = self.bounds.max();
        for a in 0..3 {
            let mut xp = x;
            let mut xm = x;
            let (p, m) = (libm::fmin(x[a] + h, hi[a]), libm::fmax(x[a] - h, lo[a]));
            set_axis(&mut xp, a, p);
            set_axis(&mut xm, a, m);
            let span = p - m;
            if span <= 0.0 {
                continue;
            }
            let vp = self.sample_raw(xp).value;
            let vm = self.sample_raw(xm).value;
            for c in 0..3 {
                jac[c][a] = (vp.rgb[c] - vm.rgb[c]) / span;
            }
            jac[3][a] = (vp.sigma - vm.sigma) / span;
        }
        jac
    }

    /// Rounds every feature to `f32`, the checkpoint precision.
    pub fn quantize_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 4);
        let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        put_u32(&mut out, self.schedule.n_min);
        put_u32(&mut out, self.schedule.n_max);
        put_u32(&mut out, self.levels.len());
        for lv in &self.levels {
            put_u32(&mut out, lv.resolution);
        }
        put_u32(&mut out, self.table_size);
        for v in self.bounds.center().to_array().into_iter().chain(self.bounds.half_extent().to_array()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    /// SHA-256 of the checkpoint payload; identifies the model on the wire.
    pub fn model_id(&self) -> [u8; 32] {
        Sha256::digest(self.payload()).into()
    }

    /// `"RFLD" | version u16 | sha256 [32] | payload length u64 | payload`,
    /// payload = `n_min, n_max, L, N_0..N_{L-1}, T` as u32, bounds center and
    /// half extent as f64, then every level's features as f32, all little-endian.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let payload = self.payload();
        let digest: [u8; 32] = Sha256::digest(&payload).into();
        let mut out = Vec::with_capacity(payload.len() + 46);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&digest);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Parses a checkpoint and returns the field and the number of bytes consumed.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<(Self, usize), FieldError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(FieldError::Checkpoint("bad magic"));
        }
        if r.u16()? != CHECKPOINT_VERSION {
            return Err(FieldError::Checkpoint("unsupported version"));
        }
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let len = r.u64()? as usize;
        let payload = r.take(len)?;
        let actual: [u8; 32] = Sha256::digest(payload).into();
        if actual != digest {
            return Err(FieldError::Checkpoint("payload hash mismatch"));
        }
        let consumed = r.pos;
        let mut p = ByteReader::new(payload);
        let n_min = p.u32()? as usize;
        let n_max = p.u32()? as usize;
        let levels = p.u32()? as usize;
        let resolutions = (0..levels).map(|_| p.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let table_size = p.u32()? as usize;
        let mut b = [0.0f64; 6];
        for v in &mut b {
            *v = p.f64()?;
        }
        let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]))
            .map_err(|_| FieldError::Checkpoint("invalid bounds"))?;
        let expected = level_resolutions(n_min, n_max, levels)?;
        if expected.resolutions != resolutions {
            return Err(FieldError::Checkpoint("level resolutions disagree with schedule"));
        }
        let mut field = Self::zeros(expected, table_size, bounds)?;
        for v in &mut field.params {
            *v = p.f32()? as f64;
        }
        if p.pos != payload.len() {
            return Err(FieldError::Checkpoint("trailing payload bytes"));
        }
        Ok((field, consumed))
    }
}

impl RadianceField for MultiresField {
    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn query(&self, x: Vec3) -> FieldValue {
        self.sample_raw(x).value
    }
}

fn set_axis(v: &mut Vec3, axis: usize, value: f64) {
    match axis {
        0 => v.x = value,
        1 => v.y = value,
        _ => v.z = value,
    }
}

fn local_index(lv: &Level, table_size: usize, i: usize, j: usize, k: usize) -> usize {
    if lv.hashed {
        let h = (i as u32).wrapping_mul(HASH_PRIMES[0])
            ^ (j as u32).wrapping_mul(HASH_PRIMES[1])
            ^ (k as u32).wrapping_mul(HASH_PRIMES[2]);
        h as usize % table_size
    } else {
        let n1 = lv.resolution + 1;
        i + j * n1 + k * n1 * n1
    }
}

/// Sigmoid on the color features, softplus on density.
pub fn activate(raw: [f64; FEATURES]) -> FieldValue {
    FieldValue { rgb: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])], sigma: softplus(raw[3]) }
}

/// `(sin 2^k π v, cos 2^k π v)` for `k = 0..K-1`; with `K = 0` the input
/// passes through unchanged. For vector input each octave emits all sines,
/// then all cosines.
pub fn freq_encode(v: &[f64], octaves: usize) -> Vec<f64> {
    if octaves == 0 {
        return v.to_vec();
    }
    let mut out = Vec::with_capacity(2 * octaves * v.len());
    for k in 0..octaves {
        let scale = libm::ldexp(core::f64::consts::PI, k as i32);
        out.extend(v.iter().map(|&x| libm::sin(scale * x)));
        out.extend(v.iter().map(|&x| libm::cos(scale * x)));
    }
    out
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FieldError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FieldError::Checkpoint("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FieldError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FieldError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FieldError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FieldError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FieldError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_level(n: usize) -> MultiresField {
        MultiresField::random(level_resolutions(n, n, 1).unwrap(), 1 << 20, Aabb::unit(), 3).unwrap()
    }

    #[test]
    fn schedule_geometric_progression() {
        let s = level_resolutions(16, 512, 16).unwrap();
        assert!((s.growth() - 2f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((s.growth() - 1.259921).abs() < 1e-6);
        let r = s.resolutions();
        assert_eq!((r[0], r[3], r[15]), (16, 32, 512));
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn schedule_degenerate_cases() {
        let flat = level_resolutions(16, 16, 4).unwrap();
        assert_eq!(flat.growth(), 1.0);
        assert_eq!(flat.resolutions(), &[16, 16, 16, 16]);
        assert_eq!(level_resolutions(16, 512, 1).unwrap().resolutions(), &[16]);
        assert!(level_resolutions(32, 16, 4).is_err());
        assert!(level_resolutions(16, 32, 0).is_err());
    }

    #[test]
    fn dense_vertex_layout() {
        let f = MultiresField::zeros(level_resolutions(16, 16, 1).unwrap(), 1 << 16, Aabb::unit()).unwrap();
        assert!(!f.is_hashed(0));
        assert_eq!(f.vertex_index(0, (0, 0, 0)).unwrap(), 0);
        assert_eq!(f.vertex_index(0, (1, 0, 0)).unwrap(), 1);
        assert_eq!(f.vertex_index(0, (0, 1, 0)).unwrap(), 17);
        assert_eq!(f.vertex_index(0, (0, 0, 1)).unwrap(), 17 * 17);
        assert!(matches!(f.vertex_index(0, (17, 0, 0)), Err(FieldError::Index { .. })));
        assert!(matches!(f.vertex_index(1, (0, 0, 0)), Err(FieldError::Level(1))));
    }

    #[test]
    fn hashed_vertex_is_deterministic_and_in_table() {
        let f = MultiresField::zeros(level_resolutions(64, 64, 1).unwrap(), 1 << 12, Aabb::unit()).unwrap();
        assert!(f.is_hashed(0));
        let a = f.vertex_index(0, (5, 17, 33)).unwrap();
        assert_eq!(a, f.vertex_index(0, (5, 17, 33)).unwrap());
        assert!(a < 1 << 12);
        assert_eq!(f.slot_count(), 1 << 12);
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let f = single_level(4);
        let slot = f.global_slot(0, (1, 2, 3)).unwrap();
        let x = Vec3::new(-1.0 + 2.0 * 1.0 / 4.0, -1.0 + 2.0 * 2.0 / 4.0, -1.0 + 2.0 * 3.0 / 4.0);
        let got = f.sample_field(x).unwrap();
        assert_eq!(got, activate(f.slot(slot)));
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let f = single_level(4);
        let mut mean = [0.0; FEATURES];
        for c in 0..8 {
            let s = f.global_slot(0, (1 + (c & 1), 2 + ((c >> 1) & 1), (c >> 2) & 1)).unwrap();
            for (m, v) in mean.iter_mut().zip(f.slot(s)) {
                *m += v / 8.0;
            }
        }
        // Cell (1, 2, 0) spans [-0.5, 0] x [0, 0.5] x [-1, -0.5].
        let x = Vec3::new(-0.25, 0.25, -0.75);
        let got = f.sample_field(x).unwrap();
        let want = activate(mean);
        for c in 0..3 {
            assert!((got.rgb[c] - want.rgb[c]).abs() < 1e-15);
        }
        assert!((got.sigma - want.sigma).abs() < 1e-15);
    }

    #[test]
    fn zero_features_activate_to_gray_and_ln2() {
        let f = MultiresField::zeros(level_resolutions(4, 16, 3).unwrap(), 1 << 10, Aabb::unit()).unwrap();
        let v = f.sample_field(Vec3::new(0.1, -0.3, 0.7)).unwrap();
        assert_eq!(v.rgb, [0.5; 3]);
        assert_eq!(v.sigma, core::f64::consts::LN_2);
    }

    #[test]
    fn out_of_bounds_query_is_an_error() {
        let f = single_level(4);
        assert!(matches!(f.sample_field(Vec3::new(1.5, 0.0, 0.0)), Err(FieldError::OutOfBounds(_))));
        assert!(f.sample_field_backward(Vec3::new(0.0, -1.01, 0.0), &FieldValue::default()).is_err());
    }

    #[test]
    fn backward_with_zero_upstream_is_zero() {
        let f = MultiresField::random(level_resolutions(4, 16, 3).unwrap(), 1 << 10, Aabb::unit(), 9).unwrap();
        let g = f.sample_field_backward(Vec3::new(0.2, 0.1, -0.4), &FieldValue::default()).unwrap();
        assert_eq!(g.entries.len(), 8 * 3);
        assert!(g.entries.iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_at_vertex_is_one_hot_per_level() {
        let f = MultiresField::random(level_resolutions(4, 8, 2).unwrap(), 1 << 12, Aabb::unit(), 2).unwrap();
        // (0.5, 0.5, -0.5) is a lattice vertex of both the 4- and 8-resolution levels.
        let x = Vec3::new(0.5, 0.5, -0.5);
        let up = FieldValue { rgb: [1.0, 2.0, 3.0], sigma: 4.0 };
        let g = f.sample_field_backward(x, &up).unwrap();
        for level in 0..2 {
            let nonzero: Vec<_> =
                g.entries[level * 8..(level + 1) * 8].iter().filter(|(_, v)| v.iter().any(|&x| x != 0.0)).collect();
            assert_eq!(nonzero.len(), 1, "level {level}");
        }
        assert_eq!(g.entries[0].0, f.global_slot(0, (3, 3, 1)).unwrap());
        assert_eq!(g.entries[8].0, f.global_slot(1, (6, 6, 2)).unwrap());
    }

    #[test]
    fn freq_encoding_examples() {
        assert_eq!(freq_encode(&[0.3], 0), vec![0.3]);
        assert_eq!(freq_encode(&[0.0], 1), vec![0.0, 1.0]);
        let e = freq_encode(&[0.5], 2);
        let want = [1.0, 0.0, 0.0, -1.0];
        assert_eq!(e.len(), 4);
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{e:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_detection() {
        let mut f = MultiresField::random(level_resolutions(4, 32, 3).unwrap(), 1 << 12, Aabb::unit(), 5).unwrap();
        f.quantize_to_f32();
        let bytes = f.to_checkpoint();
        assert_eq!(&bytes[..4], b"RFLD");
        let (g, used) = MultiresField::from_checkpoint(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(g, f);
        assert_eq!(g.model_id(), f.model_id());
        assert_eq!(&bytes[6..38], &f.model_id());
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert_eq!(MultiresField::from_checkpoint(&bad), Err(FieldError::Checkpoint("payload hash mismatch")));
        assert!(MultiresField::from_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
