//! Analytic vs central-difference gradient checks.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::Ray;
use crate::field::{activate, MultiresField};
use crate::math::Vec3;
use crate::render::{FieldValue, RadianceField};
use crate::train::{batch_loss_and_grad, TrainRay};

/// Central-difference step on a single parameter.
pub const FD_STEP: f64 = 1e-5;
/// Probes only pick parameters whose analytic gradient exceeds this, so the
/// comparison is not dominated by rounding in the difference quotient.
pub const MIN_PROBED_GRAD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub param: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a - n| / max(|a|, |n|)`, zero when both vanish.
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

pub fn max_rel_error(probes: &[Probe]) -> f64 {
    probes.iter().map(Probe::rel_error).fold(0.0, f64::max)
}

fn central<F: FnMut(&MultiresField) -> f64>(field: &mut MultiresField, param: usize, mut f: F) -> f64 {
    let orig = field.params()[param];
    field.params_mut()[param] = orig + FD_STEP;
    let up = f(field);
    field.params_mut()[param] = orig - FD_STEP;
    let down = f(field);
    field.params_mut()[param] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn point_loss(field: &MultiresField, x: Vec3, w: &FieldValue) -> f64 {
    let v = activate(field.sample_raw(x).raw);
    (0..3).map(|c| w.rgb[c] * v.rgb[c]).sum::<f64>() + w.sigma * v.sigma
}

/// `count` probes of `L = w · f(x)` with random `x` and `w`; each probe
/// checks one parameter the query actually touches.
pub fn field_probes(field: &mut MultiresField, count: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = RadianceField::bounds(field);
    let (lo, size) = (b.min(), b.size());
    let mut grad = vec![0.0; field.params().len()];
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = lo + Vec3::new(rng.random(), rng.random(), rng.random()).mul_elem(size);
        let w = FieldValue { rgb: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], sigma: rng.random_range(-1.0..1.0) };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let raw = field.sample_raw(x).raw;
        field.accumulate_backward(x, &raw, &w, &mut grad);
        let touched: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > MIN_PROBED_GRAD).collect();
        if touched.is_empty() {
            continue;
        }
        let param = touched[rng.random_range(0..touched.len())];
        let numeric = central(field, param, |f| point_loss(f, x, &w));
        out.push(Probe { param, analytic: grad[param], numeric });
    }
    out
}

/// `count` probes of the batch photometric loss through compositing; the
/// batch is `rays` random rays through the field with random targets.
pub fn end_to_end_probes(field: &mut MultiresField, count: usize, rays: usize, n_samples: usize, seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = RadianceField::bounds(field);
    let (center, radius) = (b.center(), b.half_extent().length());
    let batch: Vec<TrainRay> = (0..rays)
        .map(|_| {
            let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let jitter = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let origin = center - dir * (2.0 * radius) + jitter.mul_elem(b.half_extent());
            TrainRay::new(&Ray::new(origin, dir), &b, [rng.random(), rng.random(), rng.random()])
        })
        .filter(|r| r.ray.is_some())
        .collect();
    let mut grad = vec![0.0; field.params().len()];
    batch_loss_and_grad(field, &batch, n_samples, &mut grad);
    let touched: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > MIN_PROBED_GRAD).collect();
    let mut scratch = vec![0.0; grad.len()];
    (0..count)
        .map(|_| {
            let param = touched[rng.random_range(0..touched.len())];
            let numeric = central(field, param, |f| batch_loss_and_grad(f, &batch, n_samples, &mut scratch));
            Probe { param, analytic: grad[param], numeric }
        })
        .collect()
}
