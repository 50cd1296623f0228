//! Photometric training of radiance fields with Adam.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::camera::{CameraPose, Ray};
use crate::field::{FieldSample, MultiresField, FEATURES};
use crate::image::ImageF;
use crate::math::Vec3;
use crate::render::{clipped, composite_backward, composite_with_records, FieldValue, SampleRecord};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("prediction and target batches differ in size ({0} vs {1})")]
    BatchMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid training configuration: {0}")]
    Config(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("image {0} has a different size or channel count than the first")]
    InconsistentImages(usize),
    #[error("optimizer state has {state} entries, model has {model}")]
    OptimizerShape { state: usize, model: usize },
}

/// Missing keys take their defaults when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rays_per_batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3000,
            rays_per_batch: 1024,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
            n_samples: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.iterations == 0 || self.rays_per_batch == 0 {
            return Err(TrainError::Config("iterations and rays_per_batch must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(TrainError::Config("learning rate and epsilon must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(TrainError::Config("Adam betas must lie in (0, 1)"));
        }
        if self.n_samples < 2 {
            return Err(TrainError::Config("n_samples must be at least 2"));
        }
        Ok(())
    }
}

/// A training view.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub pose: CameraPose,
    pub image: ImageF,
    /// Per-pixel opacity of the view. When present, every training ray is
    /// composited over its own random background color.
    pub alpha: Option<ImageF>,
    /// Normalized capture time; 0 for static scenes.
    pub time: f64,
}

/// Mean over rays and channels of the squared error.
pub fn photometric_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64, TrainError> {
    if pred.len() != gt.len() {
        return Err(TrainError::BatchMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let sum: f64 = pred.iter().zip(gt).flat_map(|(p, g)| (0..3).map(move |c| (p[c] - g[c]) * (p[c] - g[c]))).sum();
    Ok(sum / (3 * pred.len()) as f64)
}

/// Adam over one flat parameter vector, possibly updated in segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Advances the step counter; call once before the segment updates of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `params`, which occupy `offset..offset + params.len()` of the
    /// optimizer state, with the matching gradient slice.
    pub fn update_segment(&mut self, offset: usize, params: &mut [f64], grad: &[f64]) {
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (self.beta1, self.beta2);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + self.epsilon);
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.begin_step();
        self.update_segment(0, params, grad);
    }
}

/// A field whose parameters can be trained through the compositing chain.
pub trait Differentiable: Sync {
    /// What the forward pass keeps per sample for the backward pass.
    type Cache: Copy + Default + Send;

    fn bounds(&self) -> Aabb;
    fn param_count(&self) -> usize;
    fn forward(&self, x: Vec3, t: f64) -> (FieldValue, Self::Cache);
    /// Adds `d loss / d params` for upstream `d loss / d(rgb, σ)` at `(x, t)`.
    fn backward(&self, x: Vec3, t: f64, cache: &Self::Cache, upstream: &FieldValue, grad: &mut [f64]);
}

impl Differentiable for MultiresField {
    type Cache = [f64; FEATURES];

    fn bounds(&self) -> Aabb {
        crate::render::RadianceField::bounds(self)
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }

    fn forward(&self, x: Vec3, _t: f64) -> (FieldValue, Self::Cache) {
        let FieldSample { value, raw } = self.sample_raw(x);
        (value, raw)
    }

    fn backward(&self, x: Vec3, _t: f64, cache: &Self::Cache, upstream: &FieldValue, grad: &mut [f64]) {
        self.accumulate_backward(x, cache, upstream, grad);
    }
}

/// A training ray with its target color. `ray` is clipped to the model
/// bounds, or `None` when it misses them (renders black).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRay {
    pub ray: Option<Ray>,
    pub target: [f64; 3],
    pub time: f64,
    /// Color behind the volume, already included in `target`.
    pub background: [f64; 3],
}

impl TrainRay {
    pub fn new(ray: &Ray, bounds: &Aabb, target: [f64; 3]) -> Self {
        TrainRay { ray: clipped(ray, bounds), target, time: 0.0, background: [0.0; 3] }
    }
}

struct Scratch<C> {
    values: Vec<FieldValue>,
    caches: Vec<C>,
    records: Vec<SampleRecord>,
}

impl<C> Scratch<C> {
    fn new() -> Self {
        Scratch { values: Vec::new(), caches: Vec::new(), records: Vec::new() }
    }
}

/// Squared error of one ray (summed over channels); gradient of
/// `scale · error` is added into `grad`.
fn ray_pass<D: Differentiable>(
    model: &D,
    tr: &TrainRay,
    n_samples: usize,
    scale: f64,
    grad: &mut [f64],
    s: &mut Scratch<D::Cache>,
) -> f64 {
    let bg = tr.background;
    let Some(ray) = tr.ray else {
        return (0..3).map(|c| (bg[c] - tr.target[c]) * (bg[c] - tr.target[c])).sum();
    };
    let delta = (ray.t_far - ray.t_near) / n_samples as f64;
    s.values.clear();
    s.caches.clear();
    for i in 0..n_samples {
        let (mut v, c) = model.forward(ray.at(ray.t_near + (i as f64 + 0.5) * delta), tr.time);
        // Compositing `c - bg` and adding `bg` back equals compositing over `bg`.
        for (ch, b) in v.rgb.iter_mut().zip(bg) {
            *ch -= b;
        }
        s.values.push(v);
        s.caches.push(c);
    }
    let out = composite_with_records(&s.values, delta, ray.t_near, &mut s.records);
    let diff: [f64; 3] = core::array::from_fn(|c| out.rgb[c] + bg[c] - tr.target[c]);
    let d_rgb = diff.map(|d| 2.0 * scale * d);
    let caches = &s.caches;
    composite_backward(&s.records, out.rgb, delta, d_rgb, |i, d_c, d_sigma| {
        let x = ray.at(ray.t_near + (i as f64 + 0.5) * delta);
        model.backward(x, tr.time, &caches[i], &FieldValue { rgb: d_c, sigma: d_sigma }, grad);
    });
    diff.iter().map(|d| d * d).sum()
}

#[cfg(feature = "parallel")]
const GRAD_CHUNKS: usize = 4;

/// Photometric loss of a batch; its gradient is written (not added) to `grad`.
pub fn batch_loss_and_grad<D: Differentiable>(model: &D, batch: &[TrainRay], n_samples: usize, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    accumulate_batch(model, batch, n_samples, 1.0 / (3 * batch.len()) as f64, grad)
}

/// Adds the gradient of `scale · Σ squared error` over `batch` into `grad`
/// and returns that scaled error.
pub fn accumulate_batch<D: Differentiable>(model: &D, batch: &[TrainRay], n_samples: usize, scale: f64, grad: &mut [f64]) -> f64 {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        // Fixed chunking and in-order reduction keep the result independent of the thread count.
        let per = batch.len().div_ceil(GRAD_CHUNKS).max(1);
        let parts: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(per)
            .map(|chunk| {
                let mut g = vec![0.0; grad.len()];
                let mut s = Scratch::new();
                let sse: f64 = chunk.iter().map(|tr| ray_pass(model, tr, n_samples, scale, &mut g, &mut s)).sum();
                (sse, g)
            })
            .collect();
        let mut sse = 0.0;
        for (part, _) in &parts {
            sse += part;
        }
        grad.par_iter_mut().enumerate().for_each(|(i, g)| {
            for (_, part) in &parts {
                *g += part[i];
            }
        });
        sse * scale
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = Scratch::new();
        let sse: f64 = batch.iter().map(|tr| ray_pass(model, tr, n_samples, scale, grad, &mut s)).sum();
        sse * scale
    }
}

/// Reusable optimizer state and gradient buffer for a [`MultiresField`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub adam: Adam,
    grad: Vec<f64>,
}

impl OptimizerState {
    pub fn new(field: &MultiresField, cfg: &TrainConfig) -> Self {
        let n = field.params().len();
        OptimizerState { adam: Adam::new(n, cfg), grad: vec![0.0; n] }
    }

    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }
}

/// One forward/backward/Adam step. Returns the loss before the update.
pub fn train_step(
    field: &mut MultiresField,
    batch: &[TrainRay],
    state: &mut OptimizerState,
    n_samples: usize,
    iteration: usize,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if state.adam.len() != field.params().len() {
        return Err(TrainError::OptimizerShape { state: state.adam.len(), model: field.params().len() });
    }
    let loss = batch_loss_and_grad(&*field, batch, n_samples, &mut state.grad);
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { iteration });
    }
    state.adam.update(field.params_mut(), &state.grad);
    Ok(loss)
}

/// Samples `count` pixels uniformly (with replacement) over all images.
pub struct RaySampler<'a> {
    dataset: &'a [PosedImage],
    rng: ChaCha8Rng,
    bounds: Aabb,
}

impl<'a> RaySampler<'a> {
    pub fn new(dataset: &'a [PosedImage], bounds: Aabb, seed: u64) -> Result<Self, TrainError> {
        let first = dataset.first().ok_or(TrainError::EmptyDataset)?;
        for (i, img) in dataset.iter().enumerate() {
            let alpha_ok = img.alpha.as_ref().is_none_or(|a| {
                a.channels() == 1 && (a.width(), a.height()) == (img.image.width(), img.image.height())
            });
            if !img.image.same_shape(&first.image) || img.image.channels() != 3 || !alpha_ok {
                return Err(TrainError::InconsistentImages(i));
            }
        }
        Ok(RaySampler { dataset, rng: ChaCha8Rng::seed_from_u64(seed), bounds })
    }

    /// Draws one `(image index, ray)` pair.
    pub fn draw(&mut self) -> (usize, TrainRay) {
        let img_idx = self.rng.random_range(0..self.dataset.len());
        let view = &self.dataset[img_idx];
        let (w, h) = (view.image.width(), view.image.height());
        let px = self.rng.random_range(0..w * h);
        let (u, v) = (px % w, px / w);
        let ray = Ray::new(view.pose.origin(), view.pose.pixel_direction(u, v));
        let mut target = [view.image.get(u, v, 0), view.image.get(u, v, 1), view.image.get(u, v, 2)];
        let mut background = [0.0; 3];
        if let Some(alpha) = &view.alpha {
            let a = alpha.get(u, v, 0);
            for (t, b) in target.iter_mut().zip(&mut background) {
                *b = self.rng.random::<f64>();
                *t += (1.0 - a) * *b;
            }
        }
        let mut tr = TrainRay::new(&ray, &self.bounds, target);
        tr.time = view.time;
        tr.background = background;
        (img_idx, tr)
    }

    pub fn batch(&mut self, count: usize) -> Vec<TrainRay> {
        (0..count).map(|_| self.draw().1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Pre-update loss of every iteration.
    pub losses: Vec<f64>,
}

/// Optimizes `field` on `dataset` for `config.iterations` steps.
pub fn train(field: &mut MultiresField, dataset: &[PosedImage], config: &TrainConfig) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let mut sampler = RaySampler::new(dataset, Differentiable::bounds(field), config.seed)?;
    let mut state = OptimizerState::new(field, config);
    let mut losses = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let batch = sampler.batch(config.rays_per_batch);
        losses.push(train_step(field, &batch, &mut state, config.n_samples, it)?);
    }
    Ok(TrainReport { losses })
}

/// `iter,loss` CSV.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("iter,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l}");
    }
    s
}
