//! Opacity masks, morphological opening, processed disparity maps and
//! clearance queries.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::ImageF;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_ITERATIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DepthError {
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error("kernel side must be odd and >= 3, got {0}")]
    Kernel(usize),
    #[error("iteration count must be >= 1")]
    Iterations,
    #[error("map is {map:?} but mask is {mask:?}")]
    ShapeMismatch { map: (usize, usize), mask: (usize, usize) },
    #[error("expected a single-channel map")]
    Channels,
    #[error("region {0:?} is empty or outside the map")]
    Region(Rect),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        BinaryMask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// 1-D pass along rows (`horizontal`) or columns with half width `r`.
    /// Erosion (`all`) treats out-of-range pixels as background; dilation ignores them.
    fn pass(&self, r: usize, horizontal: bool, all: bool) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut out = BinaryMask::new(w, h);
        let (len, lines) = if horizontal { (w, h) } else { (h, w) };
        let idx = |line: usize, i: usize| if horizontal { line * w + i } else { i * w + line };
        for line in 0..lines {
            for i in 0..len {
                let v = if all {
                    i >= r && i + r < len && (i - r..=i + r).all(|j| self.bits[idx(line, j)])
                } else {
                    (i.saturating_sub(r)..=(i + r).min(len - 1)).any(|j| self.bits[idx(line, j)])
                };
                out.bits[idx(line, i)] = v;
            }
        }
        out
    }

    /// Erosion with a `k × k` square; pixels outside the mask count as background.
    pub fn erode(&self, k: usize) -> BinaryMask {
        if self.bits.is_empty() {
            return self.clone();
        }
        self.pass(k / 2, true, true).pass(k / 2, false, true)
    }

    pub fn dilate(&self, k: usize) -> BinaryMask {
        if self.bits.is_empty() {
            return self.clone();
        }
        self.pass(k / 2, true, false).pass(k / 2, false, false)
    }
}

/// `1` where `opacity >= tau`.
pub fn opacity_mask(opacity: &ImageF, tau: f64) -> Result<BinaryMask, DepthError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DepthError::Threshold(tau));
    }
    if opacity.channels() != 1 {
        return Err(DepthError::Channels);
    }
    Ok(BinaryMask { width: opacity.width(), height: opacity.height(), bits: opacity.data().iter().map(|&o| o >= tau).collect() })
}

/// `n` erosions followed by `n` dilations with a `k × k` square.
pub fn morph_open(mask: &BinaryMask, k: usize, n: usize) -> Result<BinaryMask, DepthError> {
    if k < 3 || k % 2 == 0 {
        return Err(DepthError::Kernel(k));
    }
    if n == 0 {
        return Err(DepthError::Iterations);
    }
    let mut m = mask.clone();
    for _ in 0..n {
        m = m.erode(k);
    }
    for _ in 0..n {
        m = m.dilate(k);
    }
    Ok(m)
}

/// Disparity where the mask is set, zero elsewhere.
pub fn processed_disparity(disparity: &ImageF, mask: &BinaryMask) -> Result<ImageF, DepthError> {
    if disparity.channels() != 1 {
        return Err(DepthError::Channels);
    }
    if (disparity.width(), disparity.height()) != (mask.width, mask.height) {
        return Err(DepthError::ShapeMismatch { map: (disparity.width(), disparity.height()), mask: (mask.width, mask.height) });
    }
    let mut out = disparity.clone();
    for (v, &b) in out.data_mut().iter_mut().zip(&mask.bits) {
        if !b {
            *v = 0.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clearance {
    /// Ray depth to the nearest surface seen in the region.
    Distance(f64),
    Unobstructed,
}

/// `min 1/disparity` over pixels of `region` with positive disparity.
pub fn min_clearance(disparity: &ImageF, region: &Rect) -> Result<Clearance, DepthError> {
    if disparity.channels() != 1 {
        return Err(DepthError::Channels);
    }
    let fits = region.width > 0
        && region.height > 0
        && region.x.checked_add(region.width).is_some_and(|e| e <= disparity.width())
        && region.y.checked_add(region.height).is_some_and(|e| e <= disparity.height());
    if !fits {
        return Err(DepthError::Region(*region));
    }
    let mut best = f64::INFINITY;
    for y in region.y..region.y + region.height {
        for x in region.x..region.x + region.width {
            let d = disparity.get(x, y, 0);
            if d > 0.0 {
                best = best.min(1.0 / d);
            }
        }
    }
    Ok(if best.is_finite() { Clearance::Distance(best) } else { Clearance::Unobstructed })
}
