//! Interleaved row-major images.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("buffer of {got} values does not match {width}x{height}x{channels}")]
    BufferSize { width: usize, height: usize, channels: usize, got: usize },
    #[error("channel count must be 1 or 3, got {0}")]
    Channels(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// Normalized floating-point image.
pub type ImageF = Image<f64>;
/// 8-bit frame as carried by the codec.
pub type Frame = Image<u8>;

impl<T: Copy + Default> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        Ok(Image { width, height, channels, data: vec![T::default(); width * height * channels] })
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BufferSize { width, height, channels, got: data.len() });
        }
        Ok(Image { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Single channel `c` as a one-channel image.
    pub fn channel(&self, c: usize) -> Image<T> {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }
}

impl ImageF {
    /// Quantizes `[0, 1]` values to 8 bits with round-to-nearest.
    pub fn to_frame(&self) -> Frame {
        let data = self.data.iter().map(|&v| libm::round(v.clamp(0.0, 1.0) * 255.0) as u8).collect();
        Image { width: self.width, height: self.height, channels: self.channels, data }
    }

    /// Area-weighted (box filter) resampling to a new size.
    pub fn resize_area(&self, width: usize, height: usize) -> ImageF {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let ch = self.channels;
        let spans = |n: usize, scale: f64, limit: usize| -> Vec<Vec<(usize, f64)>> {
            (0..n)
                .map(|i| {
                    let lo = i as f64 * scale;
                    let hi = (i + 1) as f64 * scale;
                    let first = libm::floor(lo) as usize;
                    let last = (libm::ceil(hi) as usize).min(limit);
                    (first..last)
                        .filter_map(|s| {
                            let w = libm::fmin(hi, (s + 1) as f64) - libm::fmax(lo, s as f64);
                            (w > 0.0).then_some((s, w))
                        })
                        .collect()
                })
                .collect()
        };
        let xs = spans(width, sx, self.width);
        let ys = spans(height, sy, self.height);
        let mut out = ImageF::new(width, height, ch).expect("channel count already validated");
        for (y, yspan) in ys.iter().enumerate() {
            for (x, xspan) in xs.iter().enumerate() {
                for c in 0..ch {
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    for &(sy_, wy) in yspan {
                        for &(sx_, wx) in xspan {
                            acc += wx * wy * self.get(sx_, sy_, c);
                            wsum += wx * wy;
                        }
                    }
                    out.set(x, y, c, acc / wsum);
                }
            }
        }
        out
    }
}

impl Frame {
    pub fn to_float(&self) -> ImageF {
        let data = self.data.iter().map(|&v| v as f64 / 255.0).collect();
        Image { width: self.width, height: self.height, channels: self.channels, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resize_halves_by_averaging() {
        let img = ImageF::from_vec(4, 2, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let half = img.resize_area(2, 1);
        assert_eq!(half.data(), &[2.5, 4.5]);
    }

    #[test]
    fn area_resize_fractional_ratio_preserves_mean() {
        let data: Vec<f64> = (0..10 * 6).map(|i| (i % 7) as f64 / 7.0).collect();
        let img = ImageF::from_vec(10, 6, 1, data).unwrap();
        let mean = img.data().iter().sum::<f64>() / 60.0;
        let small = img.resize_area(3, 2);
        let small_mean = small.data().iter().sum::<f64>() / 6.0;
        assert!((mean - small_mean).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(Frame::from_vec(2, 2, 3, vec![0; 11]).is_err());
        assert!(Frame::new(2, 2, 2).is_err());
    }
}
