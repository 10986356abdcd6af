//! Procedural multi-octave value-noise textures used as source images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Lattice spacing of the coarsest octave, in pixels.
    pub base_period: f64,
    pub octaves: usize,
    /// Amplitude ratio between consecutive octaves.
    pub persistence: f64,
    /// Replace intensities by their ranks, giving a uniform histogram.
    pub equalize: bool,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            base_period: 16.0,
            octaves: 4,
            persistence: 0.6,
            equalize: true,
        }
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Sum of smoothly interpolated random lattices, mapped onto `[0, 1]`.
pub fn synth_texture(width: usize, height: usize, seed: u64, params: &TextureParams) -> GrayImage {
    assert!(width > 0 && height > 0, "texture dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; width * height];
    let mut amplitude = 1.0;
    let mut period = params.base_period;
    for _ in 0..params.octaves.max(1) {
        let p = period.max(1.0);
        let lw = (width as f64 / p).ceil() as usize + 2;
        let lh = (height as f64 / p).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
        for y in 0..height {
            let fy = y as f64 / p;
            let iy = fy.floor() as usize;
            let ty = smooth(fy - iy as f64);
            for x in 0..width {
                let fx = x as f64 / p;
                let ix = fx.floor() as usize;
                let tx = smooth(fx - ix as f64);
                let at = |i: usize, j: usize| lattice[j * lw + i];
                let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                acc[y * width + x] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amplitude *= params.persistence;
        period /= 2.0;
    }
    if params.equalize {
        let mut order: Vec<usize> = (0..acc.len()).collect();
        order.sort_by(|&a, &b| acc[a].total_cmp(&acc[b]).then(a.cmp(&b)));
        let n = acc.len() as f64;
        for (rank, &i) in order.iter().enumerate() {
            acc[i] = rank as f64 / (n - 1.0).max(1.0);
        }
        return GrayImage::from_fn(width, height, |x, y| acc[y * width + x]);
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    GrayImage::from_fn(width, height, |x, y| (acc[y * width + x] - lo) / span)
}
