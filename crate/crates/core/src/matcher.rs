//! Occlusion-aware template matching: repeated hashing rounds over the
//! product-space vector sets, candidate extraction `f* = g ∘ h⁻¹`, scoring on
//! the full template, and adaptive stopping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    overall_success, required_iterations, success_prob_gaussian_parts, success_prob_simple_parts,
    DEFAULT_K_MAX,
};
use crate::decomposition::{build_u, build_v, compose_candidate, standardize, Decomposition, SpaceSpec, STD_FLOOR};
use crate::error::{Error, Result};
use crate::hashgrid::{hash_round_unchecked, HashParams, DEFAULT_CELL_FACTOR, DEFAULT_D_HAT};
use crate::image::{mean_std, GrayImage, PixelCoord};
use crate::transform::Transform;

/// Threshold used when the noise level is unknown: 10 greylevels.
pub const DEFAULT_THRESHOLD: f64 = 10.0 / 255.0;
pub const DEFAULT_P0: f64 = 0.99;
/// Inlier rate assumed before any candidate has been scored.
pub const DEFAULT_PRIOR_ALPHA: f64 = 0.25;

/// Threshold matched to Gaussian noise: twice the folded-normal mean, `2σ√(2/π)`.
pub fn threshold_for_sigma(sigma: f64) -> f64 {
    2.0 * sigma * (2.0 / std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub space: SpaceSpec,
    pub threshold: f64,
    /// Known noise level; selects the Gaussian success bound.
    pub sigma: Option<f64>,
    pub p0: f64,
    pub seed: u64,
    pub photometric_invariant: bool,
    pub k_max: u64,
    pub d_hat: usize,
    /// Cell side as a multiple of the threshold.
    pub cell_factor: f64,
    pub max_bucket_pairs: Option<usize>,
    pub prior_alpha: f64,
    /// Run exactly this many rounds, disabling adaptive stopping.
    pub fixed_rounds: Option<u64>,
    /// Keep the best inlier rate after every round in [`MatchResult::history`].
    pub record_history: bool,
}

impl MatchConfig {
    pub fn new(space: SpaceSpec, seed: u64) -> Self {
        Self {
            space,
            threshold: DEFAULT_THRESHOLD,
            sigma: None,
            p0: DEFAULT_P0,
            seed,
            photometric_invariant: false,
            k_max: DEFAULT_K_MAX,
            d_hat: DEFAULT_D_HAT,
            cell_factor: DEFAULT_CELL_FACTOR,
            max_bucket_pairs: None,
            prior_alpha: DEFAULT_PRIOR_ALPHA,
            fixed_rounds: None,
            record_history: false,
        }
    }

    /// Sets a known noise level and the matching threshold `2σ√(2/π)`.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self.threshold = threshold_for_sigma(sigma);
        self
    }

    pub fn hash_params(&self) -> HashParams {
        HashParams {
            d_hat: self.d_hat,
            cell: self.cell_factor * self.threshold,
            threshold: self.threshold,
            seed: self.seed,
            max_bucket_pairs: self.max_bucket_pairs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::contract(format!("p0 must lie in (0, 1), got {}", self.p0)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::contract(format!("threshold must be positive, got {}", self.threshold)));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::contract(format!("sigma must be nonnegative, got {s}")));
            }
        }
        if !(self.prior_alpha > 0.0 && self.prior_alpha <= 1.0) {
            return Err(Error::contract("prior inlier rate must lie in (0, 1]"));
        }
        if self.k_max == 0 {
            return Err(Error::contract("k_max must be positive"));
        }
        Ok(())
    }

    /// One-round success bound at inlier rate `alpha` for vectors of dimension `d`.
    pub fn round_success(&self, alpha: f64, d: usize) -> f64 {
        let c = self.cell_factor * self.threshold;
        match self.sigma {
            Some(s) if s > 0.0 => success_prob_gaussian_parts(alpha, d, self.d_hat, s, c)
                .expect("sigma and cell validated positive"),
            _ => success_prob_simple_parts(alpha, d, self.d_hat, self.threshold, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub transform: Transform,
    /// Fraction of template pixels within threshold under `transform`.
    pub inlier_rate: f64,
    pub rounds_run: u64,
    /// Round that produced `transform` (0 when no round reported a pair).
    pub round_found: u64,
    /// Success guarantee at the best inlier rate after `rounds_run` rounds.
    pub theoretical_success: f64,
    pub seed: u64,
    pub d: usize,
    pub ball_size: usize,
    pub net_size: usize,
    pub pairs_examined: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub history: Vec<f64>,
}

impl MatchResult {
    /// Machine-independent cost measure: hashed vectors, scored coordinates
    /// of colliding pairs, and scored template pixels.
    pub fn work_units(&self, template_pixels: usize) -> u64 {
        self.rounds_run * (self.ball_size + self.net_size) as u64
            + self.pairs_examined * self.d as u64
            + self.rounds_run * template_pixels as u64
    }
}

/// Fraction of template pixels `p` with `|T(p) - I(f(p))| <= t`; pixels
/// mapped outside the image count as outliers.
pub fn evaluate_consensus(template: &GrayImage, image: &GrayImage, f: &Transform, t: f64) -> f64 {
    let (w, h) = (template.width(), template.height());
    let mut inliers = 0usize;
    match *f {
        Transform::Translation { dx, dy } => {
            let iw = image.width() as i64;
            let ih = image.height() as i64;
            let ipx = image.pixels();
            for y in 0..h {
                let iy = y as i64 + dy;
                if iy < 0 || iy >= ih {
                    continue;
                }
                let x_lo = (-dx).max(0).min(w as i64) as usize;
                let x_hi = (iw - dx).clamp(0, w as i64) as usize;
                let trow = &template.pixels()[y * w..(y + 1) * w];
                let base = iy as usize * image.width();
                for x in x_lo..x_hi {
                    let iv = ipx[base + (x as i64 + dx) as usize];
                    inliers += usize::from((trow[x] - iv).abs() <= t);
                }
            }
        }
        Transform::Affine { .. } => {
            for y in 0..h {
                for x in 0..w {
                    let q = f.apply(PixelCoord::new(x as i64, y as i64));
                    if let Some(iv) = image.sample(q) {
                        inliers += usize::from((template.get(x, y) - iv).abs() <= t);
                    }
                }
            }
        }
    }
    inliers as f64 / (w * h) as f64
}

/// Consensus after mapping the sampled image intensities affinely onto the
/// template's mean and standard deviation. Invariant to `I -> a I + b`, `a > 0`.
pub fn evaluate_consensus_photometric(template: &GrayImage, image: &GrayImage, f: &Transform, t: f64) -> f64 {
    let (w, h) = (template.width(), template.height());
    let mut pairs = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if let Some(iv) = image.sample(f.apply(PixelCoord::new(x as i64, y as i64))) {
                pairs.push((template.get(x, y), iv));
            }
        }
    }
    if pairs.is_empty() {
        return 0.0;
    }
    let (tm, ts) = template.mean_std();
    let samples: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (im, is) = mean_std(&samples);
    let scale = ts.max(STD_FLOOR) / is.max(STD_FLOOR);
    let inliers = pairs
        .iter()
        .filter(|(tv, iv)| (tv - ((iv - im) * scale + tm)).abs() <= t)
        .count();
    inliers as f64 / (w * h) as f64
}

fn score(template: &GrayImage, image: &GrayImage, f: &Transform, cfg: &MatchConfig) -> f64 {
    if cfg.photometric_invariant {
        evaluate_consensus_photometric(template, image, f, cfg.threshold)
    } else {
        evaluate_consensus(template, image, f, cfg.threshold)
    }
}

/// Decomposition together with the (optionally standardized) vector sets.
#[derive(Debug, Clone)]
pub struct PreparedSearch {
    pub decomposition: Decomposition,
    pub u: crate::decomposition::VectorSet,
    pub v: crate::decomposition::VectorSet,
}

/// Builds the decomposition and the vector sets `U`, `V` for a configuration.
pub fn prepare(template: &GrayImage, image: &GrayImage, cfg: &MatchConfig) -> Result<PreparedSearch> {
    cfg.validate()?;
    if (image.width(), image.height()) != cfg.space.image_dims {
        return Err(Error::contract(format!(
            "image is {}x{}, search space expects {:?}",
            image.width(),
            image.height(),
            cfg.space.image_dims
        )));
    }
    let decomposition = Decomposition::build(&cfg.space)?;
    let mut u = build_u(template, &decomposition)?;
    let mut v = build_v(image, &decomposition)?;
    if cfg.photometric_invariant {
        let values: Vec<f64> = decomposition
            .sub_template
            .iter()
            .map(|p| template.get(p.x as usize, p.y as usize))
            .collect();
        let (m, s) = mean_std(&values);
        let s = s.max(STD_FLOOR);
        u = standardize(&u, m, s)?;
        v = standardize(&v, m, s)?;
    }
    cfg.hash_params().validate(decomposition.d())?;
    Ok(PreparedSearch { decomposition, u, v })
}

/// Searches `image` for the transform of `template` with the largest consensus set.
pub fn match_template(template: &GrayImage, image: &GrayImage, cfg: &MatchConfig) -> Result<MatchResult> {
    let prepared = prepare(template, image, cfg)?;
    Ok(run_rounds(template, image, cfg, &prepared))
}

struct Scored {
    round: u64,
    transform: Transform,
    rate: f64,
    pairs: u64,
}

/// Hashing rounds with adaptive stopping over already prepared vector sets.
///
/// Rounds are computed in parallel batches but folded strictly in round
/// order, so the result equals the sequential run for any thread count.
pub fn run_rounds(template: &GrayImage, image: &GrayImage, cfg: &MatchConfig, prepared: &PreparedSearch) -> MatchResult {
    let PreparedSearch { decomposition, u, v } = prepared;
    let d = decomposition.d();
    let params = cfg.hash_params();
    let budget = |alpha: f64| -> u64 {
        required_iterations(cfg.round_success(alpha, d), cfg.p0, cfg.k_max).min(cfg.k_max)
    };
    let mut limit = match cfg.fixed_rounds {
        Some(k) => k,
        None => budget(cfg.prior_alpha),
    };

    let batch = rayon::current_num_threads().max(1) as u64;
    let mut best: Option<Scored> = None;
    let mut rounds_run = 0u64;
    let mut pairs_examined = 0u64;
    let mut history = Vec::new();
    let mut next = 1u64;
    'outer: while next <= limit {
        let end = (next + batch).min(limit + 1);
        let results: Vec<Option<Scored>> = (next..end)
            .into_par_iter()
            .map(|round| {
                hash_round_unchecked(u, v, &params, round).map(|r| {
                    let f = compose_candidate(v.transform(r.v_index), u.transform(r.u_index));
                    Scored {
                        round,
                        transform: f,
                        rate: score(template, image, &f, cfg),
                        pairs: r.pairs_examined,
                    }
                })
            })
            .collect();
        for (offset, scored) in results.into_iter().enumerate() {
            rounds_run = next + offset as u64;
            if let Some(s) = scored {
                pairs_examined += s.pairs;
                if best.as_ref().is_none_or(|b| s.rate > b.rate) {
                    if cfg.fixed_rounds.is_none() {
                        limit = budget(s.rate);
                    }
                    best = Some(s);
                }
            }
            if cfg.record_history {
                history.push(best.as_ref().map_or(0.0, |b| b.rate));
            }
            if rounds_run >= limit {
                break 'outer;
            }
        }
        next = end;
    }

    let (transform, inlier_rate, round_found) = match best {
        Some(b) => (b.transform, b.rate, b.round),
        None => {
            let f = compose_candidate(v.transform(0), u.transform(0));
            (f, score(template, image, &f, cfg), 0)
        }
    };
    MatchResult {
        transform,
        inlier_rate,
        rounds_run,
        round_found,
        theoretical_success: overall_success(cfg.round_success(inlier_rate, d), rounds_run),
        seed: cfg.seed,
        d,
        ball_size: u.len(),
        net_size: v.len(),
        pairs_examined,
        history,
    }
}
