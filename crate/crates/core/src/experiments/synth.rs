//! Planted template-matching instances with controlled inlier rates.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decomposition::{SpaceKind, SpaceSpec};
use crate::error::{Error, Result};
use crate::image::{GrayImage, PixelCoord};
use crate::transform::Transform;

/// Rejection-sampling budget of [`gen_planted_affine`].
pub const MAX_AFFINE_DRAWS: usize = 1000;
/// Consecutive rejected block positions before overlapping blocks are allowed.
const MAX_BLOCK_REJECTIONS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub image: GrayImage,
    pub template: GrayImage,
    pub truth: Transform,
    /// Row-major over the template.
    pub inlier_mask: Vec<bool>,
    /// Fraction of template pixels marked as inliers.
    pub alpha: f64,
    /// Set when occlusion blocks had to overlap to reach the requested coverage.
    pub overlapping_blocks: bool,
}

impl SyntheticInstance {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }

    fn refresh_alpha(&mut self) {
        self.alpha = self.inlier_count() as f64 / self.inlier_mask.len() as f64;
    }
}

/// Mixes a base seed with a sequence of tags into an independent stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &t in tags {
        state = splitmix(state ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adds i.i.d. Gaussian noise and clamps to `[0, 1]`.
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, rng: &mut impl Rng) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("noise sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(GrayImage::from_fn(img.width(), img.height(), |x, y| {
        img.get(x, y) + normal.sample(rng)
    }))
}

/// Intensity exactly 0.5 away from `v`; the midpoint takes the downward branch.
pub fn displace_outlier(v: f64) -> f64 {
    if v >= 0.5 {
        v - 0.5
    } else {
        v + 0.5
    }
}

/// Crops a template at a random placement, turns all but `floor(alpha |T|)`
/// random pixels into outliers, and adds noise to the image.
pub fn gen_planted_translation(src: &GrayImage, n_t: usize, alpha: f64, sigma: f64, seed: u64) -> Result<SyntheticInstance> {
    if n_t == 0 || n_t > src.width().min(src.height()) {
        return Err(Error::contract(format!(
            "template side {n_t} must be positive and fit in a {}x{} source",
            src.width(),
            src.height()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.random_range(0..=src.width() - n_t);
    let y0 = rng.random_range(0..=src.height() - n_t);
    let mut template = src.crop(x0, y0, n_t, n_t)?;
    let total = n_t * n_t;
    let inliers = ((alpha * total as f64) + 1e-9).floor() as usize;
    let mut inlier_mask = vec![false; total];
    for i in index::sample(&mut rng, total, inliers.min(total)).into_iter() {
        inlier_mask[i] = true;
    }
    for (i, &inlier) in inlier_mask.iter().enumerate() {
        if !inlier {
            let (x, y) = (i % n_t, i / n_t);
            template.set(x, y, displace_outlier(template.get(x, y)));
        }
    }
    let image = add_gaussian_noise(src, sigma, &mut rng)?;
    let mut inst = SyntheticInstance {
        image,
        template,
        truth: Transform::translation(x0 as i64, y0 as i64),
        inlier_mask,
        alpha: 0.0,
        overlapping_blocks: false,
    };
    inst.refresh_alpha();
    Ok(inst)
}

/// Samples `(θ, sx, sy, tx, ty)` uniformly from the space ranges, rejecting
/// maps that carry any template pixel outside the source, and inverse-warps
/// the template out of the source.
pub fn gen_planted_affine(src: &GrayImage, n_t: usize, spec: &SpaceSpec, sigma: f64, seed: u64) -> Result<SyntheticInstance> {
    let SpaceKind::Affine {
        scale_min,
        scale_max,
        rot_min,
        rot_max,
    } = spec.kind
    else {
        return Err(Error::contract("gen_planted_affine needs an affine space"));
    };
    spec.validate()?;
    if spec.template_dims != (n_t, n_t) || spec.image_dims != (src.width(), src.height()) {
        return Err(Error::contract("space dimensions disagree with the template side or source"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = spec.template_center();
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let inside = |f: &Transform| {
        (0..n_t as i64).all(|y| (0..n_t as i64).all(|x| src.contains(f.apply(PixelCoord::new(x, y)))))
    };
    for _ in 0..MAX_AFFINE_DRAWS {
        let theta = uniform(&mut rng, rot_min, rot_max);
        let sx = uniform(&mut rng, scale_min, scale_max);
        let sy = uniform(&mut rng, scale_min, scale_max);
        let tx = uniform(&mut rng, -center[0], src.width() as f64 - 1.0 - center[0]);
        let ty = uniform(&mut rng, -center[1], src.height() as f64 - 1.0 - center[1]);
        let f = Transform::from_params(theta, sx, sy, [tx, ty], center)?;
        if !inside(&f) {
            continue;
        }
        let template = GrayImage::from_fn(n_t, n_t, |x, y| {
            src.sample(f.apply(PixelCoord::new(x as i64, y as i64)))
                .expect("checked inside")
        });
        let image = add_gaussian_noise(src, sigma, &mut rng)?;
        return Ok(SyntheticInstance {
            image,
            template,
            truth: f,
            inlier_mask: vec![true; n_t * n_t],
            alpha: 1.0,
            overlapping_blocks: false,
        });
    }
    Err(Error::InfeasibleSpec(MAX_AFFINE_DRAWS))
}

/// Paints random `block x block` squares of uniform random intensity over the
/// template footprint in the image until at least `occluded_fraction` of the
/// template pixels are covered.
///
/// When `block` divides both template sides, blocks are random cells of the
/// aligned tiling, so every pixel is equally likely to be occluded. Otherwise
/// positions are unaligned and rejected on overlap, switching to overlapping
/// placement after repeated rejections.
pub fn add_block_occlusion(inst: &SyntheticInstance, occluded_fraction: f64, block: usize, seed: u64) -> Result<SyntheticInstance> {
    if !(0.0..1.0).contains(&occluded_fraction) {
        return Err(Error::contract(format!(
            "occluded fraction must lie in [0, 1), got {occluded_fraction}"
        )));
    }
    let (w, h) = (inst.template.width(), inst.template.height());
    if block == 0 || block > w.min(h) {
        return Err(Error::contract(format!("block side {block} must lie in [1, {}]", w.min(h))));
    }
    let mut out = inst.clone();
    let total = w * h;
    let target = (occluded_fraction * total as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut covered = vec![false; total];
    let mut n_covered = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paint = |out: &mut SyntheticInstance, covered: &mut [bool], bx: usize, by: usize, value: f64| {
        for y in by..by + block {
            for x in bx..bx + block {
                let q = out.truth.apply(PixelCoord::new(x as i64, y as i64));
                if out.image.contains(q) {
                    out.image.set(q.x as usize, q.y as usize, value);
                }
                if !covered[y * w + x] {
                    covered[y * w + x] = true;
                    n_covered += 1;
                }
                out.inlier_mask[y * w + x] = false;
            }
        }
        n_covered
    };

    if w % block == 0 && h % block == 0 {
        let (tw, th) = (w / block, h / block);
        let tiles = target.div_ceil(block * block);
        for t in index::sample(&mut rng, tw * th, tiles).into_iter() {
            let value: f64 = rng.random();
            paint(&mut out, &mut covered, (t % tw) * block, (t / tw) * block, value);
        }
    } else {
        let mut rejections = 0usize;
        let mut done = 0usize;
        while done < target {
            let bx = rng.random_range(0..=w - block);
            let by = rng.random_range(0..=h - block);
            if !out.overlapping_blocks {
                let overlaps = (by..by + block).any(|y| (bx..bx + block).any(|x| covered[y * w + x]));
                if overlaps {
                    rejections += 1;
                    if rejections >= MAX_BLOCK_REJECTIONS {
                        out.overlapping_blocks = true;
                    }
                    continue;
                }
            }
            rejections = 0;
            let value: f64 = rng.random();
            done = paint(&mut out, &mut covered, bx, by, value);
        }
    }
    out.refresh_alpha();
    Ok(out)
}
