//! Exhaustive consensus maximization over a discretized search space.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::decomposition::{compose_candidate, Decomposition, SpaceKind, SpaceSpec};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::matcher::{evaluate_consensus, MatchResult};
use crate::transform::Transform;

/// Largest number of transforms [`brute_force_match`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Total order on transform parameters used for tie-breaking.
pub fn lexicographic(a: &Transform, b: &Transform) -> Ordering {
    match (a, b) {
        (Transform::Translation { dx: ax, dy: ay }, Transform::Translation { dx: bx, dy: by }) => {
            (ax, ay).cmp(&(bx, by))
        }
        _ => {
            let (pa, pb) = (a.parts(), b.parts());
            let ka = [pa.a[0][0], pa.a[0][1], pa.a[1][0], pa.a[1][1], pa.t[0], pa.t[1]];
            let kb = [pb.a[0][0], pb.a[0][1], pb.a[1][0], pb.a[1][1], pb.t[0], pb.t[1]];
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        }
    }
}

fn better(a: (f64, Transform), b: (f64, Transform)) -> (f64, Transform) {
    match a.0.partial_cmp(&b.0).expect("consensus is finite") {
        Ordering::Greater => a,
        Ordering::Less => b,
        Ordering::Equal => {
            if lexicographic(&a.1, &b.1).is_le() {
                a
            } else {
                b
            }
        }
    }
}

/// Exact maximizer of the consensus objective over every transform of the
/// space: all placements for translations, all `g ∘ h⁻¹` of the
/// decomposition for affine spaces. Ties go to the lexicographically
/// smallest parameters.
pub fn brute_force_match(template: &GrayImage, image: &GrayImage, spec: &SpaceSpec, t: f64) -> Result<MatchResult> {
    spec.validate()?;
    if (template.width(), template.height()) != spec.template_dims
        || (image.width(), image.height()) != spec.image_dims
    {
        return Err(Error::contract("image dimensions disagree with the search space"));
    }
    let candidates: Vec<Transform> = match spec.kind {
        SpaceKind::Translation => {
            let (rx, ry) = spec.placements();
            let n = rx as u64 * ry as u64;
            if n > BRUTE_FORCE_LIMIT {
                return Err(Error::TooLarge(n));
            }
            (0..rx as i64)
                .flat_map(|dx| (0..ry as i64).map(move |dy| Transform::translation(dx, dy)))
                .collect()
        }
        SpaceKind::Affine { .. } => {
            let dec = Decomposition::build(spec)?;
            let n = dec.ball.len() as u64 * dec.net.len() as u64;
            if n > BRUTE_FORCE_LIMIT {
                return Err(Error::TooLarge(n));
            }
            dec.net
                .iter()
                .flat_map(|g| dec.ball.iter().map(move |h| compose_candidate(g, h)))
                .collect()
        }
    };
    let (inlier_rate, transform) = candidates
        .par_iter()
        .map(|f| (evaluate_consensus(template, image, f, t), *f))
        .reduce_with(better)
        .expect("search space is nonempty");
    Ok(MatchResult {
        transform,
        inlier_rate,
        rounds_run: 0,
        round_found: 0,
        theoretical_success: 1.0,
        seed: 0,
        d: template.len(),
        ball_size: 0,
        net_size: candidates.len(),
        pairs_examined: 0,
        history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{residual, PixelCoord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, rng: &mut impl Rng) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| (rng.random_range(0..8) as f64) / 7.0)
    }

    /// Independent double loop over placements using the residual rule.
    fn naive(template: &GrayImage, image: &GrayImage, t: f64) -> (Transform, usize) {
        let mut best = (Transform::IDENTITY, 0usize);
        let mut first = true;
        for dx in 0..=(image.width() - template.width()) as i64 {
            for dy in 0..=(image.height() - template.height()) as i64 {
                let f = Transform::translation(dx, dy);
                let mut count = 0;
                for y in 0..template.height() as i64 {
                    for x in 0..template.width() as i64 {
                        if residual(template, image, &f, PixelCoord::new(x, y)).unwrap() <= t {
                            count += 1;
                        }
                    }
                }
                if first || count > best.1 {
                    best = (f, count);
                    first = false;
                }
            }
        }
        best
    }

    #[test]
    fn exact_copy_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = GrayImage::from_fn(40, 30, |_, _| rng.random());
        let t = img.crop(11, 17, 9, 9).unwrap();
        let spec = SpaceSpec::translation((9, 9), (40, 30)).unwrap();
        let r = brute_force_match(&t, &img, &spec, 0.0).unwrap();
        assert_eq!(r.transform, Transform::translation(11, 17));
        assert_eq!(r.inlier_rate, 1.0);
    }

    #[test]
    fn single_pixel_template_takes_first_hit() {
        let img = GrayImage::new(3, 2, vec![0.0, 0.9, 0.5, 0.5, 0.1, 0.5]).unwrap();
        let t = GrayImage::new(1, 1, vec![0.5]).unwrap();
        let spec = SpaceSpec::translation((1, 1), (3, 2)).unwrap();
        let r = brute_force_match(&t, &img, &spec, 0.05).unwrap();
        assert_eq!(r.transform, Transform::translation(0, 1));
    }

    #[test]
    fn agrees_with_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (iw, ih) = (rng.random_range(8..20), rng.random_range(8..20));
            let (tw, th) = (rng.random_range(1..=6), rng.random_range(1..=6));
            let img = random_image(iw, ih, &mut rng);
            let t = random_image(tw, th, &mut rng);
            let spec = SpaceSpec::translation((tw, th), (iw, ih)).unwrap();
            let r = brute_force_match(&t, &img, &spec, 0.15).unwrap();
            let (f, count) = naive(&t, &img, 0.15);
            assert_eq!(r.transform, f);
            assert_eq!(r.inlier_rate, count as f64 / (tw * th) as f64);
        }
    }

    #[test]
    fn affine_space_is_enumerated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = GrayImage::from_fn(24, 24, |_, _| rng.random());
        let t = img.crop(5, 6, 8, 8).unwrap();
        let spec = SpaceSpec::affine((8, 8), (24, 24), (1.0, 1.0), (0.0, 0.0)).unwrap();
        let r = brute_force_match(&t, &img, &spec, 0.0).unwrap();
        assert_eq!(r.inlier_rate, 1.0);
        assert_eq!(r.transform.apply(PixelCoord::new(0, 0)), PixelCoord::new(5, 6));
    }

    #[test]
    fn guard_refuses_huge_spaces() {
        let img = GrayImage::from_fn(3200, 3200, |_, _| 0.0);
        let t = GrayImage::from_fn(2, 2, |_, _| 0.0);
        let spec = SpaceSpec::translation((2, 2), (3200, 3200)).unwrap();
        assert!(matches!(brute_force_match(&t, &img, &spec, 0.1), Err(Error::TooLarge(_))));
    }

    #[test]
    fn lexicographic_order() {
        let a = Transform::translation(1, 5);
        let b = Transform::translation(2, 0);
        assert!(lexicographic(&a, &b).is_lt());
        let c = Transform::affine(1.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        let d = Transform::affine(1.0, 0.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        assert!(lexicographic(&c, &d).is_lt());
    }
}
