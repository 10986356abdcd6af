//! Detection-quality measures: parallelogram overlap error and center error.

use crate::error::{Error, Result};
use crate::transform::Transform;

pub type Point = [f64; 2];

/// Convex quadrilateral given by its corners in boundary order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parallelogram {
    pub corners: [Point; 4],
}

impl Parallelogram {
    pub fn new(corners: [Point; 4]) -> Self {
        Self { corners }
    }

    /// Image of the template's pixel extent `[-0.5, w - 0.5] x [-0.5, h - 0.5]`.
    pub fn from_transform(f: &Transform, template_dims: (usize, usize)) -> Self {
        let (w, h) = (template_dims.0 as f64, template_dims.1 as f64);
        let map = |x: f64, y: f64| {
            let (u, v) = f.apply_real(x, y);
            [u, v]
        };
        Self::new([
            map(-0.5, -0.5),
            map(w - 0.5, -0.5),
            map(w - 0.5, h - 0.5),
            map(-0.5, h - 0.5),
        ])
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }
}

/// Shoelace formula; positive for counter-clockwise order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice
}

fn ccw(poly: &[Point]) -> Vec<Point> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` by the convex polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let clip = ccw(clip);
    let mut out = ccw(subject);
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let s = dp / (dp - dq);
                out.push([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// `1 - |q1 ∩ q2| / |q1 ∪ q2|`, in `[0, 1]`.
pub fn overlap_error(q1: &Parallelogram, q2: &Parallelogram) -> Result<f64> {
    let (a1, a2) = (q1.area(), q2.area());
    if a1 <= 1e-12 || a2 <= 1e-12 || !a1.is_finite() || !a2.is_finite() {
        return Err(Error::contract("overlap error needs non-degenerate parallelograms"));
    }
    let inter = signed_area(&clip_convex(&q1.corners, &q2.corners)).abs().min(a1.min(a2));
    let union = a1 + a2 - inter;
    Ok((1.0 - inter / union).clamp(0.0, 1.0))
}

/// Distance between the images of the template center under `found` and
/// `truth`, as a percentage of the larger template side, clipped at 100.
pub fn center_error_pct(found: &Transform, truth: &Transform, template_dims: (usize, usize)) -> f64 {
    let cx = (template_dims.0 as f64 - 1.0) / 2.0;
    let cy = (template_dims.1 as f64 - 1.0) / 2.0;
    let (ax, ay) = found.apply_real(cx, cy);
    let (bx, by) = truth.apply_real(cx, cy);
    let side = template_dims.0.max(template_dims.1) as f64;
    (100.0 * (ax - bx).hypot(ay - by) / side).min(100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f64, y0: f64, s: f64) -> Parallelogram {
        Parallelogram::new([[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]])
    }

    #[test]
    fn overlap_examples() {
        let a = square(0.0, 0.0, 1.0);
        assert!(overlap_error(&a, &a).unwrap().abs() < 1e-12);
        assert_eq!(overlap_error(&a, &square(5.0, 5.0, 1.0)).unwrap(), 1.0);
        let shifted = square(0.5, 0.0, 1.0);
        assert!((overlap_error(&a, &shifted).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_does_not_matter() {
        let a = square(0.0, 0.0, 2.0);
        let mut rev = a.corners;
        rev.reverse();
        let b = square(1.0, 1.0, 2.0);
        let e1 = overlap_error(&a, &b).unwrap();
        let e2 = overlap_error(&Parallelogram::new(rev), &b).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
        assert!((e1 - (1.0 - 1.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rejected() {
        let flat = Parallelogram::new([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 0.0]]);
        assert!(overlap_error(&flat, &square(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn template_extent() {
        let p = Parallelogram::from_transform(&Transform::translation(3, 4), (10, 6));
        assert_eq!(p.corners[0], [2.5, 3.5]);
        assert_eq!(p.area(), 60.0);
    }

    #[test]
    fn center_error_clips() {
        let t = Transform::translation(0, 0);
        assert_eq!(center_error_pct(&t, &Transform::translation(3, 4), (50, 50)), 10.0);
        assert_eq!(center_error_pct(&t, &Transform::translation(300, 0), (32, 32)), 100.0);
        assert_eq!(center_error_pct(&t, &t, (32, 32)), 0.0);
    }

    fn quad() -> impl Strategy<Value = Parallelogram> {
        (-5.0f64..5.0, -5.0f64..5.0, 0.5f64..4.0, 0.5f64..4.0, -1.5f64..1.5, -0.9f64..0.9).prop_map(
            |(x, y, a, b, theta, shear)| {
                let (s, c) = theta.sin_cos();
                let e1 = [a * c, a * s];
                let e2 = [b * (-s + shear * c), b * (c + shear * s)];
                Parallelogram::new([
                    [x, y],
                    [x + e1[0], y + e1[1]],
                    [x + e1[0] + e2[0], y + e1[1] + e2[1]],
                    [x + e2[0], y + e2[1]],
                ])
            },
        )
    }

    /// Point-in-convex-polygon test.
    fn inside(p: &Parallelogram, pt: Point) -> bool {
        let c = ccw(&p.corners);
        (0..4).all(|i| cross(c[i], c[(i + 1) % 4], pt) >= 0.0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn symmetric_and_bounded(a in quad(), b in quad()) {
            let e1 = overlap_error(&a, &b).unwrap();
            let e2 = overlap_error(&b, &a).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&e1));
        }

        #[test]
        fn intersection_matches_grid_count(a in quad(), b in quad()) {
            let inter = signed_area(&clip_convex(&a.corners, &b.corners)).abs();
            let n = 400;
            let (lo, hi) = (-15.0, 15.0);
            let step = (hi - lo) / n as f64;
            let mut hits = 0usize;
            for i in 0..n {
                for j in 0..n {
                    let pt = [lo + (i as f64 + 0.5) * step, lo + (j as f64 + 0.5) * step];
                    hits += usize::from(inside(&a, pt) && inside(&b, pt));
                }
            }
            let approx = hits as f64 * step * step;
            let perimeter_slack = 40.0 * step;
            prop_assert!((approx - inter).abs() <= perimeter_slack, "{} vs {}", approx, inter);
        }
    }
}
