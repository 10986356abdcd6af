//! Discrete geometric maps from the template domain into the image.
//!
//! A transform is either an integer translation or a real-valued affine map
//! `p -> A p + t`. Composition and inversion act on the continuous maps;
//! rounding to pixels happens only in [`Transform::apply`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelCoord;

/// Smallest `|det A|` accepted for an affine linear part.
pub const MIN_ABS_DET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Translation {
        dx: i64,
        dy: i64,
    },
    Affine {
        a11: f64,
        a12: f64,
        a21: f64,
        a22: f64,
        tx: f64,
        ty: f64,
    },
}

/// Linear part and offset of an affine map, `[[a11, a12], [a21, a22]]` and `(tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParts {
    pub a: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl AffineParts {
    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    #[inline]
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.t[0],
            self.a[1][0] * x + self.a[1][1] * y + self.t[1],
        )
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform::Translation { dx: 0, dy: 0 };

    pub const fn translation(dx: i64, dy: i64) -> Self {
        Transform::Translation { dx, dy }
    }

    /// Affine map `p -> A p + t`; fails when `A` is (numerically) singular.
    pub fn affine(a11: f64, a12: f64, a21: f64, a22: f64, tx: f64, ty: f64) -> Result<Self> {
        let det = a11 * a22 - a12 * a21;
        if !(det.abs() > MIN_ABS_DET) {
            return Err(Error::Singular(det));
        }
        Ok(Transform::Affine {
            a11,
            a12,
            a21,
            a22,
            tx,
            ty,
        })
    }

    pub fn affine_identity() -> Self {
        Transform::Affine {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Rotation by `theta` composed with axis scaling, `A = R(theta) diag(sx, sy)`,
    /// applied about the template center `center` and then shifted by `shift`.
    ///
    /// With `theta = 0`, `sx = sy = 1` this is the translation by `shift`.
    pub fn from_params(theta: f64, sx: f64, sy: f64, shift: [f64; 2], center: [f64; 2]) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        let a = [[c * sx, -s * sy], [s * sx, c * sy]];
        let tx = center[0] + shift[0] - (a[0][0] * center[0] + a[0][1] * center[1]);
        let ty = center[1] + shift[1] - (a[1][0] * center[0] + a[1][1] * center[1]);
        Transform::affine(a[0][0], a[0][1], a[1][0], a[1][1], tx, ty)
    }

    pub fn from_parts(parts: AffineParts) -> Result<Self> {
        Transform::affine(
            parts.a[0][0],
            parts.a[0][1],
            parts.a[1][0],
            parts.a[1][1],
            parts.t[0],
            parts.t[1],
        )
    }

    pub fn parts(&self) -> AffineParts {
        match *self {
            Transform::Translation { dx, dy } => AffineParts {
                a: [[1.0, 0.0], [0.0, 1.0]],
                t: [dx as f64, dy as f64],
            },
            Transform::Affine {
                a11,
                a12,
                a21,
                a22,
                tx,
                ty,
            } => AffineParts {
                a: [[a11, a12], [a21, a22]],
                t: [tx, ty],
            },
        }
    }

    pub fn is_translation(&self) -> bool {
        matches!(self, Transform::Translation { .. })
    }

    /// Promotes a translation to the equivalent affine map.
    pub fn to_affine(&self) -> Transform {
        match self {
            Transform::Translation { .. } => {
                let p = self.parts();
                Transform::Affine {
                    a11: p.a[0][0],
                    a12: p.a[0][1],
                    a21: p.a[1][0],
                    a22: p.a[1][1],
                    tx: p.t[0],
                    ty: p.t[1],
                }
            }
            affine => *affine,
        }
    }

    /// Continuous image of `p`.
    #[inline]
    pub fn apply_real(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Transform::Translation { dx, dy } => (x + dx as f64, y + dy as f64),
            Transform::Affine {
                a11,
                a12,
                a21,
                a22,
                tx,
                ty,
            } => (a11 * x + a12 * y + tx, a21 * x + a22 * y + ty),
        }
    }

    /// Pixel that `p` lands on; affine output rounds half away from zero.
    #[inline]
    pub fn apply(&self, p: PixelCoord) -> PixelCoord {
        match *self {
            Transform::Translation { dx, dy } => PixelCoord::new(p.x + dx, p.y + dy),
            Transform::Affine { .. } => {
                let (x, y) = self.apply_real(p.x as f64, p.y as f64);
                PixelCoord::new(x.round() as i64, y.round() as i64)
            }
        }
    }

    /// `self ∘ other`, i.e. `p -> self(other(p))`.
    pub fn compose(&self, other: &Transform) -> Transform {
        match (*self, *other) {
            (Transform::Translation { dx: a, dy: b }, Transform::Translation { dx: c, dy: d }) => {
                Transform::translation(a + c, b + d)
            }
            _ => {
                let f = self.parts();
                let g = other.parts();
                let mut a = [[0.0; 2]; 2];
                for (i, row) in a.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = f.a[i][0] * g.a[0][j] + f.a[i][1] * g.a[1][j];
                    }
                }
                let (tx, ty) = f.map(g.t[0], g.t[1]);
                Transform::Affine {
                    a11: a[0][0],
                    a12: a[0][1],
                    a21: a[1][0],
                    a22: a[1][1],
                    tx,
                    ty,
                }
            }
        }
    }

    pub fn invert(&self) -> Result<Transform> {
        match *self {
            Transform::Translation { dx, dy } => Ok(Transform::translation(-dx, -dy)),
            Transform::Affine { .. } => {
                let p = self.parts();
                let det = p.det();
                if !(det.abs() > MIN_ABS_DET) {
                    return Err(Error::Singular(det));
                }
                let inv = [
                    [p.a[1][1] / det, -p.a[0][1] / det],
                    [-p.a[1][0] / det, p.a[0][0] / det],
                ];
                let tx = -(inv[0][0] * p.t[0] + inv[0][1] * p.t[1]);
                let ty = -(inv[1][0] * p.t[0] + inv[1][1] * p.t[1]);
                Ok(Transform::Affine {
                    a11: inv[0][0],
                    a12: inv[0][1],
                    a21: inv[1][0],
                    a22: inv[1][1],
                    tx,
                    ty,
                })
            }
        }
    }

    /// Smallest singular value of the linear part (1 for translations).
    pub fn min_scale(&self) -> f64 {
        singular_values(self.parts().a).1
    }

    /// Largest singular value of the linear part (1 for translations).
    pub fn max_scale(&self) -> f64 {
        singular_values(self.parts().a).0
    }
}

/// Singular values `(largest, smallest)` of a 2x2 matrix.
pub(crate) fn singular_values(a: [[f64; 2]; 2]) -> (f64, f64) {
    let e = 0.5 * (a[0][0] + a[1][1]);
    let f = 0.5 * (a[0][0] - a[1][1]);
    let g = 0.5 * (a[1][0] + a[0][1]);
    let h = 0.5 * (a[1][0] - a[0][1]);
    let q = e.hypot(h);
    let r = f.hypot(g);
    (q + r, (q - r).abs())
}

/// Transformation distance: the largest Euclidean displacement between
/// `f1(p)` and `f2(p)` over a `width x height` template.
///
/// The difference of two affine maps is affine, so the maximum over the
/// pixel rectangle sits at one of its four corners.
pub fn delta(f1: &Transform, f2: &Transform, template_dims: (usize, usize)) -> f64 {
    if let (Transform::Translation { dx: a, dy: b }, Transform::Translation { dx: c, dy: d }) = (f1, f2) {
        return ((a - c) as f64).hypot((b - d) as f64);
    }
    let p = f1.parts();
    let q = f2.parts();
    let diff = AffineParts {
        a: [
            [p.a[0][0] - q.a[0][0], p.a[0][1] - q.a[0][1]],
            [p.a[1][0] - q.a[1][0], p.a[1][1] - q.a[1][1]],
        ],
        t: [p.t[0] - q.t[0], p.t[1] - q.t[1]],
    };
    let xmax = template_dims.0.saturating_sub(1) as f64;
    let ymax = template_dims.1.saturating_sub(1) as f64;
    [(0.0, 0.0), (xmax, 0.0), (0.0, ymax), (xmax, ymax)]
        .iter()
        .map(|&(x, y)| {
            let (u, v) = diff.map(x, y);
            u.hypot(v)
        })
        .fold(0.0, f64::max)
}
