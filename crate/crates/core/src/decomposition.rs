//! Product-space factorization of the search space.
//!
//! The transformation set `F` is split into a small *ball* of perturbations
//! around the identity and a coarse *net*, so that every `f ∈ F` is reached
//! as `g ∘ h⁻¹` with `g` in the net and `h` in the ball. Matching then
//! compares the vector set `U = {T(h(T'))}` against `V = {I(g(T'))}`,
//! two sets of roughly `√N` rows each, over the sub-template `T'` of pixels
//! that stay inside the template under every ball perturbation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{mean_std, GrayImage, PixelCoord};
use crate::transform::{singular_values, Transform};

/// Default geometric tolerance (pixels) of the affine net.
pub const DEFAULT_DELTA_GEO: f64 = 1.0;

/// Rows below this standard deviation are treated as constant by [`standardize`].
pub const STD_FLOOR: f64 = 1e-6;

/// Upper bound on `|net| * d` entries materialized for `V`.
const MAX_V_ENTRIES: usize = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpaceKind {
    Translation,
    /// Rotations in radians; scales apply independently to both template axes.
    Affine {
        scale_min: f64,
        scale_max: f64,
        rot_min: f64,
        rot_max: f64,
    },
}

/// Describes the discretized search space `F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    /// Template `(width, height)`.
    pub template_dims: (usize, usize),
    /// Image `(width, height)`.
    pub image_dims: (usize, usize),
    /// Geometric tolerance of the affine net, in pixels.
    pub delta_geo: f64,
}

impl SpaceSpec {
    pub fn translation(template_dims: (usize, usize), image_dims: (usize, usize)) -> Result<Self> {
        let spec = SpaceSpec {
            kind: SpaceKind::Translation,
            template_dims,
            image_dims,
            delta_geo: DEFAULT_DELTA_GEO,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn affine(
        template_dims: (usize, usize),
        image_dims: (usize, usize),
        scales: (f64, f64),
        rotations: (f64, f64),
    ) -> Result<Self> {
        let spec = SpaceSpec {
            kind: SpaceKind::Affine {
                scale_min: scales.0,
                scale_max: scales.1,
                rot_min: rotations.0,
                rot_max: rotations.1,
            },
            template_dims,
            image_dims,
            delta_geo: DEFAULT_DELTA_GEO,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_delta_geo(mut self, delta_geo: f64) -> Result<Self> {
        self.delta_geo = delta_geo;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (tw, th) = self.template_dims;
        let (iw, ih) = self.image_dims;
        if tw == 0 || th == 0 {
            return Err(Error::contract("template dimensions must be positive"));
        }
        if tw > iw || th > ih {
            return Err(Error::contract(format!(
                "template {tw}x{th} does not fit in image {iw}x{ih}"
            )));
        }
        if let SpaceKind::Affine {
            scale_min,
            scale_max,
            rot_min,
            rot_max,
        } = self.kind
        {
            if !(scale_min > 0.0 && scale_min <= scale_max && scale_max.is_finite()) {
                return Err(Error::contract(format!(
                    "empty or invalid scale range [{scale_min}, {scale_max}]"
                )));
            }
            if !(rot_min <= rot_max && rot_min.is_finite() && rot_max.is_finite()) {
                return Err(Error::contract(format!(
                    "empty or invalid rotation range [{rot_min}, {rot_max}]"
                )));
            }
            if !(self.delta_geo > 0.0 && self.delta_geo.is_finite()) {
                return Err(Error::contract("delta_geo must be positive"));
            }
        }
        Ok(())
    }

    /// Number of valid placements per axis, `image - template + 1`.
    pub fn placements(&self) -> (usize, usize) {
        (
            self.image_dims.0 - self.template_dims.0 + 1,
            self.image_dims.1 - self.template_dims.1 + 1,
        )
    }

    pub fn template_center(&self) -> [f64; 2] {
        [
            (self.template_dims.0 as f64 - 1.0) / 2.0,
            (self.template_dims.1 as f64 - 1.0) / 2.0,
        ]
    }
}

/// The factorization `F ≈ Net ∘ Ball⁻¹` together with the sub-template `T'`.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Perturbations around the identity (always integer translations).
    pub ball: Vec<Transform>,
    pub net: Vec<Transform>,
    /// Half-side of the ball box in pixels (largest over both axes).
    pub epsilon: f64,
    /// Largest `Δ(h, id)` over the ball.
    pub epsilon_prime: f64,
    /// Row-major list of `T'` pixels.
    pub sub_template: Vec<PixelCoord>,
    pub space: SpaceSpec,
    /// Size of the discretized space the product stands for.
    pub configurations: u64,
}

impl Decomposition {
    pub fn build(spec: &SpaceSpec) -> Result<Self> {
        match spec.kind {
            SpaceKind::Translation => build_translation_decomposition(spec),
            SpaceKind::Affine { .. } => build_affine_decomposition(spec),
        }
    }

    /// Dimension of the `U` / `V` vectors.
    pub fn d(&self) -> usize {
        self.sub_template.len()
    }

    /// The transform a ball/net pair stands for, `g ∘ h⁻¹`.
    pub fn candidate(&self, ball_index: usize, net_index: usize) -> Transform {
        compose_candidate(&self.net[net_index], &self.ball[ball_index])
    }
}

/// `g ∘ h⁻¹` for a net transform `g` and a ball transform `h`.
pub fn compose_candidate(g: &Transform, h: &Transform) -> Transform {
    let h_inv = h
        .invert()
        .expect("ball transforms are translations and always invertible");
    g.compose(&h_inv)
}

/// Ball half-size along one axis.
///
/// `placements` is the number of valid offsets on the axis; the balanced
/// choice is `ceil(sqrt(placements) / 2)`. It is capped so that the
/// sub-template keeps at least `min_sub_side` pixels along the axis.
fn axis_epsilon(placements: usize, template_side: usize) -> usize {
    if placements <= 1 {
        return 0;
    }
    let balanced = (0.5 * (placements as f64).sqrt()).ceil() as usize;
    balanced.min(max_axis_epsilon(template_side))
}

/// Smallest sub-template side kept along an axis of `template_side` pixels.
pub fn min_sub_template_side(template_side: usize) -> usize {
    template_side.min(4.max(template_side.div_ceil(4)))
}

fn max_axis_epsilon(template_side: usize) -> usize {
    (template_side - min_sub_template_side(template_side) + 1) / 2
}

/// Per-axis ball offsets `[-ε, ε-1]`, or `{0}` when `ε = 0`.
fn ball_offsets(eps: usize) -> Vec<i64> {
    if eps == 0 {
        vec![0]
    } else {
        (-(eps as i64)..eps as i64).collect()
    }
}

/// Cell stride and anchor along one axis: net point `k` is `anchor + k * stride`
/// and reaches offsets `[k * stride, k * stride + stride - 1]` through the ball.
fn net_lattice(eps: usize) -> (i64, i64) {
    if eps == 0 {
        (1, 0)
    } else {
        (2 * eps as i64, eps as i64 - 1)
    }
}

fn box_ball(ex: usize, ey: usize) -> Vec<Transform> {
    let xs = ball_offsets(ex);
    let ys = ball_offsets(ey);
    ys.iter()
        .flat_map(|&dy| xs.iter().map(move |&dx| Transform::translation(dx, dy)))
        .collect()
}

/// Simple 2D-translation construction: a `2ε x 2ε` box of offsets for the
/// ball and a stride-`2ε` grid for the net.
///
/// Every placement `f` is reached by exactly one pair, `f = g - h`. Net
/// points of the last (partial) cell may sit past the last valid
/// placement; their `V` rows stay inside the image because `T'` is cropped
/// by `ε` on the leading side and `ε - 1` on the trailing side.
pub fn build_translation_decomposition(spec: &SpaceSpec) -> Result<Decomposition> {
    spec.validate()?;
    let (rx, ry) = spec.placements();
    let ex = axis_epsilon(rx, spec.template_dims.0);
    let ey = axis_epsilon(ry, spec.template_dims.1);
    let ball = box_ball(ex, ey);
    let axis_net = |eps: usize, r: usize| -> Vec<i64> {
        let (stride, anchor) = net_lattice(eps);
        let count = (r as i64 + stride - 1) / stride;
        (0..count).map(|k| anchor + k * stride).collect()
    };
    let nx = axis_net(ex, rx);
    let ny = axis_net(ey, ry);
    let net = ny
        .iter()
        .flat_map(|&dy| nx.iter().map(move |&dx| Transform::translation(dx, dy)))
        .collect();
    let sub_template = compute_sub_template(spec.template_dims, &ball)?;
    Ok(Decomposition {
        ball,
        net,
        epsilon: ex.max(ey) as f64,
        epsilon_prime: (ex as f64).hypot(ey as f64),
        sub_template,
        space: *spec,
        configurations: rx as u64 * ry as u64,
    })
}

/// Linear parts sampled by the affine net and the translation sub-lattice factor.
#[derive(Debug, Clone)]
pub struct AffineGrid {
    pub rotations: Vec<f64>,
    pub scales_x: Vec<f64>,
    pub scales_y: Vec<f64>,
    /// Translations are reached on the lattice `A (ℤ/q)²`.
    pub subdivision: usize,
}

impl AffineGrid {
    pub fn linear_parts(&self) -> usize {
        self.rotations.len() * self.scales_x.len() * self.scales_y.len()
    }
}

/// Midpoints of `n` equal cells over `[lo, hi]`, with `n` the smallest count
/// keeping every point of the range within `half_step` of a sample.
fn centered_grid(lo: f64, hi: f64, half_step: f64) -> Vec<f64> {
    let width = hi - lo;
    if width <= 0.0 {
        return vec![lo];
    }
    let n = if half_step.is_finite() && half_step > 0.0 {
        ((width / (2.0 * half_step)).ceil() as usize).max(1)
    } else {
        1
    };
    (0..n)
        .map(|i| lo + (i as f64 + 0.5) * width / n as f64)
        .collect()
}

/// Chooses the affine net resolution so that every map in the continuous
/// space lies within `delta_geo * √2` (in `Δ`) of some `g ∘ h⁻¹`.
///
/// The error budget splits into a translation part, the covering radius
/// `s_max √2 / (2q)` of the lattice `A (ℤ/q)²`, and a linear part shared
/// equally between rotation and scale steps, measured at the template
/// corners relative to its center.
pub fn affine_grid(spec: &SpaceSpec) -> Result<AffineGrid> {
    let SpaceKind::Affine {
        scale_min,
        scale_max,
        rot_min,
        rot_max,
    } = spec.kind
    else {
        return Err(Error::contract("affine grid requested for a translation space"));
    };
    let delta = spec.delta_geo;
    let q = ((scale_max / delta).ceil() as usize).max(1);
    let translation_err = scale_max * std::f64::consts::SQRT_2 / (2.0 * q as f64);
    let linear_err = delta * std::f64::consts::SQRT_2 - translation_err;
    let hx = (spec.template_dims.0 as f64 - 1.0) / 2.0;
    let hy = (spec.template_dims.1 as f64 - 1.0) / 2.0;
    let radius = hx.hypot(hy);
    let rot_half = 0.5 * linear_err / (scale_max * radius);
    let per_axis = 0.5 * linear_err / std::f64::consts::SQRT_2;
    Ok(AffineGrid {
        rotations: centered_grid(rot_min, rot_max, rot_half),
        scales_x: centered_grid(scale_min, scale_max, per_axis / hx),
        scales_y: centered_grid(scale_min, scale_max, per_axis / hy),
        subdivision: q,
    })
}

/// 2D-affine construction: the ball holds integer translations only, and the
/// net carries every rotation/scale sample together with a translation
/// lattice of stride `2ε` in the template frame.
///
/// Degenerate ranges (identity linear part only) reproduce
/// [`build_translation_decomposition`] with affine-typed net transforms.
pub fn build_affine_decomposition(spec: &SpaceSpec) -> Result<Decomposition> {
    spec.validate()?;
    let grid = affine_grid(spec)?;
    let (rx, ry) = spec.placements();
    let q = grid.subdivision;
    let identity_only = grid.linear_parts() == 1
        && q == 1
        && grid.rotations[0] == 0.0
        && grid.scales_x[0] == 1.0
        && grid.scales_y[0] == 1.0;

    let configurations = grid.linear_parts() as u64 * (q * q) as u64 * rx as u64 * ry as u64;
    let (ex, ey) = if identity_only {
        (
            axis_epsilon(rx, spec.template_dims.0),
            axis_epsilon(ry, spec.template_dims.1),
        )
    } else {
        let balanced = ((configurations as f64).powf(0.25) / 2.0).round().max(1.0) as usize;
        let cap = max_axis_epsilon(spec.template_dims.0).min(max_axis_epsilon(spec.template_dims.1));
        (balanced.min(cap), balanced.min(cap))
    };
    let ball = box_ball(ex, ey);
    let sub_template = compute_sub_template(spec.template_dims, &ball)?;

    let center = spec.template_center();
    let (iw, ih) = spec.image_dims;
    let (tw, th) = spec.template_dims;
    let corners = [
        [-center[0], -center[1]],
        [tw as f64 - 1.0 - center[0], -center[1]],
        [-center[0], th as f64 - 1.0 - center[1]],
        [tw as f64 - 1.0 - center[0], th as f64 - 1.0 - center[1]],
    ];
    let (sx_lat, ax_lat) = net_lattice(ex);
    let (sy_lat, ay_lat) = net_lattice(ey);
    let span_x = (sx_lat - 1) as f64;
    let span_y = (sy_lat - 1) as f64;

    let mut net = Vec::new();
    for &theta in &grid.rotations {
        for &sy in &grid.scales_y {
            for &sx in &grid.scales_x {
                let (sn, cs) = theta.sin_cos();
                let a = [[cs * sx, -sn * sy], [sn * sx, cs * sy]];
                // translations τ keeping every template corner inside the image
                let mut lo = [f64::NEG_INFINITY; 2];
                let mut hi = [f64::INFINITY; 2];
                for v in &corners {
                    let ax = a[0][0] * v[0] + a[0][1] * v[1];
                    let ay = a[1][0] * v[0] + a[1][1] * v[1];
                    lo[0] = lo[0].max(-center[0] - ax);
                    hi[0] = hi[0].min(iw as f64 - 1.0 - center[0] - ax);
                    lo[1] = lo[1].max(-center[1] - ay);
                    hi[1] = hi[1].min(ih as f64 - 1.0 - center[1] - ay);
                }
                if lo[0] > hi[0] || lo[1] > hi[1] {
                    continue;
                }
                let rho = singular_values(a).0 * std::f64::consts::SQRT_2 / (2.0 * q as f64);
                let rect = [lo[0] - rho, hi[0] + rho, lo[1] - rho, hi[1] + rho];
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
                let (zlo, zhi) = mapped_bbox(inv, [rect[0], rect[1]], [rect[2], rect[3]]);
                for jy in 0..q {
                    for jx in 0..q {
                        let fx = jx as f64 / q as f64;
                        let fy = jy as f64 / q as f64;
                        let kx0 = ((zlo[0] - fx - span_x) / sx_lat as f64).floor() as i64;
                        let kx1 = ((zhi[0] - fx) / sx_lat as f64).ceil() as i64;
                        let ky0 = ((zlo[1] - fy - span_y) / sy_lat as f64).floor() as i64;
                        let ky1 = ((zhi[1] - fy) / sy_lat as f64).ceil() as i64;
                        for ky in ky0..=ky1 {
                            for kx in kx0..=kx1 {
                                let cell_x = [kx as f64 * sx_lat as f64 + fx, kx as f64 * sx_lat as f64 + fx + span_x];
                                let cell_y = [ky as f64 * sy_lat as f64 + fy, ky as f64 * sy_lat as f64 + fy + span_y];
                                let (tlo, thi) = mapped_bbox(a, cell_x, cell_y);
                                if thi[0] < rect[0] || tlo[0] > rect[1] || thi[1] < rect[2] || tlo[1] > rect[3] {
                                    continue;
                                }
                                let zx = (kx * sx_lat + ax_lat) as f64 + fx;
                                let zy = (ky * sy_lat + ay_lat) as f64 + fy;
                                let shift = [a[0][0] * zx + a[0][1] * zy, a[1][0] * zx + a[1][1] * zy];
                                net.push(Transform::from_params(theta, sx, sy, shift, center)?);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Decomposition {
        ball,
        net,
        epsilon: ex.max(ey) as f64,
        epsilon_prime: (ex as f64).hypot(ey as f64),
        sub_template,
        space: *spec,
        configurations,
    })
}

/// Bounding box of the image of the box `xs x ys` under the linear map `m`.
fn mapped_bbox(m: [[f64; 2]; 2], xs: [f64; 2], ys: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &x in &xs {
        for &y in &ys {
            let u = m[0][0] * x + m[0][1] * y;
            let v = m[1][0] * x + m[1][1] * y;
            lo[0] = lo[0].min(u);
            hi[0] = hi[0].max(u);
            lo[1] = lo[1].min(v);
            hi[1] = hi[1].max(v);
        }
    }
    (lo, hi)
}

/// Template pixels (row-major) that every ball transform keeps inside the template.
pub fn compute_sub_template(template_dims: (usize, usize), ball: &[Transform]) -> Result<Vec<PixelCoord>> {
    if ball.is_empty() {
        return Err(Error::contract("ball must be nonempty"));
    }
    let (w, h) = template_dims;
    let inside = |q: PixelCoord| q.x >= 0 && q.y >= 0 && (q.x as usize) < w && (q.y as usize) < h;
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = PixelCoord::new(x, y);
            if ball.iter().all(|b| inside(b.apply(p))) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::DegenerateSubTemplate {
            width: w,
            height: h,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    TemplateSide,
    ImageSide,
}

/// Rows of intensities sampled over `T'`, each tied to the transform that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    d: usize,
    data: Vec<f64>,
    /// Column-major copy of `data`, for per-coordinate scans.
    columns: Vec<f64>,
    transforms: Vec<Transform>,
    source: VectorSource,
}

impl VectorSet {
    pub fn new(d: usize, data: Vec<f64>, transforms: Vec<Transform>, source: VectorSource) -> Result<Self> {
        if d == 0 || data.len() != d * transforms.len() {
            return Err(Error::contract(format!(
                "{} entries do not form {} rows of dimension {d}",
                data.len(),
                transforms.len()
            )));
        }
        let n = transforms.len();
        let mut columns = vec![0.0; data.len()];
        for (i, row) in data.chunks_exact(d).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                columns[j * n + i] = v;
            }
        }
        Ok(Self {
            d,
            data,
            columns,
            transforms,
            source,
        })
    }

    /// Coordinate `j` of every row.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.len();
        &self.columns[j * n..(j + 1) * n]
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn transform(&self, i: usize) -> &Transform {
        &self.transforms[i]
    }

    pub fn source(&self) -> VectorSource {
        self.source
    }
}

/// Samples `img` at `f(p)` for every `p` in `coords`; `None` if any lands outside.
fn sample_row(img: &GrayImage, f: &Transform, coords: &[PixelCoord]) -> Option<Vec<f64>> {
    if let Transform::Translation { dx, dy } = *f {
        // bounding box test, then direct indexing
        let (first, last) = (coords.first()?, coords.last()?);
        let (x0, x1) = coords
            .iter()
            .fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
        if x0 + dx < 0 || first.y + dy < 0 || x1 + dx >= img.width() as i64 || last.y + dy >= img.height() as i64 {
            return None;
        }
        let w = img.width();
        let px = img.pixels();
        return Some(
            coords
                .iter()
                .map(|p| px[(p.y + dy) as usize * w + (p.x + dx) as usize])
                .collect(),
        );
    }
    coords.iter().map(|&p| img.sample(f.apply(p))).collect()
}

/// `U = {T(h(T'))}` over the ball.
pub fn build_u(template: &GrayImage, dec: &Decomposition) -> Result<VectorSet> {
    if (template.width(), template.height()) != dec.space.template_dims {
        return Err(Error::contract(format!(
            "template is {}x{}, decomposition expects {:?}",
            template.width(),
            template.height(),
            dec.space.template_dims
        )));
    }
    let rows: Vec<Vec<f64>> = dec
        .ball
        .par_iter()
        .map(|h| sample_row(template, h, &dec.sub_template).expect("T' keeps every ball image inside T"))
        .collect();
    VectorSet::new(dec.d(), rows.concat(), dec.ball.clone(), VectorSource::TemplateSide)
}

/// `V = {I(g(T'))}` over the net, dropping rows that leave the image.
pub fn build_v(image: &GrayImage, dec: &Decomposition) -> Result<VectorSet> {
    if dec.net.len().saturating_mul(dec.d()) > MAX_V_ENTRIES {
        return Err(Error::contract(format!(
            "net of {} transforms with d = {} is too large to materialize",
            dec.net.len(),
            dec.d()
        )));
    }
    let rows: Vec<(Transform, Vec<f64>)> = dec
        .net
        .par_iter()
        .filter_map(|g| sample_row(image, g, &dec.sub_template).map(|r| (*g, r)))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyNet);
    }
    let mut data = Vec::with_capacity(rows.len() * dec.d());
    let mut transforms = Vec::with_capacity(rows.len());
    for (g, r) in rows {
        transforms.push(g);
        data.extend_from_slice(&r);
    }
    VectorSet::new(dec.d(), data, transforms, VectorSource::ImageSide)
}

/// Maps each row affinely onto the given mean and standard deviation.
///
/// Rows with standard deviation below [`STD_FLOOR`] are divided by the floor
/// instead, so constant rows land on `target_mean`. No clamping is applied.
pub fn standardize(vs: &VectorSet, target_mean: f64, target_std: f64) -> Result<VectorSet> {
    if !(target_std > 0.0) {
        return Err(Error::contract("target standard deviation must be positive"));
    }
    let mut data = Vec::with_capacity(vs.data.len());
    for row in vs.rows() {
        let (m, s) = mean_std(row);
        let scale = target_std / s.max(STD_FLOOR);
        data.extend(row.iter().map(|v| (v - m) * scale + target_mean));
    }
    VectorSet::new(vs.d, data, vs.transforms.clone(), vs.source)
}
