//! Success probabilities of a hashing round and the iteration counts they imply.
//!
//! A round succeeds when all `d̂` sampled coordinates are inliers of the
//! optimal pair (a hypergeometric event) and the pair's reduced vectors fall
//! into the same grid cell (a per-coordinate event governed by the offset).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration ceiling used when a success bound is vacuous.
pub const DEFAULT_K_MAX: u64 = 100_000;

/// Success probabilities below this are treated as zero by [`required_iterations`].
pub const P_ROUND_FLOOR: f64 = 1e-12;

const SIMPSON_MIN_INTERVALS: usize = 4096;
const SIMPSON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeInputs {
    /// Inlier rate in `(0, 1]`.
    pub alpha: f64,
    pub d: usize,
    pub d_hat: usize,
    pub t: f64,
    pub c: f64,
    /// Noise standard deviation of inlier residuals, in intensity units.
    pub sigma: Option<f64>,
    pub p0: f64,
}

/// `αd` snapped to the nearest integer when it is within rounding noise of one.
fn inlier_items(alpha: f64, d: usize) -> f64 {
    let m = alpha * d as f64;
    if (m - m.round()).abs() < 1e-9 {
        m.round()
    } else {
        m
    }
}

/// Probability that `d̂` coordinates drawn without replacement out of `d`
/// are all inliers, with `αd` inlier coordinates.
///
/// Evaluates the falling-factorial ratio `Π (αd - i) / (d - i)` with real
/// `αd`; zero once `d̂ > ⌊αd⌋`.
pub fn hypergeom_p(alpha: f64, d: usize, d_hat: usize) -> f64 {
    if d_hat > d {
        return 0.0;
    }
    if d_hat == 0 || alpha >= 1.0 {
        return 1.0;
    }
    if alpha <= 0.0 {
        return 0.0;
    }
    let m = inlier_items(alpha, d);
    if d_hat as f64 > m.floor() {
        return 0.0;
    }
    (0..d_hat).fold(1.0, |acc, i| acc * (m - i as f64) / (d - i) as f64)
}

/// [`hypergeom_p`] with an integral count `m = ⌊αd⌋` of inlier coordinates.
pub fn hypergeom_p_floor(alpha: f64, d: usize, d_hat: usize) -> f64 {
    let m = inlier_items(alpha.min(1.0), d).floor();
    if d_hat > d || d_hat as f64 > m {
        return 0.0;
    }
    (0..d_hat).fold(1.0, |acc, i| acc * (m - i as f64) / (d - i) as f64)
}

/// Lower bound for a pair whose inlier coordinates differ by at most `t`:
/// `P(α, d, d̂) (1 - t/c)^d̂`.
pub fn success_prob_simple(g: &GuaranteeInputs) -> f64 {
    success_prob_simple_parts(g.alpha, g.d, g.d_hat, g.t, g.c)
}

pub fn success_prob_simple_parts(alpha: f64, d: usize, d_hat: usize, t: f64, c: f64) -> f64 {
    let per_coord = (1.0 - t / c).clamp(0.0, 1.0);
    hypergeom_p(alpha, d, d_hat) * per_coord.powi(d_hat as i32)
}

/// Lower bound for a pair whose inlier coordinates differ by zero-mean
/// Gaussian noise of standard deviation `σ`.
pub fn success_prob_gaussian(g: &GuaranteeInputs) -> Result<f64> {
    let sigma = g
        .sigma
        .ok_or_else(|| Error::contract("noise sigma is required for the Gaussian bound"))?;
    success_prob_gaussian_parts(g.alpha, g.d, g.d_hat, sigma, g.c)
}

pub fn success_prob_gaussian_parts(alpha: f64, d: usize, d_hat: usize, sigma: f64, c: f64) -> Result<f64> {
    let factor = folded_gaussian_cell_factor(sigma, c)?;
    Ok(hypergeom_p(alpha, d, d_hat) * factor.powi(d_hat as i32))
}

/// Probability that one coordinate pair, offset by folded-normal noise,
/// shares a randomly shifted cell of side `c`:
/// `∫₀ᶜ (1 - x/c) √2/(σ√π) exp(-x²/2σ²) dx`.
///
/// Composite Simpson, starting at 4096 intervals and doubling until two
/// successive estimates agree to 1e-10. The integrand vanishes beyond 40σ,
/// so the upper limit is cut there.
pub fn folded_gaussian_cell_factor(sigma: f64, c: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!("sigma must be positive, got {sigma}")));
    }
    if !(c > 0.0) {
        return Err(Error::contract(format!("cell side must be positive, got {c}")));
    }
    let norm = std::f64::consts::SQRT_2 / (sigma * std::f64::consts::PI.sqrt());
    let density = |x: f64| {
        let w = if c.is_finite() { 1.0 - x / c } else { 1.0 };
        w * norm * (-x * x / (2.0 * sigma * sigma)).exp()
    };
    let upper = c.min(40.0 * sigma);
    let mut n = SIMPSON_MIN_INTERVALS;
    let mut prev = simpson(&density, upper, n);
    loop {
        n *= 2;
        let next = simpson(&density, upper, n);
        if (next - prev).abs() < SIMPSON_TOL || n >= 1 << 24 {
            return Ok(next.clamp(0.0, 1.0));
        }
        prev = next;
    }
}

fn simpson(f: &impl Fn(f64) -> f64, upper: f64, n: usize) -> f64 {
    let h = upper / n as f64;
    let mut acc = f(0.0) + f(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// Probability that at least one of `k` independent rounds succeeds.
pub fn overall_success(p_round: f64, k: u64) -> f64 {
    if k == 0 || p_round <= 0.0 {
        return 0.0;
    }
    if p_round >= 1.0 {
        return 1.0;
    }
    -(k as f64 * (-p_round).ln_1p()).exp_m1()
}

/// Rounds needed so that [`overall_success`] reaches `p0`.
///
/// Returns `k_max` when `p_round` is below [`P_ROUND_FLOOR`].
pub fn required_iterations(p_round: f64, p0: f64, k_max: u64) -> u64 {
    if !(p_round >= P_ROUND_FLOOR) {
        return k_max;
    }
    if p_round >= 1.0 || p0 <= 0.0 {
        return 1;
    }
    let k = (-p0).ln_1p() / (-p_round).ln_1p();
    // shave rounding noise so exact integers do not round up
    let k = (k - 1e-9).ceil();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        (k as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn closed_form_factor(sigma: f64, c: f64) -> f64 {
        let z = c / (sigma * std::f64::consts::SQRT_2);
        statrs::function::erf::erf(z)
            - sigma * std::f64::consts::SQRT_2 / (c * std::f64::consts::PI.sqrt()) * (1.0 - (-z * z).exp())
    }

    /// Counts all `d̂`-subsets of `d` items and the all-inlier ones.
    fn enumerate_subsets(d: usize, m: usize, d_hat: usize) -> f64 {
        fn rec(start: usize, left: usize, d: usize, m: usize, all_in: bool, tot: &mut u64, good: &mut u64) {
            if left == 0 {
                *tot += 1;
                if all_in {
                    *good += 1;
                }
                return;
            }
            for i in start..d {
                rec(i + 1, left - 1, d, m, all_in && i < m, tot, good);
            }
        }
        let (mut tot, mut good) = (0, 0);
        rec(0, d_hat, d, m, true, &mut tot, &mut good);
        good as f64 / tot as f64
    }

    #[test]
    fn hypergeom_examples() {
        assert_eq!(hypergeom_p(1.0, 37, 9), 1.0);
        assert!((hypergeom_p(0.5, 4, 2) - 1.0 / 6.0).abs() < 1e-15);
        assert!((enumerate_subsets(4, 2, 2) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(hypergeom_p(0.05, 100, 9), 0.0);
        assert_eq!(hypergeom_p(0.5, 10, 11), 0.0);
        assert_eq!(hypergeom_p(0.0, 10, 0), 1.0);
        assert_eq!(hypergeom_p(0.0, 10, 1), 0.0);
    }

    #[test]
    fn hypergeom_matches_enumeration() {
        for d in 1..=12 {
            for m in 0..=d {
                for d_hat in 1..=d.min(5) {
                    let alpha = m as f64 / d as f64;
                    let exact = enumerate_subsets(d, m, d_hat);
                    assert!((hypergeom_p(alpha, d, d_hat) - exact).abs() < 1e-12);
                    assert!((hypergeom_p_floor(alpha, d, d_hat) - exact).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn real_and_floor_forms_bracket() {
        // with fractional αd the real form sits between the neighbouring integer counts
        let (d, d_hat) = (101, 9);
        let alpha = 0.5;
        let lo = hypergeom_p_floor(alpha, d, d_hat);
        let hi = hypergeom_p_floor(51.0 / 101.0, d, d_hat);
        let real = hypergeom_p(alpha, d, d_hat);
        assert!(lo <= real && real <= hi);
    }

    #[test]
    fn simple_bound_examples() {
        let p = success_prob_simple_parts(1.0, 1225, 9, 0.04, 0.1);
        assert!((p - 0.6f64.powi(9)).abs() < 1e-15);
        assert!((p - 0.010_077_696).abs() < 1e-9);
        let tiny_t = success_prob_simple_parts(0.7, 200, 9, 1e-12, 0.1);
        assert!((tiny_t - hypergeom_p(0.7, 200, 9)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_limits() {
        let hp = hypergeom_p(0.8, 300, 9);
        let near_zero = success_prob_gaussian_parts(0.8, 300, 9, 1e-7, 0.1).unwrap();
        assert!((near_zero - hp).abs() < 1e-4);
        let wide = folded_gaussian_cell_factor(0.02, 1e9).unwrap();
        assert!((wide - 1.0).abs() < 1e-6);
        let inf = folded_gaussian_cell_factor(0.02, f64::INFINITY).unwrap();
        assert!((inf - 1.0).abs() < 1e-9);
        assert!(success_prob_gaussian(&GuaranteeInputs {
            alpha: 1.0,
            d: 10,
            d_hat: 9,
            t: 0.1,
            c: 0.25,
            sigma: None,
            p0: 0.99,
        })
        .is_err());
    }

    #[test]
    fn quadrature_matches_closed_form() {
        for &(sigma, c) in &[(5.0 / 255.0, 0.0782), (0.01, 0.03), (0.1, 0.05), (0.02, 1.0)] {
            let q = folded_gaussian_cell_factor(sigma, c).unwrap();
            assert!((q - closed_form_factor(sigma, c)).abs() < 1e-10, "{sigma} {c}");
        }
    }

    #[test]
    fn overall_and_iterations_examples() {
        assert!((overall_success(0.01, 512) - (1.0 - 0.99f64.powi(512))).abs() < 1e-12);
        assert!((overall_success(0.01, 512) - 0.99418).abs() < 1e-4);
        assert_eq!(overall_success(0.3, 0), 0.0);
        assert_eq!(overall_success(1.0, 1), 1.0);
        assert_eq!(required_iterations(0.05, 0.99, DEFAULT_K_MAX), 90);
        assert_eq!(required_iterations(0.5, 0.5, DEFAULT_K_MAX), 1);
        assert_eq!(required_iterations(1e-15, 0.99, 1234), 1234);
        assert_eq!(required_iterations(0.0, 0.99, 1234), 1234);
    }

    proptest! {
        #[test]
        fn required_iterations_inverts_overall(p in 1e-6..0.999f64, p0 in 0.01..0.9999f64) {
            let k = required_iterations(p, p0, u64::MAX);
            prop_assert!(overall_success(p, k) >= p0 - 1e-9);
            if k > 1 {
                prop_assert!(overall_success(p, k - 1) < p0 + 1e-9);
            }
        }

        #[test]
        fn hypergeom_monotone(d in 10usize..200, d_hat in 1usize..10, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(hypergeom_p(lo, d, d_hat) <= hypergeom_p(hi, d, d_hat) + 1e-15);
            prop_assert!(hypergeom_p(hi, d, d_hat + 1) <= hypergeom_p(hi, d, d_hat) + 1e-15);
        }

        #[test]
        fn bounds_are_probabilities_and_monotone(
            a in 0.05..1.0f64, b in 0.05..1.0f64,
            sigma in 0.002..0.1f64, t in 0.005..0.1f64, k1 in 1.05..5.0f64, k2 in 1.05..5.0f64,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (c1, c2) = if k1 < k2 { (k1 * t, k2 * t) } else { (k2 * t, k1 * t) };
            let d = 150;
            for (x, y) in [
                (success_prob_simple_parts(lo, d, 9, t, c1), success_prob_simple_parts(hi, d, 9, t, c1)),
                (success_prob_simple_parts(hi, d, 9, t, c1), success_prob_simple_parts(hi, d, 9, t, c2)),
                (
                    success_prob_gaussian_parts(lo, d, 9, sigma, c1).unwrap(),
                    success_prob_gaussian_parts(hi, d, 9, sigma, c1).unwrap(),
                ),
                (
                    success_prob_gaussian_parts(hi, d, 9, sigma, c1).unwrap(),
                    success_prob_gaussian_parts(hi, d, 9, sigma, c2).unwrap(),
                ),
            ] {
                prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
                prop_assert!(x <= y + 1e-12);
            }
            prop_assert!(success_prob_gaussian_parts(hi, d, 9, sigma, c1).unwrap() <= hypergeom_p(hi, d, 9) + 1e-15);
        }

        #[test]
        fn overall_monotone(p in 0.0..1.0f64, q in 0.0..1.0f64, k in 0u64..5000, j in 0u64..5000) {
            let (pl, ph) = if p < q { (p, q) } else { (q, p) };
            let (kl, kh) = if k < j { (k, j) } else { (j, k) };
            prop_assert!(overall_success(pl, kl) <= overall_success(ph, kl) + 1e-15);
            prop_assert!(overall_success(pl, kl) <= overall_success(pl, kh) + 1e-15);
        }
    }

    #[test]
    fn doubling_intervals_is_stable() {
        let sigma = 5.0 / 255.0;
        let c = 2.5 * 2.0 * sigma * (2.0 / std::f64::consts::PI).sqrt();
        let norm = std::f64::consts::SQRT_2 / (sigma * std::f64::consts::PI.sqrt());
        let f = |x: f64| (1.0 - x / c) * norm * (-x * x / (2.0 * sigma * sigma)).exp();
        let a = simpson(&f, c, 4096);
        let b = simpson(&f, c, 8192);
        assert!((a - b).abs() < 1e-10);
    }
}
