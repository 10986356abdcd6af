//! One round of random-grid consensus hashing between the vector sets `U` and `V`.
//!
//! A round picks `d̂` coordinates at random, lays a randomly shifted grid of
//! cell side `c` over those coordinates, and inspects every `(u, v)` pair
//! that falls in the same cell, scoring it by the number of coordinates
//! (out of all `d`) that agree within `t`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::VectorSet;
use crate::error::{Error, Result};

pub const DEFAULT_D_HAT: usize = 9;
pub const DEFAULT_CELL_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashParams {
    /// Number of sampled coordinates per round.
    pub d_hat: usize,
    /// Grid cell side `c`.
    pub cell: f64,
    /// Inlier threshold `t`.
    pub threshold: f64,
    pub seed: u64,
    /// Per-bucket cap on inspected pairs; `None` inspects all of them.
    pub max_bucket_pairs: Option<usize>,
}

impl HashParams {
    /// Defaults for threshold `t`: `d̂ = 9`, `c = 2.5 t`.
    pub fn new(threshold: f64, seed: u64) -> Self {
        Self {
            d_hat: DEFAULT_D_HAT,
            cell: DEFAULT_CELL_FACTOR * threshold,
            threshold,
            seed,
            max_bucket_pairs: None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.d_hat == 0 || self.d_hat > d {
            return Err(Error::contract(format!(
                "sample dimension {} must lie in [1, {d}]",
                self.d_hat
            )));
        }
        if !(self.threshold > 0.0 && self.cell > self.threshold && self.cell.is_finite()) {
            return Err(Error::contract(format!(
                "need cell > threshold > 0, got cell {} threshold {}",
                self.cell, self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundResult {
    pub u_index: usize,
    pub v_index: usize,
    /// Inlier coordinates over the full dimension `d`.
    pub inlier_count: usize,
    pub pairs_examined: u64,
    /// Some bucket hit `max_bucket_pairs`.
    pub truncated: bool,
}

/// Number of coordinates with `|u(i) - v(i)| <= t`.
pub fn count_inliers(u: &[f64], v: &[f64], t: f64) -> Result<usize> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(count_inliers_unchecked(u, v, t))
}

#[inline]
pub(crate) fn count_inliers_unchecked(u: &[f64], v: &[f64], t: f64) -> usize {
    u.iter()
        .zip(v)
        .map(|(a, b)| usize::from((a - b).abs() <= t))
        .sum()
}

/// `floor(x)` for finite `|x| < 2^53`; avoids the libm call on baseline x86-64.
#[inline]
fn floor_i64(x: f64) -> i64 {
    let t = x as i64;
    t - i64::from((t as f64) > x)
}

/// Random choices of one round, drawn from the stream `(seed, round_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDraw {
    pub dims: Vec<usize>,
    pub offsets: Vec<f64>,
    pub multipliers: Vec<u64>,
}

impl RoundDraw {
    pub fn new(d: usize, params: &HashParams, round_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(round_index);
        let dims = index::sample(&mut rng, d, params.d_hat).into_vec();
        let offsets = (0..params.d_hat)
            .map(|_| rng.random_range(0.0..=params.cell))
            .collect();
        let multipliers = (0..params.d_hat).map(|_| rng.random::<u64>() | 1).collect();
        Self {
            dims,
            offsets,
            multipliers,
        }
    }

    /// Hash of the cell holding each row of `vs`.
    fn cell_hashes(&self, vs: &VectorSet, cell: f64, hashes: &mut [u64]) {
        let inv = 1.0 / cell;
        hashes.fill(0);
        for ((&dim, &o), &m) in self.dims.iter().zip(&self.offsets).zip(&self.multipliers) {
            for (&x, h) in vs.column(dim).iter().zip(hashes.iter_mut()) {
                let key = floor_i64((x + o) * inv);
                *h = h.wrapping_add((key as u64).wrapping_mul(m));
            }
        }
        for h in hashes.iter_mut() {
            *h ^= *h >> 29;
        }
    }

    /// Full-key comparison: true when both rows fall in the same cell.
    fn same_cell(&self, a: &[f64], b: &[f64], cell: f64) -> bool {
        let inv = 1.0 / cell;
        self.dims
            .iter()
            .zip(&self.offsets)
            .all(|(&dim, &o)| floor_i64((a[dim] + o) * inv) == floor_i64((b[dim] + o) * inv))
    }
}

/// Runs one hashing round; `None` when no `(u, v)` pair shares a cell.
pub fn hash_round(u: &VectorSet, v: &VectorSet, params: &HashParams, round_index: u64) -> Result<Option<RoundResult>> {
    if u.d() != v.d() {
        return Err(Error::contract(format!(
            "U and V dimensions differ: {} vs {}",
            u.d(),
            v.d()
        )));
    }
    if u.is_empty() || v.is_empty() {
        return Err(Error::contract("U and V must be nonempty"));
    }
    params.validate(u.d())?;
    Ok(hash_round_unchecked(u, v, params, round_index))
}

pub(crate) fn hash_round_unchecked(u: &VectorSet, v: &VectorSet, params: &HashParams, round_index: u64) -> Option<RoundResult> {
    let draw = RoundDraw::new(u.d(), params, round_index);
    let nu = u.len();
    let n = nu + v.len();
    let table_size = n.next_power_of_two();
    let mask = (table_size - 1) as u64;

    let mut hashes = vec![0u64; n];
    let (hu, hv) = hashes.split_at_mut(nu);
    draw.cell_hashes(u, params.cell, hu);
    draw.cell_hashes(v, params.cell, hv);
    let slots: Vec<usize> = hashes.iter().map(|&h| (h & mask) as usize).collect();

    // counting sort of entries by slot
    let mut start = vec![0usize; table_size + 1];
    for &s in &slots {
        start[s + 1] += 1;
    }
    for i in 0..table_size {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut order = vec![0usize; n];
    for (i, &s) in slots.iter().enumerate() {
        order[fill[s]] = i;
        fill[s] += 1;
    }

    let mut best: Option<(usize, usize, usize)> = None;
    let mut pairs_examined = 0u64;
    let mut truncated = false;
    for s in 0..table_size {
        let bucket = &order[start[s]..start[s + 1]];
        if bucket.len() < 2 {
            continue;
        }
        // entries were inserted in index order, so U entries come first
        let split = bucket.partition_point(|&e| e < nu);
        let (us, vs) = bucket.split_at(split);
        if us.is_empty() || vs.is_empty() {
            continue;
        }
        let mut in_bucket = 0usize;
        'pairs: for &ue in us {
            for &ve in vs {
                if hashes[ue] != hashes[ve] || !draw.same_cell(u.row(ue), v.row(ve - nu), params.cell) {
                    continue;
                }
                if params.max_bucket_pairs.is_some_and(|cap| in_bucket >= cap) {
                    truncated = true;
                    break 'pairs;
                }
                in_bucket += 1;
                pairs_examined += 1;
                let vi = ve - nu;
                let count = count_inliers_unchecked(u.row(ue), v.row(vi), params.threshold);
                let better = match best {
                    None => true,
                    Some((bu, bv, bc)) => count > bc || (count == bc && (ue, vi) < (bu, bv)),
                };
                if better {
                    best = Some((ue, vi, count));
                }
            }
        }
    }
    best.map(|(u_index, v_index, inlier_count)| RoundResult {
        u_index,
        v_index,
        inlier_count,
        pairs_examined,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::success_prob_simple_parts;
    use crate::decomposition::VectorSource;
    use crate::transform::Transform;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(rows: &[Vec<f64>], source: VectorSource) -> VectorSet {
        VectorSet::new(
            rows[0].len(),
            rows.concat(),
            vec![Transform::IDENTITY; rows.len()],
            source,
        )
        .unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    #[test]
    fn count_inliers_examples() {
        assert_eq!(count_inliers(&[0.1, 0.5, 0.9], &[0.1, 0.6, 0.5], 0.11).unwrap(), 2);
        let u = [0.3, 0.7, 0.2, 0.9];
        assert_eq!(count_inliers(&u, &u, 0.0).unwrap(), 4);
        assert!(count_inliers(&[0.1], &[0.1, 0.2], 0.1).is_err());
    }

    #[test]
    fn identical_rows_always_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 50;
        let us = random_rows(&mut rng, 30, d);
        let mut vs = random_rows(&mut rng, 40, d);
        vs[17] = us[4].clone();
        let (u, v) = (set(&us, VectorSource::TemplateSide), set(&vs, VectorSource::ImageSide));
        let params = HashParams::new(0.02, 99);
        for round in 0..200 {
            let r = hash_round(&u, &v, &params, round).unwrap().expect("identical pair collides");
            assert_eq!((r.u_index, r.v_index, r.inlier_count), (4, 17, d));
        }
    }

    #[test]
    fn far_apart_rows_never_collide() {
        let params = HashParams::new(0.02, 5);
        let c = params.cell;
        let u = set(&[vec![0.1; 12]], VectorSource::TemplateSide);
        let v = set(&[vec![0.1 + 2.0 * c; 12]], VectorSource::ImageSide);
        for round in 0..500 {
            assert_eq!(hash_round(&u, &v, &params, round).unwrap(), None);
        }
    }

    #[test]
    fn contract_violations() {
        let u = set(&[vec![0.1; 5]], VectorSource::TemplateSide);
        let v = set(&[vec![0.1; 6]], VectorSource::ImageSide);
        assert!(hash_round(&u, &v, &HashParams::new(0.02, 0), 0).is_err());
        let v = set(&[vec![0.1; 5]], VectorSource::ImageSide);
        let mut p = HashParams::new(0.02, 0);
        p.d_hat = 6;
        assert!(hash_round(&u, &v, &p, 0).is_err());
        p.d_hat = 3;
        p.cell = 0.01;
        assert!(hash_round(&u, &v, &p, 0).is_err());
    }

    #[test]
    fn ties_break_on_smallest_indices() {
        let row = vec![0.5; 10];
        let u = set(&[row.clone(), row.clone()], VectorSource::TemplateSide);
        let v = set(&[row.clone(), row.clone(), row], VectorSource::ImageSide);
        let r = hash_round(&u, &v, &HashParams::new(0.02, 3), 7).unwrap().unwrap();
        assert_eq!((r.u_index, r.v_index), (0, 0));
        assert_eq!(r.pairs_examined, 6);
    }

    #[test]
    fn bucket_cap_truncates() {
        let row = vec![0.5; 10];
        let u = set(&[row.clone(), row.clone()], VectorSource::TemplateSide);
        let v = set(&[row.clone(), row.clone(), row], VectorSource::ImageSide);
        let mut p = HashParams::new(0.02, 3);
        p.max_bucket_pairs = Some(2);
        let r = hash_round(&u, &v, &p, 7).unwrap().unwrap();
        assert!(r.truncated);
        assert_eq!(r.pairs_examined, 2);
    }

    /// Planted pair with exactly `m` of `d` coordinates differing by `t`
    /// and the rest by more than `c`: collision frequency vs. the lower bound.
    #[test]
    fn planted_pair_collision_rate_meets_bound() {
        let (d, m, d_hat) = (40usize, 30usize, 4usize);
        let t = 0.02;
        let mut params = HashParams::new(t, 2024);
        params.d_hat = d_hat;
        let c = params.cell;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u_row: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..0.5)).collect();
        let v_row: Vec<f64> = u_row
            .iter()
            .enumerate()
            .map(|(i, x)| if i < m { x + t } else { x + 1.5 * c })
            .collect();
        let u = set(&[u_row], VectorSource::TemplateSide);
        let v = set(&[v_row], VectorSource::ImageSide);
        let rounds = 10_000u64;
        let hits = (0..rounds)
            .filter(|&r| hash_round(&u, &v, &params, r).unwrap().is_some())
            .count() as f64;
        let bound = success_prob_simple_parts(m as f64 / d as f64, d, d_hat, t, c);
        let se = (bound * (1.0 - bound) / rounds as f64).sqrt();
        assert!(hits / rounds as f64 >= bound - 3.0 * se, "rate {} bound {bound}", hits / rounds as f64);
    }

    proptest! {
        #[test]
        fn count_matches_naive_loop(
            pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..64),
            t in 0.0..0.5f64,
        ) {
            let (u, v): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut naive = 0;
            for i in 0..u.len() {
                if (u[i] - v[i]).abs() <= t {
                    naive += 1;
                }
            }
            prop_assert_eq!(count_inliers(&u, &v, t).unwrap(), naive);
        }

        #[test]
        fn rounds_are_deterministic_and_consistent(seed in any::<u64>(), round in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let us = random_rows(&mut rng, 20, 16);
            let mut vs = random_rows(&mut rng, 25, 16);
            vs[3] = us[2].iter().map(|x| x + 0.001).collect();
            let (u, v) = (set(&us, VectorSource::TemplateSide), set(&vs, VectorSource::ImageSide));
            let mut params = HashParams::new(0.05, seed);
            params.d_hat = 3;
            let a = hash_round(&u, &v, &params, round).unwrap();
            let b = hash_round(&u, &v, &params, round).unwrap();
            prop_assert_eq!(a, b);
            if let Some(r) = a {
                let recount = count_inliers(u.row(r.u_index), v.row(r.v_index), 0.05).unwrap();
                prop_assert_eq!(r.inlier_count, recount);
            }
        }
    }
}
