//! Experiment runners: guarantee validation, scalability, and occlusion sweep.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::center_error_pct;
use super::report::{ExperimentReport, ReportRow};
use super::synth::{add_block_occlusion, derive_seed, gen_planted_translation};
use super::texture::{synth_texture, TextureParams};
use crate::analysis::{overall_success, success_prob_gaussian_parts};
use crate::decomposition::{Decomposition, SpaceSpec};
use crate::error::{Error, Result};
use crate::matcher::{match_template, prepare, run_rounds, MatchConfig};

/// Noise level of the synthetic protocols: 5 greylevels.
pub const PROTOCOL_SIGMA: f64 = 5.0 / 255.0;

// Stream tags keeping the seeds of different experiments apart.
const TAG_VALIDATION: u64 = 1;
const TAG_SCALABILITY: u64 = 2;
const TAG_OCCLUSION: u64 = 3;
const TAG_SOURCE: u64 = 10;
const TAG_INSTANCE: u64 = 11;
const TAG_MATCH: u64 = 12;
const TAG_BLOCKS: u64 = 13;

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares; `None` with fewer than two distinct abscissae.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(LinearFit { slope, intercept, r2 })
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub trials: usize,
    pub alphas: Vec<f64>,
    pub ks: Vec<u64>,
    pub template_side: usize,
    pub image_side: usize,
    pub sigma: f64,
    pub seed: u64,
    pub texture: TextureParams,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            alphas: vec![0.5, 0.75, 1.0],
            ks: vec![8, 64, 512],
            template_side: 50,
            image_side: 250,
            sigma: PROTOCOL_SIGMA,
            seed: 1,
            texture: TextureParams::default(),
        }
    }
}

impl ValidationConfig {
    /// 100x100 templates in 500x500 images, 200 trials, inlier rates 0.3 to 1.
    pub fn full_scale() -> Self {
        Self {
            trials: 200,
            alphas: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            template_side: 100,
            image_side: 500,
            ..Self::default()
        }
    }
}

/// Success frequency of exact placement recovery with a forced number of
/// rounds, next to the guaranteed lower bound for that round count.
pub fn run_guarantee_validation(cfg: &ValidationConfig) -> Result<ExperimentReport> {
    require(cfg.trials > 0, "trial count must be positive")?;
    require(!cfg.alphas.is_empty() && !cfg.ks.is_empty(), "alphas and ks must be nonempty")?;
    require(cfg.alphas.iter().all(|a| *a > 0.0 && *a <= 1.0), "alphas must lie in (0, 1]")?;
    require(cfg.ks.iter().all(|k| *k > 0), "ks must be positive")?;
    require(cfg.sigma > 0.0, "validation needs a positive noise level")?;
    let n_t = cfg.template_side;
    let space = SpaceSpec::translation((n_t, n_t), (cfg.image_side, cfg.image_side))?;
    let d = Decomposition::build(&space)?.d();
    let base = MatchConfig::new(space, 0).with_sigma(cfg.sigma);
    let cell = base.cell_factor * base.threshold;

    let mut report = ExperimentReport::new("guarantee_validation", "success_rate");
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let planted_alpha = ((alpha * (n_t * n_t) as f64) + 1e-9).floor() / (n_t * n_t) as f64;
        let p_round = success_prob_gaussian_parts(planted_alpha, d, base.d_hat, cfg.sigma, cell)?;
        for (ki, &k) in cfg.ks.iter().enumerate() {
            let start = Instant::now();
            let outcomes: Vec<bool> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| -> Result<bool> {
                    let tags = [TAG_VALIDATION, ai as u64, ki as u64, trial as u64];
                    let src = synth_texture(
                        cfg.image_side,
                        cfg.image_side,
                        derive_seed(cfg.seed, &[&tags[..], &[TAG_SOURCE]].concat()),
                        &cfg.texture,
                    );
                    let inst = gen_planted_translation(
                        &src,
                        n_t,
                        alpha,
                        cfg.sigma,
                        derive_seed(cfg.seed, &[&tags[..], &[TAG_INSTANCE]].concat()),
                    )?;
                    let mut mc = base;
                    mc.seed = derive_seed(cfg.seed, &[&tags[..], &[TAG_MATCH]].concat());
                    mc.fixed_rounds = Some(k);
                    let r = match_template(&inst.template, &inst.image, &mc)?;
                    Ok(r.transform == inst.truth)
                })
                .collect::<Result<_>>()?;
            let successes = outcomes.iter().filter(|&&s| s).count();
            let theory = overall_success(p_round, k);
            let se = (theory * (1.0 - theory) / cfg.trials as f64).sqrt();
            report.rows.push(ReportRow {
                params: params(&[("alpha", alpha), ("k", k as f64)]),
                empirical: successes as f64 / cfg.trials as f64,
                theoretical: Some(theory),
                trials: cfg.trials,
                metrics: params(&[("lower_bound_3se", theory - 3.0 * se), ("d", d as f64)]),
                timing: params(&[("wall_ms", start.elapsed().as_secs_f64() * 1e3)]),
            });
        }
    }
    report.notes.push(format!(
        "template {n_t}x{n_t} in {0}x{0}, sigma {1:.4}, d {d}, d_hat {2}",
        cfg.image_side, cfg.sigma, base.d_hat
    ));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityConfig {
    pub sides: Vec<usize>,
    pub template_side: usize,
    pub trials: usize,
    pub rounds: u64,
    pub sigma: f64,
    pub seed: u64,
    pub texture: TextureParams,
}

impl Default for ScalabilityConfig {
    fn default() -> Self {
        Self {
            sides: vec![128, 256, 512, 1024, 2048],
            template_side: 32,
            trials: 5,
            rounds: 64,
            sigma: PROTOCOL_SIGMA,
            seed: 1,
            texture: TextureParams::default(),
        }
    }
}

/// Runtime and machine-independent work per image side with a fixed round
/// count, with least-squares fits of both against `√N`.
///
/// Trials run one at a time so that wall times are not inflated by
/// concurrent trials.
pub fn run_scalability(cfg: &ScalabilityConfig) -> Result<ExperimentReport> {
    require(cfg.trials > 0 && cfg.rounds > 0, "trials and rounds must be positive")?;
    require(!cfg.sides.is_empty(), "at least one image side is required")?;
    require(cfg.sides.windows(2).all(|w| w[0] < w[1]), "image sides must be strictly ascending")?;
    require(cfg.sides[0] >= cfg.template_side, "image sides must fit the template")?;
    let n_t = cfg.template_side;

    let mut report = ExperimentReport::new("scalability", "work_units");
    let mut sqrt_ns = Vec::new();
    let mut works = Vec::new();
    let mut times = Vec::new();
    for (si, &side) in cfg.sides.iter().enumerate() {
        let space = SpaceSpec::translation((n_t, n_t), (side, side))?;
        let mut work = 0.0;
        let mut wall = 0.0;
        let mut found = 0usize;
        let mut shape = (0usize, 0usize, 0usize);
        for trial in 0..cfg.trials {
            let tags = [TAG_SCALABILITY, si as u64, trial as u64];
            let src = synth_texture(side, side, derive_seed(cfg.seed, &[&tags[..], &[TAG_SOURCE]].concat()), &cfg.texture);
            let inst = gen_planted_translation(
                &src,
                n_t,
                1.0,
                cfg.sigma,
                derive_seed(cfg.seed, &[&tags[..], &[TAG_INSTANCE]].concat()),
            )?;
            let mut mc = MatchConfig::new(space, derive_seed(cfg.seed, &[&tags[..], &[TAG_MATCH]].concat()));
            if cfg.sigma > 0.0 {
                mc = mc.with_sigma(cfg.sigma);
            }
            mc.fixed_rounds = Some(cfg.rounds);
            if si == 0 && trial == 0 {
                // warm-up: thread pool start and first-touch page faults
                match_template(&inst.template, &inst.image, &mc)?;
            }
            let start = Instant::now();
            let prepared = prepare(&inst.template, &inst.image, &mc)?;
            let r = run_rounds(&inst.template, &inst.image, &mc, &prepared);
            wall += start.elapsed().as_secs_f64() * 1e3;
            let d = prepared.decomposition.d() as u64;
            let build = (prepared.u.len() + prepared.v.len()) as u64 * d;
            work += (build + r.work_units(inst.template.len())) as f64;
            found += usize::from(r.transform == inst.truth);
            shape = (r.d, r.ball_size, r.net_size);
        }
        let n = space.placements().0 as f64 * space.placements().1 as f64;
        let trials = cfg.trials as f64;
        sqrt_ns.push(n.sqrt());
        works.push(work / trials);
        times.push(wall / trials);
        report.rows.push(ReportRow {
            params: params(&[("side", side as f64)]),
            empirical: work / trials,
            theoretical: None,
            trials: cfg.trials,
            metrics: params(&[
                ("n", n),
                ("sqrt_n", n.sqrt()),
                ("d", shape.0 as f64),
                ("ball", shape.1 as f64),
                ("net", shape.2 as f64),
                ("found_rate", found as f64 / trials),
            ]),
            timing: params(&[("wall_ms", wall / trials)]),
        });
    }
    match (linear_fit(&sqrt_ns, &works), linear_fit(&sqrt_ns, &times)) {
        (Some(wf), Some(tf)) => {
            for row in &mut report.rows {
                row.metrics.insert("work_fit_slope".into(), wf.slope);
                row.metrics.insert("work_fit_r2".into(), wf.r2);
                row.timing.insert("time_fit_slope_ms".into(), tf.slope);
                row.timing.insert("time_fit_r2".into(), tf.r2);
            }
            report.notes.push(format!("work vs sqrt(N): slope {:.3}, R^2 {:.4}", wf.slope, wf.r2));
        }
        _ => report.notes.push("fit undefined: fewer than two image sides".into()),
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub rates: Vec<f64>,
    pub trials: usize,
    pub template_side: usize,
    pub image_side: usize,
    pub block: usize,
    pub sigma: f64,
    pub seed: u64,
    pub k_max: u64,
    pub texture: TextureParams,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            rates: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            trials: 50,
            template_side: 32,
            image_side: 320,
            block: 4,
            sigma: PROTOCOL_SIGMA,
            seed: 1,
            k_max: crate::analysis::DEFAULT_K_MAX,
            texture: TextureParams::default(),
        }
    }
}

/// Median center-location error of adaptive matching under random block
/// occlusion, per inlier rate.
pub fn run_occlusion_sweep(cfg: &OcclusionConfig) -> Result<ExperimentReport> {
    require(cfg.trials > 0, "trial count must be positive")?;
    require(!cfg.rates.is_empty(), "at least one inlier rate is required")?;
    require(cfg.rates.iter().all(|r| *r > 0.0 && *r <= 1.0), "inlier rates must lie in (0, 1]")?;
    let n_t = cfg.template_side;
    let space = SpaceSpec::translation((n_t, n_t), (cfg.image_side, cfg.image_side))?;

    let mut report = ExperimentReport::new("occlusion_sweep", "median_center_error_pct");
    for (ri, &rate) in cfg.rates.iter().enumerate() {
        let start = Instant::now();
        let outcomes: Vec<(f64, f64, u64)> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64, u64)> {
                let tags = [TAG_OCCLUSION, ri as u64, trial as u64];
                let seed = |tag: u64| derive_seed(cfg.seed, &[&tags[..], &[tag]].concat());
                let src = synth_texture(cfg.image_side, cfg.image_side, seed(TAG_SOURCE), &cfg.texture);
                let clean = gen_planted_translation(&src, n_t, 1.0, cfg.sigma, seed(TAG_INSTANCE))?;
                let inst = add_block_occlusion(&clean, 1.0 - rate, cfg.block, seed(TAG_BLOCKS))?;
                let mut mc = MatchConfig::new(space, seed(TAG_MATCH));
                if cfg.sigma > 0.0 {
                    mc = mc.with_sigma(cfg.sigma);
                }
                mc.k_max = cfg.k_max;
                let r = match_template(&inst.template, &inst.image, &mc)?;
                let err = center_error_pct(&r.transform, &inst.truth, (n_t, n_t));
                Ok((err, inst.alpha, r.rounds_run))
            })
            .collect::<Result<_>>()?;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
        let trials = cfg.trials as f64;
        report.rows.push(ReportRow {
            params: params(&[("rate", rate)]),
            empirical: median(&errors),
            theoretical: None,
            trials: cfg.trials,
            metrics: params(&[
                ("mean_alpha", outcomes.iter().map(|o| o.1).sum::<f64>() / trials),
                ("mean_rounds", outcomes.iter().map(|o| o.2 as f64).sum::<f64>() / trials),
                ("exact_rate", errors.iter().filter(|&&e| e == 0.0).count() as f64 / trials),
            ]),
            timing: params(&[("wall_ms", start.elapsed().as_secs_f64() * 1e3)]),
        });
    }
    report.notes.push(format!(
        "template {n_t}x{n_t} in {0}x{0}, {1}x{1} blocks, sigma {2:.4}",
        cfg.image_side, cfg.block, cfg.sigma
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[2.0], &[1.0]).is_none());
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0]).is_none());
    }

    #[test]
    fn fit_r2_matches_correlation() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 4.5, 5.0, 8.5, 9.0];
        let f = linear_fit(&xs, &ys).unwrap();
        let n = 5.0;
        let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sxx: f64 = xs.iter().map(|a| a * a).sum();
        let syy: f64 = ys.iter().map(|a| a * a).sum();
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((f.r2 - r * r).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn validation_report_shape() {
        let cfg = ValidationConfig {
            trials: 10,
            alphas: vec![1.0],
            ks: vec![512],
            template_side: 20,
            image_side: 60,
            ..ValidationConfig::default()
        };
        let r = run_guarantee_validation(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        let row = &r.rows[0];
        assert_eq!(row.empirical, 1.0);
        assert!(row.empirical >= row.theoretical.unwrap());
        let again = run_guarantee_validation(&cfg).unwrap();
        assert_eq!(r.to_json(false), again.to_json(false));
    }

    #[test]
    fn validation_rows_cover_grid() {
        let cfg = ValidationConfig {
            trials: 2,
            alphas: vec![0.5, 1.0],
            ks: vec![4, 8, 16],
            template_side: 16,
            image_side: 40,
            ..ValidationConfig::default()
        };
        assert_eq!(run_guarantee_validation(&cfg).unwrap().rows.len(), 6);
        let bad = ValidationConfig { trials: 0, ..cfg };
        assert!(run_guarantee_validation(&bad).is_err());
    }

    #[test]
    fn single_side_fit_is_flagged() {
        let cfg = ScalabilityConfig {
            sides: vec![64],
            trials: 1,
            rounds: 4,
            ..ScalabilityConfig::default()
        };
        let r = run_scalability(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(!r.rows[0].metrics.contains_key("work_fit_slope"));
        assert!(r.notes[0].contains("undefined"));
    }

    #[test]
    fn doubling_side_roughly_quadruples_n() {
        let cfg = ScalabilityConfig {
            sides: vec![64, 128, 256],
            template_side: 8,
            trials: 1,
            rounds: 4,
            ..ScalabilityConfig::default()
        };
        let r = run_scalability(&cfg).unwrap();
        for w in r.rows.windows(2) {
            let ratio = w[1].metrics["n"] / w[0].metrics["n"];
            assert!((4.0..=4.6).contains(&ratio), "{ratio}");
        }
        assert!(r.rows[0].metrics.contains_key("work_fit_r2"));
        assert!(run_scalability(&ScalabilityConfig { sides: vec![128, 64], ..cfg }).is_err());
    }

    #[test]
    fn occlusion_full_rate_is_exact() {
        let cfg = OcclusionConfig {
            rates: vec![1.0],
            trials: 5,
            image_side: 96,
            ..OcclusionConfig::default()
        };
        let r = run_occlusion_sweep(&cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].empirical, 0.0);
        assert_eq!(r.rows[0].metrics["mean_alpha"], 1.0);
    }
}
