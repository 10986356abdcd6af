use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use occmatch::experiments::{
    run_guarantee_validation, run_occlusion_sweep, run_scalability, ExperimentReport, OcclusionConfig,
    ScalabilityConfig, ValidationConfig,
};
use occmatch::matcher::{match_template, MatchConfig};
use occmatch::{load_pgm, Error, SpaceSpec};

/// Occlusion-aware template matching.
///
/// Reports go to standard output and are byte-identical for identical flags;
/// wall-clock timings go to standard error.
#[derive(Debug, Parser)]
#[command(name = "occmatch", version)]
struct Cli {
    /// Cap on worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find a template in an image.
    Match(MatchArgs),
    /// Empirical versus guaranteed success rates on planted instances.
    Validate(ValidateArgs),
    /// Runtime and work as the image grows.
    Scalability(ScalabilityArgs),
    /// Center-location error under random block occlusion.
    Occlusion(OcclusionArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpaceArg {
    Translation,
    Affine,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    template: std::path::PathBuf,
    #[arg(long)]
    image: std::path::PathBuf,
    #[arg(long, value_enum, default_value = "translation")]
    space: SpaceArg,
    #[arg(long, default_value_t = 1.0)]
    scale_min: f64,
    #[arg(long, default_value_t = 1.0)]
    scale_max: f64,
    /// Radians.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rot_min: f64,
    /// Radians.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rot_max: f64,
    /// Inlier threshold in greylevels; defaults to 10 without --sigma.
    #[arg(long)]
    t: Option<u32>,
    /// Noise standard deviation in greylevels.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0.99)]
    p0: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 9)]
    dhat: usize,
    #[arg(long, default_value_t = 2.5)]
    cell_factor: f64,
    /// Standardize intensities to the template's mean and deviation.
    #[arg(long)]
    photometric: bool,
    #[arg(long, default_value_t = occmatch::analysis::DEFAULT_K_MAX)]
    kmax: u64,
    /// Print a flat `key value` listing instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Aligned-column text instead of JSON.
    #[arg(long)]
    text: bool,
    /// Also put wall-clock timings in the report (output is then not reproducible).
    #[arg(long)]
    with_timing: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<u64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Noise standard deviation in greylevels.
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    /// 100x100 templates in 500x500 images, 200 trials, rates 0.3 to 1.
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct ScalabilityArgs {
    #[arg(long, value_delimiter = ',')]
    sides: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Fixed number of hashing rounds per match.
    #[arg(long, default_value_t = 64)]
    rounds: u64,
    #[arg(long, default_value_t = 32)]
    template_side: usize,
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Debug, Args)]
struct OcclusionArgs {
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
    #[arg(long, default_value_t = occmatch::analysis::DEFAULT_K_MAX)]
    kmax: u64,
    #[command(flatten)]
    report: ReportArgs,
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_io() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn greylevels(v: f64) -> f64 {
    v / 255.0
}

fn run_match(a: &MatchArgs) -> Result<(), Error> {
    let template = load_pgm(&a.template)?;
    let image = load_pgm(&a.image)?;
    let tdims = (template.width(), template.height());
    let idims = (image.width(), image.height());
    let space = match a.space {
        SpaceArg::Translation => SpaceSpec::translation(tdims, idims)?,
        SpaceArg::Affine => SpaceSpec::affine(tdims, idims, (a.scale_min, a.scale_max), (a.rot_min, a.rot_max))?,
    };
    let mut cfg = MatchConfig::new(space, a.seed);
    if let Some(s) = a.sigma {
        if s > 0.0 {
            cfg = cfg.with_sigma(greylevels(s));
        }
    }
    if let Some(t) = a.t {
        cfg.threshold = greylevels(t as f64);
    }
    cfg.p0 = a.p0;
    cfg.d_hat = a.dhat;
    cfg.cell_factor = a.cell_factor;
    cfg.photometric_invariant = a.photometric;
    cfg.k_max = a.kmax;

    let start = Instant::now();
    let r = match_template(&template, &image, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let out = json!({
        "transform": r.transform,
        "inlier_rate": r.inlier_rate,
        "rounds_run": r.rounds_run,
        "round_found": r.round_found,
        "theoretical_success": r.theoretical_success,
        "seed": r.seed,
        "threshold": cfg.threshold,
        "d": r.d,
        "ball_size": r.ball_size,
        "net_size": r.net_size,
    });
    if a.text {
        for (k, v) in out.as_object().expect("object") {
            println!("{k} {v}");
        }
    } else {
        println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    }
    eprintln!("{}", json!({ "wall_ms": wall_ms }));
    Ok(())
}

fn emit(report: &ExperimentReport, args: &ReportArgs) {
    if args.text {
        print!("{}", report.to_text(args.with_timing));
    } else {
        println!("{}", report.to_json(args.with_timing));
    }
    eprintln!("{}", report.timing_json());
}

fn run_validate(a: &ValidateArgs) -> Result<(), Error> {
    let mut cfg = if a.full_scale {
        ValidationConfig::full_scale()
    } else {
        ValidationConfig::default()
    };
    if let Some(alphas) = &a.alphas {
        cfg.alphas = alphas.clone();
    }
    if let Some(ks) = &a.ks {
        cfg.ks = ks.clone();
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    cfg.sigma = greylevels(a.sigma);
    cfg.seed = a.report.seed;
    emit(&run_guarantee_validation(&cfg)?, &a.report);
    Ok(())
}

fn run_scalability_cmd(a: &ScalabilityArgs) -> Result<(), Error> {
    let mut cfg = ScalabilityConfig::default();
    if let Some(s) = &a.sides {
        cfg.sides = s.clone();
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    cfg.rounds = a.rounds;
    cfg.template_side = a.template_side;
    cfg.sigma = greylevels(a.sigma);
    cfg.seed = a.report.seed;
    emit(&run_scalability(&cfg)?, &a.report);
    Ok(())
}

fn run_occlusion(a: &OcclusionArgs) -> Result<(), Error> {
    let mut cfg = OcclusionConfig::default();
    if let Some(r) = &a.rates {
        cfg.rates = r.clone();
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    cfg.sigma = greylevels(a.sigma);
    cfg.k_max = a.kmax;
    cfg.seed = a.report.seed;
    emit(&run_occlusion_sweep(&cfg)?, &a.report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(3);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Match(a) => run_match(a),
        Command::Validate(a) => run_validate(a),
        Command::Scalability(a) => run_scalability_cmd(a),
        Command::Occlusion(a) => run_occlusion(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
