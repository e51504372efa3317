//! Command-line front end: phantoms, degradation, direction estimation,
//! restoration, metrics, self-checks and λ sweeps.
//!
//! Exit codes: 0 success, 1 runtime or IO failure, 2 usage error,
//! 3 solver did not converge (outputs are still written).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dtgv::direction::{estimate_main_direction, EstimatorConfig};
use dtgv::forward::{add_noise, phantom, ForwardOperator, NoiseConvention, NoiseSpec, PhantomKind, PhantomParams};
use dtgv::grid::psnr;
use dtgv::regularizers::{RegKind, RegWeights, RegularizerSpec};
use dtgv::solver::{solve, Solution, SolveOptions, SolverConfig};
use dtgv::{par, DirectionParams, ImageGrid};

pub mod check;
pub mod imageio;

use imageio::{read_image, write_image, WriteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DTGV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dtgv", version, about = "Directional TGV image restoration")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = THREADS_ENV, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic test image.
    Phantom(PhantomArgs),
    /// Apply blur and additive Gaussian noise.
    Degrade(DegradeArgs),
    /// Print the dominant texture direction in degrees.
    EstimateDirection(EstimateArgs),
    /// Restore an image with TV, DTV, TGV or DTGV regularization.
    Restore(RestoreArgs),
    /// Print the PSNR of an image against a reference.
    Psnr(PsnrArgs),
    /// Run the operator adjointness and invariant self-checks.
    Check(check::CheckArgs),
    /// Restore over a grid of λ values and write PSNR per λ as CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum KindArg {
    Stripes,
    #[value(alias = "affine-stripes")]
    AffineStripes,
    #[value(alias = "dark-band-stripes")]
    DarkBandStripes,
    Ellipse,
}

impl From<KindArg> for PhantomKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Stripes => Self::Stripes,
            KindArg::AffineStripes => Self::AffineStripes,
            KindArg::DarkBandStripes => Self::DarkBandStripes,
            KindArg::Ellipse => Self::Ellipse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    Tv,
    Dtv,
    #[value(alias = "tgv2")]
    Tgv,
    #[value(alias = "dtgv2")]
    Dtgv,
}

impl From<RegArg> for RegKind {
    fn from(r: RegArg) -> Self {
        match r {
            RegArg::Tv => Self::Tv,
            RegArg::Dtv => Self::Dtv,
            RegArg::Tgv => Self::Tgv2,
            RegArg::Dtgv => Self::Dtgv2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    /// σ = level · (max − min) of the clean image.
    #[value(alias = "range_relative")]
    Range,
    /// σ = level · ‖u‖ / √N.
    #[value(alias = "norm_relative")]
    Norm,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Bit depth of written images (8 or 16).
    #[arg(long, default_value_t = 8, value_parser = parse_bits)]
    pub bits: u8,
    /// Write plain-text P2 instead of binary P5.
    #[arg(long)]
    pub ascii: bool,
}

fn parse_bits(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err(format!("bit depth must be 8 or 16, got '{s}'")),
    }
}

impl OutputArgs {
    fn options(&self) -> WriteOptions {
        WriteOptions {
            bits: self.bits,
            ascii: self.ascii,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Texture direction in degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub angle: f64,
    /// Stripe period in pixels.
    #[arg(long, default_value_t = 32.0)]
    pub period: f64,
    /// Dark band width fraction or ellipse axis ratio.
    #[arg(long)]
    pub extra: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DegradeArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Standard deviation of the Gaussian blur; no blur when absent.
    #[arg(long)]
    pub blur: Option<f64>,
    /// Relative noise level, e.g. 0.1 for 10%.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = ConventionArg::Range)]
    pub noise_convention: ConventionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// Pre-smoothing blur of the direction estimator.
    #[arg(long = "est-sigma", default_value_t = 10.0)]
    pub sigma: f64,
    /// Smoothness weight of the angle smoother.
    #[arg(long = "est-mu", default_value_t = 100.0)]
    pub mu: f64,
    #[arg(long = "est-floor", default_value_t = 1e-3)]
    pub floor: f64,
    /// Masked border width in multiples of the estimator sigma.
    #[arg(long = "est-border", default_value_t = 2.0)]
    pub border: f64,
    /// Weight the angle smoother with the unsmoothed gradient.
    #[arg(long)]
    pub unsmoothed_weights: bool,
    /// Follow the estimator's literal formulas (absolute floor, no border
    /// mask, arithmetic mean, cross-term final rule).
    #[arg(long)]
    pub strict_paper: bool,
}

impl EstimatorArgs {
    pub fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            smooth_sigma: self.sigma,
            smooth_mu: self.mu,
            gradient_floor: self.floor,
            unsmoothed_weights: self.unsmoothed_weights,
            border_sigmas: self.border,
            strict_paper: self.strict_paper,
            ..EstimatorConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Also print confidence and spread.
    #[arg(long)]
    pub verbose: bool,
    #[command(flatten)]
    pub est: EstimatorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub reg: RegArg,
    /// λ₀/λ₁ for the second-order models.
    #[arg(long, default_value_t = 2.0)]
    pub ratio: f64,
    /// Anisotropy 0 < a ≤ 1 of the directional models.
    #[arg(long, default_value_t = 0.15)]
    pub a: f64,
    /// Direction in degrees, or `auto` to estimate it from the input.
    #[arg(long, default_value = "auto", allow_negative_numbers = true)]
    pub theta: String,
    /// Standard deviation of the Gaussian blur in the forward model.
    #[arg(long)]
    pub blur: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iter: usize,
    /// Consecutive iterations below `tol` needed to stop.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub est: EstimatorArgs,
}

impl ModelArgs {
    fn forward(&self) -> Result<ForwardOperator> {
        Ok(match self.blur {
            Some(s) => ForwardOperator::gaussian_blur(s)?,
            None => ForwardOperator::Identity,
        })
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            patience: self.patience,
            lipschitz_seed: self.seed,
            ..SolverConfig::default()
        }
    }

    /// Resolved direction in radians; isotropic models ignore it.
    fn direction(&self, f: &ImageGrid) -> Result<DirectionParams> {
        let kind = RegKind::from(self.reg);
        if !kind.is_directional() {
            return Ok(DirectionParams::isotropic());
        }
        let theta = if self.theta.eq_ignore_ascii_case("auto") {
            estimate_main_direction(f, &self.est.config())?.theta
        } else {
            let deg: f64 = self
                .theta
                .parse()
                .with_context(|| format!("bad --theta '{}'", self.theta))?;
            deg.to_radians()
        };
        Ok(DirectionParams::new(theta, self.a)?)
    }

    fn spec(&self, lambda1: f64, dir: DirectionParams) -> Result<RegularizerSpec> {
        let weights = RegWeights::with_ratio(lambda1, self.ratio)?;
        Ok(RegularizerSpec::new(self.reg.into(), weights, dir))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub lambda1: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Ground truth; adds a PSNR column to the log.
    #[arg(short, long)]
    pub reference: Option<PathBuf>,
    /// Per-iteration CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Clamp the result to [0, 1] before writing.
    #[arg(long)]
    pub clamp: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PsnrArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub reference: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Explicit comma-separated λ₁ values.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Geometric grid: smallest λ₁.
    #[arg(long, default_value_t = 0.02)]
    pub lambda_min: f64,
    /// Geometric grid: largest λ₁.
    #[arg(long, default_value_t = 1.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Write the best restoration here.
    #[arg(long)]
    pub best_output: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// `n` geometrically spaced values from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    ensure!(
        lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite(),
        "need 0 < lambda_min <= lambda_max"
    );
    ensure!(n >= 1, "need at least one grid point");
    if n == 1 {
        return Ok(vec![lo]);
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n)
        .map(|k| if k == n - 1 { hi } else { lo * (r * k as f64).exp() })
        .collect())
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Done,
    NotConverged,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return EXIT_FAILURE;
    }
    match execute(&cli.command) {
        Ok(Status::Done) => EXIT_OK,
        Ok(Status::NotConverged) => {
            eprintln!("warning: solver stopped at max_iter before reaching the tolerance");
            EXIT_NOT_CONVERGED
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) -> Result<()> {
    if n > 0 {
        // A pool configured earlier in the same process wins; that only
        // happens when `run` is called repeatedly, e.g. from tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_n: usize) -> Result<()> {
    Ok(())
}

fn execute(cmd: &Command) -> Result<Status> {
    match cmd {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Degrade(a) => cmd_degrade(a),
        Command::EstimateDirection(a) => cmd_estimate(a),
        Command::Restore(a) => cmd_restore(a),
        Command::Psnr(a) => cmd_psnr(a),
        Command::Check(a) => check::run(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn cmd_phantom(a: &PhantomArgs) -> Result<Status> {
    let params = PhantomParams {
        angle: a.angle.to_radians(),
        period: a.period,
        extra: a.extra,
    };
    let img = phantom(a.kind.into(), a.size, &params)?;
    write_image(&a.output, &img, a.out.options())?;
    Ok(Status::Done)
}

fn cmd_degrade(a: &DegradeArgs) -> Result<Status> {
    let u = read_image(&a.input)?;
    let op = match a.blur {
        Some(s) => ForwardOperator::gaussian_blur(s)?,
        None => ForwardOperator::Identity,
    };
    let blurred = op.apply(&u);
    let f = if a.noise > 0.0 {
        let spec = NoiseSpec {
            level: a.noise,
            seed: a.seed,
            convention: match a.noise_convention {
                ConventionArg::Range => NoiseConvention::RangeRelative,
                ConventionArg::Norm => NoiseConvention::NormRelative,
            },
        };
        add_noise(&blurred, &spec)?
    } else {
        blurred
    };
    write_image(&a.output, &f, a.out.options())?;
    Ok(Status::Done)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Status> {
    let f = read_image(&a.input)?;
    let est = estimate_main_direction(&f, &a.est.config())?;
    println!("{:.4}", est.theta.to_degrees());
    if a.verbose {
        println!("confidence {:.6e}", est.confidence);
        println!("spread {:.6}", est.spread);
        println!("circular_mean {}", est.circular_mean);
    }
    Ok(Status::Done)
}

fn status_of(sol: &Solution) -> Status {
    if sol.converged {
        Status::Done
    } else {
        Status::NotConverged
    }
}

fn cmd_restore(a: &RestoreArgs) -> Result<Status> {
    let f = read_image(&a.input)?;
    let reference = a.reference.as_deref().map(read_image).transpose()?;
    let dir = a.model.direction(&f)?;
    let spec = a.model.spec(a.lambda1, dir)?;
    let opts = SolveOptions {
        init: None,
        reference: reference.as_ref(),
    };
    let sol = solve(&f, &a.model.forward()?, &spec, &a.model.solver(), opts)?;
    let u = if a.clamp {
        sol.u.clamped(0.0, 1.0)
    } else {
        sol.u.clone()
    };
    write_image(&a.output, &u, a.out.options())?;
    if let Some(log) = &a.log {
        write_text(log, &sol.log.to_csv())?;
    }
    Ok(status_of(&sol))
}

fn format_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".to_string()
    } else {
        format!("{p:.4}")
    }
}

fn cmd_psnr(a: &PsnrArgs) -> Result<Status> {
    let u = read_image(&a.input)?;
    let r = read_image(&a.reference)?;
    println!("{}", format_psnr(psnr(&u, &r, a.peak)?));
    Ok(Status::Done)
}

/// One restored point of a λ sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda1: f64,
    pub psnr: f64,
    pub iters: usize,
    pub energy: f64,
    pub converged: bool,
}

/// Everything of a restoration problem except λ₁.
#[derive(Debug, Clone)]
pub struct SweepProblem<'a> {
    pub f: &'a ImageGrid,
    pub reference: &'a ImageGrid,
    pub op: &'a ForwardOperator,
    pub kind: RegKind,
    /// λ₀/λ₁.
    pub ratio: f64,
    pub dir: DirectionParams,
    pub cfg: &'a SolverConfig,
}

/// Restores for every λ in `lambdas` (concurrently when built with the
/// parallel feature) and returns rows in the order of `lambdas` together
/// with the best restoration.
pub fn sweep(p: &SweepProblem<'_>, lambdas: &[f64]) -> Result<(Vec<SweepRow>, ImageGrid)> {
    ensure!(!lambdas.is_empty(), "empty lambda grid");
    let results = par::map_ordered(lambdas, |&l| -> Result<(SweepRow, ImageGrid)> {
        let spec = RegularizerSpec::new(p.kind, RegWeights::with_ratio(l, p.ratio)?, p.dir);
        let sol = solve(p.f, p.op, &spec, p.cfg, SolveOptions::default())?;
        let row = SweepRow {
            lambda1: l,
            psnr: psnr(&sol.u, p.reference, 1.0)?,
            iters: sol.iterations(),
            energy: sol.energy(),
            converged: sol.converged,
        };
        Ok((row, sol.u))
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut best: Option<(f64, ImageGrid)> = None;
    for r in results {
        let (row, u) = r?;
        if best.as_ref().is_none_or(|(p, _)| row.psnr > *p) {
            best = Some((row.psnr, u));
        }
        rows.push(row);
    }
    Ok((rows, best.map(|b| b.1).expect("non-empty grid")))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda1,psnr,iters,energy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e}", r.lambda1, format_psnr(r.psnr), r.iters, r.energy);
    }
    out
}

fn cmd_sweep(a: &SweepArgs) -> Result<Status> {
    let f = read_image(&a.input)?;
    let reference = read_image(&a.reference)?;
    let lambdas = match &a.lambdas {
        Some(l) => {
            ensure!(l.iter().all(|x| *x > 0.0 && x.is_finite()), "lambdas must be positive");
            l.clone()
        }
        None => geometric_grid(a.lambda_min, a.lambda_max, a.points)?,
    };
    let dir = a.model.direction(&f)?;
    let op = a.model.forward()?;
    let cfg = a.model.solver();
    let problem = SweepProblem {
        f: &f,
        reference: &reference,
        op: &op,
        kind: a.model.reg.into(),
        ratio: a.model.ratio,
        dir,
        cfg: &cfg,
    };
    let (rows, best) = sweep(&problem, &lambdas)?;
    let csv = sweep_csv(&rows);
    match &a.output {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &a.best_output {
        write_image(p, &best, a.out.options())?;
    }
    Ok(if rows.iter().all(|r| r.converged) {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(0.02, 1.0, 10).unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.02);
        assert_eq!(g[9], 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(geometric_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["dtgv", "restore", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["dtgv"]), EXIT_USAGE);
        assert_eq!(run(["dtgv", "phantom", "--kind", "nope", "-o", "x.pgm"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_exits_with_one() {
        assert_eq!(
            run(["dtgv", "psnr", "-i", "/nonexistent/a.pgm", "-r", "/nonexistent/b.pgm"]),
            EXIT_FAILURE
        );
    }

    #[test]
    fn csv_layout() {
        let rows = [SweepRow {
            lambda1: 0.05,
            psnr: 30.25,
            iters: 12,
            energy: 1.5,
            converged: true,
        }];
        assert_eq!(sweep_csv(&rows), "lambda1,psnr,iters,energy\n0.05,30.2500,12,1.5e0\n");
    }
}
