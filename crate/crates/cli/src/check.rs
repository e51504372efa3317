//! `dtgv check`: randomized adjointness and invariant checks of the
//! discrete operators, printed one line per check.

use anyhow::{bail, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dtgv::diffops::{ddiv_tensor, ddiv_vec, dgrad, div, grad, sym_dgrad};
use dtgv::forward::ForwardOperator;
use dtgv::grid::{inner_product, DirectionParams, Field, ImageGrid, SymTensorField, VectorField};
use dtgv::regularizers::{dtv_energy, tv_energy};

use crate::Status;

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Largest side length of the random grids.
    #[arg(long, default_value_t = 64)]
    pub max_size: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub worst: f64,
    pub passed: bool,
}

fn image(rng: &mut ChaCha8Rng, r: usize, c: usize) -> ImageGrid {
    ImageGrid::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn vector(rng: &mut ChaCha8Rng, r: usize, c: usize) -> VectorField {
    VectorField::from_fn(r, c, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
}

fn tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> SymTensorField {
    SymTensorField::from_fn(r, c, |_, _| {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]
    })
}

/// `|a − b| / max(|a|, |b|, tiny)`.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn norm<F: Field>(f: &F) -> f64 {
    inner_product(f, f).expect("same shape").sqrt()
}

/// `|⟨Kx, y⟩ − ⟨x, K*y⟩|` relative to the Cauchy–Schwarz bound
/// `max(‖Kx‖‖y‖, ‖x‖‖K*y‖)`. Normalizing by the inner products themselves
/// would blow up whenever they happen to nearly cancel.
fn adjoint_error<X: Field, Y: Field>(x: &X, kx: &Y, y: &Y, kty: &X) -> Result<f64> {
    let l = inner_product(kx, y)?;
    let r = inner_product(x, kty)?;
    let scale = (norm(kx) * norm(y)).max(norm(x) * norm(kty));
    Ok((l - r).abs() / scale.max(f64::MIN_POSITIVE))
}

/// Runs every check and returns the outcomes in a fixed order.
pub fn run_checks(args: &CheckArgs) -> Result<Vec<CheckOutcome>> {
    if args.max_size < 2 {
        bail!("--max-size must be at least 2");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst = [0.0f64; 5];
    for _ in 0..args.trials {
        let r = rng.random_range(2..=args.max_size);
        let c = rng.random_range(2..=args.max_size);
        let dir = DirectionParams::new(
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(0.05..=1.0),
        )?;
        let u = image(&mut rng, r, c);
        let p = vector(&mut rng, r, c);
        let v = vector(&mut rng, r, c);
        let w = tensor(&mut rng, r, c);

        worst[0] = worst[0].max(adjoint_error(&u, &grad(&u), &p, &div(&p).map(|x| -x))?);
        worst[1] = worst[1].max(adjoint_error(&u, &dgrad(&u, dir), &p, &ddiv_vec(&p, dir).map(|x| -x))?);
        let mut dw = ddiv_tensor(&w, dir);
        dw.planes_mut().into_iter().flatten().for_each(|x| *x = -*x);
        worst[2] = worst[2].max(adjoint_error(&v, &sym_dgrad(&v, dir), &w, &dw)?);

        let op = ForwardOperator::gaussian_blur(rng.random_range(0.5..3.0))?;
        let y = image(&mut rng, r, c);
        worst[3] = worst[3].max(adjoint_error(&u, &op.apply(&u), &y, &op.adjoint(&y))?);

        let iso = DirectionParams::new(dir.theta(), 1.0)?;
        worst[4] = worst[4].max(rel(dtv_energy(&u, iso), tv_energy(&u)));
    }
    let names = [
        "adjoint grad/div",
        "adjoint dgrad/ddiv_vec",
        "adjoint sym_dgrad/ddiv_tensor",
        "adjoint blur",
        "dtv(a=1) equals tv",
    ];
    Ok(names
        .into_iter()
        .zip(worst)
        .map(|(name, w)| CheckOutcome {
            name,
            worst: w,
            passed: w <= args.tol,
        })
        .collect())
}

pub(crate) fn run(args: &CheckArgs) -> Result<Status> {
    let outcomes = run_checks(args)?;
    for o in &outcomes {
        println!(
            "{} {} (max rel err {:.3e})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.worst
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(Status::Done)
}
