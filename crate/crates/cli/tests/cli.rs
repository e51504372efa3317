use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtgv::direction::{estimate_main_direction, EstimatorConfig};
use dtgv::forward::ForwardOperator;
use dtgv::regularizers::dtv_energy;
use dtgv::DirectionParams;
use dtgv_cli::imageio::read_image;
use tempfile::TempDir;

fn dtgv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtgv"))
        .args(args)
        .env("DTGV_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dtgv(args);
    assert!(
        out.status.success(),
        "dtgv {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Minimizer of `dtv_energy(u; 0.15, θ)` over a 1° sweep, in degrees.
///
/// Runs on a copy smoothed with σ = 2: on sharp edges the forward-difference
/// stencil pulls the minimizer toward the axes for angles in (0°, 90°).
fn dtv_sweep_oracle(u: &dtgv::ImageGrid) -> f64 {
    let smooth = ForwardOperator::gaussian_blur(2.0).unwrap().apply(u);
    (0..180)
        .map(|d| {
            (
                d as f64,
                dtv_energy(&smooth, DirectionParams::from_degrees(d as f64, 0.15).unwrap()),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

#[test]
fn estimate_direction_matches_the_dtv_sweep() {
    let dir = TempDir::new().unwrap();
    let u = path(&dir, "u.pgm");
    ok(&[
        "phantom",
        "--kind",
        "stripes",
        "--size",
        "128",
        "--angle",
        "30",
        "--period",
        "32",
        "-o",
        s(&u),
    ]);
    let printed: f64 = ok(&["estimate-direction", "-i", s(&u)]).trim().parse().unwrap();
    let oracle = dtv_sweep_oracle(&read_image(&u).unwrap());
    assert!(angle_gap(printed, oracle) <= 2.0, "estimate {printed} oracle {oracle}");
}

#[test]
fn fine_stripes_need_a_smaller_estimator_blur() {
    let dir = TempDir::new().unwrap();
    let u = path(&dir, "u.pgm");
    ok(&[
        "phantom",
        "--kind",
        "stripes",
        "--size",
        "128",
        "--angle",
        "30",
        "--period",
        "16",
        "-o",
        s(&u),
    ]);
    let printed: f64 = ok(&["estimate-direction", "-i", s(&u), "--est-sigma", "4"])
        .trim()
        .parse()
        .unwrap();
    let oracle = dtv_sweep_oracle(&read_image(&u).unwrap());
    assert!(angle_gap(printed, oracle) <= 2.0, "estimate {printed} oracle {oracle}");
}

#[test]
fn unit_anisotropy_restore_equals_tgv() {
    let dir = TempDir::new().unwrap();
    let (u, f, a, b) = (
        path(&dir, "u.pgm"),
        path(&dir, "f.pgm"),
        path(&dir, "a.pgm"),
        path(&dir, "b.pgm"),
    );
    ok(&[
        "phantom",
        "--kind",
        "affine_stripes",
        "--size",
        "48",
        "--angle",
        "20",
        "--period",
        "16",
        "-o",
        s(&u),
    ]);
    ok(&[
        "degrade",
        "-i",
        s(&u),
        "-o",
        s(&f),
        "--noise",
        "0.1",
        "--seed",
        "3",
        "--bits",
        "16",
    ]);
    let common = ["--lambda1", "0.1", "--tol", "1e-9", "--bits", "16"];
    ok(&[
        &["restore", "-i", s(&f), "-o", s(&a), "--reg", "dtgv", "--a", "1.0"][..],
        &common,
    ]
    .concat());
    ok(&[&["restore", "-i", s(&f), "-o", s(&b), "--reg", "tgv"][..], &common].concat());
    let (x, y) = (read_image(&a).unwrap(), read_image(&b).unwrap());
    let diff = x
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    // equal up to at most one 16-bit quantization step
    assert!(diff <= 1.0 / 65535.0 + 1e-12, "max diff {diff}");
}

#[test]
fn psnr_of_an_image_with_itself_is_inf() {
    let dir = TempDir::new().unwrap();
    let u = path(&dir, "u.pgm");
    ok(&["phantom", "--kind", "ellipse", "--size", "32", "-o", s(&u)]);
    assert_eq!(ok(&["psnr", "-i", s(&u), "-r", s(&u)]).trim(), "inf");
}

#[test]
fn pipeline_outputs_are_byte_identical() {
    let run = |dir: &TempDir| -> Vec<Vec<u8>> {
        let (u, f, r, log, csv) = (
            path(dir, "u.pgm"),
            path(dir, "f.png"),
            path(dir, "r.pgm"),
            path(dir, "log.csv"),
            path(dir, "sweep.csv"),
        );
        ok(&[
            "phantom",
            "--kind",
            "dark_band_stripes",
            "--size",
            "48",
            "--angle",
            "60",
            "--period",
            "12",
            "-o",
            s(&u),
        ]);
        ok(&[
            "degrade",
            "-i",
            s(&u),
            "-o",
            s(&f),
            "--blur",
            "1",
            "--noise",
            "0.1",
            "--seed",
            "9",
            "--bits",
            "16",
        ]);
        ok(&[
            "restore",
            "-i",
            s(&f),
            "-o",
            s(&r),
            "--reg",
            "dtgv",
            "--lambda1",
            "0.05",
            "--blur",
            "1",
            "--tol",
            "1e-4",
            "-r",
            s(&u),
            "--log",
            s(&log),
            "--bits",
            "16",
        ]);
        ok(&[
            "sweep",
            "-i",
            s(&f),
            "-r",
            s(&u),
            "-o",
            s(&csv),
            "--reg",
            "dtv",
            "--points",
            "3",
            "--tol",
            "1e-4",
        ]);
        [u, f, r, log, csv].iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(run(&d1), run(&d2));
}

#[test]
fn sixteen_bit_round_trip_preserves_psnr() {
    let dir = TempDir::new().unwrap();
    let (u, f) = (path(&dir, "u.pgm"), path(&dir, "f.png"));
    ok(&[
        "phantom",
        "--kind",
        "stripes",
        "--size",
        "64",
        "--angle",
        "10",
        "-o",
        s(&u),
        "--bits",
        "16",
    ]);
    ok(&[
        "degrade",
        "-i",
        s(&u),
        "-o",
        s(&f),
        "--noise",
        "0.05",
        "--seed",
        "1",
        "--bits",
        "16",
    ]);
    let clean = read_image(&u).unwrap();
    let exact = dtgv::forward::add_noise(&clean, &dtgv::forward::NoiseSpec::new(0.05, 1)).unwrap();
    let expected = dtgv::grid::psnr(&exact.clamped(0.0, 1.0), &clean, 1.0).unwrap();
    let printed: f64 = ok(&["psnr", "-i", s(&f), "-r", s(&u)]).trim().parse().unwrap();
    assert!((printed - expected).abs() <= 0.01, "{printed} vs {expected}");
}

#[test]
fn sweep_writes_one_row_per_lambda_in_order() {
    let dir = TempDir::new().unwrap();
    let (u, f, best) = (path(&dir, "u.pgm"), path(&dir, "f.pgm"), path(&dir, "best.pgm"));
    ok(&[
        "phantom",
        "--kind",
        "stripes",
        "--size",
        "32",
        "--period",
        "8",
        "-o",
        s(&u),
    ]);
    ok(&["degrade", "-i", s(&u), "-o", s(&f), "--noise", "0.1"]);
    let csv = ok(&[
        "sweep",
        "-i",
        s(&f),
        "-r",
        s(&u),
        "--reg",
        "tv",
        "--lambdas",
        "0.2,0.05,0.1",
        "--best-output",
        s(&best),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda1,psnr,iters,energy");
    let lambdas: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(lambdas, ["0.2", "0.05", "0.1"]);
    assert!(best.exists());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let u = path(&dir, "u.pgm");
    assert_eq!(dtgv(&["restore", "--reg", "nope"]).status.code(), Some(2));
    assert_eq!(
        dtgv(&["psnr", "-i", "/nonexistent/a.pgm", "-r", "/nonexistent/b.pgm"])
            .status
            .code(),
        Some(1)
    );
    ok(&["phantom", "--kind", "stripes", "--size", "32", "-o", s(&u)]);
    let r = path(&dir, "r.pgm");
    let out = dtgv(&[
        "restore",
        "-i",
        s(&u),
        "-o",
        s(&r),
        "--reg",
        "tgv",
        "--lambda1",
        "0.1",
        "--max-iter",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(r.exists(), "outputs are written even without convergence");
    assert_eq!(dtgv(&["--help"]).status.code(), Some(0));
}

#[test]
fn check_subcommand_passes() {
    let out = ok(&["check", "--trials", "20", "--max-size", "24"]);
    assert_eq!(out.lines().count(), 5);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn theta_auto_uses_the_estimator() {
    let dir = TempDir::new().unwrap();
    let u = path(&dir, "u.pgm");
    ok(&[
        "phantom",
        "--kind",
        "stripes",
        "--size",
        "96",
        "--angle",
        "120",
        "--period",
        "24",
        "-o",
        s(&u),
    ]);
    let est = estimate_main_direction(&read_image(&u).unwrap(), &EstimatorConfig::default()).unwrap();
    let printed: f64 = ok(&["estimate-direction", "-i", s(&u)]).trim().parse().unwrap();
    assert!((printed - est.theta.to_degrees()).abs() < 1e-3);
}
