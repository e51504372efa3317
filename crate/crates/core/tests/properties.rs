use std::f64::consts::PI;

use dtgv::diffops::{ddiv_tensor, ddiv_vec, dgrad, div, grad, rotate_scale, sym_dgrad, RotateScale};
use dtgv::direction::{estimate_main_direction, EstimatorConfig};
use dtgv::forward::{add_noise, phantom, ForwardOperator, NoiseSpec, PhantomKind, PhantomParams};
use dtgv::grid::{inner_product, normalize_half_turn, pointwise_norm, Field};
use dtgv::regularizers::{dtv_energy, project_ball, tv_energy};
use dtgv::{DirectionParams, ImageGrid, SymTensorField, VectorField};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn norm<F: Field>(f: &F) -> f64 {
    inner_product(f, f).unwrap().sqrt()
}

/// `|⟨Kx, y⟩ − ⟨x, K*y⟩|` relative to `max(‖Kx‖‖y‖, ‖x‖‖K*y‖)`.
fn adjoint_error<X: Field, Y: Field>(x: &X, kx: &Y, y: &Y, kty: &X) -> f64 {
    let l = inner_product(kx, y).unwrap();
    let r = inner_product(x, kty).unwrap();
    (l - r).abs() / (norm(kx) * norm(y)).max(norm(x) * norm(kty)).max(1e-300)
}

struct Sample {
    u: ImageGrid,
    p: VectorField,
    v: VectorField,
    w: SymTensorField,
}

fn sample(rows: usize, cols: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = || rng.random_range(-1.0..1.0);
    Sample {
        u: ImageGrid::from_fn(rows, cols, |_, _| x()),
        p: VectorField::from_fn(rows, cols, |_, _| [x(), x()]),
        v: VectorField::from_fn(rows, cols, |_, _| [x(), x()]),
        w: SymTensorField::from_fn(rows, cols, |_, _| [x(), x(), x()]),
    }
}

fn direction() -> impl Strategy<Value = DirectionParams> {
    (0.0..PI, 0.01..=1.0f64).prop_map(|(t, a)| DirectionParams::new(t, a).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_and_divergences_are_negative_adjoints(
        rows in 2usize..24, cols in 2usize..24, dir in direction(), seed in any::<u64>()
    ) {
        let s = sample(rows, cols, seed);
        prop_assert!(adjoint_error(&s.u, &grad(&s.u), &s.p, &div(&s.p).map(|x| -x)) <= 1e-12);
        prop_assert!(adjoint_error(&s.u, &dgrad(&s.u, dir), &s.p, &ddiv_vec(&s.p, dir).map(|x| -x)) <= 1e-12);
        let mut dw = ddiv_tensor(&s.w, dir);
        dw.planes_mut().into_iter().flatten().for_each(|x| *x = -*x);
        prop_assert!(adjoint_error(&s.v, &sym_dgrad(&s.v, dir), &s.w, &dw) <= 1e-12);
    }

    #[test]
    fn blur_is_self_consistent(rows in 2usize..24, cols in 2usize..24, sigma in 0.3..4.0f64, seed in any::<u64>()) {
        let s = sample(rows, cols, seed);
        let y = sample(rows, cols, seed ^ 0x5555).u;
        let op = ForwardOperator::gaussian_blur(sigma).unwrap();
        prop_assert!(adjoint_error(&s.u, &op.apply(&s.u), &y, &op.adjoint(&y)) <= 1e-12);

        let mean = s.u.mean();
        let centered = s.u.map(|x| x - mean);
        prop_assert!(op.apply(&centered).norm_sq() <= centered.norm_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn inner_product_is_symmetric_and_bilinear(
        rows in 2usize..16, cols in 2usize..16, alpha in -3.0..3.0f64, seed in any::<u64>()
    ) {
        let a = sample(rows, cols, seed).w;
        let b = sample(rows, cols, seed.wrapping_add(1)).w;
        let c = sample(rows, cols, seed.wrapping_add(2)).w;
        let ab = inner_product(&a, &b).unwrap();
        prop_assert!(rel(ab, inner_product(&b, &a).unwrap()) <= 1e-14);

        let mut comb = a.clone();
        for (x, (y, z)) in comb.planes_mut().into_iter().zip(b.planes().into_iter().zip(c.planes())) {
            for (xi, (yi, _)) in x.iter_mut().zip(y.iter().zip(z)) {
                *xi = alpha * *xi + yi;
            }
        }
        let lhs = inner_product(&comb, &c).unwrap();
        let rhs = alpha * inner_product(&a, &c).unwrap() + inner_product(&b, &c).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        // ⟨w, w⟩ is the squared weighted norm
        let n2: f64 = pointwise_norm(&a).as_slice().iter().map(|x| x * x).sum();
        prop_assert!(rel(inner_product(&a, &a).unwrap(), n2) <= 1e-12);
    }

    #[test]
    fn synthesis_is_the_transpose_of_analysis(
        rows in 2usize..12, cols in 2usize..12, dir in direction(), seed in any::<u64>()
    ) {
        let p = sample(rows, cols, seed).p;
        let fwd = rotate_scale(&p, dir, RotateScale::Analysis);
        let back = rotate_scale(&fwd, dir, RotateScale::Synthesis);
        let lhs = inner_product(&fwd, &fwd).unwrap();
        let rhs = inner_product(&p, &back).unwrap();
        prop_assert!(rel(lhs, rhs) <= 1e-12);
    }

    #[test]
    fn projection_lands_in_ball_and_is_idempotent(
        rows in 2usize..16, cols in 2usize..16, lambda in 0.01..5.0f64, seed in any::<u64>()
    ) {
        let s = sample(rows, cols, seed);
        let mut scaled = s.w.clone();
        scaled.planes_mut().into_iter().flatten().for_each(|x| *x *= 4.0);
        let pw = project_ball(&scaled, lambda);
        prop_assert!(pointwise_norm(&pw).max() <= lambda * (1.0 + 1e-12));
        let again = project_ball(&pw, lambda);
        for (x, y) in again.planes().into_iter().flatten().zip(pw.planes().into_iter().flatten()) {
            prop_assert!((x - y).abs() <= 1e-15 * lambda.max(1.0));
        }

        let pp = project_ball(&s.p, lambda);
        prop_assert!(pointwise_norm(&pp).max() <= lambda * (1.0 + 1e-12));
        // points already inside are untouched
        prop_assert_eq!(project_ball(&s.p, 10.0), s.p.clone());
    }

    #[test]
    fn dtv_is_a_seminorm_bounded_by_tv(
        rows in 2usize..20, cols in 2usize..20, dir in direction(), c in -4.0..4.0f64, seed in any::<u64>()
    ) {
        let x = sample(rows, cols, seed).u;
        let y = sample(rows, cols, seed ^ 0xabcdef).u;
        let dx = dtv_energy(&x, dir);
        prop_assert!(rel(dtv_energy(&x.map(|t| c * t), dir), c.abs() * dx) <= 1e-12);
        prop_assert!(rel(dtv_energy(&x.map(|t| t + c), dir), dx) <= 1e-12);

        let mid = ImageGrid::from_fn(rows, cols, |i, j| 0.5 * (x.get(i, j) + y.get(i, j)));
        prop_assert!(dtv_energy(&mid, dir) <= 0.5 * (dx + dtv_energy(&y, dir)) + 1e-12);

        let tv = tv_energy(&x);
        prop_assert!(dx <= tv * (1.0 + 1e-12));
        prop_assert!(dx >= dir.a() * tv * (1.0 - 1e-12));

        let iso = DirectionParams::new(dir.theta(), 1.0).unwrap();
        prop_assert!(rel(dtv_energy(&x, iso), tv) <= 1e-12);
    }

    #[test]
    fn dtv_grows_with_anisotropy(rows in 2usize..16, cols in 2usize..16, theta in 0.0..PI, seed in any::<u64>()) {
        let x = sample(rows, cols, seed).u;
        let mut last = 0.0;
        for k in 1..=10 {
            let e = dtv_energy(&x, DirectionParams::new(theta, k as f64 / 10.0).unwrap());
            prop_assert!(e >= last * (1.0 - 1e-12));
            last = e;
        }
    }

    #[test]
    fn half_turn_normalization(theta in -50.0..50.0f64) {
        let t = normalize_half_turn(theta);
        prop_assert!((0.0..PI).contains(&t));
        let k = ((theta - t) / PI).round();
        prop_assert!((theta - t - k * PI).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimated_direction_beats_its_perpendicular(
        angle in 0.0..PI, period in 20.0..32.0f64, noise in 0.0..0.2f64, seed in any::<u64>()
    ) {
        let u = phantom(PhantomKind::Stripes, 96, &PhantomParams::new(angle, period)).unwrap();
        let f = add_noise(&u, &NoiseSpec::new(noise, seed)).unwrap();
        let est = estimate_main_direction(&f, &EstimatorConfig::default()).unwrap();
        let along = dtv_energy(&u, DirectionParams::new(est.theta, 0.15).unwrap());
        let across = dtv_energy(&u, DirectionParams::new(est.theta + PI / 2.0, 0.15).unwrap());
        prop_assert!(along <= across, "theta {} along {along} across {across}", est.theta);
        prop_assert!((0.0..PI).contains(&est.theta));
    }
}
