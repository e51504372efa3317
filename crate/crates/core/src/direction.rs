//! Estimation of a single dominant texture direction.
//!
//! The estimator smooths the input, computes a per-pixel gradient angle,
//! regularizes the quadrupled angles `(cos 4Θ, sin 4Θ)` with a weighted
//! quadratic smoother, and averages the result into one angle `θ ∈ [0, π)`.
//! The returned `θ` uses the same convention as [`DirectionParams`]: it
//! points along the stripes, perpendicular to the dominant gradient.
//!
//! [`DirectionParams`]: crate::DirectionParams

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use crate::diffops::{div_into, grad, grad_into};
use crate::forward::{ForwardOperator, GaussianBlur};
use crate::grid::{normalize_half_turn, Field, ImageGrid, VectorField};
use crate::{par, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Standard deviation of the pre-smoothing blur.
    pub smooth_sigma: f64,
    /// Weight of the gradient penalty in the angle smoother.
    pub smooth_mu: f64,
    /// Gradients shorter than this fraction of the largest gradient get angle 0.
    pub gradient_floor: f64,
    /// Relative residual at which the conjugate-gradient solve stops.
    pub linear_solver_tol: f64,
    /// Use the gradient of the unsmoothed input as smoother weights.
    pub unsmoothed_weights: bool,
    /// Width, in multiples of `smooth_sigma`, of the border whose pixels get
    /// zero smoother weight. The reflective pre-blur bends the texture there.
    pub border_sigmas: f64,
    /// Literal angle branches, absolute floor, no border mask, arithmetic
    /// mean and the cross-term-only final transform.
    pub strict_paper: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            smooth_sigma: 10.0,
            smooth_mu: 100.0,
            gradient_floor: 1e-3,
            linear_solver_tol: 1e-10,
            unsmoothed_weights: false,
            border_sigmas: 2.0,
            strict_paper: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smooth_sigma > 0.0 && self.smooth_sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "smooth_sigma must be positive, got {}",
                self.smooth_sigma
            )));
        }
        if !(self.smooth_mu >= 0.0 && self.smooth_mu.is_finite()) {
            return Err(Error::invalid(format!(
                "smooth_mu must be non-negative, got {}",
                self.smooth_mu
            )));
        }
        if !(self.gradient_floor >= 0.0 && self.gradient_floor.is_finite()) {
            return Err(Error::invalid(format!(
                "gradient_floor must be non-negative, got {}",
                self.gradient_floor
            )));
        }
        if self.linear_solver_tol.is_nan() || self.linear_solver_tol <= 0.0 {
            return Err(Error::invalid(format!(
                "linear_solver_tol must be positive, got {}",
                self.linear_solver_tol
            )));
        }
        if !(self.border_sigmas >= 0.0 && self.border_sigmas.is_finite()) {
            return Err(Error::invalid(format!(
                "border_sigmas must be non-negative, got {}",
                self.border_sigmas
            )));
        }
        Ok(())
    }

    /// Masked border width in pixels, capped at a quarter of the shorter side.
    pub fn border_width(&self, rows: usize, cols: usize) -> usize {
        let w = (self.border_sigmas * self.smooth_sigma).ceil() as usize;
        w.min(rows.min(cols) / 4)
    }
}

/// Per-pixel angles in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField(ImageGrid);

impl AngleField {
    pub fn from_grid(grid: ImageGrid) -> Result<Self> {
        if let Some(x) = grid.as_slice().iter().find(|x| !(0.0..TAU).contains(*x)) {
            return Err(Error::invalid(format!("angle {x} outside [0, 2pi)")));
        }
        Ok(Self(grid))
    }

    pub fn as_grid(&self) -> &ImageGrid {
        &self.0
    }

    pub fn into_grid(self) -> ImageGrid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

/// Angle of `g` per pixel, measured from the first axis toward the second:
/// 0 below `floor`, `arccos(g¹/‖g‖)` for `g² ≥ 0`, `2π − arccos(g¹/‖g‖)` otherwise.
pub fn pixelwise_angle(g: &VectorField, floor: f64) -> AngleField {
    angles(g, floor, false)
}

/// With `literal` set, the middle branch only fires below `floor`, so every
/// gradient above the floor takes the `2π − arccos` branch.
fn angles(g: &VectorField, floor: f64, literal: bool) -> AngleField {
    let (rows, cols) = (g.rows(), g.cols());
    let mut out = ImageGrid::zeros(rows, cols);
    par::rows(out.as_mut_slice(), cols, |i, r| {
        for (j, o) in r.iter_mut().enumerate() {
            let k = i * cols + j;
            let (x, y) = (g.v1[k], g.v2[k]);
            let n = x.hypot(y);
            *o = if n < floor || n == 0.0 {
                0.0
            } else {
                let c = (x / n).clamp(-1.0, 1.0).acos();
                if y >= 0.0 && !literal {
                    c
                } else {
                    // 2π − 0 would leave the half-open range
                    let a = TAU - c;
                    if a >= TAU {
                        0.0
                    } else {
                        a
                    }
                }
            };
        }
    });
    AngleField(out)
}

/// Smoothed quadrupled angles `(c², s²)` plus the number of CG iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedAngles {
    pub c: ImageGrid,
    pub s: ImageGrid,
    pub iterations: usize,
}

/// Minimizes `Σ w‖(c¹,s¹) − (c²,s²)‖² + μ(‖∇c²‖² + ‖∇s²‖²)` with
/// `c¹ = cos 4Θ¹` and `s¹ = sin 4Θ¹`.
///
/// Each component solves `(W + μ∇ᵀ∇)x = W x¹` by conjugate gradients
/// preconditioned with `w̄I + μ∇ᵀ∇`, where `w̄` is the mean weight; the
/// preconditioner is diagonal in the cosine basis.
pub fn smooth_angle_field(theta1: &AngleField, weights: &ImageGrid, mu: f64, tol: f64) -> Result<SmoothedAngles> {
    if theta1.shape() != weights.shape() {
        return Err(Error::ShapeMismatch {
            left: theta1.shape(),
            right: weights.shape(),
        });
    }
    if weights.as_slice().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("smoothing weights must be finite and non-negative"));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be non-negative, got {mu}")));
    }
    let c1 = theta1.as_grid().map(|t| (4.0 * t).cos());
    let s1 = theta1.as_grid().map(|t| (4.0 * t).sin());
    let w_mean = weights.mean();
    if mu == 0.0 || w_mean == 0.0 {
        // Either the data term alone (minimizer c¹ wherever w > 0) or no data
        // term at all; keeping c¹ is a minimizer in both cases for μ = 0.
        if w_mean == 0.0 && mu > 0.0 {
            let (mc, ms) = (c1.mean(), s1.mean());
            let (r, k) = c1.shape();
            return Ok(SmoothedAngles {
                c: ImageGrid::filled(r, k, mc),
                s: ImageGrid::filled(r, k, ms),
                iterations: 0,
            });
        }
        return Ok(SmoothedAngles {
            c: c1,
            s: s1,
            iterations: 0,
        });
    }
    let system = SmoothingSystem::new(weights, mu);
    let (c, ic) = system.solve(&c1, tol)?;
    let (s, is) = system.solve(&s1, tol)?;
    Ok(SmoothedAngles {
        c,
        s,
        iterations: ic + is,
    })
}

/// `x ↦ w ⊙ x + μ∇ᵀ∇x` with its cosine-basis preconditioner.
struct SmoothingSystem<'a> {
    weights: &'a ImageGrid,
    mu: f64,
    dct_rows: Vec<f64>,
    dct_cols: Vec<f64>,
    /// `1 / (w̄ + μ(λ_k + λ_l))` on the cosine grid.
    inv_eig: ImageGrid,
}

impl<'a> SmoothingSystem<'a> {
    fn new(weights: &'a ImageGrid, mu: f64) -> Self {
        let (rows, cols) = weights.shape();
        let w_mean = weights.mean();
        let lam = |k: usize, n: usize| 2.0 - 2.0 * (PI * k as f64 / n as f64).cos();
        let inv_eig = ImageGrid::from_fn(rows, cols, |k, l| 1.0 / (w_mean + mu * (lam(k, rows) + lam(l, cols))));
        Self {
            weights,
            mu,
            dct_rows: dct_matrix(rows),
            dct_cols: dct_matrix(cols),
            inv_eig,
        }
    }

    fn apply(&self, x: &ImageGrid, g: &mut VectorField, lap: &mut ImageGrid, out: &mut ImageGrid) {
        grad_into(x, g);
        div_into(g, lap);
        let (w, l, xs) = (self.weights.as_slice(), lap.as_slice(), x.as_slice());
        let cols = x.cols();
        let mu = self.mu;
        par::rows(out.as_mut_slice(), cols, |i, r| {
            let base = i * cols;
            for (j, o) in r.iter_mut().enumerate() {
                let k = base + j;
                *o = w[k] * xs[k] - mu * l[k];
            }
        });
    }

    fn precondition(&self, r: &ImageGrid) -> ImageGrid {
        let (rows, cols) = r.shape();
        let mut y = transform(r, &self.dct_rows, &self.dct_cols, false);
        y.as_mut_slice()
            .iter_mut()
            .zip(self.inv_eig.as_slice())
            .for_each(|(a, b)| *a *= b);
        let out = transform(&y, &self.dct_rows, &self.dct_cols, true);
        debug_assert_eq!(out.shape(), (rows, cols));
        out
    }

    /// Solves `(W + μ∇ᵀ∇)x = W x¹` starting from `x¹`.
    fn solve(&self, x1: &ImageGrid, tol: f64) -> Result<(ImageGrid, usize)> {
        let (rows, cols) = x1.shape();
        let n = rows * cols;
        let b = ImageGrid::from_fn(rows, cols, |i, j| self.weights.get(i, j) * x1.get(i, j));
        let b_norm = b.norm_sq().sqrt();
        let mut x = x1.clone();
        let mut g = VectorField::zeros(rows, cols);
        let mut lap = ImageGrid::zeros(rows, cols);
        let mut ax = ImageGrid::zeros(rows, cols);
        self.apply(&x, &mut g, &mut lap, &mut ax);
        let mut r = ImageGrid::from_fn(rows, cols, |i, j| b.get(i, j) - ax.get(i, j));
        if b_norm == 0.0 {
            return Ok((ImageGrid::zeros(rows, cols), 0));
        }
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 10 * n + 100;
        for it in 0..max_iter {
            let res = r.norm_sq().sqrt();
            if res <= tol * b_norm {
                return Ok((x, it));
            }
            self.apply(&p, &mut g, &mut lap, &mut ax);
            let pap = dot(&p, &ax);
            if rz == 0.0 || pap <= 0.0 {
                return Ok((x, it));
            }
            let alpha = rz / pap;
            axpy(&mut x, alpha, &p);
            axpy(&mut r, -alpha, &ax);
            z = self.precondition(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .for_each(|(pv, zv)| *pv = zv + beta * *pv);
        }
        let res = r.norm_sq().sqrt() / b_norm;
        Err(Error::NotConverged {
            iter: max_iter,
            energy: res,
            delta: res,
        })
    }
}

fn dot(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let (x, y) = (a.as_slice(), b.as_slice());
    par::chunked_sum(x.len(), |r| x[r.clone()].iter().zip(&y[r]).map(|(p, q)| p * q).sum())
}

fn axpy(y: &mut ImageGrid, a: f64, x: &ImageGrid) {
    y.as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .for_each(|(yv, xv)| *yv += a * xv);
}

/// Orthonormal DCT-II matrix, row `k` holding basis vector `k`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] = scale * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
    }
    m
}

/// `C_r X C_cᵀ`, or `C_rᵀ X C_c` when `inverse` is set.
fn transform(x: &ImageGrid, cr: &[f64], cc: &[f64], inverse: bool) -> ImageGrid {
    let (rows, cols) = x.shape();
    let xs = x.as_slice();
    // along each row: t[i][l] = Σ_j x[i][j] C_c[l][j]  (or C_c[j][l])
    let mut t = ImageGrid::zeros(rows, cols);
    par::rows(t.as_mut_slice(), cols, |i, out| {
        let row = &xs[i * cols..(i + 1) * cols];
        for (l, o) in out.iter_mut().enumerate() {
            *o = if inverse {
                row.iter().enumerate().map(|(j, v)| v * cc[j * cols + l]).sum()
            } else {
                cc[l * cols..(l + 1) * cols].iter().zip(row).map(|(c, v)| c * v).sum()
            };
        }
    });
    let ts = t.as_slice();
    let mut out = ImageGrid::zeros(rows, cols);
    par::rows(out.as_mut_slice(), cols, |k, orow| {
        orow.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..rows {
            let c = if inverse { cr[i * rows + k] } else { cr[k * rows + i] };
            let trow = &ts[i * cols..(i + 1) * cols];
            orow.iter_mut().zip(trow).for_each(|(o, v)| *o += c * v);
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionEstimate {
    /// Texture direction in `[0, π)`.
    pub theta: f64,
    /// Mean gradient magnitude of the smoothed image; 0 when no gradient
    /// exceeds the floor.
    pub confidence: f64,
    /// Pixelwise angles of the smoothed image.
    pub raw: AngleField,
    /// Smoothed, un-quadrupled angles in `[0, π/2)`.
    pub smoothed: AngleField,
    /// Standard deviation of the quadrupled smoothed angles.
    pub spread: f64,
    /// Whether the circular mean replaced the arithmetic mean.
    pub circular_mean: bool,
    pub cg_iterations: usize,
}

/// Estimates the dominant texture direction of `f`.
pub fn estimate_main_direction(f: &ImageGrid, cfg: &EstimatorConfig) -> Result<DirectionEstimate> {
    f.validate()?;
    cfg.validate()?;
    let (rows, cols) = f.shape();
    let blur = ForwardOperator::GaussianBlur(GaussianBlur::new(cfg.smooth_sigma)?);
    let g = grad(&blur.apply(f));
    let literal = cfg.strict_paper;

    let norms: Vec<f64> = g.v1.iter().zip(&g.v2).map(|(x, y)| x.hypot(*y)).collect();
    let confidence = norms.iter().sum::<f64>() / norms.len() as f64;
    let largest = norms.iter().copied().fold(0.0, f64::max);
    let floor = if literal {
        cfg.gradient_floor
    } else {
        cfg.gradient_floor * largest
    };
    let raw = angles(&g, floor, literal);
    let scale = f.as_slice().iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if largest <= 1e-12 * scale || norms.iter().all(|n| *n < floor) {
        // no usable gradient anywhere, e.g. a constant image
        return Ok(DirectionEstimate {
            theta: 0.0,
            confidence: 0.0,
            raw: raw.clone(),
            smoothed: raw,
            spread: 0.0,
            circular_mean: false,
            cg_iterations: 0,
        });
    }

    let m = if literal { 0 } else { cfg.border_width(rows, cols) };
    let inside = |i: usize, j: usize| i >= m && j >= m && i + m < rows && j + m < cols;
    let g0 = cfg.unsmoothed_weights.then(|| grad(f));
    let weights = ImageGrid::from_fn(rows, cols, |i, j| {
        let [x, y] = g0.as_ref().map_or_else(|| g.get(i, j), |g0| g0.get(i, j));
        if inside(i, j) {
            x * x + y * y
        } else {
            0.0
        }
    });
    let sm = smooth_angle_field(&raw, &weights, cfg.smooth_mu, cfg.linear_solver_tol)?;
    let cs = VectorField::from_planes(rows, cols, sm.c.into_vec(), sm.s.into_vec())?;
    let quad_floor = if literal {
        cfg.gradient_floor
    } else {
        let big = cs.v1.iter().zip(&cs.v2).map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max);
        cfg.gradient_floor * big
    };
    let quad = angles(&cs, quad_floor, literal).into_grid();
    let smoothed = AngleField(quad.map(|t| t / 4.0));

    let n = quad.len() as f64;
    let mean4 = quad.mean();
    let spread = (quad.as_slice().iter().map(|t| (t - mean4).powi(2)).sum::<f64>() / n).sqrt();
    let circular_mean = !literal && spread > FRAC_PI_4;
    let mean = if circular_mean {
        let (s, c) = quad
            .as_slice()
            .iter()
            .fold((0.0, 0.0), |(s, c), t| (s + t.sin(), c + t.cos()));
        s.atan2(c).rem_euclid(TAU) / 4.0
    } else {
        smoothed.as_grid().mean()
    };

    // Second moments of the smoothed gradient over the unmasked pixels.
    let (mut cross, mut diag) = (0.0, 0.0);
    for i in m..rows - m {
        for j in m..cols - m {
            let [x, y] = g.get(i, j);
            cross += x * y;
            diag += x * x - y * y;
        }
    }
    let theta = if literal {
        if cross <= 0.0 {
            -mean
        } else {
            FRAC_PI_2 - mean
        }
    } else {
        // The gradient angle is `mean` or `mean + π/2`; keep the candidate
        // closer to the doubled-angle average `atan2(2·cross, diag)`, then
        // rotate by π/2 to point along the texture.
        let score = (2.0 * mean).cos() * diag + (2.0 * mean).sin() * 2.0 * cross;
        if score > 0.0 {
            mean + FRAC_PI_2
        } else {
            mean
        }
    };

    Ok(DirectionEstimate {
        theta: normalize_half_turn(theta),
        confidence,
        raw,
        smoothed,
        spread,
        circular_mean,
        cg_iterations: sm.iterations,
    })
}
