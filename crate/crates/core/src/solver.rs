//! Chambolle–Pock primal-dual solvers for
//! `min_u ½‖Au − f‖² + R(u)` with `R ∈ {TV, DTV, TGV², DTGV²}`,
//! plus power-iteration estimates of the squared operator norm.
//!
//! The second-order solver works on the saddle problem
//!
//! ```text
//! min_{u,v} max_{q,p,W}  ⟨Au, q⟩ − ½‖q‖² − ⟨f, q⟩ + ⟨∇̃u − v, p⟩ + ⟨Ẽv, W⟩
//! ```
//!
//! with `‖p_{i,j}‖ ≤ λ₁` and `‖W_{i,j}‖_F ≤ λ₀`. The iteration stops once the
//! relative change of the objective `½‖Au − f‖² + λ₁‖∇̃u − v‖ + λ₀‖Ẽv‖`
//! between two iterates drops below `tol`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffops::{ddiv_tensor_into, ddiv_vec_into, dgrad_into, sym_dgrad_into};
use crate::forward::ForwardOperator;
use crate::grid::{norm_sum, psnr, DirectionParams, Field, ImageGrid, SymTensorField, VectorField};
use crate::regularizers::{ball_scale, Dtgv2Value, RegKind, RegularizerSpec};
use crate::{par, Error, Result};

/// Safety factor applied to the power-iteration estimate.
pub const LIPSCHITZ_SAFETY: f64 = 1.01;
/// Step-size fraction of `1/√L` used when `auto_steps` is on.
pub const AUTO_STEP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Dual step σ, used when `auto_steps` is off.
    pub step_sigma: f64,
    /// Primal step τ, used when `auto_steps` is off.
    pub step_tau: f64,
    /// σ = τ = 0.99/√L.
    pub auto_steps: bool,
    pub lipschitz_iters: usize,
    pub lipschitz_seed: u64,
    /// Number of consecutive iterations with `δ ≤ tol` required to stop.
    /// The primal-dual energy is not monotone and `δ` can dip below `tol`
    /// where it turns; 1 stops at the first small `δ`.
    pub patience: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 20_000,
            step_sigma: 0.0,
            step_tau: 0.0,
            auto_steps: true,
            lipschitz_iters: 300,
            lipschitz_seed: 0,
            patience: 10,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if self.lipschitz_iters < 20 {
            return Err(Error::invalid("power iteration needs at least 20 iterations"));
        }
        Ok(())
    }

    /// Returns `(σ, τ)` for the squared operator norm `lipschitz`.
    pub fn steps(&self, lipschitz: f64) -> Result<(f64, f64)> {
        if self.auto_steps {
            let s = AUTO_STEP_FRACTION / lipschitz.sqrt();
            return Ok((s, s));
        }
        let (s, t) = (self.step_sigma, self.step_tau);
        if !(s > 0.0 && t > 0.0) || s * t * lipschitz >= 1.0 {
            return Err(Error::invalid(format!(
                "step sizes must satisfy sigma*tau*L < 1 (sigma={s}, tau={t}, L={lipschitz})"
            )));
        }
        Ok((s, t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub energy: f64,
    pub delta: f64,
    pub psnr: Option<f64>,
}

/// Per-iteration trace, append-only.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationLog {
    records: Vec<IterationRecord>,
}

impl IterationLog {
    pub fn push(&mut self, rec: IterationRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.iter < rec.iter));
        self.records.push(rec);
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `iter,energy,delta` and a trailing `psnr` column when
    /// a reference image was supplied.
    pub fn to_csv(&self) -> String {
        let with_psnr = self.records.iter().any(|r| r.psnr.is_some());
        let mut out = String::from(if with_psnr {
            "iter,energy,delta,psnr\n"
        } else {
            "iter,energy,delta\n"
        });
        for r in &self.records {
            let _ = write!(out, "{},{:e},{:e}", r.iter, r.energy, r.delta);
            if with_psnr {
                let _ = write!(out, ",{}", r.psnr.map_or("inf".to_string(), |p| format!("{p:.6}")));
            }
            out.push('\n');
        }
        out
    }
}

/// Output of a restoration run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ImageGrid,
    /// Auxiliary field of the second-order model; `None` for TV/DTV.
    pub v: Option<VectorField>,
    pub log: IterationLog,
    pub duals: Duals,
    pub converged: bool,
    pub lipschitz: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.iter)
    }

    pub fn energy(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.energy)
    }
}

/// Final dual variables of a run.
#[derive(Debug, Clone)]
pub struct Duals {
    /// Dual of the first-order term, pointwise norm at most `λ₁`.
    pub p: VectorField,
    /// Dual of the second-order term, pointwise norm at most `λ₀`; `None` for TV/DTV.
    pub w: Option<SymTensorField>,
    /// Dual of the data term.
    pub q: ImageGrid,
}

/// Optional starting point and reference image for a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions<'a> {
    /// Initial `u = ū`; zeros when absent.
    pub init: Option<&'a ImageGrid>,
    /// Ground truth for the PSNR column of the log.
    pub reference: Option<&'a ImageGrid>,
}

/// Linear operator whose squared norm bounds the step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorStack {
    /// `u ↦ Au`.
    Data,
    /// `u ↦ ∇̃u`.
    Gradient(DirectionParams),
    /// `u ↦ (Au, ∇̃u)`.
    FirstOrder(DirectionParams),
    /// `(u, v) ↦ (Au, ∇̃u − v, Ẽv)`.
    SecondOrder(DirectionParams),
    /// `v ↦ (−v, Ẽv)`, the operator of the fixed-`u` relaxed problem.
    Relaxed(DirectionParams),
}

impl OperatorStack {
    pub fn for_spec(spec: &RegularizerSpec) -> Self {
        let dir = spec.effective_dir();
        if spec.kind.is_second_order() {
            Self::SecondOrder(dir)
        } else {
            Self::FirstOrder(dir)
        }
    }

    fn has_image(&self) -> bool {
        !matches!(self, Self::Relaxed(_))
    }
}

/// Power iteration on `K*K`. Starts from a seeded random image with the
/// auxiliary field at zero (or a random field when the operator has no
/// image component) and stops when the Rayleigh quotient changes by less
/// than `1e-6` relative, or after `iters` steps. Returns the last quotient
/// times [`LIPSCHITZ_SAFETY`].
pub fn power_iteration(
    a: &ForwardOperator,
    stack: OperatorStack,
    shape: (usize, usize),
    iters: usize,
    seed: u64,
) -> f64 {
    let (rows, cols) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = ImageGrid::zeros(rows, cols);
    let mut v = VectorField::zeros(rows, cols);
    if stack.has_image() {
        u.as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
    } else {
        for x in v.v1.iter_mut().chain(v.v2.iter_mut()) {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    let mut ws = Workspace::new(rows, cols);
    normalize_pair(&mut u, &mut v);
    let mut quotient = 0.0;
    for _ in 0..iters {
        let (nu, nv) = normal_operator(a, stack, &u, &v, &mut ws);
        // ⟨x, K*Kx⟩ with ‖x‖ = 1
        let q = dot(u.as_slice(), nu.as_slice()) + dot(&v.v1, &nv.v1) + dot(&v.v2, &nv.v2);
        u = nu;
        v = nv;
        let n = normalize_pair(&mut u, &mut v);
        let done = quotient > 0.0 && (q - quotient).abs() < 1e-6 * q;
        quotient = q;
        if done || n == 0.0 {
            break;
        }
    }
    LIPSCHITZ_SAFETY * quotient
}

/// `L ≈ ‖K‖²` for the operator stack of `spec` with forward operator `A`.
pub fn estimate_lipschitz(
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    shape: (usize, usize),
    iters: usize,
    seed: u64,
) -> f64 {
    power_iteration(a, OperatorStack::for_spec(spec), shape, iters, seed)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::chunked_sum(a.len(), |r| a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum())
}

fn normalize_pair(u: &mut ImageGrid, v: &mut VectorField) -> f64 {
    let n = (u.norm_sq() + dot(&v.v1, &v.v1) + dot(&v.v2, &v.v2)).sqrt();
    if n > 0.0 {
        u.as_mut_slice().iter_mut().for_each(|x| *x /= n);
        v.v1.iter_mut().chain(v.v2.iter_mut()).for_each(|x| *x /= n);
    }
    n
}

struct Workspace {
    g: VectorField,
    e: SymTensorField,
    d: ImageGrid,
    dt: VectorField,
}

impl Workspace {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            g: VectorField::zeros(rows, cols),
            e: SymTensorField::zeros(rows, cols),
            d: ImageGrid::zeros(rows, cols),
            dt: VectorField::zeros(rows, cols),
        }
    }
}

/// `K*K (u, v)` for the chosen stack.
fn normal_operator(
    a: &ForwardOperator,
    stack: OperatorStack,
    u: &ImageGrid,
    v: &VectorField,
    ws: &mut Workspace,
) -> (ImageGrid, VectorField) {
    let (rows, cols) = u.shape();
    let mut out_u = ImageGrid::zeros(rows, cols);
    let mut out_v = VectorField::zeros(rows, cols);
    let data = |out: &mut ImageGrid| {
        let aau = a.adjoint(&a.apply(u));
        out.as_mut_slice()
            .iter_mut()
            .zip(aau.as_slice())
            .for_each(|(o, x)| *o += x);
    };
    match stack {
        OperatorStack::Data => data(&mut out_u),
        OperatorStack::Gradient(dir) | OperatorStack::FirstOrder(dir) => {
            if matches!(stack, OperatorStack::FirstOrder(_)) {
                data(&mut out_u);
            }
            dgrad_into(u, dir, &mut ws.g);
            ddiv_vec_into(&ws.g, dir, &mut ws.d);
            out_u
                .as_mut_slice()
                .iter_mut()
                .zip(ws.d.as_slice())
                .for_each(|(o, x)| *o -= x);
        }
        OperatorStack::SecondOrder(dir) => {
            data(&mut out_u);
            // r = ∇̃u − v
            dgrad_into(u, dir, &mut ws.g);
            for k in 0..ws.g.v1.len() {
                ws.g.v1[k] -= v.v1[k];
                ws.g.v2[k] -= v.v2[k];
            }
            ddiv_vec_into(&ws.g, dir, &mut ws.d);
            out_u
                .as_mut_slice()
                .iter_mut()
                .zip(ws.d.as_slice())
                .for_each(|(o, x)| *o -= x);
            sym_dgrad_into(v, dir, &mut ws.e);
            ddiv_tensor_into(&ws.e, dir, &mut ws.dt);
            for k in 0..out_v.v1.len() {
                out_v.v1[k] = -ws.g.v1[k] - ws.dt.v1[k];
                out_v.v2[k] = -ws.g.v2[k] - ws.dt.v2[k];
            }
        }
        OperatorStack::Relaxed(dir) => {
            sym_dgrad_into(v, dir, &mut ws.e);
            ddiv_tensor_into(&ws.e, dir, &mut ws.dt);
            for k in 0..out_v.v1.len() {
                out_v.v1[k] = v.v1[k] - ws.dt.v1[k];
                out_v.v2[k] = v.v2[k] - ws.dt.v2[k];
            }
        }
    }
    (out_u, out_v)
}

fn check_input(f: &ImageGrid, init: Option<&ImageGrid>, reference: Option<&ImageGrid>) -> Result<()> {
    f.validate()?;
    for g in [init, reference].into_iter().flatten() {
        if g.shape() != f.shape() {
            return Err(Error::ShapeMismatch {
                left: f.shape(),
                right: g.shape(),
            });
        }
    }
    Ok(())
}

fn data_term(a: &ForwardOperator, u: &ImageGrid, f: &ImageGrid) -> f64 {
    let au = a.apply(u);
    let (x, y) = (au.as_slice(), f.as_slice());
    0.5 * par::chunked_sum(x.len(), |r| {
        x[r.clone()].iter().zip(&y[r]).map(|(p, q)| (p - q) * (p - q)).sum()
    })
}

/// `Σ ‖g − v‖₂` per pixel.
fn residual_norm_sum(g: &VectorField, v: &VectorField) -> f64 {
    par::chunked_sum(g.v1.len(), |r| {
        r.map(|k| (g.v1[k] - v.v1[k]).hypot(g.v2[k] - v.v2[k])).sum()
    })
}

/// `p ← proj_λ(p + σ(g − v̄))`; `v̄ = None` means zero.
fn dual_vec_step(p: &mut VectorField, g: &VectorField, vbar: Option<&VectorField>, sigma: f64, lambda: f64) {
    let cols = p.cols();
    par::rows2(&mut p.v1, &mut p.v2, cols, |i, r1, r2| {
        let base = i * cols;
        for j in 0..cols {
            let k = base + j;
            let (b1, b2) = vbar.map_or((0.0, 0.0), |v| (v.v1[k], v.v2[k]));
            let x = r1[j] + sigma * (g.v1[k] - b1);
            let y = r2[j] + sigma * (g.v2[k] - b2);
            let s = ball_scale(x.hypot(y), lambda);
            r1[j] = x * s;
            r2[j] = y * s;
        }
    });
}

/// `W ← proj_λ(W + σ e)` with the Frobenius norm.
fn dual_tensor_step(w: &mut SymTensorField, e: &SymTensorField, sigma: f64, lambda: f64) {
    let cols = w.cols();
    let SymTensorField { w11, w12, w22, .. } = w;
    par::rows3(w11, w12, w22, cols, |i, r11, r12, r22| {
        let base = i * cols;
        for j in 0..cols {
            let k = base + j;
            let a = r11[j] + sigma * e.w11[k];
            let b = r12[j] + sigma * e.w12[k];
            let c = r22[j] + sigma * e.w22[k];
            let s = ball_scale((a * a + 2.0 * b * b + c * c).sqrt(), lambda);
            r11[j] = a * s;
            r12[j] = b * s;
            r22[j] = c * s;
        }
    });
}

/// `q ← (q + σ(Aū − f)) / (1 + σ)`.
fn dual_data_step(q: &mut ImageGrid, a: &ForwardOperator, ubar: &ImageGrid, f: &ImageGrid, sigma: f64) {
    let au = a.apply(ubar);
    let cols = q.cols();
    let (x, y) = (au.as_slice(), f.as_slice());
    par::rows(q.as_mut_slice(), cols, |i, r| {
        let base = i * cols;
        for (j, qv) in r.iter_mut().enumerate() {
            *qv = (*qv + sigma * (x[base + j] - y[base + j])) / (1.0 + sigma);
        }
    });
}

/// `u_new = u + τ(d̃iv p − A*q)`, then `ū = 2u_new − u`.
fn primal_image_step(
    u: &mut ImageGrid,
    ubar: &mut ImageGrid,
    div_p: &ImageGrid,
    a: &ForwardOperator,
    q: &ImageGrid,
    tau: f64,
) {
    let aq = a.adjoint(q);
    let cols = u.cols();
    let (d, s) = (div_p.as_slice(), aq.as_slice());
    let ub = ubar.as_mut_slice();
    par::rows2(u.as_mut_slice(), ub, cols, |i, ru, rb| {
        let base = i * cols;
        for j in 0..cols {
            let old = ru[j];
            let new = old + tau * (d[base + j] - s[base + j]);
            ru[j] = new;
            rb[j] = 2.0 * new - old;
        }
    });
}

/// `v_new = v + τ(p + d̃iv W)`, then `v̄ = 2v_new − v`.
fn primal_field_step(v: &mut VectorField, vbar: &mut VectorField, p: &VectorField, div_w: &VectorField, tau: f64) {
    let cols = v.cols();
    for (plane, (bar, (pp, dw))) in [
        (&mut v.v1, (&mut vbar.v1, (&p.v1, &div_w.v1))),
        (&mut v.v2, (&mut vbar.v2, (&p.v2, &div_w.v2))),
    ] {
        par::rows2(plane, bar, cols, |i, rv, rb| {
            let base = i * cols;
            for j in 0..cols {
                let old = rv[j];
                let new = old + tau * (pp[base + j] + dw[base + j]);
                rv[j] = new;
                rb[j] = 2.0 * new - old;
            }
        });
    }
}

/// Counts consecutive iterations with `δ ≤ tol`.
struct StopRule {
    tol: f64,
    patience: usize,
    run: usize,
}

impl StopRule {
    fn new(cfg: &SolverConfig) -> Self {
        Self {
            tol: cfg.tol,
            patience: cfg.patience,
            run: 0,
        }
    }

    fn update(&mut self, delta: f64) -> bool {
        self.run = if delta <= self.tol { self.run + 1 } else { 0 };
        self.run >= self.patience
    }
}

fn relative_change(previous: f64, current: f64) -> f64 {
    (previous - current).abs() / previous
}

/// Solves the L²-TGV² / L²-DTGV² model. `spec.kind` must be second order.
pub fn solve_l2_dtgv2(
    f: &ImageGrid,
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
) -> Result<Solution> {
    solve_l2_dtgv2_with(f, a, spec, cfg, SolveOptions::default())
}

pub fn solve_l2_dtgv2_with(
    f: &ImageGrid,
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
    opts: SolveOptions<'_>,
) -> Result<Solution> {
    if !spec.kind.is_second_order() {
        return Err(Error::UnsupportedRegularizer(spec.kind.name()));
    }
    cfg.validate()?;
    check_input(f, opts.init, opts.reference)?;
    let (rows, cols) = f.shape();
    let dir = spec.effective_dir();
    let (lambda0, lambda1) = (spec.weights.lambda0(), spec.weights.lambda1());

    let lipschitz = estimate_lipschitz(a, spec, f.shape(), cfg.lipschitz_iters, cfg.lipschitz_seed);
    let (sigma, tau) = cfg.steps(lipschitz)?;

    let mut u = opts.init.cloned().unwrap_or_else(|| ImageGrid::zeros(rows, cols));
    let mut ubar = u.clone();
    let mut v = VectorField::zeros(rows, cols);
    let mut vbar = v.clone();
    let mut p = VectorField::zeros(rows, cols);
    let mut w = SymTensorField::zeros(rows, cols);
    let mut q = ImageGrid::zeros(rows, cols);
    let mut ws = Workspace::new(rows, cols);

    let energy_of = |u: &ImageGrid, v: &VectorField, ws: &mut Workspace| {
        dgrad_into(u, dir, &mut ws.g);
        sym_dgrad_into(v, dir, &mut ws.e);
        data_term(a, u, f) + lambda1 * residual_norm_sum(&ws.g, v) + lambda0 * norm_sum(&ws.e)
    };

    let mut log = IterationLog::default();
    let mut energy = energy_of(&u, &v, &mut ws);
    let mut converged = energy == 0.0;
    let mut stop = StopRule::new(cfg);
    let mut iter = 0;
    while !converged && iter < cfg.max_iter {
        iter += 1;
        dgrad_into(&ubar, dir, &mut ws.g);
        dual_vec_step(&mut p, &ws.g, Some(&vbar), sigma, lambda1);
        sym_dgrad_into(&vbar, dir, &mut ws.e);
        dual_tensor_step(&mut w, &ws.e, sigma, lambda0);
        dual_data_step(&mut q, a, &ubar, f, sigma);

        ddiv_vec_into(&p, dir, &mut ws.d);
        primal_image_step(&mut u, &mut ubar, &ws.d, a, &q, tau);
        ddiv_tensor_into(&w, dir, &mut ws.dt);
        primal_field_step(&mut v, &mut vbar, &p, &ws.dt, tau);

        let next = energy_of(&u, &v, &mut ws);
        if !next.is_finite() {
            return Err(Error::Diverged { iter, energy: next });
        }
        let delta = relative_change(energy, next);
        energy = next;
        log.push(IterationRecord {
            iter,
            energy,
            delta,
            psnr: opts.reference.map(|r| psnr(&u, r, 1.0)).transpose()?,
        });
        converged = stop.update(delta) || energy == 0.0;
    }

    Ok(Solution {
        u,
        v: Some(v),
        log,
        duals: Duals { p, w: Some(w), q },
        converged,
        lipschitz,
        sigma,
        tau,
    })
}

/// Solves the L²-TV / L²-DTV model. `spec.kind` must be first order.
pub fn solve_l2_first_order(
    f: &ImageGrid,
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
) -> Result<Solution> {
    solve_l2_first_order_with(f, a, spec, cfg, SolveOptions::default())
}

pub fn solve_l2_first_order_with(
    f: &ImageGrid,
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
    opts: SolveOptions<'_>,
) -> Result<Solution> {
    if spec.kind.is_second_order() {
        return Err(Error::UnsupportedRegularizer(spec.kind.name()));
    }
    cfg.validate()?;
    check_input(f, opts.init, opts.reference)?;
    let (rows, cols) = f.shape();
    let dir = spec.effective_dir();
    let lambda1 = spec.weights.lambda1();

    let lipschitz = estimate_lipschitz(a, spec, f.shape(), cfg.lipschitz_iters, cfg.lipschitz_seed);
    let (sigma, tau) = cfg.steps(lipschitz)?;

    let mut u = opts.init.cloned().unwrap_or_else(|| ImageGrid::zeros(rows, cols));
    let mut ubar = u.clone();
    let mut p = VectorField::zeros(rows, cols);
    let mut q = ImageGrid::zeros(rows, cols);
    let mut ws = Workspace::new(rows, cols);

    let energy_of = |u: &ImageGrid, ws: &mut Workspace| {
        dgrad_into(u, dir, &mut ws.g);
        data_term(a, u, f) + lambda1 * norm_sum(&ws.g)
    };

    let mut log = IterationLog::default();
    let mut energy = energy_of(&u, &mut ws);
    let mut converged = energy == 0.0;
    let mut stop = StopRule::new(cfg);
    let mut iter = 0;
    while !converged && iter < cfg.max_iter {
        iter += 1;
        dgrad_into(&ubar, dir, &mut ws.g);
        dual_vec_step(&mut p, &ws.g, None, sigma, lambda1);
        dual_data_step(&mut q, a, &ubar, f, sigma);
        ddiv_vec_into(&p, dir, &mut ws.d);
        primal_image_step(&mut u, &mut ubar, &ws.d, a, &q, tau);

        let next = energy_of(&u, &mut ws);
        if !next.is_finite() {
            return Err(Error::Diverged { iter, energy: next });
        }
        let delta = relative_change(energy, next);
        energy = next;
        log.push(IterationRecord {
            iter,
            energy,
            delta,
            psnr: opts.reference.map(|r| psnr(&u, r, 1.0)).transpose()?,
        });
        converged = stop.update(delta) || energy == 0.0;
    }

    Ok(Solution {
        u,
        v: None,
        log,
        duals: Duals { p, w: None, q },
        converged,
        lipschitz,
        sigma,
        tau,
    })
}

/// Dispatches to the first- or second-order solver by `spec.kind`.
pub fn solve(
    f: &ImageGrid,
    a: &ForwardOperator,
    spec: &RegularizerSpec,
    cfg: &SolverConfig,
    opts: SolveOptions<'_>,
) -> Result<Solution> {
    match spec.kind {
        RegKind::Tv | RegKind::Dtv => solve_l2_first_order_with(f, a, spec, cfg, opts),
        RegKind::Tgv2 | RegKind::Dtgv2 => solve_l2_dtgv2_with(f, a, spec, cfg, opts),
    }
}

/// Minimizes `λ₁‖∇̃u − v‖ + λ₀‖Ẽv‖` over `v` for fixed `u`, starting at `v = 0`.
///
/// Besides the relative-change rule, the run also stops once the energy
/// falls below `tol` times its starting value `λ₁·DTV(u)`, which covers
/// images whose minimum is zero. The lowest energy seen is reported.
pub(crate) fn minimize_relaxed(u: &ImageGrid, spec: &RegularizerSpec, cfg: &SolverConfig) -> Result<Dtgv2Value> {
    cfg.validate()?;
    u.validate()?;
    let (rows, cols) = u.shape();
    let dir = spec.effective_dir();
    let (lambda0, lambda1) = (spec.weights.lambda0(), spec.weights.lambda1());
    let stack = OperatorStack::Relaxed(dir);
    let lipschitz = power_iteration(
        &ForwardOperator::Identity,
        stack,
        u.shape(),
        cfg.lipschitz_iters,
        cfg.lipschitz_seed,
    );
    let (sigma, tau) = cfg.steps(lipschitz)?;

    let mut g = VectorField::zeros(rows, cols);
    dgrad_into(u, dir, &mut g);
    let mut v = VectorField::zeros(rows, cols);
    let mut vbar = v.clone();
    let mut p = VectorField::zeros(rows, cols);
    let mut w = SymTensorField::zeros(rows, cols);
    let mut e = SymTensorField::zeros(rows, cols);
    let mut dt = VectorField::zeros(rows, cols);

    let initial = lambda1 * norm_sum(&g);
    let mut energy = initial;
    let mut best = (initial, v.clone());
    let mut delta = 0.0;
    let mut iter = 0;
    let mut converged = initial == 0.0;
    let mut stop = StopRule::new(cfg);
    while !converged && iter < cfg.max_iter {
        iter += 1;
        dual_vec_step(&mut p, &g, Some(&vbar), sigma, lambda1);
        sym_dgrad_into(&vbar, dir, &mut e);
        dual_tensor_step(&mut w, &e, sigma, lambda0);
        ddiv_tensor_into(&w, dir, &mut dt);
        primal_field_step(&mut v, &mut vbar, &p, &dt, tau);

        sym_dgrad_into(&v, dir, &mut e);
        let next = lambda1 * residual_norm_sum(&g, &v) + lambda0 * norm_sum(&e);
        if !next.is_finite() {
            return Err(Error::Diverged { iter, energy: next });
        }
        delta = relative_change(energy, next);
        energy = next;
        if energy < best.0 {
            best = (energy, v.clone());
        }
        converged = stop.update(delta) || energy <= cfg.tol * initial;
    }
    if !converged {
        return Err(Error::NotConverged { iter, energy, delta });
    }
    Ok(Dtgv2Value {
        value: best.0,
        v: best.1,
        iterations: iter,
        delta,
    })
}
