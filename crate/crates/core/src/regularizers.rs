//! TV, DTV, TGV² and DTGV² energies and the ball projections used as
//! proximal maps of the dual variables.
//!
//! Second-order energies are evaluated in the min-form
//! `λ₁ Σ‖∇̃u − v‖ + λ₀ Σ‖Ẽv‖`, either for a given `v`
//! ([`relaxed_energy`]) or minimized over `v` ([`eval_dtgv2`]).

use crate::diffops::{dgrad, sym_dgrad};
use crate::grid::{norm_sum, DirectionParams, Field, ImageGrid, VectorField};
use crate::solver::{minimize_relaxed, SolverConfig};
use crate::{par, Error, Result};

/// `(λ₀, λ₁)`: second- and first-order weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegWeights {
    lambda0: f64,
    lambda1: f64,
}

impl RegWeights {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        for (name, x) in [("lambda0", lambda0), ("lambda1", lambda1)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {x}")));
            }
        }
        Ok(Self { lambda0, lambda1 })
    }

    /// `λ₀ = ratio · λ₁`.
    pub fn with_ratio(lambda1: f64, ratio: f64) -> Result<Self> {
        Self::new(ratio * lambda1, lambda1)
    }

    /// Default ratio `λ₀/λ₁ = 2`.
    pub fn from_lambda1(lambda1: f64) -> Result<Self> {
        Self::with_ratio(lambda1, 2.0)
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    Tv,
    Dtv,
    Tgv2,
    Dtgv2,
}

impl RegKind {
    pub fn is_second_order(self) -> bool {
        matches!(self, Self::Tgv2 | Self::Dtgv2)
    }

    pub fn is_directional(self) -> bool {
        matches!(self, Self::Dtv | Self::Dtgv2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tv => "TV",
            Self::Dtv => "DTV",
            Self::Tgv2 => "TGV2",
            Self::Dtgv2 => "DTGV2",
        }
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tv" => Ok(Self::Tv),
            "dtv" => Ok(Self::Dtv),
            "tgv" | "tgv2" => Ok(Self::Tgv2),
            "dtgv" | "dtgv2" => Ok(Self::Dtgv2),
            other => Err(Error::invalid(format!("unknown regularizer '{other}'"))),
        }
    }
}

/// A regularizer selection. TV and TGV² ignore `dir`; TV and DTV ignore `λ₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub weights: RegWeights,
    pub dir: DirectionParams,
}

impl RegularizerSpec {
    pub fn new(kind: RegKind, weights: RegWeights, dir: DirectionParams) -> Self {
        Self { kind, weights, dir }
    }

    /// Direction actually used by the operators.
    pub fn effective_dir(&self) -> DirectionParams {
        if self.kind.is_directional() {
            self.dir
        } else {
            DirectionParams::isotropic()
        }
    }
}

/// `Σ ‖(∇u)_{i,j}‖₂`.
pub fn tv_energy(u: &ImageGrid) -> f64 {
    dtv_energy(u, DirectionParams::isotropic())
}

/// `Σ ‖(∇̃u)_{i,j}‖₂`.
pub fn dtv_energy(u: &ImageGrid, dir: DirectionParams) -> f64 {
    norm_sum(&dgrad(u, dir))
}

/// `λ₁ Σ‖∇̃u − v‖₂ + λ₀ Σ‖Ẽv‖_F` for a fixed auxiliary field `v`.
pub fn relaxed_energy(u: &ImageGrid, v: &VectorField, spec: &RegularizerSpec) -> Result<f64> {
    if !spec.kind.is_second_order() {
        return Err(Error::UnsupportedRegularizer(spec.kind.name()));
    }
    if u.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            left: u.shape(),
            right: v.shape(),
        });
    }
    let dir = spec.effective_dir();
    let g = dgrad(u, dir);
    let first = par::chunked_sum(g.v1.len(), |r| {
        r.map(|k| (g.v1[k] - v.v1[k]).hypot(g.v2[k] - v.v2[k])).sum()
    });
    let second = norm_sum(&sym_dgrad(v, dir));
    Ok(spec.weights.lambda1() * first + spec.weights.lambda0() * second)
}

/// Result of minimizing the relaxed energy over the auxiliary field.
#[derive(Debug, Clone)]
pub struct Dtgv2Value {
    /// Lowest relaxed energy reached; an upper bound of the exact minimum.
    pub value: f64,
    pub v: VectorField,
    pub iterations: usize,
    /// Last relative energy change.
    pub delta: f64,
}

/// `min_v λ₁‖∇̃u − v‖ + λ₀‖Ẽv‖`, solved with the primal-dual iteration
/// without data term. `spec.kind` must be second order.
pub fn eval_dtgv2(u: &ImageGrid, spec: &RegularizerSpec, cfg: &SolverConfig) -> Result<Dtgv2Value> {
    if !spec.kind.is_second_order() {
        return Err(Error::UnsupportedRegularizer(spec.kind.name()));
    }
    minimize_relaxed(u, spec, cfg)
}

/// Scale applied to a pixel of norm `norm` by the projection onto the `λ`-ball.
#[inline]
pub(crate) fn ball_scale(norm: f64, lambda: f64) -> f64 {
    1.0 / (norm / lambda).max(1.0)
}

/// Per-pixel projection `ξ / max(1, ‖ξ‖/λ)` with the field's pointwise norm.
pub fn project_ball<F: Field>(xi: &F, lambda: f64) -> F {
    assert!(lambda > 0.0, "projection radius must be positive");
    let mut out = xi.clone();
    project_ball_in_place(&mut out, lambda);
    out
}

pub fn project_ball_in_place<F: Field>(xi: &mut F, lambda: f64) {
    let (_, cols) = xi.shape();
    let mut planes = xi.planes_mut();
    match planes.as_mut_slice() {
        [a] => par::rows(a, cols, |_, ra| {
            for x in ra.iter_mut() {
                *x *= ball_scale(x.abs(), lambda);
            }
        }),
        [a, b] => par::rows2(a, b, cols, |_, ra, rb| {
            for (x, y) in ra.iter_mut().zip(rb.iter_mut()) {
                let s = ball_scale(x.hypot(*y), lambda);
                *x *= s;
                *y *= s;
            }
        }),
        [a, b, c] => {
            let w = F::WEIGHTS;
            par::rows3(a, b, c, cols, |_, ra, rb, rc| {
                for ((x, y), z) in ra.iter_mut().zip(rb.iter_mut()).zip(rc.iter_mut()) {
                    let n = (w[0] * *x * *x + w[1] * *y * *y + w[2] * *z * *z).sqrt();
                    let s = ball_scale(n, lambda);
                    *x *= s;
                    *y *= s;
                    *z *= s;
                }
            })
        }
        _ => unreachable!("fields have one to three planes"),
    }
}
