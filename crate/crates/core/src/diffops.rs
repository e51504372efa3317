//! Finite-difference operators on the pixel grid.
//!
//! * `grad` uses forward differences with a zero last row/column, `div` is
//!   its exact negative adjoint (backward differences with boundary terms).
//! * The directional variants insert `Λ_a R_{−θ}` after the gradient and
//!   `R_θ Λ_a` before the divergence.
//! * `sym_dgrad` builds the symmetrized directional Jacobian of a vector field
//!   from interior backward differences (zero on the first and last row/column,
//!   so that the gradient of an affine image lies in its kernel) and
//!   `ddiv_tensor` is its exact negative adjoint under the Frobenius pairing.
//!
//! Every operator has an `_into` form writing into a preallocated output.

use crate::grid::{DirectionParams, Field, ImageGrid, SymTensorField, VectorField};
use crate::par;

/// Which of the two per-pixel linear maps [`rotate_scale`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotateScale {
    /// `Λ_a R_{−θ}`, used after the gradient.
    Analysis,
    /// `R_θ Λ_a`, used before the divergence.
    Synthesis,
}

#[inline]
fn apply2(m: &[[f64; 2]; 2], x: f64, y: f64) -> (f64, f64) {
    (m[0][0] * x + m[0][1] * y, m[1][0] * x + m[1][1] * y)
}

fn assert_same_shape<A: Field, B: Field>(a: &A, b: &B) {
    assert_eq!(a.shape(), b.shape(), "operator input/output shape mismatch");
}

pub fn rotate_scale(field: &VectorField, dir: DirectionParams, mode: RotateScale) -> VectorField {
    let m = match mode {
        RotateScale::Analysis => dir.analysis_matrix(),
        RotateScale::Synthesis => dir.synthesis_matrix(),
    };
    let cols = field.cols();
    let mut out = field.zeros_like();
    par::rows2(&mut out.v1, &mut out.v2, cols, |i, o1, o2| {
        let base = i * cols;
        for j in 0..cols {
            let (a, b) = apply2(&m, field.v1[base + j], field.v2[base + j]);
            o1[j] = a;
            o2[j] = b;
        }
    });
    out
}

pub fn grad(u: &ImageGrid) -> VectorField {
    let mut out = VectorField::zeros(u.rows(), u.cols());
    grad_into(u, &mut out);
    out
}

pub fn grad_into(u: &ImageGrid, out: &mut VectorField) {
    dgrad_into(u, DirectionParams::isotropic(), out);
}

pub fn div(p: &VectorField) -> ImageGrid {
    let mut out = ImageGrid::zeros(p.rows(), p.cols());
    div_into(p, &mut out);
    out
}

pub fn div_into(p: &VectorField, out: &mut ImageGrid) {
    ddiv_vec_into(p, DirectionParams::isotropic(), out);
}

/// `(∇̃u)_{i,j} = Λ_a R_{−θ} (∇u)_{i,j}`.
pub fn dgrad(u: &ImageGrid, dir: DirectionParams) -> VectorField {
    let mut out = VectorField::zeros(u.rows(), u.cols());
    dgrad_into(u, dir, &mut out);
    out
}

pub fn dgrad_into(u: &ImageGrid, dir: DirectionParams, out: &mut VectorField) {
    assert_same_shape(u, out);
    let (rows, cols) = (u.rows(), u.cols());
    let m = dir.analysis_matrix();
    let x = u.as_slice();
    let iso = dir == DirectionParams::isotropic();
    par::rows2(&mut out.v1, &mut out.v2, cols, |i, o1, o2| {
        let base = i * cols;
        for j in 0..cols {
            let k = base + j;
            let g1 = if i + 1 < rows { x[k + cols] - x[k] } else { 0.0 };
            let g2 = if j + 1 < cols { x[k + 1] - x[k] } else { 0.0 };
            if iso {
                o1[j] = g1;
                o2[j] = g2;
            } else {
                (o1[j], o2[j]) = apply2(&m, g1, g2);
            }
        }
    });
}

/// `d̃iv p = div(R_θ Λ_a p)`, the negative adjoint of [`dgrad`].
pub fn ddiv_vec(p: &VectorField, dir: DirectionParams) -> ImageGrid {
    let mut out = ImageGrid::zeros(p.rows(), p.cols());
    ddiv_vec_into(p, dir, &mut out);
    out
}

pub fn ddiv_vec_into(p: &VectorField, dir: DirectionParams, out: &mut ImageGrid) {
    assert_same_shape(p, out);
    let (rows, cols) = (p.rows(), p.cols());
    let m = dir.synthesis_matrix();
    let iso = dir == DirectionParams::isotropic();
    let q = |k: usize| {
        if iso {
            (p.v1[k], p.v2[k])
        } else {
            apply2(&m, p.v1[k], p.v2[k])
        }
    };
    par::rows(out.as_mut_slice(), cols, |i, o| {
        let base = i * cols;
        for (j, oj) in o.iter_mut().enumerate() {
            let k = base + j;
            let here = q(k);
            let d1 = if i == 0 {
                here.0
            } else if i + 1 == rows {
                -q(k - cols).0
            } else {
                here.0 - q(k - cols).0
            };
            let d2 = if j == 0 {
                here.1
            } else if j + 1 == cols {
                -q(k - 1).1
            } else {
                here.1 - q(k - 1).1
            };
            *oj = d1 + d2;
        }
    });
}

/// Symmetrized directional derivative `Ẽv = ½(Λ_a R_{−θ} J + Jᵀ R_θ Λ_a)` where
/// `J = [[∂₁v¹, ∂₁v²], [∂₂v¹, ∂₂v²]]` holds interior backward differences.
pub fn sym_dgrad(v: &VectorField, dir: DirectionParams) -> SymTensorField {
    let mut out = SymTensorField::zeros(v.rows(), v.cols());
    sym_dgrad_into(v, dir, &mut out);
    out
}

pub fn sym_dgrad_into(v: &VectorField, dir: DirectionParams, out: &mut SymTensorField) {
    assert_same_shape(v, out);
    let (rows, cols) = (v.rows(), v.cols());
    let b = dir.analysis_matrix();
    let SymTensorField { w11, w12, w22, .. } = out;
    par::rows3(w11, w12, w22, cols, |i, o11, o12, o22| {
        let base = i * cols;
        let row_interior = i >= 1 && i + 2 <= rows;
        for j in 0..cols {
            let k = base + j;
            let (d1v1, d1v2) = if row_interior {
                (v.v1[k] - v.v1[k - cols], v.v2[k] - v.v2[k - cols])
            } else {
                (0.0, 0.0)
            };
            let (d2v1, d2v2) = if j >= 1 && j + 2 <= cols {
                (v.v1[k] - v.v1[k - 1], v.v2[k] - v.v2[k - 1])
            } else {
                (0.0, 0.0)
            };
            // P = B·J with J = [[d1v1, d1v2], [d2v1, d2v2]]
            let p11 = b[0][0] * d1v1 + b[0][1] * d2v1;
            let p12 = b[0][0] * d1v2 + b[0][1] * d2v2;
            let p21 = b[1][0] * d1v1 + b[1][1] * d2v1;
            let p22 = b[1][0] * d1v2 + b[1][1] * d2v2;
            o11[j] = p11;
            o12[j] = 0.5 * (p12 + p21);
            o22[j] = p22;
        }
    });
}

/// Directional tensor divergence, the negative adjoint of [`sym_dgrad`].
///
/// Forms `W̃ = R_θ Λ_a W` per pixel and contracts its row index with the
/// forward differences dual to the interior backward stencil:
/// `(d̃iv W)_c = ∂₁W̃_{1c} + ∂₂W̃_{2c}`.
pub fn ddiv_tensor(w: &SymTensorField, dir: DirectionParams) -> VectorField {
    let mut out = VectorField::zeros(w.rows(), w.cols());
    ddiv_tensor_into(w, dir, &mut out);
    out
}

pub fn ddiv_tensor_into(w: &SymTensorField, dir: DirectionParams, out: &mut VectorField) {
    assert_same_shape(w, out);
    let (rows, cols) = (w.rows(), w.cols());
    let s = dir.synthesis_matrix();
    // W̃ = S·W as [x11, x12, x21, x22]
    let wt = |k: usize| {
        let (a, b, c) = (w.w11[k], w.w12[k], w.w22[k]);
        [
            s[0][0] * a + s[0][1] * b,
            s[0][0] * b + s[0][1] * c,
            s[1][0] * a + s[1][1] * b,
            s[1][0] * b + s[1][1] * c,
        ]
    };
    par::rows2(&mut out.v1, &mut out.v2, cols, |i, o1, o2| {
        let base = i * cols;
        let here_row = i >= 1 && i + 2 <= rows;
        let next_row = i + 3 <= rows;
        for j in 0..cols {
            let k = base + j;
            let here_col = j >= 1 && j + 2 <= cols;
            let next_col = j + 3 <= cols;
            let cur = if here_row || here_col { wt(k) } else { [0.0; 4] };
            // forward difference along rows of x_{1c}
            let (mut a1, mut a2) = (0.0, 0.0);
            if next_row {
                let n = wt(k + cols);
                a1 += n[0];
                a2 += n[1];
            }
            if here_row {
                a1 -= cur[0];
                a2 -= cur[1];
            }
            // forward difference along columns of x_{2c}
            if next_col {
                let n = wt(k + 1);
                a1 += n[2];
                a2 += n[3];
            }
            if here_col {
                a1 -= cur[2];
                a2 -= cur[3];
            }
            o1[j] = a1;
            o2[j] = a2;
        }
    });
}
