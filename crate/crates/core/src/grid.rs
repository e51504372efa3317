//! Pixel grids and per-pixel vector / symmetric-tensor fields.
//!
//! All containers are row-major with one contiguous plane per component.
//! Index 1 of the continuous model is the row index, index 2 the column.

use std::f64::consts::PI;

use crate::par;
use crate::{Error, Result};

fn check_shape(rows: usize, cols: usize) -> Result<()> {
    if rows < 2 || cols < 2 {
        return Err(Error::TooSmall { rows, cols });
    }
    Ok(())
}

fn check_plane(rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::LengthMismatch {
            expected: rows * cols,
            actual: data.len(),
        });
    }
    match data.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(Error::NonFinite {
            row: k / cols,
            col: k % cols,
        }),
        None => Ok(()),
    }
}

/// Common surface of the three field types.
///
/// `WEIGHTS` holds the multiplicity of each stored component in the
/// Frobenius pairing: the off-diagonal entry of a symmetric tensor
/// appears twice in the full matrix.
pub trait Field: Clone + Send + Sync {
    const WEIGHTS: &'static [f64];

    fn shape(&self) -> (usize, usize);
    fn planes(&self) -> Vec<&[f64]>;
    fn planes_mut(&mut self) -> Vec<&mut [f64]>;

    /// Zero field with the given shape. Panics if smaller than 2x2.
    fn zeros(rows: usize, cols: usize) -> Self;

    fn zeros_like(&self) -> Self {
        let (r, c) = self.shape();
        Self::zeros(r, c)
    }

    fn is_finite(&self) -> bool {
        self.planes().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

/// Scalar image `u ∈ R^{rows×cols}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid from row-major data, checking the shape and that every value is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols)?;
        check_plane(rows, cols, &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Constant image. Panics if `rows < 2` or `cols < 2`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid must be at least 2x2");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Self::filled(rows, cols, 0.0);
        for i in 0..rows {
            for j in 0..cols {
                g.data[i * cols + j] = f(i, j);
            }
        }
        g
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the pixels. Callers are responsible for keeping them finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        par::chunked_sum(self.len(), |r| self.data[r].iter().sum()) / self.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Self {
        self.map(|x| x.clamp(lo, hi))
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        par::chunked_sum(self.len(), |r| self.data[r].iter().map(|x| x * x).sum())
    }

    pub fn validate(&self) -> Result<()> {
        check_plane(self.rows, self.cols, &self.data)
    }
}

impl Field for ImageGrid {
    const WEIGHTS: &'static [f64] = &[1.0];

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn planes(&self) -> Vec<&[f64]> {
        vec![&self.data]
    }
    fn planes_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.data]
    }
    fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }
}

/// Per-pixel 2-vector `(v¹, v²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    rows: usize,
    cols: usize,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl VectorField {
    pub fn from_planes(rows: usize, cols: usize, v1: Vec<f64>, v2: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols)?;
        check_plane(rows, cols, &v1)?;
        check_plane(rows, cols, &v2)?;
        Ok(Self { rows, cols, v1, v2 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let [a, b] = f(i, j);
                out.v1[i * cols + j] = a;
                out.v2[i * cols + j] = b;
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 2] {
        let k = i * self.cols + j;
        [self.v1[k], self.v2[k]]
    }
}

impl Field for VectorField {
    const WEIGHTS: &'static [f64] = &[1.0, 1.0];

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn planes(&self) -> Vec<&[f64]> {
        vec![&self.v1, &self.v2]
    }
    fn planes_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.v1, &mut self.v2]
    }
    fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid must be at least 2x2");
        let n = rows * cols;
        Self {
            rows,
            cols,
            v1: vec![0.0; n],
            v2: vec![0.0; n],
        }
    }
}

/// Per-pixel symmetric 2x2 matrix stored as `(w¹¹, w¹², w²²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    rows: usize,
    cols: usize,
    pub w11: Vec<f64>,
    pub w12: Vec<f64>,
    pub w22: Vec<f64>,
}

impl SymTensorField {
    pub fn from_planes(rows: usize, cols: usize, w11: Vec<f64>, w12: Vec<f64>, w22: Vec<f64>) -> Result<Self> {
        check_shape(rows, cols)?;
        for p in [&w11, &w12, &w22] {
            check_plane(rows, cols, p)?;
        }
        Ok(Self {
            rows,
            cols,
            w11,
            w12,
            w22,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let k = i * cols + j;
                [out.w11[k], out.w12[k], out.w22[k]] = f(i, j);
            }
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> [f64; 3] {
        let k = i * self.cols + j;
        [self.w11[k], self.w12[k], self.w22[k]]
    }
}

impl Field for SymTensorField {
    const WEIGHTS: &'static [f64] = &[1.0, 2.0, 1.0];

    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn planes(&self) -> Vec<&[f64]> {
        vec![&self.w11, &self.w12, &self.w22]
    }
    fn planes_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w11, &mut self.w12, &mut self.w22]
    }
    fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid must be at least 2x2");
        let n = rows * cols;
        Self {
            rows,
            cols,
            w11: vec![0.0; n],
            w12: vec![0.0; n],
            w22: vec![0.0; n],
        }
    }
}

fn same_shape<F: Field>(x: &F, y: &F) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape(),
            right: y.shape(),
        });
    }
    Ok(())
}

/// Frobenius pairing `Σ_pixels Σ_k weight_k · x_k · y_k`.
pub fn inner_product<F: Field>(x: &F, y: &F) -> Result<f64> {
    same_shape(x, y)?;
    let (xp, yp) = (x.planes(), y.planes());
    let len = xp[0].len();
    Ok(par::chunked_sum(len, |r| {
        let mut s = 0.0;
        for ((a, b), w) in xp.iter().zip(&yp).zip(F::WEIGHTS) {
            s += w * a[r.clone()].iter().zip(&b[r.clone()]).map(|(p, q)| p * q).sum::<f64>();
        }
        s
    }))
}

/// Per-pixel Euclidean norm (vectors) or Frobenius norm with the doubled
/// off-diagonal term (symmetric tensors).
pub fn pointwise_norm<F: Field>(field: &F) -> ImageGrid {
    let (rows, cols) = field.shape();
    let planes = field.planes();
    let mut out = ImageGrid::filled(rows, cols, 0.0);
    par::rows(out.as_mut_slice(), cols, |i, row| {
        let base = i * cols;
        for (j, o) in row.iter_mut().enumerate() {
            let k = base + j;
            let s: f64 = planes.iter().zip(F::WEIGHTS).map(|(p, w)| w * p[k] * p[k]).sum();
            *o = s.sqrt();
        }
    });
    out
}

/// Sum over pixels of [`pointwise_norm`].
pub fn norm_sum<F: Field>(field: &F) -> f64 {
    let planes = field.planes();
    par::chunked_sum(planes[0].len(), |r| {
        r.map(|k| {
            planes
                .iter()
                .zip(F::WEIGHTS)
                .map(|(p, w)| w * p[k] * p[k])
                .sum::<f64>()
                .sqrt()
        })
        .sum()
    })
}

/// Peak signal-to-noise ratio in dB: `10·log10(peak²·N / Σ(u−ref)²)`.
///
/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    same_shape(u, reference)?;
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let (a, b) = (u.as_slice(), reference.as_slice());
    let sse = par::chunked_sum(a.len(), |r| {
        a[r.clone()].iter().zip(&b[r]).map(|(x, y)| (x - y) * (x - y)).sum()
    });
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak * a.len() as f64 / sse).log10())
}

/// Orientation `theta` and anisotropy `a` of a directional regularizer.
///
/// `theta` is measured from the row axis toward the column axis and kept
/// in `[0, π)`; the directional functionals do not distinguish `θ` from `θ+π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionParams {
    theta: f64,
    a: f64,
}

impl DirectionParams {
    pub fn new(theta: f64, a: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::invalid("direction angle must be finite"));
        }
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::invalid(format!("anisotropy must lie in (0, 1], got {a}")));
        }
        Ok(Self {
            theta: normalize_half_turn(theta),
            a,
        })
    }

    /// `θ = 0`, `a = 1`: the directional operators reduce to the isotropic ones.
    pub const fn isotropic() -> Self {
        Self { theta: 0.0, a: 1.0 }
    }

    pub fn from_degrees(degrees: f64, a: f64) -> Result<Self> {
        Self::new(degrees.to_radians(), a)
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    /// `Λ_a R_{−θ}` as `[[m11, m12], [m21, m22]]`.
    #[inline]
    pub fn analysis_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.theta.sin_cos();
        [[c, s], [-self.a * s, self.a * c]]
    }

    /// `R_θ Λ_a`, the transpose of [`analysis_matrix`](Self::analysis_matrix).
    #[inline]
    pub fn synthesis_matrix(&self) -> [[f64; 2]; 2] {
        let m = self.analysis_matrix();
        [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
    }
}

impl Default for DirectionParams {
    fn default() -> Self {
        Self::isotropic()
    }
}

/// Maps an angle into `[0, π)`.
pub fn normalize_half_turn(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t >= PI {
        0.0
    } else {
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(rng: &mut ChaCha8Rng, r: usize, c: usize) -> VectorField {
        VectorField::from_fn(r, c, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
    }

    #[test]
    fn rejects_small_or_non_finite_grids() {
        assert!(matches!(
            ImageGrid::from_vec(1, 4, vec![0.0; 4]),
            Err(Error::TooSmall { .. })
        ));
        assert!(matches!(
            ImageGrid::from_vec(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            ImageGrid::from_vec(2, 2, vec![0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn inner_product_trivial_values() {
        let ones = ImageGrid::filled(2, 2, 1.0);
        assert_eq!(inner_product(&ones, &ones).unwrap(), 4.0);
        let zero = ImageGrid::filled(3, 5, 0.0);
        let y = ImageGrid::from_fn(3, 5, |i, j| (i * 7 + j) as f64);
        assert_eq!(inner_product(&zero, &y).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_vectors(&mut rng, 5, 5);
        let y = random_vectors(&mut rng, 5, 5);
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let (a, b) = (x.get(i, j), y.get(i, j));
                oracle += a[0] * b[0] + a[1] * b[1];
            }
        }
        assert_relative_eq!(inner_product(&x, &y).unwrap(), oracle, max_relative = 1e-14);
    }

    #[test]
    fn inner_product_shape_mismatch() {
        let a = ImageGrid::filled(2, 3, 1.0);
        let b = ImageGrid::filled(3, 2, 1.0);
        assert!(matches!(inner_product(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn pointwise_norm_examples() {
        let v = VectorField::from_fn(2, 2, |_, _| [3.0, 4.0]);
        assert!(pointwise_norm(&v).as_slice().iter().all(|&n| n == 5.0));
        let t = SymTensorField::from_fn(2, 2, |_, _| [1.0, 0.0, 0.0]);
        assert!(pointwise_norm(&t).as_slice().iter().all(|&n| n == 1.0));
        let t = SymTensorField::from_fn(2, 2, |_, _| [0.0, 1.0, 0.0]);
        assert!(pointwise_norm(&t).as_slice().iter().all(|&n| n == 2f64.sqrt()));
    }

    #[test]
    fn squared_norms_sum_to_self_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = SymTensorField::from_fn(6, 4, |_, _| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        });
        let n = pointwise_norm(&t);
        let sum_sq: f64 = n.as_slice().iter().map(|x| x * x).sum();
        assert_relative_eq!(sum_sq, inner_product(&t, &t).unwrap(), max_relative = 1e-13);
        let v = random_vectors(&mut rng, 4, 6);
        let n = pointwise_norm(&v);
        let sum_sq: f64 = n.as_slice().iter().map(|x| x * x).sum();
        assert_relative_eq!(sum_sq, inner_product(&v, &v).unwrap(), max_relative = 1e-13);
        assert_relative_eq!(norm_sum(&v), n.as_slice().iter().sum::<f64>(), max_relative = 1e-13);
    }

    #[test]
    fn psnr_examples() {
        let r = ImageGrid::from_fn(4, 4, |i, j| (i + j) as f64 / 8.0);
        assert_eq!(psnr(&r, &r, 1.0).unwrap(), f64::INFINITY);
        let u = r.map(|x| x + 0.1);
        assert_relative_eq!(psnr(&u, &r, 1.0).unwrap(), 20.0, max_relative = 1e-12);
        assert!(psnr(&u, &r, 0.0).is_err());
    }

    #[test]
    fn psnr_matches_direct_formula_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ImageGrid::from_fn(7, 9, |_, _| rng.random::<f64>());
        let b = ImageGrid::from_fn(7, 9, |_, _| rng.random::<f64>());
        let mse: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 63.0;
        let oracle = 10.0 * (0.8f64 * 0.8 / mse).log10();
        assert_relative_eq!(psnr(&a, &b, 0.8).unwrap(), oracle, max_relative = 1e-12);
        assert_eq!(psnr(&a, &b, 0.8).unwrap(), psnr(&b, &a, 0.8).unwrap());
    }

    #[test]
    fn direction_params_normalize_and_validate() {
        let d = DirectionParams::new(PI + 0.25, 0.5).unwrap();
        assert_relative_eq!(d.theta(), 0.25, epsilon = 1e-15);
        let d = DirectionParams::new(-0.25, 0.5).unwrap();
        assert_relative_eq!(d.theta(), PI - 0.25, epsilon = 1e-15);
        assert!(DirectionParams::new(0.0, 0.0).is_err());
        assert!(DirectionParams::new(0.0, 1.5).is_err());
        assert!(DirectionParams::new(f64::NAN, 0.5).is_err());
        assert!(DirectionParams::new(0.0, 1.0).is_ok());
    }
}
