//! Degradation models: the linear forward operator `A`, additive Gaussian
//! noise, and synthetic directional phantoms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::ImageGrid;
use crate::{par, Error, Result};

/// Normalized, truncated 1D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur {
    sigma: f64,
    radius: usize,
    kernel: Vec<f64>,
}

impl GaussianBlur {
    /// Kernel truncated at `ceil(4σ)`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
        }
        Self::with_radius(sigma, (4.0 * sigma).ceil() as usize)
    }

    pub fn with_radius(sigma: f64, radius: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
        }
        let mut kernel: Vec<f64> = (0..=2 * radius)
            .map(|k| {
                let t = k as f64 - radius as f64;
                (-t * t / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= total);
        Ok(Self { sigma, radius, kernel })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Taps `h_{−r..=r}`, summing to one.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// 1D operator on a signal of length `n`: for each output index the
    /// list of `(source index, weight)` after half-sample symmetric extension.
    fn gather_table(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        let r = self.radius as isize;
        (0..n)
            .map(|i| {
                let mut taps: Vec<(usize, f64)> = Vec::with_capacity(self.kernel.len());
                for (t, &h) in self.kernel.iter().enumerate() {
                    let src = reflect(i as isize + t as isize - r, n);
                    match taps.iter_mut().find(|(s, _)| *s == src) {
                        Some(entry) => entry.1 += h,
                        None => taps.push((src, h)),
                    }
                }
                taps
            })
            .collect()
    }

    fn scatter_table(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); n];
        for (i, taps) in self.gather_table(n).into_iter().enumerate() {
            for (src, w) in taps {
                out[src].push((i, w));
            }
        }
        out
    }
}

/// Half-sample symmetric extension: `… c b a | a b c … | c b a …`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn separable(u: &ImageGrid, col_table: &[Vec<(usize, f64)>], row_table: &[Vec<(usize, f64)>]) -> ImageGrid {
    let (rows, cols) = (u.rows(), u.cols());
    let x = u.as_slice();
    let mut tmp = ImageGrid::filled(rows, cols, 0.0);
    par::rows(tmp.as_mut_slice(), cols, |i, out| {
        let row = &x[i * cols..(i + 1) * cols];
        for (o, taps) in out.iter_mut().zip(col_table) {
            *o = taps.iter().map(|&(s, w)| w * row[s]).sum();
        }
    });
    let t = tmp.as_slice();
    let mut out = ImageGrid::filled(rows, cols, 0.0);
    par::rows(out.as_mut_slice(), cols, |i, o| {
        for &(s, w) in &row_table[i] {
            let src = &t[s * cols..(s + 1) * cols];
            for (a, b) in o.iter_mut().zip(src) {
                *a += w * b;
            }
        }
    });
    out
}

/// The linear degradation `A` of the observation model `f = A u + η`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ForwardOperator {
    #[default]
    Identity,
    GaussianBlur(GaussianBlur),
}

impl ForwardOperator {
    pub fn gaussian_blur(sigma: f64) -> Result<Self> {
        Ok(Self::GaussianBlur(GaussianBlur::new(sigma)?))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    /// Separable convolution with reflective boundary extension.
    pub fn apply(&self, u: &ImageGrid) -> ImageGrid {
        match self {
            Self::Identity => u.clone(),
            Self::GaussianBlur(b) => separable(u, &b.gather_table(u.cols()), &b.gather_table(u.rows())),
        }
    }

    /// Exact transpose of [`apply`](Self::apply), boundary extension included.
    pub fn adjoint(&self, u: &ImageGrid) -> ImageGrid {
        match self {
            Self::Identity => u.clone(),
            Self::GaussianBlur(b) => separable(u, &b.scatter_table(u.cols()), &b.scatter_table(u.rows())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseConvention {
    /// Standard deviation `level · (max u − min u)`.
    #[default]
    RangeRelative,
    /// Noise rescaled so that `‖η‖_F = level · ‖u‖_F`.
    NormRelative,
}

/// Additive white Gaussian noise; `level = 0.1` means "10 %".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
    pub convention: NoiseConvention,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Self {
        Self {
            level,
            seed,
            convention: NoiseConvention::RangeRelative,
        }
    }
}

/// Deterministic for a given seed; samples are drawn in row-major order.
pub fn add_noise(u: &ImageGrid, spec: &NoiseSpec) -> Result<ImageGrid> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::invalid(format!("noise level must be >= 0, got {}", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(u.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eta: Vec<f64> = (0..u.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scale = match spec.convention {
        NoiseConvention::RangeRelative => spec.level * (u.max() - u.min()),
        NoiseConvention::NormRelative => {
            let eta_norm = eta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if eta_norm == 0.0 {
                0.0
            } else {
                spec.level * u.norm_sq().sqrt() / eta_norm
            }
        }
    };
    let data = u.as_slice().iter().zip(&eta).map(|(x, e)| x + scale * e).collect();
    ImageGrid::from_vec(u.rows(), u.cols(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    /// Alternating constant bands, constant along the angle.
    Stripes,
    /// Sawtooth: linear ramps across the bands, constant along the angle.
    AffineStripes,
    /// Stripes with a darkened band running perpendicular to the angle.
    DarkBandStripes,
    /// Smoothed indicator of an ellipse elongated along the angle.
    Ellipse,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(Self::Stripes),
            "affine_stripes" | "affine-stripes" => Ok(Self::AffineStripes),
            "dark_band_stripes" | "dark-band-stripes" => Ok(Self::DarkBandStripes),
            "ellipse" => Ok(Self::Ellipse),
            other => Err(Error::invalid(format!("unknown phantom kind '{other}'"))),
        }
    }
}

/// `angle` in radians; `period` in pixels (ignored by the ellipse).
///
/// `extra` is the dark band width as a fraction of the size for
/// [`PhantomKind::DarkBandStripes`] (default 0.2) and the minor/major axis
/// ratio for [`PhantomKind::Ellipse`] (default 0.2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomParams {
    pub angle: f64,
    pub period: f64,
    pub extra: Option<f64>,
}

impl PhantomParams {
    pub fn new(angle: f64, period: f64) -> Self {
        Self {
            angle,
            period,
            extra: None,
        }
    }
}

const LOW: f64 = 0.1;
const HIGH: f64 = 0.9;
const SUPERSAMPLE: usize = 4;

/// Square test image with values in `[0, 1]`, antialiased by 4x4 supersampling.
pub fn phantom(kind: PhantomKind, size: usize, params: &PhantomParams) -> Result<ImageGrid> {
    if size < 16 {
        return Err(Error::invalid(format!("phantom size must be >= 16, got {size}")));
    }
    if !params.angle.is_finite() {
        return Err(Error::invalid("phantom angle must be finite"));
    }
    if kind != PhantomKind::Ellipse && !(params.period >= 4.0 && params.period.is_finite()) {
        return Err(Error::invalid(format!(
            "phantom period must be >= 4, got {}",
            params.period
        )));
    }
    let (s, c) = params.angle.sin_cos();
    let center = (size as f64 - 1.0) / 2.0;
    let period = params.period;
    let extra = params.extra;
    if let Some(e) = extra {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::invalid(format!(
                "phantom extra parameter must lie in (0, 1], got {e}"
            )));
        }
    }

    let value = |x1: f64, x2: f64| -> f64 {
        // along: coordinate in the direction of the angle; across: perpendicular
        let along = x1 * c + x2 * s;
        let across = -x1 * s + x2 * c;
        let phase = (across / period).rem_euclid(1.0);
        match kind {
            PhantomKind::Stripes => {
                if phase < 0.5 {
                    HIGH
                } else {
                    LOW
                }
            }
            PhantomKind::AffineStripes => LOW + (HIGH - LOW) * phase,
            PhantomKind::DarkBandStripes => {
                let base = if phase < 0.5 { HIGH } else { LOW };
                let half_width = 0.5 * extra.unwrap_or(0.2) * size as f64;
                if along.abs() < half_width {
                    0.3 * base
                } else {
                    base
                }
            }
            PhantomKind::Ellipse => {
                let major = 0.35 * size as f64;
                let minor = extra.unwrap_or(0.2) * major;
                let r = (along / major).powi(2) + (across / minor).powi(2);
                if r <= 1.0 {
                    HIGH
                } else {
                    LOW
                }
            }
        }
    };

    let n = SUPERSAMPLE as f64;
    let img = ImageGrid::from_fn(size, size, |i, j| {
        let mut acc = 0.0;
        for a in 0..SUPERSAMPLE {
            for b in 0..SUPERSAMPLE {
                let x1 = i as f64 - center + (a as f64 + 0.5) / n - 0.5;
                let x2 = j as f64 - center + (b as f64 + 0.5) / n - 0.5;
                acc += value(x1, x2);
            }
        }
        acc / (n * n)
    });
    if kind == PhantomKind::Ellipse {
        return Ok(ForwardOperator::gaussian_blur(1.5)?.apply(&img));
    }
    Ok(img)
}
