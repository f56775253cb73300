//! Dense complex linear algebra, Gaussian sampling and normal-tail functions.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Relative tolerance used when accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues below `-PSD_TOL * max|eig|` reject a matrix as not PSD.
pub const PSD_TOL: f64 = 1e-10;
const JITTER_SCALE: f64 = 1e-12;
const JITTER_TRIES: usize = 3;
const GEN_EIG_MAX_COND: f64 = 1e14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("matrix is singular or too ill-conditioned (condition {condition:e})")]
    Singular { condition: f64 },
    #[error("argument {0} is outside the function domain")]
    OutOfDomain(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix is not Hermitian (max deviation {max_dev:e})")]
    NotHermitian { max_dev: f64 },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Square complex matrix equal to its own conjugate transpose.
///
/// The stored entries are exactly Hermitian: construction averages the input
/// with its adjoint after checking the deviation is at rounding level.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(NumericsError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let scale = m.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
        let n = m.nrows();
        let mut max_dev = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                max_dev = max_dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        if max_dev > HERMITIAN_TOL * scale {
            return Err(NumericsError::NotHermitian { max_dev });
        }
        Ok(Self::symmetrize(m))
    }

    /// Hermitian part `(m + mᴴ)/2` without any check.
    pub fn symmetrize(m: CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "Hermitian part of a non-square matrix");
        let adj = m.adjoint();
        Self((m + adj) * C64::new(0.5, 0.0))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n, n))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(d[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    /// `v vᴴ`.
    pub fn outer(v: &ComplexVector) -> Self {
        Self::symmetrize(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * C64::new(s, 0.0))
    }

    pub fn add_scaled_identity(&self, s: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..self.dim() {
            m[(i, i)] += s;
        }
        Self(m)
    }

    /// Real value of `vᴴ A v`.
    pub fn quad_form(&self, v: &ComplexVector) -> f64 {
        let av = &self.0 * v;
        v.dotc(&av).re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn is_psd(&self) -> bool {
        check_psd(&self.eigenvalues()).is_ok()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scaled(rhs)
    }
}

fn check_psd(sorted_eigs: &[f64]) -> Result<()> {
    let (Some(&min_eig), Some(&max_eig)) = (sorted_eigs.first(), sorted_eigs.last()) else {
        return Ok(());
    };
    let scale = min_eig.abs().max(max_eig.abs());
    if min_eig < -PSD_TOL * scale {
        return Err(NumericsError::NotPsd { min_eig, max_eig });
    }
    Ok(())
}

/// Reproducible random stream. Children are derived by hashing the parent seed
/// with an index, so parallel trials never share a stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream number `index` derived from this generator's seed.
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Draw from CN(0, 1).
    pub fn complex_normal(&mut self) -> C64 {
        C64::new(
            self.standard_normal() * FRAC_1_SQRT_2,
            self.standard_normal() * FRAC_1_SQRT_2,
        )
    }

    pub fn complex_normal_vector(&mut self, n: usize) -> ComplexVector {
        ComplexVector::from_fn(n, |_, _| self.complex_normal())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Square-root factor `F` with `F Fᴴ = cov`, reusable across many draws.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: CMatrix,
}

impl GaussianSampler {
    pub fn new(cov: &HermitianMatrix) -> Result<Self> {
        Ok(Self {
            factor: psd_sqrt_factor(cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &CMatrix {
        &self.factor
    }

    pub fn sample(&self, rng: &mut SeededRng) -> ComplexVector {
        let w = rng.complex_normal_vector(self.factor.ncols());
        &self.factor * w
    }
}

/// Cholesky factor when it exists, otherwise `V diag(√λ)` from an
/// eigendecomposition, which keeps rank-deficient directions exactly null.
pub fn psd_sqrt_factor(cov: &HermitianMatrix) -> Result<CMatrix> {
    if let Some(ch) = cov.matrix().clone().cholesky() {
        let l = ch.l();
        if (0..l.nrows()).all(|i| l[(i, i)].re > 0.0 && l[(i, i)].im.abs() <= 1e-12 * l[(i, i)].re) {
            return Ok(l);
        }
    }
    let eig = cov.matrix().clone().symmetric_eigen();
    let mut sorted: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    check_psd(&sorted)?;
    let n = cov.dim();
    let mut f = eig.eigenvectors;
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    Ok(f)
}

pub fn sample_complex_gaussian(cov: &HermitianMatrix, rng: &mut SeededRng) -> Result<ComplexVector> {
    Ok(GaussianSampler::new(cov)?.sample(rng))
}

/// Solves `C X = rhs` for Hermitian positive definite `C`, adding a small
/// diagonal jitter when the factorization fails.
pub fn hpd_solve(c: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let n = c.nrows();
    if rhs.nrows() != n {
        return Err(NumericsError::DimMismatch {
            left: n,
            right: rhs.nrows(),
        });
    }
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    let tr: f64 = (0..n).map(|i| c[(i, i)].re).sum();
    let base = JITTER_SCALE * (tr / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = base;
    for _ in 0..JITTER_TRIES {
        let mut m = c.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Ok(ch.solve(rhs));
        }
        jitter *= 10.0;
    }
    Err(NumericsError::Singular {
        condition: f64::INFINITY,
    })
}

/// Real part of `tr(AB)`.
pub fn trace_product(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(NumericsError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(trace_product_raw(a.matrix(), b.matrix()))
}

pub(crate) fn trace_product_raw(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (a[(i, j)], b[(j, i)]);
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// Rotates `v` so that its first non-negligible entry is real and nonnegative.
pub fn phase_normalize(v: &mut ComplexVector) {
    let peak = v.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if peak == 0.0 {
        return;
    }
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-12 * peak).copied() {
        let rot = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

#[derive(Debug, Clone)]
pub struct GeneralizedEigenpair {
    pub vector: ComplexVector,
    pub value: f64,
}

/// Unit-norm maximizer of `xᴴAx / xᴴBx` by Cholesky whitening of `B`.
pub fn dominant_generalized_eigpair(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<GeneralizedEigenpair> {
    if a.dim() != b.dim() {
        return Err(NumericsError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let b_eigs = b.eigenvalues();
    let (lo, hi) = (b_eigs[0], b_eigs[b_eigs.len() - 1]);
    if lo <= 0.0 || hi / lo > GEN_EIG_MAX_COND {
        return Err(NumericsError::Singular {
            condition: if lo <= 0.0 { f64::INFINITY } else { hi / lo },
        });
    }
    let l = b
        .matrix()
        .clone()
        .cholesky()
        .ok_or(NumericsError::Singular { condition: hi / lo })?
        .l();
    // W = L⁻¹ A L⁻ᴴ
    let x = l
        .solve_lower_triangular(a.matrix())
        .ok_or(NumericsError::Singular { condition: hi / lo })?;
    let w = l
        .solve_lower_triangular(&x.adjoint())
        .ok_or(NumericsError::Singular { condition: hi / lo })?;
    let eig = HermitianMatrix::symmetrize(w).into_inner().symmetric_eigen();
    let (imax, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|p, q| p.1.total_cmp(q.1))
        .expect("nonempty spectrum");
    let y = eig.eigenvectors.column(imax).into_owned();
    let mut v = l
        .adjoint()
        .solve_upper_triangular(&y)
        .ok_or(NumericsError::Singular { condition: hi / lo })?;
    let norm = v.norm();
    v /= C64::new(norm, 0.0);
    phase_normalize(&mut v);
    let value = a.quad_form(&v) / b.quad_form(&v);
    Ok(GeneralizedEigenpair { vector: v, value })
}

pub fn dominant_generalized_eigvec(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<ComplexVector> {
    dominant_generalized_eigpair(a, b).map(|p| p.vector)
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_SWITCH: f64 = 8.0;

/// Mills ratio `Q(x)/φ(x)` for large positive `x` by a continued fraction.
fn mills_ratio(x: f64) -> f64 {
    // R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...)))), evaluated with modified Lentz.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Natural log of the standard normal right tail.
pub fn log_q_function(x: f64) -> f64 {
    if x > TAIL_SWITCH {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(x).ln()
    } else {
        q_function_unclamped(x).ln()
    }
}

fn q_function_unclamped(x: f64) -> f64 {
    if x > TAIL_SWITCH {
        log_q_function(x).exp()
    } else if x < -TAIL_SWITCH {
        1.0 - log_q_function(-x).exp()
    } else {
        0.5 * libm::erfc(x / SQRT_2)
    }
}

/// Standard normal right-tail probability.
///
/// Far in the upper tail the value is computed in the log domain and clamped
/// to `f64::MIN_POSITIVE`, so `Q(x) > 0` for every finite `x`.
pub fn q_function(x: f64) -> f64 {
    q_function_unclamped(x).max(f64::MIN_POSITIVE)
}

/// Lower-tail normal quantile (Acklam's rational approximation, ~1e-9).
fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse of [`q_function`] on (0, 1).
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::OutOfDomain(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -acklam_quantile(p);
    for _ in 0..4 {
        let f = q_function_unclamped(x) - p;
        let phi = (-0.5 * x * x - LN_SQRT_2PI).exp();
        if phi == 0.0 {
            break;
        }
        let step = f / (phi - 0.5 * f * x);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
