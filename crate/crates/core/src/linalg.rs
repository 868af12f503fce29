//! Small complex linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// One draw of CN(0, variance).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMat {
    // column-major fill keeps the draw order stable across nalgebra versions
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_normal(rng, variance);
        }
    }
    m
}

pub fn complex_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVec {
    CVec::from_fn(len, |_, _| complex_normal(rng, variance))
}

/// Squared Frobenius norm.
pub fn frob_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// `tr(A^H B)` without forming the product.
pub fn inner(a: &CMat, b: &CMat) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Real-valued view of a complex vector as a real column matrix, used by tests.
pub fn real_parts(v: &CVec) -> Vec<f64> {
    v.iter().map(|z| z.re).collect()
}

/// `(G + ridge * I)^power` for a Hermitian positive semidefinite `G`.
///
/// Eigenvalues are clamped at zero before the ridge is added so that tiny
/// negative round-off does not produce NaNs for fractional powers.
pub fn hermitian_power(g: &CMat, power: f64, ridge: f64) -> CMat {
    let n = g.nrows();
    let sym = (g + g.adjoint()).map(|z| z * 0.5);
    let eig = sym.symmetric_eigen();
    let mut out = CMat::zeros(n, n);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        let lam = lambda.max(0.0) + ridge;
        let scale = if lam == 0.0 { 0.0 } else { lam.powf(power) };
        if scale == 0.0 {
            continue;
        }
        let u = eig.eigenvectors.column(idx);
        out += (u * u.adjoint()).map(|z| z * scale);
    }
    out
}

/// Pivot ratio below which [`solve_hpd`] declares the system singular.
pub const HPD_PIVOT_RATIO: f64 = 1e-13;

/// Solves `A X = B` for Hermitian positive-definite `A`; `None` when the
/// factorization fails or a squared pivot falls below [`HPD_PIVOT_RATIO`]
/// times the largest diagonal entry of `A`.
pub fn solve_hpd(a: CMat, b: &CMat) -> Option<CMat> {
    let scale = a.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows()).map(|i| l[(i, i)].norm_sqr()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > HPD_PIVOT_RATIO * scale) {
        return None;
    }
    Some(chol.solve(b))
}

/// Haar-like random unitary from the QR factorization of a complex Gaussian matrix.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = complex_normal_matrix(rng, n, n, 1.0);
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    // fix the phase ambiguity of the factorization
    let mut q = q;
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}
