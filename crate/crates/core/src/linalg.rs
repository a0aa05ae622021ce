//! Small dense complex linear-algebra helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type C64 = Complex64;

pub const EIG_FLOOR: f64 = 1e-12;

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Real part of tr(aᴴ b), the real inner product on complex matrices.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

pub fn fro2(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Real part of tr(a b) without forming the product.
pub fn trace_prod_re(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let k = a.ncols();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..k {
            let p = a[(i, j)] * b[(j, i)];
            s += p.re;
        }
    }
    s
}

/// x xᴴ.
pub fn gram(x: &CMat) -> CMat {
    x * x.adjoint()
}

/// I + x xᴴ.
pub fn cov(x: &CMat) -> CMat {
    let mut a = gram(x);
    for i in 0..a.nrows() {
        a[(i, i)] += C64::new(1.0, 0.0);
    }
    a
}

pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Cholesky factor of a Hermitian positive-definite matrix.
pub fn chol(a: &CMat) -> Result<Cholesky<C64, Dyn>> {
    Cholesky::new(hermitize(a))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} matrix", a.nrows(), a.ncols())))
}

pub fn chol_logdet(c: &Cholesky<C64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>() * 2.0
}

/// ln det and inverse of a Hermitian positive-definite matrix.
pub fn hpd_logdet_inv(a: &CMat) -> Result<(f64, CMat)> {
    let c = chol(a)?;
    let ld = chol_logdet(&c);
    Ok((ld, hermitize(&c.inverse())))
}

pub fn hpd_logdet(a: &CMat) -> Result<f64> {
    Ok(chol_logdet(&chol(a)?))
}

/// Eigenvalues (descending) and eigenvectors of a Hermitian matrix.
pub fn herm_eig(a: &CMat) -> (Vec<f64>, CMat) {
    let e = hermitize(a).symmetric_eigen();
    let n = e.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(a.nrows(), n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &e.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn herm_eigvals(a: &CMat) -> Vec<f64> {
    let mut v: Vec<f64> = hermitize(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn herm_fn(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (vals, v) = herm_eig(a);
    let mut vd = v.clone();
    for (j, &l) in vals.iter().enumerate() {
        let s = C64::new(f(l), 0.0);
        for i in 0..vd.nrows() {
            vd[(i, j)] *= s;
        }
    }
    hermitize(&(vd * v.adjoint()))
}

/// Ψ^p for Hermitian positive-definite Ψ, with eigenvalues floored before the power.
pub fn hpd_pow(psi: &CMat, p: f64) -> Result<CMat> {
    if psi.nrows() != psi.ncols() {
        return Err(Error::Dimension("square matrix required".into()));
    }
    let herm_err = (psi - psi.adjoint()).norm();
    if herm_err > 1e-9 * (1.0 + psi.norm()) {
        return Err(Error::NotPositiveDefinite("matrix is not Hermitian".into()));
    }
    let vals = herm_eigvals(psi);
    if vals.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "minimum eigenvalue {:e}",
            vals.last().copied().unwrap_or(0.0)
        )));
    }
    Ok(herm_fn(psi, |l| l.max(EIG_FLOOR).powf(p)))
}

/// Orthonormal-column polar factor y (yᴴy)^{-1/2}.
pub fn polar(y: &CMat) -> Result<CMat> {
    let g = y.adjoint() * y;
    let vals = herm_eigvals(&g);
    let lo = vals.last().copied().unwrap_or(0.0);
    let hi = vals.first().copied().unwrap_or(0.0);
    if !(lo > 1e-24 * hi.max(1.0)) {
        return Err(Error::InvalidInput("rank-deficient matrix in orthonormalization".into()));
    }
    Ok(y * herm_fn(&g, |l| 1.0 / l.sqrt()))
}

/// Matrix with iid standard complex Gaussian entries, CN(0, 1).
pub fn cgauss<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(r, c, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * s, im * s)
    })
}

/// Haar-distributed orthonormal T×M frame.
pub fn haar_frame<R: Rng + ?Sized>(t: usize, m: usize, rng: &mut R) -> CMat {
    let g = cgauss(t, m, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..t {
            q[(i, j)] *= ph;
        }
    }
    q.columns(0, m).into_owned()
}

/// Haar-distributed M×M unitary.
pub fn haar_unitary<R: Rng + ?Sized>(m: usize, rng: &mut R) -> CMat {
    haar_frame(m, m, rng)
}

pub fn scale(a: &CMat, s: f64) -> CMat {
    a * C64::new(s, 0.0)
}

/// Horizontal concatenation of blocks with equal row count.
pub fn hcat(blocks: &[&CMat]) -> CMat {
    let t = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(t, cols);
    let mut off = 0;
    for b in blocks {
        out.view_mut((0, off), (t, b.ncols())).copy_from(*b);
        off += b.ncols();
    }
    out
}
