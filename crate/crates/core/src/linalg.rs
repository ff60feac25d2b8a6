//! Dense complex linear algebra shared by the modal, gain and synthesis layers.
//!
//! Everything works on `DMatrix<Complex64>`. The eigenvalue machinery is the
//! complex Schur form from nalgebra; on top of it this module adds adjacent
//! swaps (ordered Schur), a Bartels-Stewart Lyapunov solver and the
//! Hamiltonian invariant-subspace Riccati solver.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[inline]
pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn from_real(m: &DMatrix<f64>) -> CMat {
    m.map(re)
}

pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    DMatrix::from_row_slice(rows, cols, data).map(re)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Largest absolute imaginary part over all entries.
pub fn imag_residue(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

pub fn all_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Spectral norm; zero for empty matrices.
pub fn norm2(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(m: &CMat) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn cond2(m: &CMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn block_diag(blocks: &[&CMat]) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacks a 2x2 grid of blocks. Row heights come from the left column, widths from the top row.
pub fn block2x2(a: &CMat, b: &CMat, c: &CMat, d: &CMat) -> CMat {
    let (r1, r2) = (a.nrows(), c.nrows());
    let (c1, c2) = (a.ncols(), b.ncols());
    let mut out = CMat::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(a);
    out.view_mut((0, c1), (r1, c2)).copy_from(b);
    out.view_mut((r1, 0), (r2, c1)).copy_from(c);
    out.view_mut((r1, c1), (r2, c2)).copy_from(d);
    out
}

pub fn hstack(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((0, a.ncols()), b.shape()).copy_from(b);
    out
}

pub fn vstack(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Complex Schur form `m = q t q^*` with `t` upper triangular.
pub fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!("schur of {}x{} matrix", n, m.ncols())));
    }
    if n == 0 {
        return Ok((CMat::zeros(0, 0), CMat::zeros(0, 0)));
    }
    if !all_finite(m) {
        return Err(Error::EigensolverNoConvergence);
    }
    let s = Schur::try_new(m.clone(), f64::EPSILON, 500 * n.max(10)).ok_or(Error::EigensolverNoConvergence)?;
    let (q, mut t) = s.unpack();
    for j in 0..n {
        for i in (j + 1)..n {
            t[(i, j)] = ZERO;
        }
    }
    Ok((q, t))
}

pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    match n {
        0 => Ok(Vec::new()),
        1 => Ok(vec![m[(0, 0)]]),
        2 => Ok(eig2x2(m).to_vec()),
        _ => {
            let (_, t) = schur(m)?;
            Ok((0..n).map(|i| t[(i, i)]).collect())
        }
    }
}

/// Closed-form eigenvalues of a 2x2 matrix, cancellation-free root ordering.
pub fn eig2x2(m: &CMat) -> [Complex64; 2] {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let half = tr * 0.5;
    let disc = half * half - det;
    let scale = half.norm_sqr() + det.norm();
    if disc.norm() <= 1e-15 * scale {
        return [half, half];
    }
    let sq = disc.sqrt();
    // pick the root of larger magnitude first, recover the other through det
    let big = if (half + sq).norm() >= (half - sq).norm() { half + sq } else { half - sq };
    let small = if big.norm() > 0.0 { det / big } else { half - (big - half) };
    [big, small]
}

pub fn spectral_abscissa_of(m: &CMat) -> Result<(f64, Complex64)> {
    let eigs = eigenvalues(m)?;
    eigs.into_iter()
        .map(|z| (z.re, z))
        .fold(None, |acc: Option<(f64, Complex64)>, cur| match acc {
            Some(best) if best.0 >= cur.0 => Some(best),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::InvalidArgument("spectral abscissa of an empty matrix".into()))
}

/// Swaps the diagonal entries `k` and `k+1` of an upper-triangular Schur factor,
/// updating the accumulated unitary `q`.
fn swap_adjacent(q: &mut CMat, t: &mut CMat, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    // eigenvector of the leading 2x2 for eigenvalue t22
    let v1 = t[(k, k + 1)];
    let v2 = t22 - t11;
    let nv = (v1.norm_sqr() + v2.norm_sqr()).sqrt();
    if nv == 0.0 {
        return;
    }
    let g1 = v1 / nv;
    let g2 = v2 / nv;
    // G = [[g1, -conj(g2)], [g2, conj(g1)]]; T <- G^* T G, Q <- Q G
    for j in 0..n {
        let a = t[(k, j)];
        let b = t[(k + 1, j)];
        t[(k, j)] = g1.conj() * a + g2.conj() * b;
        t[(k + 1, j)] = -g2 * a + g1 * b;
    }
    for i in 0..n {
        let a = t[(i, k)];
        let b = t[(i, k + 1)];
        t[(i, k)] = g1 * a + g2 * b;
        t[(i, k + 1)] = -g2.conj() * a + g1.conj() * b;
        let a = q[(i, k)];
        let b = q[(i, k + 1)];
        q[(i, k)] = g1 * a + g2 * b;
        q[(i, k + 1)] = -g2.conj() * a + g1.conj() * b;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    t[(k + 1, k)] = ZERO;
}

/// Moves every selected diagonal entry of `t` to the leading positions.
/// Returns the number of selected eigenvalues.
pub fn reorder_schur(q: &mut CMat, t: &mut CMat, select: impl Fn(Complex64) -> bool) -> usize {
    let n = t.nrows();
    let mut placed = 0;
    for j in 0..n {
        if select(t[(j, j)]) {
            let mut pos = j;
            while pos > placed {
                swap_adjacent(q, t, pos - 1);
                pos -= 1;
            }
            placed += 1;
        }
    }
    placed
}

/// Solves `a^* x + x a = rhs` by Bartels-Stewart on the complex Schur form of `a`.
pub fn solve_lyapunov(a: &CMat, rhs: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n || rhs.shape() != (n, n) {
        return Err(Error::DimensionMismatch("Lyapunov operands".into()));
    }
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let (u, t) = schur(a)?;
    let c = u.adjoint() * rhs * &u;
    let scale = t.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
    let mut y = CMat::zeros(n, n);
    for j in 0..n {
        let mut r: Vec<Complex64> = (0..n).map(|i| c[(i, j)]).collect();
        for k in 0..j {
            let tkj = t[(k, j)];
            if tkj != ZERO {
                for i in 0..n {
                    r[i] -= y[(i, k)] * tkj;
                }
            }
        }
        let tjj = t[(j, j)];
        for i in 0..n {
            let mut acc = r[i];
            for l in 0..i {
                acc -= t[(l, i)].conj() * y[(l, j)];
            }
            let denom = t[(i, i)].conj() + tjj;
            if denom.norm() <= 1e-14 * scale {
                return Err(Error::LyapunovSolveFailed(format!("eigenvalues {} and {} are mirror images across the imaginary axis", t[(i, i)], tjj)));
            }
            y[(i, j)] = acc / denom;
        }
    }
    let x = &u * y * u.adjoint();
    if !all_finite(&x) {
        return Err(Error::LyapunovSolveFailed("non-finite solution".into()));
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub x: CMat,
    /// Frobenius norm of `a^* x + x a - x b b^* x + I`.
    pub residual: f64,
}

/// Stabilizing solution of `a^* x + x a - x b b^* x + I = 0` (unit state and input weights)
/// from the ordered stable invariant subspace of the Hamiltonian
/// `[[a, -b b^*], [-I, -a^*]]`.
pub fn solve_care(a: &CMat, b: &CMat) -> Result<CareSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch("CARE operands".into()));
    }
    if n == 0 {
        return Ok(CareSolution { x: CMat::zeros(0, 0), residual: 0.0 });
    }
    let g = b * b.adjoint();
    let h = block2x2(a, &(-&g), &(-identity(n)), &(-a.adjoint()));
    let (mut q, mut t) = schur(&h)?;
    let hscale = norm2(&h).max(1.0);
    for i in 0..2 * n {
        if t[(i, i)].re.abs() <= 1e-12 * hscale {
            return Err(Error::RiccatiDivergence(format!("Hamiltonian eigenvalue {} on the imaginary axis", t[(i, i)])));
        }
    }
    let stable = reorder_schur(&mut q, &mut t, |z| z.re < 0.0);
    if stable != n {
        return Err(Error::RiccatiDivergence(format!("{stable} stable Hamiltonian eigenvalues, expected {n}")));
    }
    let u1 = q.view((0, 0), (n, n)).into_owned();
    let u2 = q.view((n, 0), (n, n)).into_owned();
    if cond2(&u1) > 1e12 {
        return Err(Error::RiccatiDivergence("stable subspace is not a graph over the state".into()));
    }
    // x = u2 u1^{-1}  <=>  u1^T x^T = u2^T
    let lu = u1.transpose().lu();
    let xt = lu.solve(&u2.transpose()).ok_or_else(|| Error::RiccatiDivergence("singular subspace basis".into()))?;
    let x = xt.transpose();
    let x = (&x + x.adjoint()) * re(0.5);
    let res = a.adjoint() * &x + &x * a - &x * &g * &x + identity(n);
    Ok(CareSolution { residual: res.norm(), x })
}

/// Greedy nearest matching of two eigenvalue multisets; returns the largest
/// relative distance `|a - b| / (1 + |a|)` over matched pairs.
pub fn spectrum_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for za in a {
        let mut best = None;
        for (j, zb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (za - zb).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.unwrap();
        used[j] = true;
        worst = worst.max(d / (1.0 + za.norm()));
    }
    worst
}

pub fn sort_spectrum(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
}
