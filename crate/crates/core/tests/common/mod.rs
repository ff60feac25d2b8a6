#![allow(dead_code)]

use modalstab::linalg::{self, CMat};
use modalstab::modal_core::StateSpaceSystem;
use rand::Rng;

pub fn random_real(rng: &mut impl Rng, rows: usize, cols: usize) -> CMat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    linalg::real_matrix(rows, cols, &data)
}

/// Random real matrix shifted so its spectral abscissa is `-margin`.
pub fn random_hurwitz(rng: &mut impl Rng, n: usize, margin: f64) -> CMat {
    let a = random_real(rng, n, n) * linalg::re(2.0);
    let (s, _) = linalg::spectral_abscissa_of(&a).unwrap();
    a - linalg::identity(n) * linalg::re(s + margin)
}

pub fn random_system(rng: &mut impl Rng, n: usize, m: usize, p: usize) -> StateSpaceSystem {
    StateSpaceSystem::strictly_proper(random_real(rng, n, n) * linalg::re(2.0), random_real(rng, n, m), random_real(rng, p, n)).unwrap()
}

/// `exp(A t)` from a truncated Taylor series on short substeps, independent of the
/// library's Padé code.
pub fn expm_taylor(a: &CMat, t: f64) -> CMat {
    let n = a.nrows();
    let norm = linalg::norm2(a) * t.abs();
    let steps = (norm.ceil() as u32).max(1) * 4;
    let h = t / steps as f64;
    let ah = a * linalg::re(h);
    let mut step = linalg::identity(n);
    let mut term = linalg::identity(n);
    for k in 1..30 {
        term = &term * &ah * linalg::re(1.0 / k as f64);
        step += &term;
    }
    let mut out = linalg::identity(n);
    for _ in 0..steps {
        out = &out * &step;
    }
    out
}
