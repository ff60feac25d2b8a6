//! Modal models of the one-dimensional heat and damped wave plants.
//!
//! Eigenfunctions are `cos(pi k xi)` on `[0, 1]`: integer `k` for Neumann-Neumann
//! boundary conditions, half-integer `k` for Neumann-Dirichlet. Modal coefficients
//! are always normalized by `<cos(pi k xi), cos(pi k xi)>` (1 for `k = 0`, 1/2 otherwise).

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::modal_core::{ModalBlock, ModalSystem, TailModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceProfile {
    /// `f(xi) = c`
    Constant { c: f64 },
    /// `f(xi) = cos(pi k0 xi)`
    Cosine { k0: f64 },
    /// `f(xi) = 1` on `[xi1, xi2]`, 0 elsewhere.
    Indicator { xi1: f64, xi2: f64 },
    /// Normalized modal coefficients in the plant's own basis; zero beyond the list.
    CoefficientList { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// `k = 0, 1, 2, ...`
    Integer,
    /// `k = 1/2, 3/2, ...`
    HalfInteger,
}

impl Basis {
    pub fn wavenumber(self, j: usize) -> f64 {
        match self {
            Basis::Integer => j as f64,
            Basis::HalfInteger => j as f64 + 0.5,
        }
    }

    /// `<cos(pi k xi), cos(pi k xi)>` on `[0, 1]`.
    pub fn norm_sq(self, j: usize) -> f64 {
        if self == Basis::Integer && j == 0 {
            1.0
        } else {
            0.5
        }
    }
}

/// `sin(pi x)`, exact at integers and half-integers.
pub fn sin_pi(x: f64) -> f64 {
    let mut r = x - 2.0 * (x / 2.0).round();
    if r > 0.5 {
        r = 1.0 - r;
    } else if r < -0.5 {
        r = -1.0 - r;
    }
    if r == 0.0 {
        0.0
    } else if r == 0.5 {
        1.0
    } else if r == -0.5 {
        -1.0
    } else {
        (PI * r).sin()
    }
}

/// `int_0^1 cos(pi x xi) d xi`
fn unit_cos_integral(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        sin_pi(x) / (PI * x)
    }
}

impl SourceProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceProfile::Constant { c } if !c.is_finite() => Err(Error::InvalidArgument("constant source must be finite".into())),
            SourceProfile::Cosine { k0 } if !(k0.is_finite() && *k0 >= 0.0) => {
                Err(Error::InvalidArgument(format!("cosine wavenumber must be finite and >= 0, got {k0}")))
            }
            SourceProfile::Indicator { xi1, xi2 } if !(0.0 <= *xi1 && xi1 < xi2 && *xi2 <= 1.0) => {
                Err(Error::InvalidArgument(format!("indicator needs 0 <= xi1 < xi2 <= 1, got [{xi1}, {xi2}]")))
            }
            SourceProfile::CoefficientList { coefficients } if coefficients.iter().any(|c| !c.is_finite()) => {
                Err(Error::InvalidArgument("coefficient list has non-finite entries".into()))
            }
            _ => Ok(()),
        }
    }

    /// Point value; `None` for coefficient lists.
    pub fn eval(&self, xi: f64) -> Option<f64> {
        match *self {
            SourceProfile::Constant { c } => Some(c),
            SourceProfile::Cosine { k0 } => Some((PI * k0 * xi).cos()),
            SourceProfile::Indicator { xi1, xi2 } => Some(if (xi1..=xi2).contains(&xi) { 1.0 } else { 0.0 }),
            SourceProfile::CoefficientList { .. } => None,
        }
    }

    /// `int_0^1 f^2`; `None` for coefficient lists.
    pub fn l2_norm_sq(&self) -> Option<f64> {
        match *self {
            SourceProfile::Constant { c } => Some(c * c),
            SourceProfile::Cosine { k0 } => Some(0.5 * (1.0 + unit_cos_integral(2.0 * k0))),
            SourceProfile::Indicator { xi1, xi2 } => Some(xi2 - xi1),
            SourceProfile::CoefficientList { .. } => None,
        }
    }

    /// `<cos(pi k xi), f>` for a real wavenumber `k`.
    fn inner(&self, k: f64) -> f64 {
        match *self {
            SourceProfile::Constant { c } => c * unit_cos_integral(k),
            SourceProfile::Cosine { k0 } => 0.5 * (unit_cos_integral(k - k0) + unit_cos_integral(k + k0)),
            SourceProfile::Indicator { xi1, xi2 } => {
                if k == 0.0 {
                    xi2 - xi1
                } else {
                    (sin_pi(k * xi2) - sin_pi(k * xi1)) / (PI * k)
                }
            }
            SourceProfile::CoefficientList { .. } => unreachable!("coefficient lists carry their coefficients"),
        }
    }

    /// Number of leading coefficients outside of which every coefficient is exactly zero.
    fn finite_support(&self, basis: Basis) -> Option<usize> {
        match (self, basis) {
            (SourceProfile::Constant { .. }, Basis::Integer) => Some(1),
            (SourceProfile::Cosine { k0 }, Basis::Integer) if k0.fract() == 0.0 => Some(*k0 as usize + 1),
            (SourceProfile::Cosine { k0 }, Basis::HalfInteger) if (k0 - 0.5).fract() == 0.0 && *k0 >= 0.5 => Some((k0 - 0.5) as usize + 1),
            (SourceProfile::CoefficientList { coefficients }, _) => Some(coefficients.len()),
            _ => None,
        }
    }

    /// Normalized coefficients `j = 0..=k_max` in `basis`, from closed forms.
    pub fn coefficients(&self, basis: Basis, k_max: usize) -> Vec<f64> {
        match self {
            SourceProfile::CoefficientList { coefficients } => (0..=k_max).map(|j| coefficients.get(j).copied().unwrap_or(0.0)).collect(),
            _ => (0..=k_max).map(|j| self.inner(basis.wavenumber(j)) / basis.norm_sq(j)).collect(),
        }
    }

    /// Same coefficients by adaptive Gauss-Legendre quadrature.
    pub fn quadrature_coefficients(&self, basis: Basis, k_max: usize, rel_tol: f64) -> Result<Vec<f64>> {
        let (lo, hi) = match *self {
            SourceProfile::Indicator { xi1, xi2 } => (xi1, xi2),
            SourceProfile::CoefficientList { .. } => return Ok(self.coefficients(basis, k_max)),
            _ => (0.0, 1.0),
        };
        (0..=k_max)
            .map(|j| {
                let k = basis.wavenumber(j);
                let v = integrate(|xi| (PI * k * xi).cos() * self.eval(xi).unwrap_or(0.0), lo, hi, rel_tol)?;
                Ok(v / basis.norm_sq(j))
            })
            .collect()
    }

    /// Upper bound on `sum_{j > k_max} |f_j|^2` (normalized coefficients).
    pub fn tail_energy(&self, basis: Basis, k_max: usize) -> f64 {
        if let Some(n) = self.finite_support(basis) {
            if n <= k_max + 1 {
                return 0.0;
            }
            let far = self.coefficients(basis, n - 1);
            return far[k_max + 1..].iter().map(|c| c * c).sum();
        }
        // Parseval: ||f||^2 = sum_j |f_j|^2 <cos_j, cos_j>
        let total = self.l2_norm_sq().unwrap_or(0.0);
        let coeffs = self.coefficients(basis, k_max);
        let mut partial = 0.0;
        let mut comp = 0.0;
        for (j, c) in coeffs.iter().enumerate() {
            let term = c * c * basis.norm_sq(j) - comp;
            let next = partial + term;
            comp = (next - partial) - term;
            partial = next;
        }
        let rounding = 1e-14 * total;
        2.0 * (total - partial).max(0.0) + rounding
    }
}

/// Normalized cosine coefficients `k = 0..=k_max` in the Neumann basis.
pub fn fourier_cos_coeffs(f: &SourceProfile, k_max: usize) -> Result<Vec<f64>> {
    f.validate()?;
    Ok(f.coefficients(Basis::Integer, k_max))
}

const GL_ORDER: usize = 15;

fn gauss_legendre() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        (0..n)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

fn gl_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * gauss_legendre().iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>()
}

/// Adaptive Gauss-Legendre quadrature of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const MAX_DEPTH: u32 = 40;
    let whole = gl_panel(&f, a, b);
    let scale = integrate_abs_scale(&f, a, b);
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    let mut stack = vec![(a, b, whole, 0u32)];
    while let Some((lo, hi, est, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let (left, right) = (gl_panel(&f, lo, mid), gl_panel(&f, mid, hi));
        let err = (left + right - est).abs();
        let budget = rel_tol * scale.max(f64::MIN_POSITIVE) * (hi - lo) / (b - a);
        if err <= budget || depth >= MAX_DEPTH {
            if err > budget {
                worst = worst.max(err);
            }
            total += left + right;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    if worst > 0.0 {
        return Err(Error::QuadratureNotConverged { estimate: worst });
    }
    Ok(total)
}

/// Magnitude reference for the relative tolerance: `int |f|` on a coarse panel grid.
fn integrate_abs_scale(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels).map(|i| gl_panel(&|x| f(x).abs(), a + i as f64 * h, a + (i + 1) as f64 * h)).sum()
}

const KERNEL_TOL: f64 = 1e-9;

fn heat_eigenvalue(b: f64, k: f64) -> f64 {
    let lam = b - PI * PI * k * k;
    if lam.abs() < KERNEL_TOL * (1.0 + b.abs()) {
        0.0
    } else {
        lam
    }
}

/// `sum_{k > k0} 1 / |b - pi^2 k^2|^2`, bounded above in closed form; `k` runs over
/// `k0 + 1, k0 + 2, ...` shifted by `offset` (0 or 1/2).
fn inverse_square_tail(b: f64, k0: usize, offset: f64) -> f64 {
    let first = k0 as f64 + 1.0 + offset;
    let c = if b > 0.0 { 1.0 - b / (PI * PI * first * first) } else { 1.0 };
    // k^-4 <= int_{k-1/2}^{k+1/2} x^-4 (convexity); the integer case uses the cruder int_{k-1}^{k}
    let lower = if offset == 0.0 { first - 1.0 } else { first - 0.5 };
    1.0 / (3.0 * c * c * PI.powi(4) * lower.powi(3))
}

fn check_n_max(n_max: usize) -> Result<()> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("N_max must be at least 1".into()));
    }
    Ok(())
}

/// Heat equation with Neumann conditions and distributed control `f u`, observed at `xi = 0`.
pub fn build_heat(b: f64, f: &SourceProfile, n_max: usize) -> Result<ModalSystem> {
    check_n_max(n_max)?;
    f.validate()?;
    let first_tail = PI * PI * ((n_max + 1) as f64).powi(2);
    if b >= first_tail {
        return Err(Error::TailUnstable(format!("b = {b} >= pi^2 (N_max + 1)^2 = {first_tail}; increase N_max")));
    }
    let coeffs = f.coefficients(Basis::Integer, n_max);
    let blocks = (0..=n_max).map(|k| ModalBlock::scalar(heat_eigenvalue(b, k as f64), coeffs[k], 1.0, k as i64)).collect::<Result<Vec<_>>>()?;
    let tail = TailModel {
        decay_alpha: first_tail - b,
        input_norm: f.tail_energy(Basis::Integer, n_max).sqrt(),
        output_graph_norm: inverse_square_tail(b, n_max, 0.0).sqrt(),
        amplitude_a: 1.0,
    };
    ModalSystem::new(blocks, tail, 1, 1)
}

/// Scaling of the position coordinate of a wave block.
fn wave_scale(mu: f64) -> f64 {
    (1.0 + mu.abs()).sqrt()
}

fn wave_block(b: f64, kappa: f64, k: f64, input: f64, label: i64) -> Result<ModalBlock> {
    let mu = b - PI * PI * k * k;
    let s = wave_scale(mu);
    ModalBlock::new(
        linalg::real_matrix(2, 2, &[0.0, s, mu / s, -kappa]),
        linalg::real_matrix(2, 1, &[0.0, input]),
        linalg::real_matrix(1, 2, &[1.0 / s, 0.0]),
        label,
    )
}

/// Number of blocks examined for the wave tail amplitude.
pub const WAVE_TAIL_SCAN: usize = 200;

/// Damped wave equation with Neumann-Dirichlet conditions, in energy-scaled modal
/// coordinates `(sqrt(1 + |mu_k|) x_k, v_k)` with `mu_k = b - pi^2 k^2`, `k = j + 1/2`.
///
/// Block labels are `j`. `N_max` is raised as needed so every overdamped or
/// critically damped mode is resolved. For `kappa <= 0` the tail decay rate is
/// non-positive and [`crate::modal_core::partition_spectrum`] rejects the system.
pub fn build_wave(b: f64, kappa: f64, f: &SourceProfile, n_max: usize) -> Result<ModalSystem> {
    check_n_max(n_max)?;
    f.validate()?;
    if !(b.is_finite() && kappa.is_finite()) {
        return Err(Error::InvalidArgument("b and kappa must be finite".into()));
    }
    let mu_of = |j: usize| b - PI * PI * (j as f64 + 0.5).powi(2);
    let mut last = n_max;
    // tail blocks must be comfortably underdamped
    while !(mu_of(last + 1) < 0.0 && -mu_of(last + 1) >= 0.5 * kappa * kappa) {
        last += 1;
    }
    let coeffs = f.coefficients(Basis::HalfInteger, last);
    let blocks = (0..=last).map(|j| wave_block(b, kappa, j as f64 + 0.5, coeffs[j], j as i64)).collect::<Result<Vec<_>>>()?;
    let mut amplitude: f64 = 1.0;
    for j in last + 1..=last + WAVE_TAIL_SCAN {
        let blk = wave_block(b, kappa, j as f64 + 0.5, 0.0, j as i64)?;
        amplitude = amplitude.max(eigenvector_condition(&blk.block_matrix));
    }
    let mu_first = mu_of(last + 1).abs();
    let graph_sq = (2.0 + kappa * kappa / (1.0 + mu_first)) * inverse_square_tail(b, last, 0.5);
    let tail = TailModel {
        decay_alpha: 0.99 * kappa / 2.0,
        input_norm: f.tail_energy(Basis::HalfInteger, last).sqrt(),
        output_graph_norm: graph_sq.sqrt(),
        amplitude_a: amplitude,
    };
    ModalSystem::new(blocks, tail, 1, 1)
}

/// Condition number of the unit-column eigenvector matrix of a diagonalizable 2x2 block.
pub fn eigenvector_condition(m: &CMat) -> f64 {
    let [l1, l2] = linalg::eig2x2(m);
    let vec_for = |lam| {
        let a: num_complex::Complex64 = m[(0, 0)] - lam;
        let v1 = [m[(0, 1)], -a];
        let v2 = [m[(1, 1)] - lam, -m[(1, 0)]];
        let pick = if v1[0].norm() + v1[1].norm() >= v2[0].norm() + v2[1].norm() { v1 } else { v2 };
        let n = (pick[0].norm_sqr() + pick[1].norm_sqr()).sqrt();
        [pick[0] / n, pick[1] / n]
    };
    let (a, c) = (vec_for(l1), vec_for(l2));
    linalg::cond2(&CMat::from_row_slice(2, 2, &[a[0], c[0], a[1], c[1]]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub description: String,
    pub k: Option<usize>,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub entries: Vec<ConstraintEntry>,
    pub tolerance: f64,
    pub all_passed: bool,
}

impl ConstraintReport {
    fn max_magnitude(&self) -> f64 {
        self.entries.iter().map(|e| e.value.abs()).fold(0.0, f64::max)
    }

    fn rejudge(&mut self, tolerance: f64) {
        self.tolerance = tolerance;
        for e in &mut self.entries {
            e.passed = e.value.abs() > tolerance;
        }
        self.all_passed = self.entries.iter().all(|e| e.passed);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLiftData {
    pub a: f64,
    /// `sqrt(a - b)`
    pub r: f64,
    pub h_coeffs: Vec<f64>,
    pub g1_coeffs: Vec<f64>,
    pub g2_coeffs: Vec<f64>,
    pub h_at_0: f64,
    /// `C g1 = sum_k (g1)_k`, summed well past `N_max`.
    pub c_g1: f64,
    pub kernel_mode: Option<usize>,
    pub constraint_report: ConstraintReport,
}

impl BoundaryLiftData {
    /// `(h + g1)_k` on the resolved modes.
    pub fn h_plus_g1(&self, k: usize) -> f64 {
        self.h_coeffs[k] + self.g1_coeffs[k]
    }
}

/// Terms used for `C g1`.
pub const CG1_TERMS: usize = 200_000;
/// Terms summed explicitly in the lifted tail input norm before the closed-form remainder.
const LIFT_TAIL_TERMS: usize = 100_000;

/// Normalized coefficients of `h(xi) = cosh(r xi) / (r sinh r)`.
pub fn lift_h_coefficient(r: f64, k: usize) -> f64 {
    let kk = PI * PI * (k * k) as f64;
    if k == 0 {
        1.0 / (r * r)
    } else {
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        2.0 * sign / (r * r + kk)
    }
}

/// `h(xi)` itself, for oracle checks.
pub fn lift_h(r: f64, xi: f64) -> f64 {
    (r * xi).cosh() / (r * r.sinh())
}

fn lift_data(b: f64, f: &SourceProfile, a: f64, n_max: usize) -> Result<BoundaryLiftData> {
    if !(a > b) {
        return Err(Error::InvalidArgument(format!("lift parameter a = {a} must exceed b = {b}")));
    }
    let r = (a - b).sqrt();
    let fc = f.coefficients(Basis::Integer, CG1_TERMS);
    let mut kernel_mode = None;
    let mut c_g1 = 0.0;
    let mut h = Vec::with_capacity(n_max + 1);
    let mut g1 = Vec::with_capacity(n_max + 1);
    let mut g2 = Vec::with_capacity(n_max + 1);
    for k in (0..=CG1_TERMS).rev() {
        let hk = lift_h_coefficient(r, k);
        let lam = heat_eigenvalue(b, k as f64);
        let forcing = fc[k] + a * hk;
        let (g1k, g2k) = if lam == 0.0 {
            if forcing.abs() <= 1e-10 * (fc[k].abs() + (a * hk).abs()) {
                return Err(Error::KernelResonance { k, value: forcing });
            }
            kernel_mode = Some(k);
            (0.0, forcing)
        } else {
            (-forcing / lam, 0.0)
        };
        c_g1 += g1k;
        if k <= n_max {
            h.push(hk);
            g1.push(g1k);
            g2.push(g2k);
        }
    }
    h.reverse();
    g1.reverse();
    g2.reverse();
    let mut data = BoundaryLiftData {
        a,
        r,
        h_coeffs: h,
        g1_coeffs: g1,
        g2_coeffs: g2,
        h_at_0: 1.0 / (r * r.sinh()),
        c_g1,
        kernel_mode,
        constraint_report: ConstraintReport { entries: vec![], tolerance: 0.0, all_passed: false },
    };
    data.constraint_report = raw_constraints(&data, b);
    let tol = 1e-8 * data.constraint_report.max_magnitude();
    data.constraint_report.rejudge(tol);
    Ok(data)
}

fn raw_constraints(data: &BoundaryLiftData, b: f64) -> ConstraintReport {
    let mut entries = Vec::new();
    for k in 0..data.h_coeffs.len() {
        let lam = heat_eigenvalue(b, k as f64);
        if lam > 0.0 {
            entries.push(ConstraintEntry { description: format!("(h + g1)_{k}"), k: Some(k), value: data.h_plus_g1(k), passed: false });
        } else if lam == 0.0 {
            entries.push(ConstraintEntry { description: format!("(g2)_{k}"), k: Some(k), value: data.g2_coeffs[k], passed: false });
        }
    }
    entries.push(ConstraintEntry { description: "h(0) + C g1".into(), k: None, value: data.h_at_0 + data.c_g1, passed: false });
    ConstraintReport { entries, tolerance: 0.0, all_passed: false }
}

/// Evaluates every non-degeneracy condition of the lifted boundary-control plant, judged
/// at `1e-8` times the largest magnitude in the report.
pub fn check_boundary_constraints(data: &BoundaryLiftData, b: f64) -> ConstraintReport {
    let mut rep = raw_constraints(data, b);
    let tol = 1e-8 * rep.max_magnitude();
    rep.rejudge(tol);
    rep
}

/// Heat equation with Neumann control `d/dxi x(t, 1) = u(t)`, lifted to the state `(u, z)`
/// with `z = x - h u` and new input `v = du/dt`, then written in eigen-coordinates of the
/// lifted generator. The extra 0-eigenvalue block carries label `-1`.
pub fn build_heat_boundary(b: f64, f: &SourceProfile, a: f64, n_max: usize) -> Result<(ModalSystem, BoundaryLiftData)> {
    check_n_max(n_max)?;
    f.validate()?;
    let first_tail = PI * PI * ((n_max + 1) as f64).powi(2);
    if b >= first_tail {
        return Err(Error::TailUnstable(format!("b = {b} >= pi^2 (N_max + 1)^2 = {first_tail}; increase N_max")));
    }
    let data = lift_data(b, f, a, n_max)?;
    let out0 = data.h_at_0 + data.c_g1;
    let mut blocks = Vec::with_capacity(n_max + 2);
    match data.kernel_mode {
        Some(ks) if ks <= n_max => blocks.push(ModalBlock::new(
            linalg::real_matrix(2, 2, &[0.0, 0.0, data.g2_coeffs[ks], 0.0]),
            linalg::real_matrix(2, 1, &[1.0, -data.h_plus_g1(ks)]),
            linalg::real_matrix(1, 2, &[out0, 1.0]),
            -1,
        )?),
        _ => blocks.push(ModalBlock::scalar(0.0, 1.0, out0, -1)?),
    }
    for k in 0..=n_max {
        if Some(k) == data.kernel_mode {
            continue;
        }
        blocks.push(ModalBlock::scalar(heat_eigenvalue(b, k as f64), -data.h_plus_g1(k), 1.0, k as i64)?);
    }
    let d_first = first_tail - b;
    // (h + g1)_k = h_k (lambda_k - a) / lambda_k - f_k / lambda_k; triangle inequality on the two parts
    let mut h_part = 0.0;
    for k in n_max + 1..=n_max + LIFT_TAIL_TERMS {
        let lam = b - PI * PI * (k * k) as f64;
        h_part += (lift_h_coefficient(data.r, k) * (lam - a) / lam).powi(2);
    }
    let far = n_max + LIFT_TAIL_TERMS;
    let h_remainder = 4.0 * (1.0 + a.abs() / d_first).powi(2) / (3.0 * PI.powi(4) * (far as f64).powi(3));
    let input_norm = (h_part + h_remainder).sqrt() + f.tail_energy(Basis::Integer, n_max).sqrt() / d_first;
    let tail = TailModel { decay_alpha: d_first, input_norm, output_graph_norm: inverse_square_tail(b, n_max, 0.0).sqrt(), amplitude_a: 1.0 };
    Ok((ModalSystem::new(blocks, tail, 1, 1)?, data))
}

/// Default lift grid `{b + j : j = 1..=32}`.
pub fn default_lift_grid(b: f64) -> Vec<f64> {
    (1..=32).map(|j| b + j as f64).collect()
}

/// First grid entry whose lifted plant satisfies every non-degeneracy condition, judged at
/// `1e-8` times the largest constraint magnitude seen over the whole grid.
pub fn search_lift_parameter(b: f64, f: &SourceProfile, grid: &[f64], n_max: usize) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lift parameter grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|&&a| !(a > b)) {
        return Err(Error::InvalidArgument(format!("grid entry {bad} is not above b = {b}")));
    }
    f.validate()?;
    let mut reports = Vec::with_capacity(grid.len());
    let mut notes = Vec::new();
    for &a in grid {
        match lift_data(b, f, a, n_max) {
            Ok(d) => reports.push((a, Some(d.constraint_report))),
            Err(Error::KernelResonance { k, value }) => {
                notes.push(format!("a = {a}: kernel mode {k} has vanishing forcing {value:e}"));
                reports.push((a, None));
            }
            Err(e) => return Err(e),
        }
    }
    let scale = reports.iter().filter_map(|(_, r)| r.as_ref()).map(ConstraintReport::max_magnitude).fold(0.0, f64::max);
    let tol = 1e-8 * scale;
    for (a, rep) in &mut reports {
        if let Some(rep) = rep {
            rep.rejudge(tol);
            if rep.all_passed {
                return Ok(*a);
            }
            for e in rep.entries.iter().filter(|e| !e.passed) {
                notes.push(format!("a = {a}: {} = {:e}", e.description, e.value));
            }
        }
    }
    Err(Error::NoAdmissibleParameter(notes.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin_pi_is_exact_on_lattice() {
        for k in -6..=6 {
            assert_eq!(sin_pi(k as f64), 0.0);
        }
        assert_eq!(sin_pi(0.5), 1.0);
        assert_eq!(sin_pi(2.5), 1.0);
        assert_eq!(sin_pi(-0.5), -1.0);
        assert_eq!(sin_pi(1.5), -1.0);
        assert!((sin_pi(0.3) - (0.3 * PI).sin()).abs() < 1e-15);
    }

    #[test]
    fn closed_form_coefficients() {
        let c = fourier_cos_coeffs(&SourceProfile::Constant { c: 1.0 }, 5).unwrap();
        assert_eq!(c, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let c = fourier_cos_coeffs(&SourceProfile::Cosine { k0: 1.0 }, 4).unwrap();
        assert_eq!(c, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let c = fourier_cos_coeffs(&SourceProfile::Indicator { xi1: 0.0, xi2: 0.5 }, 1).unwrap();
        assert!((c[1] - 2.0 / PI).abs() < 1e-15);
        assert!((c[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let profiles = [
            SourceProfile::Constant { c: 2.5 },
            SourceProfile::Cosine { k0: 3.0 },
            SourceProfile::Cosine { k0: 1.3 },
            SourceProfile::Indicator { xi1: 0.2, xi2: 0.7 },
        ];
        for basis in [Basis::Integer, Basis::HalfInteger] {
            for f in &profiles {
                let exact = f.coefficients(basis, 20);
                let quad = f.quadrature_coefficients(basis, 20, 1e-13).unwrap();
                for (e, q) in exact.iter().zip(&quad) {
                    assert!((e - q).abs() < 1e-10, "{f:?} {basis:?}: {e} vs {q}");
                }
            }
        }
    }

    #[test]
    fn quadrature_of_polynomial_and_gaussian() {
        let v = integrate(|x| x.powi(7), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - 0.125).abs() < 1e-15);
        let v = integrate(|x| (-x * x).exp(), -8.0, 8.0, 1e-13).unwrap();
        assert!((v - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tail_energy_bounds_explicit_sums() {
        let f = SourceProfile::Indicator { xi1: 0.1, xi2: 0.45 };
        for basis in [Basis::Integer, Basis::HalfInteger] {
            let coeffs = f.coefficients(basis, 400_000);
            for k in [4, 16, 64] {
                let explicit: f64 = coeffs[k + 1..].iter().map(|c| c * c).sum();
                let bound = f.tail_energy(basis, k);
                assert!(bound >= explicit, "{basis:?} {k}: {bound} < {explicit}");
                assert!(bound <= explicit * 1.01 + 1e-5 / (k as f64), "{basis:?} {k}: {bound} vs {explicit}");
            }
        }
        assert_eq!(SourceProfile::Constant { c: 1.0 }.tail_energy(Basis::Integer, 3), 0.0);
        let list = SourceProfile::CoefficientList { coefficients: vec![1.0, 0.5, 0.25, 0.125] };
        assert_eq!(list.tail_energy(Basis::Integer, 1), 0.25f64.powi(2) + 0.125f64.powi(2));
    }

    #[test]
    fn profile_validation() {
        assert!(SourceProfile::Indicator { xi1: 0.5, xi2: 0.5 }.validate().is_err());
        assert!(SourceProfile::Indicator { xi1: -0.1, xi2: 0.5 }.validate().is_err());
        assert!(SourceProfile::CoefficientList { coefficients: vec![f64::NAN] }.validate().is_err());
        let json = r#"{"kind": "indicator", "xi1": 0.0, "xi2": 0.5}"#;
        let f: SourceProfile = serde_json::from_str(json).unwrap();
        assert_eq!(f, SourceProfile::Indicator { xi1: 0.0, xi2: 0.5 });
        assert!(serde_json::from_str::<SourceProfile>(r#"{"kind": "constant", "c": 1, "extra": 2}"#).is_err());
    }

    #[test]
    fn heat_spectrum() {
        let sys = build_heat(0.0, &SourceProfile::Constant { c: 1.0 }, 8).unwrap();
        assert!((sys.block(1).unwrap().block_matrix[(0, 0)].re + PI * PI).abs() < 1e-14);
        assert_eq!(sys.block(0).unwrap().block_matrix[(0, 0)].re, 0.0);
        let sys = build_heat(5.0, &SourceProfile::Constant { c: 1.0 }, 8).unwrap();
        assert_eq!(sys.unstable_block_count(), 1);
        assert_eq!(sys.blocks()[0].label, 0);
        assert!((sys.tail.decay_alpha - (81.0 * PI * PI - 5.0)).abs() < 1e-12);
        assert_eq!(sys.tail.input_norm, 0.0);
        assert!(matches!(build_heat(200.0, &SourceProfile::Constant { c: 1.0 }, 3), Err(Error::TailUnstable(_))));
    }

    #[test]
    fn heat_graph_tail_bounds_explicit_sum() {
        for b in [-3.0, 0.0, 5.0, 40.0] {
            let sys = build_heat(b, &SourceProfile::Constant { c: 1.0 }, 6).unwrap();
            let explicit: f64 = (7u64..2_000_000).map(|k| 1.0 / (1.0 + (PI * PI * (k * k) as f64 - b).abs()).powi(2)).sum();
            assert!(sys.tail.output_graph_norm.powi(2) >= explicit);
            assert!(sys.tail.output_graph_norm.powi(2) <= 3.0 * explicit);
        }
    }

    #[test]
    fn wave_eigenvalues_by_formula() {
        let f = SourceProfile::Constant { c: 1.0 };
        let sys = build_wave(0.0, 0.0, &f, 4).unwrap();
        let mut e = sys.block(0).unwrap().eigenvalues();
        e.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!(e[0].re.abs() < 1e-15 && (e[0].im + PI / 2.0).abs() < 1e-14 && (e[1].im - PI / 2.0).abs() < 1e-14);
        let sys = build_wave(0.0, 2.0, &f, 4).unwrap();
        for z in sys.block(0).unwrap().eigenvalues() {
            assert!((z.re + 1.0).abs() < 1e-14);
            assert!((z.im.abs() - (PI * PI - 4.0).sqrt() / 2.0).abs() < 1e-14);
        }
        let sys = build_wave(1.0, 0.5, &f, 4).unwrap();
        assert_eq!(sys.unstable_block_count(), 0);
        assert!((sys.tail.decay_alpha - 0.99 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn wave_resolves_overdamped_modes() {
        let sys = build_wave(0.0, 40.0, &SourceProfile::Constant { c: 1.0 }, 2).unwrap();
        let last = sys.blocks().iter().map(|b| b.label).max().unwrap() as usize;
        let k = last as f64 + 1.5;
        assert!(PI * PI * k * k >= 0.5 * 1600.0);
        assert!(last > 2);
    }

    #[test]
    fn wave_tail_amplitude_decreases() {
        let m = |j: usize| {
            let k = j as f64 + 0.5;
            let mu = -PI * PI * k * k;
            let s = wave_scale(mu);
            linalg::real_matrix(2, 2, &[0.0, s, mu / s, -3.0])
        };
        let conds: Vec<f64> = (3..300).map(|j| eigenvector_condition(&m(j))).collect();
        assert!(conds.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(conds.last().unwrap() - 1.0 < 0.1);
    }

    #[test]
    fn wave_graph_tail_bounds_explicit_sum() {
        let (b, kappa) = (3.0, 1.5);
        let sys = build_wave(b, kappa, &SourceProfile::Constant { c: 1.0 }, 5).unwrap();
        let last = sys.blocks().iter().map(|b| b.label).max().unwrap() as usize;
        let mut explicit = 0.0;
        for j in last + 1..last + 20000 {
            let blk = wave_block(b, kappa, j as f64 + 0.5, 0.0, 0).unwrap();
            explicit += blk.output_col.norm_squared() / (1.0 + linalg::sigma_min(&blk.block_matrix)).powi(2);
        }
        assert!(sys.tail.output_graph_norm.powi(2) >= explicit);
    }

    #[test]
    fn lift_h_satisfies_its_boundary_problem() {
        let r = 2.0f64;
        let dh = |xi: f64| (r * xi).sinh() / r.sinh();
        assert!((dh(1.0) - 1.0).abs() < 1e-15 && dh(0.0) == 0.0);
        // h'' = r^2 h, i.e. (d^2 + b) h = a h with r^2 = a - b
        let xi = 0.37;
        let hpp = r * r * (r * xi).cosh() / (r * r.sinh());
        assert!((hpp - r * r * lift_h(r, xi)).abs() < 1e-14);
        for k in 0..8 {
            let q = integrate(|x| (PI * k as f64 * x).cos() * lift_h(r, x), 0.0, 1.0, 1e-14).unwrap() / Basis::Integer.norm_sq(k);
            assert!((q - lift_h_coefficient(r, k)).abs() < 1e-12, "{k}");
        }
    }

    #[test]
    fn lift_identity_and_constraint_formula() {
        let b = 5.0;
        let f = SourceProfile::Indicator { xi1: 0.2, xi2: 0.6 };
        let (sys, data) = build_heat_boundary(b, &f, 7.0, 12).unwrap();
        let fk = f.coefficients(Basis::Integer, 12);
        for (k, &f_k) in fk.iter().enumerate() {
            let lam = b - PI * PI * (k * k) as f64;
            let id = f_k + data.a * data.h_coeffs[k] + lam * data.g1_coeffs[k] - data.g2_coeffs[k];
            assert!(id.abs() < 1e-13, "{k}: {id}");
        }
        let lam0 = b;
        let expected = ((lam0 - data.a) / lam0) * data.h_coeffs[0] - fk[0] / lam0;
        let entry = &data.constraint_report.entries[0];
        assert_eq!(entry.k, Some(0));
        assert!((entry.value - expected).abs() < 1e-14);
        assert_eq!(data.g2_coeffs.iter().filter(|g| **g != 0.0).count(), 0);
        assert_eq!(sys.unstable_block_count(), 2);
        assert_eq!(sys.block(-1).unwrap().dim(), 1);
    }

    #[test]
    fn lift_with_kernel_mode() {
        let b = PI * PI;
        let (sys, data) = build_heat_boundary(b, &SourceProfile::Constant { c: 1.0 }, b + 1.0, 6).unwrap();
        assert_eq!(data.kernel_mode, Some(1));
        assert!(data.g2_coeffs[1] != 0.0 && data.g1_coeffs[1] == 0.0);
        assert_eq!(sys.block(-1).unwrap().dim(), 2);
        assert!(sys.block(1).is_none());
        let rep = check_boundary_constraints(&data, b);
        assert!(rep.entries.iter().any(|e| e.description.starts_with("(g2)_1")));
    }

    #[test]
    fn constraints_for_negative_b() {
        let (_, data) = build_heat_boundary(-1.0, &SourceProfile::Constant { c: 0.0 }, 0.0, 4).unwrap();
        let rep = check_boundary_constraints(&data, -1.0);
        assert_eq!(rep.entries.len(), 1);
        assert!(rep.all_passed);
        let grid = default_lift_grid(-1.0);
        assert_eq!(search_lift_parameter(-1.0, &SourceProfile::Constant { c: 0.0 }, &grid, 16).unwrap(), grid[0]);
    }

    #[test]
    fn lift_search_on_default_grid() {
        let f = SourceProfile::Constant { c: 1.0 };
        let a = search_lift_parameter(5.0, &f, &default_lift_grid(5.0), 16).unwrap();
        assert!(a > 5.0);
        let zero = SourceProfile::Constant { c: 0.0 };
        let a = search_lift_parameter(5.0, &zero, &default_lift_grid(5.0), 16).unwrap();
        let (_, data) = build_heat_boundary(5.0, &zero, a, 16).unwrap();
        assert!(data.constraint_report.all_passed);
    }

    #[test]
    fn lift_search_reports_failure() {
        // (h + g1)_0 = h_0 (b - a)/b - f_0 / b vanishes when f_0 = h_0 (b - a) = -1 for the chosen a
        let b = 5.0;
        let a = 6.0;
        let r: f64 = 1.0;
        let f0 = lift_h_coefficient(r, 0) * (b - a);
        let f = SourceProfile::CoefficientList { coefficients: vec![f0] };
        match search_lift_parameter(b, &f, &[a], 16) {
            Err(Error::NoAdmissibleParameter(msg)) => assert!(msg.contains("(h + g1)_0")),
            other => panic!("{other:?}"),
        }
    }
}
