//! Modewise stabilizability/detectability tests and the observer-based controller.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::{self, StabilityCertificate, Verdict};
use crate::linalg::{self, CMat};
use crate::modal_core::{self, ModalSystem, SpectrumPartition, StateSpaceSystem, TailModel};

/// Default relative rank tolerance for the Hautus test.
pub const PBH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub label: i64,
    pub eigenvalues: Vec<Complex64>,
    pub stabilizable: bool,
    pub detectable: bool,
    /// Smallest `d`-th singular value of `[lambda I - A_k, B_k]` over the unstable eigenvalues.
    pub control_margin: f64,
    /// Same for `[lambda I - A_k; C_k]`.
    pub observe_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub stabilizable: bool,
    pub detectable: bool,
    pub offending_stabilizable: Vec<i64>,
    pub offending_detectable: Vec<i64>,
}

/// `d`-th largest singular value of `m` where `d = min(rows, cols)`, and whether it clears the tolerance.
fn rank_margin(m: &CMat, scale: f64, tol: f64) -> (bool, f64) {
    let sv = linalg::singular_values(m);
    let smin = *sv.last().unwrap_or(&0.0);
    let threshold = tol * sv.first().copied().unwrap_or(0.0).max(scale).max(1.0);
    (smin > threshold, smin)
}

fn pbh_control(a: &CMat, b: &CMat, lambda: Complex64, tol: f64) -> (bool, f64) {
    let n = a.nrows();
    let m = linalg::hstack(&(linalg::identity(n) * lambda - a), b);
    rank_margin(&m, linalg::norm2(a), tol)
}

fn pbh_observe(a: &CMat, c: &CMat, lambda: Complex64, tol: f64) -> (bool, f64) {
    let n = a.nrows();
    let m = linalg::vstack(&(linalg::identity(n) * lambda - a), c);
    rank_margin(&m, linalg::norm2(a), tol)
}

/// Eigenvalues with `Re >= 0`, merged when closer than `1e-8 (1 + |lambda|)`.
fn unstable_clusters(a: &CMat) -> Result<Vec<Complex64>> {
    let mut out: Vec<Complex64> = Vec::new();
    for z in linalg::eigenvalues(a)? {
        if z.re >= 0.0 && !out.iter().any(|w| (w - z).norm() < 1e-8 * (1.0 + z.norm())) {
            out.push(z);
        }
    }
    Ok(out)
}

/// Hautus test on every unstable block, plus a joint test on the assembled unstable part
/// (blocks sharing an eigenvalue can be individually but not jointly stabilizable).
pub fn check_modes(sys: &ModalSystem, tol: f64) -> Result<ModeCheckReport> {
    let mut blocks = Vec::new();
    let mut off_s = Vec::new();
    let mut off_d = Vec::new();
    let n_unstable = sys.unstable_block_count();
    for blk in &sys.blocks()[..n_unstable] {
        let eigs = blk.eigenvalues();
        let (mut s_ok, mut d_ok) = (true, true);
        let (mut s_m, mut d_m) = (f64::INFINITY, f64::INFINITY);
        for lam in unstable_clusters(&blk.block_matrix)? {
            let (ok, m) = pbh_control(&blk.block_matrix, &blk.input_row, lam, tol);
            s_ok &= ok;
            s_m = s_m.min(m);
            let (ok, m) = pbh_observe(&blk.block_matrix, &blk.output_col, lam, tol);
            d_ok &= ok;
            d_m = d_m.min(m);
        }
        if !s_ok {
            off_s.push(blk.label);
        }
        if !d_ok {
            off_d.push(blk.label);
        }
        blocks.push(BlockCheck { label: blk.label, eigenvalues: eigs, stabilizable: s_ok, detectable: d_ok, control_margin: s_m, observe_margin: d_m });
    }
    let joint = sys.dense_prefix(n_unstable);
    for lam in unstable_clusters(&joint.a)? {
        let sharing: Vec<i64> = sys.blocks()[..n_unstable]
            .iter()
            .filter(|b| b.eigenvalues().iter().any(|z| (z - lam).norm() < 1e-8 * (1.0 + lam.norm())))
            .map(|b| b.label)
            .collect();
        if !pbh_control(&joint.a, &joint.b, lam, tol).0 {
            off_s.extend(sharing.iter().filter(|l| !off_s.contains(l)).collect::<Vec<_>>());
        }
        if !pbh_observe(&joint.a, &joint.c, lam, tol).0 {
            off_d.extend(sharing.iter().filter(|l| !off_d.contains(l)).collect::<Vec<_>>());
        }
    }
    Ok(ModeCheckReport { blocks, stabilizable: off_s.is_empty(), detectable: off_d.is_empty(), offending_stabilizable: off_s, offending_detectable: off_d })
}

/// Stabilizability part of [`check_modes`].
pub fn check_stabilizable(sys: &ModalSystem) -> Result<ModeCheckReport> {
    check_modes(sys, PBH_TOL)
}

/// Detectability part of [`check_modes`] (same report; read the `detectable` fields).
pub fn check_detectable(sys: &ModalSystem) -> Result<ModeCheckReport> {
    check_modes(sys, PBH_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    pub gain: CMat,
    pub riccati_residual: f64,
    /// Spectral abscissa of the closed-loop matrix.
    pub achieved_abscissa: f64,
}

/// LQR state feedback with unit weights: `A + B K` is Hurwitz.
pub fn design_feedback(a: &CMat, b: &CMat) -> Result<GainDesign> {
    let n = a.nrows();
    if n == 0 {
        return Ok(GainDesign { gain: CMat::zeros(b.ncols(), 0), riccati_residual: 0.0, achieved_abscissa: f64::NEG_INFINITY });
    }
    for lam in unstable_clusters(a)? {
        if !pbh_control(a, b, lam, PBH_TOL).0 {
            return Err(Error::NotStabilizable(vec![]));
        }
    }
    let care = linalg::solve_care(a, b)?;
    let k = -(b.adjoint() * &care.x);
    let (abscissa, _) = linalg::spectral_abscissa_of(&(a + b * &k))?;
    if !(abscissa < 0.0) {
        return Err(Error::RiccatiDivergence(format!("closed loop abscissa {abscissa} is not negative")));
    }
    Ok(GainDesign { gain: k, riccati_residual: care.residual, achieved_abscissa: abscissa })
}

/// Output injection `L` with `A + L C` Hurwitz, by duality with [`design_feedback`].
pub fn design_observer(a: &CMat, c: &CMat) -> Result<GainDesign> {
    let dual = design_feedback(&a.transpose(), &c.transpose()).map_err(|e| match e {
        Error::NotStabilizable(l) => Error::NotDetectable(l),
        other => other,
    })?;
    Ok(GainDesign { gain: dual.gain.transpose(), ..dual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverController {
    pub e: CMat,
    pub f: CMat,
    pub g: CMat,
    pub k_u: CMat,
    pub l_u: CMat,
    pub n_u: usize,
    pub n_r: usize,
    pub feedback_abscissa: f64,
    pub observer_abscissa: f64,
    pub feedback_residual: f64,
    pub observer_residual: f64,
}

impl ObserverController {
    pub fn system(&self) -> StateSpaceSystem {
        StateSpaceSystem { a: self.e.clone(), b: self.f.clone(), c: self.g.clone(), d: CMat::zeros(self.g.nrows(), self.f.ncols()) }
    }

    pub fn dim(&self) -> usize {
        self.n_u + self.n_r
    }
}

/// Assembles `E`, `F`, `G` from designed gains and a truncated plant whose first `n_u`
/// coordinates are the unstable part.
pub fn assemble_controller(truncated: &StateSpaceSystem, n_u: usize, k_u: &CMat, l_u: &CMat) -> Result<(CMat, CMat, CMat)> {
    let n = truncated.state_dim();
    let (m, p) = (truncated.input_dim(), truncated.output_dim());
    if n_u > n || k_u.shape() != (m, n_u) || l_u.shape() != (n_u, p) {
        return Err(Error::DimensionMismatch(format!("gains K {:?}, L {:?} for n_u = {n_u}, n = {n}", k_u.shape(), l_u.shape())));
    }
    let mut l_full = CMat::zeros(n, p);
    l_full.view_mut((0, 0), (n_u, p)).copy_from(l_u);
    let mut g = CMat::zeros(m, n);
    g.view_mut((0, 0), (m, n_u)).copy_from(k_u);
    // the plant is block diagonal across the unstable / retained split
    let mut a_split = truncated.a.clone();
    a_split.view_mut((n_u, 0), (n - n_u, n_u)).fill(linalg::ZERO);
    a_split.view_mut((0, n_u), (n_u, n - n_u)).fill(linalg::ZERO);
    let e = a_split + &l_full * &truncated.c + &truncated.b * &g;
    Ok((e, -l_full, g))
}

/// Observer-based controller: `K`, `L` act on the unstable coordinates only; the retained
/// stable coordinates are copied into the observer without injection.
pub fn synthesize_controller(partition: &SpectrumPartition, truncated: &StateSpaceSystem) -> Result<ObserverController> {
    let n_u = partition.unstable_dim;
    let n = truncated.state_dim();
    if n_u > n {
        return Err(Error::DimensionMismatch(format!("unstable dimension {n_u} exceeds truncated dimension {n}")));
    }
    let a_u = truncated.a.view((0, 0), (n_u, n_u)).into_owned();
    let b_u = truncated.b.rows(0, n_u).into_owned();
    let c_u = truncated.c.columns(0, n_u).into_owned();
    let fb = design_feedback(&a_u, &b_u).map_err(|e| match e {
        Error::NotStabilizable(_) => Error::NotStabilizable(partition.unstable_indices.clone()),
        other => other,
    })?;
    let ob = design_observer(&a_u, &c_u).map_err(|e| match e {
        Error::NotDetectable(_) => Error::NotDetectable(partition.unstable_indices.clone()),
        other => other,
    })?;
    let (e, f, g) = assemble_controller(truncated, n_u, &fb.gain, &ob.gain)?;
    Ok(ObserverController {
        e,
        f,
        g,
        k_u: fb.gain,
        l_u: ob.gain,
        n_u,
        n_r: n - n_u,
        feedback_abscissa: fb.achieved_abscissa,
        observer_abscissa: ob.achieved_abscissa,
        feedback_residual: fb.riccati_residual,
        observer_residual: ob.riccati_residual,
    })
}

/// `Sys([[A + B K, B K], [0, A + L C]], [0; -L], [K, K])`: the map from tail output to
/// plant input through the controlled unstable part.
pub fn reduced_r_system(a_u: &CMat, b_u: &CMat, c_u: &CMat, k_u: &CMat, l_u: &CMat) -> Result<StateSpaceSystem> {
    let n = a_u.nrows();
    let top_left = a_u + b_u * k_u;
    let bottom_right = a_u + l_u * c_u;
    for m in [&top_left, &bottom_right] {
        let (s, _) = linalg::spectral_abscissa_of(m)?;
        if n > 0 && !(s < 0.0) {
            return Err(Error::NotHurwitz { abscissa: s });
        }
    }
    let a = linalg::block2x2(&top_left, &(b_u * k_u), &CMat::zeros(n, n), &bottom_right);
    let b = linalg::vstack(&CMat::zeros(n, l_u.ncols()), &(-l_u));
    let c = linalg::hstack(k_u, k_u);
    StateSpaceSystem::strictly_proper(a, b, c)
}

/// Reduced R-system of a synthesized controller, read off the truncated plant.
pub fn controller_r_system(ctrl: &ObserverController, truncated: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    let n = ctrl.n_u;
    reduced_r_system(
        &truncated.a.view((0, 0), (n, n)).into_owned(),
        &truncated.b.rows(0, n).into_owned(),
        &truncated.c.columns(0, n).into_owned(),
        &ctrl.k_u,
        &ctrl.l_u,
    )
}

/// R-system of an arbitrary strictly proper controller `(E, F, G)` on the truncated plant:
/// input is the tail output (added to the measurement), output is the plant input.
pub fn general_r_system(truncated: &StateSpaceSystem, controller: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    let a = modal_core::close_loop_direct(truncated, controller)?;
    let n = truncated.state_dim();
    let b = linalg::vstack(&CMat::zeros(n, controller.input_dim()), &controller.b);
    let c = linalg::hstack(&CMat::zeros(controller.output_dim(), n), &controller.c);
    StateSpaceSystem::strictly_proper(a, b, c)
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub controller: ObserverController,
    pub certificate: StabilityCertificate,
    pub partition: SpectrumPartition,
    pub truncated: StateSpaceSystem,
    pub tail: TailModel,
    pub epsilon: f64,
    pub r_system: StateSpaceSystem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    pub margin: f64,
    pub margin_fraction: f64,
    pub max_halvings: u32,
    pub pbh_tol: f64,
    /// Explicit β grid; the default geometric grid when `None`.
    pub beta_grid: Option<Vec<f64>>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { margin: -1e-9, margin_fraction: 0.5, max_halvings: 60, pbh_tol: PBH_TOL, beta_grid: None }
    }
}

/// IO-(0,1) bound of `R` at `beta = 0`, used to seed the truncation threshold.
pub fn r_gain_estimate(r: &StateSpaceSystem, margin_fraction: f64) -> Result<f64> {
    if r.state_dim() == 0 {
        return Ok(0.0);
    }
    let env = gains::decay_envelope(&r.a, margin_fraction)?;
    Ok(gains::r_gains(r, &env, 0.0)?.1.value)
}

/// Full pipeline: partition, gain design, then truncation threshold halving until the
/// small-gain certificate passes or every resolved block is already retained.
fn finish(
    partition: &SpectrumPartition,
    truncated: StateSpaceSystem,
    tail: TailModel,
    mut certificate: StabilityCertificate,
    mut trail: Vec<String>,
    epsilon: f64,
    r_system: StateSpaceSystem,
) -> Result<SynthesisOutcome> {
    let controller = synthesize_controller(partition, &truncated)?;
    trail.append(&mut certificate.diagnostics);
    certificate.diagnostics = trail;
    Ok(SynthesisOutcome { controller, certificate, partition: partition.clone(), truncated, tail, epsilon, r_system })
}

pub fn synthesize(sys: &ModalSystem, opts: &SynthesisOptions) -> Result<SynthesisOutcome> {
    let partition = modal_core::partition_spectrum(sys, opts.margin)?;
    let report = check_modes(sys, opts.pbh_tol)?;
    if !report.stabilizable {
        return Err(Error::NotStabilizable(report.offending_stabilizable));
    }
    if !report.detectable {
        return Err(Error::NotDetectable(report.offending_detectable));
    }
    let n_blocks_u = partition.unstable_count();
    let (unstable, _) = modal_core::truncate(sys, n_blocks_u)?;
    let base = synthesize_controller(&partition, &unstable)?;
    let r = controller_r_system(&base, &unstable)?;
    let gain_r = r_gain_estimate(&r, opts.margin_fraction)?;
    let mut epsilon = if gain_r > 0.0 { 0.5 / gain_r } else { 1.0 };
    let mut trail = vec![format!("R gain estimate at beta = 0: {gain_r:e}")];
    let mut last_n = None;
    for _ in 0..=opts.max_halvings {
        let n = match modal_core::select_truncation(sys, epsilon) {
            Ok(n) => n,
            Err(Error::NotReachable { best, .. }) => {
                trail.push(format!("epsilon = {epsilon:e} not reachable (best tail input norm {best:e})"));
                let n = sys.blocks().len();
                if last_n != Some(n) {
                    let (truncated, tail) = modal_core::truncate(sys, n)?;
                    let cert = gains::search_certificate_on(&r, &tail, n, opts.margin_fraction, opts.beta_grid.as_deref())?;
                    trail.push(format!("all resolved blocks: N = {n}, product = {:e}", cert.product));
                    if cert.verdict == Verdict::Certified {
                        return finish(&partition, truncated, tail, cert, trail, epsilon, r);
                    }
                }
                trail.push("increase N_max".into());
                return Err(Error::CertificateNotFound(trail.join("; ")));
            }
            Err(e) => return Err(e),
        };
        if last_n == Some(n) {
            epsilon /= 2.0;
            continue;
        }
        last_n = Some(n);
        let (truncated, tail) = modal_core::truncate(sys, n)?;
        let cert = gains::search_certificate_on(&r, &tail, n, opts.margin_fraction, opts.beta_grid.as_deref())?;
        trail.push(format!("epsilon = {epsilon:e}: N = {n}, product = {:e}", cert.product));
        if cert.verdict == Verdict::Certified {
            return finish(&partition, truncated, tail, cert, trail, epsilon, r);
        }
        if n == sys.blocks().len() {
            trail.push("every resolved block retained; increase N_max".into());
            return Err(Error::CertificateNotFound(trail.join("; ")));
        }
        epsilon /= 2.0;
    }
    trail.push("epsilon halving budget exhausted; increase N_max".into());
    Err(Error::CertificateNotFound(trail.join("; ")))
}
