//! β-weighted input-output and input-state gain bounds, and the small-gain certificate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::modal_core::{StateSpaceSystem, TailModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainKind {
    IS,
    IO,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    LemmaWeak,
    LemmaStrong,
    Composed,
    LyapunovEnvelope,
    Empirical,
}

/// Upper bound on a β-gain. `smoothness = (n, m)`: inputs measured with `n`
/// derivatives, outputs (or states) with `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBound {
    pub beta: f64,
    pub value: f64,
    pub kind: GainKind,
    pub smoothness: (u32, u32),
    pub provenance: Provenance,
}

impl GainBound {
    pub fn new(beta: f64, value: f64, kind: GainKind, smoothness: (u32, u32), provenance: Provenance) -> Self {
        Self { beta, value, kind, smoothness, provenance }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.value >= 0.0
    }
}

/// `‖exp(A t)‖ <= amplitude_a * exp(-alpha t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub amplitude_a: f64,
    pub alpha: f64,
}

fn check_beta(env: &DecayEnvelope, beta: f64) -> Result<f64> {
    if !(beta < env.alpha) {
        return Err(Error::BetaExceedsDecay { beta, alpha: env.alpha });
    }
    Ok(env.alpha - beta)
}

/// Bounds for a system with possibly unbounded output: IS-(1,1) and IO-(1,0).
pub fn gain_weak(env: &DecayEnvelope, beta: f64, norm_b: f64, norm_c_graph: f64) -> Result<(GainBound, GainBound)> {
    let gap = check_beta(env, beta)?;
    let a = env.amplitude_a;
    let (h, g) = if gap.is_infinite() {
        ((a + 1.0) * norm_b, a * norm_b * norm_c_graph)
    } else {
        ((a * norm_b / gap).max((a + 1.0) * norm_b), a * norm_b * norm_c_graph * (1.0 + gap) / gap)
    };
    Ok((GainBound::new(beta, h, GainKind::IS, (1, 1), Provenance::LemmaWeak), GainBound::new(beta, g, GainKind::IO, (1, 0), Provenance::LemmaWeak)))
}

/// Bounds for a bounded generator: IS-(0,1) and IO-(0,1).
pub fn gain_strong(env: &DecayEnvelope, beta: f64, norm_b: f64, norm_c: f64, norm_a: f64) -> Result<(GainBound, GainBound)> {
    let gap = check_beta(env, beta)?;
    let a = env.amplitude_a;
    let h = (a * norm_b / gap).max(a * norm_b * norm_a / gap + norm_b);
    let g = (a * norm_b * norm_c / gap).max(a * norm_b * norm_a * norm_c / gap + norm_b * norm_c);
    Ok((GainBound::new(beta, h, GainKind::IS, (0, 1), Provenance::LemmaStrong), GainBound::new(beta, g, GainKind::IO, (0, 1), Provenance::LemmaStrong)))
}

fn same_beta(a: &GainBound, b: &GainBound) -> Result<()> {
    if a.beta != b.beta {
        return Err(Error::BetaMismatch(a.beta, b.beta));
    }
    Ok(())
}

/// IO gain of `S2 o S1` from the IO gains of its stages.
pub fn compose_serial(g1: &GainBound, g2: &GainBound) -> Result<GainBound> {
    same_beta(g1, g2)?;
    if g1.kind != GainKind::IO || g2.kind != GainKind::IO {
        return Err(Error::InvalidArgument("serial composition takes two IO gains".into()));
    }
    if g1.smoothness.1 < g2.smoothness.0 {
        return Err(Error::SmoothnessMismatch(format!("stage 1 output has {} derivatives, stage 2 needs {}", g1.smoothness.1, g2.smoothness.0)));
    }
    Ok(GainBound::new(g1.beta, g1.value * g2.value, GainKind::IO, (g1.smoothness.0, g2.smoothness.1), Provenance::Composed))
}

/// IS gain of `S2 o S1`: `h1 + h2 g1`.
pub fn compose_is(h1: &GainBound, h2: &GainBound, g1: &GainBound) -> Result<GainBound> {
    same_beta(h1, h2)?;
    same_beta(h1, g1)?;
    if h1.kind != GainKind::IS || h2.kind != GainKind::IS || g1.kind != GainKind::IO {
        return Err(Error::InvalidArgument("compose_is takes (IS, IS, IO)".into()));
    }
    if g1.smoothness.1 < h2.smoothness.0 {
        return Err(Error::SmoothnessMismatch(format!("stage 1 output has {} derivatives, stage 2 needs {}", g1.smoothness.1, h2.smoothness.0)));
    }
    let m = h1.smoothness.1.min(h2.smoothness.1);
    Ok(GainBound::new(h1.beta, h1.value + h2.value * g1.value, GainKind::IS, (h1.smoothness.0, m), Provenance::Composed))
}

/// Lyapunov-based exponential envelope for a Hurwitz matrix.
pub fn decay_envelope(a: &CMat, margin_fraction: f64) -> Result<DecayEnvelope> {
    if !(margin_fraction > 0.0 && margin_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("margin_fraction must lie in (0, 1), got {margin_fraction}")));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DecayEnvelope { amplitude_a: 1.0, alpha: f64::INFINITY });
    }
    let (sigma, _) = linalg::spectral_abscissa_of(a)?;
    if !(sigma < 0.0) {
        return Err(Error::NotHurwitz { abscissa: sigma });
    }
    let alpha = -sigma * margin_fraction;
    let shifted = a + linalg::identity(n) * linalg::re(alpha);
    let p = linalg::solve_lyapunov(&shifted, &(-linalg::identity(n)))?;
    let p = (&p + p.adjoint()) * linalg::re(0.5);
    if !linalg::all_finite(&p) || p.clone().cholesky().is_none() {
        return Err(Error::LyapunovSolveFailed("Lyapunov solution is not positive definite".into()));
    }
    let cond = linalg::cond2(&p);
    if !cond.is_finite() {
        return Err(Error::LyapunovSolveFailed(format!("condition number {cond}")));
    }
    Ok(DecayEnvelope { amplitude_a: cond.sqrt().max(1.0), alpha })
}

/// IO-(1,0) bound for the discarded subsystem described by `tail`.
pub fn tail_gain(tail: &TailModel, beta: f64) -> Result<GainBound> {
    Ok(tail_gains(tail, beta)?.1)
}

/// `(IS-(1,1), IO-(1,0))` bounds of the discarded subsystem.
pub fn tail_gains(tail: &TailModel, beta: f64) -> Result<(GainBound, GainBound)> {
    gain_weak(&tail.envelope(), beta, tail.input_norm, tail.output_graph_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Certified,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub beta: f64,
    pub gain_r: GainBound,
    pub is_r: GainBound,
    pub gain_tail: GainBound,
    pub is_tail: GainBound,
    pub product: f64,
    pub truncation_n: usize,
    pub verdict: Verdict,
    pub diagnostics: Vec<String>,
}

/// Small-gain test for the loop formed by the controller loop `R` and the discarded tail.
pub fn certify_small_gain(gain_r: &GainBound, is_r: &GainBound, gain_tail: &GainBound, is_tail: &GainBound, n: usize) -> StabilityCertificate {
    let beta = gain_r.beta;
    let mut diagnostics = Vec::new();
    let mut ok = true;
    if !(beta > 0.0) {
        diagnostics.push(format!("beta = {beta} is not positive"));
        ok = false;
    }
    for (name, g) in [("is_R", is_r), ("gain_tail", gain_tail), ("is_tail", is_tail)] {
        if g.beta != beta {
            diagnostics.push(format!("{name} evaluated at beta = {}, expected {beta}", g.beta));
            ok = false;
        }
    }
    let expected = [
        ("gain_R", gain_r, GainKind::IO, (0, 1)),
        ("is_R", is_r, GainKind::IS, (0, 1)),
        ("gain_tail", gain_tail, GainKind::IO, (1, 0)),
        ("is_tail", is_tail, GainKind::IS, (1, 1)),
    ];
    for (name, g, kind, sm) in expected {
        if g.kind != kind || g.smoothness != sm {
            diagnostics.push(format!("{name} is {:?}-{:?}, expected {kind:?}-{sm:?}", g.kind, g.smoothness));
            ok = false;
        }
    }
    // 0 * inf would be NaN; a zero tail gain closes the loop on its own
    let product = if gain_tail.value == 0.0 || gain_r.value == 0.0 { 0.0 } else { gain_r.value * gain_tail.value };
    diagnostics.push(format!(
        "N = {n}, beta = {beta:e}: gain_R = {:e}, gain_tail = {:e}, product = {product:e}, is_R = {:e}, is_tail = {:e}",
        gain_r.value, gain_tail.value, is_r.value, is_tail.value
    ));
    if !(is_r.is_finite() && is_tail.is_finite() && gain_r.is_finite() && gain_tail.is_finite()) {
        diagnostics.push("an IS or IO bound is infinite".into());
        ok = false;
    }
    if !(product < 1.0) {
        diagnostics.push("product >= 1: increase N to shrink the tail gain".into());
        ok = false;
    }
    StabilityCertificate {
        beta,
        gain_r: *gain_r,
        is_r: *is_r,
        gain_tail: *gain_tail,
        is_tail: *is_tail,
        product,
        truncation_n: n,
        verdict: if ok { Verdict::Certified } else { Verdict::Failed },
        diagnostics,
    }
}

/// Number of halvings in the β grid.
pub const BETA_GRID_STEPS: u32 = 12;

/// `{alpha_min / 2^j : j = 0..=12}`; an infinite `alpha_min` (no dynamics at all) is replaced by 1.
pub fn beta_grid(alpha_min: f64) -> Vec<f64> {
    let top = if alpha_min.is_finite() { alpha_min } else { 1.0 };
    (0..=BETA_GRID_STEPS).map(|j| top / f64::from(1u32 << j)).collect()
}

/// Bounds for the controller loop `R` (bounded generator).
pub fn r_gains(r: &StateSpaceSystem, env: &DecayEnvelope, beta: f64) -> Result<(GainBound, GainBound)> {
    if r.state_dim() == 0 {
        let g = linalg::norm2(&r.d);
        return Ok((
            GainBound::new(beta, 0.0, GainKind::IS, (0, 1), Provenance::LemmaStrong),
            GainBound::new(beta, g, GainKind::IO, (0, 1), Provenance::LemmaStrong),
        ));
    }
    gain_strong(env, beta, linalg::norm2(&r.b), linalg::norm2(&r.c), linalg::norm2(&r.a))
}

/// Scans the β grid and returns the first certified point, or the last attempt
/// (the one with the smallest β) when none certifies.
pub fn search_certificate(r: &StateSpaceSystem, tail: &TailModel, n: usize, margin_fraction: f64) -> Result<StabilityCertificate> {
    search_certificate_on(r, tail, n, margin_fraction, None)
}

/// [`search_certificate`] with an optional explicit β grid, scanned in the given order.
pub fn search_certificate_on(r: &StateSpaceSystem, tail: &TailModel, n: usize, margin_fraction: f64, betas: Option<&[f64]>) -> Result<StabilityCertificate> {
    let env_r = decay_envelope(&r.a, margin_fraction)?;
    let alpha_min = env_r.alpha.min(tail.decay_alpha);
    let grid = betas.map_or_else(|| beta_grid(alpha_min), <[f64]>::to_vec);
    let mut last: Option<StabilityCertificate> = None;
    let mut skipped = Vec::new();
    for beta in grid {
        let gains = r_gains(r, &env_r, beta).and_then(|(h, g)| Ok((h, g, tail_gains(tail, beta)?)));
        match gains {
            Ok((is_r, gain_r, (is_tail, gain_tail))) => {
                let mut cert = certify_small_gain(&gain_r, &is_r, &gain_tail, &is_tail, n);
                cert.diagnostics.splice(0..0, skipped.drain(..));
                cert.diagnostics.insert(0, format!("R envelope a = {:e}, alpha = {:e}; tail alpha = {:e}", env_r.amplitude_a, env_r.alpha, tail.decay_alpha));
                if cert.verdict == Verdict::Certified {
                    return Ok(cert);
                }
                last = Some(cert);
            }
            Err(Error::BetaExceedsDecay { beta, alpha }) => skipped.push(format!("beta = {beta:e} not below decay {alpha:e}")),
            Err(e) => return Err(e),
        }
    }
    last.ok_or_else(|| Error::CertificateNotFound(format!("no beta in the grid lies below the decay rate {alpha_min:e}: {}", skipped.join("; "))))
}
