//! Plants in modal (block-diagonal) coordinates.
//!
//! A [`ModalSystem`] is a finite list of small generator blocks plus a
//! [`TailModel`] summarising the infinitely many stable modes that were never
//! resolved. Blocks are kept sorted by decreasing real part of their
//! rightmost eigenvalue, so unstable blocks always form a prefix and a
//! truncation order `N` is just "keep the first `N` blocks".

use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains;
use crate::linalg::{self, CMat};

/// Relative tolerance for treating `lambda` as an eigenvalue.
pub const EIGEN_COINCIDENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalBlock {
    /// Restriction of the generator to one (generalized) eigenspace, `d x d`.
    pub block_matrix: CMat,
    /// Modal input coefficients, `d x m`.
    pub input_row: CMat,
    /// Modal output coefficients, `p x d`.
    pub output_col: CMat,
    pub label: i64,
}

impl ModalBlock {
    pub fn new(block_matrix: CMat, input_row: CMat, output_col: CMat, label: i64) -> Result<Self> {
        let d = block_matrix.nrows();
        if d == 0 || d > 3 || block_matrix.ncols() != d {
            return Err(Error::InvalidArgument(format!("block {label}: dimension must be 1, 2 or 3")));
        }
        if input_row.nrows() != d || output_col.ncols() != d {
            return Err(Error::DimensionMismatch(format!("block {label}: coefficient shapes")));
        }
        if !(linalg::all_finite(&block_matrix) && linalg::all_finite(&input_row) && linalg::all_finite(&output_col)) {
            return Err(Error::InvalidArgument(format!("block {label}: non-finite entry")));
        }
        Ok(Self { block_matrix, input_row, output_col, label })
    }

    /// Scalar block `lambda` with real input/output coefficients.
    pub fn scalar(lambda: f64, input: f64, output: f64, label: i64) -> Result<Self> {
        Self::new(linalg::real_matrix(1, 1, &[lambda]), linalg::real_matrix(1, 1, &[input]), linalg::real_matrix(1, 1, &[output]), label)
    }

    pub fn dim(&self) -> usize {
        self.block_matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        // d <= 3: closed form for d <= 2, Schur otherwise
        linalg::eigenvalues(&self.block_matrix).unwrap_or_else(|_| vec![Complex64::new(f64::NAN, 0.0)])
    }

    /// The eigenvalue with the largest real part (ties: smallest |Im|).
    pub fn rightmost(&self) -> Complex64 {
        let mut eigs = self.eigenvalues();
        eigs.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal).then(a.im.abs().partial_cmp(&b.im.abs()).unwrap_or(Ordering::Equal)));
        eigs[0]
    }

    pub fn abscissa(&self) -> f64 {
        self.rightmost().re
    }

    pub fn is_unstable(&self) -> bool {
        self.abscissa() >= 0.0
    }

    /// Contribution of this block to a tail model, in the block's own coordinates.
    pub fn tail_stats(&self) -> Result<BlockTailStats> {
        let input_sq = self.input_row.norm_squared();
        let smin = linalg::sigma_min(&self.block_matrix);
        let graph_sq = self.output_col.norm_squared() / (1.0 + smin).powi(2);
        let (amplitude, decay) = block_envelope(&self.block_matrix)?;
        Ok(BlockTailStats { input_sq, graph_sq, decay, amplitude })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockTailStats {
    pub input_sq: f64,
    pub graph_sq: f64,
    pub decay: f64,
    pub amplitude: f64,
}

/// `(a, alpha)` with `|exp(M t)| <= a exp(-alpha t)` for a small stable block.
///
/// Diagonalizable blocks use the exact decay and the condition number of the
/// unit-column eigenvector matrix; (near-)defective blocks fall back to the
/// Lyapunov envelope.
fn block_envelope(m: &CMat) -> Result<(f64, f64)> {
    let d = m.nrows();
    let eigs = linalg::eigenvalues(m)?;
    let abscissa = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if d == 1 {
        return Ok((1.0, -abscissa));
    }
    let scale = linalg::norm2(m).max(1.0);
    let distinct = (0..d).all(|i| ((i + 1)..d).all(|j| (eigs[i] - eigs[j]).norm() > 1e-7 * scale));
    if distinct {
        let mut v = CMat::zeros(d, d);
        for (j, &lam) in eigs.iter().enumerate() {
            let shifted = m - linalg::identity(d) * lam;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.ok_or(Error::EigensolverNoConvergence)?;
            let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            let row = v_t.row(imin).adjoint();
            let nrm = row.norm();
            for i in 0..d {
                v[(i, j)] = row[i] / nrm;
            }
        }
        let c = linalg::cond2(&v);
        if c.is_finite() && c < 1e8 {
            return Ok((c.max(1.0), -abscissa));
        }
    }
    let env = gains::decay_envelope(m, 0.5)?;
    Ok((env.amplitude_a, env.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    /// Spectral margin: every tail eigenvalue has `Re <= -decay_alpha`.
    /// Non-positive values mean the unresolved part is not stable.
    pub decay_alpha: f64,
    /// l2 norm of the tail input coefficients.
    pub input_norm: f64,
    /// Bound on the tail output operator from the graph norm of the generator.
    pub output_graph_norm: f64,
    pub amplitude_a: f64,
}

impl TailModel {
    /// A tail with no modes at all.
    pub fn empty() -> Self {
        Self { decay_alpha: f64::INFINITY, input_norm: 0.0, output_graph_norm: 0.0, amplitude_a: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_norms = self.input_norm.is_finite() && self.output_graph_norm.is_finite() && self.input_norm >= 0.0 && self.output_graph_norm >= 0.0;
        if !finite_norms || !(self.amplitude_a >= 1.0) || self.decay_alpha.is_nan() {
            return Err(Error::InvalidArgument(format!("malformed tail model {self:?}")));
        }
        Ok(())
    }

    pub fn envelope(&self) -> gains::DecayEnvelope {
        gains::DecayEnvelope { amplitude_a: self.amplitude_a, alpha: self.decay_alpha }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalSystem {
    blocks: Vec<ModalBlock>,
    pub tail: TailModel,
    pub input_dim: usize,
    pub output_dim: usize,
}

fn block_order(a: &ModalBlock, b: &ModalBlock) -> Ordering {
    let (ra, rb) = (a.rightmost(), b.rightmost());
    rb.re.partial_cmp(&ra.re).unwrap_or(Ordering::Equal).then(ra.im.abs().partial_cmp(&rb.im.abs()).unwrap_or(Ordering::Equal)).then(a.label.cmp(&b.label))
}

impl ModalSystem {
    pub fn new(mut blocks: Vec<ModalBlock>, tail: TailModel, input_dim: usize, output_dim: usize) -> Result<Self> {
        tail.validate()?;
        for b in &blocks {
            if b.input_row.ncols() != input_dim || b.output_col.nrows() != output_dim {
                return Err(Error::DimensionMismatch(format!("block {} does not match m={input_dim}, p={output_dim}", b.label)));
            }
        }
        let mut labels: Vec<i64> = blocks.iter().map(|b| b.label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("block labels must be distinct".into()));
        }
        blocks.sort_by(block_order);
        Ok(Self { blocks, tail, input_dim, output_dim })
    }

    pub fn blocks(&self) -> &[ModalBlock] {
        &self.blocks
    }

    pub fn block(&self, label: i64) -> Option<&ModalBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn state_dim(&self) -> usize {
        self.blocks.iter().map(ModalBlock::dim).sum()
    }

    pub fn unstable_block_count(&self) -> usize {
        self.blocks.iter().take_while(|b| b.is_unstable()).count()
    }

    /// Dense realization of the first `n` blocks.
    pub fn dense_prefix(&self, n: usize) -> StateSpaceSystem {
        let kept = &self.blocks[..n];
        let a_blocks: Vec<&CMat> = kept.iter().map(|b| &b.block_matrix).collect();
        let a = linalg::block_diag(&a_blocks);
        let dim = a.nrows();
        let mut b = CMat::zeros(dim, self.input_dim);
        let mut c = CMat::zeros(self.output_dim, dim);
        let mut off = 0;
        for blk in kept {
            let d = blk.dim();
            b.view_mut((off, 0), (d, self.input_dim)).copy_from(&blk.input_row);
            c.view_mut((0, off), (self.output_dim, d)).copy_from(&blk.output_col);
            off += d;
        }
        StateSpaceSystem { d: CMat::zeros(self.output_dim, self.input_dim), a, b, c }
    }

    /// Tail models for every truncation order `0..=len`, accumulated from the far end
    /// so the input norm is non-increasing in `N` in floating point as well.
    fn tail_suffixes(&self) -> Result<Vec<TailModel>> {
        let nb = self.blocks.len();
        let mut out = vec![self.tail; nb + 1];
        let mut input_sq = self.tail.input_norm.powi(2);
        let mut graph_sq = self.tail.output_graph_norm.powi(2);
        let mut decay = self.tail.decay_alpha;
        let mut amp = self.tail.amplitude_a;
        for i in (0..nb).rev() {
            let blk = &self.blocks[i];
            if blk.is_unstable() {
                // unstable blocks never enter a tail; later entries are unreachable
                for slot in out.iter_mut().take(i + 1) {
                    slot.decay_alpha = f64::NAN;
                }
                break;
            }
            let st = blk.tail_stats()?;
            input_sq += st.input_sq;
            graph_sq += st.graph_sq;
            decay = decay.min(st.decay);
            amp = amp.max(st.amplitude);
            out[i] = TailModel { decay_alpha: decay, input_norm: input_sq.sqrt(), output_graph_norm: graph_sq.sqrt(), amplitude_a: amp };
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
    pub d: CMat,
}

impl StateSpaceSystem {
    pub fn new(a: CMat, b: CMat, c: CMat, d: CMat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!("A {:?}, B {:?}, C {:?}, D {:?}", a.shape(), b.shape(), c.shape(), d.shape())));
        }
        if ![&a, &b, &c, &d].iter().all(|m| linalg::all_finite(m)) {
            return Err(Error::InvalidArgument("non-finite state-space entry".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Strictly proper system (`D = 0`).
    pub fn strictly_proper(a: CMat, b: CMat, c: CMat) -> Result<Self> {
        let d = CMat::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    /// Memoryless gain `y = d u`.
    pub fn static_gain(d: CMat) -> Self {
        Self { a: CMat::zeros(0, 0), b: CMat::zeros(0, d.ncols()), c: CMat::zeros(d.nrows(), 0), d }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn has_feedthrough(&self) -> bool {
        self.d.iter().any(|z| *z != linalg::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPartition {
    pub unstable_indices: Vec<i64>,
    /// State dimension of the unstable blocks (the leading coordinates of any truncation).
    pub unstable_dim: usize,
    pub retained_stable_indices: Vec<i64>,
    pub tail: TailModel,
    pub margin_omega: f64,
}

impl SpectrumPartition {
    pub fn unstable_count(&self) -> usize {
        self.unstable_indices.len()
    }
}

/// Classifies resolved blocks into the unstable part and the stable remainder.
///
/// `margin < 0` is the required spectral gap: every stable block and the tail
/// must sit at or left of `Re = margin`.
pub fn partition_spectrum(sys: &ModalSystem, margin: f64) -> Result<SpectrumPartition> {
    if !(margin < 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be negative, got {margin}")));
    }
    if !(sys.tail.decay_alpha > 0.0) {
        return Err(Error::InfiniteUnstablePart { decay_alpha: sys.tail.decay_alpha });
    }
    let mut unstable = Vec::new();
    let mut unstable_dim = 0;
    let mut retained = Vec::new();
    let mut omega = -sys.tail.decay_alpha;
    for b in sys.blocks() {
        let s = b.abscissa();
        if s >= 0.0 {
            unstable.push(b.label);
            unstable_dim += b.dim();
        } else {
            omega = omega.max(s);
            retained.push(b.label);
        }
    }
    if omega > margin {
        return Err(Error::MarginViolation { abscissa: omega, margin });
    }
    Ok(SpectrumPartition { unstable_indices: unstable, unstable_dim, retained_stable_indices: retained, tail: sys.tail, margin_omega: omega })
}

/// `C_block (lambda I - A_block)^{-1}` for every resolved block, concatenated in block order.
pub fn resolvent_output(sys: &ModalSystem, lambda: Complex64) -> Result<CMat> {
    let p = sys.output_dim;
    let mut out = CMat::zeros(p, sys.state_dim());
    let mut off = 0;
    for b in sys.blocks() {
        let d = b.dim();
        for e in b.eigenvalues() {
            if (lambda - e).norm() < EIGEN_COINCIDENCE_TOL * (1.0 + lambda.norm()) {
                return Err(Error::ResolventAtEigenvalue { lambda, eigenvalue: e });
            }
        }
        let shifted = linalg::identity(d) * lambda - &b.block_matrix;
        let inv = shifted.try_inverse().ok_or(Error::ResolventAtEigenvalue { lambda, eigenvalue: lambda })?;
        out.view_mut((0, off), (p, d)).copy_from(&(&b.output_col * inv));
        off += d;
    }
    Ok(out)
}

/// Cascade `s2 o s1`: the output of `s1` drives `s2`. State is `(x1, x2)`.
pub fn serial_compose(s1: &StateSpaceSystem, s2: &StateSpaceSystem) -> Result<StateSpaceSystem> {
    if s1.output_dim() != s2.input_dim() {
        return Err(Error::DimensionMismatch(format!("serial composition: s1 outputs {} signals, s2 expects {}", s1.output_dim(), s2.input_dim())));
    }
    let a = linalg::block2x2(&s1.a, &CMat::zeros(s1.state_dim(), s2.state_dim()), &(&s2.b * &s1.c), &s2.a);
    let b = linalg::vstack(&s1.b, &(&s2.b * &s1.d));
    let c = linalg::hstack(&(&s2.d * &s1.c), &s2.c);
    let d = &s2.d * &s1.d;
    StateSpaceSystem::new(a, b, c, d)
}

fn check_loop_shapes(plant: &StateSpaceSystem, controller: &StateSpaceSystem) -> Result<()> {
    if plant.output_dim() != controller.input_dim() || controller.output_dim() != plant.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "plant (m={}, p={}) vs controller (m={}, p={})",
            plant.input_dim(),
            plant.output_dim(),
            controller.input_dim(),
            controller.output_dim()
        )));
    }
    if plant.has_feedthrough() || controller.has_feedthrough() {
        return Err(Error::InvalidArgument("closed loop requires strictly proper factors".into()));
    }
    Ok(())
}

/// Closed-loop generator `[[A, B G], [F C, E]]` in the original coordinates.
pub fn close_loop_direct(plant: &StateSpaceSystem, controller: &StateSpaceSystem) -> Result<CMat> {
    check_loop_shapes(plant, controller)?;
    Ok(linalg::block2x2(&plant.a, &(&plant.b * &controller.c), &(&controller.b * &plant.c), &controller.a))
}

/// Closed-loop generator in the coordinates `(x, w + F C_lambda x)` where
/// `C_lambda = C (lambda - A)^{-1}`; similar to [`close_loop_direct`] for every
/// admissible `lambda`.
pub fn close_loop(plant: &StateSpaceSystem, controller: &StateSpaceSystem, lambda: Complex64) -> Result<CMat> {
    check_loop_shapes(plant, controller)?;
    let n = plant.state_dim();
    for e in linalg::eigenvalues(&plant.a)? {
        if (lambda - e).norm() < EIGEN_COINCIDENCE_TOL * (1.0 + lambda.norm()) {
            return Err(Error::ResolventAtEigenvalue { lambda, eigenvalue: e });
        }
    }
    let shifted = linalg::identity(n) * lambda - &plant.a;
    let c_lambda = shifted.transpose().lu().solve(&plant.c.transpose()).ok_or(Error::ResolventAtEigenvalue { lambda, eigenvalue: lambda })?.transpose();
    let (e, f, g) = (&controller.a, &controller.b, &controller.c);
    let bg = &plant.b * g;
    let fcl = f * &c_lambda;
    let top_left = &plant.a - &bg * &fcl;
    let bottom_left = &fcl * lambda - e * &fcl - &fcl * &bg * &fcl;
    let bottom_right = e + &fcl * &bg;
    Ok(linalg::block2x2(&top_left, &bg, &bottom_left, &bottom_right))
}

/// Keeps the first `n` blocks as a dense system; everything else is folded into the tail.
pub fn truncate(sys: &ModalSystem, n: usize) -> Result<(StateSpaceSystem, TailModel)> {
    let nb = sys.blocks().len();
    if n > nb {
        return Err(Error::InvalidArgument(format!("truncation order {n} exceeds {nb} resolved blocks")));
    }
    if let Some(b) = sys.blocks()[n..].iter().find(|b| b.is_unstable()) {
        return Err(Error::UnstableModeDiscarded { label: b.label });
    }
    let tails = sys.tail_suffixes()?;
    Ok((sys.dense_prefix(n), tails[n]))
}

/// Smallest truncation order keeping every unstable block whose tail input norm is below `epsilon`.
pub fn select_truncation(sys: &ModalSystem, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let tails = sys.tail_suffixes()?;
    let start = sys.unstable_block_count();
    (start..tails.len()).find(|&n| tails[n].input_norm < epsilon).ok_or(Error::NotReachable { epsilon, best: tails[tails.len() - 1].input_norm })
}

/// Tail models for all admissible truncation orders, indexed by `N`.
pub fn tail_profile(sys: &ModalSystem) -> Result<Vec<(usize, TailModel)>> {
    let tails = sys.tail_suffixes()?;
    let start = sys.unstable_block_count();
    Ok((start..tails.len()).map(|n| (n, tails[n])).collect())
}
