//! Dense brute-force oracles: matrix exponential, exact LTI stepping, decay-rate fits
//! and empirical gain lower bounds.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::modal_core::{self, ModalSystem, StateSpaceSystem};

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [(3, 1.495585217958292e-2), (5, 2.53939833006323e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068)];
const THETA13: f64 = 5.371920351148152;

fn norm1(m: &CMat) -> f64 {
    m.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn scaled(m: &CMat, s: f64) -> CMat {
    m * Complex64::new(s, 0.0)
}

fn pade_low(a: &CMat, coeffs: &[f64]) -> (CMat, CMat) {
    let n = a.nrows();
    let a2 = a * a;
    let mut power = linalg::identity(n);
    let mut u = CMat::zeros(n, n);
    let mut v = CMat::zeros(n, n);
    for k in (0..coeffs.len()).step_by(2) {
        v += scaled(&power, coeffs[k]);
        u += scaled(&power, coeffs[k + 1]);
        power = &power * &a2;
    }
    (a * u, v)
}

fn pade13(a: &CMat) -> (CMat, CMat) {
    let b = &PADE13;
    let id = linalg::identity(a.nrows());
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]));
    let u = a * (inner_u + scaled(&a6, b[7]) + scaled(&a4, b[5]) + scaled(&a2, b[3]) + scaled(&id, b[1]));
    let inner_v = &a6 * (scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]));
    let v = inner_v + scaled(&a6, b[6]) + scaled(&a4, b[4]) + scaled(&a2, b[2]) + scaled(&id, b[0]);
    (u, v)
}

/// `exp(A t)` by scaling and squaring with a degree-13 (or lower) diagonal Padé approximant.
pub fn matrix_exponential(a: &CMat, t: f64) -> Result<CMat> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("matrix exponential of a non-square matrix".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let at = scaled(a, t);
    let nrm = norm1(&at);
    if !nrm.is_finite() {
        return Err(Error::Overflow { norm: nrm });
    }
    let ((u, v), squarings) = match THETA.iter().find(|(_, th)| nrm <= *th) {
        Some(&(3, _)) => (pade_low(&at, &PADE3), 0),
        Some(&(5, _)) => (pade_low(&at, &PADE5), 0),
        Some(&(7, _)) => (pade_low(&at, &PADE7), 0),
        Some(_) => (pade_low(&at, &PADE9), 0),
        None => {
            let s = (nrm / THETA13).log2().ceil().max(0.0) as i32;
            if s > 1000 {
                return Err(Error::Overflow { norm: nrm });
            }
            (pade13(&scaled(&at, 0.5f64.powi(s))), s)
        }
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::Overflow { norm: nrm })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !linalg::all_finite(&r) {
        return Err(Error::Overflow { norm: nrm });
    }
    Ok(r)
}

/// Largest real part over the spectrum, with the eigenvalue attaining it.
pub fn spectral_abscissa(a: &CMat) -> Result<(f64, Complex64)> {
    linalg::spectral_abscissa_of(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Full state; the first `plant_dim` entries belong to the plant, the rest to the controller.
    pub states: Vec<CVec>,
    pub inputs: Vec<CVec>,
    pub outputs: Vec<CVec>,
    pub plant_dim: usize,
    pub dt: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &CVec {
        self.states.last().expect("trajectory has at least the initial sample")
    }

    /// CSV export (real parts), 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.plant_dim;
        let q = self.states.first().map_or(0, |s| s.len() - n);
        let m = self.inputs.first().map_or(0, |v| v.len());
        let p = self.outputs.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=q).map(|i| format!("w_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=p).map(|i| format!("y_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:.16e}", self.times[k])];
            for v in [&self.states[k], &self.inputs[k], &self.outputs[k]] {
                row.extend(v.iter().map(|z| format!("{:.16e}", z.re)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon >= 0.0) || !dt.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("need dt > 0 and horizon >= 0, got dt = {dt}, horizon = {horizon}")));
    }
    Ok((horizon / dt).round() as usize)
}

/// Exact stepping of the closed loop `[[A, B G], [F C, E]]`.
pub fn simulate_closed_loop(plant: &StateSpaceSystem, controller: &StateSpaceSystem, x0: &CVec, w0: &CVec, horizon: f64, dt: f64) -> Result<Trajectory> {
    if x0.len() != plant.state_dim() || w0.len() != controller.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state sizes ({}, {}) vs system sizes ({}, {})",
            x0.len(),
            w0.len(),
            plant.state_dim(),
            controller.state_dim()
        )));
    }
    let m = modal_core::close_loop_direct(plant, controller)?;
    let steps = step_count(horizon, dt)?;
    let phi = matrix_exponential(&m, dt)?;
    let n = plant.state_dim();
    let q = controller.state_dim();
    let mut z = CVec::zeros(n + q);
    z.rows_mut(0, n).copy_from(x0);
    z.rows_mut(n, q).copy_from(w0);
    let mut traj = Trajectory { times: Vec::with_capacity(steps + 1), states: vec![], inputs: vec![], outputs: vec![], plant_dim: n, dt };
    for k in 0..=steps {
        if k > 0 {
            z = &phi * &z;
        }
        traj.times.push(k as f64 * dt);
        traj.inputs.push(&controller.c * z.rows(n, q));
        traj.outputs.push(&plant.c * z.rows(0, n));
        traj.states.push(z.clone());
    }
    Ok(traj)
}

/// Exact stepping of `x' = A x + B u` with `u` held constant on each step.
pub fn simulate_open_loop(sys: &StateSpaceSystem, x0: &CVec, input: impl Fn(f64) -> CVec, horizon: f64, dt: f64) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, system has {n} states", x0.len())));
    }
    let steps = step_count(horizon, dt)?;
    let aug = linalg::block2x2(&sys.a, &sys.b, &CMat::zeros(m, n), &CMat::zeros(m, m));
    let phi = matrix_exponential(&aug, dt)?;
    let (ad, bd) = (phi.view((0, 0), (n, n)).into_owned(), phi.view((0, n), (n, m)).into_owned());
    let mut x = x0.clone();
    let mut traj = Trajectory { times: vec![], states: vec![], inputs: vec![], outputs: vec![], plant_dim: n, dt };
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t);
        if u.len() != m {
            return Err(Error::DimensionMismatch(format!("input has {} entries, system expects {m}", u.len())));
        }
        traj.times.push(t);
        traj.outputs.push(&sys.c * &x + &sys.d * &u);
        traj.states.push(x.clone());
        x = &ad * &x + &bd * &u;
        traj.inputs.push(u);
    }
    Ok(traj)
}

/// Same as [`simulate_open_loop`] on the resolved blocks of a modal system, one block at a time.
pub fn simulate_modal(sys: &ModalSystem, x0: &CVec, input: impl Fn(f64) -> CVec, horizon: f64, dt: f64) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim;
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, system has {n} states", x0.len())));
    }
    let steps = step_count(horizon, dt)?;
    let mut props = Vec::with_capacity(sys.blocks().len());
    for b in sys.blocks() {
        let d = b.dim();
        let aug = linalg::block2x2(&b.block_matrix, &b.input_row, &CMat::zeros(m, d), &CMat::zeros(m, m));
        let phi = matrix_exponential(&aug, dt)?;
        props.push((phi.view((0, 0), (d, d)).into_owned(), phi.view((0, d), (d, m)).into_owned()));
    }
    let mut x = x0.clone();
    let mut traj = Trajectory { times: vec![], states: vec![], inputs: vec![], outputs: vec![], plant_dim: n, dt };
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t);
        let mut y = CVec::zeros(sys.output_dim);
        let mut next = CVec::zeros(n);
        let mut off = 0;
        for (b, (ad, bd)) in sys.blocks().iter().zip(&props) {
            let d = b.dim();
            let xb = x.rows(off, d);
            y += &b.output_col * xb;
            next.rows_mut(off, d).copy_from(&(ad * xb + bd * &u));
            off += d;
        }
        traj.times.push(t);
        traj.outputs.push(y);
        traj.states.push(x);
        traj.inputs.push(u);
        x = next;
    }
    Ok(traj)
}

/// Negated least-squares slope of `log ‖x(t)‖` after discarding the first `skip_fraction` of the horizon.
pub fn estimate_decay_rate(traj: &Trajectory, skip_fraction: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&skip_fraction) {
        return Err(Error::InvalidArgument(format!("skip_fraction must lie in [0, 1), got {skip_fraction}")));
    }
    let t_end = *traj.times.last().ok_or(Error::DegenerateTrajectory)?;
    let t_start = traj.times[0] + skip_fraction * (t_end - traj.times[0]);
    let pts: Vec<(f64, f64)> = traj.times.iter().zip(&traj.states).filter(|(t, _)| **t >= t_start).map(|(t, x)| (*t, x.norm())).collect();
    if pts.iter().any(|(_, r)| *r == 0.0) || pts.len() < 2 {
        return Err(Error::DegenerateTrajectory);
    }
    let nf = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, r) in &pts {
        sxy += (t - tm) * (r.ln() - lm);
        sxx += (t - tm).powi(2);
    }
    Ok(-sxy / sxx)
}

/// Number of log-spaced frequencies in the brute-force input family.
pub const GAIN_FREQUENCIES: usize = 40;

/// Empirical lower bound on the β-IO gain: the largest observed `sup e^{βt} ‖y(t)‖` over
/// decaying sinusoids and steps with `sup e^{βs} |u(s)| <= 1`, starting from rest.
pub fn brute_force_gain(sys: &StateSpaceSystem, beta: f64, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let n = sys.state_dim();
    let mut best: f64 = 0.0;
    let freqs: Vec<f64> = (0..GAIN_FREQUENCIES).map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / (GAIN_FREQUENCIES - 1) as f64)).collect();
    for ch in 0..sys.input_dim() {
        let bcol = sys.b.column(ch).into_owned();
        let dcol = sys.d.column(ch).into_owned();
        // step: exosystem z' = -beta z, u = z
        let mut cases: Vec<(CMat, CVec, f64)> = vec![(linalg::real_matrix(1, 1, &[-beta]), CVec::from_element(1, linalg::ONE), horizon / 4000.0)];
        for &om in &freqs {
            let s = linalg::real_matrix(2, 2, &[-beta, om, -om, -beta]);
            let dt = (horizon / 4000.0).min(PI / (8.0 * om));
            for phase in [0.0, PI / 2.0] {
                let z0 = CVec::from_vec(vec![linalg::re(f64::sin(phase)), linalg::re(f64::cos(phase))]);
                cases.push((s.clone(), z0, dt));
            }
        }
        for (s, z0, dt) in cases {
            let r = s.nrows();
            let mut sel = CMat::zeros(n, r);
            sel.set_column(0, &bcol);
            let aug = linalg::block2x2(&sys.a, &sel, &CMat::zeros(r, n), &s);
            let phi = matrix_exponential(&aug, dt)?;
            let steps = ((horizon / dt).ceil() as usize).min(4000);
            let mut state = CVec::zeros(n + r);
            state.rows_mut(n, r).copy_from(&z0);
            for k in 0..=steps {
                if k > 0 {
                    state = &phi * &state;
                }
                let t = k as f64 * dt;
                let y = &sys.c * state.rows(0, n) + &dcol * state[n];
                let v = (beta * t).exp() * y.norm();
                if v.is_finite() {
                    best = best.max(v);
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{re, real_matrix};

    fn close(a: &CMat, b: &CMat, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn expm_closed_forms() {
        assert_eq!(matrix_exponential(&CMat::zeros(3, 3), 1.0).unwrap(), linalg::identity(3));
        let nil = real_matrix(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(close(&matrix_exponential(&nil, 1.0).unwrap(), &real_matrix(2, 2, &[1.0, 1.0, 0.0, 1.0]), 1e-15));
        let d = real_matrix(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let e = matrix_exponential(&d, 2f64.ln()).unwrap();
        assert!(close(&e, &real_matrix(2, 2, &[0.5, 0.0, 0.0, 0.25]), 1e-14));
        // rotation generator, large argument exercises squaring
        let rot = real_matrix(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = matrix_exponential(&rot, 30.0).unwrap();
        let expected = real_matrix(2, 2, &[30f64.cos(), 30f64.sin(), -30f64.sin(), 30f64.cos()]);
        assert!(close(&e, &expected, 1e-13));
        assert!(matches!(matrix_exponential(&real_matrix(1, 1, &[f64::MAX]), 10.0), Err(Error::Overflow { .. })));
    }

    #[test]
    fn abscissa_examples() {
        assert_eq!(spectral_abscissa(&(-linalg::identity(3))).unwrap().0, -1.0);
        let (s, w) = spectral_abscissa(&real_matrix(2, 2, &[0.0, 1.0, -2.0, -2.0])).unwrap();
        assert!((s + 1.0).abs() < 1e-14 && (w.im.abs() - 1.0).abs() < 1e-14);
        assert_eq!(spectral_abscissa(&real_matrix(1, 1, &[5.0])).unwrap().0, 5.0);
    }

    #[test]
    fn zero_initial_state_stays_zero() {
        let p = StateSpaceSystem::strictly_proper(real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[1.0])).unwrap();
        let c = StateSpaceSystem::strictly_proper(real_matrix(1, 1, &[-3.0]), real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[-4.0])).unwrap();
        let tr = simulate_closed_loop(&p, &c, &CVec::zeros(1), &CVec::zeros(1), 2.0, 0.1).unwrap();
        assert_eq!(tr.len(), 21);
        assert!(tr.states.iter().all(|s| s.norm() == 0.0));
        assert!(matches!(estimate_decay_rate(&tr, 0.3), Err(Error::DegenerateTrajectory)));
    }

    #[test]
    fn decay_fits() {
        let make = |f: &dyn Fn(f64) -> f64| {
            let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
            let states = times.iter().map(|&t| CVec::from_vec(vec![re(f(t)), re(2.0 * f(t))])).collect();
            let n = times.len();
            Trajectory { times, states, inputs: vec![CVec::zeros(0); n], outputs: vec![CVec::zeros(0); n], plant_dim: 2, dt: 0.01 }
        };
        assert!((estimate_decay_rate(&make(&|t| (-2.0 * t).exp()), 0.3).unwrap() - 2.0).abs() < 1e-10);
        let wobble = estimate_decay_rate(&make(&|t| (-t).exp() * (1.0 + (10.0 * t).cos())), 0.2).unwrap();
        assert!((wobble - 1.0).abs() < 0.15, "{wobble}");
        assert!(estimate_decay_rate(&make(&|_| 1.0), 0.3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn brute_force_examples() {
        let zero_c = StateSpaceSystem::strictly_proper(real_matrix(1, 1, &[-1.0]), real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[0.0])).unwrap();
        assert_eq!(brute_force_gain(&zero_c, 0.0, 20.0).unwrap(), 0.0);
        let lag = StateSpaceSystem::strictly_proper(real_matrix(1, 1, &[-1.0]), real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[1.0])).unwrap();
        let g = brute_force_gain(&lag, 0.0, 30.0).unwrap();
        assert!(g <= 1.0 && g > 0.99, "{g}");
    }

    #[test]
    fn modal_and_dense_stepping_agree() {
        use crate::modal_core::{ModalBlock, TailModel};
        let blocks = vec![
            ModalBlock::scalar(2.0, 1.0, 1.0, 0).unwrap(),
            ModalBlock::new(real_matrix(2, 2, &[0.0, 1.0, -3.0, -0.5]), real_matrix(2, 1, &[0.0, 0.3]), real_matrix(1, 2, &[1.0, 0.0]), 1).unwrap(),
        ];
        let sys = ModalSystem::new(blocks, TailModel::empty(), 1, 1).unwrap();
        let dense = sys.dense_prefix(sys.blocks().len());
        let x0 = CVec::from_element(3, re(1.0));
        let u = |t: f64| CVec::from_element(1, re((3.0 * t).sin()));
        let a = simulate_modal(&sys, &x0, u, 2.0, 0.01).unwrap();
        let b = simulate_open_loop(&dense, &x0, u, 2.0, 0.01).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert!((sa - sb).norm() <= 1e-12 * sb.norm());
        }
    }

    #[test]
    fn csv_header_layout() {
        let p = StateSpaceSystem::strictly_proper(real_matrix(1, 1, &[-1.0]), real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[1.0])).unwrap();
        let c = StateSpaceSystem::strictly_proper(real_matrix(2, 2, &[-1.0, 0.0, 0.0, -1.0]), real_matrix(2, 1, &[1.0, 0.0]), real_matrix(1, 2, &[1.0, 1.0]))
            .unwrap();
        let tr = simulate_closed_loop(&p, &c, &CVec::from_element(1, re(1.0)), &CVec::zeros(2), 0.1, 0.1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,x_1,w_1,w_2,u_1,y_1");
        assert_eq!(text.lines().count(), 3);
    }
}
