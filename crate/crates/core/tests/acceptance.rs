//! Acceptance suite: one PASS/FAIL line per criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use modalstab::cli::{self, RunConfig};
use modalstab::gains::{self, Verdict};
use modalstab::linalg::{self, CMat, CVec};
use modalstab::modal_core::{self, StateSpaceSystem};
use modalstab::plants::{self, SourceProfile};
use modalstab::sim_oracle;
use modalstab::synthesis::{self, SynthesisOptions};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Profile = (&'static str, &'static str, fn(usize) -> f64);

fn config(json: &str) -> RunConfig {
    let cfg = RunConfig::from_json(json).expect("valid config");
    cfg.validate().expect("valid config");
    cfg
}

fn composite_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut s = f(a) + f(b);
    for i in 1..intervals {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    // closed-form <cos(pi k xi), f> for each profile
    let profiles: [Profile; 3] = [
        ("f=1", r#"{"kind": "constant", "c": 1}"#, |k| if k == 0 { 1.0 } else { 0.0 }),
        ("f=cos(pi xi)", r#"{"kind": "cosine", "k0": 1}"#, |k| if k == 1 { 0.5 } else { 0.0 }),
        ("f=1[0,1/2]", r#"{"kind": "indicator", "xi1": 0, "xi2": 0.5}"#, |k| if k == 0 { 0.5 } else { (PI * k as f64 / 2.0).sin() / (PI * k as f64) }),
    ];
    let mut cases = 0;
    for b in [-1.0, 5.0, 15.0, 42.0] {
        for (name, f_json, inner) in &profiles {
            let cfg = config(&format!(r#"{{"plant": {{"type": "heat", "b": {b}, "f": {f_json}}}}}"#));
            let doc = cli::analysis_report(&cfg).map_err(|e| format!("b = {b}, {name}: {e}"))?;
            let got = doc["stabilizable"].as_bool().ok_or("analysis has no stabilizable flag")?;
            let expected = (0..).take_while(|&k| PI * PI * ((k * k) as f64) <= b).all(|k| inner(k).abs() > 1e-12);
            if got != expected {
                return Err(format!("b = {b}, {name}: analyze says {got}, closed form says {expected}"));
            }
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 1.0 {
        return Err(format!("{cases} cases took {secs:.3} s"));
    }
    Ok(format!("{cases}/12 verdicts match, {secs:.3} s"))
}

fn criterion_2() -> Outcome {
    let one = SourceProfile::Constant { c: 1.0 };
    let mut worst: f64 = 0.0;
    for (b, kappa) in [(5.0, 0.5), (5.0, 3.0), (60.0, 0.1), (-2.0, 1.0)] {
        let sys = plants::build_wave(b, kappa, &one, 63).map_err(|e| e.to_string())?;
        for j in 0..=63 {
            let k = j as f64 + 0.5;
            let disc = Complex64::new(kappa * kappa - 4.0 * PI * PI * k * k + 4.0 * b, 0.0).sqrt();
            let expected = [(-kappa + disc) / 2.0, (-kappa - disc) / 2.0];
            let got = sys.block(j).ok_or(format!("missing block {j}"))?.eigenvalues();
            let straight = (got[0] - expected[0]).norm().max((got[1] - expected[1]).norm());
            let swapped = (got[0] - expected[1]).norm().max((got[1] - expected[0]).norm());
            worst = worst.max(straight.min(swapped));
        }
    }
    if worst > 1e-12 {
        return Err(format!("max eigenvalue error {worst:e} > 1e-12"));
    }
    let mut verdicts = Vec::new();
    for kappa in [-0.1, 0.0, 0.1] {
        let cfg = config(&format!(r#"{{"plant": {{"type": "wave", "b": 5, "kappa": {kappa}, "f": {{"kind": "constant", "c": 1}}}}}}"#));
        let finite = match cli::analysis_report(&cfg) {
            Ok(doc) => doc["finite_unstable_part"].as_bool() == Some(true),
            Err(modalstab::Error::InfiniteUnstablePart { .. }) => false,
            Err(e) => return Err(format!("kappa = {kappa}: {e}")),
        };
        verdicts.push(finite);
    }
    if verdicts != [false, false, true] {
        return Err(format!("finite-unstable-part verdicts for kappa = -0.1, 0, 0.1: {verdicts:?}"));
    }
    Ok(format!("max eigenvalue error {worst:.2e}; finite unstable part only at kappa = 0.1"))
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut chosen = Vec::new();
    for (b, c) in [(5.0, 1.0), (-1.0, 0.0), (PI * PI, 1.0)] {
        let f = SourceProfile::Constant { c };
        let grid = plants::default_lift_grid(b);
        let a = plants::search_lift_parameter(b, &f, &grid, 64).map_err(|e| format!("b = {b}: {e}"))?;
        if !grid.contains(&a) {
            return Err(format!("b = {b}: a = {a} not in the default grid"));
        }
        let (_, data) = plants::build_heat_boundary(b, &f, a, 64).map_err(|e| e.to_string())?;
        if !data.constraint_report.all_passed {
            return Err(format!("b = {b}, a = {a}: constraint report does not pass"));
        }
        chosen.push(a);
        let r = (a - b).sqrt();
        let h = |xi: f64| (r * xi).cosh() / (r * r.sinh());
        for k in (0..).take_while(|&k| PI * PI * ((k * k) as f64) < b) {
            let kk = PI * k as f64;
            let norm = composite_simpson(|x| (kk * x).cos().powi(2), 0.0, 1.0, 4000);
            let hk = composite_simpson(|x| h(x) * (kk * x).cos(), 0.0, 1.0, 4000) / norm;
            let fk = composite_simpson(|x| c * (kk * x).cos(), 0.0, 1.0, 4000) / norm;
            let lam = b - kk * kk;
            let expected = (lam - a) / lam * hk - fk / lam;
            worst = worst.max((data.h_plus_g1(k) - expected).abs());
            checked += 1;
        }
    }
    if worst > 1e-10 {
        return Err(format!("constraint expression error {worst:e} > 1e-10"));
    }
    Ok(format!("a = {chosen:?}; {checked} constraint values within {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cfg = config(r#"{"plant": {"type": "heat", "b": 5, "N_max": 64, "f": {"kind": "constant", "c": 1}}}"#);
    let (sys, _) = cli::build_plant(&cfg.plant).map_err(|e| e.to_string())?;
    let out = synthesis::synthesize(&sys, &SynthesisOptions::default()).map_err(|e| e.to_string())?;
    let cert = &out.certificate;
    if cert.verdict != Verdict::Certified || !(cert.product < 1.0) || !(cert.beta > 0.0) {
        return Err(format!("certificate {:?}, product {}, beta {}", cert.verdict, cert.product, cert.beta));
    }
    // through the on-disk format, as the simulate command sees it
    let text = cli::to_json_string(&cli::controller_json(&out.controller, cert, out.epsilon));
    let file = cli::parse_controller(&text).map_err(|e| e.message)?;
    let (summary, _) = cli::simulate_report(&cfg, &sys, &file).map_err(|e| e.message)?;
    let abscissa = summary["spectral_abscissa"].as_f64().ok_or("no abscissa")?;
    let rate = summary["decay_rate"].as_f64().ok_or("no decay rate")?;
    let secs = start.elapsed().as_secs_f64();
    let rel = (rate - (-abscissa)).abs() / abscissa.abs();
    if !(abscissa < -1e-3) || !(rel <= 0.10) || secs >= 10.0 {
        return Err(format!("abscissa {abscissa:e}, decay rate {rate:e} (rel. diff {rel:.3}), {secs:.2} s"));
    }
    Ok(format!(
        "Certified at N = {}, beta = {:.4}, product = {:.3e}; abscissa {abscissa:.4}, decay rate {rate:.4} ({:.1}% off), {secs:.2} s",
        cert.truncation_n,
        cert.beta,
        cert.product,
        100.0 * rel
    ))
}

fn sorted_eigs(m: &CMat) -> Vec<Complex64> {
    let mut v = linalg::eigenvalues(m).unwrap();
    linalg::sort_spectrum(&mut v);
    v
}

fn criterion_5() -> Outcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut worst_lambda: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let q = rng.random_range(1..=6 - n.min(5));
        let (m, p) = (rng.random_range(1..=2), rng.random_range(1..=2));
        let plant = common::random_system(&mut rng, n, m, p);
        let ctrl =
            StateSpaceSystem::strictly_proper(common::random_real(&mut rng, q, q), common::random_real(&mut rng, q, p), common::random_real(&mut rng, m, q))
                .unwrap();
        let direct = sorted_eigs(&modal_core::close_loop_direct(&plant, &ctrl).unwrap());
        let (s, _) = linalg::spectral_abscissa_of(&plant.a).unwrap();
        let l1 = Complex64::new(s + rng.random_range(0.5..3.0), rng.random_range(-1.0..1.0));
        let l2 = Complex64::new(s + rng.random_range(3.0..8.0), 0.0);
        let e1 = sorted_eigs(&modal_core::close_loop(&plant, &ctrl, l1).map_err(|e| e.to_string())?);
        let e2 = sorted_eigs(&modal_core::close_loop(&plant, &ctrl, l2).map_err(|e| e.to_string())?);
        worst = worst.max(linalg::spectrum_distance(&direct, &e1)).max(linalg::spectrum_distance(&direct, &e2));
        worst_lambda = worst_lambda.max(linalg::spectrum_distance(&e1, &e2));
    }
    if worst > 1e-8 || worst_lambda > 1e-8 {
        return Err(format!("shifted vs direct {worst:e}, between lambdas {worst_lambda:e}"));
    }
    Ok(format!("50 instances: shifted vs direct {worst:.2e}, lambda vs lambda {worst_lambda:.2e}"))
}

fn criterion_6() -> Outcome {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut min_slack = f64::INFINITY;
    let mut worst_env: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let margin = rng.random_range(0.2..2.0);
        let a = common::random_hurwitz(&mut rng, n, margin);
        let sys = StateSpaceSystem::strictly_proper(a.clone(), common::random_real(&mut rng, n, 1), common::random_real(&mut rng, 1, n)).unwrap();
        let env = gains::decay_envelope(&a, 0.5).map_err(|e| e.to_string())?;
        for k in 0..=400 {
            let t = k as f64 * 0.05;
            let e = linalg::norm2(&sim_oracle::matrix_exponential(&a, t).unwrap());
            worst_env = worst_env.max(e - env.amplitude_a * (-env.alpha * t).exp());
        }
        let beta = env.alpha / 2.0;
        let (_, io) = gains::r_gains(&sys, &env, beta).map_err(|e| e.to_string())?;
        let empirical = sim_oracle::brute_force_gain(&sys, beta, 20.0).map_err(|e| e.to_string())?;
        min_slack = min_slack.min(io.value - empirical);
    }
    if min_slack < 0.0 || worst_env > 1e-8 {
        return Err(format!("min (bound - empirical) {min_slack:e}, worst envelope excess {worst_env:e}"));
    }
    Ok(format!("50 systems: min (bound - empirical) {min_slack:.3e}, worst envelope excess {worst_env:.2e}"))
}

fn criterion_7() -> Outcome {
    let coeffs: Vec<String> = (0..2000).map(|k| format!("{:e}", 1.0 / ((k + 1) as f64).powi(2))).collect();
    let cfg = config(&format!(
        r#"{{"plant": {{"type": "heat", "b": 5, "N_max": 64, "f": {{"kind": "coefficient_list", "coefficients": [{}]}}}}}}"#,
        coeffs.join(",")
    ));
    let (sys, _) = cli::build_plant(&cfg.plant).map_err(|e| e.to_string())?;
    let ns: Vec<usize> = (1..=sys.blocks().len()).collect();
    let rows = cli::sweep_rows(&cfg, &sys, &ns).map_err(|e| e.message)?;
    let tails: Vec<f64> = rows.iter().map(|r| r.certificate.gain_tail.value).collect();
    if let Some(w) = tails.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(format!("tail gain not strictly decreasing at N = {}", rows[w + 1].n));
    }
    let first = rows.iter().position(|r| r.certificate.verdict == Verdict::Certified).ok_or("never certified")?;
    if rows[first..].iter().any(|r| r.certificate.verdict != Verdict::Certified) {
        return Err(format!("certification lost after N* = {}", rows[first].n));
    }
    Ok(format!("{} rows, tail gain strictly decreasing, Certified from N* = {} on", rows.len(), rows[first].n))
}

fn criterion_8() -> Outcome {
    let f = SourceProfile::CoefficientList { coefficients: (0..40).map(|k| 1.0 / ((k + 1) as f64).powi(2)).collect() };
    let sys = plants::build_heat(15.0, &f, 20).map_err(|e| e.to_string())?;
    let part = modal_core::partition_spectrum(&sys, -1e-9).map_err(|e| e.to_string())?;
    let nu = part.unstable_count();
    let mut bits = Vec::new();
    for n_r in [0, 2, 8] {
        let (truncated, _) = modal_core::truncate(&sys, nu + n_r).map_err(|e| e.to_string())?;
        let ctrl = synthesis::synthesize_controller(&part, &truncated).map_err(|e| e.to_string())?;
        if ctrl.n_r != n_r {
            return Err(format!("controller has n_r = {}, wanted {n_r}", ctrl.n_r));
        }
        let r = synthesis::controller_r_system(&ctrl, &truncated).map_err(|e| e.to_string())?;
        let env = gains::decay_envelope(&r.a, 0.5).map_err(|e| e.to_string())?;
        let (is, io) = gains::r_gains(&r, &env, env.alpha / 2.0).map_err(|e| e.to_string())?;
        bits.push((io.value.to_bits(), is.value.to_bits(), io.value));
    }
    if bits.iter().any(|b| b.0 != bits[0].0 || b.1 != bits[0].1) {
        return Err(format!("IO bounds differ: {:?}", bits.iter().map(|b| b.2).collect::<Vec<_>>()));
    }
    Ok(format!("n_u = {}, IO bound {:e} bitwise equal for n_r = 0, 2, 8", part.unstable_dim, bits[0].2))
}

fn criterion_9() -> Outcome {
    let f = SourceProfile::Indicator { xi1: 0.0, xi2: 0.5 };
    let full = plants::build_heat(5.0, &f, 20).map_err(|e| e.to_string())?;
    let dense = full.dense_prefix(full.blocks().len());
    let x0 = CVec::from_iterator(dense.state_dim(), (0..dense.state_dim()).map(|i| linalg::re(1.0 / (1.0 + i as f64))));
    let u = |t: f64| CVec::from_element(1, linalg::re((2.0 * t).sin() + 0.5));
    let modal = sim_oracle::simulate_modal(&full, &x0, u, 10.0, 0.01).map_err(|e| e.to_string())?;
    let dense_tr = sim_oracle::simulate_open_loop(&dense, &x0, u, 10.0, 0.01).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (a, b) in modal.states.iter().zip(&dense_tr.states).chain(modal.outputs.iter().zip(&dense_tr.outputs)) {
        worst = worst.max((a - b).norm() / b.norm().max(f64::MIN_POSITIVE));
    }
    if modal.len() != 1001 || worst > 1e-10 {
        return Err(format!("{} samples, worst relative difference {worst:e}", modal.len()));
    }
    Ok(format!("{} states, {} samples, worst relative difference {worst:.2e}", dense.state_dim(), modal.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("heat stabilizability verdicts", criterion_1),
        ("wave spectrum and damping threshold", criterion_2),
        ("boundary lift parameter and constraints", criterion_3),
        ("end-to-end heat stabilization", criterion_4),
        ("closed-loop similarity", criterion_5),
        ("gain-bound soundness", criterion_6),
        ("tail-gain sweep monotonicity", criterion_7),
        ("R-gain independence of retained modes", criterion_8),
        ("modal vs dense simulation", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let res = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match res {
            Ok(msg) => println!("PASS [{}] {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
