//! Acceptance suite: one test per shipped guarantee, each printing a PASS/FAIL line.
//! Run verbosely with `cargo test --test acceptance -- --nocapture --test-threads=1`.

use ddsplit::nonlinearity::Decomposition;
use ddsplit::problems::{barenblatt, run, ProblemSpec, RunConfig, RunReport};
use ddsplit::schemes::{linearization_factors, SchemeKind, SchemeSpec};

fn report(criterion: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {criterion:02} {name}: {verdict} ({detail})");
    assert!(ok, "criterion {criterion:02} {name} FAILED: {detail}");
}

fn problems_1d() -> Vec<(&'static str, ProblemSpec)> {
    vec![
        ("pme", ProblemSpec::pme(1)),
        ("toy", ProblemSpec::toy(1)),
        ("biofilm", ProblemSpec::biofilm(1)),
        ("richards", ProblemSpec::richards(1)),
    ]
}

/// Largest s worth sampling: up to saturation for the bounded splittings, a few units
/// past the switch point otherwise.
fn s_max(name: &str, d: &Decomposition) -> f64 {
    match name {
        "toy" => 2f64.sqrt(),
        "richards" => d.phi().table().unwrap().s_sat,
        _ => 4.0,
    }
}

#[test]
fn criterion_01_decomposition_validity() {
    for (name, p) in problems_1d() {
        let model = p.build_model().unwrap();
        let d = &model.decomp;
        let hi = s_max(name, d);
        let consistency_tol = if name == "richards" { 1e-3 } else { 1e-8 };
        let mut first_violation = None;
        for k in 0..1000 {
            let s = -0.5 + (hi + 0.5) * k as f64 / 999.0;
            let (bp, gp) = (d.b_prime(s), d.big_b_prime(s));
            if bp + gp < 1.0 - 1e-6 {
                first_violation.get_or_insert(format!("s={s}: b'+B'={}", bp + gp));
            }
            if ![bp, gp].iter().all(|v| (-1e-6..=1.0 + 1e-6).contains(v)) {
                first_violation.get_or_insert(format!("s={s}: derivatives ({bp}, {gp})"));
            }
            if s >= 0.0 {
                let gap = (d.big_b(s) - d.phi().eval(d.b(s)).unwrap()).abs();
                if gap > consistency_tol {
                    first_violation.get_or_insert(format!("s={s}: |B-Phi(b)|={gap:e}"));
                }
            }
        }
        let detail = first_violation.clone().unwrap_or_else(|| "1000 samples clean".into());
        report(1, "decomposition-validity", first_violation.is_none(), &format!("{name}: {detail}"));
    }
}

#[test]
fn criterion_02_switch_points() {
    // Independent oracle: bisect Phi'(u) = 1 with the analytic derivatives.
    let bisect = |dphi: &dyn Fn(f64) -> f64| -> f64 {
        let (mut lo, mut hi) = (1e-12, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if dphi(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let pme = ProblemSpec::pme(1).build_model().unwrap().decomp.u_star;
    let toy = ProblemSpec::toy(1).build_model().unwrap().decomp.u_star;
    let bio = ProblemSpec::biofilm(1).build_model().unwrap().decomp.u_star;
    let pme_oracle = bisect(&|u| 6.0 * u.powi(5));
    let toy_oracle = bisect(&|u| 2.0 * u * u);
    report(2, "switch-points", (pme - 0.698827).abs() <= 1e-5 && (pme - pme_oracle).abs() <= 1e-9, &format!("pme u*={pme} oracle={pme_oracle}"));
    report(2, "switch-points", (toy - 0.707107).abs() <= 1e-6 && (toy - toy_oracle).abs() <= 1e-9, &format!("toy u*={toy} oracle={toy_oracle}"));
    report(2, "switch-points", (bio - 0.36778).abs() <= 1e-4, &format!("biofilm u*={bio}"));
}

/// Relative L1 error against the exact profile by 32-point midpoint quadrature per cell,
/// independent of the library's error reporting.
fn quadrature_rel_l1(h: f64, u: &[f64], t: f64, gamma: f64, mass0: f64) -> f64 {
    let q = 32;
    let mut l1 = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        let x0 = -10.0 + k as f64 * h;
        for j in 0..q {
            let x = x0 + (j as f64 + 0.5) * h / q as f64;
            l1 += (h / q as f64) * (uk - barenblatt([x, 0.0], t, 6.0, 1, gamma)).abs();
        }
    }
    l1 / mass0
}

#[test]
fn criterion_03_exact_solution_tracking() {
    let mut errs = Vec::new();
    for nh in [400usize, 800] {
        let p = ProblemSpec::pme(1);
        let mut sch = SchemeSpec::new(SchemeKind::MScheme { m: 0.01 });
        sch.eps_stop = 1e-8;
        let h = 20.0 / nh as f64;
        let rep = run(&p, &RunConfig { tau: 0.01, h, scheme: sch, snapshot_stride: 0 }).unwrap();
        errs.push(quadrature_rel_l1(h, &rep.u, 1.0, p.gamma, rep.mass_history[0]));
    }
    report(3, "exact-solution-tracking", errs[0] <= 0.05, &format!("h=0.05 rel L1 = {:.5}", errs[0]));
    report(3, "exact-solution-tracking", errs[1] < errs[0], &format!("h=0.025 rel L1 = {:.5} < {:.5}", errs[1], errs[0]));
}

#[test]
fn criterion_04_estimator_bound() {
    for (name, mut p) in problems_1d() {
        p.t_final = 0.5;
        let cfg = RunConfig { tau: 0.1, h: 0.1, scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }), snapshot_stride: 0 };
        let rep = run(&p, &cfg).unwrap();
        let mut checked = 0usize;
        let mut violations = 0usize;
        for st in &rep.steps {
            for i in 0..st.elin_history.len() {
                let (up, lo) = (st.eta_upper_history[i], st.eta_lower_history[i]);
                if up.is_nan() {
                    continue;
                }
                checked += 1;
                let e = st.elin_history[i];
                if !(lo <= e && e <= up * (1.0 + 1e-9)) {
                    violations += 1;
                }
            }
        }
        report(4, "estimator-bound", checked > 0 && violations == 0, &format!("{name}: {checked} iterations, {violations} violations"));
    }
}

#[test]
fn criterion_05_scheme_equivalence() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let tau = 0.1;
    for (name, p) in problems_1d() {
        let model = p.build_model().unwrap();
        let hi = s_max(name, &model.decomp);
        let s: Vec<f64> = (0..200).map(|_| rng.gen_range(-0.5..hi)).collect();
        let eps = 1e-6;
        let newton = linearization_factors(&SchemeKind::Newton, &s, &model, tau, eps, 0.0);
        let m_zero = linearization_factors(&SchemeKind::MScheme { m: 0.0 }, &s, &model, tau, eps, 0.0);
        let lsch = linearization_factors(&SchemeKind::LScheme, &s, &model, tau, eps, 0.0);
        // 2*M*tau = 2 >= 1 + eps, so the M rule saturates at the L-scheme constant.
        let m_large = linearization_factors(&SchemeKind::MScheme { m: 10.0 }, &s, &model, tau, eps, 0.0);
        let bits = |f: &[f64]| f.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        report(5, "scheme-equivalence", bits(&newton.0) == bits(&m_zero.0) && bits(&newton.1) == bits(&m_zero.1), &format!("{name}: M=0 == Newton bitwise"));
        report(5, "scheme-equivalence", bits(&lsch.0) == bits(&m_large.0) && bits(&lsch.1) == bits(&m_large.1), &format!("{name}: 2Mtau>=1+eps == L-scheme bitwise"));
    }
}

fn mesh_sweep(kind: SchemeKind) -> Vec<f64> {
    [100usize, 200, 400, 800]
        .iter()
        .map(|&nh| {
            let p = ProblemSpec::pme(1);
            let cfg = RunConfig { tau: 0.1, h: 20.0 / nh as f64, scheme: SchemeSpec::new(kind), snapshot_stride: 0 };
            run(&p, &cfg).unwrap().avg_iterations
        })
        .collect()
}

#[test]
fn criterion_06_mesh_robustness() {
    let fixed = mesh_sweep(SchemeKind::MScheme { m: 0.01 });
    let adaptive = mesh_sweep(SchemeKind::MAdaptive);
    let max = fixed.iter().cloned().fold(0.0, f64::max);
    let min = fixed.iter().cloned().fold(f64::INFINITY, f64::min);
    let within = adaptive.iter().zip(&fixed).all(|(a, f)| a <= &(f + 1.0));
    report(6, "mesh-robustness", within, &format!("adaptive {adaptive:?} <= fixed {fixed:?} + 1"));
    let spread = (max - min) / min;
    report(6, "mesh-robustness", spread <= 0.30, &format!("fixed-M averages {fixed:?}, spread {:.0}%", spread * 100.0));
}

#[test]
fn criterion_07_contraction_scaling() {
    let mut alphas = Vec::new();
    for tau in [0.1, 0.0316227766016838, 0.01] {
        let mut p = ProblemSpec::pme(1);
        p.t_final = 10.0 * tau;
        let mut sch = SchemeSpec::new(SchemeKind::MScheme { m: 0.01 });
        sch.eps_stop = 1e-10;
        let rep = run(&p, &RunConfig { tau, h: 0.025, scheme: sch, snapshot_stride: 0 }).unwrap();
        let mean = rep.steps.iter().filter_map(|s| s.alpha).sum::<f64>() / rep.steps.len() as f64;
        alphas.push(mean);
    }
    report(7, "contraction-scaling", alphas[2] < alphas[0], &format!("alpha(1e-2)={:.4} < alpha(1e-1)={:.4}", alphas[2], alphas[0]));
    report(7, "contraction-scaling", alphas[0] > alphas[1] && alphas[1] > alphas[2], &format!("monotone over tau grid: {alphas:?}"));
}

#[test]
fn criterion_08_convergence_orders() {
    let order = |kind: SchemeKind| -> (Option<f64>, bool) {
        let mut p = ProblemSpec::pme(1);
        p.t_final = 0.1;
        let mut sch = SchemeSpec::new(kind);
        sch.eps_stop = 1e-10;
        let rep = run(&p, &RunConfig { tau: 0.1, h: 0.05, scheme: sch, snapshot_stride: 0 }).unwrap();
        (rep.steps[0].order_p, rep.steps[0].converged)
    };
    let (p_fixed, _) = order(SchemeKind::MScheme { m: 0.01 });
    let (p_adapt, _) = order(SchemeKind::MAdaptive);
    let (p_newton, newton_ok) = order(SchemeKind::Newton);
    let pf = p_fixed.unwrap_or(f64::NAN);
    let pa = p_adapt.unwrap_or(f64::NAN);
    report(8, "convergence-orders", (0.7..=1.3).contains(&pf), &format!("fixed M order p={pf:.3}"));
    report(8, "convergence-orders", pa >= 1.5, &format!("adaptive order p={pa:.3}"));
    if newton_ok {
        let pn = p_newton.unwrap_or(f64::NAN);
        report(8, "convergence-orders", pn >= 1.5, &format!("newton order p={pn:.3}"));
    } else {
        println!("criterion 08 convergence-orders: newton did not converge, order clause skipped");
    }
}

#[test]
fn criterion_09_lscheme_unconditional() {
    for (name, p) in problems_1d() {
        let cfg = RunConfig { tau: 0.1, h: 0.1, scheme: SchemeSpec::new(SchemeKind::LScheme), snapshot_stride: 0 };
        let rep = run(&p, &cfg).unwrap();
        let all = rep.steps.iter().all(|s| s.converged && s.iterations <= 10_000);
        let max_it = rep.steps.iter().map(|s| s.iterations).max().unwrap();
        report(9, "l-scheme-unconditional", all, &format!("{name}: every step converged, max {max_it} iterations"));
    }
}

#[test]
fn criterion_10_robustness_contrast() {
    // Qualitative reproduction at h = 1/360 <= 1/180 under a uniform budget of 100
    // iterations per step. Only the M-scheme halves gate; the Newton outcome is recorded.
    let run_one = |kind: SchemeKind| -> RunReport {
        let mut p = ProblemSpec::toy(1);
        p.t_final = 0.2;
        let mut sch = SchemeSpec::new(kind);
        sch.max_iters = 100;
        run(&p, &RunConfig { tau: 0.1, h: 20.0 / 7200.0, scheme: sch, snapshot_stride: 0 }).unwrap()
    };
    let newton = run_one(SchemeKind::Newton);
    let newton_failed = newton.diverged || newton.steps.iter().any(|s| !s.converged);
    println!(
        "criterion 10 robustness-contrast: newton {} (iterations {:?}; expected outcome: failure)",
        if newton_failed { "failed as expected" } else { "converged, contrary to expectation" },
        newton.steps.iter().map(|s| s.iterations).collect::<Vec<_>>()
    );
    for kind in [SchemeKind::MScheme { m: 0.01 }, SchemeKind::MAdaptive] {
        let rep = run_one(kind);
        let ok = !rep.diverged && rep.steps.iter().all(|s| s.converged);
        let avg = rep.avg_iterations;
        report(10, "robustness-contrast", ok, &format!("{kind:?} converged every step, avg {avg} iterations"));
    }
}

#[test]
fn criterion_11_mass_conservation() {
    for dim in [1usize, 2] {
        let mut p = ProblemSpec::pme(dim);
        p.t_final = 1.0;
        let h = if dim == 1 { 0.1 } else { 0.25 };
        let cfg = RunConfig { tau: 0.1, h, scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }), snapshot_stride: 0 };
        let rep = run(&p, &cfg).unwrap();
        let m0 = rep.mass_history[0];
        let dev = rep.mass_history.iter().map(|m| (m - m0).abs() / m0).fold(0.0, f64::max);
        report(11, "mass-conservation", dev <= 1e-10, &format!("{dim}D: max relative drift {dev:e}"));
    }
}

#[test]
fn criterion_12_determinism() {
    let bin = env!("CARGO_BIN_EXE_ddsplit");
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let status = std::process::Command::new(bin)
            .args(["run", "--problem", "richards", "--dim", "1", "--h", "0.1", "--tau", "0.1", "--T", "0.5", "--scheme", "madaptive", "--output-dir"])
            .arg(d.path())
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["solution.csv", "iterations.csv", "history.csv"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        report(12, "determinism", a == b, &format!("{file}: {} bytes, byte-identical across reruns", a.len()));
    }
}
