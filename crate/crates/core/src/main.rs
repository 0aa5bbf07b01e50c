//! Command-line front end: single runs, parameter sweeps, exact-solution verification,
//! and estimator diagnostics, all emitting CSV.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use ddsplit::adaptive::{g_coefficients, sandwich_check, select_m, EstimatorInputs};
use ddsplit::io;
use ddsplit::mesh::build_grid;
use ddsplit::problems::{initial_state, run, ProblemKind, ProblemSpec, RunConfig};
use ddsplit::schemes::{
    compute_efix, compute_elin, iterate_once, linearization_factors, SchemeKind, SchemeSpec,
};
use ddsplit::DdsError;

#[derive(Parser)]
#[command(name = "ddsplit", about = "Finite-volume solvers for doubly-degenerate diffusion equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one problem and emit solution/history CSVs
    Run(RunArgs),
    /// Run a grid of (scheme, h, tau) combinations and emit sweep.csv
    Sweep(SweepArgs),
    /// Compare a porous-medium run against the exact self-similar solution
    Verify(RunArgs),
    /// Emit per-iteration estimator and convergence-coefficient diagnostics of one step
    Diagnose(RunArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Flat key=value config file; command-line flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem: pme | toy | biofilm | richards
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Mesh size (must divide the domain width 20)
    #[arg(long)]
    h: Option<f64>,
    /// Time-step size
    #[arg(long)]
    tau: Option<f64>,
    /// Final time
    #[arg(long = "T")]
    t: Option<f64>,
    /// Scheme: newton | l | m | madaptive
    #[arg(long)]
    scheme: Option<String>,
    /// Stabilization parameter of the fixed M-scheme
    #[arg(long = "M")]
    m: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eps_stop: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    divergence_threshold: Option<f64>,
    /// Barenblatt amplitude of the initial profile
    #[arg(long)]
    gamma: Option<f64>,
    /// Evaluate reaction sources at the previous time step instead of the last iterate
    #[arg(long)]
    freeze_reaction: bool,
    /// Newton: lag the advective flux instead of linearizing it
    #[arg(long)]
    newton_lag_advection: bool,
    /// Richards: disable the gravity term
    #[arg(long)]
    no_gravity: bool,
    /// Output directory (default: $DDSPLIT_OUTPUT_DIR or ./out)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Exit with code 3 when a run diverges
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Keep a solution snapshot every N steps
    #[arg(long, default_value_t = 0)]
    snapshot_stride: usize,
    /// Also export the tabulated transform (Richards only)
    #[arg(long)]
    emit_table: bool,
}

#[derive(Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated mesh sizes
    #[arg(long)]
    h_list: Option<String>,
    /// Comma-separated time-step sizes
    #[arg(long)]
    tau_list: Option<String>,
    /// Comma-separated schemes
    #[arg(long)]
    scheme_list: Option<String>,
    /// Record wall-clock seconds per row (breaks byte determinism of sweep.csv)
    #[arg(long)]
    timing: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Solver(String),
    Diverged,
}

impl From<DdsError> for CliError {
    fn from(e: DdsError) -> Self {
        match e {
            DdsError::ConfigError(_) => CliError::Usage(e.to_string()),
            _ => CliError::Solver(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_config(path: &Path) -> CliResult<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config {}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn merged<T: FromStr>(flag: &Option<T>, cfg: &HashMap<String, String>, key: &str) -> CliResult<Option<T>>
where
    T: Clone,
{
    if let Some(v) = flag {
        return Ok(Some(v.clone()));
    }
    match cfg.get(key) {
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("config value {key}={raw} is invalid"))),
        None => Ok(None),
    }
}

fn merged_bool(flag: bool, cfg: &HashMap<String, String>, key: &str) -> bool {
    flag || cfg.get(key).map(|v| v == "true" || v == "1").unwrap_or(false)
}

struct Resolved {
    problem: ProblemSpec,
    config: RunConfig,
    output_dir: PathBuf,
    strict: bool,
}

fn resolve(common: &CommonArgs, snapshot_stride: usize) -> CliResult<Resolved> {
    let cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let problem_name: String = merged(&common.problem, &cfg, "problem")?
        .ok_or_else(|| CliError::Usage("--problem is required".into()))?;
    let dim = merged(&common.dim, &cfg, "dim")?.unwrap_or(1);
    let gravity_on = !merged_bool(common.no_gravity, &cfg, "no_gravity");
    let mut problem = match problem_name.as_str() {
        "pme" => ProblemSpec::pme(dim),
        "toy" => ProblemSpec::toy(dim),
        "biofilm" => ProblemSpec::biofilm(dim),
        "richards" => {
            let mut p = ProblemSpec::richards(dim);
            if let ProblemKind::Richards { lambda, c, .. } = p.kind {
                p.kind = ProblemKind::Richards { lambda, c, gravity_on };
            }
            p
        }
        other => return Err(CliError::Usage(format!("unknown problem '{other}'"))),
    };
    if let Some(g) = merged(&common.gamma, &cfg, "gamma")? {
        problem.gamma = g;
    }
    if let Some(t) = merged(&common.t, &cfg, "T")? {
        problem.t_final = t;
    }

    let scheme_name: String = merged(&common.scheme, &cfg, "scheme")?.unwrap_or_else(|| "m".into());
    let m_flag: Option<f64> = merged(&common.m, &cfg, "M")?;
    let kind = parse_scheme(&scheme_name, m_flag)?;
    let mut scheme = SchemeSpec::new(kind);
    if let Some(v) = merged(&common.epsilon, &cfg, "epsilon")? {
        scheme.epsilon = v;
    }
    if let Some(v) = merged(&common.eps_stop, &cfg, "eps_stop")? {
        scheme.eps_stop = v;
    }
    if let Some(v) = merged(&common.max_iters, &cfg, "max_iters")? {
        scheme.max_iters = v;
    }
    if let Some(v) = merged(&common.divergence_threshold, &cfg, "divergence_threshold")? {
        scheme.divergence_threshold = v;
    }
    scheme.freeze_reaction = merged_bool(common.freeze_reaction, &cfg, "freeze_reaction");
    scheme.newton_linearize_advection = !merged_bool(common.newton_lag_advection, &cfg, "newton_lag_advection");
    scheme.validate()?;

    let h = merged(&common.h, &cfg, "h")?.ok_or_else(|| CliError::Usage("--h is required".into()))?;
    let tau = merged(&common.tau, &cfg, "tau")?.ok_or_else(|| CliError::Usage("--tau is required".into()))?;

    let output_dir = common
        .output_dir
        .clone()
        .or_else(|| cfg.get("output_dir").map(PathBuf::from))
        .or_else(|| std::env::var_os("DDSPLIT_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Resolved {
        problem,
        config: RunConfig { tau, h, scheme, snapshot_stride },
        output_dir,
        strict: merged_bool(common.strict, &cfg, "strict"),
    })
}

fn parse_scheme(name: &str, m: Option<f64>) -> CliResult<SchemeKind> {
    match name {
        "newton" | "l" | "madaptive" if m.is_some() => Err(CliError::Usage(format!(
            "--M applies only to the fixed M-scheme, not '{name}'"
        ))),
        "newton" => Ok(SchemeKind::Newton),
        "l" => Ok(SchemeKind::LScheme),
        "m" => Ok(SchemeKind::MScheme { m: m.unwrap_or(0.01) }),
        "madaptive" => Ok(SchemeKind::MAdaptive),
        other => Err(CliError::Usage(format!("unknown scheme '{other}'"))),
    }
}

fn scheme_label(kind: &SchemeKind) -> String {
    match kind {
        SchemeKind::Newton => "newton".into(),
        SchemeKind::LScheme => "l".into(),
        SchemeKind::MScheme { m } => format!("m({m})"),
        SchemeKind::MAdaptive => "madaptive".into(),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let r = resolve(&args.common, args.snapshot_stride)?;
    ensure_dir(&r.output_dir)?;
    let report = run(&r.problem, &r.config)?;
    io::emit_iterations(&r.output_dir.join("iterations.csv"), &report)?;
    io::emit_history(&r.output_dir.join("history.csv"), &report)?;
    let grid = build_grid(r.problem.dim, -10.0, 10.0, (20.0 / r.config.h).round() as usize)?;
    io::emit_solution(&r.output_dir.join("solution.csv"), &grid, &report.s, &report.u, &report.w)?;
    for (nstep, u) in &report.snapshots {
        io::emit_field(&r.output_dir.join(format!("u_step{nstep:05}.csv")), &grid, u)?;
    }
    if args.emit_table {
        let model = r.problem.build_model()?;
        if let Some(table) = model.phi().table() {
            io::emit_kirchhoff(&r.output_dir.join("kirchhoff.csv"), table)?;
        }
    }
    println!(
        "{} steps, avg {:.2} iterations/step, diverged: {}",
        report.steps.len(),
        report.avg_iterations,
        report.diverged
    );
    if report.diverged && r.strict {
        return Err(CliError::Diverged);
    }
    Ok(())
}

fn parse_list<T: FromStr>(raw: &Option<String>, what: &str) -> CliResult<Vec<T>> {
    let raw = raw
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("--{what} is required")))?;
    let mut out = Vec::new();
    for part in raw.split(',') {
        out.push(
            part.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("invalid entry '{part}' in --{what}")))?,
        );
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("--{what} must be non-empty")));
    }
    Ok(out)
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let h_list: Vec<f64> = parse_list(&args.h_list, "h-list")?;
    let tau_list: Vec<f64> = parse_list(&args.tau_list, "tau-list")?;
    let mut common = args.common.clone();
    common.h = common.h.or(Some(h_list[0]));
    common.tau = common.tau.or(Some(tau_list[0]));
    let r = resolve(&common, 0)?;
    ensure_dir(&r.output_dir)?;
    let scheme_names: Vec<String> = parse_list(&args.scheme_list, "scheme-list")?;
    let m_flag = args.common.m;

    let mut rows = Vec::new();
    let mut any_diverged = false;
    for name in &scheme_names {
        let kind = parse_scheme(name, if name == "m" { m_flag } else { None })?;
        for &h in &h_list {
            for &tau in &tau_list {
                let mut config = r.config.clone();
                config.h = h;
                config.tau = tau;
                config.scheme.kind = kind;
                let start = std::time::Instant::now();
                let report = run(&r.problem, &config)?;
                any_diverged |= report.diverged;
                rows.push(io::SweepRow {
                    scheme: scheme_label(&kind),
                    h,
                    tau,
                    avg_iterations: report.avg_iterations,
                    converged: !report.diverged,
                    diverged: report.diverged,
                    alpha: report.steps.last().and_then(|s| s.alpha),
                    wall_secs: args.timing.then(|| start.elapsed().as_secs_f64()),
                });
                println!(
                    "{} h={h} tau={tau}: avg {:.2} iters, diverged {}",
                    scheme_label(&kind),
                    report.avg_iterations,
                    report.diverged
                );
            }
        }
    }
    // scheme ascending, then coarse-to-fine in h and tau
    rows.sort_by(|a, b| {
        a.scheme
            .cmp(&b.scheme)
            .then(b.h.partial_cmp(&a.h).unwrap())
            .then(b.tau.partial_cmp(&a.tau).unwrap())
    });
    io::emit_sweep(&r.output_dir.join("sweep.csv"), &rows)?;
    if any_diverged && r.strict {
        return Err(CliError::Diverged);
    }
    Ok(())
}

fn cmd_verify(args: &RunArgs) -> CliResult<()> {
    let r = resolve(&args.common, 0)?;
    if !matches!(r.problem.kind, ProblemKind::Pme { .. }) {
        return Err(CliError::Usage("verify requires --problem pme".into()));
    }
    ensure_dir(&r.output_dir)?;
    let report = run(&r.problem, &r.config)?;
    let errors = report.error_vs_exact.as_ref().expect("pme tracks exact errors");
    let mass0 = report.mass_history[0];
    let rows: Vec<Vec<String>> = errors
        .iter()
        .enumerate()
        .map(|(n, (l1, l2))| {
            vec![
                format!("{}", n + 1),
                io::fmt_f64((n as f64 + 1.0) * r.config.tau),
                io::fmt_f64(*l1),
                io::fmt_f64(*l2),
                io::fmt_f64(l1 / mass0),
            ]
        })
        .collect();
    io::write_csv(&r.output_dir.join("verify.csv"), "step,t,l1,l2,l1_relative", &rows)?;
    let (l1, l2) = errors.last().unwrap();
    println!("final errors: L1 {l1:.6e} (relative {:.4}), L2 {l2:.6e}", l1 / mass0);
    if report.diverged && r.strict {
        return Err(CliError::Diverged);
    }
    Ok(())
}

/// Replays the first time step recording estimator bounds, selected M, and the
/// convergence-coefficient minima per iteration.
fn cmd_diagnose(args: &RunArgs) -> CliResult<()> {
    let r = resolve(&args.common, 0)?;
    ensure_dir(&r.output_dir)?;
    let problem = &r.problem;
    let scheme = &r.config.scheme;
    let tau = r.config.tau;
    let grid = build_grid(problem.dim, -10.0, 10.0, (20.0 / r.config.h).round() as usize)?;
    let model = problem.build_model()?;
    let (s0, u_old) = initial_state(problem, &model, &grid)?;

    // reference iterate: converge the step first
    let (s_ref, ..) = ddsplit::schemes::step(&grid, &model, scheme, &s0, &u_old, tau)?;
    let lf_est = estimate_flux_lipschitz(&model);

    let mut rows = Vec::new();
    let mut s_cur = s0.clone();
    let mut u_cur: Vec<f64> = s0.iter().map(|&v| model.decomp.b(v)).collect();
    let mut w_cur: Vec<f64> = s0.iter().map(|&v| model.decomp.big_b(v)).collect();
    let mut s_prev2: Option<Vec<f64>> = None;
    let mut elin_last = f64::NAN;
    for iter in 1..=scheme.max_iters {
        let m_used = match scheme.kind {
            SchemeKind::MScheme { m } => m,
            SchemeKind::MAdaptive => {
                if iter == 1 {
                    1.0
                } else {
                    let inp = EstimatorInputs {
                        s_cur: &s_cur,
                        u_cur: &u_cur,
                        w_cur: &w_cur,
                        s_prev: s_prev2.as_ref().unwrap(),
                        tau,
                    };
                    select_m(&grid, &inp, elin_last, &model, scheme.epsilon)
                }
            }
            _ => 0.0,
        };
        let (lb, lbig) = linearization_factors(&scheme.kind, &s_cur, &model, tau, scheme.epsilon, m_used);
        let (eta_u, eta_l) = if iter >= 2 {
            let inp = EstimatorInputs {
                s_cur: &s_cur,
                u_cur: &u_cur,
                w_cur: &w_cur,
                s_prev: s_prev2.as_ref().unwrap(),
                tau,
            };
            match ddsplit::adaptive::eta_pm_with_factors(&grid, &inp, &model, &lb, &lbig) {
                Ok((ep, em)) => ddsplit::adaptive::eta_lin(ep, em),
                Err(_) => (f64::NAN, f64::NAN),
            }
        } else {
            (f64::NAN, f64::NAN)
        };
        let (g1, g2, g3) = g_coefficients(&model.decomp, &s_cur, &s_ref, &lb, &lbig, tau, lf_est);
        let fmin = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let sandwich = if matches!(scheme.kind, SchemeKind::MScheme { .. } | SchemeKind::MAdaptive) {
            let bound = s_cur
                .iter()
                .zip(&s_ref)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / tau;
            sandwich_check(&model.decomp, &s_cur, &s_ref, &lbig, m_used.max(1e-30), tau, lipschitz_bprime(&model), bound)
        } else {
            false
        };
        let (s_new, u_new, w_new) = iterate_once(&grid, &model, scheme, &s_cur, &u_old, &lb, &lbig, tau)?;
        let ds: Vec<f64> = s_new.iter().zip(&s_cur).map(|(a, b)| a - b).collect();
        let dw: Vec<f64> = w_new.iter().zip(&w_cur).map(|(a, b)| a - b).collect();
        let elin = compute_elin(&grid, &lb, &lbig, &ds, &dw, tau);
        let efix = compute_efix(&grid, &ds, &dw, tau);
        rows.push(vec![
            format!("{iter}"),
            io::fmt_f64(elin),
            io::fmt_f64(efix),
            io::fmt_f64(eta_u),
            io::fmt_f64(eta_l),
            io::fmt_f64(m_used),
            io::fmt_f64(fmin(&g1)),
            io::fmt_f64(fmin(&g2)),
            io::fmt_f64(fmin(&g3)),
            format!("{sandwich}"),
        ]);
        s_prev2 = Some(std::mem::replace(&mut s_cur, s_new));
        u_cur = u_new;
        w_cur = w_new;
        elin_last = elin;
        if elin <= scheme.eps_stop || !efix.is_finite() || efix > scheme.divergence_threshold {
            break;
        }
    }
    io::write_csv(
        &r.output_dir.join("diagnostics.csv"),
        "iter,elin,efix,eta_upper,eta_lower,m,g1_min,g2_min,g3_min,sandwich",
        &rows,
    )?;
    println!("{} iterations diagnosed", rows.len());
    Ok(())
}

/// Sampled Lipschitz constant of the advective flux as a function of u.
fn estimate_flux_lipschitz(model: &ddsplit::nonlinearity::NonlinearModel) -> f64 {
    if !model.advection.has_flux() {
        return 0.0;
    }
    let mut worst = 0.0f64;
    let n = 2000;
    for i in 0..n {
        let u0 = i as f64 / n as f64;
        let u1 = (i + 1) as f64 / n as f64;
        let f0 = model.advection.flux(u0);
        let f1 = model.advection.flux(u1);
        let d = ((f1[0] - f0[0]).powi(2) + (f1[1] - f0[1]).powi(2)).sqrt() * n as f64;
        worst = worst.max(d);
    }
    worst
}

/// Sampled Lipschitz constant of B' over the working range of s.
fn lipschitz_bprime(model: &ddsplit::nonlinearity::NonlinearModel) -> f64 {
    let mut worst = 0.0f64;
    let n = 2000;
    let s_max = 2.0;
    for i in 0..n {
        let s0 = -0.5 + (s_max + 0.5) * i as f64 / n as f64;
        let s1 = -0.5 + (s_max + 0.5) * (i + 1) as f64 / n as f64;
        let d = (model.decomp.big_b_prime(s1) - model.decomp.big_b_prime(s0)).abs() / (s1 - s0);
        worst = worst.max(d);
    }
    worst
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, everything else is a usage error
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Solver(msg)) => {
            eprintln!("solver error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Diverged) => {
            eprintln!("run diverged (strict mode)");
            ExitCode::from(3)
        }
    }
}
