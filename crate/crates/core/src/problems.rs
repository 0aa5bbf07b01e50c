//! The four built-in test problems, the Barenblatt reference solution, and the outer
//! implicit-Euler time loop.

use crate::error::{DdsError, Result};
use crate::mesh::{build_grid, Field, Grid};
use crate::nonlinearity::{
    AdvectionKind, AdvectionSpec, NonlinearModel, PhiKind, PhiSpec, ReactionSpec,
};
use crate::schemes::{step, SchemeSpec, StepReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    Pme { m: f64 },
    Toy,
    Biofilm { m: f64 },
    Richards { lambda: f64, c: f64, gravity_on: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dim: usize,
    /// Barenblatt amplitude of the initial profile.
    pub gamma: f64,
    /// Initial data is clamped to this value (the saturation limit where finite).
    pub clamp_to: f64,
    pub t_final: f64,
}

fn default_t(dim: usize) -> f64 {
    if dim == 2 {
        0.1
    } else {
        1.0
    }
}

impl ProblemSpec {
    pub fn pme(dim: usize) -> Self {
        Self { kind: ProblemKind::Pme { m: 6.0 }, dim, gamma: 1.0, clamp_to: f64::INFINITY, t_final: default_t(dim) }
    }

    pub fn toy(dim: usize) -> Self {
        Self { kind: ProblemKind::Toy, dim, gamma: 1.5, clamp_to: 1.0, t_final: default_t(dim) }
    }

    pub fn biofilm(dim: usize) -> Self {
        // keep strictly below saturation; Phi is singular at 1
        Self { kind: ProblemKind::Biofilm { m: 6.0 }, dim, gamma: 0.5, clamp_to: 1.0 - 1e-9, t_final: default_t(dim) }
    }

    pub fn richards(dim: usize) -> Self {
        Self {
            kind: ProblemKind::Richards { lambda: 0.8, c: 0.5, gravity_on: true },
            dim,
            gamma: 0.5,
            clamp_to: 1.0,
            t_final: default_t(dim),
        }
    }

    /// Exponent of the Barenblatt profile used as initial data (the problem's own `m`
    /// where it has one, otherwise the porous-medium reference value 6).
    pub fn profile_m(&self) -> f64 {
        match self.kind {
            ProblemKind::Pme { m } | ProblemKind::Biofilm { m } => m,
            _ => 6.0,
        }
    }

    pub fn build_model(&self) -> Result<NonlinearModel> {
        let (phi, advection) = match self.kind {
            ProblemKind::Pme { m } => (PhiKind::Pme { m }, AdvectionSpec::none()),
            ProblemKind::Toy => (
                PhiKind::ToyMultivalued,
                AdvectionSpec { kind: AdvectionKind::None, reaction: ReactionSpec::Linear { c: 0.5 } },
            ),
            ProblemKind::Biofilm { m } => (
                PhiKind::Biofilm { m },
                AdvectionSpec { kind: AdvectionKind::None, reaction: ReactionSpec::Fisher { c: 0.5 } },
            ),
            ProblemKind::Richards { lambda, c, gravity_on } => {
                let kind = if gravity_on {
                    // gravity along the only axis in 1D, along the vertical axis in 2D
                    let direction = if self.dim == 2 { [0.0, -1.0] } else { [-1.0, 0.0] };
                    AdvectionKind::GravityRichards { direction, lambda }
                } else {
                    AdvectionKind::None
                };
                (PhiKind::RichardsVg { lambda }, AdvectionSpec { kind, reaction: ReactionSpec::Linear { c } })
            }
        };
        NonlinearModel::new(PhiSpec::new(phi), advection)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(DdsError::ConfigError(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        if self.gamma <= 0.0 {
            return Err(DdsError::ConfigError(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.t_final <= 0.0 {
            return Err(DdsError::ConfigError(format!("T must be > 0, got {}", self.t_final)));
        }
        Ok(())
    }
}

/// The self-similar compactly supported solution of `du/dt = laplace(u^m)`:
/// `u(x,t) = (1+t)^(-nu) [max(gamma - nu(m-1)|x|^2 / (2 d m (t+1)^(2 nu / d)), 0)]^(1/(m-1))`
/// with `nu = 1/(m - 1 + 2/d)`.
pub fn barenblatt(x: [f64; 2], t: f64, m: f64, d: usize, gamma: f64) -> f64 {
    let nu = 1.0 / (m - 1.0 + 2.0 / d as f64);
    let r2 = x[0] * x[0] + x[1] * x[1];
    let inner = gamma - nu * (m - 1.0) * r2 / (2.0 * d as f64 * m * (t + 1.0).powf(2.0 * nu / d as f64));
    (1.0 + t).powf(-nu) * inner.max(0.0).powf(1.0 / (m - 1.0))
}

/// Initial `(s0, u0)`: clamped Barenblatt profile at `t = 0`, pulled back through the
/// minimal-preimage pseudo-inverse of `b`.
pub fn initial_state(problem: &ProblemSpec, model: &NonlinearModel, grid: &Grid) -> Result<(Field, Field)> {
    let nc = grid.cell_count();
    let m = problem.profile_m();
    let mut s0 = vec![0.0; nc];
    let mut u0 = vec![0.0; nc];
    for k in 0..nc {
        let x = grid.cell_center(k);
        let u = barenblatt(x, 0.0, m, problem.dim, problem.gamma).clamp(0.0, problem.clamp_to);
        u0[k] = u;
        s0[k] = model.decomp.b_inverse(u)?;
    }
    Ok((s0, u0))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tau: f64,
    pub h: f64,
    pub scheme: SchemeSpec,
    /// Keep a solution snapshot every this many steps (0 = none kept besides final).
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub steps: Vec<StepReport>,
    pub avg_iterations: f64,
    /// Total discrete mass `sum |K| u` after each step, starting with the initial data.
    pub mass_history: Vec<f64>,
    /// Per-step (L1, L2) error against the exact solution (PME without sources only).
    pub error_vs_exact: Option<Vec<(f64, f64)>>,
    pub diverged: bool,
    pub s: Field,
    pub u: Field,
    pub w: Field,
    /// (step index, u field) snapshots at the configured stride.
    pub snapshots: Vec<(usize, Field)>,
}

fn mass(grid: &Grid, u: &[f64]) -> f64 {
    grid.cell_volume() * u.iter().sum::<f64>()
}

/// Cell-volume-weighted (L1, L2) difference between `u` and the exact Barenblatt
/// profile at time `t`. Only meaningful for PME without advection or reaction.
pub fn barenblatt_errors(grid: &Grid, u: &[f64], t: f64, m: f64, d: usize, gamma: f64) -> (f64, f64) {
    let vol = grid.cell_volume();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for k in 0..u.len() {
        let e = u[k] - barenblatt(grid.cell_center(k), t, m, d, gamma);
        l1 += vol * e.abs();
        l2 += vol * e * e;
    }
    (l1, l2.sqrt())
}

/// Runs `T/tau` implicit-Euler steps on `(-10,10)^dim`.
pub fn run(problem: &ProblemSpec, config: &RunConfig) -> Result<RunReport> {
    problem.validate()?;
    config.scheme.validate()?;
    let span = 20.0;
    let n = (span / config.h).round();
    if (n * config.h - span).abs() > 1e-9 * span || n < 2.0 {
        return Err(DdsError::ConfigError(format!("h = {} does not divide the domain width {span}", config.h)));
    }
    let nsteps_f = problem.t_final / config.tau;
    let nsteps = nsteps_f.round();
    if (nsteps - nsteps_f).abs() > 1e-9 || nsteps < 1.0 {
        return Err(DdsError::ConfigError(format!(
            "T = {} is not an integer multiple of tau = {}",
            problem.t_final, config.tau
        )));
    }
    let nsteps = nsteps as usize;
    let grid = build_grid(problem.dim, -10.0, 10.0, n as usize)?;
    let model = problem.build_model()?;
    let (mut s, mut u) = initial_state(problem, &model, &grid)?;
    let mut w: Field = s.iter().map(|&v| model.decomp.big_b(v)).collect();

    let track_exact = matches!(problem.kind, ProblemKind::Pme { .. });
    let mut steps = Vec::with_capacity(nsteps);
    let mut mass_history = vec![mass(&grid, &u)];
    let mut errors = Vec::new();
    let mut snapshots = Vec::new();
    let mut diverged = false;

    for nstep in 1..=nsteps {
        let (s_new, u_new, w_new, rep) = step(&grid, &model, &config.scheme, &s, &u, config.tau)?;
        let step_diverged = rep.diverged;
        steps.push(rep);
        s = s_new;
        u = u_new;
        w = w_new;
        mass_history.push(mass(&grid, &u));
        if track_exact {
            errors.push(barenblatt_errors(
                &grid,
                &u,
                nstep as f64 * config.tau,
                problem.profile_m(),
                problem.dim,
                problem.gamma,
            ));
        }
        if config.snapshot_stride > 0 && nstep % config.snapshot_stride == 0 {
            snapshots.push((nstep, u.clone()));
        }
        if step_diverged {
            diverged = true;
            break;
        }
    }

    let avg_iterations = steps.iter().map(|r| r.iterations as f64).sum::<f64>() / steps.len() as f64;
    Ok(RunReport {
        steps,
        avg_iterations,
        mass_history,
        error_vs_exact: if track_exact { Some(errors) } else { None },
        diverged,
        s,
        u,
        w,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::SchemeKind;

    #[test]
    fn barenblatt_examples() {
        assert_eq!(barenblatt([0.0, 0.0], 0.0, 6.0, 1, 1.0), 1.0);
        // d = 2, m = 6: nu = 1/6
        let nu: f64 = 1.0 / 6.0;
        let v = barenblatt([0.0, 0.0], 1.0, 6.0, 2, 1.0);
        assert!((v - 2f64.powf(-nu)).abs() < 1e-14);
        // support radius at t = 0: gamma = nu (m-1) r^2 / (2 d m) -> r^2 = 28.8
        let r = 28.8f64.sqrt();
        assert_eq!(barenblatt([r + 1e-9, 0.0], 0.0, 6.0, 2, 1.0), 0.0);
        assert!(barenblatt([r - 1e-3, 0.0], 0.0, 6.0, 2, 1.0) > 0.0);
    }

    #[test]
    fn initial_state_pme() {
        let p = ProblemSpec::pme(1);
        let model = p.build_model().unwrap();
        let grid = build_grid(1, -10.0, 10.0, 201).unwrap();
        let (s0, u0) = initial_state(&p, &model, &grid).unwrap();
        let max = u0.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 1.0 && max > 0.99, "peak {max}");
        for k in 0..u0.len() {
            assert!((model.decomp.b(s0[k]) - u0[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn initial_state_toy_clamps() {
        let p = ProblemSpec::toy(1);
        let model = p.build_model().unwrap();
        let grid = build_grid(1, -10.0, 10.0, 200).unwrap();
        let (s0, u0) = initial_state(&p, &model, &grid).unwrap();
        let n_sat = u0.iter().filter(|&&v| v == 1.0).count();
        assert!(n_sat > 0, "gamma = 1.5 pushes the profile above 1 near the origin");
        for k in 0..u0.len() {
            if u0[k] == 1.0 {
                assert!((s0[k] - std::f64::consts::SQRT_2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn run_zero_data_stays_zero() {
        let mut p = ProblemSpec::pme(1);
        p.gamma = 1e-300; // effectively zero initial data
        p.t_final = 0.3;
        let cfg = RunConfig {
            tau: 0.1,
            h: 0.5,
            scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }),
            snapshot_stride: 0,
        };
        let rep = run(&p, &cfg).unwrap();
        assert!(!rep.diverged);
        assert!(rep.u.iter().all(|&v| v.abs() < 1e-30));
        assert!(rep.steps.iter().all(|r| r.iterations == 1));
    }

    #[test]
    fn run_rejects_bad_discretization() {
        let p = ProblemSpec::pme(1);
        let sch = SchemeSpec::new(SchemeKind::LScheme);
        let bad_h = RunConfig { tau: 0.1, h: 0.3, scheme: sch, snapshot_stride: 0 };
        assert!(run(&p, &bad_h).is_err());
        let bad_tau = RunConfig { tau: 0.27, h: 0.5, scheme: sch, snapshot_stride: 0 };
        assert!(run(&p, &bad_tau).is_err());
    }

    #[test]
    fn pme_mass_conserved_1d() {
        let p = ProblemSpec::pme(1);
        let cfg = RunConfig {
            tau: 0.1,
            h: 0.1,
            scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }),
            snapshot_stride: 0,
        };
        let rep = run(&p, &cfg).unwrap();
        assert!(!rep.diverged);
        let m0 = rep.mass_history[0];
        for m in &rep.mass_history {
            assert!((m - m0).abs() / m0 < 1e-10, "mass drifted: {m} vs {m0}");
        }
    }

    #[test]
    fn pme_follows_barenblatt() {
        let mut p = ProblemSpec::pme(1);
        p.t_final = 1.0;
        let cfg = RunConfig {
            tau: 0.05,
            h: 0.1,
            scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }),
            snapshot_stride: 0,
        };
        let rep = run(&p, &cfg).unwrap();
        let errs = rep.error_vs_exact.unwrap();
        let (l1, _) = errs.last().unwrap();
        // exact mass is constant; relative L1 error modest at this resolution
        let rel = l1 / rep.mass_history[0];
        assert!(rel < 0.05, "relative L1 error {rel}");
    }

    #[test]
    fn richards_gravity_breaks_symmetry() {
        let mut p = ProblemSpec::richards(1);
        p.t_final = 0.2;
        let cfg = RunConfig {
            tau: 0.1,
            h: 0.2,
            scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }),
            snapshot_stride: 0,
        };
        let rep = run(&p, &cfg).unwrap();
        assert!(!rep.diverged);
        let n = rep.u.len();
        let asym = (0..n).map(|k| (rep.u[k] - rep.u[n - 1 - k]).abs()).fold(0.0, f64::max);
        assert!(asym > 1e-10, "gravity on: asymmetry {asym}");

        let mut p2 = p;
        p2.kind = ProblemKind::Richards { lambda: 0.8, c: 0.5, gravity_on: false };
        let rep2 = run(&p2, &cfg).unwrap();
        let asym2 = (0..n).map(|k| (rep2.u[k] - rep2.u[n - 1 - k]).abs()).fold(0.0, f64::max);
        assert!(asym2 < 1e-8, "gravity off: asymmetry {asym2}");
    }

    #[test]
    fn toy_and_biofilm_run_and_stay_bounded() {
        for p in [ProblemSpec::toy(1), ProblemSpec::biofilm(1)] {
            let mut p = p;
            p.t_final = 0.3;
            let cfg = RunConfig {
                tau: 0.1,
                h: 0.2,
                scheme: SchemeSpec::new(SchemeKind::MScheme { m: 0.01 }),
                snapshot_stride: 0,
            };
            let rep = run(&p, &cfg).unwrap();
            assert!(!rep.diverged, "{:?} diverged", p.kind);
            for &v in &rep.u {
                assert!(v >= -1e-6 && v <= 1.0 + 1e-6, "{:?}: u = {v}", p.kind);
            }
        }
    }
}
