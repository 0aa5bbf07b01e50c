//! Linearization schemes for one implicit-Euler time step.
//!
//! Each iteration solves a linear problem with coefficient fields `(L_b, L_B)`:
//!
//! | scheme   | L_b                                | L_B                                |
//! |----------|------------------------------------|------------------------------------|
//! | Newton   | `b'(s)`                            | `B'(s)`                            |
//! | L-scheme | `1 + eps`                          | `1 + eps`                          |
//! | M-scheme | `min(max(b'(s)+M tau, 2M tau), 1+eps)` | same with `B'`                 |
//!
//! `M = 0` recovers Newton; `2 M tau >= 1 + eps` recovers the L-scheme. The adaptive
//! variant re-selects `M` each iteration from the a posteriori estimators.

use crate::adaptive::{eta_lin, eta_pm_with_factors, select_m, EstimatorInputs};
use crate::discrete_ops::{assemble_s_system, assemble_w_system, solve, upwind_divergence};
use crate::error::Result;
use crate::mesh::{h1_seminorm_sq, Field, FaceConn, Grid};
use crate::nonlinearity::NonlinearModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeKind {
    Newton,
    LScheme,
    MScheme { m: f64 },
    MAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    /// The small constant of the factor table's cap `1 + epsilon`.
    pub epsilon: f64,
    /// Stop when `E_lin <= eps_stop`.
    pub eps_stop: f64,
    pub max_iters: usize,
    /// Declare divergence when `E_fix` exceeds this.
    pub divergence_threshold: f64,
    /// Newton only: assemble the upwind advection Jacobian instead of lagging the flux.
    pub newton_linearize_advection: bool,
    /// Evaluate reaction sources at `u_old` instead of the previous iterate.
    pub freeze_reaction: bool,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind) -> Self {
        Self {
            kind,
            epsilon: 1e-6,
            eps_stop: 1e-6,
            max_iters: 10_000,
            divergence_threshold: 1e10,
            newton_linearize_advection: true,
            freeze_reaction: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::DdsError::ConfigError;
        if self.epsilon <= 0.0 {
            return Err(ConfigError(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.eps_stop <= 0.0 {
            return Err(ConfigError(format!("eps_stop must be > 0, got {}", self.eps_stop)));
        }
        if self.max_iters < 1 {
            return Err(ConfigError("max_iters must be >= 1".into()));
        }
        if self.divergence_threshold <= 1.0 {
            return Err(ConfigError(format!(
                "divergence_threshold must be > 1, got {}",
                self.divergence_threshold
            )));
        }
        if let SchemeKind::MScheme { m } = self.kind {
            if m <= 0.0 {
                return Err(ConfigError(format!("M must be > 0, got {m}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one time step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub elin_history: Vec<f64>,
    pub efix_history: Vec<f64>,
    /// M used per iteration (empty unless the factor rule involves M).
    pub m_history: Vec<f64>,
    /// Estimator bounds predicted before each solve; NaN where unavailable (first
    /// iteration, or factor fields not strictly positive).
    pub eta_upper_history: Vec<f64>,
    pub eta_lower_history: Vec<f64>,
    /// Mean of the last (up to three) consecutive `E_fix` ratios; None with < 1 ratio.
    pub alpha: Option<f64>,
    /// `log(r_last) / log(r_prev)` of the final two ratios; None with < 2 ratios.
    pub order_p: Option<f64>,
}

/// Current and previous iterates of one time step.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub s: Field,
    pub u: Field,
    pub w: Field,
    pub s_prev: Field,
    pub u_prev: Field,
    pub w_prev: Field,
    /// Iterate i-2, needed by the estimator's advection difference.
    pub s_prev2: Option<Field>,
    pub iter: usize,
}

/// The `(L_b, L_B)` coefficient fields of the factor table, evaluated at `s`.
/// For `MAdaptive` pass the currently selected M in `m`.
pub fn linearization_factors(
    kind: &SchemeKind,
    s: &[f64],
    model: &NonlinearModel,
    tau: f64,
    epsilon: f64,
    m: f64,
) -> (Field, Field) {
    let n = s.len();
    let mut lb = vec![0.0; n];
    let mut lbig = vec![0.0; n];
    match kind {
        SchemeKind::Newton => {
            for k in 0..n {
                lb[k] = model.decomp.b_prime(s[k]);
                lbig[k] = model.decomp.big_b_prime(s[k]);
            }
        }
        SchemeKind::LScheme => {
            let cap = 1.0 + epsilon;
            lb.fill(cap);
            lbig.fill(cap);
        }
        SchemeKind::MScheme { .. } | SchemeKind::MAdaptive => {
            let m = if let SchemeKind::MScheme { m } = kind { *m } else { m };
            let cap = 1.0 + epsilon;
            let floor = 2.0 * m * tau;
            for k in 0..n {
                lb[k] = (model.decomp.b_prime(s[k]) + m * tau).max(floor).min(cap);
                lbig[k] = (model.decomp.big_b_prime(s[k]) + m * tau).max(floor).min(cap);
            }
        }
    }
    (lb, lbig)
}

/// Per-cell flux vectors `F(b(s))` on each axis.
fn flux_fields(grid: &Grid, model: &NonlinearModel, b_vals: &[f64]) -> Vec<Field> {
    let mut f = vec![grid.zero_field(); grid.dim];
    for (k, &u) in b_vals.iter().enumerate() {
        let v = model.advection.flux(u);
        for (ax, fa) in f.iter_mut().enumerate() {
            fa[k] = v[ax];
        }
    }
    f
}

/// Reaction source per cell, lagged at the previous iterate or frozen at `u_old`.
fn reaction_field(model: &NonlinearModel, scheme: &SchemeSpec, b_prev: &[f64], u_old: &[f64]) -> Field {
    let base = if scheme.freeze_reaction { u_old } else { b_prev };
    base.iter().map(|&u| model.advection.reaction(u)).collect()
}

/// Residual of the nonlinear time-discrete equation at the iterate `s`, per cell:
/// `(|K|/tau)(b(s) - u_old) + TPFA-Laplacian(B(s)) + |K| div F(b(s)) - |K| f_src`.
pub fn time_step_residual(
    grid: &Grid,
    model: &NonlinearModel,
    s: &[f64],
    u_old: &[f64],
    tau: f64,
    f_src: &[f64],
) -> Field {
    let nc = grid.cell_count();
    let vol = grid.cell_volume();
    let b_vals: Field = s.iter().map(|&v| model.decomp.b(v)).collect();
    let big_b: Field = s.iter().map(|&v| model.decomp.big_b(v)).collect();
    let mut res = vec![0.0; nc];
    for k in 0..nc {
        res[k] = vol / tau * (b_vals[k] - u_old[k]) - vol * f_src[k];
    }
    for face in &grid.faces {
        match face.conn {
            FaceConn::Interior { left, right } => {
                let d = face.trans * (big_b[left] - big_b[right]);
                res[left] += d;
                res[right] -= d;
            }
            FaceConn::Boundary { cell, .. } => {
                res[cell] += face.trans * big_b[cell];
            }
        }
    }
    if model.advection.has_flux() {
        let adv = upwind_divergence(grid, &flux_fields(grid, model, &b_vals));
        for k in 0..nc {
            res[k] += vol * adv[k];
        }
    }
    res
}

/// One linearization iteration with the given factor fields. Solves the w-first SPD
/// system when `L_B > 0` everywhere and the advection stays lagged; otherwise the
/// coupled increment system in `delta s` (with the upwind advection Jacobian when the
/// scheme is Newton with `newton_linearize_advection`).
#[allow(clippy::too_many_arguments)]
pub fn iterate_once(
    grid: &Grid,
    model: &NonlinearModel,
    scheme: &SchemeSpec,
    s_prev: &[f64],
    u_old: &[f64],
    lb: &[f64],
    lbig: &[f64],
    tau: f64,
) -> Result<(Field, Field, Field)> {
    let nc = grid.cell_count();
    let b_prev: Field = s_prev.iter().map(|&v| model.decomp.b(v)).collect();
    let big_b_prev: Field = s_prev.iter().map(|&v| model.decomp.big_b(v)).collect();
    let f_src = reaction_field(model, scheme, &b_prev, u_old);
    let min_lbig = lbig.iter().cloned().fold(f64::INFINITY, f64::min);
    let newton_full_adv = matches!(scheme.kind, SchemeKind::Newton)
        && scheme.newton_linearize_advection
        && model.advection.has_flux();

    if min_lbig > 0.0 && !newton_full_adv {
        let adv_div = if model.advection.has_flux() {
            upwind_divergence(grid, &flux_fields(grid, model, &b_prev))
        } else {
            grid.zero_field()
        };
        let sys =
            assemble_w_system(grid, lb, lbig, &b_prev, &big_b_prev, u_old, &adv_div, &f_src, tau)?;
        let w = solve(&sys)?;
        let mut s = vec![0.0; nc];
        let mut u = vec![0.0; nc];
        for k in 0..nc {
            let ds = (w[k] - big_b_prev[k]) / lbig[k];
            s[k] = s_prev[k] + ds;
            u[k] = b_prev[k] + lb[k] * ds;
        }
        Ok((s, u, w))
    } else {
        let residual = time_step_residual(grid, model, s_prev, u_old, tau, &f_src);
        let adv_data;
        let newton_adv = if newton_full_adv {
            let f_cell = flux_fields(grid, model, &b_prev);
            // dF_a/ds = g_a kappa'(b(s)) b'(s), with kappa' by central differences
            let mut dfds = vec![grid.zero_field(); grid.dim];
            for k in 0..nc {
                let u = b_prev[k].clamp(0.0, 1.0);
                let h = 1e-7;
                let (ulo, uhi) = ((u - h).max(0.0), (u + h).min(1.0));
                let f_lo = model.advection.flux(ulo);
                let f_hi = model.advection.flux(uhi);
                let bp = model.decomp.b_prime(s_prev[k]);
                for (ax, d) in dfds.iter_mut().enumerate() {
                    d[k] = (f_hi[ax] - f_lo[ax]) / (uhi - ulo) * bp;
                }
            }
            adv_data = (f_cell, dfds);
            Some((adv_data.0.as_slice(), adv_data.1.as_slice()))
        } else {
            None
        };
        let sys = assemble_s_system(grid, lb, lbig, &residual, tau, newton_adv)?;
        let ds = solve(&sys)?;
        let mut s = vec![0.0; nc];
        let mut u = vec![0.0; nc];
        let mut w = vec![0.0; nc];
        for k in 0..nc {
            s[k] = s_prev[k] + ds[k];
            u[k] = b_prev[k] + lb[k] * ds[k];
            w[k] = big_b_prev[k] + lbig[k] * ds[k];
        }
        Ok((s, u, w))
    }
}

/// Iteration-dependent error `( sum |K| L_b L_B ds^2 + tau |dw|_H1^2 )^(1/2)`,
/// with homogeneous Dirichlet jumps for `dw`.
pub fn compute_elin(grid: &Grid, lb: &[f64], lbig: &[f64], ds: &[f64], dw: &[f64], tau: f64) -> f64 {
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for k in 0..ds.len() {
        acc += vol * lb[k] * lbig[k] * ds[k] * ds[k];
    }
    (acc + tau * h1_seminorm_sq(grid, dw, true)).sqrt()
}

/// Fixed (scheme-independent) error: `compute_elin` with unit factor fields.
pub fn compute_efix(grid: &Grid, ds: &[f64], dw: &[f64], tau: f64) -> f64 {
    let vol = grid.cell_volume();
    let mut acc = 0.0;
    for k in 0..ds.len() {
        acc += vol * ds[k] * ds[k];
    }
    (acc + tau * h1_seminorm_sq(grid, dw, true)).sqrt()
}

fn contraction_stats(efix_history: &[f64]) -> (Option<f64>, Option<f64>) {
    let mut ratios = Vec::new();
    for w in efix_history.windows(2) {
        if w[0] > 0.0 {
            ratios.push(w[1] / w[0]);
        }
    }
    if ratios.is_empty() {
        return (None, None);
    }
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    let alpha = tail.iter().sum::<f64>() / tail.len() as f64;
    let p = if ratios.len() >= 2 {
        let r_last = ratios[ratios.len() - 1];
        let r_prev = ratios[ratios.len() - 2];
        if r_last > 0.0 && r_prev > 0.0 && r_prev != 1.0 {
            Some(r_last.ln() / r_prev.ln())
        } else {
            None
        }
    } else {
        None
    };
    (Some(alpha), p)
}

/// Runs linearization iterations until `E_lin <= eps_stop`, divergence, or `max_iters`.
/// Starts from the natural initial guess `s^0 = s_old`.
pub fn step(
    grid: &Grid,
    model: &NonlinearModel,
    scheme: &SchemeSpec,
    s_old: &[f64],
    u_old: &[f64],
    tau: f64,
) -> Result<(Field, Field, Field, StepReport)> {
    scheme.validate()?;
    let mut s_cur = s_old.to_vec();
    let mut u_cur: Field = s_old.iter().map(|&v| model.decomp.b(v)).collect();
    let mut w_cur: Field = s_old.iter().map(|&v| model.decomp.big_b(v)).collect();
    let mut s_prev2: Option<Field> = None;

    let mut elin_history = Vec::new();
    let mut efix_history = Vec::new();
    let mut m_history = Vec::new();
    let mut eta_upper_history = Vec::new();
    let mut eta_lower_history = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let uses_m = matches!(scheme.kind, SchemeKind::MScheme { .. } | SchemeKind::MAdaptive);

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
                    select_m(grid, &inp, *elin_history.last().unwrap(), model, scheme.epsilon)
                }
            }
            _ => 0.0,
        };
        let (lb, lbig) = linearization_factors(&scheme.kind, &s_cur, model, tau, scheme.epsilon, m_used);

        // predicted bounds for this iteration, from the two newest iterates
        let (eta_u, eta_l) = if iter >= 2 {
            let inp = EstimatorInputs {
                s_cur: &s_cur,
                u_cur: &u_cur,
                w_cur: &w_cur,
                s_prev: s_prev2.as_ref().unwrap(),
                tau,
            };
            match eta_pm_with_factors(grid, &inp, model, &lb, &lbig) {
                Ok((ep, em)) => {
                    let (u, l) = eta_lin(ep, em);
                    (u, l)
                }
                Err(_) => (f64::NAN, f64::NAN),
            }
        } else {
            (f64::NAN, f64::NAN)
        };

        let (s_new, u_new, w_new) = iterate_once(grid, model, scheme, &s_cur, u_old, &lb, &lbig, tau)?;
        let ds: Field = s_new.iter().zip(&s_cur).map(|(a, b)| a - b).collect();
        let dw: Field = w_new.iter().zip(&w_cur).map(|(a, b)| a - b).collect();
        let elin = compute_elin(grid, &lb, &lbig, &ds, &dw, tau);
        let efix = compute_efix(grid, &ds, &dw, tau);

        elin_history.push(elin);
        efix_history.push(efix);
        eta_upper_history.push(eta_u);
        eta_lower_history.push(eta_l);
        if uses_m {
            m_history.push(m_used);
        }

        s_prev2 = Some(std::mem::replace(&mut s_cur, s_new));
        u_cur = u_new;
        w_cur = w_new;

        if !efix.is_finite() || efix > scheme.divergence_threshold {
            diverged = true;
            break;
        }
        if elin <= scheme.eps_stop {
            converged = true;
            break;
        }
    }

    let (alpha, order_p) = contraction_stats(&efix_history);
    let report = StepReport {
        iterations: elin_history.len(),
        converged,
        diverged,
        elin_history,
        efix_history,
        m_history,
        eta_upper_history,
        eta_lower_history,
        alpha,
        order_p,
    };
    Ok((s_cur, u_cur, w_cur, report))
}
