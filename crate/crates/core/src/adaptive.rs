//! A posteriori estimators for the linearization error and the adaptive selection of
//! the stabilization parameter M.
//!
//! From the previous two iterates the pair `eta_plus, eta_minus` bounds the
//! linearization error of the *next* iteration:
//! `max(0, (eta+ - eta-)/2) <= E_lin <= (eta+ + eta-)/2`.
//! The adaptive scheme picks the smallest candidate `M = 10^j`, `j = -10..-2`, whose
//! upper bound does not exceed the current error.

use crate::error::{DdsError, Result};
use crate::mesh::Grid;
use crate::nonlinearity::{Decomposition, NonlinearModel};
use crate::schemes::{linearization_factors, SchemeKind};

/// Iterate data the estimators read. `s_cur`, `u_cur`, `w_cur` belong to the newest
/// available iterate; `s_prev` to the one before it (for the advection difference).
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInputs<'a> {
    pub s_cur: &'a [f64],
    pub u_cur: &'a [f64],
    pub w_cur: &'a [f64],
    pub s_prev: &'a [f64],
    pub tau: f64,
}

/// `eta±` evaluated with explicit linearization factor fields.
pub fn eta_pm_with_factors(
    grid: &Grid,
    inp: &EstimatorInputs,
    model: &NonlinearModel,
    lb: &[f64],
    lbig: &[f64],
) -> Result<(f64, f64)> {
    let nc = grid.cell_count();
    let vol = grid.cell_volume();
    let min_l = lb.iter().chain(lbig).cloned().fold(f64::INFINITY, f64::min);
    if min_l <= 0.0 {
        return Err(DdsError::DegenerateCoefficient(min_l));
    }
    let mut sum_p = 0.0;
    let mut sum_m = 0.0;
    for k in 0..nc {
        let a = inp.w_cur[k] - model.decomp.big_b(inp.s_cur[k]);
        let c = inp.u_cur[k] - model.decomp.b(inp.s_cur[k]);
        let r = (lb[k] / lbig[k]).sqrt();
        let tp = r * a + c / r;
        let tm = r * a - c / r;
        sum_p += vol * tp * tp;
        sum_m += vol * tm * tm;
    }
    let mut adv = 0.0;
    if model.advection.has_flux() {
        for k in 0..nc {
            let f_cur = model.advection.flux(model.decomp.b(inp.s_cur[k]));
            let f_prev = model.advection.flux(model.decomp.b(inp.s_prev[k]));
            for ax in 0..grid.dim {
                let d = f_cur[ax] - f_prev[ax];
                adv += vol * d * d;
            }
        }
    }
    Ok(((sum_p + inp.tau * adv).sqrt(), (sum_m + inp.tau * adv).sqrt()))
}

/// `eta±` with candidate factors from the M-scheme rule at `candidate_m`.
pub fn eta_pm(
    grid: &Grid,
    inp: &EstimatorInputs,
    model: &NonlinearModel,
    candidate_m: f64,
    epsilon: f64,
) -> Result<(f64, f64)> {
    let (lb, lbig) = linearization_factors(
        &SchemeKind::MScheme { m: candidate_m },
        inp.s_cur,
        model,
        inp.tau,
        epsilon,
        candidate_m,
    );
    eta_pm_with_factors(grid, inp, model, &lb, &lbig)
}

/// Upper and lower bound on the linearization error from the estimator pair.
pub fn eta_lin(eta_plus: f64, eta_minus: f64) -> (f64, f64) {
    let upper = 0.5 * (eta_plus + eta_minus);
    let lower = (0.5 * (eta_plus - eta_minus)).max(0.0);
    (upper, lower)
}

/// Candidate exponents for the adaptive selection, smallest first.
pub const M_CANDIDATE_EXPONENTS: std::ops::RangeInclusive<i32> = -10..=-2;

/// Picks the smallest candidate `M = 10^j` whose predicted upper bound does not exceed
/// the current linearization error; falls back to the last candidate `10^-2` when none
/// passes. Callers use `M = 1` on the first iteration, where no estimator data exists.
pub fn select_m(
    grid: &Grid,
    inp: &EstimatorInputs,
    elin_current: f64,
    model: &NonlinearModel,
    epsilon: f64,
) -> f64 {
    for j in M_CANDIDATE_EXPONENTS {
        let m = 10f64.powi(j);
        if let Ok((ep, em)) = eta_pm(grid, inp, model, m, epsilon) {
            let (upper, _) = eta_lin(ep, em);
            if upper <= elin_current {
                return m;
            }
        }
    }
    1e-2
}

fn diff_quotient(rho: impl Fn(f64) -> f64, rho_prime: impl Fn(f64) -> f64, t: f64, v: f64) -> f64 {
    if t == v {
        rho_prime(t)
    } else {
        (rho(t) - rho(v)) / (t - v)
    }
}

/// Cell-wise convergence-criterion coefficients
/// `G1 = b[s,s_ref] L_B + L_b B[s,s_ref]`, `G2 = 2 L_b L_B - G1`,
/// `G3 = G1 - (2 - tau L_F) b[s,s_ref] B[s,s_ref]`,
/// with `rho[t,v]` the difference quotient of `rho` (its derivative when t = v).
/// Diagnostics only; never gates a run.
#[allow(clippy::too_many_arguments)]
pub fn g_coefficients(
    decomp: &Decomposition,
    s_iter: &[f64],
    s_ref: &[f64],
    lb: &[f64],
    lbig: &[f64],
    tau: f64,
    lf_est: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = s_iter.len();
    let mut g1 = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut g3 = vec![0.0; n];
    for k in 0..n {
        let bq = diff_quotient(|t| decomp.b(t), |t| decomp.b_prime(t), s_iter[k], s_ref[k]);
        let bbq = diff_quotient(|t| decomp.big_b(t), |t| decomp.big_b_prime(t), s_iter[k], s_ref[k]);
        g1[k] = bq * lbig[k] + lb[k] * bbq;
        g2[k] = 2.0 * lb[k] * lbig[k] - g1[k];
        g3[k] = g1[k] - (2.0 - tau * lf_est) * bq * bbq;
    }
    (g1, g2, g3)
}

/// Checks the sandwich `(M - M0) tau <= L_B - B[s_iter, s_ref] <= 2 M tau` cell-wise
/// with tolerance 1e-12, where `M0 = bound_est * lipschitz_bprime_est`.
pub fn sandwich_check(
    decomp: &Decomposition,
    s_iter: &[f64],
    s_ref: &[f64],
    lbig: &[f64],
    m: f64,
    tau: f64,
    lipschitz_bprime_est: f64,
    bound_est: f64,
) -> bool {
    let m0 = bound_est * lipschitz_bprime_est;
    let tol = 1e-12;
    for k in 0..s_iter.len() {
        let bbq = diff_quotient(|t| decomp.big_b(t), |t| decomp.big_b_prime(t), s_iter[k], s_ref[k]);
        let d = lbig[k] - bbq;
        if d < (m - m0) * tau - tol || d > 2.0 * m * tau + tol {
            return false;
        }
    }
    true
}
