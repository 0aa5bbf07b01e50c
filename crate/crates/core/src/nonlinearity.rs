//! The diffusion nonlinearity `Phi`, its `(b, B)` splitting, and the advection/reaction
//! nonlinearities of the four built-in problem classes.
//!
//! The splitting writes `u = b(s)`, `w = B(s)` with `B = Phi o b`, `0 <= b', B' <= 1` and
//! `b' + B' >= 1`. With `u*` the state where `Phi'(u*) = 1`:
//!
//! ```text
//!   b(s) = s                          for s <= u*      B(s) = Phi(s)             for s <= u*
//!   b(s) = Phi^-1(Phi(u*) + s - u*)   for s >= u*      B(s) = Phi(u*) + s - u*   for s >= u*
//! ```
//!
//! For negative arguments the splitting is extended by `b(s) = s`, `B(s) = 0`.

use crate::error::{DdsError, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Which diffusion nonlinearity to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiKind {
    /// `Phi(u) = u^m`, `omega = infinity`. Degenerate at `u = 0`.
    Pme { m: f64 },
    /// `Phi(u) = 1 - sqrt(1 - u^2)` on `[0, 1)`, multivalued at `u = 1`.
    ToyMultivalued,
    /// `Phi(u) = (u / (1 - u))^m`, singular as `u -> 1`.
    Biofilm { m: f64 },
    /// Kirchhoff transform of the van Genuchten closure; table-backed.
    RichardsVg { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiSpec {
    pub kind: PhiKind,
}

impl PhiSpec {
    pub fn new(kind: PhiKind) -> Self {
        Self { kind }
    }

    /// Saturation limit of the admissible `u` range.
    pub fn omega(&self) -> f64 {
        match self.kind {
            PhiKind::Pme { .. } => f64::INFINITY,
            _ => 1.0,
        }
    }
}

/// Saturation of the van Genuchten closure, `S(p) = (1 + (1-p)^(1/(1-lambda)))^(-lambda)`.
pub fn van_genuchten_s(lambda: f64, p: f64) -> Result<f64> {
    if p > 1.0 {
        return Err(DdsError::Domain {
            what: "van Genuchten S requires p <= 1",
            value: p,
        });
    }
    Ok((1.0 + (1.0 - p).powf(1.0 / (1.0 - lambda))).powf(-lambda))
}

/// Analytic derivative `dS/dp`; nonnegative, vanishing at `p = 1` and as `p -> -infinity`.
pub fn van_genuchten_s_prime(lambda: f64, p: f64) -> Result<f64> {
    if p > 1.0 {
        return Err(DdsError::Domain {
            what: "van Genuchten S' requires p <= 1",
            value: p,
        });
    }
    let g = (1.0 - p).powf(1.0 / (1.0 - lambda));
    let gp = (1.0 - p).powf(lambda / (1.0 - lambda)) / (1.0 - lambda);
    Ok(lambda * (1.0 + g).powf(-lambda - 1.0) * gp)
}

/// Relative permeability `kappa(s) = sqrt(s) (1 - (1 - s^(1/lambda))^lambda)^2` on `[0, 1]`.
pub fn van_genuchten_kappa(lambda: f64, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(DdsError::Domain {
            what: "van Genuchten kappa requires s in [0, 1]",
            value: s,
        });
    }
    let inner = (1.0 - s.powf(1.0 / lambda)).clamp(0.0, 1.0);
    Ok(s.sqrt() * (1.0 - inner.powf(lambda)).powi(2))
}

/// Tabulated Kirchhoff transform `Phi(S(p)) = int kappa(S(q)) dq` and the splitting
/// tables derived from it. The parametric `(p, u, phi)` columns share one index; the
/// `(s, b, B)` columns are the splitting evaluated at the same parameter values.
#[derive(Debug, Clone)]
pub struct KirchhoffTable {
    pub lambda: f64,
    pub p_grid: Vec<f64>,
    pub u_vals: Vec<f64>,
    pub phi_vals: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub b_vals: Vec<f64>,
    pub big_b_vals: Vec<f64>,
    pub u_star: f64,
    pub phi_ustar: f64,
    /// `s` beyond which `b` saturates at 1 and `B` continues with slope 1.
    pub s_sat: f64,
    /// `Phi_M = Phi(1)`, the finite limit of the transform.
    pub phi_max: f64,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert!(xs.len() == ys.len() && xs.len() >= 2);
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(k) => return ys[k],
        Err(k) => k,
    };
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

fn interp_slope(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = if x <= xs[0] {
        1
    } else if x >= xs[n - 1] {
        n - 1
    } else {
        match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(k) => k.max(1),
            Err(k) => k,
        }
    };
    (ys[k] - ys[k - 1]) / (xs[k] - xs[k - 1])
}

/// Builds the Kirchhoff table on a grid of pressures graded towards `p = 1`, where the
/// transform's slope blows up. The integral uses the composite trapezoid rule.
pub fn build_kirchhoff_table(lambda: f64, p_min: f64, n_samples: usize) -> Result<KirchhoffTable> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(DdsError::ConfigError(format!("lambda must be in (0,1), got {lambda}")));
    }
    if p_min >= 1.0 {
        return Err(DdsError::ConfigError(format!("p_min must be < 1, got {p_min}")));
    }
    if n_samples < 10_000 {
        return Err(DdsError::ConfigError(format!(
            "Kirchhoff table needs at least 1e4 samples, got {n_samples}"
        )));
    }

    // p_j = 1 - exp(t_j): uniform t gives geometric clustering of 1 - p near 0.
    let t_lo = (1e-13_f64).ln();
    let t_hi = (1.0 - p_min).ln();
    let n = n_samples;
    let mut p_grid = Vec::with_capacity(n + 1);
    for j in 0..n {
        let t = t_hi + (t_lo - t_hi) * (j as f64) / ((n - 1) as f64);
        p_grid.push(1.0 - t.exp());
    }
    p_grid.push(1.0);

    let mut u_raw = Vec::with_capacity(p_grid.len());
    let mut kappa_vals = Vec::with_capacity(p_grid.len());
    for &p in &p_grid {
        let u = van_genuchten_s(lambda, p)?;
        u_raw.push(u);
        kappa_vals.push(van_genuchten_kappa(lambda, u)?);
    }

    let mut phi_raw = Vec::with_capacity(p_grid.len());
    phi_raw.push(0.0);
    for j in 1..p_grid.len() {
        let dp = p_grid[j] - p_grid[j - 1];
        let inc = 0.5 * (kappa_vals[j] + kappa_vals[j - 1]) * dp;
        phi_raw.push(phi_raw[j - 1] + inc);
    }
    let phi_max = *phi_raw.last().unwrap();

    // S(p) rounds to exactly 1.0 well before p reaches 1; compress the node list so u
    // stays strictly increasing (keeping the first node of each duplicate run).
    let mut keep = vec![0usize];
    for j in 1..u_raw.len() {
        if u_raw[j] > u_raw[*keep.last().unwrap()] {
            keep.push(j);
        }
    }
    let p_grid: Vec<f64> = keep.iter().map(|&j| p_grid[j]).collect();
    let u_vals: Vec<f64> = keep.iter().map(|&j| u_raw[j]).collect();
    let phi_vals: Vec<f64> = keep.iter().map(|&j| phi_raw[j]).collect();

    // dPhi/du = kappa(S(p)) / S'(p) is analytic; bisect it for the switch point u*.
    let dphi_du = |p: f64| -> f64 {
        let u = van_genuchten_s(lambda, p).unwrap();
        van_genuchten_kappa(lambda, u).unwrap() / van_genuchten_s_prime(lambda, p).unwrap()
    };
    let mut lo = p_min;
    let mut hi = 1.0 - 1e-13;
    if !(dphi_du(lo) < 1.0 && dphi_du(hi) > 1.0) {
        return Err(DdsError::NoCrossing);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dphi_du(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p_star = 0.5 * (lo + hi);
    let u_star = van_genuchten_s(lambda, p_star)?;
    let phi_ustar = interp(&u_vals, &phi_vals, u_star);

    // Splitting tables share the parametric index; a node is spliced in at u* so the
    // kink of b and B falls exactly on a table node.
    let mut s_grid = Vec::with_capacity(u_vals.len() + 1);
    let mut b_vals = Vec::with_capacity(u_vals.len() + 1);
    let mut big_b_vals = Vec::with_capacity(u_vals.len() + 1);
    let mut spliced = false;
    for j in 0..u_vals.len() {
        let u = u_vals[j];
        if !spliced && u > u_star {
            s_grid.push(u_star);
            b_vals.push(u_star);
            big_b_vals.push(phi_ustar);
            spliced = true;
        }
        if (u - u_star).abs() < 1e-15 {
            continue;
        }
        let s = if u <= u_star { u } else { u_star + phi_vals[j] - phi_ustar };
        s_grid.push(s);
        b_vals.push(u);
        big_b_vals.push(phi_vals[j]);
    }
    let s_sat = u_star + phi_max - phi_ustar;

    let table = KirchhoffTable {
        lambda,
        p_grid,
        u_vals,
        phi_vals,
        s_grid,
        b_vals,
        big_b_vals,
        u_star,
        phi_ustar,
        s_sat,
        phi_max,
    };
    table.check_consistency()?;
    Ok(table)
}

impl KirchhoffTable {
    pub fn phi_of_u(&self, u: f64) -> f64 {
        interp(&self.u_vals, &self.phi_vals, u)
    }

    pub fn dphi_du(&self, u: f64) -> f64 {
        interp_slope(&self.u_vals, &self.phi_vals, u)
    }

    fn check_consistency(&self) -> Result<()> {
        for w in self.u_vals.windows(2) {
            if w[1] <= w[0] {
                return Err(DdsError::ConfigError("u(p) table not strictly increasing".into()));
            }
        }
        // Reconstructed B(s) - Phi(b(s)) residual at segment midpoints.
        let mut worst = 0.0_f64;
        for k in 1..self.s_grid.len() {
            let s = 0.5 * (self.s_grid[k - 1] + self.s_grid[k]);
            let b = interp(&self.s_grid, &self.b_vals, s);
            let bb = interp(&self.s_grid, &self.big_b_vals, s);
            worst = worst.max((bb - self.phi_of_u(b)).abs());
        }
        if worst > 1e-3 {
            return Err(DdsError::ResolutionError { residual: worst, limit: 1e-3 });
        }
        Ok(())
    }
}

/// A diffusion nonlinearity ready for evaluation; owns the Kirchhoff table when the
/// kind is table-backed.
#[derive(Debug, Clone)]
pub struct Phi {
    pub spec: PhiSpec,
    table: Option<KirchhoffTable>,
}

/// Default tabulation resolution for the Richards closure. The reference material gives
/// no grid, only that it is extremely fine; these defaults resolve the switch point to
/// well below the 1e-3 table tolerance.
pub const DEFAULT_TABLE_SAMPLES: usize = 100_000;
pub const DEFAULT_P_MIN: f64 = -1.0e4;

impl Phi {
    pub fn new(spec: PhiSpec) -> Result<Self> {
        let table = match spec.kind {
            PhiKind::RichardsVg { lambda } => {
                Some(build_kirchhoff_table(lambda, DEFAULT_P_MIN, DEFAULT_TABLE_SAMPLES)?)
            }
            _ => None,
        };
        Ok(Self { spec, table })
    }

    pub fn with_table(spec: PhiSpec, table: KirchhoffTable) -> Self {
        Self { spec, table: Some(table) }
    }

    pub fn table(&self) -> Option<&KirchhoffTable> {
        self.table.as_ref()
    }

    pub fn omega(&self) -> f64 {
        self.spec.omega()
    }

    /// `Phi(u)`. For the toy model `u = 1` returns the minimal selection 1.
    pub fn eval(&self, u: f64) -> Result<f64> {
        let omega = self.omega();
        let toy = matches!(self.spec.kind, PhiKind::ToyMultivalued);
        let richards = matches!(self.spec.kind, PhiKind::RichardsVg { .. });
        if u < 0.0 || u > omega || (u == omega && !(toy || richards)) {
            return Err(DdsError::Domain { what: "Phi argument outside [0, omega)", value: u });
        }
        Ok(match self.spec.kind {
            PhiKind::Pme { m } => u.powf(m),
            PhiKind::ToyMultivalued => 1.0 - (1.0 - u * u).max(0.0).sqrt(),
            PhiKind::Biofilm { m } => (u / (1.0 - u)).powf(m),
            PhiKind::RichardsVg { .. } => self.table.as_ref().unwrap().phi_of_u(u),
        })
    }

    /// `Phi'(u)` on the open interval `(0, omega)`.
    pub fn prime(&self, u: f64) -> Result<f64> {
        let omega = self.omega();
        if u < 0.0 || u >= omega {
            return Err(DdsError::Domain { what: "Phi' argument outside [0, omega)", value: u });
        }
        Ok(match self.spec.kind {
            PhiKind::Pme { m } => m * u.powf(m - 1.0),
            PhiKind::ToyMultivalued => u / (1.0 - u * u).sqrt(),
            PhiKind::Biofilm { m } => m * u.powf(m - 1.0) / (1.0 - u).powf(m + 1.0),
            PhiKind::RichardsVg { .. } => self.table.as_ref().unwrap().dphi_du(u),
        })
    }

    /// `Phi^-1(y)` where `Phi` is single-valued.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(DdsError::InversionFailure(y));
        }
        match self.spec.kind {
            PhiKind::Pme { m } => Ok(y.powf(1.0 / m)),
            PhiKind::ToyMultivalued => {
                if y > 1.0 {
                    return Err(DdsError::InversionFailure(y));
                }
                Ok((y * (2.0 - y)).max(0.0).sqrt())
            }
            PhiKind::Biofilm { m } => {
                let t = y.powf(1.0 / m);
                Ok(t / (1.0 + t))
            }
            PhiKind::RichardsVg { .. } => {
                let tab = self.table.as_ref().unwrap();
                if y > tab.phi_max {
                    return Err(DdsError::InversionFailure(y));
                }
                Ok(interp(&tab.phi_vals, &tab.u_vals, y))
            }
        }
    }

    /// The switch point `u*` with `Phi'(u*) = 1`, found by bisection of `Phi' - 1`.
    pub fn find_ustar(&self) -> Result<f64> {
        if let Some(tab) = &self.table {
            return Ok(tab.u_star);
        }
        let omega = self.omega();
        let mut lo = 1e-14;
        let mut hi = if omega.is_finite() { omega - 1e-14 } else { 1.0 };
        if !omega.is_finite() {
            // grow hi until Phi' crosses 1
            let mut guard = 0;
            while self.prime(hi)? < 1.0 {
                hi *= 2.0;
                guard += 1;
                if guard > 2000 {
                    return Err(DdsError::NoCrossing);
                }
            }
        }
        if self.prime(lo)? >= 1.0 || self.prime(hi)? <= 1.0 {
            return Err(DdsError::NoCrossing);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.prime(mid)? < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = 0.5 * (lo + hi);
        if (self.prime(u)? - 1.0).abs() > 1e-10 {
            return Err(DdsError::NoCrossing);
        }
        Ok(u)
    }

    /// Builds the `(b, B)` splitting.
    pub fn decompose(self) -> Result<Decomposition> {
        let u_star = self.find_ustar()?;
        let mode = if self.table.is_some() { DecompMode::Tabulated } else { DecompMode::ClosedForm };
        let phi_ustar = self.eval(u_star)?;
        Ok(Decomposition { u_star, phi_ustar, mode, phi: self })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompMode {
    ClosedForm,
    Tabulated,
}

/// The `(b, B)` splitting of a diffusion nonlinearity.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub u_star: f64,
    pub phi_ustar: f64,
    pub mode: DecompMode,
    phi: Phi,
}

impl Decomposition {
    pub fn phi(&self) -> &Phi {
        &self.phi
    }

    pub fn b(&self, s: f64) -> f64 {
        if s <= self.u_star {
            return s; // covers the s < 0 extension
        }
        match self.phi.spec.kind {
            PhiKind::ToyMultivalued => {
                if s >= SQRT2 {
                    1.0
                } else {
                    (1.0 - (SQRT2 - s) * (SQRT2 - s)).max(0.0).sqrt()
                }
            }
            PhiKind::RichardsVg { .. } => {
                let tab = self.phi.table().unwrap();
                if s >= tab.s_sat {
                    1.0
                } else {
                    interp(&tab.s_grid, &tab.b_vals, s)
                }
            }
            _ => self.phi.inverse(self.phi_ustar + s - self.u_star).unwrap_or(self.phi.omega()),
        }
    }

    pub fn big_b(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.u_star {
            return self.phi_ustar + s - self.u_star;
        }
        match self.phi.spec.kind {
            PhiKind::RichardsVg { .. } => {
                let tab = self.phi.table().unwrap();
                interp(&tab.s_grid, &tab.big_b_vals, s)
            }
            _ => self.phi.eval(s).unwrap(),
        }
    }

    pub fn b_prime(&self, s: f64) -> f64 {
        if s <= self.u_star {
            return 1.0;
        }
        match self.phi.spec.kind {
            PhiKind::ToyMultivalued => {
                if s >= SQRT2 {
                    0.0
                } else {
                    (SQRT2 - s) / (1.0 - (SQRT2 - s) * (SQRT2 - s)).max(1e-300).sqrt()
                }
            }
            PhiKind::RichardsVg { .. } => {
                let tab = self.phi.table().unwrap();
                if s >= tab.s_sat {
                    0.0
                } else {
                    interp_slope(&tab.s_grid, &tab.b_vals, s)
                }
            }
            _ => {
                let u = self.b(s);
                match self.phi.prime(u) {
                    Ok(d) if d > 0.0 => (1.0 / d).min(1.0),
                    _ => 0.0,
                }
            }
        }
    }

    pub fn big_b_prime(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.u_star {
            return 1.0;
        }
        match self.phi.spec.kind {
            PhiKind::RichardsVg { .. } => {
                let tab = self.phi.table().unwrap();
                interp_slope(&tab.s_grid, &tab.big_b_vals, s)
            }
            _ => self.phi.prime(s).unwrap().min(1.0),
        }
    }

    /// Pseudo-inverse of `b`, returning the minimal preimage on plateaus
    /// (toy model: `b^-1(1) = sqrt(2)`).
    pub fn b_inverse(&self, u: f64) -> Result<f64> {
        let omega = self.phi.omega();
        if u <= self.u_star {
            return Ok(u);
        }
        if u > omega {
            return Err(DdsError::InversionFailure(u));
        }
        match self.phi.spec.kind {
            PhiKind::ToyMultivalued => {
                if u >= 1.0 {
                    return Ok(SQRT2);
                }
                Ok(SQRT2 - (1.0 - u * u).max(0.0).sqrt())
            }
            PhiKind::RichardsVg { .. } => {
                let tab = self.phi.table().unwrap();
                if u >= 1.0 {
                    return Ok(tab.s_sat);
                }
                Ok(self.u_star + tab.phi_of_u(u) - self.phi_ustar)
            }
            _ => {
                if u == omega {
                    return Err(DdsError::InversionFailure(u));
                }
                Ok(self.u_star + self.phi.eval(u)? - self.phi_ustar)
            }
        }
    }
}

/// Advective flux kind of the model; only the gravity term of the Richards closure is
/// built in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdvectionKind {
    None,
    GravityRichards { direction: [f64; 2], lambda: f64 },
}

/// Reaction (source) term `f(u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReactionSpec {
    None,
    Linear { c: f64 },
    Fisher { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvectionSpec {
    pub kind: AdvectionKind,
    pub reaction: ReactionSpec,
}

impl AdvectionSpec {
    pub fn none() -> Self {
        Self { kind: AdvectionKind::None, reaction: ReactionSpec::None }
    }

    pub fn validate(&self) -> Result<()> {
        if let AdvectionKind::GravityRichards { direction, .. } = self.kind {
            let norm = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(DdsError::ConfigError(format!(
                    "gravity direction must be a unit vector, |g| = {norm}"
                )));
            }
        }
        Ok(())
    }

    /// The advective flux vector `F(u)`.
    pub fn flux(&self, u: f64) -> [f64; 2] {
        match self.kind {
            AdvectionKind::None => [0.0, 0.0],
            AdvectionKind::GravityRichards { direction, lambda } => {
                let k = van_genuchten_kappa(lambda, u.clamp(0.0, 1.0)).unwrap();
                [k * direction[0], k * direction[1]]
            }
        }
    }

    pub fn has_flux(&self) -> bool {
        !matches!(self.kind, AdvectionKind::None)
    }

    /// The reaction source `f(u)`.
    pub fn reaction(&self, u: f64) -> f64 {
        match self.reaction {
            ReactionSpec::None => 0.0,
            ReactionSpec::Linear { c } => c * u,
            ReactionSpec::Fisher { c } => c * u * (1.0 - u),
        }
    }
}

/// A problem's nonlinearities bundled: `Phi` with its splitting plus advection/reaction.
#[derive(Debug, Clone)]
pub struct NonlinearModel {
    pub decomp: Decomposition,
    pub advection: AdvectionSpec,
}

impl NonlinearModel {
    pub fn new(spec: PhiSpec, advection: AdvectionSpec) -> Result<Self> {
        advection.validate()?;
        let decomp = Phi::new(spec)?.decompose()?;
        Ok(Self { decomp, advection })
    }

    pub fn phi(&self) -> &Phi {
        self.decomp.phi()
    }
}
