//! Assembly of the linear systems of one linearization iteration and their solution.
//!
//! Two assembly routes exist: the w-first form (eliminate `s`, solve an SPD system for
//! `w`, usable whenever `L_B > 0` everywhere) and the coupled increment form in
//! `delta s` (usable even when `L_B` vanishes, as under Newton on degenerate states).

use crate::error::{DdsError, Result};
use crate::mesh::{Face, FaceConn, Field, Grid};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseMatrix {
    /// Compresses per-row coefficient lists; duplicate column entries are summed and
    /// columns sorted, so identical inputs yield identical storage.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == col {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(col);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col_idx[k] == j {
                return self.vals[k];
            }
        }
        0.0
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[i][self.col_idx[k]] = self.vals[k];
            }
        }
        a
    }
}

#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub symmetric_pd: bool,
}

/// Donor-cell divergence of the advective flux given per-cell flux vectors. The upwind
/// side of a face is picked by the sign of the face-normal component of the averaged
/// flux; boundary faces contribute outflow only.
pub fn upwind_divergence(grid: &Grid, f_cell: &[Field]) -> Field {
    debug_assert_eq!(f_cell.len(), grid.dim);
    let area = grid.face_area();
    let vol = grid.cell_volume();
    let mut div = grid.zero_field();
    for face in &grid.faces {
        let fa = &f_cell[face.axis];
        match face.conn {
            FaceConn::Interior { left, right } => {
                let avg = 0.5 * (fa[left] + fa[right]);
                let up = if avg >= 0.0 { left } else { right };
                let flux = fa[up] * area;
                div[left] += flux / vol;
                div[right] -= flux / vol;
            }
            FaceConn::Boundary { cell, sign } => {
                let outward = fa[cell] * sign;
                if outward > 0.0 {
                    div[cell] += outward * area / vol;
                }
            }
        }
    }
    div
}

/// Per-face upwind cell for the advection Jacobian; mirrors `upwind_divergence`.
fn upwind_cell(face: &Face, fa: &[f64]) -> Option<(usize, f64)> {
    match face.conn {
        FaceConn::Interior { left, right } => {
            let avg = 0.5 * (fa[left] + fa[right]);
            Some(if avg >= 0.0 { (left, 1.0) } else { (right, 1.0) })
        }
        FaceConn::Boundary { cell, sign } => {
            if fa[cell] * sign > 0.0 {
                Some((cell, sign))
            } else {
                None
            }
        }
    }
}

/// Assembles the w-first system: per cell
/// `(|K|/tau)(L_b/L_B) w + TPFA-Laplacian(w) = (|K|/tau)[(L_b/L_B) B_prev - (b_prev - u_old)] + |K| f - |K| adv_div`
/// with homogeneous Dirichlet boundary. Requires `L_B > 0` everywhere.
#[allow(clippy::too_many_arguments)]
pub fn assemble_w_system(
    grid: &Grid,
    lb: &[f64],
    lbig: &[f64],
    b_prev: &[f64],
    big_b_prev: &[f64],
    u_old: &[f64],
    adv_div: &[f64],
    f_src: &[f64],
    tau: f64,
) -> Result<SparseSystem> {
    let nc = grid.cell_count();
    let vol = grid.cell_volume();
    let min_lbig = lbig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_lbig <= 0.0 {
        return Err(DdsError::DegenerateCoefficient(min_lbig));
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(5); nc];
    let mut rhs = vec![0.0; nc];
    for k in 0..nc {
        let ratio = lb[k] / lbig[k];
        rows[k].push((k, vol / tau * ratio));
        rhs[k] = vol / tau * (ratio * big_b_prev[k] - (b_prev[k] - u_old[k])) + vol * f_src[k]
            - vol * adv_div[k];
    }
    for face in &grid.faces {
        match face.conn {
            FaceConn::Interior { left, right } => {
                rows[left].push((left, face.trans));
                rows[left].push((right, -face.trans));
                rows[right].push((right, face.trans));
                rows[right].push((left, -face.trans));
            }
            FaceConn::Boundary { cell, .. } => {
                rows[cell].push((cell, face.trans));
            }
        }
    }
    Ok(SparseSystem { matrix: SparseMatrix::from_rows(rows), rhs, symmetric_pd: true })
}

/// Assembles the increment system `(|K| L_b / tau) ds + TPFA-Laplacian(L_B ds) = -residual`.
/// The Laplacian acts on the nodal product `L_B ds`. When `newton_adv` carries the
/// per-cell flux and its s-derivative (per axis), the upwind advection Jacobian is added.
pub fn assemble_s_system(
    grid: &Grid,
    lb: &[f64],
    lbig: &[f64],
    residual: &[f64],
    tau: f64,
    newton_adv: Option<(&[Field], &[Field])>,
) -> Result<SparseSystem> {
    let nc = grid.cell_count();
    let vol = grid.cell_volume();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(6); nc];
    let mut rhs = vec![0.0; nc];
    for k in 0..nc {
        rows[k].push((k, vol * lb[k] / tau));
        rhs[k] = -residual[k];
    }
    for face in &grid.faces {
        match face.conn {
            FaceConn::Interior { left, right } => {
                rows[left].push((left, face.trans * lbig[left]));
                rows[left].push((right, -face.trans * lbig[right]));
                rows[right].push((right, face.trans * lbig[right]));
                rows[right].push((left, -face.trans * lbig[left]));
            }
            FaceConn::Boundary { cell, .. } => {
                rows[cell].push((cell, face.trans * lbig[cell]));
            }
        }
    }
    if let Some((f_cell, dfds)) = newton_adv {
        let area = grid.face_area();
        for face in &grid.faces {
            let fa = &f_cell[face.axis];
            if let Some((up, sign)) = upwind_cell(face, fa) {
                let dv = sign * dfds[face.axis][up] * area;
                match face.conn {
                    FaceConn::Interior { left, right } => {
                        rows[left].push((up, dv));
                        rows[right].push((up, -dv));
                    }
                    FaceConn::Boundary { cell, .. } => {
                        rows[cell].push((up, dv));
                    }
                }
            }
        }
    }
    Ok(SparseSystem { matrix: SparseMatrix::from_rows(rows), rhs, symmetric_pd: false })
}

const SOLVE_RTOL: f64 = 1e-12;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tracks the best iterate seen so the solvers can bail out once rounding stalls the
/// residual above `tol`; the caller re-checks the true residual of whatever is returned.
struct BestIterate {
    x: Vec<f64>,
    resnorm: f64,
    checkpoint: f64,
    count: usize,
    /// Stall bailouts are allowed only below this residual: preconditioned CG can spend
    /// hundreds of iterations above the initial residual before it starts descending, and
    /// that transient must not be mistaken for the terminal rounding floor.
    floor_gate: f64,
}

// Krylov residual histories plateau before dropping again, so stagnation is judged over a
// window: quit only if the best residual failed to halve across a whole window. This only
// cuts off the terminal rounding floor, not a slow but steady descent.
const STALL_WINDOW: usize = 400;

impl BestIterate {
    fn new(n: usize, bnorm: f64) -> Self {
        BestIterate { x: vec![0.0; n], resnorm: bnorm, checkpoint: bnorm, count: 0, floor_gate: 1e-6 * bnorm }
    }

    /// Records `x` if it improved the residual; returns true once progress has stalled.
    fn update(&mut self, x: &[f64], resnorm: f64) -> bool {
        if resnorm < self.resnorm {
            self.x.copy_from_slice(x);
            self.resnorm = resnorm;
        }
        self.count += 1;
        if self.count < STALL_WINDOW {
            return false;
        }
        self.count = 0;
        let stalled = self.resnorm > 0.5 * self.checkpoint && self.resnorm <= self.floor_gate;
        self.checkpoint = self.resnorm;
        stalled
    }
}

/// Jacobi-preconditioned conjugate gradients.
fn solve_cg(a: &SparseMatrix, b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Some(vec![0.0; n]);
    }
    let inv_d: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut best = BestIterate::new(n, bnorm);
    for _ in 0..20 * n + 100 {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return None;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = norm2(&r);
        if rn <= tol * bnorm {
            return Some(x);
        }
        if best.update(&x, rn) {
            return Some(best.x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Some(best.x)
}

/// Jacobi-preconditioned BiCGStab for the nonsymmetric increment systems.
fn solve_bicgstab(a: &SparseMatrix, b: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Some(vec![0.0; n]);
    }
    let inv_d: Vec<f64> = a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut best = BestIterate::new(n, bnorm);
    for _ in 0..20 * n + 100 {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return None;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            phat[i] = p[i] * inv_d[i];
        }
        a.mul(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            return None;
        }
        alpha = rho / r0v;
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm2(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Some(x);
        }
        for i in 0..n {
            shat[i] = s[i] * inv_d[i];
        }
        a.mul(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            return None;
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rn = norm2(&r);
        if rn <= tol * bnorm {
            return Some(x);
        }
        if best.update(&x, rn) {
            return Some(best.x);
        }
        if omega.abs() < 1e-300 {
            return None;
        }
    }
    Some(best.x)
}

/// Banded LU without pivoting, with iterative refinement. The assembled TPFA systems are
/// column diagonally dominant, for which elimination without pivoting is backward stable.
/// Bandwidth is 1 in 1D and the axis cell count in 2D, so this is the cheap direct path.
fn solve_banded(a: &SparseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.n;
    let mut bw = 0usize;
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            bw = bw.max(a.col_idx[k].abs_diff(i));
        }
    }
    let w = 2 * bw + 1;
    // Guard against pathological memory use; the dense fallback handles such cases.
    match n.checked_mul(w) {
        Some(cells) if cells <= 200_000_000 => {}
        _ => return None,
    }
    // band[i * w + (j - i + bw)] holds A[i][j]; the factorization stores L's multipliers
    // below the diagonal and U on and above it.
    let mut band = vec![0.0; n * w];
    for i in 0..n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.col_idx[k];
            band[i * w + (j + bw - i)] = a.vals[k];
        }
    }
    for k in 0..n {
        let piv = band[k * w + bw];
        if piv == 0.0 {
            return None;
        }
        for i in k + 1..(k + bw + 1).min(n) {
            let li = i * w + (k + bw - i);
            let f = band[li] / piv;
            band[li] = f;
            if f != 0.0 {
                for j in k + 1..(k + bw + 1).min(n) {
                    band[i * w + (j + bw - i)] -= f * band[k * w + (j + bw - k)];
                }
            }
        }
    }
    let band_solve = |rhs: &[f64]| -> Vec<f64> {
        let mut x = rhs.to_vec();
        for k in 0..n {
            for i in k + 1..(k + bw + 1).min(n) {
                let f = band[i * w + (k + bw - i)];
                x[i] -= f * x[k];
            }
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..(i + bw + 1).min(n) {
                acc -= band[i * w + (j + bw - i)] * x[j];
            }
            x[i] = acc / band[i * w + bw];
        }
        x
    };
    let mut x = band_solve(b);
    // Two rounds of iterative refinement push the true residual to the rounding floor.
    let mut ax = vec![0.0; n];
    for _ in 0..2 {
        a.mul(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let d = band_solve(&r);
        for i in 0..n {
            x[i] += d[i];
        }
    }
    Some(x)
}

/// Dense LU with partial pivoting; direct fallback and test oracle.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv, pv) = (k..n)
            .map(|i| (i, m[i][k].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if pv == 0.0 {
            return None;
        }
        m.swap(k, piv);
        perm.swap(k, piv);
        x.swap(k, piv);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            m[i][k] = f;
            for j in k + 1..n {
                m[i][j] -= f * m[k][j];
            }
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= m[i][j] * x[j];
        }
        x[i] = acc / m[i][i];
    }
    Some(x)
}

/// Solves the assembled system, targeting relative residual 1e-12 and accepting 1e-9.
/// SPD systems use CG, the rest BiCGStab; a banded and then a dense factorization
/// backstop iterative breakdown. Deterministic.
pub fn solve(sys: &SparseSystem) -> Result<Field> {
    let a = &sys.matrix;
    let b = &sys.rhs;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(vec![0.0; a.n]);
    }
    let iterative = if sys.symmetric_pd {
        solve_cg(a, b, SOLVE_RTOL)
    } else {
        solve_bicgstab(a, b, SOLVE_RTOL)
    };
    let attempts: [&dyn Fn() -> Option<Field>; 3] =
        [&|| iterative.clone(), &|| solve_banded(a, b), &|| solve_dense(&a.to_dense(), b)];
    let mut last: Option<Field> = None;
    for attempt in attempts {
        if let Some(x) = attempt() {
            if residual_ok(a, &x, b, bnorm) {
                return Ok(x);
            }
            last = Some(x);
        }
    }
    match last {
        Some(x) => {
            let mut ax = vec![0.0; a.n];
            a.mul(&x, &mut ax);
            let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
            Err(DdsError::SolverFailure { residual: norm2(&r) / bnorm })
        }
        None => Err(DdsError::SolverFailure { residual: f64::INFINITY }),
    }
}

fn residual_ok(a: &SparseMatrix, x: &[f64], b: &[f64], bnorm: f64) -> bool {
    let mut ax = vec![0.0; a.n];
    a.mul(x, &mut ax);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    // Acceptance is looser than the iteration target: on ill-conditioned fine-mesh systems
    // the achievable true-residual floor sits a few orders above the recursive-residual
    // target, and 1e-9 relative is still far below any nonlinear stopping tolerance used.
    norm2(&r) <= 1000.0 * SOLVE_RTOL * bnorm
}

#[cfg(test)]
pub(crate) mod tests_support {
    use crate::mesh::{Face, FaceConn, Grid};

    /// Degenerate single-cell grid for hand-checkable assembly examples.
    pub fn one_cell_grid() -> Grid {
        Grid {
            dim: 1,
            lo: 0.0,
            hi: 1.0,
            n: 1,
            h: 1.0,
            faces: vec![
                Face { axis: 0, trans: 2.0, conn: FaceConn::Boundary { cell: 0, sign: -1.0 } },
                Face { axis: 0, trans: 2.0, conn: FaceConn::Boundary { cell: 0, sign: 1.0 } },
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::one_cell_grid;
    use super::*;
    use crate::mesh::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn upwind_examples() {
        let g = build_grid(1, 0.0, 3.0, 3).unwrap();
        let zero = vec![vec![0.0; 3]];
        assert_eq!(upwind_divergence(&g, &zero), vec![0.0; 3]);
        let f = vec![vec![0.0, 1.0, 0.0]];
        let d = upwind_divergence(&g, &f);
        for (a, b) in d.iter().zip([0.0, 1.0, -1.0]) {
            assert!((a - b).abs() < 1e-15, "{d:?}");
        }
        // constant flux with zero-inflow boundary: interior faces telescope; the inflow
        // cell keeps the uncompensated outflow, the last cell balances with the
        // boundary outflow
        let c = vec![vec![1.0; 3]];
        let d = upwind_divergence(&g, &c);
        assert_eq!(d, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn upwind_2d_telescopes() {
        let g = build_grid(2, -1.0, 1.0, 6).unwrap();
        let nc = g.cell_count();
        let f = vec![vec![0.3; nc], vec![-0.7; nc]];
        let d = upwind_divergence(&g, &f);
        // zero divergence away from the inflow edges (left edge for +x, top edge for -y)
        for c in 0..nc {
            let [x, y] = g.cell_center(c);
            if x > -1.0 + g.h && y < 1.0 - g.h {
                assert!(d[c].abs() < 1e-14, "cell {c} at ({x},{y}): {}", d[c]);
            }
        }
        // net divergence equals the missing inflow: 0.3*2 (left edge) + 0.7*2 (top edge)
        let vol = g.cell_volume();
        let total: f64 = d.iter().map(|v| v * vol).sum();
        assert!((total - 2.0).abs() < 1e-12, "total {total}");
    }

    #[test]
    fn w_system_single_cell() {
        let g = one_cell_grid();
        let one = vec![1.0];
        let zero = vec![0.0];
        let sys = assemble_w_system(&g, &one, &one, &zero, &zero, &zero, &zero, &zero, 1.0).unwrap();
        assert_eq!(sys.matrix.get(0, 0), 5.0);
        assert_eq!(sys.rhs, vec![0.0]);
        assert_eq!(solve(&sys).unwrap(), vec![0.0]);
    }

    #[test]
    fn w_system_rejects_degenerate_lbig() {
        let g = one_cell_grid();
        let one = vec![1.0];
        let zero = vec![0.0];
        let r = assemble_w_system(&g, &one, &zero, &zero, &zero, &zero, &zero, &zero, 1.0);
        assert!(matches!(r, Err(DdsError::DegenerateCoefficient(_))));
    }

    #[test]
    fn w_system_symmetric() {
        let g = build_grid(2, -1.0, 1.0, 5).unwrap();
        let nc = g.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lb: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.1..1.0)).collect();
        let lbig: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.1..1.0)).collect();
        let zero = vec![0.0; nc];
        let sys = assemble_w_system(&g, &lb, &lbig, &zero, &zero, &zero, &zero, &zero, 0.1).unwrap();
        let a = &sys.matrix;
        for i in 0..nc {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                assert!((a.vals[k] - a.get(j, i)).abs() < 1e-14);
            }
            assert!(a.get(i, i) > 0.0);
        }
    }

    #[test]
    fn s_system_single_cell() {
        let g = one_cell_grid();
        let sys = assemble_s_system(&g, &[1.0], &[0.0], &[0.25], 1.0, None).unwrap();
        assert_eq!(sys.matrix.get(0, 0), 1.0);
        assert_eq!(solve(&sys).unwrap(), vec![-0.25]);
        let sys = assemble_s_system(&g, &[0.0], &[1.0], &[0.0], 1.0, None).unwrap();
        assert_eq!(sys.matrix.get(0, 0), 4.0);
    }

    #[test]
    fn solve_identity() {
        let m = SparseMatrix::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let sys = SparseSystem { matrix: m, rhs: vec![3.0, -1.0, 0.5], symmetric_pd: true };
        let x = solve(&sys).unwrap();
        assert_eq!(x, vec![3.0, -1.0, 0.5]);
    }

    #[test]
    fn solve_manufactured_poisson() {
        // recover a manufactured w from its assembled w-system image
        let g = build_grid(1, -10.0, 10.0, 50).unwrap();
        let nc = g.cell_count();
        let one = vec![1.0; nc];
        let zero = vec![0.0; nc];
        let sys = assemble_w_system(&g, &one, &one, &zero, &zero, &zero, &zero, &zero, 0.1).unwrap();
        let w_exact: Vec<f64> = (0..nc).map(|i| (g.cell_center(i)[0] * 0.3).sin()).collect();
        let mut rhs = vec![0.0; nc];
        sys.matrix.mul(&w_exact, &mut rhs);
        let sys2 = SparseSystem { matrix: sys.matrix.clone(), rhs, symmetric_pd: true };
        let w = solve(&sys2).unwrap();
        for i in 0..nc {
            assert!((w[i] - w_exact[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_matches_dense_on_random_spd() {
        let n = 100;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        // A = B^T B + n I is SPD
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b[k][i] * b[k][j];
                }
                dense[i][j] = acc + if i == j { n as f64 } else { 0.0 };
            }
        }
        let rows: Vec<Vec<(usize, f64)>> = dense
            .iter()
            .map(|r| r.iter().cloned().enumerate().collect())
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sys = SparseSystem { matrix: SparseMatrix::from_rows(rows), rhs: rhs.clone(), symmetric_pd: true };
        let x_cg = solve(&sys).unwrap();
        let x_lu = solve_dense(&dense, &rhs).unwrap();
        for i in 0..n {
            assert!((x_cg[i] - x_lu[i]).abs() < 1e-10, "i={i}: {} vs {}", x_cg[i], x_lu[i]);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let g = build_grid(1, -10.0, 10.0, 40).unwrap();
        let nc = g.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lb: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.2..1.0)).collect();
        let lbig: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.2..1.0)).collect();
        let res: Vec<f64> = (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sys = assemble_s_system(&g, &lb, &lbig, &res, 0.1, None).unwrap();
        let x = solve(&sys).unwrap();
        let mut ax = vec![0.0; nc];
        sys.matrix.mul(&x, &mut ax);
        let rn: f64 = ax.iter().zip(&sys.rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bn: f64 = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(rn / bn <= 1e-11);
    }

    #[test]
    fn mass_conservation_of_w_system() {
        // with f = adv = 0, summing rows: (vol/tau) sum (Lb/LB)(w - B_prev) + boundary flux
        // = -(vol/tau) sum (b_prev - u_old); interior-supported w gives exact balance
        let g = build_grid(1, -10.0, 10.0, 80).unwrap();
        let nc = g.cell_count();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lb: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.3..1.0)).collect();
        let lbig: Vec<f64> = (0..nc).map(|_| rng.gen_range(0.3..1.0)).collect();
        let tau = 0.1;
        // interior-supported data
        let bump = |i: usize| {
            let x: f64 = g.cell_center(i)[0];
            (1.0 - (x / 4.0) * (x / 4.0)).max(0.0)
        };
        let b_prev: Vec<f64> = (0..nc).map(bump).collect();
        let big_b_prev: Vec<f64> = b_prev.iter().map(|v| 0.5 * v).collect();
        let u_old: Vec<f64> = b_prev.iter().map(|v| 0.9 * v).collect();
        let zero = vec![0.0; nc];
        let sys = assemble_w_system(&g, &lb, &lbig, &b_prev, &big_b_prev, &u_old, &zero, &zero, tau).unwrap();
        let w = solve(&sys).unwrap();
        // u_new from the update identity; total mass change = -tau * boundary flux of w
        let vol = g.cell_volume();
        let mut mass_change = 0.0;
        for k in 0..nc {
            let ds = (w[k] - big_b_prev[k]) / lbig[k];
            let u_new = b_prev[k] + lb[k] * ds;
            mass_change += vol * (u_new - u_old[k]);
        }
        let mut bflux = 0.0;
        for face in &g.faces {
            if let FaceConn::Boundary { cell, .. } = face.conn {
                bflux += face.trans * w[cell];
            }
        }
        assert!((mass_change + tau * bflux).abs() < 1e-9, "mass {mass_change}, flux {bflux}");
    }
}
