//! Uniform rectangular grids in 1D/2D with two-point flux (TPFA) face connectivity and
//! the discrete norms used by the stopping criteria.

use crate::error::{DdsError, Result};

/// Per-cell value vector; length must equal `grid.cell_count()`.
pub type Field = Vec<f64>;

/// How a face connects cells. Interior faces are oriented along the positive axis
/// direction (normal points from `left` to `right`); boundary faces carry the sign of
/// the outward normal along their axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceConn {
    Interior { left: usize, right: usize },
    Boundary { cell: usize, sign: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub trans: f64,
    pub conn: FaceConn,
}

/// Uniform grid on `(lo, hi)^dim` with `n` cells per axis. Cell unknowns are
/// cell-centered; the boundary carries homogeneous Dirichlet data through half-distance
/// transmissibilities.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub h: f64,
    pub faces: Vec<Face>,
}

pub fn build_grid(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(DdsError::ConfigError(format!("dim must be 1 or 2, got {dim}")));
    }
    if n < 2 {
        return Err(DdsError::ConfigError(format!("need at least 2 cells per axis, got {n}")));
    }
    if lo >= hi {
        return Err(DdsError::ConfigError(format!("invalid bounds: lo={lo} >= hi={hi}")));
    }
    let h = (hi - lo) / n as f64;
    let t_int = h.powi(dim as i32 - 2);
    let t_bnd = 2.0 * t_int;
    let mut faces = Vec::new();
    match dim {
        1 => {
            faces.push(Face { axis: 0, trans: t_bnd, conn: FaceConn::Boundary { cell: 0, sign: -1.0 } });
            for i in 0..n - 1 {
                faces.push(Face { axis: 0, trans: t_int, conn: FaceConn::Interior { left: i, right: i + 1 } });
            }
            faces.push(Face { axis: 0, trans: t_bnd, conn: FaceConn::Boundary { cell: n - 1, sign: 1.0 } });
        }
        _ => {
            // cell index = i + n*j, axis 0 = x, axis 1 = y
            for j in 0..n {
                for i in 0..n {
                    let c = i + n * j;
                    if i == 0 {
                        faces.push(Face { axis: 0, trans: t_bnd, conn: FaceConn::Boundary { cell: c, sign: -1.0 } });
                    }
                    if i + 1 < n {
                        faces.push(Face { axis: 0, trans: t_int, conn: FaceConn::Interior { left: c, right: c + 1 } });
                    } else {
                        faces.push(Face { axis: 0, trans: t_bnd, conn: FaceConn::Boundary { cell: c, sign: 1.0 } });
                    }
                    if j == 0 {
                        faces.push(Face { axis: 1, trans: t_bnd, conn: FaceConn::Boundary { cell: c, sign: -1.0 } });
                    }
                    if j + 1 < n {
                        faces.push(Face { axis: 1, trans: t_int, conn: FaceConn::Interior { left: c, right: c + n } });
                    } else {
                        faces.push(Face { axis: 1, trans: t_bnd, conn: FaceConn::Boundary { cell: c, sign: 1.0 } });
                    }
                }
            }
        }
    }
    Ok(Grid { dim, lo, hi, n, h, faces })
}

impl Grid {
    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// `|K| = h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Facet area `h^(dim-1)`.
    pub fn face_area(&self) -> f64 {
        self.h.powi(self.dim as i32 - 1)
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.lo + (cell as f64 + 0.5) * self.h, 0.0],
            _ => {
                let i = cell % self.n;
                let j = cell / self.n;
                [self.lo + (i as f64 + 0.5) * self.h, self.lo + (j as f64 + 0.5) * self.h]
            }
        }
    }

    pub fn zero_field(&self) -> Field {
        vec![0.0; self.cell_count()]
    }
}

/// Cell-volume-weighted l2 norm `(sum |K| f_K^2)^(1/2)`.
pub fn l2_norm(grid: &Grid, f: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), grid.cell_count());
    let vol = grid.cell_volume();
    (f.iter().map(|v| vol * v * v).sum::<f64>()).sqrt()
}

/// Discrete H1 seminorm squared: `sum over faces T_f (jump)^2`. Boundary faces
/// contribute `T_b f_K^2` only when `dirichlet_zero` is set.
pub fn h1_seminorm_sq(grid: &Grid, f: &[f64], dirichlet_zero: bool) -> f64 {
    debug_assert_eq!(f.len(), grid.cell_count());
    let mut acc = 0.0;
    for face in &grid.faces {
        match face.conn {
            FaceConn::Interior { left, right } => {
                let d = f[left] - f[right];
                acc += face.trans * d * d;
            }
            FaceConn::Boundary { cell, .. } => {
                if dirichlet_zero {
                    acc += face.trans * f[cell] * f[cell];
                }
            }
        }
    }
    acc
}
