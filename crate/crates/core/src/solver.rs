//! Dirichlet problems for the nearest-neighbour graph Laplacian on the torus
//! and on absorbing boxes of `Z^d`.
//!
//! With the values on a fixed set eliminated, the reduced operator
//! `(L0 f)(x) = 2d f(x) - Σ_{y~x} f(y)` is symmetric positive definite as soon
//! as one node is pinned (torus) or the box boundary absorbs (box). Small
//! systems are factored densely (Cholesky, reused across right-hand sides);
//! larger ones go through Jacobi-preconditioned conjugate gradients.

use crate::error::{invalid, Result, TrapError};
use crate::lattice::TorusSpec;

/// Systems with at most this many free nodes are solved by dense Cholesky.
pub const DENSE_LIMIT: usize = 512;

/// Target relative residual `|r| / |b|` of the iterative solver.
pub const CG_TOLERANCE: f64 = 1e-12;

/// A hypercubic grid: either the periodic torus or the box
/// `{-l..l}^d` whose outer neighbours are absorbing (value 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    d: usize,
    side: usize,
    periodic: bool,
}

impl Grid {
    pub fn torus(spec: &TorusSpec) -> Self {
        Self { d: spec.dim(), side: spec.side(), periodic: true }
    }

    /// The box `{-l, ..., l}^d`, side `2l + 1`, with centre at flat index
    /// `len / 2`.
    pub fn absorbing_box(d: usize, l: usize) -> Result<Self> {
        if d == 0 || d > crate::lattice::MAX_DIM {
            return Err(TrapError::DimensionOutOfRange(d));
        }
        if l == 0 {
            return invalid("box half-width must be >= 1");
        }
        Ok(Self { d, side: 2 * l + 1, periodic: false })
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn degree(&self) -> usize {
        2 * self.d
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn center(&self) -> usize {
        self.len() / 2
    }

    /// Calls `visit(y)` for every in-grid neighbour of every site `x`, as
    /// `visit(x, y)`. Absorbed exits are skipped.
    #[inline]
    fn for_each_edge(&self, mut visit: impl FnMut(usize, usize)) {
        let n = self.side;
        let mut strides = [0usize; 3];
        for (axis, s) in strides.iter_mut().enumerate().take(self.d) {
            *s = n.pow((self.d - 1 - axis) as u32);
        }
        let mut coords = [0usize; 3];
        for x in 0..self.len() {
            for axis in 0..self.d {
                let c = coords[axis];
                let s = strides[axis];
                if c + 1 < n {
                    visit(x, x + s);
                } else if self.periodic {
                    visit(x, x - (n - 1) * s);
                }
                if c > 0 {
                    visit(x, x - s);
                } else if self.periodic {
                    visit(x, x + (n - 1) * s);
                }
            }
            // increment row-major coordinates
            for axis in (0..self.d).rev() {
                coords[axis] += 1;
                if coords[axis] < n {
                    break;
                }
                coords[axis] = 0;
            }
        }
    }

    /// Neighbours of `x` (in-grid only).
    pub fn neighbors(&self, x: usize) -> Vec<usize> {
        let n = self.side;
        let mut out = Vec::with_capacity(self.degree());
        let mut rest = x;
        let mut coords = [0usize; 3];
        for axis in (0..self.d).rev() {
            coords[axis] = rest % n;
            rest /= n;
        }
        for axis in 0..self.d {
            let s = n.pow((self.d - 1 - axis) as u32);
            let c = coords[axis];
            if c + 1 < n {
                out.push(x + s);
            } else if self.periodic {
                out.push(x - (n - 1) * s);
            }
            if c > 0 {
                out.push(x - s);
            } else if self.periodic {
                out.push(x + (n - 1) * s);
            }
        }
        out
    }

    /// `out = L0 p` on free nodes, zero on fixed nodes. Fixed entries of `p`
    /// must be zero.
    fn apply_reduced(&self, p: &[f64], free: &[bool], out: &mut [f64]) {
        let deg = self.degree() as f64;
        for (o, (&pi, &fr)) in out.iter_mut().zip(p.iter().zip(free)) {
            *o = if fr { deg * pi } else { 0.0 };
        }
        self.for_each_edge(|x, y| {
            if free[x] {
                out[x] -= p[y];
            }
        });
    }

    /// `(L0 f)(x)` at every site.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let deg = self.degree() as f64;
        let mut out: Vec<f64> = f.iter().map(|v| deg * v).collect();
        self.for_each_edge(|x, y| out[x] -= f[y]);
        out
    }

    /// `Σ_x Σ_{y~x} (f(y) - f(x))^2` over ordered in-grid pairs.
    pub fn edge_energy(&self, f: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each_edge(|x, y| {
            let g = f[y] - f[x];
            s += g * g;
        });
        s
    }
}

/// Diagnostics of one solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub dense: bool,
}

/// A Dirichlet solver for a fixed set of pinned nodes, reusable across
/// boundary data and sources.
pub struct DirichletSolver {
    grid: Grid,
    free: Vec<bool>,
    dense: Option<DenseCholesky>,
}

impl DirichletSolver {
    /// `fixed[x]` marks pinned nodes. On the torus at least one node must be
    /// pinned.
    pub fn new(grid: Grid, fixed: &[bool]) -> Result<Self> {
        if fixed.len() != grid.len() {
            return invalid(format!("mask has {} entries, grid has {}", fixed.len(), grid.len()));
        }
        if grid.periodic && !fixed.iter().any(|&f| f) {
            return invalid("torus Dirichlet problem needs at least one pinned node");
        }
        let free: Vec<bool> = fixed.iter().map(|f| !f).collect();
        let n_free = free.iter().filter(|&&f| f).count();
        let dense = if n_free > 0 && n_free <= DENSE_LIMIT {
            Some(DenseCholesky::assemble(&grid, &free)?)
        } else {
            None
        };
        Ok(Self { grid, free, dense })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solves `L0 f = source` on free nodes with `f = boundary` on pinned
    /// nodes. `boundary` is read only on pinned nodes and `source` only on
    /// free nodes. Returns the full solution vector.
    pub fn solve(&self, boundary: &[f64], source: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.grid.len();
        if boundary.len() != n || source.len() != n {
            return invalid("boundary/source length does not match the grid");
        }
        // Right-hand side: source plus pinned neighbour values.
        let mut b: Vec<f64> = (0..n).map(|x| if self.free[x] { source[x] } else { 0.0 }).collect();
        let free = &self.free;
        self.grid.for_each_edge(|x, y| {
            if free[x] && !free[y] {
                b[x] += boundary[y];
            }
        });
        let mut f: Vec<f64> = (0..n).map(|x| if free[x] { 0.0 } else { boundary[x] }).collect();
        let report = if let Some(chol) = &self.dense {
            let sol = chol.solve(&b);
            for (k, &x) in chol.index.iter().enumerate() {
                f[x] = sol[k];
            }
            let res = self.relative_residual(&f, &b);
            SolveReport { iterations: 0, relative_residual: res, dense: true }
        } else {
            let (u, iters, res) = self.conjugate_gradient(&b)?;
            for x in 0..n {
                if free[x] {
                    f[x] = u[x];
                }
            }
            SolveReport { iterations: iters, relative_residual: res, dense: false }
        };
        Ok((f, report))
    }

    fn relative_residual(&self, f: &[f64], b: &[f64]) -> f64 {
        let mut u = f.to_vec();
        for (ui, &fr) in u.iter_mut().zip(&self.free) {
            if !fr {
                *ui = 0.0;
            }
        }
        let mut au = vec![0.0; u.len()];
        self.grid.apply_reduced(&u, &self.free, &mut au);
        let bn = norm(b);
        let rn: f64 = au.iter().zip(b).map(|(a, bb)| (a - bb) * (a - bb)).sum::<f64>().sqrt();
        if bn == 0.0 {
            rn
        } else {
            rn / bn
        }
    }

    fn conjugate_gradient(&self, b: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let n = b.len();
        let bn = norm(b);
        let mut x = vec![0.0; n];
        if bn == 0.0 {
            return Ok((x, 0, 0.0));
        }
        let inv_diag = 1.0 / self.grid.degree() as f64;
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 50 * n.max(100);
        for it in 1..=max_iter {
            self.grid.apply_reduced(&p, &self.free, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rel = norm(&r) / bn;
            if rel <= CG_TOLERANCE {
                return Ok((x, it, rel));
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag;
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(TrapError::SolverDiverged { iterations: max_iter, residual: norm(&r) / bn })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense Cholesky factor of the reduced Laplacian.
struct DenseCholesky {
    index: Vec<usize>,
    /// Lower-triangular factor, row-major `m x m`.
    l: Vec<f64>,
}

impl DenseCholesky {
    fn assemble(grid: &Grid, free: &[bool]) -> Result<Self> {
        let index: Vec<usize> = (0..grid.len()).filter(|&x| free[x]).collect();
        let m = index.len();
        let mut pos = vec![usize::MAX; grid.len()];
        for (k, &x) in index.iter().enumerate() {
            pos[x] = k;
        }
        let mut a = vec![0.0; m * m];
        for k in 0..m {
            a[k * m + k] = grid.degree() as f64;
        }
        grid.for_each_edge(|x, y| {
            if free[x] && free[y] {
                a[pos[x] * m + pos[y]] -= 1.0;
            }
        });
        // In-place Cholesky.
        for j in 0..m {
            let mut diag = a[j * m + j];
            for k in 0..j {
                diag -= a[j * m + k] * a[j * m + k];
            }
            if diag <= 0.0 {
                return invalid("reduced Laplacian is not positive definite");
            }
            let djj = diag.sqrt();
            a[j * m + j] = djj;
            for i in j + 1..m {
                let mut s = a[i * m + j];
                for k in 0..j {
                    s -= a[i * m + k] * a[j * m + k];
                }
                a[i * m + j] = s / djj;
            }
        }
        Ok(Self { index, l: a })
    }

    fn solve(&self, b_full: &[f64]) -> Vec<f64> {
        let m = self.index.len();
        let mut y: Vec<f64> = self.index.iter().map(|&x| b_full[x]).collect();
        for i in 0..m {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * m + k] * y[k];
            }
            y[i] = s / self.l[i * m + i];
        }
        for i in (0..m).rev() {
            let mut s = y[i];
            for k in i + 1..m {
                s -= self.l[k * m + i] * y[k];
            }
            y[i] = s / self.l[i * m + i];
        }
        y
    }
}

/// Solves a small dense system `A x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n * n {
        return invalid("dense_solve: matrix and vector sizes differ");
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[piv * n + col].abs() < 1e-300 {
            return invalid("dense_solve: singular matrix");
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for i in col + 1..n {
            let factor = a[i * n + col] / a[col * n + col];
            if factor != 0.0 {
                for k in col..n {
                    a[i * n + k] -= factor * a[col * n + k];
                }
                b[i] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i * n + k] * x[k];
        }
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_of_four_is_linear_between_pins() {
        let spec = TorusSpec::new(1, 4).unwrap();
        let grid = Grid::torus(&spec);
        let fixed = [true, false, true, false];
        let s = DirichletSolver::new(grid, &fixed).unwrap();
        let (f, rep) = s.solve(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap();
        assert!(rep.dense);
        assert!((f[1] - 0.5).abs() < 1e-14 && (f[3] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dense_and_iterative_agree() {
        let spec = TorusSpec::new(2, 24).unwrap(); // 576 sites > DENSE_LIMIT
        let grid = Grid::torus(&spec);
        let mut fixed = vec![false; grid.len()];
        fixed[0] = true;
        fixed[300] = true;
        let mut bnd = vec![0.0; grid.len()];
        bnd[0] = 1.0;
        let it = DirichletSolver::new(grid, &fixed).unwrap();
        let (f_it, rep) = it.solve(&bnd, &vec![0.0; grid.len()]).unwrap();
        assert!(!rep.dense && rep.relative_residual <= CG_TOLERANCE);

        let small = TorusSpec::new(2, 12).unwrap();
        let g2 = Grid::torus(&small);
        let mut fx = vec![false; g2.len()];
        fx[0] = true;
        fx[78] = true;
        let mut bd = vec![0.0; g2.len()];
        bd[0] = 1.0;
        let dense = DirichletSolver::new(g2, &fx).unwrap();
        let (fd, _) = dense.solve(&bd, &vec![0.0; g2.len()]).unwrap();
        // Harmonic: Laplacian vanishes off the pins in both cases.
        for (g, f, pins) in [(grid, &f_it, &fixed), (g2, &fd, &fx)] {
            let lf = g.laplacian(f);
            for x in 0..g.len() {
                if !pins[x] {
                    assert!(lf[x].abs() < 1e-9, "residual {} at {x}", lf[x]);
                }
            }
        }
    }

    #[test]
    fn three_by_three_box_green() {
        // Visits to the centre of {-1,0,1}^2 before exit: g0 = 1 + g1,
        // g1 = g0/4 + g2/2, g2 = g1/2  =>  g0 = 3/2.
        let grid = Grid::absorbing_box(2, 1).unwrap();
        let s = DirichletSolver::new(grid, &vec![false; 9]).unwrap();
        let mut src = vec![0.0; 9];
        src[grid.center()] = 4.0; // (I - P) g = e0  <=>  L0 g = 2d e0
        let (g, _) = s.solve(&[0.0; 9], &src).unwrap();
        assert!((g[grid.center()] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn dense_solve_small_system() {
        let x = dense_solve(vec![0.0, 2.0, 1.0, 1.0], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert!(dense_solve(vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn torus_needs_a_pin() {
        let spec = TorusSpec::new(1, 5).unwrap();
        assert!(DirichletSolver::new(Grid::torus(&spec), &[false; 5]).is_err());
    }
}
