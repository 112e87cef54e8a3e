//! Backstepping kernel solver for the reversed kernel system.
//!
//! The kernel K(z, zeta) on the triangle 0 <= zeta <= z <= 1 satisfies
//!
//! ```text
//! Lambda(z) dK/dz + d/dzeta (K Lambda(zeta)) =
//!     -K Lambda(zeta) Abar^T(zeta) + Lambda(z) Dbar^T(zeta, z)
//!     - int_zeta^z K(z, s) Lambda(s) Dbar^T(zeta, s) ds
//! ```
//!
//! with the diagonal relation `Lambda K(z,z) - K(z,z) Lambda = Lambda Abar^T(z)`
//! and the edge relation `K(z,0) Lambda(0) V = A_tilde_0(z)`,
//! `V = J_-^T - J_+^T Q_1^T`, whose top block is strictly lower triangular.
//!
//! The solver runs a successive approximation: each sweep transports every
//! kernel component along its own characteristic field from the boundary
//! portion that carries its data (the diagonal, the constrained bottom edge,
//! or an artificial zero edge), integrating the coupling terms from the
//! previous iterate. The identity `d(K_ij lambda_j(zeta))/dz = S_ij
//! lambda_j / lambda_i` along characteristics avoids differentiating the
//! tabulated velocities.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{locate_clamped, trapezoid_weight, TabulatedMatrix};
use crate::model::ReversedSystem;

/// Converged forward/inverse kernel pair with grid metadata.
#[derive(Debug, Clone)]
pub struct BacksteppingKernelPair {
    /// Grid resolution (points per axis).
    pub n: usize,
    pub n_x: usize,
    pub n_neg: usize,
    /// Forward kernel, full-square layout `[(iz * n + izeta) * nx * nx + i * nx + j]`,
    /// meaningful on `izeta <= iz`.
    pub k: Vec<f64>,
    /// Inverse kernel, same layout.
    pub k_inv: Vec<f64>,
    /// Edge product K(z,0) Lambda(0) V sampled in z (n_x x n_neg).
    pub a0_tilde: TabulatedMatrix,
    /// Coefficient of the target-system boundary coupling,
    /// `-Gamma_bar(z) K(z,0) Lambda(0) V`.
    pub target_a0: TabulatedMatrix,
    pub iterations: usize,
    pub final_increment: f64,
    pub inverse_iterations: usize,
    pub inverse_increment: f64,
}

impl BacksteppingKernelPair {
    #[inline]
    pub fn node<'a>(k: &'a [f64], n: usize, nx: usize, iz: usize, izeta: usize) -> &'a [f64] {
        let s = nx * nx;
        let off = (iz * n + izeta) * s;
        &k[off..off + s]
    }

    /// Max-norm residual of the diagonal relation on all diagonal nodes.
    pub fn diagonal_residual(&self, rev: &ReversedSystem) -> f64 {
        let nx = self.n_x;
        let mut worst = 0.0f64;
        for m in 0..self.n {
            let kd = Self::node(&self.k, self.n, nx, m, m);
            for i in 0..nx {
                for j in 0..nx {
                    let li = 1.0 / rev.gamma_rev[i].values()[m];
                    let lj = 1.0 / rev.gamma_rev[j].values()[m];
                    let aji = rev.a_rev.entry_at_node(m, j, i);
                    let r = li * kd[i * nx + j] - kd[i * nx + j] * lj - li * aji;
                    worst = worst.max(r.abs());
                }
            }
        }
        worst
    }

    /// Max-norm residual of the constrained (zero) entries of the edge
    /// relation: rows i < n_neg, columns j >= i of K(z,0) Lambda(0) V.
    pub fn edge_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for m in 0..self.n {
            for i in 0..self.n_neg {
                for j in i..self.n_neg {
                    worst = worst.max(self.a0_tilde.entry_at_node(m, i, j).abs());
                }
            }
        }
        worst
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Exit {
    Diagonal,
    Bottom,
    Right,
}

/// Flattened solver state shared by the sweeps.
struct Solver {
    n: usize,
    nx: usize,
    n_neg: usize,
    h: f64,
    /// lambda[state * n + node]
    lam: Vec<f64>,
    /// Abar entries [node * nx * nx + r * nx + c]
    abar: Vec<f64>,
    /// Dbar entries [(first * n + second) * nx * nx + r * nx + c]
    dbar: Vec<f64>,
    q1: DMatrix<f64>,
    has_d: bool,
}

impl Solver {
    #[inline]
    fn lam_at(&self, state: usize, z: f64) -> f64 {
        let (i, w) = locate_clamped(self.n, z);
        let base = state * self.n;
        self.lam[base + i] * (1.0 - w) + self.lam[base + i + 1] * w
    }

    #[inline]
    fn abar_at(&self, z: f64, r: usize, c: usize) -> f64 {
        let (i, w) = locate_clamped(self.n, z);
        let s = self.nx * self.nx;
        let k = r * self.nx + c;
        self.abar[i * s + k] * (1.0 - w) + self.abar[(i + 1) * s + k] * w
    }

    /// Triangle-aware bilinear interpolation of one kernel row i:
    /// fills `out[k] = K_ik(z, zeta)`.
    #[inline]
    fn kernel_row_at(&self, k: &[f64], z: f64, zeta: f64, i: usize, out: &mut [f64]) {
        let zeta = zeta.min(z).max(0.0);
        let (iz, wz) = locate_clamped(self.n, z);
        let (il, wl) = locate_clamped(self.n, zeta);
        let s = self.nx * self.nx;
        let node = |a: usize, b: usize| -> &[f64] {
            let b = b.min(a); // fold above-diagonal corners onto the diagonal
            &k[(a * self.n + b) * s..(a * self.n + b) * s + s]
        };
        let n00 = node(iz, il);
        let n01 = node(iz, il + 1);
        let n10 = node(iz + 1, il);
        let n11 = node(iz + 1, il + 1);
        let base = i * self.nx;
        for kk in 0..self.nx {
            let idx = base + kk;
            out[kk] = (n00[idx] * (1.0 - wl) + n01[idx] * wl) * (1.0 - wz)
                + (n10[idx] * (1.0 - wl) + n11[idx] * wl) * wz;
        }
    }

    /// Fused evaluation of the transported source
    /// `g = S_ij(z, zeta) lambda_j(zeta) / lambda_i(z)` together with the
    /// local velocities; shares one grid location per point.
    #[inline]
    fn eval_g(&self, k_prev: &[f64], c_grid: &[f64], i: usize, j: usize, z: f64, zeta: f64, row: &mut [f64]) -> (f64, f64, f64) {
        let n = self.n;
        let nx = self.nx;
        let s = nx * nx;
        let zeta_c = zeta.min(z).max(0.0);
        let (iz, wz) = locate_clamped(n, z);
        let (il, wl) = locate_clamped(n, zeta_c);

        let li = {
            let base = i * n + iz;
            self.lam[base] * (1.0 - wz) + self.lam[base + 1] * wz
        };
        let lj = {
            let base = j * n + il;
            self.lam[base] * (1.0 - wl) + self.lam[base + 1] * wl
        };

        // kernel row i, triangle-aware bilinear
        {
            let node = |a: usize, b: usize| -> &[f64] {
                let b = b.min(a);
                &k_prev[(a * n + b) * s..(a * n + b) * s + s]
            };
            let n00 = node(iz, il);
            let n01 = node(iz, il + 1);
            let n10 = node(iz + 1, il);
            let n11 = node(iz + 1, il + 1);
            let base = i * nx;
            for kk in 0..nx {
                let idx = base + kk;
                row[kk] = (n00[idx] * (1.0 - wl) + n01[idx] * wl) * (1.0 - wz)
                    + (n10[idx] * (1.0 - wl) + n11[idx] * wl) * wz;
            }
        }

        let mut acc = 0.0;
        {
            let a0 = &self.abar[il * s..(il + 1) * s];
            let a1 = &self.abar[(il + 1) * s..(il + 2) * s];
            for kk in 0..nx {
                let lam_k = {
                    let base = kk * n + il;
                    self.lam[base] * (1.0 - wl) + self.lam[base + 1] * wl
                };
                let idx = j * nx + kk;
                let a_jk = a0[idx] * (1.0 - wl) + a1[idx] * wl;
                acc -= row[kk] * lam_k * a_jk;
            }
        }
        if self.has_d {
            // lambda_i(z) * Dbar_ji(zeta, z)
            let idx = j * nx + i;
            let d00 = self.dbar[(il * n + iz) * s + idx];
            let d01 = self.dbar[(il * n + iz + 1) * s + idx];
            let d10 = self.dbar[((il + 1) * n + iz) * s + idx];
            let d11 = self.dbar[((il + 1) * n + iz + 1) * s + idx];
            acc += li * ((d00 * (1.0 - wz) + d01 * wz) * (1.0 - wl) + (d10 * (1.0 - wz) + d11 * wz) * wl);
            // accumulated convolution, triangle-aware
            let idx = i * nx + j;
            let cn = |a: usize, b: usize| -> f64 {
                let b = b.min(a);
                c_grid[(a * n + b) * s + idx]
            };
            acc -= (cn(iz, il) * (1.0 - wl) + cn(iz, il + 1) * wl) * (1.0 - wz)
                + (cn(iz + 1, il) * (1.0 - wl) + cn(iz + 1, il + 1) * wl) * wz;
        }
        (acc * lj / li, li, lj)
    }

    /// Diagonal data from the commutation relation (i != j).
    #[inline]
    fn diagonal_value(&self, i: usize, j: usize, z: f64) -> f64 {
        let li = self.lam_at(i, z);
        let lj = self.lam_at(j, z);
        li * self.abar_at(z, j, i) / (li - lj)
    }

    /// Constrained bottom data for the minus-minus block: the top block of
    /// K(z,0) Lambda(0) V has zero entries wherever the bottom edge carries
    /// the data, which couples K_ij(z,0) to the minus-plus block.
    fn bottom_value(&self, k_prev: &[f64], i: usize, j: usize, z: f64, row: &mut [f64]) -> f64 {
        if i >= self.n_neg || j >= self.n_neg {
            return 0.0;
        }
        self.kernel_row_at(k_prev, z, 0.0, i, row);
        let lam0 = |s: usize| self.lam[s * self.n];
        let mut acc = 0.0;
        for kk in 0..self.nx - self.n_neg {
            acc += row[self.n_neg + kk] * lam0(self.n_neg + kk) * self.q1[(j, kk)];
        }
        acc / lam0(j)
    }

    /// Walk from (z0, zeta0) in direction sigma along the (i, j)
    /// characteristic until a boundary is hit; returns the transported value.
    fn walk(
        &self,
        k_prev: &[f64],
        c_grid: &[f64],
        i: usize,
        j: usize,
        z0: f64,
        zeta0: f64,
        sigma: f64,
        row: &mut [f64],
    ) -> (f64, Exit) {
        let dir_z = sigma * if i < self.n_neg { 1.0 } else { -1.0 };
        let mut z = z0;
        let mut zeta = zeta0;
        let (mut g_cur, mut li, mut lj) = self.eval_g(k_prev, c_grid, i, j, z, zeta, row);
        let lj0 = lj;
        let mut acc = 0.0;
        let max_steps = 64 * self.n;
        for _ in 0..max_steps {
            let ratio = (lj / li).abs();
            let dz_mag = self.h / ratio.max(1.0);
            let z2r = z + dir_z * dz_mag;
            let zeta2r = zeta + (lj / li) * (z2r - z);

            // Earliest boundary crossing within the step.
            let mut t_hit = f64::INFINITY;
            let mut exit = None;
            if i != j {
                let g0 = z - zeta;
                let g1 = z2r - zeta2r;
                if g1 < 0.0 && g0 > 0.0 {
                    let t = g0 / (g0 - g1);
                    if t < t_hit {
                        t_hit = t;
                        exit = Some(Exit::Diagonal);
                    }
                } else if g1 < 0.0 && g0 <= 0.0 {
                    t_hit = 0.0;
                    exit = Some(Exit::Diagonal);
                }
            }
            if zeta2r < 0.0 {
                let t = if zeta > 0.0 { zeta / (zeta - zeta2r) } else { 0.0 };
                if t < t_hit {
                    t_hit = t;
                    exit = Some(Exit::Bottom);
                }
            }
            if z2r > 1.0 {
                let t = (1.0 - z) / (z2r - z);
                if t < t_hit {
                    t_hit = t;
                    exit = Some(Exit::Right);
                }
            }
            if z2r < 0.0 {
                let t = if z > 0.0 { z / (z - z2r) } else { 0.0 };
                if t < t_hit {
                    t_hit = t;
                    exit = Some(Exit::Bottom);
                }
            }

            let (t, ex) = match exit {
                Some(e) => (t_hit.clamp(0.0, 1.0), Some(e)),
                None => (1.0, None),
            };
            let mut z2 = z + (z2r - z) * t;
            let mut zeta2 = zeta + (zeta2r - zeta) * t;
            match ex {
                Some(Exit::Diagonal) => {
                    let zc = 0.5 * (z2 + zeta2).clamp(0.0, 1.0);
                    z2 = zc;
                    zeta2 = zc;
                }
                Some(Exit::Bottom) => {
                    zeta2 = 0.0;
                    z2 = z2.clamp(0.0, 1.0);
                }
                Some(Exit::Right) => {
                    z2 = 1.0;
                    zeta2 = zeta2.clamp(0.0, 1.0);
                }
                None => {
                    if i == j {
                        zeta2 = zeta2.min(z2).max(0.0);
                    }
                }
            }

            let (g_next, li2, lj2) = self.eval_g(k_prev, c_grid, i, j, z2, zeta2, row);
            acc += 0.5 * (g_cur + g_next) * (z2 - z);
            z = z2;
            zeta = zeta2;
            g_cur = g_next;
            li = li2;
            lj = lj2;

            if let Some(e) = ex {
                let data = match e {
                    Exit::Diagonal => self.diagonal_value(i, j, z),
                    Exit::Bottom => self.bottom_value(k_prev, i, j, z, row),
                    Exit::Right => 0.0,
                };
                let value = (data * lj - acc) / lj0;
                return (value, e);
            }
        }
        // The walk is bounded by the monotone z-advance; reaching this means
        // a degenerate velocity profile. Return the accumulated transport
        // against zero data; the residual check reports the defect.
        ((-acc) / lj0, Exit::Right)
    }

    fn point_value(
        &self,
        k_prev: &[f64],
        c_grid: &[f64],
        m: usize,
        l: usize,
        i: usize,
        j: usize,
        row: &mut [f64],
    ) -> f64 {
        let z = m as f64 * self.h;
        let zeta = l as f64 * self.h;
        if l == m && i != j {
            return self.diagonal_value(i, j, z);
        }
        if l == 0 && i < self.n_neg && j < self.n_neg && i <= j {
            return self.bottom_value(k_prev, i, j, z, row);
        }
        let sigma = if i < j {
            -1.0
        } else if i > j {
            1.0
        } else {
            -1.0
        };
        let (value, exit) = self.walk(k_prev, c_grid, i, j, z, zeta, sigma, row);
        if exit == Exit::Right && i < self.n_neg && j < self.n_neg && i > j {
            // Characteristics of the lower minus-minus block that run out of
            // the right edge before reaching the diagonal are fed from the
            // bottom edge instead.
            let (value, _) = self.walk(k_prev, c_grid, i, j, z, zeta, -1.0, row);
            return value;
        }
        value
    }

    /// Convolution term C_ij(z, zeta) on the grid from the previous iterate.
    fn compute_c(&self, k_prev: &[f64], c_grid: &mut [f64]) {
        if !self.has_d {
            return;
        }
        let s = self.nx * self.nx;
        let n = self.n;
        c_grid
            .par_chunks_mut(n * s)
            .enumerate()
            .for_each(|(m, row_out)| {
                // P_ik = K_ik(z_m, zeta_lb) * lambda_k(zeta_lb)
                let mut p = vec![0.0; (m + 1) * s];
                for lb in 0..=m {
                    let node = &k_prev[(m * n + lb) * s..(m * n + lb) * s + s];
                    for i in 0..self.nx {
                        for kk in 0..self.nx {
                            p[lb * s + i * self.nx + kk] = node[i * self.nx + kk] * self.lam[kk * n + lb];
                        }
                    }
                }
                for l in 0..=m {
                    let out = &mut row_out[l * s..(l + 1) * s];
                    out.fill(0.0);
                    if l == m {
                        continue;
                    }
                    for lb in l..=m {
                        let w = trapezoid_weight(m - l + 1, lb - l, self.h);
                        let dnode = &self.dbar[(l * n + lb) * s..(l * n + lb) * s + s];
                        for i in 0..self.nx {
                            for j in 0..self.nx {
                                let mut acc = 0.0;
                                for kk in 0..self.nx {
                                    acc += p[lb * s + i * self.nx + kk] * dnode[j * self.nx + kk];
                                }
                                out[i * self.nx + j] += w * acc;
                            }
                        }
                    }
                }
            });
    }

    /// One Picard sweep; returns the max-norm increment.
    fn sweep(&self, k_prev: &[f64], c_grid: &[f64], k_next: &mut [f64]) -> f64 {
        let s = self.nx * self.nx;
        let n = self.n;
        k_next
            .par_chunks_mut(n * s)
            .enumerate()
            .map(|(m, row_out)| {
                let mut worst = 0.0f64;
                let mut scratch = vec![0.0; self.nx];
                for l in 0..=m {
                    for i in 0..self.nx {
                        for j in 0..self.nx {
                            let v = self.point_value(k_prev, c_grid, m, l, i, j, &mut scratch);
                            let idx = l * s + i * self.nx + j;
                            worst = worst.max((v - k_prev[m * n * s + idx]).abs());
                            row_out[idx] = v;
                        }
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }
}

fn build_solver(rev: &ReversedSystem) -> Solver {
    let n = rev.n;
    let nx = rev.n_x;
    let mut lam = vec![0.0; nx * n];
    for i in 0..nx {
        for k in 0..n {
            lam[i * n + k] = 1.0 / rev.gamma_rev[i].values()[k];
        }
    }
    let mut abar = vec![0.0; n * nx * nx];
    for k in 0..n {
        abar[k * nx * nx..(k + 1) * nx * nx].copy_from_slice(rev.a_rev.node(k));
    }
    let mut dbar = vec![0.0; n * n * nx * nx];
    let mut has_d = false;
    for a in 0..n {
        for b in 0..n {
            let node = rev.d_rev.node(a, b);
            let off = (a * n + b) * nx * nx;
            dbar[off..off + nx * nx].copy_from_slice(node);
            if !has_d && node.iter().any(|v| *v != 0.0) {
                has_d = true;
            }
        }
    }
    Solver {
        n,
        nx,
        n_neg: rev.n_neg,
        h: 1.0 / (n - 1) as f64,
        lam,
        abar,
        dbar,
        q1: rev.q1.clone(),
        has_d,
    }
}

/// Solve the kernel equations by successive approximation.
///
/// Stops when the max-norm increment between sweeps falls below `tol`;
/// errors with the last increment if `max_iterations` is exhausted.
pub fn solve_kernel(rev: &ReversedSystem, tol: f64, max_iterations: usize) -> Result<BacksteppingKernelPair> {
    let solver = build_solver(rev);
    let n = solver.n;
    let nx = solver.nx;
    let s = nx * nx;
    let mut k_prev = vec![0.0; n * n * s];
    let mut k_next = vec![0.0; n * n * s];
    let mut c_grid = vec![0.0; n * n * s];

    let mut iterations = 0;
    let mut increment = f64::INFINITY;
    while iterations < max_iterations {
        solver.compute_c(&k_prev, &mut c_grid);
        increment = solver.sweep(&k_prev, &c_grid, &mut k_next);
        std::mem::swap(&mut k_prev, &mut k_next);
        iterations += 1;
        if increment < tol {
            break;
        }
    }
    if increment >= tol {
        return Err(Error::NoConvergence {
            iterations,
            increment,
            tolerance: tol,
        });
    }

    let (a0_tilde, target_a0) = edge_products(rev, &k_prev);
    let (k_inv, inverse_iterations, inverse_increment) = solve_inverse_kernel(&k_prev, n, nx, tol, max_iterations)?;

    Ok(BacksteppingKernelPair {
        n,
        n_x: nx,
        n_neg: rev.n_neg,
        k: k_prev,
        k_inv,
        a0_tilde,
        target_a0,
        iterations,
        final_increment: increment,
        inverse_iterations,
        inverse_increment,
    })
}

/// Fixed-point residual: max-norm change of one additional sweep applied to
/// the converged kernel (the defect of the characteristic-integrated form).
pub fn integrated_residual(rev: &ReversedSystem, pair: &BacksteppingKernelPair) -> f64 {
    let solver = build_solver(rev);
    let s = solver.nx * solver.nx;
    let mut c_grid = vec![0.0; solver.n * solver.n * s];
    let mut k_next = vec![0.0; solver.n * solver.n * s];
    solver.compute_c(&pair.k, &mut c_grid);
    solver.sweep(&pair.k, &c_grid, &mut k_next)
}

fn edge_products(rev: &ReversedSystem, k: &[f64]) -> (TabulatedMatrix, TabulatedMatrix) {
    let n = rev.n;
    let nx = rev.n_x;
    let n_neg = rev.n_neg;
    let s = nx * nx;
    let lam0: Vec<f64> = rev.gamma_rev.iter().map(|g| 1.0 / g.values()[0]).collect();
    let a0 = TabulatedMatrix::from_fn(n, nx, n_neg, |z| {
        let m = ((z * (n - 1) as f64).round() as usize).min(n - 1);
        let node = &k[(m * n) * s..(m * n) * s + s];
        DMatrix::from_fn(nx, n_neg, |i, j| {
            let mut acc = node[i * nx + j] * lam0[j];
            for kk in 0..nx - n_neg {
                acc -= node[i * nx + n_neg + kk] * lam0[n_neg + kk] * rev.q1[(j, kk)];
            }
            acc
        })
    })
    .expect("fixed dims");
    let target = TabulatedMatrix::from_fn(n, nx, n_neg, |z| {
        let m = ((z * (n - 1) as f64).round() as usize).min(n - 1);
        let gamma: Vec<f64> = rev.gamma_rev.iter().map(|g| g.values()[m]).collect();
        let mut t = a0.node_matrix(m);
        for i in 0..nx {
            for j in 0..n_neg {
                t[(i, j)] *= -gamma[i];
            }
        }
        t
    })
    .expect("fixed dims");
    (a0, target)
}

/// Solve the reciprocity relation
/// `K_I(z, zeta) = K(z, zeta) + int_zeta^z K(z, s) K_I(s, zeta) ds`
/// for the inverse kernel by successive approximation on the grid.
pub fn solve_inverse_kernel(
    k: &[f64],
    n: usize,
    nx: usize,
    tol: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let s = nx * nx;
    let h = 1.0 / (n - 1) as f64;
    let mut prev = k.to_vec();
    let mut next = vec![0.0; k.len()];
    let mut iterations = 0;
    let mut increment = f64::INFINITY;
    while iterations < max_iterations {
        next.par_chunks_mut(n * s)
            .enumerate()
            .for_each(|(m, row_out)| {
                for l in 0..=m {
                    let out = &mut row_out[l * s..(l + 1) * s];
                    out.copy_from_slice(&k[(m * n + l) * s..(m * n + l) * s + s]);
                    if l == m {
                        continue;
                    }
                    for sb in l..=m {
                        let w = trapezoid_weight(m - l + 1, sb - l, h);
                        let kn = &k[(m * n + sb) * s..(m * n + sb) * s + s];
                        let ki = &prev[(sb * n + l) * s..(sb * n + l) * s + s];
                        for i in 0..nx {
                            for j in 0..nx {
                                let mut acc = 0.0;
                                for kk in 0..nx {
                                    acc += kn[i * nx + kk] * ki[kk * nx + j];
                                }
                                out[i * nx + j] += w * acc;
                            }
                        }
                    }
                }
            });
        increment = prev
            .par_iter()
            .zip(next.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut prev, &mut next);
        iterations += 1;
        if increment < tol {
            return Ok((prev, iterations, increment));
        }
    }
    Err(Error::NoConvergence {
        iterations,
        increment,
        tolerance: tol,
    })
}

/// Profile sampled on the kernel grid: `values[node * n_x + component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub n: usize,
    pub n_x: usize,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn zeros(n: usize, n_x: usize) -> Self {
        Self {
            n,
            n_x,
            values: vec![0.0; n * n_x],
        }
    }

    pub fn from_fn(n: usize, n_x: usize, f: impl Fn(f64, usize) -> f64) -> Self {
        let h = 1.0 / (n - 1) as f64;
        let mut values = Vec::with_capacity(n * n_x);
        for m in 0..n {
            for c in 0..n_x {
                values.push(f(m as f64 * h, c));
            }
        }
        Self { n, n_x, values }
    }

    pub fn l2_norm(&self) -> f64 {
        let h = 1.0 / (self.n - 1) as f64;
        let mut acc = 0.0;
        for m in 0..self.n {
            let w = trapezoid_weight(self.n, m, h);
            for c in 0..self.n_x {
                acc += w * self.values[m * self.n_x + c].powi(2);
            }
        }
        acc.sqrt()
    }
}

fn apply_kernel(kernel: &[f64], n: usize, nx: usize, h: &Profile, sign: f64) -> Result<Profile> {
    if h.n != n || h.n_x != nx {
        return Err(Error::dimension(
            "transform profile",
            format!("{n} nodes x {nx}"),
            format!("{} nodes x {}", h.n, h.n_x),
        ));
    }
    let step = 1.0 / (n - 1) as f64;
    let s = nx * nx;
    let mut out = h.clone();
    for m in 1..n {
        for l in 0..=m {
            let w = trapezoid_weight(m + 1, l, step);
            let node = &kernel[(m * n + l) * s..(m * n + l) * s + s];
            for i in 0..nx {
                let mut acc = 0.0;
                for j in 0..nx {
                    acc += node[i * nx + j] * h.values[l * nx + j];
                }
                out.values[m * nx + i] += sign * w * acc;
            }
        }
    }
    Ok(out)
}

/// Forward transformation `T[h](z) = h(z) - int_0^z K(z, zeta) h(zeta) dzeta`.
pub fn transform(pair: &BacksteppingKernelPair, h: &Profile) -> Result<Profile> {
    apply_kernel(&pair.k, pair.n, pair.n_x, h, -1.0)
}

/// Inverse transformation `T^-1[h](z) = h(z) + int_0^z K_I(z, zeta) h(zeta) dzeta`.
pub fn inverse_transform(pair: &BacksteppingKernelPair, h: &Profile) -> Result<Profile> {
    apply_kernel(&pair.k_inv, pair.n, pair.n_x, h, 1.0)
}

/// Matrices of the target system obtained by eliminating the kernel input
/// from the lumped dynamics and applying the inverse transformation.
#[derive(Debug, Clone)]
pub struct TargetSystemData {
    pub f_tilde: DMatrix<f64>,
    pub b1_tilde: TabulatedMatrix,
    pub b2_tilde: DMatrix<f64>,
    pub b3_tilde: DMatrix<f64>,
}

/// Assemble the target-system matrices from the reversed system and the
/// converged kernel pair. The boundary read-out constant of the lumped
/// subsystem is `Q_0^T` (the kernel-system reflection at the far boundary).
pub fn target_matrices(rev: &ReversedSystem, pair: &BacksteppingKernelPair) -> Result<TargetSystemData> {
    let n_eta = rev.n_eta();
    let nx = rev.n_x;
    let n = pair.n;
    if rev.n != n {
        return Err(Error::dimension("target_matrices grids", rev.n.to_string(), n.to_string()));
    }
    let h = 1.0 / (n - 1) as f64;
    let s = nx * nx;

    let j_neg = {
        let mut m = DMatrix::zeros(rev.n_neg, nx);
        m.view_mut((0, 0), (rev.n_neg, rev.n_neg)).fill_with_identity();
        m
    };
    let j_pos = {
        let mut m = DMatrix::zeros(rev.n_pos, nx);
        m.view_mut((0, rev.n_neg), (rev.n_pos, rev.n_pos)).fill_with_identity();
        m
    };

    let f_tilde = &rev.f_bar + &rev.b4_bar * rev.l2.transpose() * rev.j_w();
    let b2_tilde = &rev.b2_bar * &j_neg;
    let edge_mix = &j_neg + rev.q0.transpose() * &j_pos;
    let b3_tilde = &rev.b3_bar * &j_pos + &rev.b4_bar * &edge_mix;

    // Suffix integrals over zeta >= z of B1_bar(zeta) K_I(zeta, z) and
    // A0_rev^T(zeta) K_I(zeta, z).
    let ki_at = |a: usize, b: usize| DMatrix::from_row_slice(nx, nx, &pair.k_inv[(a * n + b) * s..(a * n + b) * s + s]);
    let b1_tilde = TabulatedMatrix::from_fn(n, n_eta, nx, |z| {
        let l = ((z * (n - 1) as f64).round() as usize).min(n - 1);
        let mut acc = rev.b1_bar.node_matrix(l) + &rev.b4_bar * rev.a0_rev.node_matrix(l).transpose();
        if l < n - 1 {
            for a in l..n {
                let w = trapezoid_weight(n - l, a - l, h);
                let ki = ki_at(a, l);
                acc += w * (rev.b1_bar.node_matrix(a) * &ki + &rev.b4_bar * rev.a0_rev.node_matrix(a).transpose() * &ki);
            }
        }
        let ki_1 = ki_at(n - 1, l);
        acc += &rev.b3_bar * &j_pos * &ki_1 + &rev.b4_bar * &edge_mix * &ki_1;
        acc
    })?;

    Ok(TargetSystemData {
        f_tilde,
        b1_tilde,
        b2_tilde,
        b3_tilde,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::demo_4x4;
    use crate::grid::{BivariateMatrix, TabulatedMatrix};
    use crate::model::build_reversed_system;
    use approx::assert_relative_eq;

    fn demo_reversed(n: usize) -> ReversedSystem {
        let sys = demo_4x4(n);
        build_reversed_system(&sys.plant, &sys.signals, n).unwrap()
    }

    #[test]
    fn zero_couplings_give_zero_kernel() {
        let sys = demo_4x4(41);
        let mut plant = sys.plant;
        let n = 41;
        plant.a = TabulatedMatrix::zeros(n, 4, 4);
        plant.d = BivariateMatrix::zeros(n, 4, 4);
        let rev = build_reversed_system(&plant, &sys.signals, n).unwrap();
        let pair = solve_kernel(&rev, 1e-12, 10).unwrap();
        assert_eq!(pair.k.iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
        assert_eq!(pair.a0_tilde.max_abs(), 0.0);
    }

    #[test]
    fn demo_kernel_converges_with_small_residuals() {
        let rev = demo_reversed(101);
        let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
        assert!(pair.final_increment < 1e-9);
        assert!(pair.diagonal_residual(&rev) < 1e-8, "diag residual {}", pair.diagonal_residual(&rev));
        assert!(pair.edge_residual() < 1e-8, "edge residual {}", pair.edge_residual());
        let fp = integrated_residual(&rev, &pair);
        assert!(fp < 1e-8, "fixed-point residual {fp}");
        // A_tilde_0 top block strictly lower triangular: checked by edge_residual.
        // Kernel is nontrivial.
        assert!(pair.k.iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn kernel_self_convergence_under_refinement() {
        let coarse = solve_kernel(&demo_reversed(101), 1e-9, 200).unwrap();
        let fine = solve_kernel(&demo_reversed(201), 1e-9, 200).unwrap();
        // max difference at matched nodes away from discontinuity lines is O(h);
        // measure the median-type bulk error via an L2 average instead of sup.
        let nx = 4;
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for m in 0..101 {
            for l in 0..=m {
                for e in 0..nx * nx {
                    let a = coarse.k[(m * 101 + l) * 16 + e];
                    let b = fine.k[((2 * m) * 201 + 2 * l) * 16 + e];
                    acc += (a - b) * (a - b);
                    cnt += 1;
                }
            }
        }
        let rms = (acc / cnt as f64).sqrt();
        let scale = fine.k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rms < 0.05 * scale, "rms {rms} vs scale {scale}");
    }

    #[test]
    fn inverse_of_zero_kernel_is_zero() {
        let k = vec![0.0; 21 * 21 * 4];
        let (ki, _, _) = solve_inverse_kernel(&k, 21, 2, 1e-12, 50).unwrap();
        assert!(ki.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_scalar_kernel_has_exponential_inverse() {
        // K = c on a single-state grid: K_I(z, zeta) = c exp(c (z - zeta)).
        let n = 201;
        let c = 0.8;
        let mut k = vec![0.0; n * n];
        for m in 0..n {
            for l in 0..=m {
                k[m * n + l] = c;
            }
        }
        let (ki, _, _) = solve_inverse_kernel(&k, n, 1, 1e-12, 200).unwrap();
        let h = 1.0 / (n - 1) as f64;
        for (m, l) in [(200, 0), (150, 50), (40, 39), (120, 60)] {
            let z = m as f64 * h;
            let zeta = l as f64 * h;
            let expect = c * (c * (z - zeta)).exp();
            assert_relative_eq!(ki[m * n + l], expect, max_relative = 1e-4);
        }
    }

    #[test]
    fn transform_with_zero_kernel_is_identity_and_linear() {
        let rev = demo_reversed(61);
        let mut pair = solve_kernel(&rev, 1e-9, 200).unwrap();
        let h1 = Profile::from_fn(61, 4, |z, c| (z * (c + 1) as f64).sin());
        let h2 = Profile::from_fn(61, 4, |z, c| (3.0 * z + c as f64).cos());
        // linearity
        let alpha = 1.7;
        let beta = -0.4;
        let combo = Profile {
            n: 61,
            n_x: 4,
            values: h1
                .values
                .iter()
                .zip(h2.values.iter())
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        };
        let t_combo = transform(&pair, &combo).unwrap();
        let t1 = transform(&pair, &h1).unwrap();
        let t2 = transform(&pair, &h2).unwrap();
        for i in 0..t_combo.values.len() {
            assert_relative_eq!(t_combo.values[i], alpha * t1.values[i] + beta * t2.values[i], epsilon = 1e-12);
        }
        // zero kernel: identity
        pair.k.fill(0.0);
        let id = transform(&pair, &h1).unwrap();
        assert_eq!(id, h1);
        // zero profile stays zero
        let z = Profile::zeros(61, 4);
        assert_eq!(transform(&pair, &z).unwrap(), z);
    }

    #[test]
    fn transform_roundtrip_on_random_profiles() {
        let rev = demo_reversed(201);
        let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a: f64 = rng.gen_range(0.5..2.0);
            let b: f64 = rng.gen_range(0.0..6.0);
            let h = Profile::from_fn(201, 4, |z, c| (a * z * (c + 1) as f64 + b).sin() + 0.3 * z * z);
            let fwd = transform(&pair, &h).unwrap();
            let back = inverse_transform(&pair, &fwd).unwrap();
            let mut err = h.clone();
            for i in 0..err.values.len() {
                err.values[i] -= back.values[i];
            }
            assert!(err.l2_norm() / h.l2_norm() < 1e-4, "roundtrip error {}", err.l2_norm() / h.l2_norm());
        }
    }

    #[test]
    fn target_matrices_degenerate_cases() {
        let n = 61;
        let rev = demo_reversed(n);
        let pair = solve_kernel(&rev, 1e-9, 200).unwrap();

        // B4_bar = 0 and L2 = 0 leave the lumped dynamics unchanged.
        let mut rev0 = rev.clone();
        rev0.b4_bar.fill(0.0);
        rev0.l2.fill(0.0);
        let t0 = target_matrices(&rev0, &pair).unwrap();
        assert_relative_eq!((t0.f_tilde.clone() - rev0.f_bar.clone()).norm(), 0.0, epsilon = 1e-14);

        // K_I = 0 and A0_rev = 0 reduce B1_tilde to B1_bar.
        let mut pair0 = pair.clone();
        pair0.k_inv.fill(0.0);
        let mut rev1 = rev.clone();
        rev1.a0_rev = TabulatedMatrix::zeros(n, 4, 2);
        let t1 = target_matrices(&rev1, &pair0).unwrap();
        for m in 0..n {
            let d = t1.b1_tilde.node_matrix(m) - rev1.b1_bar.node_matrix(m);
            assert!(d.norm() < 1e-13);
        }
    }
}
