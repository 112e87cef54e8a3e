//! Finite-time transition planning for the fault-diagnosis kernel
//! equations, and assembly of the diagnosis kernels.
//!
//! The target system is a transport cascade driven by the boundary trace of
//! the negative-direction kernel states. All kernel quantities are expressed
//! through the shift-and-integrate operator
//!
//! ```text
//! Psi[h]_r(z, tau) = e_r^T V h(tau + theta_r(z, 0))
//!                  + int_0^z e_r^T A0~(zeta) h(tau + theta_r(z, zeta)) dzeta
//! ```
//!
//! applied to a parametrizing trajectory. The trajectory is planned in three
//! phases: a free response fixed by the initial kernel state, a
//! Gramian-based minimum-energy steering phase, and an identically zero tail
//! that enforces the end conditions exactly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use twofloat::TwoFloat;

use crate::backstepping::{BacksteppingKernelPair, TargetSystemData};
use crate::dd::{dd_exp, lu_solve, DdMatrix};
use crate::error::{Error, Result};
use crate::grid::{trapezoid_weight, TabulatedMatrix};
use crate::linalg;
use crate::model::{PlantModel, ReversedSystem, TransportGeometry};

/// Uniform output time grid.
#[derive(Debug, Clone, Copy)]
pub struct TauGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TauGrid {
    pub fn at(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }
}

/// One uniformly sampled segment of a piecewise trajectory.
#[derive(Debug, Clone)]
struct Phase {
    t_lo: f64,
    t_hi: f64,
    dt: f64,
    /// `values[k * dim + c]`
    values: Vec<f64>,
    /// This phase owns its right boundary instant.
    closed_right: bool,
}

/// Piecewise-uniform vector trajectory; sample values may jump at phase
/// boundaries. A phase flagged `closed_right` owns its right boundary
/// instant (the planned trace is zero at both jump instants, matching the
/// end conditions of the kernel equations exactly).
#[derive(Debug, Clone)]
pub struct PhaseTrajectory {
    dim: usize,
    phases: Vec<Phase>,
}

impl PhaseTrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> (f64, f64) {
        (self.phases[0].t_lo, self.phases.last().unwrap().t_hi)
    }

    fn phase_samples(&self, idx: usize) -> usize {
        self.phases[idx].values.len() / self.dim
    }

    /// Evaluate components `[offset, offset + out.len())` at time `t`.
    pub fn eval_into(&self, t: f64, offset: usize, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.support();
        let eps = 1e-9 * (1.0 + hi - lo);
        if t < lo - eps || t > hi + eps {
            return Err(Error::TimeOutOfSupport { time: t, lo, hi });
        }
        let mut pi = 0;
        while pi + 1 < self.phases.len()
            && (t > self.phases[pi].t_hi || (!self.phases[pi].closed_right && t >= self.phases[pi].t_hi))
        {
            pi += 1;
        }
        let p = &self.phases[pi];
        let n = self.phase_samples(pi);
        let x = ((t - p.t_lo) / p.dt).clamp(0.0, (n - 1) as f64);
        let mut i = x.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let w = x - i as f64;
        let a = &p.values[i * self.dim..(i + 1) * self.dim];
        let b = &p.values[(i + 1) * self.dim..(i + 2) * self.dim];
        for (k, o) in out.iter_mut().enumerate() {
            let c = offset + k;
            *o = a[c] * (1.0 - w) + b[c] * w;
        }
        Ok(())
    }

    /// Accumulate `out[k] += sum_c coef[c] h_{offset+c}(grid.t0 + k dt + shift)`
    /// for the whole grid, splitting the gather into per-phase runs.
    pub fn gather_combination(
        &self,
        shift: f64,
        grid: &TauGrid,
        offset: usize,
        coef: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(out.len(), grid.len);
        let (lo, hi) = self.support();
        let eps = 1e-9 * (1.0 + hi - lo);
        let t_first = grid.t0 + shift;
        let t_last = t_first + (grid.len - 1) as f64 * grid.dt;
        if t_first < lo - eps || t_last > hi + eps {
            return Err(Error::TimeOutOfSupport {
                time: if t_first < lo - eps { t_first } else { t_last },
                lo,
                hi,
            });
        }
        let dim = self.dim;
        let nc = coef.len();
        let mut k = 0usize;
        while k < grid.len {
            let t = t_first + k as f64 * grid.dt;
            let mut pi = 0;
            while pi + 1 < self.phases.len()
                && (t > self.phases[pi].t_hi || (!self.phases[pi].closed_right && t >= self.phases[pi].t_hi))
            {
                pi += 1;
            }
            let p = &self.phases[pi];
            let n = self.phase_samples(pi);
            // Samples belonging to this phase (right-closed phases keep the
            // boundary instant).
            let k_end = if pi + 1 == self.phases.len() {
                grid.len
            } else {
                let span = (p.t_hi - t_first) / grid.dt;
                let cut = if p.closed_right { span.floor() as usize + 1 } else { span.ceil() as usize };
                cut.clamp(k + 1, grid.len)
            };
            let mut x = (t - p.t_lo) / p.dt;
            let dx = grid.dt / p.dt;
            for o in out.iter_mut().take(k_end).skip(k) {
                let xc = x.clamp(0.0, (n - 1) as f64);
                let mut i = xc as usize;
                if i >= n - 1 {
                    i = n - 2;
                }
                let w = xc - i as f64;
                let a = &p.values[i * dim + offset..i * dim + offset + nc];
                let b = &p.values[(i + 1) * dim + offset..(i + 1) * dim + offset + nc];
                let mut acc = 0.0;
                for c in 0..nc {
                    acc += coef[c] * (a[c] * (1.0 - w) + b[c] * w);
                }
                *o += acc;
                x += dx;
            }
            k = k_end;
        }
        Ok(())
    }
}

/// Apply the shift-and-integrate operator at a single point.
///
/// `a0_target` is the target-system boundary coupling coefficient sampled on
/// the kernel grid; `q1` enters through `V = J_-^T - J_+^T Q_1^T`.
pub fn psi_apply(
    geo: &TransportGeometry,
    a0_target: &TabulatedMatrix,
    q1: &DMatrix<f64>,
    h: &PhaseTrajectory,
    z: f64,
    tau: f64,
) -> Result<DVector<f64>> {
    let n_x = a0_target.rows();
    let n_neg = a0_target.cols();
    let n_pos = n_x - n_neg;
    let mut v = DMatrix::zeros(n_x, n_neg);
    v.view_mut((0, 0), (n_neg, n_neg)).fill_with_identity();
    v.view_mut((n_neg, 0), (n_pos, n_neg)).copy_from(&(-q1.transpose()));

    let n = a0_target.len();
    let h_step = 1.0 / (n - 1) as f64;
    let mut out = DVector::zeros(n_x);
    let mut sample = vec![0.0; n_neg];
    for r in 0..n_x {
        let shift0 = geo.theta(r, z, 0.0)?;
        h.eval_into(tau + shift0, 0, &mut sample)?;
        let mut acc = 0.0;
        for c in 0..n_neg {
            acc += v[(r, c)] * sample[c];
        }
        // Trapezoid over the nodes below z plus a partial end cell.
        let m_end = ((z / h_step).floor() as usize).min(n - 1);
        if m_end > 0 {
            for l in 0..=m_end {
                let zeta = l as f64 * h_step;
                let w = trapezoid_weight(m_end + 1, l, h_step);
                let shift = geo.theta(r, z, zeta)?;
                h.eval_into(tau + shift, 0, &mut sample)?;
                for c in 0..n_neg {
                    acc += w * a0_target.entry_at_node(l, r, c) * sample[c];
                }
            }
        }
        let z_snap = m_end as f64 * h_step;
        let frac = z - z_snap;
        if frac > 1e-14 {
            h.eval_into(tau, 0, &mut sample)?;
            let a_here = a0_target.eval(z)?;
            for c in 0..n_neg {
                acc += 0.5 * frac * a_here[(r, c)] * sample[c];
            }
            let shift = geo.theta(r, z, z_snap)?;
            h.eval_into(tau + shift, 0, &mut sample)?;
            for c in 0..n_neg {
                acc += 0.5 * frac * a0_target.entry_at_node(m_end, r, c) * sample[c];
            }
        }
        out[r] = acc;
    }
    Ok(out)
}

/// Planning outputs for one fault channel.
#[derive(Debug, Clone)]
pub struct PlannedFault {
    /// Parametrizing state trajectory on [-tau-, T + tau+].
    pub xi: PhaseTrajectory,
    /// Boundary trace of the target kernel (zero, steering input, zero).
    pub trace: PhaseTrajectory,
    pub xi0: DVector<f64>,
    /// Mismatch between the steered phase start and the free-response end.
    pub junction_mismatch: f64,
    /// Norm of the stored trajectory at the steering end (exact zero by
    /// construction of the suffix form).
    pub terminal_residual: f64,
}

/// Identifiability diagnostics per fault.
#[derive(Debug, Clone)]
pub struct IdentifiabilityResult {
    pub fault: usize,
    pub identifiable: bool,
    pub rank_w0: usize,
    pub rank_augmented: usize,
}

/// Rank test of `W0 xi0 = eta0` solvability for each initial kernel state.
pub fn identifiability_check(w0: &DMatrix<f64>, eta0: &[DVector<f64>]) -> Vec<IdentifiabilityResult> {
    let rank_w0 = linalg::rank(w0);
    eta0.iter()
        .enumerate()
        .map(|(i, e)| {
            let mut aug = DMatrix::zeros(w0.nrows(), w0.ncols() + 1);
            aug.view_mut((0, 0), w0.shape()).copy_from(w0);
            aug.view_mut((0, w0.ncols()), (w0.nrows(), 1)).copy_from(e);
            let rank_augmented = linalg::rank(&aug);
            IdentifiabilityResult {
                fault: i,
                identifiable: rank_augmented == rank_w0,
                rank_w0,
                rank_augmented,
            }
        })
        .collect()
}

/// Minimum-energy steering of `xi' = A xi + B chi` from `xi_plus` at the
/// phase start to zero at the phase end, evaluated on a uniform grid.
///
/// The Gramian `W = int Phi(t0, s) B B^T Phi^T(t0, s) ds`, its linear solve
/// and the suffix integrals run in double-double arithmetic; the returned
/// trajectory is the suffix form `xi(s) = Phi(s, t0) S(s) c`, which satisfies
/// the ODE identically and ends at exactly zero.
pub struct SteeredPhase {
    /// `xi[k * n + i]` on the steering grid.
    pub xi: Vec<f64>,
    /// `chi[k * m + j]` on the steering grid.
    pub chi: Vec<f64>,
    pub len: usize,
    pub dt: f64,
    /// f64 mirror of the Gramian for diagnostics.
    pub gramian: DMatrix<f64>,
    pub junction_mismatch: f64,
}

pub fn steer_to_zero(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    xi_plus: &DVector<f64>,
    length: f64,
    steps: usize,
) -> Result<SteeredPhase> {
    let n = a.nrows();
    let m = b.ncols();
    let dt = length / steps as f64;
    let len = steps + 1;

    // The minimum-energy input is evaluated through the end-anchored
    // Gramian: with Y(s) = Phi(t_f, s) B the input is
    // chi(s) = -Y(s)^T d, W_r d = Phi(t_f, t_0) xi_plus,
    // which is the same function as the start-anchored Gramian formula
    // (the two solves are related by the congruence with Phi(t_f, t_0)).
    // End anchoring keeps the Gramian scale polynomial where the
    // start-anchored one blows up exponentially with the fast stable modes.
    let a_dd = dd_from_matrix(a);
    let e_fwd = dd_exp(&a_dd.scale(TwoFloat::from(dt)));
    let e_back = dd_exp(&a_dd.scale(TwoFloat::from(-dt)));
    let b_dd = dd_from_matrix(b);

    // ys[k] = Phi(t_f, t_k) B by backward recursion from the final node.
    let mut ys: Vec<DdMatrix> = vec![DdMatrix::zeros(n, m); len];
    ys[len - 1] = b_dd.clone();
    for k in (0..len - 1).rev() {
        ys[k] = e_fwd.mul(&ys[k + 1]);
    }
    let mut w = DdMatrix::zeros(n, n);
    for (k, y) in ys.iter().enumerate() {
        let wk = TwoFloat::from(if k == 0 || k + 1 == len { 0.5 * dt } else { dt });
        w.add_weighted_outer(wk, y);
    }

    // xi_f = Phi(t_f, t_0) xi_plus.
    let mut xi_f = DdMatrix::from_f64(n, 1, xi_plus.as_slice());
    for _ in 0..steps {
        xi_f = e_fwd.mul(&xi_f);
    }
    let d = lu_solve(&w, &xi_f).map_err(|p| Error::SingularGramian { pivot: p })?;

    // chi_k = -Y_k^T d; the recursion below consumes B chi_k in
    // double-double so the final node telescopes against the Gramian solve.
    let mut chi = vec![0.0; len * m];
    let mut bchi: Vec<DdMatrix> = Vec::with_capacity(len);
    for (k, y) in ys.iter().enumerate() {
        let mut v = DdMatrix::zeros(n, 1);
        for j in 0..m {
            let mut acc = TwoFloat::from(0.0);
            for i in 0..n {
                acc = acc + y.at(i, j) * d.at(i, 0);
            }
            chi[k * m + j] = -f64::from(acc);
            for i in 0..n {
                let add = b_dd.at(i, j) * acc;
                if add != TwoFloat::from(0.0) {
                    let w = v.at(i, 0) - add;
                    v.set(i, 0, w);
                }
            }
        }
        bchi.push(v);
    }

    // Forward Duhamel recursion with per-step trapezoid input quadrature:
    // the accumulated input integral then telescopes to exactly
    // Phi(t_f, t_0) xi_plus - W_r d at the final node, i.e. the linear-solve
    // residual (~1e-20), and the recursion stays forward-stable for any
    // interval length.
    let mut xi = vec![0.0; len * n];
    let mut state = DdMatrix::from_f64(n, 1, xi_plus.as_slice());
    for i in 0..n {
        xi[i] = xi_plus[i];
    }
    let half = TwoFloat::from(0.5 * dt);
    for k in 1..len {
        // state = E_f (state + half * B chi_{k-1}) + half * B chi_k
        let mut prev = state.clone();
        for i in 0..n {
            let v = prev.at(i, 0) + half * bchi[k - 1].at(i, 0);
            prev.set(i, 0, v);
        }
        let mut next = e_fwd.mul(&prev);
        for i in 0..n {
            let v = next.at(i, 0) + half * bchi[k].at(i, 0);
            next.set(i, 0, v);
            xi[k * n + i] = f64::from(v);
        }
        state = next;
    }
    let _ = e_back;
    let junction = 0.0;

    let gram = DMatrix::from_fn(n, n, |i, j| f64::from(w.at(i, j)));
    Ok(SteeredPhase {
        xi,
        chi,
        len,
        dt,
        gramian: gram,
        junction_mismatch: junction,
    })
}

fn dd_from_matrix(m: &DMatrix<f64>) -> DdMatrix {
    let mut out = DdMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, TwoFloat::from(m[(i, j)]));
        }
    }
    out
}

/// Shared planning context: parametrization data, the initial-state map and
/// the identifiability diagnostics.
pub struct Planner<'a> {
    pub rev: &'a ReversedSystem,
    pub geo: &'a TransportGeometry,
    pub pair: &'a BacksteppingKernelPair,
    pub target: &'a TargetSystemData,
    pub t: f64,
    pub tau_step: f64,
    pub mu: Vec<f64>,
    pub f_adj: Vec<DMatrix<f64>>,
    pub a_phi: DMatrix<f64>,
    pub b_phi: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub identifiability: Vec<IdentifiabilityResult>,
    /// Free-response flow columns on the first phase, dimension n_xi^2,
    /// component (row r, column c) stored at `c * n_xi + r`.
    free_flow: PhaseTrajectory,
    /// F_adj[j] * B1~(node), F_adj[j] * B2~, F_adj[j] * B3~ contractions.
    cb1: Vec<TabulatedMatrix>,
    cb2: Vec<DMatrix<f64>>,
    cb3: Vec<DMatrix<f64>>,
    theta0: Vec<Vec<f64>>,
    v: DMatrix<f64>,
    n_xi: usize,
    phase1_steps: usize,
    phase2_steps: usize,
    phase3_steps: usize,
}

impl<'a> Planner<'a> {
    pub fn new(
        rev: &'a ReversedSystem,
        geo: &'a TransportGeometry,
        pair: &'a BacksteppingKernelPair,
        target: &'a TargetSystemData,
        t: f64,
        tau_step: f64,
    ) -> Result<Self> {
        if t <= geo.t0 {
            return Err(Error::WindowTooShort { t, t0: geo.t0 });
        }
        let n_eta = rev.n_eta();
        let n_neg = rev.n_neg;
        let n_xi = n_eta * n_neg;

        let (mu, f_adj) = linalg::char_poly_and_adjugate(&target.f_tilde);

        // Companion form of the characteristic polynomial, blown up by the
        // Kronecker product with the identity on the trace dimension.
        let mut a_c = DMatrix::zeros(n_eta, n_eta);
        for i in 0..n_eta - 1 {
            a_c[(i, i + 1)] = 1.0;
        }
        for j in 0..n_eta {
            a_c[(n_eta - 1, j)] = -mu[j];
        }
        let eye = DMatrix::<f64>::identity(n_neg, n_neg);
        let a_phi = linalg::kron(&a_c, &eye);
        let mut e_last = DMatrix::zeros(n_eta, 1);
        e_last[(n_eta - 1, 0)] = 1.0;
        let b_phi = linalg::kron(&e_last, &eye);

        // Free-response flow Phi(tau, -tau-) sampled on [-tau-, tau+].
        let t0_span = geo.t0;
        let phase1_steps = (t0_span / tau_step).ceil().max(8.0) as usize;
        let dt1 = t0_span / phase1_steps as f64;
        let e1 = (&a_phi * dt1).exp();
        let mut flow = DMatrix::<f64>::identity(n_xi, n_xi);
        let mut values = Vec::with_capacity((phase1_steps + 1) * n_xi * n_xi);
        for k in 0..=phase1_steps {
            for r in 0..n_xi {
                for c in 0..n_xi {
                    values.push(flow[(r, c)]);
                }
            }
            let _ = k;
            flow = &e1 * flow;
        }
        // reorder to component (r, c) at c * n_xi + r
        let mut reordered = vec![0.0; values.len()];
        for k in 0..=phase1_steps {
            for r in 0..n_xi {
                for c in 0..n_xi {
                    reordered[k * n_xi * n_xi + c * n_xi + r] = values[k * n_xi * n_xi + r * n_xi + c];
                }
            }
        }
        let free_flow = PhaseTrajectory {
            dim: n_xi * n_xi,
            phases: vec![Phase {
                t_lo: -geo.tau_minus,
                t_hi: geo.tau_plus,
                dt: dt1,
                values: reordered,
                closed_right: true,
            }],
        };

        // Contractions of the adjugate expansion with the target inputs.
        let n = pair.n;
        let mut cb1 = Vec::with_capacity(n_eta);
        let mut cb2 = Vec::with_capacity(n_eta);
        let mut cb3 = Vec::with_capacity(n_eta);
        for fj in f_adj.iter() {
            cb1.push(TabulatedMatrix::from_fn(n, n_eta, rev.n_x, |z| {
                let l = ((z * (n - 1) as f64).round() as usize).min(n - 1);
                fj * target.b1_tilde.node_matrix(l)
            })?);
            cb2.push(fj * &target.b2_tilde);
            cb3.push(fj * &target.b3_tilde);
        }

        let h = 1.0 / (n - 1) as f64;
        let mut theta0 = Vec::with_capacity(rev.n_x);
        for r in 0..rev.n_x {
            let mut col = Vec::with_capacity(n);
            for m in 0..n {
                col.push(geo.antiderivative(r, m as f64 * h)?);
            }
            theta0.push(col);
        }

        let v = rev.v_matrix();

        let mut planner = Planner {
            rev,
            geo,
            pair,
            target,
            t,
            tau_step,
            mu,
            f_adj,
            a_phi,
            b_phi,
            w0: DMatrix::zeros(n_eta, n_xi),
            identifiability: Vec::new(),
            free_flow,
            cb1,
            cb2,
            cb3,
            theta0,
            v,
            n_xi,
            phase1_steps,
            phase2_steps: ((t - geo.t0) / tau_step).ceil().max(8.0) as usize,
            phase3_steps: phase1_steps,
        };
        planner.w0 = planner.build_w0()?;
        planner.identifiability = identifiability_check(&planner.w0, &rev.eta0);
        Ok(planner)
    }

    /// eta(tau) = sum_j F_adj[j] ( int B1~ Psi[U_j h] + B2~ Psi[U_j h](0)
    /// + B3~ Psi[U_j h](1) ) for a trajectory h of dimension n_xi stored in
    /// `traj` starting at component `offset_scale` blocks; evaluated on a
    /// tau grid. `col_stride` distinguishes vector (1 column) from flow
    /// (n_xi columns) arguments.
    fn eta_from_trajectory(&self, traj: &PhaseTrajectory, cols: usize, grid: &TauGrid) -> Result<Vec<DMatrix<f64>>> {
        let n_eta = self.rev.n_eta();
        let n_neg = self.rev.n_neg;
        let n_x = self.rev.n_x;
        let n = self.pair.n;
        let h = 1.0 / (n - 1) as f64;
        let n_xi = self.n_xi;

        // out[k] is n_eta x cols
        let mut out = vec![DMatrix::<f64>::zeros(n_eta, cols); grid.len];
        // Parallelize over the derivative index; merge afterwards.
        let partials: Result<Vec<Vec<DMatrix<f64>>>> = (0..n_eta)
            .into_par_iter()
            .map(|jd| {
                let mut local = vec![DMatrix::<f64>::zeros(n_eta, cols); grid.len];
                let mut field = vec![0.0; grid.len];
                for cc in 0..cols {
                    let comp_base = if cols == 1 { jd * n_neg } else { cc * n_xi + jd * n_neg };
                    // Psi rows r at nodes l, contracted with cb1/cb2/cb3.
                    for l in 0..n {
                        let nodes = l + 1;
                        for r in 0..n_x {
                            field.iter_mut().for_each(|f| *f = 0.0);
                            // boundary shift theta_r(z, 0)
                            let shift0 = self.theta0[r][l] - self.theta0[r][0];
                            let vrow: Vec<f64> = (0..n_neg).map(|c| self.v[(r, c)]).collect();
                            traj.gather_combination(shift0, grid, comp_base, &vrow, &mut field)?;
                            if l > 0 {
                                for li in 0..nodes {
                                    let w = trapezoid_weight(nodes, li, h);
                                    let coef: Vec<f64> = (0..n_neg)
                                        .map(|c| w * self.pair.target_a0.entry_at_node(li, r, c))
                                        .collect();
                                    let shift = self.theta0[r][l] - self.theta0[r][li];
                                    traj.gather_combination(shift, grid, comp_base, &coef, &mut field)?;
                                }
                            }
                            // contract: local[k][:, cc] += w_l cb1[jd](l)[:, r] field[k]
                            //           + boundary contributions at l = 0, n-1
                            let wl = trapezoid_weight(n, l, h);
                            for e in 0..n_eta {
                                let c1 = wl * self.cb1[jd].entry_at_node(l, e, r);
                                let c2 = if l == 0 { self.cb2[jd][(e, r)] } else { 0.0 };
                                let c3 = if l == n - 1 { self.cb3[jd][(e, r)] } else { 0.0 };
                                let coef = c1 + c2 + c3;
                                if coef != 0.0 {
                                    for (k, f) in field.iter().enumerate() {
                                        local[k][(e, cc)] += coef * f;
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(local)
            })
            .collect();
        for local in partials? {
            for (o, l) in out.iter_mut().zip(local.into_iter()) {
                *o += l;
            }
        }
        Ok(out)
    }

    fn build_w0(&self) -> Result<DMatrix<f64>> {
        let grid = TauGrid {
            t0: 0.0,
            dt: 1.0,
            len: 1,
        };
        let etas = self.eta_from_trajectory(&self.free_flow, self.n_xi, &grid)?;
        Ok(etas.into_iter().next().unwrap())
    }

    /// Plan the three-phase reference for fault `i`.
    pub fn plan(&self, fault: usize) -> Result<PlannedFault> {
        let n_xi = self.n_xi;
        let n_neg = self.rev.n_neg;
        let id = &self.identifiability[fault];
        if !id.identifiable {
            return Err(Error::NotIdentifiable {
                fault,
                rank_w0: id.rank_w0,
                rank_aug: id.rank_augmented,
            });
        }
        let eta0 = &self.rev.eta0[fault];
        let xi0 = linalg::pseudo_inverse(&self.w0) * eta0;

        // Phase 1: free response on [-tau-, tau+].
        let dt1 = self.geo.t0 / self.phase1_steps as f64;
        let e1 = (&self.a_phi * dt1).exp();
        let mut cur = xi0.clone();
        let mut xi1 = Vec::with_capacity((self.phase1_steps + 1) * n_xi);
        for k in 0..=self.phase1_steps {
            xi1.extend_from_slice(cur.as_slice());
            if k < self.phase1_steps {
                cur = &e1 * cur;
            }
        }
        let xi_plus = cur;

        // Phase 2: steering on [tau+, T - tau-].
        let length = self.t - self.geo.t0;
        let steered = steer_to_zero(&self.a_phi, &self.b_phi, &xi_plus, length, self.phase2_steps)?;

        // Phase 3: identically zero tail on [T - tau-, T + tau+].
        let dt3 = self.geo.t0 / self.phase3_steps as f64;
        let xi3 = vec![0.0; (self.phase3_steps + 1) * n_xi];

        let t_a = -self.geo.tau_minus;
        let t_b = self.geo.tau_plus;
        let t_c = self.t - self.geo.tau_minus;
        let t_d = self.t + self.geo.tau_plus;
        let terminal = {
            let last = &steered.xi[(steered.len - 1) * n_xi..steered.len * n_xi];
            last.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let xi = PhaseTrajectory {
            dim: n_xi,
            phases: vec![
                Phase {
                    t_lo: t_a,
                    t_hi: t_b,
                    dt: dt1,
                    values: xi1,
                    closed_right: false,
                },
                Phase {
                    t_lo: t_b,
                    t_hi: t_c,
                    dt: steered.dt,
                    values: steered.xi.clone(),
                    closed_right: false,
                },
                Phase {
                    t_lo: t_c,
                    t_hi: t_d,
                    dt: dt3,
                    values: xi3.clone(),
                    closed_right: true,
                },
            ],
        };
        // The boundary trace is zero at both jump instants: the first phase
        // owns tau+ and the zero tail owns T - tau-.
        let trace = PhaseTrajectory {
            dim: n_neg,
            phases: vec![
                Phase {
                    t_lo: t_a,
                    t_hi: t_b,
                    dt: dt1,
                    values: vec![0.0; (self.phase1_steps + 1) * n_neg],
                    closed_right: true,
                },
                Phase {
                    t_lo: t_b,
                    t_hi: t_c,
                    dt: steered.dt,
                    values: steered.chi.clone(),
                    closed_right: false,
                },
                Phase {
                    t_lo: t_c,
                    t_hi: t_d,
                    dt: dt3,
                    values: vec![0.0; (self.phase3_steps + 1) * n_neg],
                    closed_right: true,
                },
            ],
        };
        Ok(PlannedFault {
            xi,
            trace,
            xi0,
            junction_mismatch: steered.junction_mismatch,
            terminal_residual: terminal,
        })
    }

    /// Steering Gramian mirror for diagnostics.
    pub fn steering_gramian(&self, fault: usize) -> Result<DMatrix<f64>> {
        let eta0 = &self.rev.eta0[fault];
        let xi0 = linalg::pseudo_inverse(&self.w0) * eta0;
        let e1 = (&self.a_phi * (self.geo.t0 / self.phase1_steps as f64)).exp();
        let mut cur = xi0;
        for _ in 0..self.phase1_steps {
            cur = &e1 * cur;
        }
        let steered = steer_to_zero(
            &self.a_phi,
            &self.b_phi,
            &cur,
            self.t - self.geo.t0,
            self.phase2_steps,
        )?;
        Ok(steered.gramian)
    }
}

/// Time-sampled matrix kernel `[k * rows * cols + r * cols + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeKernel {
    pub rows: usize,
    pub cols: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl TimeKernel {
    pub fn zeros(len: usize, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            len,
            data: vec![0.0; len * rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.rows * self.cols..(k + 1) * self.rows * self.cols]
    }

    #[inline]
    pub fn entry(&self, k: usize, r: usize, c: usize) -> f64 {
        self.data[(k * self.rows + r) * self.cols + c]
    }

    #[inline]
    pub fn entry_mut(&mut self, k: usize, r: usize, c: usize) -> &mut f64 {
        &mut self.data[(k * self.rows + r) * self.cols + c]
    }

    pub fn matrix_at(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.at(k))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Space-time kernel field `[(iz * len + k) * rows * cols + ...]` used for
/// the distributed kernel M(z, tau).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldKernel {
    pub n_z: usize,
    pub len: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FieldKernel {
    pub fn zeros(n_z: usize, len: usize, rows: usize, cols: usize) -> Self {
        Self {
            n_z,
            len,
            rows,
            cols,
            data: vec![0.0; n_z * len * rows * cols],
        }
    }

    #[inline]
    pub fn entry(&self, iz: usize, k: usize, r: usize, c: usize) -> f64 {
        self.data[((iz * self.len + k) * self.rows + r) * self.cols + c]
    }

    #[inline]
    pub fn entry_mut(&mut self, iz: usize, k: usize, r: usize, c: usize) -> &mut f64 {
        &mut self.data[((iz * self.len + k) * self.rows + r) * self.cols + c]
    }
}

/// Sampled diagnosis kernels and thresholds over the window [0, T].
#[derive(Debug, Clone)]
pub struct DiagnosisKernels {
    pub t: f64,
    pub tau_step: f64,
    pub n_tau: usize,
    pub n_neg: usize,
    pub n_u: usize,
    pub n_f: usize,
    pub n_w: usize,
    pub n_v: usize,
    pub n_dt: usize,
    pub n_db: usize,
    /// Output kernel N(tau), n_neg x n_f.
    pub n_kernel: TimeKernel,
    /// Input kernel M_B(tau), n_u x n_f.
    pub m_b: TimeKernel,
    /// Fault-side kernel M_E(tau), n_f x n_f.
    pub m_e: TimeKernel,
    /// Deterministic-disturbance kernel, n_dt x n_f.
    pub m_gt: TimeKernel,
    /// Bounded-disturbance kernel, n_db x n_f.
    pub m_gb: TimeKernel,
    /// Lumped kernel P(tau), n_w x n_f.
    pub p: TimeKernel,
    /// Exosystem kernel Q(tau), n_v x n_f.
    pub q: TimeKernel,
    /// Detection thresholds.
    pub f_b: Vec<f64>,
    /// Distributed kernel M(z, tau) on the original coordinate, n_x x n_f.
    pub m_field: Option<FieldKernel>,
}

/// Synthesis diagnostics reported alongside the kernels.
#[derive(Debug, Clone)]
pub struct SynthesisDiagnostics {
    pub identifiability: Vec<IdentifiabilityResult>,
    pub pinv_residuals: Vec<f64>,
    pub junction_mismatches: Vec<f64>,
    pub terminal_residuals: Vec<f64>,
    pub eta0_snap_errors: Vec<f64>,
    pub gramian_min_eig: f64,
    pub gramian_symmetry: f64,
}

/// Thresholds from the bounded-disturbance kernel by compound trapezoid.
pub fn thresholds(m_gb: &TimeKernel, delta: &DVector<f64>, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; m_gb.cols];
    for i in 0..m_gb.cols {
        let mut acc = 0.0;
        for k in 0..m_gb.len {
            let w = trapezoid_weight(m_gb.len, k, dt);
            let mut v = 0.0;
            for c in 0..m_gb.rows {
                v += m_gb.entry(k, c, i).abs() * delta[c];
            }
            acc += w * v;
        }
        out[i] = acc;
    }
    out
}

/// Assemble the full diagnosis kernel set for every fault channel.
pub fn assemble_kernels(
    model: &PlantModel,
    rev: &ReversedSystem,
    geo: &TransportGeometry,
    pair: &BacksteppingKernelPair,
    target: &TargetSystemData,
    t: f64,
    tau_step: Option<f64>,
) -> Result<(DiagnosisKernels, SynthesisDiagnostics)> {
    let tau_step = tau_step.unwrap_or(t / 2000.0);
    let planner = Planner::new(rev, geo, pair, target, t, tau_step)?;
    assemble_with_planner(model, &planner)
}

pub fn assemble_with_planner(
    model: &PlantModel,
    planner: &Planner<'_>,
) -> Result<(DiagnosisKernels, SynthesisDiagnostics)> {
    let rev = planner.rev;
    let pair = planner.pair;
    let n = pair.n;
    let h = 1.0 / (n - 1) as f64;
    let n_x = rev.n_x;
    let n_neg = rev.n_neg;
    let n_pos = rev.n_pos;
    let n_f = rev.n_f;
    let n_w = rev.n_w;
    let n_v = rev.n_v;
    let n_eta = rev.n_eta();
    let d = &model.dims;

    let n_tau = (planner.t / planner.tau_step).round() as usize + 1;
    let grid = TauGrid {
        t0: 0.0,
        dt: planner.tau_step,
        len: n_tau,
    };

    let mut m_field = FieldKernel::zeros(n, n_tau, n_x, n_f);
    let mut p_kernel = TimeKernel::zeros(n_tau, n_w, n_f);
    let mut q_kernel = TimeKernel::zeros(n_tau, n_v, n_f);
    let mut n_kernel = TimeKernel::zeros(n_tau, n_neg, n_f);
    let mut eta_store = vec![DMatrix::<f64>::zeros(n_eta, n_f); n_tau];

    let mut diagnostics = SynthesisDiagnostics {
        identifiability: planner.identifiability.clone(),
        pinv_residuals: Vec::new(),
        junction_mismatches: Vec::new(),
        terminal_residuals: Vec::new(),
        eta0_snap_errors: Vec::new(),
        gramian_min_eig: f64::INFINITY,
        gramian_symmetry: 0.0,
    };

    // Resampled original-coordinate input maps for the filter assembly.
    let b1_res = model.b1.resample(n);
    let e1_res = model.e1.resample(n);
    let g1_res = model.g1.resample(n);

    for fault in 0..n_f {
        let plan = planner.plan(fault)?;
        diagnostics.junction_mismatches.push(plan.junction_mismatch);
        diagnostics.terminal_residuals.push(plan.terminal_residual);
        let eta0 = &rev.eta0[fault];
        let pinv_res = (&planner.w0 * &plan.xi0 - eta0).norm();
        diagnostics.pinv_residuals.push(pinv_res);

        // Target kernel field m~(z_l, tau_k, r) from the planned trace.
        let mut mt = vec![0.0; n * n_tau * n_x];
        mt.par_chunks_mut(n_tau * n_x)
            .enumerate()
            .try_for_each(|(l, chunk)| -> Result<()> {
                let mut field = vec![0.0; n_tau];
                for r in 0..n_x {
                    field.iter_mut().for_each(|f| *f = 0.0);
                    let shift0 = planner.theta0[r][l] - planner.theta0[r][0];
                    let vrow: Vec<f64> = (0..n_neg).map(|c| planner.v[(r, c)]).collect();
                    plan.trace.gather_combination(shift0, &grid, 0, &vrow, &mut field)?;
                    if l > 0 {
                        let nodes = l + 1;
                        for li in 0..nodes {
                            let w = trapezoid_weight(nodes, li, h);
                            let coef: Vec<f64> = (0..n_neg)
                                .map(|c| w * pair.target_a0.entry_at_node(li, r, c))
                                .collect();
                            let shift = planner.theta0[r][l] - planner.theta0[r][li];
                            plan.trace.gather_combination(shift, &grid, 0, &coef, &mut field)?;
                        }
                    }
                    for k in 0..n_tau {
                        chunk[k * n_x + r] = field[k];
                    }
                }
                Ok(())
            })?;

        // Lumped kernel state from the xi trajectory.
        let mut etas = planner.eta_from_trajectory(&plan.xi, 1, &grid)?;
        // The initial condition eta(0) = eta0 holds up to the pseudo-inverse
        // and quadrature consistency; pin the stored sample to the exact
        // initial value required by the kernel equations.
        let snap = (DVector::from_column_slice(etas[0].column(0).as_slice()) - eta0).norm();
        diagnostics.eta0_snap_errors.push(snap);
        etas[0].column_mut(0).copy_from(eta0);

        // Inverse transformation per tau sample: m_bar = m~ + int K_I m~.
        let s = n_x * n_x;
        let mut mbar = vec![0.0; n * n_tau * n_x];
        mbar.par_chunks_mut(n_tau * n_x)
            .enumerate()
            .for_each(|(m, chunk)| {
                for k in 0..n_tau {
                    for r in 0..n_x {
                        chunk[k * n_x + r] = mt[(m * n_tau + k) * n_x + r];
                    }
                }
                for l in 0..=m {
                    if m == 0 {
                        break;
                    }
                    let w = trapezoid_weight(m + 1, l, h);
                    let node = &pair.k_inv[(m * n + l) * s..(m * n + l) * s + s];
                    for k in 0..n_tau {
                        let src = &mt[(l * n_tau + k) * n_x..(l * n_tau + k) * n_x + n_x];
                        for r in 0..n_x {
                            let mut acc = 0.0;
                            for c in 0..n_x {
                                acc += node[r * n_x + c] * src[c];
                            }
                            chunk[k * n_x + r] += w * acc;
                        }
                    }
                }
            });

        // Kernel input n_i from the far-boundary relation, and the
        // original-coordinate field M by undoing the spatial reversal.
        for k in 0..n_tau {
            let eta_k = DVector::from_column_slice(etas[k].column(0).as_slice());
            // n_i = m_bar^-(1) + Q0^T m_bar^+(1) + int A0_rev^T m_bar + L2^T J eta
            let top = &mbar[((n - 1) * n_tau + k) * n_x..((n - 1) * n_tau + k) * n_x + n_x];
            let mut ni = DVector::zeros(n_neg);
            for r in 0..n_neg {
                ni[r] = top[r];
            }
            for r in 0..n_neg {
                for c in 0..n_pos {
                    ni[r] += rev.q0[(c, r)] * top[n_neg + c];
                }
            }
            for l in 0..n {
                let w = trapezoid_weight(n, l, h);
                let a0n = rev.a0_rev.node(l);
                let src = &mbar[(l * n_tau + k) * n_x..(l * n_tau + k) * n_x + n_x];
                for r in 0..n_neg {
                    let mut acc = 0.0;
                    for c in 0..n_x {
                        // A0_rev is n_x x n_neg; transpose entry (r, c)
                        acc += a0n[c * n_neg + r] * src[c];
                    }
                    ni[r] += w * acc;
                }
            }
            let p_part = eta_k.rows(0, n_w).clone_owned();
            ni += rev.l2.transpose() * &p_part;

            for r in 0..n_neg {
                *n_kernel.entry_mut(k, r, fault) = ni[r];
            }
            for r in 0..n_w {
                *p_kernel.entry_mut(k, r, fault) = eta_k[r];
            }
            for r in 0..n_v {
                *q_kernel.entry_mut(k, r, fault) = eta_k[n_w + r];
            }
            eta_store[k].column_mut(fault).copy_from(&eta_k);

            for m in 0..n {
                let src = &mbar[((n - 1 - m) * n_tau + k) * n_x..((n - 1 - m) * n_tau + k) * n_x + n_x];
                for r in 0..n_x {
                    *m_field.entry_mut(m, k, r, fault) = src[r];
                }
            }
        }
    }

    // Filter kernels against the original-coordinate maps.
    let mut m_b = TimeKernel::zeros(n_tau, d.n_u, n_f);
    let mut m_e = TimeKernel::zeros(n_tau, d.n_f, n_f);
    let mut m_gt = TimeKernel::zeros(n_tau, d.n_dt, n_f);
    let mut m_gb = TimeKernel::zeros(n_tau, d.n_db, n_f);
    for k in 0..n_tau {
        let mut m0 = DMatrix::zeros(n_x, n_f);
        let mut m1 = DMatrix::zeros(n_x, n_f);
        for r in 0..n_x {
            for c in 0..n_f {
                m0[(r, c)] = m_field.entry(0, k, r, c);
                m1[(r, c)] = m_field.entry(n - 1, k, r, c);
            }
        }
        let m_plus0 = m0.rows(n_neg, n_pos).clone_owned();
        let m_minus1 = m1.rows(0, n_neg).clone_owned();
        let nk = n_kernel.matrix_at(k);
        let pk = p_kernel.matrix_at(k);

        let mut ib1 = DMatrix::zeros(d.n_u, n_f);
        let mut ie1 = DMatrix::zeros(d.n_f, n_f);
        let mut ig1 = DMatrix::zeros(d.n_d, n_f);
        for l in 0..n {
            let w = trapezoid_weight(n, l, h);
            let mut mz = DMatrix::zeros(n_x, n_f);
            for r in 0..n_x {
                for c in 0..n_f {
                    mz[(r, c)] = m_field.entry(l, k, r, c);
                }
            }
            ib1 += w * b1_res.node_matrix(l).transpose() * &mz;
            ie1 += w * e1_res.node_matrix(l).transpose() * &mz;
            ig1 += w * g1_res.node_matrix(l).transpose() * &mz;
        }

        let mb_k = ib1 + model.b2.transpose() * &m_plus0 - model.b3.transpose() * &m_minus1
            + model.b4.transpose() * &pk;
        let me_k = ie1 + model.e2.transpose() * &m_plus0 - model.e3.transpose() * &m_minus1
            + model.e4.transpose() * &pk
            - model.e5.transpose() * &nk;
        let mg_k = ig1 + model.g2.transpose() * &m_plus0 - model.g3.transpose() * &m_minus1
            + model.g4.transpose() * &pk
            - model.g5.transpose() * &nk;
        let mgt_k = model.g_tilde.transpose() * &mg_k;
        let mgb_k = model.g_bar.transpose() * &mg_k;

        for r in 0..d.n_u {
            for c in 0..n_f {
                *m_b.entry_mut(k, r, c) = mb_k[(r, c)];
            }
        }
        for r in 0..d.n_f {
            for c in 0..n_f {
                *m_e.entry_mut(k, r, c) = me_k[(r, c)];
            }
        }
        for r in 0..d.n_dt {
            for c in 0..n_f {
                *m_gt.entry_mut(k, r, c) = mgt_k[(r, c)];
            }
        }
        for r in 0..d.n_db {
            for c in 0..n_f {
                *m_gb.entry_mut(k, r, c) = mgb_k[(r, c)];
            }
        }
    }

    let f_b = thresholds(&m_gb, &model.delta, planner.tau_step);

    // Gramian diagnostics from the first identifiable fault.
    if let Some(first) = planner
        .identifiability
        .iter()
        .find(|r| r.identifiable)
        .map(|r| r.fault)
    {
        let w = planner.steering_gramian(first)?;
        let sym = (&w - &w.transpose()).norm() / w.norm().max(f64::MIN_POSITIVE);
        let (lo, _) = linalg::symmetric_eig_range(&(0.5 * (&w + &w.transpose())));
        diagnostics.gramian_symmetry = sym;
        diagnostics.gramian_min_eig = lo;
    }

    Ok((
        DiagnosisKernels {
            t: planner.t,
            tau_step: planner.tau_step,
            n_tau,
            n_neg,
            n_u: d.n_u,
            n_f,
            n_w,
            n_v,
            n_dt: d.n_dt,
            n_db: d.n_db,
            n_kernel,
            m_b,
            m_e,
            m_gt,
            m_gb,
            p: p_kernel,
            q: q_kernel,
            f_b,
            m_field: Some(m_field),
        },
        diagnostics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backstepping::solve_kernel;
    use crate::bundled::demo_4x4;
    use crate::model::{build_reversed_system, transport_geometry};
    use approx::assert_relative_eq;

    #[test]
    fn scalar_steering_matches_closed_form() {
        // xi' = chi with Gramian W(0, s) = s: chi is constant
        // -xi0 / length and xi decays linearly to zero.
        let a = DMatrix::zeros(1, 1);
        let b = DMatrix::identity(1, 1);
        let xi0 = DVector::from_element(1, 2.0);
        let length = 4.0;
        let steered = steer_to_zero(&a, &b, &xi0, length, 400).unwrap();
        let chi_expect = -2.0 / 4.0;
        for k in 0..=400 {
            assert_relative_eq!(steered.chi[k], chi_expect, epsilon = 1e-9);
            let t = k as f64 * steered.dt;
            assert_relative_eq!(steered.xi[k], 2.0 * (1.0 - t / 4.0), epsilon = 1e-9);
        }
        assert!(steered.xi[400].abs() < 1e-12);
        assert_relative_eq!(steered.gramian[(0, 0)], 4.0, epsilon = 1e-9);
        assert!(steered.junction_mismatch < 1e-12);
    }

    #[test]
    fn steering_handles_stiff_oscillatory_chain() {
        // companion system with the demo characteristic polynomial scale
        let mu = [0.0, 0.0, 0.0, 0.722, 0.278, 9.417, 3.611, 26.361, 10.0];
        let n = mu.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -mu[j];
        }
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let xi0 = DVector::from_fn(n, |i, _| 0.3 + 0.1 * i as f64);
        let steered = steer_to_zero(&a, &b, &xi0, 6.5, 1000).unwrap();
        // terminal state vanishes to the Gramian-solve residual
        let last = &steered.xi[1000 * n..];
        assert!(last.iter().all(|v| v.abs() < 1e-12), "terminal {last:?}");
        // left junction consistent despite the huge Gramian conditioning
        assert!(
            steered.junction_mismatch < 1e-6 * (1.0 + xi0.norm()),
            "junction {}",
            steered.junction_mismatch
        );
        // the stored trajectory satisfies the ODE: trapezoid-integrated
        // defect per step, relative to the increment scale
        let dt = steered.dt;
        let mut num = 0.0;
        let mut den = 0.0;
        let f_at = |k: usize| -> DVector<f64> {
            let x = DVector::from_column_slice(&steered.xi[k * n..(k + 1) * n]);
            &a * x + &b * DVector::from_element(1, steered.chi[k])
        };
        let mut f_prev = f_at(0);
        for k in 0..1000usize {
            let f_next = f_at(k + 1);
            let x0 = DVector::from_column_slice(&steered.xi[k * n..(k + 1) * n]);
            let x1 = DVector::from_column_slice(&steered.xi[(k + 1) * n..(k + 2) * n]);
            let defect = &x1 - &x0 - 0.5 * dt * (&f_prev + &f_next);
            num += defect.norm_squared();
            den += (x1 - x0).norm_squared() + (0.5 * dt * (&f_prev + &f_next)).norm_squared();
            f_prev = f_next;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 2e-2, "integrated ODE defect {rel}");
    }

    #[test]
    fn identifiability_trivial_cases() {
        let w0 = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let zero = DVector::zeros(2);
        let reachable = DVector::from_row_slice(&[1.0, 2.0]);
        let res = identifiability_check(&w0, &[zero.clone(), reachable]);
        assert!(res[0].identifiable);
        assert!(res[1].identifiable);

        let w0_zero = DMatrix::zeros(2, 3);
        let res = identifiability_check(&w0_zero, &[zero, DVector::from_row_slice(&[1.0, 0.0])]);
        assert!(res[0].identifiable);
        assert!(!res[1].identifiable);
    }

    fn demo_planner_parts(n: usize) -> (
        crate::model::ReversedSystem,
        crate::model::TransportGeometry,
        crate::backstepping::BacksteppingKernelPair,
        crate::backstepping::TargetSystemData,
    ) {
        let sys = demo_4x4(n);
        let geo = transport_geometry(&sys.plant).unwrap();
        let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
        let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
        let target = crate::backstepping::target_matrices(&rev, &pair).unwrap();
        (rev, geo, pair, target)
    }

    #[test]
    fn psi_at_the_near_boundary_is_the_injection() {
        let (rev, geo, pair, _target) = demo_planner_parts(41);
        // h(t) = (sin t, cos 2t)
        let phase = Phase {
            t_lo: -4.0,
            t_hi: 4.0,
            dt: 0.001,
            values: (0..=8000)
                .flat_map(|k| {
                    let t = -4.0 + k as f64 * 0.001;
                    [t.sin(), (2.0 * t).cos()]
                })
                .collect(),
        };
        let h = PhaseTrajectory {
            dim: 2,
            phases: vec![phase],
        };
        let tau = 0.37;
        let out = psi_apply(&geo, &pair.target_a0, &rev.q1, &h, 0.0, tau).unwrap();
        let v = rev.v_matrix();
        let expect = v * DVector::from_row_slice(&[tau.sin(), (2.0 * tau).cos()]);
        assert_relative_eq!((out - expect).norm(), 0.0, epsilon = 1e-6);

        // zero trajectory gives zero
        let hz = PhaseTrajectory {
            dim: 2,
            phases: vec![Phase {
                t_lo: -4.0,
                t_hi: 4.0,
                dt: 1.0,
                values: vec![0.0; 2 * 9],
                closed_right: true,
            }],
        };
        let out = psi_apply(&geo, &pair.target_a0, &rev.q1, &hz, 0.7, 0.1).unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn psi_reproduces_a_direct_transport_solve() {
        // Pure transport target system: gamma = (1, -1), no boundary
        // coupling. Psi rows are exact shifts h(tau +- z); compare against
        // an upwind solve of the target PDE with boundary trace h.
        use crate::grid::{TabulatedMatrix, TabulatedScalar};
        use crate::model::PlantModel;
        let n = 201;
        let sys = demo_4x4(n);
        let mut plant: PlantModel = sys.plant;
        plant.dims.n_neg = 1;
        plant.dims.n_pos = 1;
        plant.gamma = vec![TabulatedScalar::constant(n, 1.0), TabulatedScalar::constant(n, -1.0)];
        plant.q1 = DMatrix::zeros(1, 1);
        let geo = transport_geometry(&plant).unwrap();
        let a0_target = TabulatedMatrix::zeros(n, 2, 1);
        let q1 = DMatrix::zeros(1, 1);
        let h_traj = PhaseTrajectory {
            dim: 1,
            phases: vec![Phase {
                t_lo: -2.0,
                t_hi: 6.0,
                dt: 0.002,
                values: (0..=4000).map(|k| {
                    let t = -2.0 + k as f64 * 0.002;
                    (1.3 * t).sin() + 0.4 * (0.7 * t).cos()
                }).collect(),
                closed_right: true,
            }],
        };

        // direct upwind solve of m' = Gamma m_t with m(0, tau) = V h(tau):
        // state 1: m1(z, tau) = h(tau + z) marches right from z = 0;
        // state 2: m2(z, tau) = -q1^T ... = 0 here. March in z with upwind
        // in tau (first-order), on a fine tau grid.
        let hz = 1.0 / (n - 1) as f64;
        let n_tau = 801;
        let dtau = hz; // unit CFL ratio: the upwind march is an exact shift
        let t_span = dtau * (n_tau - 1) as f64;
        let _ = t_span;
        let mut m1 = vec![0.0; n * n_tau];
        for k in 0..n_tau {
            let tau = k as f64 * dtau;
            let mut buf = [0.0];
            h_traj.eval_into(tau, 0, &mut buf).unwrap();
            m1[k] = buf[0];
        }
        // dm1/dz = gamma_1 dm1/dtau with gamma_1(zbar) = 1: upwind forward in tau
        for m in 1..n {
            for k in 0..n_tau {
                let dtau_term = if k + 1 < n_tau {
                    (m1[(m - 1) * n_tau + k + 1] - m1[(m - 1) * n_tau + k]) / dtau
                } else {
                    (m1[(m - 1) * n_tau + k] - m1[(m - 1) * n_tau + k - 1]) / dtau
                };
                m1[m * n_tau + k] = m1[(m - 1) * n_tau + k] + hz * dtau_term;
            }
        }
        // compare with Psi at a few z nodes over the interior tau range
        let mut num = 0.0;
        let mut den = 0.0;
        for &mz in &[50usize, 100, 150, 200] {
            let z = mz as f64 * hz;
            for k in (100..500).step_by(10) {
                let tau = k as f64 * dtau;
                let out = psi_apply(&geo, &a0_target, &q1, &h_traj, z, tau).unwrap();
                let direct = m1[mz * n_tau + k];
                num += (out[0] - direct).powi(2);
                den += direct.powi(2);
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-3 * 30.0, "relative L2 error {rel}");
        // the exact shift identity holds much tighter than the upwind solve
        let out = psi_apply(&geo, &a0_target, &q1, &h_traj, 0.5, 1.0).unwrap();
        let mut buf = [0.0];
        h_traj.eval_into(1.5, 0, &mut buf).unwrap();
        assert_relative_eq!(out[0], buf[0], epsilon = 1e-6);
    }

    #[test]
    fn demo_identifiability_and_endpoints() {
        let n = 101;
        let (rev, geo, pair, target) = demo_planner_parts(n);
        let planner = Planner::new(&rev, &geo, &pair, &target, 12.0, 12.0 / 800.0).unwrap();
        // all three faults identifiable with two measurements
        assert!(planner.identifiability.iter().all(|r| r.identifiable));
        // flat-output pair is controllable
        assert!(crate::linalg::is_controllable(&planner.a_phi, &planner.b_phi));
        // zero initial state plans to the zero trajectory
        let mut rev0 = rev.clone();
        for e in rev0.eta0.iter_mut() {
            e.fill(0.0);
        }
        let planner0 = Planner::new(&rev0, &geo, &pair, &target, 12.0, 12.0 / 800.0).unwrap();
        let plan = planner0.plan(0).unwrap();
        assert!(plan.xi0.norm() < 1e-9);
        let (lo, hi) = plan.trace.support();
        let mut buf = vec![0.0; 2];
        for k in 0..50 {
            let t = lo + (hi - lo) * k as f64 / 49.0;
            plan.trace.eval_into(t, 0, &mut buf).unwrap();
            assert!(buf.iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn planned_trace_vanishes_outside_the_steering_phase() {
        let n = 101;
        let (rev, geo, pair, target) = demo_planner_parts(n);
        let planner = Planner::new(&rev, &geo, &pair, &target, 12.0, 12.0 / 800.0).unwrap();
        let plan = planner.plan(0).unwrap();
        let mut buf = vec![0.0; 2];
        // phase 1 and phase 3 are exact zeros
        for &t in &[-2.0, 0.0, 1.0, 2.74] {
            plan.trace.eval_into(t, 0, &mut buf).unwrap();
            assert_eq!(buf, vec![0.0, 0.0]);
        }
        for &t in &[12.0 - 2.74, 12.0, 13.0, 14.7] {
            plan.trace.eval_into(t, 0, &mut buf).unwrap();
            assert_eq!(buf, vec![0.0, 0.0]);
        }
        // terminal state of the steering phase vanishes to solver precision
        assert!(plan.terminal_residual < 1e-10, "terminal {}", plan.terminal_residual);
        // pseudo-inverse consistency
        let eta0 = &rev.eta0[0];
        let res = (&planner.w0 * &plan.xi0 - eta0).norm();
        assert!(res <= 1e-8 * (1.0 + eta0.norm()), "pinv residual {res}");
    }

    #[test]
    fn thresholds_closed_form_for_constant_kernel() {
        // |m_gb| constant c: f_B = T |c|^T delta
        let mut m_gb = TimeKernel::zeros(101, 2, 1);
        for k in 0..101 {
            m_gb.data[k * 2] = 0.5;
            m_gb.data[k * 2 + 1] = -1.5;
        }
        let delta = DVector::from_row_slice(&[0.7, 0.3]);
        let f_b = thresholds(&m_gb, &delta, 2.0 / 100.0);
        assert_relative_eq!(f_b[0], 2.0 * (0.5 * 0.7 + 1.5 * 0.3), epsilon = 1e-12);
    }
}
