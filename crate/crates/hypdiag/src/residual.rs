//! Numeric certification of assembled diagnosis kernels: the kernels are
//! substituted into the reversed kernel system and the defect is measured
//! in integrated (characteristic / one-step) form.
//!
//! The planned kernels are piecewise smooth: the steering input jumps at
//! the phase boundaries and those jumps ride along characteristics. The
//! transport defect is therefore evaluated along characteristic segments
//! (where the jump lines are invisible except through interpolation), and
//! cells whose characteristic invariant lies within a few grid steps of a
//! known jump time are excluded, matching the piecewise-continuous solution
//! concept.

use crate::error::Result;
use crate::grid::trapezoid_weight;
use crate::model::{ReversedSystem, TransportGeometry};
use crate::trajectory::DiagnosisKernels;

/// Relative integrated defects of the kernel-system relations.
#[derive(Debug, Clone)]
pub struct KernelResiduals {
    /// Transport equations, characteristic-integrated per grid cell.
    pub pde: f64,
    /// Near-boundary reflection relation.
    pub bc_near: f64,
    /// Far-boundary input relation (zero by construction of the input).
    pub bc_far: f64,
    /// Lumped kernel dynamics, trapezoid-integrated per time cell.
    pub ode: f64,
}

impl KernelResiduals {
    pub fn worst(&self) -> f64 {
        self.pde.max(self.bc_near).max(self.bc_far).max(self.ode)
    }
}

/// Evaluate the kernel-equation residuals for all fault columns.
pub fn kernel_equation_residuals(
    rev: &ReversedSystem,
    geo: &TransportGeometry,
    kernels: &DiagnosisKernels,
) -> Result<KernelResiduals> {
    let field = kernels
        .m_field
        .as_ref()
        .expect("kernel field required for residual evaluation");
    let n = rev.n;
    let n_x = rev.n_x;
    let n_neg = rev.n_neg;
    let n_pos = rev.n_pos;
    let n_f = kernels.n_f;
    let n_eta = rev.n_eta();
    let n_tau = kernels.n_tau;
    let h = 1.0 / (n - 1) as f64;
    let dt = kernels.tau_step;
    let t = kernels.t;

    assert_eq!(field.n_z, n, "kernel field grid must match the reversed system");

    // m_bar(z_bar node m, tau_k, state r, fault i) = M(n-1-m, k, r, i)
    let mbar = |m: usize, k: usize, r: usize, i: usize| field.entry(n - 1 - m, k, r, i);
    let mbar_interp = |m: usize, tau: f64, r: usize, i: usize| -> f64 {
        let x = (tau / dt).clamp(0.0, (n_tau - 1) as f64);
        let mut k = x as usize;
        if k >= n_tau - 1 {
            k = n_tau - 2;
        }
        let w = x - k as f64;
        mbar(m, k, r, i) * (1.0 - w) + mbar(m, k + 1, r, i) * w
    };

    // Travel-time antiderivatives of the reversed states on the kernel grid.
    let mut theta = vec![vec![0.0; n]; n_x];
    for r in 0..n_x {
        for m in 0..n {
            theta[r][m] = geo.antiderivative(r, m as f64 * h)?;
        }
    }
    let max_gamma: f64 = rev
        .gamma_rev
        .iter()
        .flat_map(|g| g.values().iter())
        .fold(0.0f64, |a, b| a.max(b.abs()));

    // Jump times of the planned boundary trace.
    let jump_times = [geo.tau_plus, t - geo.tau_minus];

    // Volterra coupling of the reversed system at grid nodes per fault:
    // i_d[(m * n_tau + k) * n_x + r].
    let mut i_d = vec![0.0; n * n_tau * n_x];
    let has_d = rev.d_rev.max_abs() != 0.0;

    let mut num_pde = 0.0f64;
    let mut den_pde = 0.0f64;

    for fault in 0..n_f {
        if has_d {
            i_d.iter_mut().for_each(|v| *v = 0.0);
            for m in 0..n {
                for k in 0..n_tau {
                    let out = &mut i_d[(m * n_tau + k) * n_x..(m * n_tau + k) * n_x + n_x];
                    if m == 0 {
                        out.fill(0.0);
                        continue;
                    }
                    for l in 0..=m {
                        let w = trapezoid_weight(m + 1, l, h);
                        // Dbar^T(zeta_l, z_m): entry (r, c) = Dbar_cr(l, m)
                        let node = rev.d_rev.node(l, m);
                        for r in 0..n_x {
                            let mut acc = 0.0;
                            for c in 0..n_x {
                                acc += node[c * n_x + r] * mbar(l, k, c, fault);
                            }
                            out[r] += w * acc;
                        }
                    }
                }
            }
        } else {
            i_d.iter_mut().for_each(|v| *v = 0.0);
        }

        let rhs = |m: usize, k: usize, r: usize| -> f64 {
            let mut acc = i_d[(m * n_tau + k) * n_x + r];
            for c in 0..n_x {
                // Abar^T entry (r, c) = Abar_cr
                acc += rev.a_rev.entry_at_node(m, c, r) * mbar(m, k, c, fault);
            }
            acc
        };
        let rhs_interp = |m: usize, tau: f64, r: usize| -> f64 {
            let x = (tau / dt).clamp(0.0, (n_tau - 1) as f64);
            let mut k = x as usize;
            if k >= n_tau - 1 {
                k = n_tau - 2;
            }
            let w = x - k as f64;
            rhs(m, k, r) * (1.0 - w) + rhs(m, k + 1, r) * w
        };

        for r in 0..n_x {
            for m in 0..n - 1 {
                let dtheta = theta[r][m + 1] - theta[r][m];
                for k in 0..n_tau {
                    let tau_k = k as f64 * dt;
                    let tau_a = tau_k + dtheta;
                    if tau_a < 0.0 || tau_a > t {
                        continue;
                    }
                    // characteristic invariant: tau + Theta_r is constant
                    let inv = tau_k + theta[r][m + 1] - theta[r][0];
                    let margin = 2.0 * (dt + h * max_gamma);
                    if jump_times.iter().any(|tj| (inv - tj).abs() < margin) {
                        continue;
                    }
                    let end = mbar(m + 1, k, r, fault);
                    let start = mbar_interp(m, tau_a, r, fault);
                    let f_end = rhs(m + 1, k, r);
                    let f_start = rhs_interp(m, tau_a, r);
                    let integral = 0.5 * h * (f_start + f_end);
                    let defect = end - start - integral;
                    num_pde += defect * defect;
                    // normalize against the field scale: along exact
                    // characteristics the increment itself vanishes
                    let scale = end.abs() + start.abs() + integral.abs();
                    den_pde += scale * scale;
                }
            }
        }
    }

    // Near-boundary reflection: m_bar^+(0, tau) + Q1^T m_bar^-(0, tau) = 0.
    let mut num_near = 0.0;
    let mut den_near = 0.0;
    for fault in 0..n_f {
        for k in 0..n_tau {
            for r in 0..n_pos {
                let mut v = mbar(0, k, n_neg + r, fault);
                for c in 0..n_neg {
                    v += rev.q1[(c, r)] * mbar(0, k, c, fault);
                }
                num_near += v * v;
            }
            for r in 0..n_x {
                den_near += mbar(0, k, r, fault).powi(2);
            }
        }
    }

    // Far-boundary input relation.
    let mut num_far = 0.0;
    let mut den_far = 0.0;
    for fault in 0..n_f {
        for k in 0..n_tau {
            let mut eta_k = vec![0.0; n_eta];
            for r in 0..kernels.n_w {
                eta_k[r] = kernels.p.entry(k, r, fault);
            }
            for r in 0..kernels.n_v {
                eta_k[kernels.n_w + r] = kernels.q.entry(k, r, fault);
            }
            for r in 0..n_neg {
                let mut v = -mbar(n - 1, k, r, fault) + kernels.n_kernel.entry(k, r, fault);
                for c in 0..n_pos {
                    v -= rev.q0[(c, r)] * mbar(n - 1, k, n_neg + c, fault);
                }
                for l in 0..n {
                    let w = trapezoid_weight(n, l, h);
                    let node = rev.a0_rev.node(l);
                    let mut acc = 0.0;
                    for c in 0..n_x {
                        acc += node[c * n_neg + r] * mbar(l, k, c, fault);
                    }
                    v -= w * acc;
                }
                for c in 0..rev.n_w {
                    v -= rev.l2[(c, r)] * eta_k[c];
                }
                num_far += v * v;
                den_far += kernels.n_kernel.entry(k, r, fault).powi(2);
            }
        }
    }

    // Lumped dynamics, integrated over time cells away from boundary jumps.
    let mut ode_jumps = vec![geo.tau_plus, t - geo.tau_minus];
    for r in 0..n_x {
        let shift = theta[r][n - 1] - theta[r][0];
        for tj in [geo.tau_plus, t - geo.tau_minus] {
            ode_jumps.push(tj - shift);
        }
    }
    let mut num_ode = 0.0;
    let mut den_ode = 0.0;
    for fault in 0..n_f {
        let eta_at = |k: usize| -> Vec<f64> {
            let mut e = vec![0.0; n_eta];
            for r in 0..kernels.n_w {
                e[r] = kernels.p.entry(k, r, fault);
            }
            for r in 0..kernels.n_v {
                e[kernels.n_w + r] = kernels.q.entry(k, r, fault);
            }
            e
        };
        let rhs_at = |k: usize, eta: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n_eta];
            for r in 0..n_eta {
                let mut acc = 0.0;
                for c in 0..n_eta {
                    acc += rev.f_bar[(r, c)] * eta[c];
                }
                for l in 0..n {
                    let w = trapezoid_weight(n, l, h);
                    let node = rev.b1_bar.node(l);
                    let mut b = 0.0;
                    for c in 0..n_x {
                        b += node[r * n_x + c] * mbar(l, k, c, fault);
                    }
                    acc += w * b;
                }
                for c in 0..n_neg {
                    acc += rev.b2_bar[(r, c)] * mbar(0, k, c, fault);
                }
                for c in 0..n_pos {
                    acc += rev.b3_bar[(r, c)] * mbar(n - 1, k, n_neg + c, fault);
                }
                for c in 0..n_neg {
                    acc += rev.b4_bar[(r, c)] * kernels.n_kernel.entry(k, c, fault);
                }
                out[r] = acc;
            }
            out
        };
        let mut eta_prev = eta_at(0);
        let mut rhs_prev = rhs_at(0, &eta_prev);
        for k in 0..n_tau - 1 {
            let eta_next = eta_at(k + 1);
            let rhs_next = rhs_at(k + 1, &eta_next);
            let t_lo = k as f64 * dt;
            let t_hi = t_lo + dt;
            let excluded = ode_jumps
                .iter()
                .any(|tj| *tj > t_lo - 2.0 * dt && *tj < t_hi + 2.0 * dt);
            if !excluded {
                for r in 0..n_eta {
                    let integral = 0.5 * dt * (rhs_prev[r] + rhs_next[r]);
                    let defect = eta_next[r] - eta_prev[r] - integral;
                    num_ode += defect * defect;
                    let scale = eta_next[r].abs() + eta_prev[r].abs() + integral.abs();
                    den_ode += scale * scale;
                }
            }
            eta_prev = eta_next;
            rhs_prev = rhs_next;
        }
    }

    let rel = |num: f64, den: f64| {
        if den <= 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    };
    Ok(KernelResiduals {
        pde: rel(num_pde, den_pde),
        bc_near: rel(num_near, den_near),
        bc_far: rel(num_far, den_far),
        ode: rel(num_ode, den_ode),
    })
}
