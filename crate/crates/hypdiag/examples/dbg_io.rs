// Test the time-domain kernel identities directly:
//   P' = F^T P + H2^T M_+(0) + <H1, M>
//   Q' = S^T Q + R_f^T M_E + R_d^T M_Gt
//   N  = M_-(0) + Q0^T M_+(0) + <A0, M> + L2^T P
use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::trajectory::assemble_kernels;
use nalgebra::DMatrix;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let t = 16.0;
    let (k, _) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t, Some(t / 1600.0)).unwrap();
    let dt = k.tau_step;
    let n_tau = k.n_tau;
    let s_t = sys.signals.s().transpose();
    let f_t = sys.plant.f.transpose();
    let jumps = [geo.tau_plus, t - geo.tau_minus];

    let mut q_num = 0.0f64;
    let mut q_den = 0.0f64;
    let mut p_num = 0.0f64;
    let mut p_den = 0.0f64;
    for kk in 1..n_tau - 1 {
        let tau = kk as f64 * dt;
        if jumps.iter().any(|tj| (tau - tj).abs() < 3.0 * dt) { continue; }
        let qd = (k.q.matrix_at(kk + 1) - k.q.matrix_at(kk - 1)) / (2.0 * dt);
        let rhs_q = &s_t * k.q.matrix_at(kk) + rev.r_f.transpose() * k.m_e.matrix_at(kk)
            + sys.signals.r_d().transpose() * k.m_gt.matrix_at(kk);
        q_num += (&qd - &rhs_q).norm_squared();
        q_den += qd.norm_squared() + rhs_q.norm_squared();

        let pd = (k.p.matrix_at(kk + 1) - k.p.matrix_at(kk - 1)) / (2.0 * dt);
        // M_+(0, tau) from the stored field
        let field = k.m_field.as_ref().unwrap();
        let mut m_plus0 = DMatrix::zeros(2, 3);
        for r in 0..2 { for c in 0..3 { m_plus0[(r, c)] = field.entry(0, kk, 2 + r, c); } }
        let rhs_p = &f_t * k.p.matrix_at(kk) + sys.plant.h2.transpose() * m_plus0;
        p_num += (&pd - &rhs_p).norm_squared();
        p_den += pd.norm_squared() + rhs_p.norm_squared();
    }
    println!("Q-equation rel defect: {:.3e}", (q_num / q_den).sqrt());
    println!("P-equation rel defect: {:.3e}", (p_num / p_den).sqrt());

    // N relation at a few tau samples
    let field = k.m_field.as_ref().unwrap();
    let h = 1.0 / (n - 1) as f64;
    let mut n_num = 0.0f64;
    let mut n_den = 0.0f64;
    for kk in (0..n_tau).step_by(16) {
        let mut m0 = DMatrix::zeros(4, 3);
        for r in 0..4 { for c in 0..3 { m0[(r, c)] = field.entry(0, kk, r, c); } }
        let m_minus0 = m0.rows(0, 2).clone_owned();
        let m_plus0 = m0.rows(2, 2).clone_owned();
        let nk = k.n_kernel.matrix_at(kk);
        let pk = k.p.matrix_at(kk);
        // <A0, M> = int A0^T(z) M(z, tau) dz  (A0 = 0 for the demo)
        let lhs = m_minus0.clone();
        let rhs = -sys.plant.q0.transpose() * &m_plus0 - sys.plant.l2.transpose() * &pk + &nk;
        let _ = h;
        n_num += (&lhs - &rhs).norm_squared();
        n_den += lhs.norm_squared() + rhs.norm_squared();
    }
    println!("N-relation rel defect: {:.3e}", (n_num / n_den).sqrt());
}
