use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::grid::{BivariateMatrix, TabulatedMatrix};
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::residual::kernel_equation_residuals;
use hypdiag::trajectory::assemble_kernels;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let mut plant = sys.plant;
    plant.a = TabulatedMatrix::zeros(n, 4, 4);
    plant.d = BivariateMatrix::zeros(n, 4, 4);
    let geo = transport_geometry(&plant).unwrap();
    let rev = build_reversed_system(&plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 50).unwrap();
    println!("K max = {:.3e} (expect 0)", pair.k.iter().fold(0.0f64, |a, b| a.max(b.abs())));
    let target = target_matrices(&rev, &pair).unwrap();
    let (kernels, _) = assemble_kernels(&plant, &rev, &geo, &pair, &target, 12.0, Some(12.0 / 1000.0)).unwrap();
    let res = kernel_equation_residuals(&rev, &geo, &kernels).unwrap();
    println!("zero-coupling residuals: pde {:.3e} near {:.3e} far {:.3e} ode {:.3e}",
        res.pde, res.bc_near, res.bc_far, res.ode);

    // per-state transport defect for the zero-coupling case: kernels are
    // pure shifts, so each state's field must be constant along its own
    // characteristics
    let field = kernels.m_field.as_ref().unwrap();
    let h = 1.0 / (n - 1) as f64;
    let n_tau = kernels.n_tau;
    let dt = kernels.tau_step;
    let t = kernels.t;
    let mbar = |m: usize, k: usize, r: usize, i: usize| field.entry(n - 1 - m, k, r, i);
    for r in 0..4usize {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let mut worst: f64 = 0.0;
        let mut worst_at = (0usize, 0usize);
        for m in 0..n - 1 {
            let dtheta = geo.antiderivative(r, (m + 1) as f64 * h).unwrap() - geo.antiderivative(r, m as f64 * h).unwrap();
            for k in 0..n_tau {
                let tau_k = k as f64 * dt;
                let tau_a = tau_k + dtheta;
                if tau_a < 0.0 || tau_a > t { continue; }
                let inv = tau_k + geo.antiderivative(r, (m + 1) as f64 * h).unwrap() - geo.antiderivative(r, 0.0).unwrap();
                if [geo.tau_plus, t - geo.tau_minus].iter().any(|tj| (inv - tj).abs() < 0.1) { continue; }
                let x = (tau_a / dt).clamp(0.0, (n_tau - 1) as f64);
                let mut kk = x as usize;
                if kk >= n_tau - 1 { kk = n_tau - 2; }
                let w = x - kk as f64;
                let start = mbar(m, kk, r, 0) * (1.0 - w) + mbar(m, kk + 1, r, 0) * w;
                let end = mbar(m + 1, k, r, 0);
                let d = end - start;
                num += d * d;
                den += end * end + start * start;
                if d.abs() > worst { worst = d.abs(); worst_at = (m, k); }
            }
        }
        println!("state {r}: shift defect rel {:.3e} worst {:.3e} at (m={}, k={})",
            (num / den.max(1e-30)).sqrt(), worst, worst_at.0, worst_at.1);
    }
}
