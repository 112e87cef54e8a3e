// Compare candidate target-coupling conventions via the (21a) residual,
// and scan detection windows for kernel amplitude.
use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::grid::TabulatedMatrix;
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::residual::kernel_equation_residuals;
use hypdiag::trajectory::assemble_kernels;
use nalgebra::DMatrix;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();

    for mode in ["minus_gamma", "raw", "plus_gamma"] {
        let mut p2 = pair.clone();
        p2.target_a0 = match mode {
            "minus_gamma" => pair.target_a0.clone(),
            "raw" => pair.a0_tilde.clone(),
            _ => {
                // +Gamma_bar * a0_tilde = -target_a0
                TabulatedMatrix::from_fn(n, 4, 2, |z| {
                    let m = ((z * (n - 1) as f64).round() as usize).min(n - 1);
                    let mut t = DMatrix::zeros(4, 2);
                    for i in 0..4 {
                        for j in 0..2 {
                            t[(i, j)] = -pair.target_a0.entry_at_node(m, i, j);
                        }
                    }
                    t
                })
                .unwrap()
            }
        };
        let (kernels, _diag) =
            assemble_kernels(&sys.plant, &rev, &geo, &p2, &target, 12.0, Some(12.0 / 1000.0)).unwrap();
        let res = kernel_equation_residuals(&rev, &geo, &kernels).unwrap();
        println!(
            "mode {mode:>12}: pde {:.3e} ode {:.3e} bc_far {:.3e} | N max {:.3e} f_B {:?}",
            res.pde, res.ode, res.bc_far, kernels.n_kernel.max_abs(),
            kernels.f_b.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>()
        );
    }

    // window scan with the derived convention
    for t in [12.0, 16.0, 20.0, 24.0] {
        let (kernels, _):(hypdiag::trajectory::DiagnosisKernels, _) =
            assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t, Some(t / 1000.0)).unwrap();
        let res = kernel_equation_residuals(&rev, &geo, &kernels).unwrap();
        println!(
            "T = {t:>4}: N max {:.3e} f_B {:?} pde {:.3e} ode {:.3e}",
            kernels.n_kernel.max_abs(),
            kernels.f_b.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>(),
            res.pde, res.ode
        );
    }
}
