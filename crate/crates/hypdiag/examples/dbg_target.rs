// Isolate the transport-residual problem: evaluate the target-system
// residual on m~ = T[m_bar] with each coupling convention.
use hypdiag::backstepping::{solve_kernel, target_matrices, transform, Profile};
use hypdiag::bundled::*;
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::trajectory::assemble_kernels;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let t = 12.0;
    let n_tau = 1001;
    let dt = t / (n_tau - 1) as f64;
    let (kernels, _) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t, Some(dt)).unwrap();
    let field = kernels.m_field.as_ref().unwrap();
    let h = 1.0 / (n - 1) as f64;
    let fault = 0usize;

    // m_bar(z_bar m) = M(n-1-m); m~ via forward transform per tau sample
    let mut mt = vec![0.0; n * n_tau * 4];
    for k in 0..n_tau {
        let prof = Profile::from_fn(n, 4, |z, r| {
            let m = ((z * (n - 1) as f64).round() as usize).min(n - 1);
            field.entry(n - 1 - m, k, r, fault)
        });
        let tr = transform(&pair, &prof).unwrap();
        for m in 0..n {
            for r in 0..4 {
                mt[(m * n_tau + k) * 4 + r] = tr.values[m * 4 + r];
            }
        }
    }
    let mt_at = |m: usize, k: usize, r: usize| mt[(m * n_tau + k) * 4 + r];
    let mt_interp = |m: usize, tau: f64, r: usize| -> f64 {
        let x = (tau / dt).clamp(0.0, (n_tau - 1) as f64);
        let mut k = x as usize;
        if k >= n_tau - 1 { k = n_tau - 2; }
        let w = x - k as f64;
        mt_at(m, k, r) * (1.0 - w) + mt_at(m, k + 1, r) * w
    };
    let mut theta = vec![vec![0.0; n]; 4];
    for r in 0..4 {
        for m in 0..n {
            theta[r][m] = geo.antiderivative(r, m as f64 * h).unwrap();
        }
    }
    let max_gamma = 3.0f64;
    for mode in ["minus_gamma", "raw", "plus_gamma"] {
        let a0 = |l: usize, r: usize, c: usize| -> f64 {
            match mode {
                "minus_gamma" => pair.target_a0.entry_at_node(l, r, c),
                "raw" => pair.a0_tilde.entry_at_node(l, r, c),
                _ => -pair.target_a0.entry_at_node(l, r, c),
            }
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..4usize {
            for m in 0..n - 1 {
                let dtheta = theta[r][m + 1] - theta[r][m];
                for k in 0..n_tau {
                    let tau_k = k as f64 * dt;
                    let tau_a = tau_k + dtheta;
                    if tau_a < 0.0 || tau_a > t { continue; }
                    let inv = tau_k + theta[r][m + 1] - theta[r][0];
                    let margin = 2.0 * (dt + h * max_gamma);
                    if [geo.tau_plus, t - geo.tau_minus].iter().any(|tj| (inv - tj).abs() < margin) {
                        continue;
                    }
                    // RHS_r = [A0~ m~^-(0, tau)]_r evaluated at both cell ends
                    let rhs = |l: usize, tau: f64| -> f64 {
                        let mut acc = 0.0;
                        for c in 0..2usize {
                            acc += a0(l, r, c) * mt_interp(0, tau, c);
                        }
                        acc
                    };
                    let defect = mt_at(m + 1, k, r)
                        - mt_interp(m, tau_a, r)
                        - 0.5 * h * (rhs(m, tau_a) + rhs(m + 1, tau_k));
                    num += defect * defect;
                    let scale = (mt_at(m + 1, k, r) - mt_interp(m, tau_a, r)).abs()
                        + (0.5 * h * (rhs(m, tau_a) + rhs(m + 1, tau_k))).abs();
                    den += scale * scale;
                }
            }
        }
        println!("target residual mode {mode:>12}: {:.4e}", (num / den).sqrt());
    }
}
