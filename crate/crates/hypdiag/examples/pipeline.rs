use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::diagnosis::{build_filters, run_identification, verify_io_equation};
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::residual::kernel_equation_residuals;
use hypdiag::simulate::{generate_signals, simulate_plant, SimConfig, SimSignals};
use hypdiag::trajectory::assemble_kernels;

fn main() {
    let n = 201;
    let t_total = std::time::Instant::now();
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    println!("tau+ {} tau- {} T0 {}", geo.tau_plus, geo.tau_minus, geo.t0);
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let t0 = std::time::Instant::now();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    println!("kernel solve {:?} ({} iters)", t0.elapsed(), pair.iterations);
    let target = target_matrices(&rev, &pair).unwrap();
    let t0 = std::time::Instant::now();
    let (kernels, diag) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, DEMO_DETECTION_WINDOW, None).unwrap();
    println!("assembly {:?}", t0.elapsed());
    println!("f_B = {:?}", kernels.f_b);
    println!("N max {:.3e}  M_B max {:.3e}  M_E max {:.3e}", kernels.n_kernel.max_abs(), kernels.m_b.max_abs(), kernels.m_e.max_abs());
    println!("diag: pinv {:?} junction {:?} snap {:?}", diag.pinv_residuals, diag.junction_mismatches, diag.eta0_snap_errors);
    println!("gramian min eig {:.3e} symmetry {:.3e}", diag.gramian_min_eig, diag.gramian_symmetry);
    // endpoint checks
    let nf = kernels.n_f;
    let m = kernels.m_field.as_ref().unwrap();
    let mut m0: f64 = 0.0;
    let mut mt: f64 = 0.0;
    for iz in 0..m.n_z { for r in 0..m.rows { for c in 0..m.cols {
        m0 = m0.max(m.entry(iz, 0, r, c).abs());
        mt = mt.max(m.entry(iz, m.len - 1, r, c).abs());
    }}}
    println!("M(.,0) max {m0:.3e}  M(.,T) max {mt:.3e}");
    let mut q0_err: f64 = 0.0;
    for i in 0..nf { for r in 0..kernels.n_v {
        let expect = rev.r_f[(i, r)];
        q0_err = q0_err.max((kernels.q.entry(0, r, i) - expect).abs());
    }}
    println!("Q(0) - R_f^T: {q0_err:.3e}, P(0) max {:.3e}, P(T) max {:.3e}, Q(T) max {:.3e}",
        (0..nf).flat_map(|i| (0..kernels.n_w).map(move |r| (r, i))).fold(0.0f64, |a, (r, i)| a.max(kernels.p.entry(0, r, i).abs())),
        (0..nf).flat_map(|i| (0..kernels.n_w).map(move |r| (r, i))).fold(0.0f64, |a, (r, i)| a.max(kernels.p.entry(kernels.n_tau-1, r, i).abs())),
        (0..nf).flat_map(|i| (0..kernels.n_v).map(move |r| (r, i))).fold(0.0f64, |a, (r, i)| a.max(kernels.q.entry(kernels.n_tau-1, r, i).abs())));

    let t0 = std::time::Instant::now();
    let res = kernel_equation_residuals(&rev, &geo, &kernels).unwrap();
    println!("kernel-eq residuals: pde {:.3e} bc_near {:.3e} bc_far {:.3e} ode {:.3e} ({:?})",
        res.pde, res.bc_near, res.bc_far, res.ode, t0.elapsed());

    // end-to-end identification, disturbance-free
    let t0 = std::time::Instant::now();
    let dt = kernels.tau_step / 3.0;
    let config = SimConfig::new(201, dt, 58.0);
    let steps = config.steps();
    let ics = demo_fault_ics();
    let events: Vec<_> = DEMO_OCCURRENCES.iter().zip(ics.iter()).map(|(t, v)| hypdiag::simulate::SignalEvent { time: *t, v_add: v.clone() }).collect();
    let (f, d_tilde, _) = generate_signals(&sys.signals, &events, &demo_disturbance_ic(), dt, steps, DEMO_DETECTION_WINDOW).unwrap();
    let mut signals = SimSignals { n_u: 2, n_f: 3, n_dt: 1, n_db: 2, u: vec![0.0; (steps+1)*2], f, d_tilde, d_bar: vec![0.0; (steps+1)*2] };
    signals.set_u(demo_input, dt);
    let trace = simulate_plant(&sys.plant, &config, &signals).unwrap();
    println!("simulation {:?} ({} steps)", t0.elapsed(), steps);

    let bank = build_filters(&kernels, dt).unwrap();
    let t0 = std::time::Instant::now();
    let report = run_identification(&bank, &trace.y, &trace.u).unwrap();
    println!("identification {:?}", t0.elapsed());

    // error vs true faults outside transition windows
    let t_len = DEMO_DETECTION_WINDOW;
    let mut worst = [0.0f64; 3];
    for k in 0..report.samples() {
        let t = report.time_at(k);
        let in_window = DEMO_OCCURRENCES.iter().any(|ti| t >= *ti && t < ti + t_len);
        if in_window || t < t_len { continue; }
        for i in 0..3 {
            let idx = ((t / dt).round() as usize).min(steps);
            let truth = signals_f(&trace, idx, i);
            let err = (report.estimate(k, i) - truth).abs();
            worst[i] = worst[i].max(err);
        }
    }
    println!("identification errors: {worst:?}");
    println!("amplitude scales: 2.0, ~4.4, 3.0");

    let t0 = std::time::Instant::now();
    let io = verify_io_equation(&kernels, &trace).unwrap();
    println!("io-equation residual {:.3e} (lhs {:.3e} rhs {:.3e}) in {:?}", io.relative, io.lhs_norm, io.rhs_norm, t0.elapsed());
    println!("total {:?}", t_total.elapsed());
}

fn signals_f(trace: &hypdiag::simulate::SimTrace, k: usize, i: usize) -> f64 {
    trace.f[k * trace.n_f + i]
}
