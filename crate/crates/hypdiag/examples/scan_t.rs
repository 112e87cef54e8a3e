use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::diagnosis::{build_filters, run_identification, verify_io_equation};
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::residual::kernel_equation_residuals;
use hypdiag::simulate::{generate_signals, simulate_plant, SimConfig, SimSignals, SignalEvent};
use hypdiag::trajectory::assemble_kernels;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let t_window: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(16.0);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(201);
    let n_sim: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(201);
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let (kernels, _diag) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t_window, None).unwrap();
    let res = kernel_equation_residuals(&rev, &geo, &kernels).unwrap();
    println!("T={t_window} n={n}: N max {:.3e} f_B {:?}", kernels.n_kernel.max_abs(),
        kernels.f_b.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>());
    println!("residuals: pde {:.3e} near {:.3e} far {:.3e} ode {:.3e}", res.pde, res.bc_near, res.bc_far, res.ode);

    // identification run
    let gap = t_window + 2.0;
    let occurrences = [gap, 2.0 * gap, 3.0 * gap];
    let horizon = 3.0 * gap + t_window + 2.0;
    let dz = 1.0 / (n_sim - 1) as f64;
    let cfl = dz / 2.0;
    let mut div = (kernels.tau_step / cfl).ceil() as usize;
    if div == 0 { div = 1; }
    let dt = kernels.tau_step / div as f64;
    let config = SimConfig::new(n_sim, dt, horizon);
    let steps = config.steps();
    let ics = demo_fault_ics();
    let events: Vec<_> = occurrences.iter().zip(ics.iter()).map(|(t, v)| SignalEvent { time: *t, v_add: v.clone() }).collect();
    let (f, d_tilde, _) = generate_signals(&sys.signals, &events, &demo_disturbance_ic(), dt, steps, t_window).unwrap();
    let mut signals = SimSignals { n_u: 2, n_f: 3, n_dt: 1, n_db: 2, u: vec![0.0; (steps + 1) * 2], f, d_tilde, d_bar: vec![0.0; (steps + 1) * 2] };
    signals.set_u(demo_input, dt);
    let t0 = std::time::Instant::now();
    let trace = simulate_plant(&sys.plant, &config, &signals).unwrap();
    let bank = build_filters(&kernels, dt).unwrap();
    let report = run_identification(&bank, &trace.y, &trace.u).unwrap();
    println!("sim+id in {:?} (dt = {dt:.2e}, {} steps)", t0.elapsed(), steps);
    let mut worst = [0.0f64; 3];
    for k in 0..report.samples() {
        let t = report.time_at(k);
        if t < t_window || occurrences.iter().any(|ti| t >= *ti && t < ti + t_window) { continue; }
        let idx = ((t / dt).round() as usize).min(steps);
        for i in 0..3 {
            let err = (report.estimate(k, i) - trace.f[idx * 3 + i]).abs();
            worst[i] = worst[i].max(err);
        }
    }
    let scale = [2.0, 1.0 + 0.1 * (horizon - occurrences[1]), 3.0];
    println!("id errors {:?} rel {:?}", worst, worst.iter().zip(scale.iter()).map(|(e, s)| format!("{:.4}", e / s)).collect::<Vec<_>>());
    let io = verify_io_equation(&kernels, &trace).unwrap();
    println!("io residual {:.3e}", io.relative);
}
