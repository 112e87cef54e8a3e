// timing probe (not committed)
fn main() {
    let sys = hypdiag::bundled::demo_4x4(201);
    let rev = hypdiag::model::build_reversed_system(&sys.plant, &sys.signals, 201).unwrap();
    let t0 = std::time::Instant::now();
    let pair = hypdiag::backstepping::solve_kernel(&rev, 1e-9, 200).unwrap();
    println!("n=201 solve: {:?} iterations={} inv_iters={} incr={:.2e}",
        t0.elapsed(), pair.iterations, pair.inverse_iterations, pair.final_increment);
    println!("diag resid {:.2e} edge resid {:.2e}", pair.diagonal_residual(&rev), pair.edge_residual());
    let t1 = std::time::Instant::now();
    let fp = hypdiag::backstepping::integrated_residual(&rev, &pair);
    println!("fixed-point residual {:.2e} in {:?}", fp, t1.elapsed());
}
