use epidrift::config::preset;
use epidrift::pfilter::run_particle_filter;
use epidrift::studies::simulate_truth;
use std::time::Instant;

fn main() {
    let cfg = preset("exp1a").unwrap();
    let grid = cfg.grid().unwrap();
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    let t = Instant::now();
    let r = run_particle_filter(&cfg.truth, cfg.driver, &obs, cfg.n_particles, &grid, 1).unwrap();
    println!("one PF pass (N=500, 50 weeks, m=27): {:?}, ll {}", t.elapsed(), r.loglik());
    let t = Instant::now();
    for s in 0..10 {
        run_particle_filter(&cfg.truth, cfg.driver, &obs, cfg.n_particles, &grid, s).unwrap();
    }
    println!("10 passes: {:?}", t.elapsed());
}
