use epidrift::config::preset;
use epidrift::pfilter::run_particle_filter;
use epidrift::studies::simulate_truth;
use epidrift::util::{mean, variance};

fn main() {
    let cfg = preset("exp1a").unwrap();
    let grid = cfg.grid().unwrap();
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    for n in [250usize, 500, 1000, 2000] {
        let lls: Vec<f64> = (0..30)
            .map(|s| run_particle_filter(&cfg.truth, cfg.driver, &obs, n, &grid, 1000 + s).unwrap().loglik())
            .collect();
        println!("N={n}: mean {:.2} sd {:.3}", mean(&lls), variance(&lls).sqrt());
    }
}
