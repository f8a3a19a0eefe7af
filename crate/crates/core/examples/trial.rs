use epidrift::config::preset;
use epidrift::dynamics::TimeGrid;
use epidrift::mcmc::{run_pmmh, PfTarget, PmmhConfig, ProposalCovariance};
use epidrift::model::ParamSet;
use epidrift::pfilter::ResampleScheme;
use epidrift::studies::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let t = Instant::now();
    match which.as_str() {
        "c2" => c2(),
        "c3" => c3(),
        "c4" => c4(),
        "c5" => c5(),
        "c6" => c6(),
        "c7" => c7(),
        "c8" => c8(),
        "c10" => c10(),
        "probe10" => probe10(),
        other => panic!("unknown trial {other}"),
    }
    println!("elapsed: {:?}", t.elapsed());
}

fn coverage(out: &epidrift::mcmc::ChainOutput, truth: &[f64]) -> f64 {
    let bands = beta_bands(out, 0, &[0.025, 0.975]).unwrap();
    let mut hit = 0usize;
    for (row, b) in bands.iter().zip(truth) {
        if row[0] <= *b && *b <= row[1] {
            hit += 1;
        }
    }
    hit as f64 / truth.len() as f64
}

fn c2() {
    let cfg = preset("exp1a").unwrap();
    let grid = cfg.grid().unwrap();
    let (paths, _, obs) = simulate_truth(&cfg).unwrap();
    let (cov, _) = epidrift::ekf::ek_mcmc(&cfg.priors, cfg.driver, &grid, &obs, &cfg.truth, 2000, 99).unwrap();
    let mode = epidrift::ekf::ek_mode(&cfg.priors, cfg.driver, &grid, &obs, &cfg.truth).unwrap();
    let target = PfTarget {
        spec: &cfg.priors,
        driver: cfg.driver,
        grid: &grid,
        data: &obs,
        n_particles: cfg.n_particles,
        resample: ResampleScheme::Systematic,
    };
    let out = run_pmmh(&target, &cfg.priors, &mode.params, &cov, &cfg.pmmh().unwrap()).unwrap();
    {
        let et = &out.eps_trace;
        println!("eps: start {} mid {} end {}", et[0], et[et.len() / 2], et[et.len() - 1]);
    }
    let names = cfg.priors.coordinate_names();
    let q = posterior_quantiles(&out, &cfg.priors, &[0.025, 0.5, 0.975]).unwrap();
    for (n, row) in names.iter().zip(&q) {
        println!("{n}: {:?}", row);
    }
    let truth_beta: Vec<f64> =
        (0..grid.n_obs()).map(|i| paths[0].x[grid.obs_point(i)].exp()).collect();
    println!("acc {} minesspct {}", out.acc_rate_post(), min_ess_pct(&out));
    println!("beta coverage: {}", coverage(&out, &truth_beta));
}

fn c3() {
    let cfg = preset("exp2a").unwrap();
    let grid = cfg.grid().unwrap();
    let (paths, _, obs) = simulate_truth(&cfg).unwrap();
    let (cov, _) = epidrift::ekf::ek_mcmc(&cfg.priors, cfg.driver, &grid, &obs, &cfg.truth, 2000, 98).unwrap();
    let mode = epidrift::ekf::ek_mode(&cfg.priors, cfg.driver, &grid, &obs, &cfg.truth).unwrap();
    let target = PfTarget {
        spec: &cfg.priors,
        driver: cfg.driver,
        grid: &grid,
        data: &obs,
        n_particles: cfg.n_particles,
        resample: ResampleScheme::Systematic,
    };
    let out = run_pmmh(&target, &cfg.priors, &mode.params, &cov, &cfg.pmmh().unwrap()).unwrap();
    println!("acc {} min_ess {:.3}", out.acc_rate_post(), min_ess_pct(&out));
    let names = cfg.priors.coordinate_names();
    let q = posterior_quantiles(&out, &cfg.priors, &[0.025, 0.5, 0.975]).unwrap();
    for (n, row) in names.iter().zip(&q) {
        println!("{n}: {:?}", row);
    }
    let truth_beta: Vec<f64> =
        (0..grid.n_obs()).map(|i| paths[0].x[grid.obs_point(i)].exp()).collect();
    println!("beta coverage: {}", coverage(&out, &truth_beta));
}

fn c4() {
    let mut p = ParamSet::seir_template();
    p.sigma = 0.07;
    p.obs_sd = 0.1;
    let grid = TimeGrid::weekly(20, 13);
    let rep = ekf_pf_benchmark(&p, &grid, 20, 500, 20, 2.0, 42).unwrap();
    println!("{rep:?}");
}

fn c5() {
    let mut cfg = preset("exp1a").unwrap();
    cfg.n_weeks = 20;
    cfg.delta = None;
    cfg.substeps = Some(6);
    let grid = cfg.grid().unwrap();
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    let rows =
        adapt_ess_study(&cfg.priors, cfg.driver, &grid, &obs, &cfg.truth, 300, 20000, 2000, 31)
            .unwrap();
    for r in rows {
        println!("{} adapt_cov={} min_ess_pct={:.5} acc={:.4}", r.scheme, r.adapt_cov, r.min_ess_pct, r.acc_rate);
    }
}

fn c6() {
    let mut cfg = preset("exp1a").unwrap();
    cfg.n_weeks = 30;
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    let rows =
        euler_convergence_study(&cfg.truth, cfg.driver, &obs, &[2.0, 1.0, 0.5, 0.25], 300, 20, 11)
            .unwrap();
    for r in &rows {
        println!("delta {} m {} mean {} sd {}", r.delta, r.substeps, r.mean_loglik, r.sd_loglik);
    }
    for tau in [0.1, 0.05] {
        let mut c = cfg.clone();
        c.n_weeks = 20;
        c.delta = Some(0.5);
        c.truth.obs_sd = tau;
        let grid = c.grid().unwrap();
        let (_, _, obs) = simulate_truth(&c).unwrap();
        let rows = nparts_study(
            &c.truth,
            c.driver,
            &grid,
            &obs,
            &[25, 50, 100, 200, 400, 800],
            100,
            13,
        )
        .unwrap();
        println!("tau {tau}:");
        for r in &rows {
            println!("  N {} acc {:.4} sd {:.4}", r.n_particles, r.acc_rate, r.sd_loglik);
        }
    }
}

fn c7() {
    use epidrift::gibbs::{run_particle_gibbs_reparam, GibbsConfig};
    use epidrift::mcmc::ess;
    use epidrift::model::{ParamField, Prior, PriorSpec};
    let mut p = ParamSet::seir_template();
    p.sigma = 0.07;
    p.obs_sd = 0.1;
    let grid = TimeGrid::weekly(10, 69);
    let path = epidrift::dynamics::simulate_driver(epidrift::dynamics::DriverKind::Bm, &p, &grid, 60).unwrap();
    let traj = epidrift::dynamics::propagate_ode(&p, std::slice::from_ref(&path)).unwrap();
    let obs = epidrift::observation::simulate_observations(&traj, p.obs_sd, p.reporting, 61).unwrap();

    let n_iter = 1500;
    let mut gcfg = GibbsConfig::new(n_iter, 19);
    gcfg.n_particles = 100;
    let gibbs = run_particle_gibbs_reparam(&p, epidrift::dynamics::DriverKind::Bm, &grid, &obs, &gcfg).unwrap();
    let gs: Vec<f64> = gibbs.draws[gibbs.burnin..].iter().map(|d| d[0]).collect();

    let mut spec = PriorSpec::all_point_mass(&p);
    spec.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
    let mut cfg = PmmhConfig::new(n_iter, 23);
    cfg.path_thin = 0;
    let target = PfTarget {
        spec: &spec,
        driver: epidrift::dynamics::DriverKind::Bm,
        grid: &grid,
        data: &obs,
        n_particles: 100,
        resample: ResampleScheme::Systematic,
    };
    let pmmh = run_pmmh(&target, &spec, &p, &ProposalCovariance::identity(1), &cfg).unwrap();
    let ps: Vec<f64> = pmmh.draws[pmmh.burnin..].iter().map(|d| d[0]).collect();
    let eg = ess(&gs) / gs.len() as f64;
    let ep = ess(&ps) / ps.len() as f64;
    println!("gibbs eff {:.4}% pmmh eff {:.4}% ratio {:.3}", 100.0 * eg, 100.0 * ep, eg / ep);
}

fn c8() {
    use epidrift::model::{ParamField, Prior, PriorSpec};
    let cfg = preset("twolevel-desk").unwrap();
    let (_, traj, obs) = simulate_truth(&cfg).unwrap();
    {
        let grid = cfg.grid().unwrap();
        let last = traj.states.last().unwrap()[0].clone();
        println!("final S {:.0} of {:.0}", last.s, cfg.truth.population);
        let _ = grid;
        let y: Vec<f64> = obs.values.iter().map(|v| v[0]).collect();
        println!("cases {:?}", y.iter().map(|v| *v as i64).collect::<Vec<_>>());
    }
    let substeps = cfg.resolve_substeps().unwrap();
    let base = cfg.truth.clone();
    // only the path volatility, noise and initial level are free: the
    // real-time question is about the latent path under each assumed c
    let spec_for_c = move |c: f64| {
        let mut s = PriorSpec::informative_seir(1.0 / c, base.population);
        s.set(ParamField::LatentRate, Prior::PointMass { value: base.latent_rate });
        s.set(ParamField::RecoveryRate, Prior::PointMass { value: base.recovery_rate });
        s.set(ParamField::InitFracs, Prior::PointMassFracs { value: base.init_fracs });
        s
    };
    let base2 = cfg.truth.clone();
    let init_for_c = move |c: f64| {
        let mut p = base2.clone();
        p.reporting = 1.0 / c;
        p
    };
    let mut pm = PmmhConfig::new(3000, 77);
    pm.path_thin = 5;
    let rows = realtime_study(
        &spec_for_c,
        &init_for_c,
        cfg.driver,
        &obs,
        substeps,
        &[105.0],
        &[2.0, 5.0, 10.0, 20.0, 40.0, 70.0, 100.0],
        6,
        300,
        &pm,
    )
    .unwrap();
    for r in rows {
        println!("cutoff {} c {} q {:?}", r.cutoff, r.c, r.quantiles);
    }
}

fn probe10() {
    let mut cfg = preset("twolevel-desk").unwrap();
    cfg.two_level = None;
    cfg.truth.beta0 = 1.35;
    cfg.seed = 21;
    let grid = cfg.grid().unwrap();
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    let r0 = cfg.truth.beta0 / cfg.truth.recovery_rate;
    let mut specs = vec![("base".to_string(), 0.0f64, sensitivity_spec(cfg.truth.reporting, cfg.truth.population, r0))];
    for t in [TiltTarget::R0, TiltTarget::LatentPeriod, TiltTarget::InfectiousPeriod] {
        for pct in [-20.0, -10.0, 10.0, 20.0] {
            specs.push((format!("{:?}", t), pct, tilted_spec(cfg.truth.reporting, cfg.truth.population, r0, t, pct)));
        }
    }
    for (name, pct, spec) in &specs {
        match epidrift::ekf::ek_mode(spec, cfg.driver, &grid, &obs, &cfg.truth) {
            Ok(m) => {
                let diag: Vec<f64> = (0..spec.dim()).map(|i| m.cov.matrix[(i, i)]).collect();
                let pf = epidrift::pfilter::run_particle_filter(&m.params, cfg.driver, &obs, 200, &grid, 7)
                    .map(|r| r.loglik())
                    .unwrap_or(f64::NEG_INFINITY);
                println!("{name} {pct:+}: logpost {:.2} pf {:.2} diag {:?}", m.log_post, pf, diag);
            }
            Err(e) => println!("{name} {pct:+}: ek_mode error {e}"),
        }
    }
}

fn c10() {
    let mut cfg = preset("twolevel-desk").unwrap();
    cfg.two_level = None;
    cfg.truth.beta0 = 1.35;
    cfg.seed = 21;
    let grid = cfg.grid().unwrap();
    let (_, _, obs) = simulate_truth(&cfg).unwrap();
    let r0 = cfg.truth.beta0 / cfg.truth.recovery_rate;
    let mut pm = PmmhConfig::new(2000, 55);
    pm.burnin = 400;
    pm.path_thin = 5;
    let rep = sensitivity_study(
        cfg.truth.reporting,
        cfg.truth.population,
        r0,
        cfg.driver,
        &grid,
        &obs,
        &cfg.truth,
        200,
        &pm,
        &[-20.0, -10.0, 10.0, 20.0],
    )
    .unwrap();
    println!("names {:?}", rep.names);
    for (j, n) in rep.names.iter().enumerate() {
        println!("baseline {n}: {:?}", rep.baseline[j]);
    }
    for row in &rep.rows {
        println!(
            "{} {:+} in95={} in50={} beta50={:.2}",
            row.target, row.tilt_pct, row.medians_in_95, row.medians_in_50, row.beta_median_in_50_frac
        );
        for (j, n) in rep.names.iter().enumerate() {
            let m = row.medians[j];
            if m < rep.baseline[j][0] || m > rep.baseline[j][4] {
                println!("  out95 {n}: median {m} vs [{}, {}]", rep.baseline[j][0], rep.baseline[j][4]);
            }
        }
    }
}
