//! Command-line front end: simulation, filtering, inference and the
//! shipped experiment harnesses.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use epidrift::config::{preset, RunConfig};
use epidrift::dynamics::TimeGrid;
use epidrift::ekf::{ek_mcmc, ek_mode, ekf_loglik};
use epidrift::error::{Error, Result};
use epidrift::gibbs::{run_particle_gibbs_reparam, GibbsConfig};
use epidrift::io;
use epidrift::mcmc::{
    dic, efficiency, ess, run_pmmh, ChainOutput, MifConfig, PfTarget, ProposalCovariance,
    Target,
};
use epidrift::model::{
    constrained_coordinates, to_unconstrained, ParamField, Prior, PriorSpec,
    UnconstrainedVector,
};
use epidrift::observation::ObservationSeries;
use epidrift::pfilter::{run_particle_filter, ResampleScheme};
use epidrift::studies;
use epidrift::util::{mean, quantile};

const BAND_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Parser)]
#[command(name = "epidrift", about = "Diffusion-driven SEIR inference toolkit", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset (see `--preset help`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker count; this build runs sequentially and accepts the flag for
    /// interface compatibility.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate truth paths, trajectories and observations.
    Simulate,
    /// Particle filter at the configured parameters.
    Filter {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Extended Kalman filter at the configured parameters.
    Ekf {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Full PMMH inference with posterior bands.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Proposal covariance seed: identity | ek-mode | ek-mcmc.
        #[arg(long, default_value = "identity")]
        proposal: String,
        /// Iterations of the EKF chain backing the ek-mcmc seed.
        #[arg(long, default_value_t = 2000)]
        ekf_iters: usize,
    },
    /// Tuning and comparison studies.
    Benchmark {
        /// euler | nparts | ekf-vs-pf | adapt-ess.
        #[arg(long)]
        study: String,
    },
    /// Prior-mean tilt sensitivity runs.
    Sensitivity {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Tilt percentages applied to each informative prior mean.
        #[arg(long, value_delimiter = ',', default_values_t = vec![-20.0, -10.0, 10.0, 20.0])]
        tilts: Vec<f64>,
    },
    /// Real-time reruns over cutoffs and assumed reporting factors.
    Realtime {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cutoffs in days; defaults to the full series.
        #[arg(long, value_delimiter = ',')]
        cutoffs: Vec<f64>,
        /// Assumed reporting factors to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 5.0, 10.0, 20.0, 40.0, 70.0, 100.0])]
        c_values: Vec<f64>,
        /// Comparison lag in observation intervals.
        #[arg(long, default_value_t = 2)]
        lag: usize,
    },
    /// Reparametrised particle Gibbs against matched-budget PMMH.
    GibbsDemo,
    /// Iterated-filtering point estimation.
    Mif {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        passes: usize,
    },
    /// Posterior summary of a draws.csv file.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        /// Fraction of the chain discarded as burn-in.
        #[arg(long, default_value_t = 0.2)]
        burnin_frac: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either --config or --preset, not both".into()))
        }
        (None, None) => {
            return Err(Error::Config("a run needs --config PATH or --preset NAME".into()))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Observations and matching grid: an explicit data file wins, otherwise
/// the truth described by the configuration is simulated.
fn load_data(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<(TimeGrid, ObservationSeries)> {
    match data {
        Some(path) => {
            let obs = io::read_observations(path)?;
            let grid = TimeGrid::new(0.0, obs.times.clone(), cfg.resolve_substeps()?)?;
            Ok((grid, obs))
        }
        None => {
            let (_, _, obs) = studies::simulate_truth(cfg)?;
            Ok((cfg.grid()?, obs))
        }
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    ensure_out(&cli.out)?;
    if cli.threads > 1 {
        eprintln!("note: this build runs sequentially; --threads ignored");
    }
    match &cli.cmd {
        Cmd::Simulate => cmd_simulate(&cfg, &cli.out),
        Cmd::Filter { data } => cmd_filter(&cfg, data, &cli.out),
        Cmd::Ekf { data } => cmd_ekf(&cfg, data, &cli.out),
        Cmd::Infer { data, proposal, ekf_iters } => {
            cmd_infer(&cfg, data, proposal, *ekf_iters, &cli.out)
        }
        Cmd::Benchmark { study } => cmd_benchmark(&cfg, study, &cli.out),
        Cmd::Sensitivity { data, tilts } => cmd_sensitivity(&cfg, data, tilts, &cli.out),
        Cmd::Realtime { data, cutoffs, c_values, lag } => {
            cmd_realtime(&cfg, data, cutoffs, c_values, *lag, &cli.out)
        }
        Cmd::GibbsDemo => cmd_gibbs_demo(&cfg, &cli.out),
        Cmd::Mif { data, passes } => cmd_mif(&cfg, data, *passes, &cli.out),
        Cmd::Summarize { draws, burnin_frac } => cmd_summarize(draws, *burnin_frac, &cli.out),
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (paths, traj, obs) = studies::simulate_truth(cfg)?;
    io::write_latent_paths(out.join("latent.csv"), &paths)?;
    io::write_trajectory(out.join("trajectory.csv"), &traj)?;
    io::write_observations(out.join("data.csv"), &obs)?;
    io::write_meta(out.join("meta.json"), cfg, serde_json::json!({"command": "simulate"}))?;
    println!(
        "simulate: {} weeks, {} group(s) -> {}",
        obs.n_obs(),
        obs.n_groups(),
        out.display()
    );
    Ok(())
}

fn cmd_filter(cfg: &RunConfig, data: &Option<PathBuf>, out: &Path) -> Result<()> {
    let (grid, obs) = load_data(cfg, data)?;
    let fr = run_particle_filter(&cfg.truth, cfg.driver, &obs, cfg.n_particles, &grid, cfg.seed)?;
    if fr.degenerate() {
        return Err(Error::Degenerate("the filter degenerated at the configured parameters".into()));
    }
    let mut w = csv::Writer::from_path(out.join("filter.csv"))?;
    w.write_record(["time_days", "group", "beta", "s", "e", "i", "r", "incidence"])?;
    let labels = ["c", "a"];
    for (i, means) in fr.inner.filter_means.iter().enumerate() {
        for g in 0..means.len() / 6 {
            let b = &means[6 * g..6 * g + 6];
            let mut rec = vec![obs.times[i].to_string(), labels[g].to_string()];
            rec.extend(b.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({"command": "filter", "loglik": fr.loglik()}),
    )?;
    println!("filter: loglik {:.4}", fr.loglik());
    Ok(())
}

fn cmd_ekf(cfg: &RunConfig, data: &Option<PathBuf>, out: &Path) -> Result<()> {
    let (grid, obs) = load_data(cfg, data)?;
    let r = ekf_loglik(&cfg.truth, cfg.driver, &grid, &obs)?;
    let mut w = csv::Writer::from_path(out.join("ekf.csv"))?;
    w.write_record(["time_days", "s", "e", "i", "r", "incidence", "beta", "beta_sd_log"])?;
    for (i, m) in r.means.iter().enumerate() {
        w.write_record(&[
            obs.times[i].to_string(),
            m[0].to_string(),
            m[1].to_string(),
            m[2].to_string(),
            m[3].to_string(),
            m[4].to_string(),
            m[5].exp().to_string(),
            r.covs[i][(5, 5)].max(0.0).sqrt().to_string(),
        ])?;
    }
    w.flush()?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({"command": "ekf", "loglik": r.loglik}),
    )?;
    println!("ekf: loglik {:.4}", r.loglik);
    Ok(())
}

fn cmd_infer(
    cfg: &RunConfig,
    data: &Option<PathBuf>,
    proposal: &str,
    ekf_iters: usize,
    out: &Path,
) -> Result<()> {
    let (grid, obs) = load_data(cfg, data)?;
    let spec = &cfg.priors;
    let target = PfTarget {
        spec,
        driver: cfg.driver,
        grid: &grid,
        data: &obs,
        n_particles: cfg.n_particles,
        resample: ResampleScheme::Systematic,
    };
    let (cov, start) = match proposal {
        "identity" => (ProposalCovariance::identity(spec.dim()), cfg.truth.clone()),
        "ek-mode" => {
            let m = ek_mode(spec, cfg.driver, &grid, &obs, &cfg.truth)?;
            (m.cov, m.params)
        }
        "ek-mcmc" => {
            let m = ek_mode(spec, cfg.driver, &grid, &obs, &cfg.truth)?;
            let (cov, _) =
                ek_mcmc(spec, cfg.driver, &grid, &obs, &cfg.truth, ekf_iters, cfg.seed)?;
            (cov, m.params)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown proposal '{other}'; use identity, ek-mode or ek-mcmc"
            )))
        }
    };
    let pmmh_cfg = cfg.pmmh()?;
    let chain = run_pmmh(&target, spec, &start, &cov, &pmmh_cfg)?;
    write_inference_artifacts(cfg, spec, &target, &chain, &obs, out)?;
    println!(
        "infer: {} iterations, acceptance {:.3}, proposal {:?}",
        cfg.n_iter,
        chain.acc_rate_post(),
        chain.cov_provenance
    );
    Ok(())
}

fn write_inference_artifacts(
    cfg: &RunConfig,
    spec: &PriorSpec,
    target: &PfTarget,
    chain: &ChainOutput,
    obs: &ObservationSeries,
    out: &Path,
) -> Result<()> {
    io::write_draws(out.join("draws.csv"), chain, spec)?;
    io::write_paths(out.join("paths.csv"), chain)?;

    let n_groups = obs.n_groups();
    let mut w = csv::Writer::from_path(out.join("bands.csv"))?;
    let mut header = vec!["series".to_string(), "time_days".to_string()];
    header.extend(BAND_PROBS.iter().map(|p| format!("q{}", (p * 1000.0).round() / 10.0)));
    w.write_record(&header)?;
    let labels = ["c", "a"];
    for g in 0..n_groups {
        for (name, bands) in [
            ("beta", studies::beta_bands(chain, g, &BAND_PROBS)?),
            ("incidence", studies::incidence_bands(chain, g, &BAND_PROBS)?),
        ] {
            for (t, row) in obs.times.iter().zip(&bands) {
                let mut rec = vec![format!("{name}_{}", labels[g]), t.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;

    // deviance summaries for model comparison
    let post = &chain.logliks[chain.burnin..];
    let deviances: Vec<f64> = post.iter().map(|l| -2.0 * l).collect();
    let mean_v = chain.posterior_mean_unconstrained();
    let at_mean = target.estimate(&mean_v, cfg.seed ^ 0x6d65616e)?;
    let (dic_v, p_d) = dic(&deviances, -2.0 * at_mean.loglik)?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({
            "command": "infer",
            "acc_rate": chain.acc_rate_post(),
            "min_ess_pct": studies::min_ess_pct(chain),
            "proposal": format!("{:?}", chain.cov_provenance),
            "dic": dic_v,
            "p_d": p_d,
        }),
    )?;
    Ok(())
}

fn cmd_benchmark(cfg: &RunConfig, study: &str, out: &Path) -> Result<()> {
    let (grid, obs) = load_data(cfg, &None)?;
    match study {
        "euler" => {
            let deltas = [1.0, 0.5, 0.25, 0.125];
            let rows = studies::euler_convergence_study(
                &cfg.truth,
                cfg.driver,
                &obs,
                &deltas,
                cfg.n_particles,
                20,
                cfg.seed,
            )?;
            io::write_report(out.join("report.csv"), &rows)?;
        }
        "nparts" => {
            let counts = [25, 50, 100, 200, 400, 800, 1600];
            let rows = studies::nparts_study(
                &cfg.priors,
                &cfg.truth,
                cfg.driver,
                &grid,
                &obs,
                &counts,
                30,
                2000,
                cfg.seed,
            )?;
            io::write_report(out.join("report.csv"), &rows)?;
        }
        "ekf-vs-pf" => {
            let rep = studies::ekf_pf_benchmark(
                &cfg.truth,
                &grid,
                20,
                cfg.n_particles,
                20,
                2.0,
                cfg.seed,
            )?;
            io::write_report(out.join("report.csv"), std::slice::from_ref(&rep))?;
        }
        "adapt-ess" => {
            let rows = studies::adapt_ess_study(
                &cfg.priors,
                cfg.driver,
                &grid,
                &obs,
                &cfg.truth,
                cfg.n_particles,
                cfg.n_iter,
                2000,
                cfg.seed,
            )?;
            io::write_report(out.join("report.csv"), &rows)?;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown study '{other}'; use euler, nparts, ekf-vs-pf or adapt-ess"
            )))
        }
    }
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({"command": "benchmark", "study": study}),
    )?;
    println!("benchmark {study}: report at {}", out.join("report.csv").display());
    Ok(())
}

fn cmd_sensitivity(
    cfg: &RunConfig,
    data: &Option<PathBuf>,
    tilts: &[f64],
    out: &Path,
) -> Result<()> {
    let (grid, obs) = load_data(cfg, data)?;
    let r0_mean = cfg.truth.beta0 / cfg.truth.recovery_rate;
    let rep = studies::sensitivity_study(
        cfg.truth.reporting,
        cfg.truth.population,
        r0_mean,
        cfg.driver,
        &grid,
        &obs,
        &cfg.truth,
        cfg.n_particles,
        &cfg.pmmh()?,
        tilts,
    )?;
    io::write_report(out.join("report.csv"), &rep.rows)?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({
            "command": "sensitivity",
            "names": rep.names,
            "baseline_quantiles": rep.baseline,
        }),
    )?;
    let all_in = rep.rows.iter().all(|r| r.medians_in_95);
    println!("sensitivity: {} runs, all medians in baseline 95%: {all_in}", rep.rows.len());
    Ok(())
}

fn cmd_realtime(
    cfg: &RunConfig,
    data: &Option<PathBuf>,
    cutoffs: &[f64],
    c_values: &[f64],
    lag: usize,
    out: &Path,
) -> Result<()> {
    let (_, obs) = load_data(cfg, data)?;
    let cutoffs: Vec<f64> = if cutoffs.is_empty() {
        vec![*obs.times.last().unwrap()]
    } else {
        cutoffs.to_vec()
    };
    // c counts true infections per recorded case; the model's reporting
    // parameter is its reciprocal
    let base_spec = cfg.priors.clone();
    let base_truth = cfg.truth.clone();
    let spec_for_c = move |c: f64| {
        let mut s = base_spec.clone();
        s.set(ParamField::Reporting, Prior::PointMass { value: 1.0 / c });
        s
    };
    let init_for_c = move |c: f64| {
        let mut p = base_truth.clone();
        p.reporting = 1.0 / c;
        p
    };
    let rows = studies::realtime_study(
        &spec_for_c,
        &init_for_c,
        cfg.driver,
        &obs,
        cfg.resolve_substeps()?,
        &cutoffs,
        c_values,
        lag,
        cfg.n_particles,
        &cfg.pmmh()?,
    )?;
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    let mut header = vec!["cutoff_days".to_string(), "c".to_string()];
    header.extend(BAND_PROBS.iter().map(|p| format!("q{}", (p * 1000.0).round() / 10.0)));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.cutoff.to_string(), r.c.to_string()];
        rec.extend(r.quantiles.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({"command": "realtime", "lag": lag}),
    )?;
    println!("realtime: {} rows", rows.len());
    Ok(())
}

fn cmd_gibbs_demo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (grid, obs) = load_data(cfg, &None)?;
    let mut gcfg = GibbsConfig::new(cfg.n_iter, cfg.seed);
    gcfg.n_particles = cfg.n_particles;
    if let Some(b) = cfg.burnin {
        gcfg.burnin = b;
    }
    let gibbs = run_particle_gibbs_reparam(&cfg.truth, cfg.driver, &grid, &obs, &gcfg)?;

    let mut spec = PriorSpec::all_point_mass(&cfg.truth);
    spec.set(ParamField::Sigma, Prior::VaguePositive { sd: 1.0e3 });
    let target = PfTarget {
        spec: &spec,
        driver: cfg.driver,
        grid: &grid,
        data: &obs,
        n_particles: cfg.n_particles,
        resample: ResampleScheme::Systematic,
    };
    let mut pm_cfg = cfg.pmmh()?;
    pm_cfg.path_thin = 0;
    let pmmh = run_pmmh(&target, &spec, &cfg.truth, &ProposalCovariance::identity(1), &pm_cfg)?;

    let mut w = csv::Writer::from_path(out.join("sigma_trace.csv"))?;
    w.write_record(["iter", "sigma_gibbs", "sigma_pmmh"])?;
    for i in 0..cfg.n_iter {
        w.write_record(&[
            i.to_string(),
            gibbs.draws[i][0].exp().to_string(),
            pmmh.draws[i][0].exp().to_string(),
        ])?;
    }
    w.flush()?;

    let g_sigma: Vec<f64> = gibbs.draws[gibbs.burnin..].iter().map(|v| v[0]).collect();
    let p_sigma: Vec<f64> = pmmh.draws[pmmh.burnin..].iter().map(|v| v[0]).collect();
    let cmp = serde_json::json!({
        "gibbs_ess": ess(&g_sigma),
        "pmmh_ess": ess(&p_sigma),
        "gibbs_eff_pct": 100.0 * efficiency(&g_sigma),
        "pmmh_eff_pct": 100.0 * efficiency(&p_sigma),
    });
    std::fs::write(out.join("ess_comparison.json"), serde_json::to_string_pretty(&cmp)?)?;
    io::write_meta(out.join("meta.json"), cfg, serde_json::json!({"command": "gibbs-demo"}))?;
    println!(
        "gibbs-demo: sigma ESS gibbs {:.1} vs pmmh {:.1}",
        ess(&g_sigma),
        ess(&p_sigma)
    );
    Ok(())
}

fn cmd_mif(cfg: &RunConfig, data: &Option<PathBuf>, passes: usize, out: &Path) -> Result<()> {
    let (grid, obs) = load_data(cfg, data)?;
    let mut mcfg = MifConfig::new(cfg.seed);
    mcfg.n_particles = cfg.n_particles;
    mcfg.n_passes = passes;
    let (est, trace) = epidrift::mcmc::mif_estimate(
        &cfg.priors,
        cfg.driver,
        &grid,
        &obs,
        &cfg.truth,
        &mcfg,
    )?;
    let names = cfg.priors.coordinate_names();
    let mut w = csv::Writer::from_path(out.join("mif_trace.csv"))?;
    let mut header = vec!["pass".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in trace.iter().enumerate() {
        let cons = constrained_coordinates(&UnconstrainedVector(row.clone()), &cfg.priors)?;
        let mut rec = vec![i.to_string()];
        rec.extend(cons.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    io::write_meta(
        out.join("meta.json"),
        cfg,
        serde_json::json!({"command": "mif", "estimate": est}),
    )?;
    let final_cons = constrained_coordinates(&to_unconstrained(&est, &cfg.priors)?, &cfg.priors)?;
    for (n, v) in names.iter().zip(&final_cons) {
        println!("mif: {n} = {v:.6}");
    }
    Ok(())
}

fn cmd_summarize(draws: &Path, burnin_frac: f64, out: &Path) -> Result<()> {
    if !(0.0..1.0).contains(&burnin_frac) {
        return Err(Error::Config("burnin fraction must lie in [0, 1)".into()));
    }
    let mut r = csv::Reader::from_path(draws)?;
    let headers = r.headers()?.clone();
    let fixed = ["iter", "accepted", "acc_prob", "eps", "loglik", "log_prior"];
    let first_param = headers.iter().take_while(|h| fixed.contains(h)).count();
    let names: Vec<String> = headers.iter().skip(first_param).map(String::from).collect();
    if names.is_empty() {
        return Err(Error::invalid("draws", "no parameter columns found"));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        for (j, col) in cols.iter_mut().enumerate() {
            let raw = &rec[first_param + j];
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::invalid("draws", format!("bad value '{raw}'")))?;
            col.push(v);
        }
    }
    let n = cols[0].len();
    let skip = (burnin_frac * n as f64) as usize;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["parameter", "mean", "q2.5", "q50", "q97.5", "ess"])?;
    println!("{:<16} {:>12} {:>12} {:>12} {:>12} {:>10}", "parameter", "mean", "q2.5", "q50", "q97.5", "ess");
    for (name, col) in names.iter().zip(&cols) {
        let post = &col[skip..];
        let (m, lo, md, hi, e) = (
            mean(post),
            quantile(post, 0.025),
            quantile(post, 0.5),
            quantile(post, 0.975),
            ess(post),
        );
        w.write_record(&[
            name.clone(),
            m.to_string(),
            lo.to_string(),
            md.to_string(),
            hi.to_string(),
            e.to_string(),
        ])?;
        println!("{name:<16} {m:>12.5} {lo:>12.5} {md:>12.5} {hi:>12.5} {e:>10.1}");
    }
    w.flush()?;
    Ok(())
}
