//! CSV and JSON persistence: observation files, chain draws, smoothing
//! paths, posterior bands, study reports and run metadata.
//!
//! Data files are always on the reporting scale (the factor c already
//! applied); units must match the population units of the configuration.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::dynamics::{LatentPath, StateTrajectory};
use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::{constrained_coordinates, PriorSpec, UnconstrainedVector};
use crate::observation::ObservationSeries;

const GROUP_LABELS: [&str; 2] = ["c", "a"];

/// Write observations as `time_days,cases` (single group) or
/// `time_days,cases,group` with group labels c/a.
pub fn write_observations(path: impl AsRef<Path>, obs: &ObservationSeries) -> Result<()> {
    obs.validate()?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let two = obs.n_groups() == 2;
    if two {
        w.write_record(["time_days", "cases", "group"])?;
    } else {
        w.write_record(["time_days", "cases"])?;
    }
    for (t, row) in obs.times.iter().zip(&obs.values) {
        for (g, y) in row.iter().enumerate() {
            if two {
                w.write_record(&[t.to_string(), y.to_string(), GROUP_LABELS[g].into()])?;
            } else {
                w.write_record(&[t.to_string(), y.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a data CSV written by `write_observations` (or hand-prepared in
/// the same layout).
pub fn read_observations(path: impl AsRef<Path>) -> Result<ObservationSeries> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let headers = r.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let t_col = find("time_days")
        .ok_or_else(|| Error::invalid("data", "missing time_days column"))?;
    let y_col =
        find("cases").ok_or_else(|| Error::invalid("data", "missing cases column"))?;
    let g_col = find("group");

    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t: f64 = rec[t_col]
            .parse()
            .map_err(|_| Error::invalid("data", format!("bad time '{}'", &rec[t_col])))?;
        let y: f64 = rec[y_col]
            .parse()
            .map_err(|_| Error::invalid("data", format!("bad count '{}'", &rec[y_col])))?;
        let group = match g_col {
            None => 0,
            Some(c) => GROUP_LABELS
                .iter()
                .position(|l| *l == &rec[c])
                .ok_or_else(|| Error::invalid("data", format!("bad group '{}'", &rec[c])))?,
        };
        if times.last() != Some(&t) {
            times.push(t);
            values.push(Vec::new());
        }
        let row = values.last_mut().unwrap();
        if row.len() != group {
            return Err(Error::invalid("data", "group rows must appear as c then a per time"));
        }
        row.push(y);
    }
    let obs = ObservationSeries { times, values, reporting_applied: true };
    obs.validate()?;
    if obs.values.iter().any(|v| v.len() != obs.n_groups()) {
        return Err(Error::invalid("data", "inconsistent group count across times"));
    }
    Ok(obs)
}

/// Write compartment trajectories: one row per grid point and group.
pub fn write_trajectory(path: impl AsRef<Path>, traj: &StateTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["time_days", "group", "s", "e", "i", "r"])?;
    for (k, states) in traj.states.iter().enumerate() {
        let t = traj.grid.point_time(k);
        for (g, st) in states.iter().enumerate() {
            w.write_record(&[
                t.to_string(),
                GROUP_LABELS[g].into(),
                st.s.to_string(),
                st.e.to_string(),
                st.i.to_string(),
                st.r.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write latent contact-rate paths: one row per grid point and group.
pub fn write_latent_paths(path: impl AsRef<Path>, paths: &[LatentPath]) -> Result<()> {
    if paths.is_empty() {
        return Err(Error::invalid("paths", "nothing to write"));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["time_days", "group", "x", "beta"])?;
    for (g, lp) in paths.iter().enumerate() {
        for (k, &x) in lp.x.iter().enumerate() {
            w.write_record(&[
                lp.grid.point_time(k).to_string(),
                GROUP_LABELS[g].into(),
                x.to_string(),
                x.exp().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write chain draws on the constrained scale with per-iteration
/// diagnostics: iter, accepted, acc_prob, eps, loglik, log_prior, then one
/// column per coordinate.
pub fn write_draws(path: impl AsRef<Path>, out: &ChainOutput, spec: &PriorSpec) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header =
        vec!["iter".into(), "accepted".into(), "acc_prob".into(), "eps".into(),
             "loglik".into(), "log_prior".into()];
    header.extend(out.names.iter().cloned());
    w.write_record(&header)?;
    for (i, draw) in out.draws.iter().enumerate() {
        let cons = constrained_coordinates(&UnconstrainedVector(draw.clone()), spec)?;
        let mut rec = vec![
            i.to_string(),
            (out.accepted[i] as u8).to_string(),
            out.acc_probs[i].to_string(),
            out.eps_trace[i].to_string(),
            out.logliks[i].to_string(),
            out.log_priors[i].to_string(),
        ];
        rec.extend(cons.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write stored smoothing paths: iter, time_days, group, beta,
/// susceptible, incidence.
pub fn write_paths(path: impl AsRef<Path>, out: &ChainOutput) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["iter", "time_days", "group", "beta", "susceptible", "incidence"])?;
    for (it, draw) in &out.paths {
        for (k, &t) in draw.times.iter().enumerate() {
            for g in 0..draw.beta[k].len() {
                w.write_record(&[
                    it.to_string(),
                    t.to_string(),
                    GROUP_LABELS[g].into(),
                    draw.beta[k][g].to_string(),
                    draw.susceptible[k][g].to_string(),
                    draw.incidence[k][g].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write pointwise posterior bands (one row per time, one column per
/// quantile level).
pub fn write_bands(
    path: impl AsRef<Path>,
    times: &[f64],
    bands: &[Vec<f64>],
    probs: &[f64],
) -> Result<()> {
    if times.len() != bands.len() {
        return Err(Error::invalid("bands", "times/rows length mismatch"));
    }
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["time_days".to_string()];
    header.extend(probs.iter().map(|p| format!("q{}", (p * 1000.0).round() / 10.0)));
    w.write_record(&header)?;
    for (t, row) in times.iter().zip(bands) {
        if row.len() != probs.len() {
            return Err(Error::invalid("bands", "row width must match probs"));
        }
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write a study report: one serialisable row struct per record.
pub fn write_report<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write meta.json: the resolved configuration, the crate version, and any
/// study-specific extras.
pub fn write_meta(
    path: impl AsRef<Path>,
    config: &RunConfig,
    extra: serde_json::Value,
) -> Result<()> {
    let meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "extra": extra,
    });
    std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
