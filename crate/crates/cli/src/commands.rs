//! Subcommand bodies. Each reads upstream artifacts from the output
//! directory, writes its own, and never touches its inputs.

use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use ridesim_core::agent::{AtomSupport, CategoricalQAgent, Greedy};
use ridesim_core::distributions::{
    fit_time_profile, probabilistic_round, EmpiricalDistribution, TimeProfile, DAYS_PER_WEEK,
    MINUTES_PER_DAY, MINUTES_PER_WEEK,
};
use ridesim_core::ingest::{
    clean, daily_creation_counts, extract_demonstrations, fit_ride_distributions,
    generate_synthetic_log, parse_trip_log, split_windows, weekly_trip_averages, within,
    write_rejects, write_trip_log, DateWindow, TripRecord, TRIP_LOG_SCHEMA,
};
use ridesim_core::metrics::{
    acceptance_by_bin, curve_correlation, daily_counts, write_curves_csv, AcceptanceCurve, BinAxis,
};
use ridesim_core::ridegen::{generate_rides, write_rides_csv, RideDistributions};
use ridesim_core::rng::{indexed_substream, substream};
use ridesim_core::sim::{run_episode, EpisodeLog, SimConfig, Step};
use ridesim_core::training::{action_agreement, train_bc, train_rl};
use toml::Value;

use crate::artifacts::{open, runtime, Header, Store};
use crate::config::{AgentChoice, RunConfig};
use crate::CliError;

pub const SYNTHETIC_LOG: &str = "synthetic_log.csv";
pub const CLEAN_LOG: &str = "clean_log.csv";
pub const CLEANING_REPORT: &str = "cleaning_report.csv";
pub const REJECTS: &str = "rejects.csv";
pub const PICKUP_X: &str = "pickup_x.dist";
pub const PICKUP_Y: &str = "pickup_y.dist";
pub const TRIP_DISTANCE: &str = "trip_distance.dist";
pub const TIME_PROFILE: &str = "time_profile.csv";
pub const GOALS: &str = "goals.csv";
pub const RIDES: &str = "rides.csv";
pub const AGENT_BC: &str = "agent_bc.ckpt";
pub const BC_REPORT: &str = "bc_report.csv";
pub const AGENT_RL: &str = "agent_rl.ckpt";
pub const RL_REPORT: &str = "rl_report.csv";
pub const DAILY_COUNTS: &str = "daily_counts.csv";
pub const DAILY_COUNTS_PROFILE: &str = "daily_counts_profile.csv";
pub const BY_HOUR: &str = "acceptance_by_hour.csv";
pub const BY_DISTANCE: &str = "acceptance_by_distance.csv";
pub const HELDOUT_BY_HOUR: &str = "heldout_by_hour.csv";
pub const HELDOUT_BY_DISTANCE: &str = "heldout_by_distance.csv";
pub const SUMMARY: &str = "evaluation_summary.csv";
pub const SWEEP_DIR: &str = "sweep";
pub const SWEEP_SUMMARY: &str = "sweep_summary.csv";

fn store(cfg: &RunConfig) -> Store {
    Store::new(&cfg.paths.out, Header::for_config(cfg))
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let records = generate_synthetic_log(&cfg.synthetic_spec(), cfg.seed())?;
    let path = out.write(SYNTHETIC_LOG, |w| write_trip_log(w, &records))?;
    eprintln!("synth: {} rows -> {}", records.len(), path.display());
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let source = match &cfg.paths.log {
        Some(p) if p.is_file() => p.clone(),
        Some(p) => return Err(CliError::Validation(format!("paths.log {} does not exist", p.display()))),
        None => out.require(SYNTHETIC_LOG, "synth")?,
    };
    let parsed = parse_trip_log(open(&source)?, &TRIP_LOG_SCHEMA)?;
    let (kept, report) = clean(&parsed.records, &cfg.region());
    out.write(CLEAN_LOG, |w| write_trip_log(w, &kept))?;
    out.write(CLEANING_REPORT, |w| report.write_csv(w))?;
    out.write(REJECTS, |w| write_rejects(w, &parsed.rejects))?;
    eprintln!(
        "ingest: {} rows read, {} malformed, {} retained",
        parsed.records.len() + parsed.rejects.len(),
        parsed.rejects.len(),
        report.retained_count
    );
    Ok(())
}

fn read_clean(out: &Store) -> Result<Vec<TripRecord>, CliError> {
    let parsed = parse_trip_log(open(&out.require(CLEAN_LOG, "ingest")?)?, &TRIP_LOG_SCHEMA)?;
    if let Some(r) = parsed.rejects.first() {
        return Err(runtime(format!("{CLEAN_LOG} line {}: {}", r.line, r.reason)));
    }
    Ok(parsed.records)
}

fn windows(records: &[TripRecord], cfg: &RunConfig) -> Result<(DateWindow, DateWindow), CliError> {
    split_windows(records, cfg.ingest.train_weeks).ok_or_else(|| runtime("the cleaned log is empty"))
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let records = read_clean(&out)?;
    let (train_window, _) = windows(&records, cfg)?;
    let train = within(&records, &train_window);
    let dists = fit_ride_distributions(&train, &cfg.grid)?;
    let profile = fit_time_profile(&train, cfg.scaler())?;
    let goals = weekly_trip_averages(&records, &train_window, cfg.sim.speed_kmh);
    out.write(PICKUP_X, |w| dists.pickup_x.write_artifact(w, "pickup_x"))?;
    out.write(PICKUP_Y, |w| dists.pickup_y.write_artifact(w, "pickup_y"))?;
    out.write(TRIP_DISTANCE, |w| dists.distance.write_artifact(w, "trip_distance"))?;
    out.write(TIME_PROFILE, |w| profile.write_artifact(w))?;
    out.write(GOALS, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["driver", "last_week_trips"])?;
        for (i, g) in goals.iter().enumerate() {
            c.write_record([i.to_string(), g.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    eprintln!(
        "fit: {} training rows, {:.1} rides per simulated week",
        train.len(),
        profile.week_total()
    );
    Ok(())
}

fn read_dist(out: &Store, name: &str) -> Result<EmpiricalDistribution, CliError> {
    Ok(EmpiricalDistribution::read_artifact(open(&out.require(name, "fit")?)?)?.1)
}

fn read_goals(path: &Path) -> Result<Vec<u32>, CliError> {
    let mut goals = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(runtime)?;
        if line.starts_with('#') || line.starts_with("driver") || line.trim().is_empty() {
            continue;
        }
        let trips = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| runtime(format!("{} line {}: bad row", path.display(), i + 1)))?;
        goals.push(trips);
    }
    Ok(goals)
}

/// Simulator assembled from `fit` artifacts and the run config.
fn load_sim(base: &Store, cfg: &RunConfig) -> Result<SimConfig, CliError> {
    let rides = RideDistributions {
        pickup_x: read_dist(base, PICKUP_X)?,
        pickup_y: read_dist(base, PICKUP_Y)?,
        distance: read_dist(base, TRIP_DISTANCE)?,
    };
    let profile = TimeProfile::read_artifact(open(&base.require(TIME_PROFILE, "fit")?)?)?;
    let goals = read_goals(&base.require(GOALS, "fit")?)?;
    let sim = SimConfig {
        params: cfg.platform.clone(),
        drivers: cfg.sim.drivers,
        duration_minutes: cfg.sim.weeks * MINUTES_PER_WEEK as u32,
        max_offers: cfg.sim.max_offers,
        speed_kmh: cfg.sim.speed_kmh,
        initial_last_week_trips: goals,
        default_last_week_trips: cfg.sim.default_last_week_trips,
        ..SimConfig::new(cfg.grid.clone(), rides, profile)
    };
    sim.validate()?;
    Ok(sim)
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let sim = load_sim(&out, cfg)?;
    let mut rng = substream(cfg.seed(), "generate");
    let mut rides = Vec::new();
    for minute in 0..cfg.generate.days * MINUTES_PER_DAY as u32 {
        let expected = sim.profile.at_week_minute(minute as usize % MINUTES_PER_WEEK);
        let n = probabilistic_round(expected, &mut rng)?;
        rides.extend(generate_rides(&sim.grid, &sim.rides, n, minute, &mut rng)?);
    }
    let path = out.write(RIDES, |w| write_rides_csv(w, &rides))?;
    eprintln!("generate: {} rides over {} days -> {}", rides.len(), cfg.generate.days, path.display());
    Ok(())
}

fn read_agent(out: &Store, name: &str, producer: &str) -> Result<CategoricalQAgent, CliError> {
    Ok(CategoricalQAgent::read_checkpoint(open(&out.require(name, producer)?)?)?)
}

pub fn train_bc_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let records = read_clean(&out)?;
    let (train_window, _) = windows(&records, cfg)?;
    let demos = extract_demonstrations(&records, &cfg.platform, &train_window, &cfg.demo_options());
    let rewards: Vec<f64> = demos.iter().flat_map(|t| t.steps.iter().map(|s| s.reward)).collect();
    if rewards.is_empty() {
        return Err(runtime("no demonstrations in the training window"));
    }
    let support = AtomSupport::from_rewards(&rewards, cfg.agent.gamma, cfg.agent.atoms)?;
    let mut agent = CategoricalQAgent::new(&cfg.agent, support, &mut substream(cfg.seed(), "init"))?;
    let report = train_bc(&mut agent, &demos, &cfg.bc, &mut substream(cfg.seed(), "bc"))?;
    out.write(AGENT_BC, |w| agent.write_checkpoint(w))?;
    out.write(BC_REPORT, |w| report.write_csv(w))?;
    let last = report.records.last().and_then(|r| r.agreement);
    eprintln!(
        "train-bc: {} trajectories, {} iterations in {:.1?}, held-out agreement {}",
        demos.len(),
        report.records.len(),
        report.wall_clock,
        last.map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    Ok(())
}

/// Fine-tunes the cloned agent from `base` and writes the result to `out`.
fn rl_phase(cfg: &RunConfig, base: &Store, out: &Store) -> Result<CategoricalQAgent, CliError> {
    let mut agent = read_agent(base, AGENT_BC, "train-bc")?;
    let sim = load_sim(base, cfg)?;
    let outcome = train_rl(&mut agent, &sim, &cfg.rl, &mut substream(cfg.seed(), "rl"))?;
    out.write(AGENT_RL, |w| agent.write_checkpoint(w))?;
    out.write(RL_REPORT, |w| outcome.report.write_csv(w))?;
    eprintln!(
        "train-rl: {} iterations ({}) in {:.1?} -> {}",
        outcome.report.records.len(),
        outcome.report.stop_reason.as_str(),
        outcome.report.wall_clock,
        out.dir().display()
    );
    Ok(agent)
}

pub fn train_rl_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    rl_phase(cfg, &out, &out).map(drop)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub by_hour: AcceptanceCurve,
    pub by_distance: AcceptanceCurve,
    pub acceptance_rate: f64,
    pub peak_acceptance_rate: f64,
    pub mean_driver_reward: f64,
}

fn rate(accepted: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        accepted as f64 / total as f64
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

fn evaluate_into(
    cfg: &RunConfig,
    base: &Store,
    out: &Store,
    agent: &CategoricalQAgent,
) -> Result<EvalSummary, CliError> {
    let sim = load_sim(base, cfg)?;
    let records = read_clean(base)?;
    let (_, eval_window) = windows(&records, cfg)?;
    let seed = cfg.seed();
    let logs: Vec<EpisodeLog> = (0..cfg.evaluate.replications as u64)
        .into_par_iter()
        .map(|i| run_episode(&sim, &Greedy(agent), &mut indexed_substream(seed, "eval", i)))
        .collect::<ridesim_core::Result<_>>()?;

    let actual = daily_creation_counts(&records, &eval_window, cfg.scaler());
    out.write(DAILY_COUNTS, |w| daily_counts(&logs, Some(&actual))?.write_csv(w))?;
    let days = logs.iter().map(|l| l.daily.len()).min().unwrap_or(0);
    let expected: Vec<f64> = (0..days).map(|d| sim.profile.day_total(d % DAYS_PER_WEEK)).collect();
    out.write(DAILY_COUNTS_PROFILE, |w| daily_counts(&logs, Some(&expected))?.write_csv(w))?;

    let offers = || logs.iter().flat_map(|l| l.offers.iter());
    let curve = |axis: BinAxis| {
        acceptance_by_bin(offers().map(|o| (&o.observation, o.action)), axis, &axis.default_edges())
    };
    let by_hour = curve(BinAxis::HourOfDay)?;
    let by_distance = curve(BinAxis::TripDistance)?;
    out.write(BY_HOUR, |w| by_hour.write_csv(w))?;
    out.write(BY_DISTANCE, |w| by_distance.write_csv(w))?;

    let total = offers().count();
    let accepted = offers().filter(|o| o.action.is_accept()).count();
    let peak: Vec<_> = offers().filter(|o| sim.params.is_peak(o.minute)).collect();
    let peak_accepted = peak.iter().filter(|o| o.action.is_accept()).count();
    let summary = EvalSummary {
        by_hour,
        by_distance,
        acceptance_rate: rate(accepted, total),
        peak_acceptance_rate: rate(peak_accepted, peak.len()),
        mean_driver_reward: logs.iter().map(EpisodeLog::mean_driver_reward).sum::<f64>() / logs.len() as f64,
    };

    // agent against the logged decisions of the held-out week
    let demos = extract_demonstrations(&records, &cfg.platform, &eval_window, &cfg.demo_options());
    let steps: Vec<&Step> = demos.iter().flat_map(|t| &t.steps).collect();
    let mut heldout = Vec::new();
    if !steps.is_empty() {
        for (axis, name) in [(BinAxis::HourOfDay, HELDOUT_BY_HOUR), (BinAxis::TripDistance, HELDOUT_BY_DISTANCE)] {
            let edges = axis.default_edges();
            let logged = acceptance_by_bin(steps.iter().map(|s| (&s.observation, s.action)), axis, &edges)?;
            let cloned =
                acceptance_by_bin(steps.iter().map(|s| (&s.observation, agent.greedy(&s.observation))), axis, &edges)?;
            out.write(name, |w| write_curves_csv(w, &[("logged", &logged), ("agent", &cloned)]))?;
            heldout.push((axis, curve_correlation(&logged, &cloned).ok()));
        }
    }
    let agreement = action_agreement(agent, steps.iter().copied());
    out.write(SUMMARY, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["metric", "value"])?;
        c.write_record(["replications", &logs.len().to_string()])?;
        c.write_record(["acceptance_rate", &fmt_opt(Some(summary.acceptance_rate))])?;
        c.write_record(["peak_acceptance_rate", &fmt_opt(Some(summary.peak_acceptance_rate))])?;
        c.write_record(["mean_driver_reward", &fmt_opt(Some(summary.mean_driver_reward))])?;
        c.write_record(["heldout_agreement", &fmt_opt(agreement)])?;
        for (axis, r) in &heldout {
            c.write_record([format!("heldout_pearson_{}", axis.as_str()), fmt_opt(*r)])?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok(summary)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let out = store(cfg);
    let agent = match cfg.evaluate.agent {
        AgentChoice::Rl => read_agent(&out, AGENT_RL, "train-rl")?,
        AgentChoice::Bc => read_agent(&out, AGENT_BC, "train-bc")?,
    };
    let s = evaluate_into(cfg, &out, &out, &agent)?;
    eprintln!(
        "evaluate: {} replications, acceptance {:.3} (peak {:.3}), mean driver reward {:.1}",
        cfg.evaluate.replications, s.acceptance_rate, s.peak_acceptance_rate, s.mean_driver_reward
    );
    Ok(())
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One `train-rl` + `evaluate` per value of `sweep.key`, each warm-started
/// from the same cloned agent, then side-by-side curve files.
pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let base = store(cfg);
    for (name, producer) in [
        (AGENT_BC, "train-bc"),
        (CLEAN_LOG, "ingest"),
        (TIME_PROFILE, "fit"),
        (GOALS, "fit"),
        (PICKUP_X, "fit"),
        (PICKUP_Y, "fit"),
        (TRIP_DISTANCE, "fit"),
    ] {
        base.require(name, producer)?;
    }
    let key = &cfg.sweep.key;
    let points: Vec<(String, RunConfig)> = cfg
        .sweep
        .values
        .iter()
        .map(|v| Ok((value_label(v), cfg.with_value(key, v)?)))
        .collect::<Result<_, CliError>>()?;
    let sweep_dir = base.dir().join(SWEEP_DIR);
    let results: Vec<EvalSummary> = points
        .par_iter()
        .map(|(label, point)| {
            let out = Store::new(sweep_dir.join(format!("{key}={label}")), Header::for_config(point));
            let agent = rl_phase(point, &base, &out)?;
            evaluate_into(point, &base, &out, &agent)
        })
        .collect::<Result<_, CliError>>()?;

    let side = Store::new(&sweep_dir, Header::for_config(cfg));
    let labels: Vec<&str> = points.iter().map(|(l, _)| l.as_str()).collect();
    let hour: Vec<(&str, &AcceptanceCurve)> = labels.iter().copied().zip(results.iter().map(|r| &r.by_hour)).collect();
    let dist: Vec<(&str, &AcceptanceCurve)> =
        labels.iter().copied().zip(results.iter().map(|r| &r.by_distance)).collect();
    side.write(BY_HOUR, |w| write_curves_csv(w, &hour))?;
    side.write(BY_DISTANCE, |w| write_curves_csv(w, &dist))?;
    side.write(SWEEP_SUMMARY, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["key", "value", "acceptance_rate", "peak_acceptance_rate", "mean_driver_reward"])?;
        for (label, r) in labels.iter().zip(&results) {
            c.write_record([
                key.clone(),
                label.to_string(),
                fmt_opt(Some(r.acceptance_rate)),
                fmt_opt(Some(r.peak_acceptance_rate)),
                fmt_opt(Some(r.mean_driver_reward)),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    for (label, r) in labels.iter().zip(&results) {
        eprintln!("sweep: {key}={label} acceptance {:.3} peak {:.3}", r.acceptance_rate, r.peak_acceptance_rate);
    }
    Ok(())
}
