//! Behavioral cloning from logged trajectories, then reinforcement-learning
//! fine-tuning inside the simulator.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent::{CategoricalQAgent, ImitationTerm, ReplayBuffer};
use crate::error::{invalid, Result};
use crate::rng::SimRng;
use crate::sim::{run_episode, SimConfig, Step, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub iterations: usize,
    /// Buffer capacity in trajectories; converted to transitions with the
    /// mean demonstration length.
    pub buffer_trajectories: usize,
    pub batch_size: usize,
    /// Share of trajectories held out for the agreement score.
    pub eval_fraction: f64,
    /// Mini-batches per iteration; 0 means buffer size / batch size.
    pub batches_per_iteration: usize,
    /// Weight of the logistic imitation term; 0 gives plain offline
    /// Q-learning on the logged actions.
    pub imitation_weight: f64,
    /// Logistic temperature as a fraction of the atom support width.
    pub imitation_temperature: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            buffer_trajectories: 1000,
            batch_size: 64,
            eval_fraction: 0.1,
            batches_per_iteration: 0,
            imitation_weight: 1.0,
            imitation_temperature: 0.01,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_trajectories == 0 || self.batch_size == 0 {
            return Err(invalid("buffer_trajectories and batch_size must be > 0"));
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(invalid("eval_fraction must lie in [0, 1)"));
        }
        if !(self.imitation_weight.is_finite() && self.imitation_weight >= 0.0) {
            return Err(invalid("imitation_weight must be >= 0"));
        }
        if !(self.imitation_temperature.is_finite() && self.imitation_temperature > 0.0) {
            return Err(invalid("imitation_temperature must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub iterations: usize,
    pub epsilon: f64,
    /// Iterations without a new best mean episode reward before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub buffer_trajectories: usize,
    /// Mini-batches per iteration; 0 means new transitions / batch size.
    pub batches_per_iteration: usize,
    /// Replaces the optimizer with this learning rate when set (> 0 or 0
    /// to freeze); negative keeps the optimizer carried over from cloning.
    pub learning_rate: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            epsilon: 0.05,
            patience: 5,
            batch_size: 64,
            buffer_trajectories: 1000,
            batches_per_iteration: 0,
            learning_rate: 1e-4,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("RL iterations must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} must lie in [0, 1]", self.epsilon)));
        }
        if self.patience == 0 || self.batch_size == 0 || self.buffer_trajectories == 0 {
            return Err(invalid("patience, batch_size and buffer_trajectories must be > 0"));
        }
        if self.learning_rate.is_nan() {
            return Err(invalid("learning_rate is NaN"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean training loss; `None` when no batch was drawn.
    pub loss: Option<f64>,
    /// Held-out action agreement (cloning only).
    pub agreement: Option<f64>,
    /// Mean undiscounted episode reward per driver (fine-tuning only).
    pub mean_reward: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub transitions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Completed,
    EarlyStop,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::EarlyStop => "early_stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub phase: &'static str,
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub best_iteration: Option<usize>,
    pub wall_clock: Duration,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn iterations_run(&self) -> usize {
        self.records.len()
    }

    pub fn final_agreement(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.agreement)
    }

    /// Iteration log followed by a `#`-prefixed summary block. Wall-clock
    /// time is left out so reruns compare equal.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["iteration", "loss", "agreement", "mean_reward", "acceptance_rate", "transitions"])?;
            for r in &self.records {
                w.write_record([
                    r.iteration.to_string(),
                    opt(r.loss),
                    opt(r.agreement),
                    opt(r.mean_reward),
                    opt(r.acceptance_rate),
                    r.transitions.to_string(),
                ])?;
            }
            w.flush()?;
        }
        writeln!(out, "# phase {}", self.phase)?;
        writeln!(out, "# iterations_run {}", self.records.len())?;
        writeln!(out, "# stop_reason {}", self.stop_reason.as_str())?;
        if let Some(b) = self.best_iteration {
            writeln!(out, "# best_iteration {b}")?;
        }
        Ok(())
    }
}

/// Share of `steps` on which the greedy agent repeats the logged action.
pub fn action_agreement<'a, I>(agent: &CategoricalQAgent, steps: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a Step>,
{
    let (mut hits, mut total) = (0usize, 0usize);
    for s in steps {
        total += 1;
        hits += usize::from(agent.greedy(&s.observation) == s.action);
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

fn capacity(trajectories: usize, mean_len: f64) -> usize {
    ((trajectories as f64 * mean_len).ceil() as usize).max(1)
}

/// Offline training on demonstration transitions only; the simulator is
/// never touched. Rewards are those stored on the demonstration steps.
pub fn train_bc(
    agent: &mut CategoricalQAgent,
    demonstrations: &[Trajectory],
    config: &BcConfig,
    rng: &mut SimRng,
) -> Result<TrainReport> {
    config.validate()?;
    let demos: Vec<&Trajectory> = demonstrations.iter().filter(|t| !t.is_empty()).collect();
    if demos.is_empty() {
        return Err(invalid("no demonstrations to clone"));
    }
    let started = Instant::now();
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.shuffle(rng);
    let n_eval = if demos.len() > 1 {
        ((demos.len() as f64 * config.eval_fraction).round() as usize).min(demos.len() - 1)
    } else {
        0
    };
    let (eval_idx, train_idx) = order.split_at(n_eval);
    let train: Vec<&Trajectory> = train_idx.iter().map(|&i| demos[i]).collect();
    let eval_steps: Vec<&Step> = eval_idx.iter().flat_map(|&i| &demos[i].steps).collect();

    let mean_len = train.iter().map(|t| t.len()).sum::<usize>() as f64 / train.len() as f64;
    let mut buffer = ReplayBuffer::new(capacity(config.buffer_trajectories, mean_len))?;
    for t in &train {
        buffer.extend(t.transitions());
    }
    let batches = if config.batches_per_iteration > 0 {
        config.batches_per_iteration
    } else {
        (buffer.len() / config.batch_size).max(1)
    };
    let imitation = (config.imitation_weight > 0.0).then(|| ImitationTerm {
        weight: config.imitation_weight,
        temperature: config.imitation_temperature * (agent.support.v_max() - agent.support.v_min()),
    });

    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let mut loss = 0.0;
        for _ in 0..batches {
            let batch = buffer.sample(config.batch_size, rng);
            loss += agent.train_step_with(&batch, imitation)?;
        }
        records.push(IterationRecord {
            iteration,
            loss: Some(loss / batches as f64),
            agreement: action_agreement(agent, eval_steps.iter().copied()),
            mean_reward: None,
            acceptance_rate: None,
            transitions: buffer.len(),
        });
    }
    Ok(TrainReport {
        phase: "bc",
        records,
        stop_reason: StopReason::Completed,
        best_iteration: None,
        wall_clock: started.elapsed(),
    })
}

/// Result of fine-tuning: the report and a copy of the agent as it was when
/// it collected the best episode.
#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub report: TrainReport,
    pub best_agent: CategoricalQAgent,
}

/// Each iteration runs one full episode with ε-greedy decisions, appends
/// its transitions to the replay buffer and trains on sampled batches.
/// Stops early once `patience` iterations pass without a strictly better
/// mean episode reward.
pub fn train_rl(
    agent: &mut CategoricalQAgent,
    sim: &SimConfig,
    config: &RlConfig,
    rng: &mut SimRng,
) -> Result<RlOutcome> {
    config.validate()?;
    sim.validate()?;
    let started = Instant::now();
    if config.learning_rate >= 0.0 {
        agent.reset_optimizer(config.learning_rate);
    }
    let eval_epsilon = agent.epsilon;
    let mut buffer: Option<ReplayBuffer> = None;
    let mut records = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut best_agent = agent.clone();
    let mut stop_reason = StopReason::Completed;

    for iteration in 0..config.iterations {
        agent.epsilon = config.epsilon;
        let log = run_episode(sim, &*agent, rng);
        agent.epsilon = eval_epsilon;
        let log = log?;
        let metric = log.mean_driver_reward();
        if best.is_none_or(|(_, b)| metric > b) {
            best = Some((iteration, metric));
            best_agent = agent.clone();
        }

        let trajectories = log.trajectories();
        let new_transitions: usize = trajectories.iter().map(Trajectory::len).sum();
        let buf = match &mut buffer {
            Some(b) => b,
            None => {
                let mean_len = if trajectories.is_empty() {
                    1.0
                } else {
                    new_transitions as f64 / trajectories.len() as f64
                };
                buffer.insert(ReplayBuffer::new(capacity(config.buffer_trajectories, mean_len))?)
            }
        };
        for t in &trajectories {
            buf.extend(t.transitions());
        }

        let mut loss = None;
        if !buf.is_empty() {
            let batches = if config.batches_per_iteration > 0 {
                config.batches_per_iteration
            } else {
                (new_transitions / config.batch_size).max(1)
            };
            let mut sum = 0.0;
            for _ in 0..batches {
                let batch = buf.sample(config.batch_size, rng);
                sum += agent.train_step(&batch)?;
            }
            loss = Some(sum / batches as f64);
        }
        records.push(IterationRecord {
            iteration,
            loss,
            agreement: None,
            mean_reward: Some(metric),
            acceptance_rate: log.acceptance_rate(),
            transitions: new_transitions,
        });

        let best_iteration = best.map_or(0, |(i, _)| i);
        if iteration - best_iteration >= config.patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(RlOutcome {
        report: TrainReport {
            phase: "rl",
            records,
            stop_reason,
            best_iteration: best.map(|(i, _)| i),
            wall_clock: started.elapsed(),
        },
        best_agent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, AtomSupport};
    use crate::distributions::{fit_empirical, TimeProfile, MINUTES_PER_DAY};
    use crate::ridegen::{GridSpec, RideDistributions};
    use crate::rng::seeded;
    use crate::sim::{Action, Observation, RewardInputs};

    fn agent(seed: u64) -> CategoricalQAgent {
        let cfg = AgentConfig { hidden: vec![16], ..AgentConfig::default() };
        let support = AtomSupport::new(-50.0, 50.0, cfg.atoms).unwrap();
        CategoricalQAgent::new(&cfg, support, &mut seeded(seed)).unwrap()
    }

    fn step(td: f64, action: Action, reward: f64) -> Step {
        Step {
            minute: 0,
            observation: Observation::new(1.0, td, 600.0, 5.0, 0.4, 10.0),
            action,
            reward,
            inputs: RewardInputs { trip_km: td, pickup_km: 1.0, idle_minutes: 10.0, trips_completed: 0, goal_trips: 5 },
        }
    }

    fn always_accept_demos() -> Vec<Trajectory> {
        (0..20)
            .map(|d| Trajectory {
                driver: format!("D{d}"),
                steps: (0..10).map(|k| step(0.5 + (d * 10 + k) as f64 * 0.05, Action::Accept, 5.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn empty_demonstrations_error() {
        let mut a = agent(0);
        assert!(train_bc(&mut a, &[], &BcConfig::default(), &mut seeded(0)).is_err());
    }

    #[test]
    fn zero_iterations_leave_agent_unchanged() {
        let mut a = agent(1);
        let before = a.clone();
        let cfg = BcConfig { iterations: 0, ..BcConfig::default() };
        let report = train_bc(&mut a, &always_accept_demos(), &cfg, &mut seeded(1)).unwrap();
        assert_eq!(a, before);
        assert_eq!(report.iterations_run(), 0);
    }

    #[test]
    fn always_accept_oracle_is_recovered() {
        let mut a = agent(2);
        let cfg = BcConfig { iterations: 20, eval_fraction: 0.25, ..BcConfig::default() };
        let report = train_bc(&mut a, &always_accept_demos(), &cfg, &mut seeded(2)).unwrap();
        assert!(report.final_agreement().unwrap() >= 0.99);
        assert_eq!(report.records.len(), 20);
    }

    fn trivial_sim(profile: TimeProfile) -> SimConfig {
        let grid = GridSpec::default();
        let xs: Vec<f64> = (0..50).map(|i| 5.0 + i as f64 * 0.2).collect();
        let ds: Vec<f64> = (0..50).map(|i| 1.0 + i as f64 * 0.1).collect();
        let rides = RideDistributions {
            pickup_x: fit_empirical(&xs).unwrap(),
            pickup_y: fit_empirical(&xs).unwrap(),
            distance: fit_empirical(&ds).unwrap(),
        };
        SimConfig { drivers: 5, duration_minutes: MINUTES_PER_DAY as u32, ..SimConfig::new(grid, rides, profile) }
    }

    #[test]
    fn trivial_economy_stops_at_patience_boundary() {
        // No demand: every episode earns 0, so the first iteration stays
        // best and training halts after 1 + patience iterations.
        let mut a = agent(3);
        a.epsilon = 0.0;
        let cfg = RlConfig { epsilon: 0.0, patience: 5, ..RlConfig::default() };
        let out = train_rl(&mut a, &trivial_sim(TimeProfile::zeros()), &cfg, &mut seeded(3)).unwrap();
        assert_eq!(out.report.stop_reason, StopReason::EarlyStop);
        assert_eq!(out.report.iterations_run(), 6);
        assert_eq!(out.report.best_iteration, Some(0));
    }

    #[test]
    fn single_iteration_collects_one_episode() {
        let mut a = agent(4);
        let profile = TimeProfile::from_entries(vec![0.05; crate::distributions::MINUTES_PER_WEEK]).unwrap();
        let cfg = RlConfig { iterations: 1, ..RlConfig::default() };
        let out = train_rl(&mut a, &trivial_sim(profile), &cfg, &mut seeded(4)).unwrap();
        assert_eq!(out.report.iterations_run(), 1);
        assert!(out.report.records[0].transitions > 0);
    }

    #[test]
    fn frozen_greedy_fine_tuning_keeps_behavior() {
        let mut a = agent(5);
        a.epsilon = 0.0;
        let before = a.clone();
        let profile = TimeProfile::from_entries(vec![0.05; crate::distributions::MINUTES_PER_WEEK]).unwrap();
        let cfg = RlConfig { iterations: 2, epsilon: 0.0, learning_rate: 0.0, ..RlConfig::default() };
        train_rl(&mut a, &trivial_sim(profile), &cfg, &mut seeded(5)).unwrap();
        for k in 0..50 {
            let o = Observation::new(k as f64 * 0.1, 3.0, 700.0, 2.0, 0.5, k as f64);
            assert_eq!(a.greedy(&o), before.greedy(&o));
        }
        assert_eq!(a.online, before.online);
    }

    #[test]
    fn reports_reproduce_under_seed() {
        let run = || {
            let mut a = agent(6);
            let cfg = BcConfig { iterations: 3, ..BcConfig::default() };
            let r = train_bc(&mut a, &always_accept_demos(), &cfg, &mut seeded(6)).unwrap();
            let mut buf = Vec::new();
            r.write_csv(&mut buf).unwrap();
            (buf, a)
        };
        let (r1, a1) = run();
        let (r2, a2) = run();
        assert_eq!(r1, r2);
        assert_eq!(a1, a2);
    }
}
