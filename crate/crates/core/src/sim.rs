//! Minute-resolution marketplace simulation.
//!
//! Each simulated minute completes finished trips, draws the number of new
//! rides from the demand profile, generates them, and offers every ride to
//! the nearest idle drivers until one accepts or the offer cap is reached.
//! Sim minute 0 is Monday 00:00.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distributions::{probabilistic_round, TimeProfile, MINUTES_PER_DAY, MINUTES_PER_WEEK};
use crate::error::{invalid, Error, Result};
use crate::ridegen::{generate_rides, GridSpec, Point, Ride, RideDistributions};
use crate::rng::SimRng;

pub const FEATURES: usize = 6;
pub const ACTIONS: usize = 2;

pub const FEATURE_NAMES: [&str; FEATURES] = [
    "pickup_km",
    "trip_km",
    "minute_of_day",
    "trips_left",
    "destination",
    "idle_minutes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Accept,
    Reject,
}

impl Action {
    pub const ALL: [Action; ACTIONS] = [Action::Accept, Action::Reject];

    pub fn index(self) -> usize {
        match self {
            Action::Accept => 0,
            Action::Reject => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Accept
        } else {
            Action::Reject
        }
    }

    pub fn is_accept(self) -> bool {
        self == Action::Accept
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Accept => "accept",
            Action::Reject => "reject",
        }
    }
}

/// Raw (unnormalized) decision features, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub values: [f64; FEATURES],
}

impl Observation {
    pub fn new(
        pickup_km: f64,
        trip_km: f64,
        minute_of_day: f64,
        trips_left: f64,
        destination: f64,
        idle_minutes: f64,
    ) -> Self {
        Self { values: [pickup_km, trip_km, minute_of_day, trips_left, destination, idle_minutes] }
    }

    pub fn pickup_km(&self) -> f64 {
        self.values[0]
    }
    pub fn trip_km(&self) -> f64 {
        self.values[1]
    }
    pub fn minute_of_day(&self) -> f64 {
        self.values[2]
    }
    pub fn hour_of_day(&self) -> f64 {
        self.values[2] / 60.0
    }
    pub fn trips_left(&self) -> f64 {
        self.values[3]
    }
    pub fn destination(&self) -> f64 {
        self.values[4]
    }
    pub fn idle_minutes(&self) -> f64 {
        self.values[5]
    }
}

/// Per-feature divisors mapping raw observations to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scales: [f64; FEATURES],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { scales: [5.0, 20.0, MINUTES_PER_DAY as f64, 50.0, 1.0, 600.0] }
    }
}

impl Normalizer {
    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(invalid("normalization constants must be finite and > 0"))
        }
    }

    pub fn normalize(&self, obs: &Observation) -> [f64; FEATURES] {
        let mut out = obs.values;
        for (v, s) in out.iter_mut().zip(self.scales) {
            *v /= s;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w: 1.0, x: 1.0, y: 1.0, z: 1.0 }
    }
}

/// Platform-controlled economics that enter the driver reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatformParams {
    pub fare_per_km: f64,
    pub cost_per_km: f64,
    /// Half-open hour ranges `[start, end)`.
    pub peak_hours: Vec<[u32; 2]>,
    pub peak_fare_multiplier: f64,
    pub weekly_reward_amount: f64,
    pub weekly_target_multiplier: f64,
    pub weights: RewardWeights,
    /// Currency per idle minute.
    pub idle_cost_rate: f64,
}

impl Default for PlatformParams {
    fn default() -> Self {
        Self {
            fare_per_km: 40.0,
            cost_per_km: 30.0,
            peak_hours: vec![[6, 8], [16, 19]],
            peak_fare_multiplier: 2.0,
            weekly_reward_amount: 1200.0,
            weekly_target_multiplier: 1.0,
            weights: RewardWeights::default(),
            idle_cost_rate: 0.1,
        }
    }
}

impl PlatformParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("fare_per_km", self.fare_per_km),
            ("cost_per_km", self.cost_per_km),
            ("weekly_reward_amount", self.weekly_reward_amount),
            ("idle_cost_rate", self.idle_cost_rate),
            ("weights.w", self.weights.w),
            ("weights.x", self.weights.x),
            ("weights.y", self.weights.y),
            ("weights.z", self.weights.z),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("peak_fare_multiplier", self.peak_fare_multiplier),
            ("weekly_target_multiplier", self.weekly_target_multiplier),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        for [start, end] in &self.peak_hours {
            if start >= end || *end > 24 {
                return Err(invalid(format!("bad peak hour range {start}-{end}")));
            }
        }
        Ok(())
    }

    pub fn is_peak(&self, minute_of_day: u32) -> bool {
        let hour = (minute_of_day % MINUTES_PER_DAY as u32) / 60;
        self.peak_hours.iter().any(|[s, e]| (*s..*e).contains(&hour))
    }

    pub fn effective_fare_per_km(&self, minute_of_day: u32) -> f64 {
        if self.is_peak(minute_of_day) {
            self.fare_per_km * self.peak_fare_multiplier
        } else {
            self.fare_per_km
        }
    }

    pub fn weekly_goal(&self, last_week_trips: u32) -> u32 {
        weekly_goal(last_week_trips, self.weekly_target_multiplier)
    }
}

/// Goal for the coming week: last week's trips times the target multiplier,
/// rounded to nearest and at least 1.
pub fn weekly_goal(last_week_trips: u32, multiplier: f64) -> u32 {
    ((last_week_trips as f64 * multiplier).round() as u32).max(1)
}

/// Everything the reward depends on besides the platform parameters and the
/// clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub trip_km: f64,
    pub pickup_km: f64,
    pub idle_minutes: f64,
    pub trips_completed: u32,
    pub goal_trips: u32,
}

/// `w·(fare·td) − x·(cost·(td + pd)) − y·oc + z·wr` for an acceptance, 0 for
/// a rejection. The fare carries the peak multiplier inside peak hours,
/// `oc` is idle minutes times the idle cost rate, and `wr` is the weekly
/// reward amortized over the goal while the goal is still unmet.
pub fn reward_from_inputs(
    params: &PlatformParams,
    inputs: &RewardInputs,
    action: Action,
    minute_of_day: u32,
) -> f64 {
    if action == Action::Reject {
        return 0.0;
    }
    let RewardWeights { w, x, y, z } = params.weights;
    let td = inputs.trip_km;
    let pd = inputs.pickup_km;
    let oc = inputs.idle_minutes * params.idle_cost_rate;
    let wr = if inputs.goal_trips > 0 && inputs.trips_completed < inputs.goal_trips {
        params.weekly_reward_amount / inputs.goal_trips as f64
    } else {
        0.0
    };
    w * (params.effective_fare_per_km(minute_of_day) * td) - x * (params.cost_per_km * (td + pd))
        - y * oc
        + z * wr
}

pub fn compute_reward(
    params: &PlatformParams,
    ride: &Ride,
    driver: &DriverState,
    action: Action,
    clock: u32,
) -> f64 {
    let inputs = driver.reward_inputs(ride, clock);
    reward_from_inputs(params, &inputs, action, clock % MINUTES_PER_DAY as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverStatus {
    Idle,
    ToPickup,
    OnTrip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverState {
    pub id: usize,
    pub location: Point,
    pub busy_until: u32,
    pub pickup_at: u32,
    pub idle_since: u32,
    pub trips_completed_this_week: u32,
    pub weekly_goal_trips: u32,
    pub last_week_trips: u32,
    pub total_completed: u32,
    pending_drop: Option<Point>,
}

impl DriverState {
    pub fn new(id: usize, location: Point, last_week_trips: u32, target_multiplier: f64) -> Self {
        Self {
            id,
            location,
            busy_until: 0,
            pickup_at: 0,
            idle_since: 0,
            trips_completed_this_week: 0,
            weekly_goal_trips: weekly_goal(last_week_trips, target_multiplier),
            last_week_trips,
            total_completed: 0,
            pending_drop: None,
        }
    }

    pub fn status(&self, now: u32) -> DriverStatus {
        if self.pending_drop.is_none() || now >= self.busy_until {
            DriverStatus::Idle
        } else if now < self.pickup_at {
            DriverStatus::ToPickup
        } else {
            DriverStatus::OnTrip
        }
    }

    pub fn is_idle(&self) -> bool {
        self.pending_drop.is_none()
    }

    pub fn trips_left(&self) -> u32 {
        self.weekly_goal_trips.saturating_sub(self.trips_completed_this_week)
    }

    pub fn idle_minutes(&self, now: u32) -> u32 {
        now.saturating_sub(self.idle_since)
    }

    pub fn reward_inputs(&self, ride: &Ride, now: u32) -> RewardInputs {
        RewardInputs {
            trip_km: ride.distance_km,
            pickup_km: self.location.distance(&ride.pickup),
            idle_minutes: self.idle_minutes(now) as f64,
            trips_completed: self.trips_completed_this_week,
            goal_trips: self.weekly_goal_trips,
        }
    }

    /// Starts a new goal week.
    pub fn roll_week(&mut self, target_multiplier: f64) {
        self.last_week_trips = self.trips_completed_this_week;
        self.trips_completed_this_week = 0;
        self.weekly_goal_trips = weekly_goal(self.last_week_trips, target_multiplier);
    }
}

/// Whole minutes to cover `km` at `speed_kmh`, at least one.
pub fn travel_minutes(km: f64, speed_kmh: f64) -> u32 {
    let minutes = km / speed_kmh * 60.0;
    (minutes - 1e-9).ceil().max(1.0) as u32
}

#[derive(Debug, Clone, Copy)]
pub enum DriverEvent<'a> {
    Assign { ride: &'a Ride, now: u32 },
    Tick { now: u32 },
}

pub fn advance(driver: &mut DriverState, event: DriverEvent<'_>, speed_kmh: f64) -> Result<()> {
    match event {
        DriverEvent::Assign { ride, now } => {
            if !driver.is_idle() {
                return Err(Error::DriverBusy(driver.id));
            }
            let pickup_km = driver.location.distance(&ride.pickup);
            let to_pickup = (pickup_km / speed_kmh * 60.0 - 1e-9).ceil().max(0.0) as u32;
            driver.pickup_at = now + to_pickup;
            driver.busy_until = now + travel_minutes(pickup_km + ride.distance_km, speed_kmh);
            driver.pending_drop = Some(ride.drop);
        }
        DriverEvent::Tick { now } => {
            if let Some(drop) = driver.pending_drop {
                if now >= driver.busy_until {
                    driver.pending_drop = None;
                    driver.location = drop;
                    driver.idle_since = now;
                    driver.trips_completed_this_week += 1;
                    driver.total_completed += 1;
                }
            }
        }
    }
    Ok(())
}

pub fn make_observation(driver: &DriverState, ride: &Ride, clock: u32, grid: &GridSpec) -> Observation {
    Observation::new(
        driver.location.distance(&ride.pickup),
        ride.distance_km,
        (clock % MINUTES_PER_DAY as u32) as f64,
        driver.trips_left() as f64,
        grid.centrality(ride.drop),
        driver.idle_minutes(clock) as f64,
    )
}

/// A driver decision rule.
pub trait Policy {
    fn decide(&self, obs: &Observation, rng: &mut SimRng) -> Action;
}

/// Accepts every offer.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAccept;

impl Policy for AlwaysAccept {
    fn decide(&self, _: &Observation, _: &mut SimRng) -> Action {
        Action::Accept
    }
}

/// Rejects every offer.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysReject;

impl Policy for AlwaysReject {
    fn decide(&self, _: &Observation, _: &mut SimRng) -> Action {
        Action::Reject
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn decide(&self, obs: &Observation, rng: &mut SimRng) -> Action {
        (**self).decide(obs, rng)
    }
}

/// One offer of one ride to one driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfferRecord {
    pub minute: u32,
    pub driver: usize,
    pub ride: usize,
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub inputs: RewardInputs,
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchContext<'a> {
    pub params: &'a PlatformParams,
    pub grid: &'a GridSpec,
    pub max_offers: usize,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub offers: Vec<OfferRecord>,
    pub assigned: Option<usize>,
}

/// Offers `ride` to idle drivers nearest-first (ties by id) until one
/// accepts or `max_offers` have declined.
pub fn dispatch<P: Policy + ?Sized>(
    ride_index: usize,
    ride: &Ride,
    drivers: &mut [DriverState],
    policy: &P,
    ctx: &DispatchContext<'_>,
    clock: u32,
    rng: &mut SimRng,
) -> Result<Dispatch> {
    let mut candidates: Vec<(f64, usize)> = drivers
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_idle())
        .map(|(i, d)| (d.location.distance(&ride.pickup), i))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut offers = Vec::new();
    let mut assigned = None;
    for &(_, idx) in candidates.iter().take(ctx.max_offers) {
        let driver = &drivers[idx];
        let observation = make_observation(driver, ride, clock, ctx.grid);
        let action = policy.decide(&observation, rng);
        let inputs = driver.reward_inputs(ride, clock);
        let reward =
            reward_from_inputs(ctx.params, &inputs, action, clock % MINUTES_PER_DAY as u32);
        offers.push(OfferRecord {
            minute: clock,
            driver: idx,
            ride: ride_index,
            observation,
            action,
            reward,
            inputs,
        });
        if action.is_accept() {
            advance(&mut drivers[idx], DriverEvent::Assign { ride, now: clock }, ctx.speed_kmh)?;
            assigned = Some(idx);
            break;
        }
    }
    Ok(Dispatch { offers, assigned })
}

/// Everything needed to run the marketplace.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub rides: RideDistributions,
    pub profile: TimeProfile,
    pub params: PlatformParams,
    pub drivers: usize,
    pub duration_minutes: u32,
    pub max_offers: usize,
    pub speed_kmh: f64,
    /// Prior-week trip counts used for the first week's goals, cycled over
    /// drivers. Empty means `default_last_week_trips` for everyone.
    pub initial_last_week_trips: Vec<u32>,
    pub default_last_week_trips: u32,
}

impl SimConfig {
    pub fn new(grid: GridSpec, rides: RideDistributions, profile: TimeProfile) -> Self {
        Self {
            grid,
            rides,
            profile,
            params: PlatformParams::default(),
            drivers: 50,
            duration_minutes: MINUTES_PER_WEEK as u32,
            max_offers: 5,
            speed_kmh: 30.0,
            initial_last_week_trips: Vec::new(),
            default_last_week_trips: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.params.validate()?;
        if self.drivers == 0 {
            return Err(invalid("simulation needs at least one driver"));
        }
        if self.max_offers == 0 {
            return Err(invalid("max_offers must be >= 1"));
        }
        if !(self.speed_kmh.is_finite() && self.speed_kmh > 0.0) {
            return Err(invalid("driver speed must be > 0"));
        }
        Ok(())
    }

    fn last_week_trips_for(&self, driver: usize) -> u32 {
        if self.initial_last_week_trips.is_empty() {
            self.default_last_week_trips
        } else {
            self.initial_last_week_trips[driver % self.initial_last_week_trips.len()]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DailyCount {
    pub day: usize,
    pub generated: u64,
    pub assigned: u64,
    pub lost: u64,
}

/// One logged decision with the context needed to recompute its reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub minute: u32,
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub inputs: RewardInputs,
}

impl Step {
    pub fn minute_of_day(&self) -> u32 {
        self.minute % MINUTES_PER_DAY as u32
    }
}

/// A `[s, a, s', r]` tuple. `done` marks the last decision of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: Observation,
    pub a: Action,
    pub s_prime: Observation,
    pub r: f64,
    pub done: bool,
}

/// One driver's ordered decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub driver: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn transitions(&self) -> Vec<Transition> {
        let n = self.steps.len();
        (0..n)
            .map(|i| {
                let step = &self.steps[i];
                let next = self.steps.get(i + 1);
                Transition {
                    s: step.observation,
                    a: step.action,
                    s_prime: next.map_or(step.observation, |n| n.observation),
                    r: step.reward,
                    done: next.is_none(),
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub rides: Vec<Ride>,
    pub ride_outcomes: Vec<Option<usize>>,
    pub offers: Vec<OfferRecord>,
    pub daily: Vec<DailyCount>,
    pub completed_trips: Vec<u32>,
}

impl EpisodeLog {
    pub fn drivers(&self) -> usize {
        self.completed_trips.len()
    }

    /// Per-driver trajectories in driver order; drivers without offers are
    /// omitted.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let mut per_driver: Vec<Vec<Step>> = vec![Vec::new(); self.drivers()];
        for o in &self.offers {
            per_driver[o.driver].push(Step {
                minute: o.minute,
                observation: o.observation,
                action: o.action,
                reward: o.reward,
                inputs: o.inputs,
            });
        }
        per_driver
            .into_iter()
            .enumerate()
            .filter(|(_, steps)| !steps.is_empty())
            .map(|(i, steps)| Trajectory { driver: format!("D{i:04}"), steps })
            .collect()
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.trajectories().iter().flat_map(Trajectory::transitions).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.offers.iter().map(|o| o.reward).sum()
    }

    /// Mean undiscounted episode reward per driver.
    pub fn mean_driver_reward(&self) -> f64 {
        self.total_reward() / self.drivers().max(1) as f64
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        if self.offers.is_empty() {
            return None;
        }
        let accepted = self.offers.iter().filter(|o| o.action.is_accept()).count();
        Some(accepted as f64 / self.offers.len() as f64)
    }

    pub fn write_offers_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["minute", "driver"];
        header.extend(FEATURE_NAMES);
        header.extend(["action", "reward"]);
        w.write_record(&header)?;
        for o in &self.offers {
            let mut row = vec![o.minute.to_string(), o.driver.to_string()];
            row.extend(o.observation.values.iter().map(f64::to_string));
            row.push(o.action.as_str().to_string());
            row.push(o.reward.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_daily_counts_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "generated", "assigned", "lost"])?;
        for d in &self.daily {
            w.write_record([
                d.day.to_string(),
                d.generated.to_string(),
                d.assigned.to_string(),
                d.lost.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the marketplace for `config.duration_minutes` with every driver
/// deciding through `policy`.
pub fn run_episode<P: Policy + ?Sized>(
    config: &SimConfig,
    policy: &P,
    rng: &mut SimRng,
) -> Result<EpisodeLog> {
    config.validate()?;
    let mult = config.params.weekly_target_multiplier;
    let mut drivers: Vec<DriverState> = (0..config.drivers)
        .map(|i| {
            let start = config.grid.clamp(Point::new(
                config.rides.pickup_x.sample(rng),
                config.rides.pickup_y.sample(rng),
            ));
            DriverState::new(i, start, config.last_week_trips_for(i), mult)
        })
        .collect();

    let days = (config.duration_minutes as usize).div_ceil(MINUTES_PER_DAY);
    let mut log = EpisodeLog {
        rides: Vec::new(),
        ride_outcomes: Vec::new(),
        offers: Vec::new(),
        daily: (0..days).map(|day| DailyCount { day, ..DailyCount::default() }).collect(),
        completed_trips: Vec::new(),
    };
    let ctx = DispatchContext {
        params: &config.params,
        grid: &config.grid,
        max_offers: config.max_offers,
        speed_kmh: config.speed_kmh,
    };

    for minute in 0..config.duration_minutes {
        if minute > 0 && (minute as usize).is_multiple_of(MINUTES_PER_WEEK) {
            drivers.iter_mut().for_each(|d| d.roll_week(mult));
        }
        for d in drivers.iter_mut() {
            advance(d, DriverEvent::Tick { now: minute }, config.speed_kmh)?;
        }
        let expected = config.profile.at_week_minute(minute as usize);
        let count = probabilistic_round(expected, rng)?;
        if count == 0 {
            continue;
        }
        let rides = generate_rides(&config.grid, &config.rides, count, minute, rng)?;
        let day = &mut log.daily[minute as usize / MINUTES_PER_DAY];
        day.generated += count;
        for ride in rides {
            let index = log.rides.len();
            let outcome = dispatch(index, &ride, &mut drivers, policy, &ctx, minute, rng)?;
            let day = &mut log.daily[minute as usize / MINUTES_PER_DAY];
            if outcome.assigned.is_some() {
                day.assigned += 1;
            } else {
                day.lost += 1;
            }
            log.offers.extend(outcome.offers);
            log.ride_outcomes.push(outcome.assigned);
            log.rides.push(ride);
        }
    }
    log.completed_trips = drivers.iter().map(|d| d.total_completed).collect();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::fit_empirical;
    use crate::rng::seeded;

    fn ride(pickup: Point, drop: Point) -> Ride {
        Ride { pickup, drop, distance_km: pickup.distance(&drop), created_minute: 0 }
    }

    fn unit_params() -> PlatformParams {
        PlatformParams {
            fare_per_km: 100.0,
            cost_per_km: 30.0,
            peak_fare_multiplier: 2.0,
            weekly_reward_amount: 2000.0,
            idle_cost_rate: 1.0,
            ..PlatformParams::default()
        }
    }

    #[test]
    fn reward_hand_fixture() {
        // 100·5 − 30·(5+1) − 10 + 2000/40 = 500 − 180 − 10 + 50
        let inputs = RewardInputs {
            trip_km: 5.0,
            pickup_km: 1.0,
            idle_minutes: 10.0,
            trips_completed: 3,
            goal_trips: 40,
        };
        let noon = 12 * 60;
        let r = reward_from_inputs(&unit_params(), &inputs, Action::Accept, noon);
        assert!((r - 360.0).abs() < 1e-9);
        assert_eq!(reward_from_inputs(&unit_params(), &inputs, Action::Reject, noon), 0.0);
        let zero = PlatformParams {
            weights: RewardWeights { w: 0.0, x: 0.0, y: 0.0, z: 0.0 },
            ..unit_params()
        };
        assert_eq!(reward_from_inputs(&zero, &inputs, Action::Accept, noon), 0.0);
        // goal met: no weekly component
        let met = RewardInputs { trips_completed: 40, ..inputs };
        assert!((reward_from_inputs(&unit_params(), &met, Action::Accept, noon) - 310.0).abs() < 1e-9);
        let no_goal = RewardInputs { goal_trips: 0, trips_completed: 0, ..inputs };
        assert!((reward_from_inputs(&unit_params(), &no_goal, Action::Accept, noon) - 310.0).abs() < 1e-9);
    }

    #[test]
    fn peak_multiplier_only_inside_peak_hours() {
        let p = unit_params();
        for hour in 0..24u32 {
            let expected = matches!(hour, 6 | 7 | 16 | 17 | 18);
            assert_eq!(p.is_peak(hour * 60 + 30), expected, "hour {hour}");
        }
        let inputs = RewardInputs {
            trip_km: 5.0,
            pickup_km: 1.0,
            idle_minutes: 0.0,
            trips_completed: 40,
            goal_trips: 40,
        };
        let at7 = reward_from_inputs(&p, &inputs, Action::Accept, 7 * 60);
        let at12 = reward_from_inputs(&p, &inputs, Action::Accept, 12 * 60);
        assert!((at7 - at12 - 500.0).abs() < 1e-9);
    }

    #[test]
    fn reward_increases_with_trip_distance_under_fare_only_weights() {
        let p = PlatformParams {
            weights: RewardWeights { w: 1.0, x: 0.0, y: 0.0, z: 0.0 },
            ..unit_params()
        };
        let mut prev = f64::NEG_INFINITY;
        for k in 1..50 {
            let inputs = RewardInputs {
                trip_km: k as f64 * 0.5,
                pickup_km: 2.0,
                idle_minutes: 30.0,
                trips_completed: 0,
                goal_trips: 10,
            };
            let r = reward_from_inputs(&p, &inputs, Action::Accept, 600);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn observation_features() {
        let mut d = DriverState::new(0, Point::new(2.0, 2.0), 40, 1.0);
        d.idle_since = 100;
        let grid = GridSpec::default();
        let r = ride(Point::new(2.0, 2.0), Point::new(5.0, 6.0));
        let obs = make_observation(&d, &r, 147, &grid);
        assert_eq!(obs.pickup_km(), 0.0);
        assert_eq!(obs.trip_km(), 5.0);
        assert_eq!(obs.minute_of_day(), 147.0);
        assert_eq!(obs.trips_left(), 40.0);
        assert_eq!(obs.idle_minutes(), 47.0);
        d.trips_completed_this_week = 45;
        assert_eq!(make_observation(&d, &r, 147, &grid).trips_left(), 0.0);
    }

    #[test]
    fn advance_timing() {
        let mut d = DriverState::new(0, Point::new(0.0, 0.0), 10, 1.0);
        let r = ride(Point::new(5.0, 0.0), Point::new(15.0, 0.0));
        advance(&mut d, DriverEvent::Assign { ride: &r, now: 100 }, 30.0).unwrap();
        assert_eq!(d.busy_until, 130);
        assert_eq!(d.status(105), DriverStatus::ToPickup);
        assert_eq!(d.status(115), DriverStatus::OnTrip);
        assert!(matches!(
            advance(&mut d, DriverEvent::Assign { ride: &r, now: 101 }, 30.0),
            Err(Error::DriverBusy(0))
        ));
        advance(&mut d, DriverEvent::Tick { now: 129 }, 30.0).unwrap();
        assert!(!d.is_idle());
        advance(&mut d, DriverEvent::Tick { now: 130 }, 30.0).unwrap();
        assert!(d.is_idle());
        assert_eq!(d.status(130), DriverStatus::Idle);
        assert_eq!(d.idle_since, 130);
        assert_eq!(d.trips_completed_this_week, 1);
        assert_eq!(d.location, Point::new(15.0, 0.0));

        let mut z = DriverState::new(1, Point::new(1.0, 1.0), 10, 1.0);
        let zero = ride(Point::new(1.0, 1.0), Point::new(1.0, 1.0));
        advance(&mut z, DriverEvent::Assign { ride: &zero, now: 7 }, 30.0).unwrap();
        assert_eq!(z.busy_until, 8);
    }

    struct Scripted(Action);
    impl Policy for Scripted {
        fn decide(&self, _: &Observation, _: &mut SimRng) -> Action {
            self.0
        }
    }

    #[test]
    fn dispatch_nearest_first_with_cap() {
        let params = PlatformParams::default();
        let grid = GridSpec::default();
        let ctx = DispatchContext { params: &params, grid: &grid, max_offers: 5, speed_kmh: 30.0 };
        let r = ride(Point::new(10.0, 10.0), Point::new(12.0, 10.0));
        let mut drivers: Vec<DriverState> = (0..7)
            .map(|i| DriverState::new(i, Point::new(10.0 + 7.0 - i as f64, 10.0), 10, 1.0))
            .collect();
        let mut rng = seeded(0);
        let out = dispatch(0, &r, &mut drivers, &Scripted(Action::Reject), &ctx, 0, &mut rng).unwrap();
        assert_eq!(out.offers.len(), 5);
        assert!(out.assigned.is_none());
        let order: Vec<usize> = out.offers.iter().map(|o| o.driver).collect();
        assert_eq!(order, vec![6, 5, 4, 3, 2]);

        let mut one = vec![DriverState::new(0, Point::new(0.0, 0.0), 10, 1.0)];
        let out = dispatch(0, &r, &mut one, &AlwaysAccept, &ctx, 0, &mut rng).unwrap();
        assert_eq!(out.offers.len(), 1);
        assert_eq!(out.assigned, Some(0));
        assert!(!one[0].is_idle());
        // busy driver is skipped: ride lost immediately
        let out = dispatch(1, &r, &mut one, &AlwaysAccept, &ctx, 1, &mut rng).unwrap();
        assert!(out.offers.is_empty() && out.assigned.is_none());
    }

    fn small_config(per_minute: f64) -> SimConfig {
        let xs: Vec<f64> = (0..50).map(|i| 5.0 + (i % 10) as f64).collect();
        let ds: Vec<f64> = (1..40).map(|i| i as f64 * 0.25).collect();
        let rides = RideDistributions {
            pickup_x: fit_empirical(&xs).unwrap(),
            pickup_y: fit_empirical(&xs).unwrap(),
            distance: fit_empirical(&ds).unwrap(),
        };
        let profile = TimeProfile::from_entries(vec![per_minute; MINUTES_PER_WEEK]).unwrap();
        SimConfig { drivers: 10, ..SimConfig::new(GridSpec::default(), rides, profile) }
    }

    #[test]
    fn zero_profile_gives_empty_log() {
        let cfg = small_config(0.0);
        let log = run_episode(&cfg, &AlwaysAccept, &mut seeded(1)).unwrap();
        assert!(log.offers.is_empty() && log.rides.is_empty());
        assert_eq!(log.daily.len(), 7);
    }

    #[test]
    fn episode_is_deterministic_and_reconciles() {
        let cfg = small_config(0.05);
        let a = run_episode(&cfg, &AlwaysAccept, &mut seeded(9)).unwrap();
        let b = run_episode(&cfg, &AlwaysAccept, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        let generated: u64 = a.daily.iter().map(|d| d.generated).sum();
        let assigned: u64 = a.daily.iter().map(|d| d.assigned).sum();
        let lost: u64 = a.daily.iter().map(|d| d.lost).sum();
        assert_eq!(generated as usize, a.rides.len());
        assert_eq!(generated, assigned + lost);
        assert_eq!(a.ride_outcomes.iter().filter(|o| o.is_some()).count() as u64, assigned);
        // expected 0.05 * 10080 = 504 rides; rounding variance is p(1−p) per minute
        let sd = (MINUTES_PER_WEEK as f64 * 0.05 * 0.95).sqrt();
        assert!((generated as f64 - 504.0).abs() <= 3.0 * sd);
    }

    #[test]
    fn drivers_never_double_booked() {
        let cfg = small_config(0.2);
        let log = run_episode(&cfg, &AlwaysAccept, &mut seeded(2)).unwrap();
        // replay assignments: an accepted offer must not overlap the driver's
        // previous trip
        let mut busy_until = vec![0u32; cfg.drivers];
        for o in log.offers.iter().filter(|o| o.action.is_accept()) {
            assert!(o.minute >= busy_until[o.driver]);
            busy_until[o.driver] =
                o.minute + travel_minutes(o.inputs.pickup_km + o.inputs.trip_km, cfg.speed_kmh);
        }
    }

    #[test]
    fn trajectories_link_next_state() {
        let cfg = small_config(0.05);
        let log = run_episode(&cfg, &AlwaysReject, &mut seeded(4)).unwrap();
        let trajs = log.trajectories();
        let total: usize = trajs.iter().map(Trajectory::len).sum();
        assert_eq!(total, log.offers.len());
        for t in &trajs {
            let tr = t.transitions();
            for w in tr.windows(2) {
                assert_eq!(w[0].s_prime, w[1].s);
                assert!(!w[0].done);
            }
            assert!(tr.last().unwrap().done);
        }
    }

    #[test]
    fn goal_rolls_each_week() {
        let mut d = DriverState::new(0, Point::default(), 30, 1.3);
        assert_eq!(d.weekly_goal_trips, 39);
        d.trips_completed_this_week = 12;
        d.roll_week(1.0);
        assert_eq!((d.last_week_trips, d.trips_completed_this_week, d.weekly_goal_trips), (12, 0, 12));
        d.roll_week(1.0);
        assert_eq!(d.weekly_goal_trips, 1);
    }
}
