//! Trip logs: parsing, cleaning, synthetic ground truth, and reconstruction
//! of per-driver demonstration trajectories.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{
    fit_empirical, DemandScaler, TimeProfile, DAYS_PER_WEEK, MINUTES_PER_DAY, MINUTES_PER_WEEK,
};
use crate::error::{invalid, Error, Result};
use crate::ridegen::{GridSpec, Point, RideDistributions};
use crate::rng::{indexed_substream, substream, SimRng};
use crate::sim::{
    reward_from_inputs, run_episode, travel_minutes, weekly_goal, Action, Normalizer,
    Observation, PlatformParams, Policy, RewardInputs, SimConfig, Step, Trajectory, FEATURES,
};

/// Column order of a trip log.
pub const TRIP_LOG_SCHEMA: [&str; 14] = [
    "driver_id",
    "trip_id",
    "created_time",
    "assigned_time",
    "decision_time",
    "pickup_time",
    "pickup_lat",
    "pickup_lon",
    "drop_lat",
    "drop_lon",
    "pickup_distance_km",
    "trip_distance_km",
    "status",
    "payment_method",
];

const TIME_FORMAT: &str = "%Y-%m-%dT%H:%MZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TripStatus {
    Accepted,
    Rejected,
    Completed,
    Cancelled,
}

impl TripStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TripStatus::Accepted => "accepted",
            TripStatus::Rejected => "rejected",
            TripStatus::Completed => "completed",
            TripStatus::Cancelled => "cancelled",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accepted" => Some(TripStatus::Accepted),
            "rejected" => Some(TripStatus::Rejected),
            "completed" => Some(TripStatus::Completed),
            "cancelled" | "canceled" => Some(TripStatus::Cancelled),
            _ => None,
        }
    }

    /// The driver's decision behind this status. A cancellation happens
    /// after the driver accepted.
    pub fn action(self) -> Action {
        match self {
            TripStatus::Rejected => Action::Reject,
            _ => Action::Accept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PaymentMethod {
    Cash,
    Card,
    Other,
}

impl PaymentMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PaymentMethod::Cash => "cash",
            PaymentMethod::Card => "card",
            PaymentMethod::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cash" => Some(PaymentMethod::Cash),
            "card" => Some(PaymentMethod::Card),
            "other" => Some(PaymentMethod::Other),
            _ => None,
        }
    }
}

/// One row of a trip log. Blank cells parse to `None` so that cleaning can
/// account for them; malformed cells reject the whole row.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub driver_id: String,
    pub trip_id: String,
    pub created_time: Option<NaiveDateTime>,
    pub assigned_time: Option<NaiveDateTime>,
    pub decision_time: Option<NaiveDateTime>,
    pub pickup_time: Option<NaiveDateTime>,
    pub pickup_lat: Option<f64>,
    pub pickup_lon: Option<f64>,
    pub drop_lat: Option<f64>,
    pub drop_lon: Option<f64>,
    pub pickup_distance_km: Option<f64>,
    pub trip_distance_km: Option<f64>,
    pub status: Option<TripStatus>,
    pub payment_method: Option<PaymentMethod>,
}

impl TripRecord {
    /// Name of the first required field that is blank, if any.
    pub fn missing_field(&self) -> Option<&'static str> {
        let checks = [
            ("driver_id", !self.driver_id.is_empty()),
            ("trip_id", !self.trip_id.is_empty()),
            ("created_time", self.created_time.is_some()),
            ("assigned_time", self.assigned_time.is_some()),
            ("decision_time", self.decision_time.is_some()),
            ("pickup_lat", self.pickup_lat.is_some()),
            ("pickup_lon", self.pickup_lon.is_some()),
            ("drop_lat", self.drop_lat.is_some()),
            ("drop_lon", self.drop_lon.is_some()),
            ("pickup_distance_km", self.pickup_distance_km.is_some()),
            ("trip_distance_km", self.trip_distance_km.is_some()),
            ("status", self.status.is_some()),
            ("payment_method", self.payment_method.is_some()),
            (
                "pickup_time",
                self.status != Some(TripStatus::Completed) || self.pickup_time.is_some(),
            ),
        ];
        checks.iter().find(|(_, ok)| !ok).map(|(name, _)| *name)
    }

    pub fn is_complete(&self) -> bool {
        self.missing_field().is_none()
    }

    fn to_row(&self) -> [String; 14] {
        fn t(v: Option<NaiveDateTime>) -> String {
            v.map(|t| t.format(TIME_FORMAT).to_string()).unwrap_or_default()
        }
        fn f(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.driver_id.clone(),
            self.trip_id.clone(),
            t(self.created_time),
            t(self.assigned_time),
            t(self.decision_time),
            t(self.pickup_time),
            f(self.pickup_lat),
            f(self.pickup_lon),
            f(self.drop_lat),
            f(self.drop_lon),
            f(self.pickup_distance_km),
            f(self.trip_distance_km),
            self.status.map(|s| s.as_str().to_string()).unwrap_or_default(),
            self.payment_method.map(|p| p.as_str().to_string()).unwrap_or_default(),
        ]
    }
}

/// A row that could not be parsed, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedLog {
    pub records: Vec<TripRecord>,
    pub rejects: Vec<Reject>,
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    let t = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
        .ok()?;
    t.with_second(0).and_then(|t| t.with_nanosecond(0))
}

/// Parses a comma-separated trip log whose header must equal `schema`.
/// Lines starting with `#` are metadata and skipped.
pub fn parse_trip_log<R: Read>(source: R, schema: &[&str]) -> Result<ParsedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h?,
        None => return Err(Error::Header("trip log has no header row".into())),
    };
    let names: Vec<&str> = header.iter().collect();
    if names != schema {
        return Err(Error::Header(format!(
            "expected columns {}, found {}",
            schema.join(","),
            names.join(",")
        )));
    }

    let mut out = ParsedLog::default();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<TripRecord, String> {
    if row.len() != TRIP_LOG_SCHEMA.len() {
        return Err(format!("expected {} fields, found {}", TRIP_LOG_SCHEMA.len(), row.len()));
    }
    let cell = |i: usize| row.get(i).unwrap_or("");
    let time = |i: usize| -> std::result::Result<Option<NaiveDateTime>, String> {
        let s = cell(i);
        if s.is_empty() {
            return Ok(None);
        }
        parse_timestamp(s)
            .map(Some)
            .ok_or_else(|| format!("{}: bad timestamp `{s}`", TRIP_LOG_SCHEMA[i]))
    };
    let num = |i: usize| -> std::result::Result<Option<f64>, String> {
        let s = cell(i);
        if s.is_empty() {
            return Ok(None);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(format!("{}: not a number `{s}`", TRIP_LOG_SCHEMA[i])),
        }
    };
    let status = match cell(12) {
        "" => None,
        s => Some(TripStatus::parse(s).ok_or_else(|| format!("status: unknown `{s}`"))?),
    };
    let payment_method = match cell(13) {
        "" => None,
        s => Some(PaymentMethod::parse(s).ok_or_else(|| format!("payment_method: unknown `{s}`"))?),
    };
    let rec = TripRecord {
        driver_id: cell(0).to_string(),
        trip_id: cell(1).to_string(),
        created_time: time(2)?,
        assigned_time: time(3)?,
        decision_time: time(4)?,
        pickup_time: time(5)?,
        pickup_lat: num(6)?,
        pickup_lon: num(7)?,
        drop_lat: num(8)?,
        drop_lon: num(9)?,
        pickup_distance_km: num(10)?,
        trip_distance_km: num(11)?,
        status,
        payment_method,
    };
    if let (Some(c), Some(a)) = (rec.created_time, rec.assigned_time) {
        if c > a {
            return Err("created_time after assigned_time".into());
        }
    }
    if let (Some(a), Some(d)) = (rec.assigned_time, rec.decision_time) {
        if a > d {
            return Err("assigned_time after decision_time".into());
        }
    }
    for (name, v) in [
        ("pickup_distance_km", rec.pickup_distance_km),
        ("trip_distance_km", rec.trip_distance_km),
    ] {
        if v.is_some_and(|v| v < 0.0) {
            return Err(format!("{name}: negative distance"));
        }
    }
    Ok(rec)
}

pub fn write_trip_log<W: Write>(out: W, records: &[TripRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIP_LOG_SCHEMA)?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects<W: Write>(out: W, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Inclusive lat/lon bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl RegionBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    /// The box covered by `grid`.
    pub fn from_grid(grid: &GridSpec) -> Self {
        let (min_lat, min_lon) = grid.to_latlon(Point::new(0.0, 0.0));
        let (max_lat, max_lon) = grid.to_latlon(Point::new(grid.width_km, grid.height_km));
        Self { min_lat, max_lat, min_lon, max_lon }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CleaningReport {
    pub input_count: usize,
    pub duplicate_count: usize,
    pub missing_field_count: usize,
    pub out_of_region_count: usize,
    pub retained_count: usize,
}

impl CleaningReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["input", "duplicates", "missing_fields", "out_of_region", "retained"])?;
        w.write_record([
            self.input_count.to_string(),
            self.duplicate_count.to_string(),
            self.missing_field_count.to_string(),
            self.out_of_region_count.to_string(),
            self.retained_count.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Drops repeated trip ids (first occurrence wins), rows with a blank
/// required field, and rows whose pickup lies outside `region`. Each record
/// is counted under the first reason that applies, in that order.
pub fn clean(records: &[TripRecord], region: &RegionBox) -> (Vec<TripRecord>, CleaningReport) {
    let mut seen = HashSet::new();
    let mut report = CleaningReport { input_count: records.len(), ..CleaningReport::default() };
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.trip_id.as_str()) {
            report.duplicate_count += 1;
        } else if !r.is_complete() {
            report.missing_field_count += 1;
        } else if !region.contains(r.pickup_lat.unwrap_or(f64::NAN), r.pickup_lon.unwrap_or(f64::NAN))
        {
            report.out_of_region_count += 1;
        } else {
            kept.push(r.clone());
        }
    }
    report.retained_count = kept.len();
    (kept, report)
}

/// Ground-truth driver policy: accept with probability
/// `σ(bias + Σ weightᵢ · featureᵢ / scaleᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticPolicy {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub normalizer: Normalizer,
}

impl LogisticPolicy {
    pub fn logit(&self, obs: &Observation) -> f64 {
        let x = self.normalizer.normalize(obs);
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn accept_probability(&self, obs: &Observation) -> f64 {
        1.0 / (1.0 + (-self.logit(obs)).exp())
    }
}

impl Policy for LogisticPolicy {
    fn decide(&self, obs: &Observation, rng: &mut SimRng) -> Action {
        if rng.random::<f64>() < self.accept_probability(obs) {
            Action::Accept
        } else {
            Action::Reject
        }
    }
}

/// One Gaussian bump of the daily demand curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandPeak {
    pub hour: f64,
    pub width_hours: f64,
    pub weight: f64,
}

/// Shape of synthetic demand and of the spatial/distance distributions rides
/// are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandShape {
    pub rides_per_day: f64,
    /// Multiplier per weekday, Monday first.
    pub weekday_factors: [f64; DAYS_PER_WEEK],
    pub base_level: f64,
    pub peaks: Vec<DemandPeak>,
    pub pickup_center_km: [f64; 2],
    pub pickup_spread_km: f64,
    pub distance_median_km: f64,
    pub distance_sigma: f64,
}

impl Default for DemandShape {
    fn default() -> Self {
        Self {
            rides_per_day: 600.0,
            weekday_factors: [1.0, 0.97, 1.04, 1.05, 1.3, 0.75, 0.55],
            base_level: 0.05,
            peaks: vec![
                DemandPeak { hour: 7.5, width_hours: 1.2, weight: 1.5 },
                DemandPeak { hour: 13.0, width_hours: 4.0, weight: 1.0 },
                DemandPeak { hour: 17.5, width_hours: 1.5, weight: 2.0 },
            ],
            pickup_center_km: [10.0, 10.0],
            pickup_spread_km: 4.0,
            distance_median_km: 4.5,
            distance_sigma: 0.6,
        }
    }
}

impl DemandShape {
    /// Expected rides per minute of the week.
    pub fn time_profile(&self) -> Result<TimeProfile> {
        let daily: Vec<f64> = (0..MINUTES_PER_DAY)
            .map(|m| {
                let h = m as f64 / 60.0;
                let bumps: f64 = self
                    .peaks
                    .iter()
                    .map(|p| p.weight * (-(h - p.hour).powi(2) / (2.0 * p.width_hours.powi(2))).exp())
                    .sum();
                (self.base_level + bumps).max(0.0)
            })
            .collect();
        let day_sum: f64 = daily.iter().sum();
        let weekly_weight: f64 = self.weekday_factors.iter().sum();
        if !(day_sum > 0.0 && self.rides_per_day > 0.0 && weekly_weight > 0.0) {
            return Err(invalid("synthetic demand profile is identically zero"));
        }
        if self.weekday_factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(invalid("weekday factors must be finite and >= 0"));
        }
        let mut entries = Vec::with_capacity(MINUTES_PER_WEEK);
        for factor in self.weekday_factors {
            let scale = self.rides_per_day * factor / day_sum;
            entries.extend(daily.iter().map(|v| v * scale));
        }
        TimeProfile::from_entries(entries)
    }

    fn ride_distributions(&self, grid: &GridSpec, rng: &mut SimRng) -> Result<RideDistributions> {
        const DRAWS: usize = 5000;
        let spread = Normal::new(0.0, self.pickup_spread_km)
            .map_err(|e| invalid(format!("pickup spread: {e}")))?;
        let dist = LogNormal::new(self.distance_median_km.ln(), self.distance_sigma)
            .map_err(|e| invalid(format!("distance distribution: {e}")))?;
        let mut xs = Vec::with_capacity(DRAWS);
        let mut ys = Vec::with_capacity(DRAWS);
        let mut ds = Vec::with_capacity(DRAWS);
        for _ in 0..DRAWS {
            let p = grid.clamp(Point::new(
                self.pickup_center_km[0] + spread.sample(rng),
                self.pickup_center_km[1] + spread.sample(rng),
            ));
            xs.push(p.x);
            ys.push(p.y);
            ds.push(dist.sample(rng).max(0.05));
        }
        Ok(RideDistributions {
            pickup_x: fit_empirical(&xs)?,
            pickup_y: fit_empirical(&ys)?,
            distance: fit_empirical(&ds)?,
        })
    }
}

/// Parameters of a synthetic trip log whose accept/reject decisions come
/// from a known logistic policy over the six decision features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPolicySpec {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub normalizer: Normalizer,
    pub driver_count: usize,
    pub days: u32,
    /// Must be a Monday.
    pub start_date: NaiveDate,
    pub demand: DemandShape,
    pub grid: GridSpec,
    pub speed_kmh: f64,
    pub default_last_week_trips: u32,
    pub weekly_target_multiplier: f64,
}

impl Default for SyntheticPolicySpec {
    fn default() -> Self {
        Self {
            // pickup, trip distance, time of day, trips left, destination, idle
            weights: [-12.0, 12.0, 0.0, 3.0, -1.0, 1.8],
            bias: 4.5,
            normalizer: Normalizer::default(),
            driver_count: 50,
            days: 28,
            start_date: NaiveDate::from_ymd_opt(2020, 2, 3).expect("valid date"),
            demand: DemandShape::default(),
            grid: GridSpec::default(),
            speed_kmh: 30.0,
            default_last_week_trips: 40,
            weekly_target_multiplier: 1.0,
        }
    }
}

impl SyntheticPolicySpec {
    pub fn validate(&self) -> Result<()> {
        if self.driver_count == 0 {
            return Err(invalid("driver_count must be >= 1"));
        }
        if self.days == 0 {
            return Err(invalid("days must be >= 1"));
        }
        if self.start_date.weekday() != Weekday::Mon {
            return Err(invalid(format!("start_date {} is not a Monday", self.start_date)));
        }
        if self.weights.iter().chain([&self.bias]).any(|w| w.is_nan()) {
            return Err(Error::NonFinite("synthetic policy weights"));
        }
        self.normalizer.validate()?;
        self.grid.validate()
    }

    pub fn policy(&self) -> LogisticPolicy {
        LogisticPolicy { weights: self.weights, bias: self.bias, normalizer: self.normalizer }
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight exists")
    }
}

/// Simulates `spec.days` of the marketplace with every driver following the
/// logistic policy and logs one row per offer. Each ride is offered to its
/// nearest idle driver only, so rows and ride requests coincide.
pub fn generate_synthetic_log(spec: &SyntheticPolicySpec, seed: u64) -> Result<Vec<TripRecord>> {
    spec.validate()?;
    let profile = spec.demand.time_profile()?;
    let rides = spec.demand.ride_distributions(&spec.grid, &mut substream(seed, "synthetic-world"))?;
    let params = PlatformParams {
        weekly_target_multiplier: spec.weekly_target_multiplier,
        ..PlatformParams::default()
    };
    let config = SimConfig {
        params,
        drivers: spec.driver_count,
        duration_minutes: spec.days * MINUTES_PER_DAY as u32,
        max_offers: 1,
        speed_kmh: spec.speed_kmh,
        default_last_week_trips: spec.default_last_week_trips,
        ..SimConfig::new(spec.grid.clone(), rides, profile)
    };
    let policy = spec.policy();
    let log = run_episode(&config, &policy, &mut substream(seed, "synthetic-sim"))?;

    let mut pay_rng = indexed_substream(seed, "synthetic-payment", 0);
    let start = spec.start();
    let at = |minute: u32| start + Duration::minutes(minute as i64);
    let records = log
        .offers
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let ride = &log.rides[o.ride];
            let (pickup_lat, pickup_lon) = spec.grid.to_latlon(ride.pickup);
            let (drop_lat, drop_lon) = spec.grid.to_latlon(ride.drop);
            let pd = o.inputs.pickup_km;
            let (status, pickup_time) = if o.action.is_accept() {
                let done = o.minute + travel_minutes(pd + ride.distance_km, spec.speed_kmh);
                let to_pickup = (pd / spec.speed_kmh * 60.0 - 1e-9).ceil().max(0.0) as u32;
                let status = if done < config.duration_minutes {
                    TripStatus::Completed
                } else {
                    TripStatus::Accepted
                };
                (status, Some(at(o.minute + to_pickup)))
            } else {
                (TripStatus::Rejected, None)
            };
            let payment = if pay_rng.random::<f64>() < 0.6 {
                PaymentMethod::Cash
            } else {
                PaymentMethod::Card
            };
            TripRecord {
                driver_id: format!("D{:04}", o.driver),
                trip_id: format!("T{i:07}"),
                created_time: Some(at(o.minute)),
                assigned_time: Some(at(o.minute)),
                decision_time: Some(at(o.minute)),
                pickup_time,
                pickup_lat: Some(pickup_lat),
                pickup_lon: Some(pickup_lon),
                drop_lat: Some(drop_lat),
                drop_lon: Some(drop_lon),
                pickup_distance_km: Some(pd),
                trip_distance_km: Some(ride.distance_km),
                status: Some(status),
                payment_method: Some(payment),
            }
        })
        .collect();
    Ok(records)
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateWindow {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl DateWindow {
    pub fn contains(&self, t: NaiveDateTime) -> bool {
        self.start <= t && t < self.end
    }
}

/// Monday 00:00 of the week holding the earliest offer in the log.
pub fn log_origin(records: &[TripRecord]) -> Option<NaiveDateTime> {
    let first = records.iter().filter_map(|r| r.assigned_time.or(r.created_time)).min()?;
    let monday = first.date() - Duration::days(first.weekday().num_days_from_monday() as i64);
    monday.and_hms_opt(0, 0, 0)
}

/// Splits the log into `train_weeks` whole weeks from the origin followed by
/// one held-out evaluation week.
pub fn split_windows(records: &[TripRecord], train_weeks: u32) -> Option<(DateWindow, DateWindow)> {
    let origin = log_origin(records)?;
    let train_end = origin + Duration::weeks(train_weeks as i64);
    Some((
        DateWindow { start: origin, end: train_end },
        DateWindow { start: train_end, end: train_end + Duration::weeks(1) },
    ))
}

/// How observations are rebuilt from logged rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub grid: GridSpec,
    pub speed_kmh: f64,
    /// Prior-week trips assumed for goals in the log's first week.
    pub default_last_week_trips: u32,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self { grid: GridSpec::default(), speed_kmh: 30.0, default_last_week_trips: 40 }
    }
}

struct DriverHistory<'a> {
    rows: Vec<&'a TripRecord>,
    /// Completion minutes (since origin), ascending.
    completions: Vec<u32>,
}

fn minutes_between(origin: NaiveDateTime, t: NaiveDateTime) -> u32 {
    (t - origin).num_minutes().max(0) as u32
}

fn driver_histories(records: &[TripRecord], origin: NaiveDateTime, speed_kmh: f64) -> BTreeMap<&str, DriverHistory<'_>> {
    let mut by_driver: BTreeMap<&str, DriverHistory<'_>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_complete()) {
        by_driver
            .entry(r.driver_id.as_str())
            .or_insert_with(|| DriverHistory { rows: Vec::new(), completions: Vec::new() })
            .rows
            .push(r);
    }
    for h in by_driver.values_mut() {
        h.rows.sort_by(|a, b| a.assigned_time.cmp(&b.assigned_time).then(a.trip_id.cmp(&b.trip_id)));
        h.completions = h
            .rows
            .iter()
            .filter(|r| r.status == Some(TripStatus::Completed))
            .map(|r| {
                let start = minutes_between(origin, r.decision_time.expect("complete record"));
                let km = r.pickup_distance_km.unwrap_or(0.0) + r.trip_distance_km.unwrap_or(0.0);
                start + travel_minutes(km, speed_kmh)
            })
            .collect();
        h.completions.sort_unstable();
    }
    by_driver
}

/// Rebuilds one trajectory per driver from the offers inside `window`.
///
/// The observation for each offer uses the driver's history up to the offer
/// minute: completed trips this week against the goal (previous week's
/// completions times the target multiplier), and minutes since the last
/// completion. A trip completes `travel_minutes(pickup + trip distance)`
/// after its decision, mirroring the simulator. Drivers without offers in
/// the window are omitted.
pub fn extract_demonstrations(
    records: &[TripRecord],
    params: &PlatformParams,
    window: &DateWindow,
    opts: &DemoOptions,
) -> Vec<Trajectory> {
    let Some(origin) = log_origin(records) else {
        return Vec::new();
    };
    let week = MINUTES_PER_WEEK as u32;
    let mut out = Vec::new();
    for (driver, history) in driver_histories(records, origin, opts.speed_kmh) {
        let weekly_count = |w: u32| -> u32 {
            history.completions.iter().filter(|&&c| c / week == w).count() as u32
        };
        let mut steps = Vec::new();
        for r in &history.rows {
            let assigned = r.assigned_time.expect("complete record");
            if !window.contains(assigned) {
                continue;
            }
            let t = minutes_between(origin, assigned);
            let w = t / week;
            let last_week = if w == 0 { opts.default_last_week_trips } else { weekly_count(w - 1) };
            let goal = weekly_goal(last_week, params.weekly_target_multiplier);
            let done_before = history.completions.partition_point(|&c| c <= t);
            let completed = history.completions[..done_before]
                .iter()
                .filter(|&&c| c / week == w)
                .count() as u32;
            let idle_since = done_before.checked_sub(1).map_or(0, |i| history.completions[i]);

            let drop = opts
                .grid
                .to_km(r.drop_lat.expect("complete record"), r.drop_lon.expect("complete record"));
            let pickup_km = r.pickup_distance_km.expect("complete record");
            let trip_km = r.trip_distance_km.expect("complete record");
            let minute_of_day = assigned.hour() * 60 + assigned.minute();
            let idle = (t - idle_since) as f64;
            let observation = Observation::new(
                pickup_km,
                trip_km,
                minute_of_day as f64,
                goal.saturating_sub(completed) as f64,
                opts.grid.centrality(drop),
                idle,
            );
            let action = r.status.expect("complete record").action();
            let inputs = RewardInputs {
                trip_km,
                pickup_km,
                idle_minutes: idle,
                trips_completed: completed,
                goal_trips: goal,
            };
            let reward = reward_from_inputs(params, &inputs, action, minute_of_day);
            steps.push(Step { minute: t, observation, action, reward, inputs });
        }
        if !steps.is_empty() {
            out.push(Trajectory { driver: driver.to_string(), steps });
        }
    }
    out
}

/// Mean completed trips per week for each driver inside `window`, in driver
/// id order; the seed for first-week goals of a fresh simulation.
pub fn weekly_trip_averages(records: &[TripRecord], window: &DateWindow, speed_kmh: f64) -> Vec<u32> {
    let Some(origin) = log_origin(records) else {
        return Vec::new();
    };
    let weeks = ((window.end - window.start).num_minutes() as f64 / MINUTES_PER_WEEK as f64).max(1.0);
    let (lo, hi) = (minutes_between(origin, window.start), minutes_between(origin, window.end));
    driver_histories(records, origin, speed_kmh)
        .values()
        .map(|h| {
            let n = h.completions.iter().filter(|&&c| lo <= c && c < hi).count();
            (n as f64 / weeks).round() as u32
        })
        .collect()
}

/// Rows whose creation time (assignment time when absent) falls in `window`.
pub fn within(records: &[TripRecord], window: &DateWindow) -> Vec<TripRecord> {
    records
        .iter()
        .filter(|r| r.created_time.or(r.assigned_time).is_some_and(|t| window.contains(t)))
        .cloned()
        .collect()
}

/// Fits independent marginals for pickup x, pickup y (grid km) and trip
/// distance. Zero-length trips are left out of the distance sample since the
/// generator needs a positive radius.
pub fn fit_ride_distributions(records: &[TripRecord], grid: &GridSpec) -> Result<RideDistributions> {
    let mut xs = Vec::with_capacity(records.len());
    let mut ys = Vec::with_capacity(records.len());
    for r in records {
        if let (Some(lat), Some(lon)) = (r.pickup_lat, r.pickup_lon) {
            let p = grid.clamp(grid.to_km(lat, lon));
            xs.push(p.x);
            ys.push(p.y);
        }
    }
    let ds: Vec<f64> = records.iter().filter_map(|r| r.trip_distance_km).filter(|d| *d > 0.0).collect();
    Ok(RideDistributions {
        pickup_x: fit_empirical(&xs)?,
        pickup_y: fit_empirical(&ys)?,
        distance: fit_empirical(&ds)?,
    })
}

/// Ride requests created on each day of `window`, divided by the demand
/// scale factor.
pub fn daily_creation_counts(records: &[TripRecord], window: &DateWindow, scaler: DemandScaler) -> Vec<f64> {
    let days = ((window.end - window.start).num_days()).max(0) as usize;
    let mut counts = vec![0.0; days];
    for t in records.iter().filter_map(|r| r.created_time) {
        if window.contains(t) {
            let day = (t - window.start).num_days() as usize;
            if let Some(c) = counts.get_mut(day) {
                *c += 1.0;
            }
        }
    }
    counts.iter().map(|c| c / scaler.scale_factor()).collect()
}
