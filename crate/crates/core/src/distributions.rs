//! Empirical distributions for pickup coordinates and trip distance, the
//! minute-of-week demand profile, and the sampling helpers built on them.

use std::io::{BufRead, Write};

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::ingest::TripRecord;

pub const MINUTES_PER_DAY: usize = 1440;
pub const DAYS_PER_WEEK: usize = 7;
pub const MINUTES_PER_WEEK: usize = MINUTES_PER_DAY * DAYS_PER_WEEK;

const DISTRIBUTION_MAGIC: &str = "ridesim-distribution v1";
const PROFILE_MAGIC: &str = "ridesim-time-profile v1";

/// Sorted sample set whose linearly interpolated order statistics serve as
/// the inverse CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid(format!(
                "an empirical distribution needs at least 2 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("empirical distribution samples"));
        }
        let mut samples = values.to_vec();
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    /// Quantile at `u`: position `u·(n−1)` interpolated between neighbouring
    /// order statistics.
    pub fn inverse_sample(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(invalid(format!("quantile level {u} outside [0, 1]")));
        }
        let n = self.samples.len();
        let pos = u * (n - 1) as f64;
        let lo = (pos.floor() as usize).min(n - 1);
        if lo == n - 1 {
            return Ok(self.samples[n - 1]);
        }
        let frac = pos - lo as f64;
        let a = self.samples[lo];
        let b = self.samples[lo + 1];
        Ok(a + frac * (b - a))
    }

    /// Draw one value by inverse transform of a uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.inverse_sample(u).expect("uniform variate lies in [0, 1)")
    }

    /// Right-continuous empirical CDF of the stored samples.
    pub fn cdf(&self, x: f64) -> f64 {
        let count = self.samples.partition_point(|&s| s <= x);
        count as f64 / self.samples.len() as f64
    }

    pub fn write_artifact<W: Write>(&self, mut out: W, name: &str) -> Result<()> {
        writeln!(out, "{DISTRIBUTION_MAGIC}")?;
        writeln!(out, "name {name}")?;
        writeln!(out, "count {}", self.samples.len())?;
        for s in &self.samples {
            writeln!(out, "{s:e}")?;
        }
        Ok(())
    }

    /// Reads an artifact written by [`write_artifact`](Self::write_artifact).
    /// Leading `#` metadata lines are skipped.
    pub fn read_artifact<R: BufRead>(input: R) -> Result<(String, Self)> {
        let mut lines = content_lines(input);
        expect_line(&mut lines, DISTRIBUTION_MAGIC)?;
        let (line_no, name_line) = next_line(&mut lines)?;
        let name = name_line
            .strip_prefix("name ")
            .ok_or_else(|| format_err(line_no, "expected `name <variable>`"))?
            .to_string();
        let (line_no, count_line) = next_line(&mut lines)?;
        let count: usize = count_line
            .strip_prefix("count ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| format_err(line_no, "expected `count <n>`"))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (line_no, line) = next_line(&mut lines)?;
            values.push(
                line.parse::<f64>()
                    .map_err(|e| format_err(line_no, &format!("bad sample: {e}")))?,
            );
        }
        Ok((name, Self::fit(&values)?))
    }
}

pub fn fit_empirical(values: &[f64]) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::fit(values)
}

pub fn inverse_sample(dist: &EmpiricalDistribution, u: f64) -> Result<f64> {
    dist.inverse_sample(u)
}

/// Rounds `x` up with probability equal to its fractional part, so the
/// expected result equals `x`.
pub fn probabilistic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> Result<u64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("probabilistic_round input"));
    }
    if x < 0.0 {
        return Err(invalid(format!("cannot round negative count {x}")));
    }
    let floor = x.floor();
    let frac = x - floor;
    let mut n = floor as u64;
    if frac > 0.0 && rng.random::<f64>() < frac {
        n += 1;
    }
    Ok(n)
}

/// Two-sample Kolmogorov–Smirnov statistic between the fitted samples and
/// `observed`.
pub fn ks_statistic(dist: &EmpiricalDistribution, observed: &[f64]) -> Result<f64> {
    if observed.is_empty() || dist.is_empty() {
        return Err(invalid("ks_statistic needs two non-empty samples"));
    }
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ks_statistic observations"));
    }
    let mut obs = observed.to_vec();
    obs.sort_by(f64::total_cmp);
    let a = dist.samples();
    let (na, nb) = (a.len() as f64, obs.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < obs.len() {
        let x = a[i].min(obs[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < obs.len() && obs[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Divisor that shrinks logged demand to a simulable rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandScaler {
    scale_factor: f64,
}

impl DemandScaler {
    pub fn new(scale_factor: f64) -> Result<Self> {
        if !(scale_factor.is_finite() && scale_factor > 0.0) {
            return Err(invalid(format!("scale factor must be > 0, got {scale_factor}")));
        }
        Ok(Self { scale_factor })
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }
}

impl Default for DemandScaler {
    fn default() -> Self {
        Self { scale_factor: 35.0 }
    }
}

/// Expected (scaled) ride creations for every minute of the week,
/// indexed Monday 00:00 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProfile {
    entries: Vec<f64>,
}

impl TimeProfile {
    pub fn zeros() -> Self {
        Self { entries: vec![0.0; MINUTES_PER_WEEK] }
    }

    pub fn from_entries(entries: Vec<f64>) -> Result<Self> {
        if entries.len() != MINUTES_PER_WEEK {
            return Err(Error::Dimension { expected: MINUTES_PER_WEEK, actual: entries.len() });
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("time profile"));
        }
        if entries.iter().any(|&e| e < 0.0) {
            return Err(invalid("time profile entries must be >= 0"));
        }
        Ok(Self { entries })
    }

    /// `dow` is 0 for Monday.
    pub fn get(&self, dow: usize, minute: usize) -> f64 {
        self.entries[dow * MINUTES_PER_DAY + minute]
    }

    pub fn at_week_minute(&self, minute_of_week: usize) -> f64 {
        self.entries[minute_of_week % MINUTES_PER_WEEK]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn day_total(&self, dow: usize) -> f64 {
        self.entries[dow * MINUTES_PER_DAY..(dow + 1) * MINUTES_PER_DAY].iter().sum()
    }

    pub fn week_total(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&e| e == 0.0)
    }

    pub fn write_artifact<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{PROFILE_MAGIC}")?;
        writeln!(out, "dow,minute,mean_scaled_count")?;
        for (idx, e) in self.entries.iter().enumerate() {
            writeln!(out, "{},{},{e:e}", idx / MINUTES_PER_DAY, idx % MINUTES_PER_DAY)?;
        }
        Ok(())
    }

    pub fn read_artifact<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = content_lines(input);
        expect_line(&mut lines, PROFILE_MAGIC)?;
        expect_line(&mut lines, "dow,minute,mean_scaled_count")?;
        let mut entries = vec![0.0; MINUTES_PER_WEEK];
        let mut seen = 0usize;
        for item in lines {
            let (line_no, line) = item?;
            let mut parts = line.split(',');
            let mut field = |what: &str| {
                parts
                    .next()
                    .ok_or_else(|| format_err(line_no, &format!("missing {what}")))
            };
            let dow: usize = field("dow")?.parse().map_err(|_| format_err(line_no, "bad dow"))?;
            let minute: usize =
                field("minute")?.parse().map_err(|_| format_err(line_no, "bad minute"))?;
            let value: f64 =
                field("value")?.parse().map_err(|_| format_err(line_no, "bad value"))?;
            if dow >= DAYS_PER_WEEK || minute >= MINUTES_PER_DAY {
                return Err(format_err(line_no, "dow/minute out of range"));
            }
            entries[dow * MINUTES_PER_DAY + minute] = value;
            seen += 1;
        }
        if seen != MINUTES_PER_WEEK {
            return Err(Error::Dimension { expected: MINUTES_PER_WEEK, actual: seen });
        }
        Self::from_entries(entries)
    }
}

/// Fits the demand profile from trip creation times: for each
/// (day-of-week, minute) the mean creation count over the days of that
/// weekday spanned by the data, divided by the scale factor.
pub fn fit_time_profile(records: &[TripRecord], scaler: DemandScaler) -> Result<TimeProfile> {
    fit_time_profile_from_times(records.iter().filter_map(|r| r.created_time), scaler)
}

pub fn fit_time_profile_from_times<I>(times: I, scaler: DemandScaler) -> Result<TimeProfile>
where
    I: IntoIterator<Item = NaiveDateTime>,
{
    let mut counts = vec![0u64; MINUTES_PER_WEEK];
    let mut first: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    for t in times {
        counts[minute_of_week(t)] += 1;
        let d = t.date();
        first = Some(first.map_or(d, |f| f.min(d)));
        last = Some(last.map_or(d, |l| l.max(d)));
    }
    let (Some(first), Some(last)) = (first, last) else {
        return Err(invalid("cannot fit a time profile from an empty log"));
    };
    let mut days_per_dow = [0u64; DAYS_PER_WEEK];
    for d in first.iter_days().take_while(|d| *d <= last) {
        days_per_dow[d.weekday().num_days_from_monday() as usize] += 1;
    }
    let entries = counts
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let days = days_per_dow[idx / MINUTES_PER_DAY];
            if days == 0 {
                0.0
            } else {
                c as f64 / days as f64 / scaler.scale_factor()
            }
        })
        .collect();
    TimeProfile::from_entries(entries)
}

pub fn minute_of_week(t: NaiveDateTime) -> usize {
    t.weekday().num_days_from_monday() as usize * MINUTES_PER_DAY
        + t.hour() as usize * 60
        + t.minute() as usize
}

type NumberedLine = Result<(usize, String)>;

fn content_lines<R: BufRead>(input: R) -> impl Iterator<Item = NumberedLine> {
    input
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(Error::from))
        .filter(|item| match item {
            Ok((_, l)) => !l.starts_with('#') && !l.trim().is_empty(),
            Err(_) => true,
        })
}

fn next_line(lines: &mut impl Iterator<Item = NumberedLine>) -> Result<(usize, String)> {
    lines
        .next()
        .unwrap_or_else(|| Err(format_err(0, "unexpected end of artifact")))
}

fn expect_line(lines: &mut impl Iterator<Item = NumberedLine>, expected: &str) -> Result<()> {
    let (line_no, line) = next_line(lines)?;
    if line.trim() != expected {
        return Err(format_err(line_no, &format!("expected `{expected}`, found `{line}`")));
    }
    Ok(())
}

fn format_err(line: usize, msg: &str) -> Error {
    Error::Format { line, msg: msg.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::rng::seeded;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn fit_sorts_and_validates() {
        let d = fit_empirical(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.samples(), &[1.0, 2.0, 3.0]);
        assert!(fit_empirical(&[5.0, 5.0, 5.0]).is_ok());
        assert!(fit_empirical(&[1.0, f64::NAN]).is_err());
        assert!(fit_empirical(&[1.0]).is_err());
    }

    #[test]
    fn inverse_sample_examples() {
        let d = fit_empirical(&[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!(d.inverse_sample(0.0).unwrap(), 10.0);
        assert_eq!(d.inverse_sample(1.0).unwrap(), 40.0);
        // p = 0.5 * 3 = 1.5 -> 20 + 0.5 * 10
        assert_eq!(d.inverse_sample(0.5).unwrap(), 25.0);
        let c = fit_empirical(&[5.0, 5.0, 5.0]).unwrap();
        for u in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(c.inverse_sample(u).unwrap(), 5.0);
        }
        assert!(d.inverse_sample(-0.01).is_err());
        assert!(d.inverse_sample(1.01).is_err());
    }

    #[test]
    fn probabilistic_round_examples() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(probabilistic_round(2.0, &mut rng).unwrap(), 2);
            assert_eq!(probabilistic_round(0.0, &mut rng).unwrap(), 0);
        }
        let n = 100_000;
        let total: u64 = (0..n).map(|_| probabilistic_round(2.3, &mut rng).unwrap()).sum();
        let mean = total as f64 / n as f64;
        assert!((2.29..=2.31).contains(&mean), "mean {mean}");
        assert!(probabilistic_round(-0.5, &mut rng).is_err());
        assert!(probabilistic_round(f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn ks_examples() {
        let d = fit_empirical(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ks_statistic(&d, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 0.0);
        let a = fit_empirical(&[0.0, 1.0]).unwrap();
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]).unwrap(), 1.0);
        assert!(ks_statistic(&a, &[]).is_err());
    }

    #[test]
    fn ks_of_inverse_draws_is_small() {
        let mut rng = seeded(11);
        let source: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(2) * 30.0).collect();
        let d = fit_empirical(&source).unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        assert!(ks_statistic(&d, &draws).unwrap() < 0.05);
    }

    #[test]
    fn time_profile_scales_mean_counts() {
        // four Mondays, 70 trips at 08:00 each
        let mut times = Vec::new();
        for week in 0..4 {
            let day = NaiveDate::from_ymd_opt(2020, 2, 3).unwrap() + chrono::Days::new(7 * week);
            for _ in 0..70 {
                times.push(day.and_hms_opt(8, 0, 0).unwrap());
            }
        }
        // extend the span to a full four weeks
        times.push(NaiveDate::from_ymd_opt(2020, 3, 1).unwrap().and_hms_opt(23, 59, 0).unwrap());
        let p = fit_time_profile_from_times(times, DemandScaler::default()).unwrap();
        assert_eq!(p.get(0, 8 * 60), 2.0);
        assert_eq!(p.get(0, 3 * 60 + 12), 0.0);
        assert!(fit_time_profile_from_times(Vec::new(), DemandScaler::default()).is_err());
    }

    #[test]
    fn logged_scale_weekly_total() {
        // 700,000 creations spread evenly over one week scale to 20,000 rides.
        let start = NaiveDate::from_ymd_opt(2020, 2, 3).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let times = (0..700_000u64)
            .map(|i| start + chrono::Duration::minutes((i % MINUTES_PER_WEEK as u64) as i64));
        let p = fit_time_profile_from_times(times, DemandScaler::default()).unwrap();
        assert!((p.week_total() - 20_000.0).abs() < 1e-6);
    }

    #[test]
    fn artifacts_round_trip() {
        let d = fit_empirical(&[0.1, 1.0 / 3.0, 2.5e-12, 7.0]).unwrap();
        let mut buf = b"# meta line\n".to_vec();
        d.write_artifact(&mut buf, "distance").unwrap();
        let (name, back) = EmpiricalDistribution::read_artifact(buf.as_slice()).unwrap();
        assert_eq!(name, "distance");
        assert_eq!(back, d);

        let mut entries = vec![0.0; MINUTES_PER_WEEK];
        entries[17] = 0.123_456_789_012_345_67;
        let p = TimeProfile::from_entries(entries).unwrap();
        let mut buf = Vec::new();
        p.write_artifact(&mut buf).unwrap();
        assert_eq!(TimeProfile::read_artifact(buf.as_slice()).unwrap(), p);
    }

    proptest! {
        #[test]
        fn inverse_sample_is_monotone(values in prop::collection::vec(-1e3f64..1e3, 2..40),
                                      u1 in 0.0f64..=1.0, u2 in 0.0f64..=1.0) {
            let d = fit_empirical(&values).unwrap();
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(d.inverse_sample(lo).unwrap() <= d.inverse_sample(hi).unwrap());
        }

        #[test]
        fn probabilistic_round_stays_adjacent(x in 0.0f64..1e6, seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let n = probabilistic_round(x, &mut rng).unwrap() as f64;
            prop_assert!(n == x.floor() || n == x.ceil());
        }
    }
}
