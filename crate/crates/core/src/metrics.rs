//! Evaluation statistics: correlations, daily count tables with confidence
//! intervals, binned acceptance curves, and bootstrap intervals.

use std::io::Write;

use rand::Rng;

use crate::distributions::DAYS_PER_WEEK;
use crate::error::{invalid, Result};
use crate::sim::{Action, EpisodeLog, Observation};

const Z_95: f64 = 1.959963984540054;
const WEEKDAYS: [&str; DAYS_PER_WEEK] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(invalid(format!("lengths differ: {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(invalid("correlation needs at least two points"));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("correlation undefined for zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `100·(predicted − actual)/actual`.
pub fn delta_percent(predicted: f64, actual: f64) -> Result<f64> {
    if !(actual.is_finite() && actual > 0.0) {
        return Err(invalid(format!("actual count must be > 0, got {actual}")));
    }
    Ok(100.0 * (predicted - actual) / actual)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyCountRow {
    pub day: usize,
    pub label: &'static str,
    pub mean: f64,
    /// Normal-approximation 95% interval; absent with fewer than two
    /// replications.
    pub ci: Option<(f64, f64)>,
    pub actual: Option<f64>,
    pub delta_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyCountReport {
    pub replications: usize,
    pub rows: Vec<DailyCountRow>,
    pub warning: Option<String>,
}

impl DailyCountReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "label", "predicted_mean", "ci_lower", "ci_upper", "actual", "delta_percent"])?;
        for r in &self.rows {
            let (lo, hi) = r.ci.map_or((String::new(), String::new()), |(l, h)| (l.to_string(), h.to_string()));
            w.write_record([
                r.day.to_string(),
                r.label.to_string(),
                r.mean.to_string(),
                lo,
                hi,
                r.actual.map(|a| a.to_string()).unwrap_or_default(),
                r.delta_percent.map(|d| format!("{d:.3}")).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean generated rides per simulated day across replications, with a 95%
/// interval `mean ± 1.96·s/√n` and, when `actual` is given, the percent
/// deviation from it. Day `d` is labelled with weekday `d mod 7`, Monday
/// first.
pub fn daily_counts(replications: &[EpisodeLog], actual: Option<&[f64]>) -> Result<DailyCountReport> {
    if replications.is_empty() {
        return Err(invalid("no replications to summarize"));
    }
    let days = replications.iter().map(|l| l.daily.len()).min().unwrap_or(0);
    let n = replications.len();
    let warning = (n < 2).then(|| format!("only {n} replication; confidence interval omitted"));
    let mut rows = Vec::with_capacity(days);
    for day in 0..days {
        let counts: Vec<f64> = replications.iter().map(|l| l.daily[day].generated as f64).collect();
        let m = mean(&counts);
        let ci = (n >= 2).then(|| {
            let var = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let half = Z_95 * var.sqrt() / (n as f64).sqrt();
            (m - half, m + half)
        });
        let actual_day = actual.and_then(|a| a.get(day).copied());
        let delta = actual_day.map(|a| delta_percent(m, a)).transpose()?;
        rows.push(DailyCountRow {
            day,
            label: WEEKDAYS[day % DAYS_PER_WEEK],
            mean: m,
            ci,
            actual: actual_day,
            delta_percent: delta,
        });
    }
    Ok(DailyCountReport { replications: n, rows, warning })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAxis {
    HourOfDay,
    TripDistance,
}

impl BinAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            BinAxis::HourOfDay => "hour_of_day",
            BinAxis::TripDistance => "trip_km",
        }
    }

    pub fn value(self, obs: &Observation) -> f64 {
        match self {
            BinAxis::HourOfDay => obs.hour_of_day(),
            BinAxis::TripDistance => obs.trip_km(),
        }
    }

    /// 24 hourly bins, or 1 km bins up to 20 km plus an overflow bin.
    pub fn default_edges(self) -> Vec<f64> {
        match self {
            BinAxis::HourOfDay => (0..=24).map(f64::from).collect(),
            BinAxis::TripDistance => {
                let mut e: Vec<f64> = (0..=20).map(f64::from).collect();
                e.push(f64::INFINITY);
                e
            }
        }
    }
}

/// Offer and acceptance counts per bin `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceCurve {
    pub axis: BinAxis,
    pub edges: Vec<f64>,
    pub offers: Vec<u64>,
    pub accepted: Vec<u64>,
}

impl AcceptanceCurve {
    pub fn bins(&self) -> usize {
        self.offers.len()
    }

    pub fn rate(&self, bin: usize) -> Option<f64> {
        (self.offers[bin] > 0).then(|| self.accepted[bin] as f64 / self.offers[bin] as f64)
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        (0..self.bins()).map(|b| self.rate(b)).collect()
    }

    pub fn total_offers(&self) -> u64 {
        self.offers.iter().sum()
    }

    pub fn overall_rate(&self) -> Option<f64> {
        let total = self.total_offers();
        (total > 0).then(|| self.accepted.iter().sum::<u64>() as f64 / total as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lower", "bin_upper", "axis", "offers", "accepted", "rate"])?;
        for b in 0..self.bins() {
            w.write_record([
                self.edges[b].to_string(),
                self.edges[b + 1].to_string(),
                self.axis.as_str().to_string(),
                self.offers[b].to_string(),
                self.accepted[b].to_string(),
                self.rate(b).map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn acceptance_by_bin<'a, I>(offers: I, axis: BinAxis, edges: &[f64]) -> Result<AcceptanceCurve>
where
    I: IntoIterator<Item = (&'a Observation, Action)>,
{
    if edges.len() < 2 || edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bin edges must be at least two strictly increasing values"));
    }
    let bins = edges.len() - 1;
    let mut curve = AcceptanceCurve { axis, edges: edges.to_vec(), offers: vec![0; bins], accepted: vec![0; bins] };
    let mut seen = false;
    for (obs, action) in offers {
        seen = true;
        let v = axis.value(obs);
        let upper = edges.partition_point(|e| *e <= v);
        if upper == 0 || upper > bins {
            continue;
        }
        curve.offers[upper - 1] += 1;
        if action.is_accept() {
            curve.accepted[upper - 1] += 1;
        }
    }
    if !seen {
        return Err(invalid("no offers to bin"));
    }
    Ok(curve)
}

/// Writes curves over identical bins side by side: one `offers` and one
/// `rate` column per label.
pub fn write_curves_csv<W: Write>(out: W, curves: &[(&str, &AcceptanceCurve)]) -> Result<()> {
    let Some((_, first)) = curves.first() else {
        return Err(invalid("no curves to write"));
    };
    if curves.iter().any(|(_, c)| c.edges != first.edges) {
        return Err(invalid("curves use different bins"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["bin_lower".to_string(), "bin_upper".to_string()];
    for (label, _) in curves {
        header.push(format!("{label}_offers"));
        header.push(format!("{label}_rate"));
    }
    w.write_record(&header)?;
    for b in 0..first.bins() {
        let mut row = vec![first.edges[b].to_string(), first.edges[b + 1].to_string()];
        for (_, c) in curves {
            row.push(c.offers[b].to_string());
            row.push(c.rate(b).map(|r| r.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Acceptance curve of all offers in an episode log.
pub fn episode_curve(log: &EpisodeLog, axis: BinAxis) -> Result<AcceptanceCurve> {
    acceptance_by_bin(log.offers.iter().map(|o| (&o.observation, o.action)), axis, &axis.default_edges())
}

/// Pearson correlation between two curves over the bins populated in both.
pub fn curve_correlation(a: &AcceptanceCurve, b: &AcceptanceCurve) -> Result<f64> {
    if a.edges != b.edges {
        return Err(invalid("curves use different bins"));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        a.rates().into_iter().zip(b.rates()).filter_map(|(x, y)| Some((x?, y?))).unzip();
    pearson(&xs, &ys)
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| stats[((stats.len() - 1) as f64 * q).round() as usize];
    (at(tail), at(1.0 - tail))
}

fn check_bootstrap(resamples: usize, level: f64) -> Result<()> {
    if resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(invalid("bootstrap needs resamples > 0 and a level in (0, 1)"));
    }
    Ok(())
}

/// Percentile bootstrap interval for `mean(a) − mean(b)` with `a` and `b`
/// resampled independently.
pub fn bootstrap_mean_diff<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_bootstrap(resamples, level)?;
    if a.is_empty() || b.is_empty() {
        return Err(invalid("bootstrap samples must be non-empty"));
    }
    let resample_mean = |xs: &[f64], rng: &mut R| {
        (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64
    };
    let stats = (0..resamples).map(|_| resample_mean(a, rng) - resample_mean(b, rng)).collect();
    Ok(percentile_interval(stats, level))
}

/// Percentile bootstrap interval of `statistic` over index resamples of a
/// sample of size `n`.
pub fn bootstrap_ci<R, F>(n: usize, resamples: usize, level: f64, rng: &mut R, mut statistic: F) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> f64,
{
    check_bootstrap(resamples, level)?;
    if n == 0 {
        return Err(invalid("bootstrap sample must be non-empty"));
    }
    let mut idx = vec![0; n];
    let stats = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            statistic(&idx)
        })
        .collect();
    Ok(percentile_interval(stats, level))
}
