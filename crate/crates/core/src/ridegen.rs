//! Synthetic ride generation on a rectangular kilometre grid.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::EmpiricalDistribution;
use crate::error::{invalid, Error, Result};

/// Upper bound on distance halvings for a single ride.
pub const MAX_HALVINGS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Simulation area: a `width_km × height_km` box whose (0, 0) corner sits at
/// (`origin_lat`, `origin_lon`). Lat/lon map to kilometres through a local
/// equirectangular projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub width_km: f64,
    pub height_km: f64,
    pub noise_epsilon_km: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub km_per_deg_lat: f64,
    pub km_per_deg_lon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width_km: 20.0,
            height_km: 20.0,
            noise_epsilon_km: 0.05,
            origin_lat: 6.80,
            origin_lon: 79.82,
            km_per_deg_lat: 110.574,
            km_per_deg_lon: 109.77,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width_km", self.width_km),
            ("height_km", self.height_km),
            ("km_per_deg_lat", self.km_per_deg_lat),
            ("km_per_deg_lon", self.km_per_deg_lon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("grid {name} must be > 0, got {v}")));
            }
        }
        let eps = self.noise_epsilon_km;
        if !(eps.is_finite() && eps >= 0.0 && eps < self.width_km.min(self.height_km) / 2.0) {
            return Err(invalid(format!(
                "noise epsilon {eps} must lie in [0, min(width, height)/2)"
            )));
        }
        Ok(())
    }

    pub fn to_km(&self, lat: f64, lon: f64) -> Point {
        Point::new(
            (lon - self.origin_lon) * self.km_per_deg_lon,
            (lat - self.origin_lat) * self.km_per_deg_lat,
        )
    }

    /// Inverse of [`to_km`](Self::to_km); returns `(lat, lon)`.
    pub fn to_latlon(&self, p: Point) -> (f64, f64) {
        (
            self.origin_lat + p.y / self.km_per_deg_lat,
            self.origin_lon + p.x / self.km_per_deg_lon,
        )
    }

    /// Open-box test `0 < x < width`, `0 < y < height`.
    pub fn strictly_inside(&self, p: Point) -> bool {
        0.0 < p.x && p.x < self.width_km && 0.0 < p.y && p.y < self.height_km
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(0.0, self.width_km), p.y.clamp(0.0, self.height_km))
    }

    pub fn center(&self) -> Point {
        Point::new(self.width_km / 2.0, self.height_km / 2.0)
    }

    /// Distance from the grid centre as a fraction of the half-diagonal;
    /// 0 at the centre, 1 at a corner.
    pub fn centrality(&self, p: Point) -> f64 {
        let half_diag = self.width_km.hypot(self.height_km) / 2.0;
        p.distance(&self.center()) / half_diag
    }
}

/// A ride request: pickup, drop, and the (possibly halved) trip distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ride {
    pub pickup: Point,
    pub drop: Point,
    pub distance_km: f64,
    pub created_minute: u32,
}

pub fn drop_location(pickup: Point, distance: f64, angle: f64) -> Point {
    Point::new(pickup.x + distance * angle.cos(), pickup.y + distance * angle.sin())
}

/// Pickup and trip-distance samplers fitted from the trip log.
#[derive(Debug, Clone, PartialEq)]
pub struct RideDistributions {
    pub pickup_x: EmpiricalDistribution,
    pub pickup_y: EmpiricalDistribution,
    pub distance: EmpiricalDistribution,
}

/// Generates `count` rides created at `minute`.
///
/// Each pickup is drawn from the coordinate marginals, jittered by
/// `U(−ε, ε)` per axis and clamped to the closed grid. A distance is drawn
/// and the drop placed at a uniformly random angle on the circle of that
/// radius; while the drop falls outside the open grid the distance is halved
/// and a fresh angle drawn.
pub fn generate_rides<R: Rng + ?Sized>(
    grid: &GridSpec,
    dists: &RideDistributions,
    count: u64,
    minute: u32,
    rng: &mut R,
) -> Result<VecDeque<Ride>> {
    let mut rides = VecDeque::with_capacity(count as usize);
    let eps = grid.noise_epsilon_km;
    for _ in 0..count {
        let mut pickup = Point::new(dists.pickup_x.sample(rng), dists.pickup_y.sample(rng));
        if eps > 0.0 {
            pickup.x += rng.random_range(-eps..eps);
            pickup.y += rng.random_range(-eps..eps);
        }
        let pickup = grid.clamp(pickup);

        let mut distance = dists.distance.sample(rng);
        if !(distance.is_finite() && distance > 0.0) {
            return Err(invalid(format!("sampled trip distance {distance} is not positive")));
        }
        let mut drop = drop_location(pickup, distance, rng.random_range(0.0..TAU));
        let mut halvings = 0;
        while !grid.strictly_inside(drop) {
            if halvings == MAX_HALVINGS {
                return Err(Error::HalvingLimit(MAX_HALVINGS));
            }
            distance /= 2.0;
            halvings += 1;
            drop = drop_location(pickup, distance, rng.random_range(0.0..TAU));
        }
        rides.push_back(Ride { pickup, drop, distance_km: distance, created_minute: minute });
    }
    Ok(rides)
}

pub fn write_rides_csv<W: Write>(out: W, rides: &[Ride]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["minute", "pickup_x", "pickup_y", "drop_x", "drop_y", "distance_km"])?;
    for r in rides {
        w.write_record([
            r.created_minute.to_string(),
            r.pickup.x.to_string(),
            r.pickup.y.to_string(),
            r.drop.x.to_string(),
            r.drop.y.to_string(),
            r.distance_km.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
