use proptest::prelude::*;
use ridesim_core::agent::{project_target, AtomSupport, ReplayBuffer};
use ridesim_core::distributions::{fit_empirical, probabilistic_round};
use ridesim_core::metrics::{acceptance_by_bin, pearson, write_curves_csv, BinAxis};
use ridesim_core::ridegen::{generate_rides, GridSpec, RideDistributions};
use ridesim_core::rng::seeded;
use ridesim_core::sim::{weekly_goal, Action, Observation, Transition};

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("all-zero weights", |raw| {
        let total: f64 = raw.iter().sum();
        (total > 1e-6).then(|| raw.iter().map(|v| v / total).collect())
    })
}

fn projection_case() -> impl Strategy<Value = (Vec<f64>, f64, f64, f64, f64)> {
    (2usize..40, -50.0f64..50.0, 0.1f64..100.0).prop_flat_map(|(n, lo, width)| {
        (distribution(n), Just(lo), Just(lo + width), -3.0 * width..3.0 * width, 0.0f64..=1.0)
    })
}

fn obs(trip_km: f64, minute: f64) -> Observation {
    Observation::new(1.0, trip_km, minute, 10.0, 0.5, 5.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_conserves_mass_and_matches_kernel((probs, lo, hi, r, gamma) in projection_case()) {
        let support = AtomSupport::new(lo, hi, probs.len()).unwrap();
        let out = project_target(&probs, r, gamma, &support).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|p| *p >= 0.0));
        let dz = support.delta();
        for (i, got) in out.iter().enumerate() {
            let zi = support.z(i);
            let want: f64 = probs
                .iter()
                .enumerate()
                .map(|(j, p)| p * (1.0 - ((r + gamma * support.z(j)).clamp(lo, hi) - zi).abs() / dz).max(0.0))
                .sum();
            prop_assert!((got - want).abs() < 1e-9, "atom {}: {} vs {}", i, got, want);
        }
    }
}

proptest! {
    #[test]
    fn replay_keeps_the_newest_in_order(capacity in 1usize..50, pushes in 0usize..200) {
        let mut buf = ReplayBuffer::new(capacity).unwrap();
        let t = |i: usize| Transition { s: obs(1.0, 0.0), a: Action::Accept, s_prime: obs(1.0, 0.0), r: i as f64, done: false };
        buf.extend((0..pushes).map(t));
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let kept: Vec<f64> = buf.iter().map(|t| t.r).collect();
        let want: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(kept, want);
    }

    #[test]
    fn pearson_is_invariant_to_affine_maps(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let spread = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread(&xs) > 1e-3 && spread(&ys) > 1e-3);
        let r = pearson(&xs, &ys).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r).abs() < 1e-9);
        let flipped: Vec<f64> = xs.iter().map(|x| -scale * x + shift).collect();
        prop_assert!((pearson(&flipped, &ys).unwrap() + r).abs() < 1e-9);
        prop_assert!(r.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn curve_weighted_mean_is_the_global_rate(
        offers in prop::collection::vec((0.1f64..30.0, 0.0f64..1440.0, any::<bool>()), 1..300),
    ) {
        let observed: Vec<(Observation, Action)> = offers
            .iter()
            .map(|(d, m, a)| (obs(*d, *m), if *a { Action::Accept } else { Action::Reject }))
            .collect();
        let global = offers.iter().filter(|o| o.2).count() as f64 / offers.len() as f64;
        for axis in [BinAxis::TripDistance, BinAxis::HourOfDay] {
            let curve = acceptance_by_bin(observed.iter().map(|(o, a)| (o, *a)), axis, &axis.default_edges()).unwrap();
            prop_assert_eq!(curve.total_offers() as usize, offers.len());
            let weighted: f64 = (0..curve.bins())
                .filter_map(|b| curve.rate(b).map(|r| r * curve.offers[b] as f64))
                .sum::<f64>()
                / offers.len() as f64;
            prop_assert!((weighted - global).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_table_has_one_row_per_bin(
        offers in prop::collection::vec((0.1f64..30.0, any::<bool>()), 1..100),
    ) {
        let observed: Vec<(Observation, Action)> = offers
            .iter()
            .map(|(d, a)| (obs(*d, 600.0), if *a { Action::Accept } else { Action::Reject }))
            .collect();
        let axis = BinAxis::TripDistance;
        let curve = acceptance_by_bin(observed.iter().map(|(o, a)| (o, *a)), axis, &axis.default_edges()).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &[("a", &curve), ("b", &curve)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        prop_assert_eq!(lines[0], "bin_lower,bin_upper,a_offers,a_rate,b_offers,b_rate");
        prop_assert_eq!(lines.len(), curve.bins() + 1);
        for row in &lines[1..] {
            let cols: Vec<&str> = row.split(',').collect();
            prop_assert_eq!(cols[2], cols[4]);
            prop_assert_eq!(cols[3], cols[5]);
        }
    }

    #[test]
    fn probabilistic_round_lands_on_a_neighbour(x in 0.0f64..1000.0, seed in any::<u64>()) {
        let n = probabilistic_round(x, &mut seeded(seed)).unwrap() as f64;
        prop_assert!(n == x.floor() || n == x.ceil());
    }

    #[test]
    fn drops_stay_inside_any_grid(
        w in 1.0f64..40.0,
        h in 1.0f64..40.0,
        dist in prop::collection::vec(0.01f64..80.0, 2..20),
        seed in any::<u64>(),
    ) {
        let grid = GridSpec { width_km: w, height_km: h, ..GridSpec::default() };
        let rides = RideDistributions {
            pickup_x: fit_empirical(&[0.0, w]).unwrap(),
            pickup_y: fit_empirical(&[0.0, h]).unwrap(),
            distance: fit_empirical(&dist).unwrap(),
        };
        for r in generate_rides(&grid, &rides, 50, 0, &mut seeded(seed)).unwrap() {
            prop_assert!(grid.strictly_inside(r.drop));
            prop_assert!((r.pickup.distance(&r.drop) - r.distance_km).abs() < 1e-9);
        }
    }

    #[test]
    fn weekly_goal_is_at_least_one(trips in 0u32..500, m in 0.01f64..5.0) {
        let g = weekly_goal(trips, m);
        prop_assert!(g >= 1);
        prop_assert!((g as f64 - (trips as f64 * m)).abs() <= 0.5 || g == 1);
    }
}
