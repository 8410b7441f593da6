use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ridesim_core::agent::{project_target, AgentConfig, AtomSupport, CategoricalQAgent};
use ridesim_core::distributions::{fit_empirical, TimeProfile, MINUTES_PER_WEEK};
use ridesim_core::nn::{loss_and_grad, Mlp};
use ridesim_core::ridegen::{generate_rides, GridSpec, RideDistributions};
use ridesim_core::rng::seeded;
use ridesim_core::sim::{run_episode, Action, Observation, SimConfig, Transition};

fn world() -> (GridSpec, RideDistributions) {
    let grid = GridSpec::default();
    let coords: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
    let lengths: Vec<f64> = (1..200).map(|i| i as f64 * 0.08).collect();
    let rides = RideDistributions {
        pickup_x: fit_empirical(&coords).unwrap(),
        pickup_y: fit_empirical(&coords).unwrap(),
        distance: fit_empirical(&lengths).unwrap(),
    };
    (grid, rides)
}

fn agent() -> CategoricalQAgent {
    let cfg = AgentConfig::default();
    let support = AtomSupport::new(-500.0, 2500.0, cfg.atoms).unwrap();
    CategoricalQAgent::new(&cfg, support, &mut seeded(1)).unwrap()
}

fn rides(c: &mut Criterion) {
    let (grid, dists) = world();
    let mut rng = seeded(2);
    c.bench_function("generate_rides_1000", |b| {
        b.iter(|| generate_rides(&grid, &dists, black_box(1000), 0, &mut rng).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let net = Mlp::new(&AgentConfig::default().layer_dims(), &mut seeded(3)).unwrap();
    let input = [0.2, 0.4, 0.5, 0.3, 0.6, 0.1];
    let target = vec![1.0 / 51.0; 51];
    c.bench_function("mlp_forward", |b| b.iter(|| net.forward(black_box(&input)).unwrap()));
    c.bench_function("mlp_forward_backward", |b| {
        b.iter(|| loss_and_grad(&net, black_box(&input), &target, 0).unwrap())
    });
    let support = AtomSupport::new(-10.0, 10.0, 51).unwrap();
    c.bench_function("project_target_51", |b| {
        b.iter(|| project_target(black_box(&target), 1.3, 0.5, &support).unwrap())
    });
    let mut a = agent();
    let obs = Observation::new(1.0, 6.0, 600.0, 20.0, 0.5, 15.0);
    let batch = vec![Transition { s: obs, a: Action::Accept, s_prime: obs, r: 120.0, done: false }; 64];
    c.bench_function("train_step_batch_64", |b| b.iter(|| a.train_step(black_box(&batch)).unwrap()));
}

fn episode(c: &mut Criterion) {
    let (grid, rides) = world();
    let profile = TimeProfile::from_entries(vec![0.4; MINUTES_PER_WEEK]).unwrap();
    let sim = SimConfig { duration_minutes: 1440, ..SimConfig::new(grid, rides, profile) };
    let a = agent();
    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    group.bench_function("one_day_50_drivers", |b| {
        b.iter(|| run_episode(&sim, &a.greedy_policy(), &mut seeded(4)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, rides, network, episode);
criterion_main!(benches);
