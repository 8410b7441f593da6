//! Ride-hailing marketplace simulator.
//!
//! Trip logs are cleaned and turned into empirical pickup/distance samplers
//! and a minute-of-week demand profile. A per-minute simulation generates
//! rides, dispatches them to drivers and scores each decision. One shared
//! categorical deep-Q agent is first cloned from logged decisions and then
//! fine-tuned in the simulation, so that acceptance behavior can be
//! compared across platform parameter settings.

pub mod agent;
pub mod distributions;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod ridegen;
pub mod rng;
pub mod sim;
pub mod training;

pub use agent::{AgentConfig, AtomSupport, CategoricalQAgent, ReplayBuffer};
pub use distributions::{DemandScaler, EmpiricalDistribution, TimeProfile};
pub use error::{Error, Result};
pub use ingest::{CleaningReport, SyntheticPolicySpec, TripRecord};
pub use metrics::{AcceptanceCurve, BinAxis, DailyCountReport};
pub use nn::Mlp;
pub use ridegen::{GridSpec, Point, Ride, RideDistributions};
pub use rng::SimRng;
pub use sim::{Action, EpisodeLog, Observation, PlatformParams, SimConfig, Transition};
pub use training::{BcConfig, RlConfig, TrainReport};
