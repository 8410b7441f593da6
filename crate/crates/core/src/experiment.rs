//! Paired what-if runs: copies of one warm-started agent are fine-tuned under
//! different platform parameters and compared on seeded offer sets.

use crate::agent::{CategoricalQAgent, Greedy};
use crate::error::{invalid, Result};
use crate::rng::indexed_substream;
use crate::sim::{run_episode, OfferRecord, SimConfig};
use crate::training::{train_rl, RlConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfig {
    pub rl: RlConfig,
    /// Independent fine-tuning runs pooled per arm.
    pub rl_runs: u64,
    /// Episodes that make up the evaluation offer set.
    pub eval_episodes: u64,
    pub seed: u64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self { rl: RlConfig::default(), rl_runs: 1, eval_episodes: 4, seed: 0 }
    }
}

/// Offers met by `agent` acting greedily over `episodes` seeded runs.
pub fn greedy_offers(
    agent: &CategoricalQAgent,
    sim: &SimConfig,
    episodes: u64,
    seed: u64,
) -> Result<Vec<OfferRecord>> {
    let mut offers = Vec::new();
    for i in 0..episodes {
        let log = run_episode(sim, &Greedy(agent), &mut indexed_substream(seed, "eval-offers", i))?;
        offers.extend(log.offers);
    }
    Ok(offers)
}

/// The same offers with every decision replaced by `agent`'s greedy choice.
pub fn relabel(agent: &CategoricalQAgent, offers: &[OfferRecord]) -> Vec<OfferRecord> {
    offers
        .iter()
        .map(|o| OfferRecord { action: agent.greedy(&o.observation), ..*o })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    /// Offer set repeated once per fine-tuning run, relabelled by that run.
    pub offers: Vec<OfferRecord>,
    pub reports: Vec<TrainReport>,
}

/// Fine-tunes `rl_runs` copies of `base` in `sim` and pools their greedy
/// decisions on the offers `base` itself meets there. The offer set depends
/// on the parameters only through what the base agent observes (weekly
/// goals), so arms that differ only in fares share it exactly.
pub fn run_arm(base: &CategoricalQAgent, sim: &SimConfig, cfg: &ArmConfig) -> Result<ArmOutcome> {
    if cfg.rl_runs == 0 || cfg.eval_episodes == 0 {
        return Err(invalid("an arm needs at least one fine-tuning run and one evaluation episode"));
    }
    let set = greedy_offers(base, sim, cfg.eval_episodes, cfg.seed)?;
    let mut offers = Vec::with_capacity(set.len() * cfg.rl_runs as usize);
    let mut reports = Vec::with_capacity(cfg.rl_runs as usize);
    for run in 0..cfg.rl_runs {
        let mut agent = base.clone();
        let outcome = train_rl(&mut agent, sim, &cfg.rl, &mut indexed_substream(cfg.seed, "arm-rl", run))?;
        offers.extend(relabel(&agent, &set));
        reports.push(outcome.report);
    }
    Ok(ArmOutcome { offers, reports })
}

/// 1.0 per accepted and 0.0 per rejected offer among those passing `keep`.
pub fn accept_indicators<'a, I, F>(offers: I, keep: F) -> Vec<f64>
where
    I: IntoIterator<Item = &'a OfferRecord>,
    F: Fn(&OfferRecord) -> bool,
{
    offers
        .into_iter()
        .filter(|o| keep(o))
        .map(|o| if o.action.is_accept() { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AgentConfig, AtomSupport};
    use crate::distributions::{fit_empirical, TimeProfile, MINUTES_PER_WEEK};
    use crate::ridegen::{GridSpec, RideDistributions};
    use crate::rng::seeded;
    use crate::sim::Action;

    fn small_sim() -> SimConfig {
        let rides = RideDistributions {
            pickup_x: fit_empirical(&[2.0, 8.0]).unwrap(),
            pickup_y: fit_empirical(&[2.0, 8.0]).unwrap(),
            distance: fit_empirical(&[1.0, 6.0]).unwrap(),
        };
        let grid = GridSpec { width_km: 10.0, height_km: 10.0, ..GridSpec::default() };
        let profile = TimeProfile::from_entries(vec![0.05; MINUTES_PER_WEEK]).unwrap();
        SimConfig { drivers: 5, duration_minutes: 2 * 1440, ..SimConfig::new(grid, rides, profile) }
    }

    fn agent() -> CategoricalQAgent {
        let cfg = AgentConfig { hidden: vec![8], ..AgentConfig::default() };
        let support = AtomSupport::new(-50.0, 50.0, cfg.atoms).unwrap();
        CategoricalQAgent::new(&cfg, support, &mut seeded(3)).unwrap()
    }

    #[test]
    fn offer_set_is_seeded() {
        let (a, sim) = (agent(), small_sim());
        let x = greedy_offers(&a, &sim, 2, 9).unwrap();
        let y = greedy_offers(&a, &sim, 2, 9).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x.len(), y.len());
        assert!(x.iter().zip(&y).all(|(p, q)| p.observation == q.observation && p.action == q.action));
    }

    #[test]
    fn relabel_keeps_observations() {
        let (a, sim) = (agent(), small_sim());
        let mut offers = greedy_offers(&a, &sim, 1, 4).unwrap();
        for o in &mut offers {
            o.action = Action::Reject;
        }
        let again = relabel(&a, &offers);
        assert!(again.iter().zip(&offers).all(|(p, q)| p.observation == q.observation));
        assert!(again.iter().all(|o| o.action == a.greedy(&o.observation)));
    }

    #[test]
    fn frozen_arm_reproduces_base_decisions() {
        let (a, sim) = (agent(), small_sim());
        let cfg = ArmConfig {
            rl: RlConfig { iterations: 2, epsilon: 0.0, learning_rate: 0.0, ..RlConfig::default() },
            rl_runs: 2,
            eval_episodes: 1,
            seed: 5,
        };
        let out = run_arm(&a, &sim, &cfg).unwrap();
        let set = greedy_offers(&a, &sim, 1, 5).unwrap();
        assert_eq!(out.offers.len(), 2 * set.len());
        assert_eq!(out.reports.len(), 2);
        let base = accept_indicators(&set, |_| true);
        let pooled = accept_indicators(&out.offers, |_| true);
        assert_eq!(pooled, [base.clone(), base].concat());
    }

    #[test]
    fn indicators_follow_filter() {
        let (a, sim) = (agent(), small_sim());
        let offers = greedy_offers(&a, &sim, 1, 1).unwrap();
        let all = accept_indicators(&offers, |_| true);
        let none = accept_indicators(&offers, |_| false);
        assert_eq!(all.len(), offers.len());
        assert!(none.is_empty());
        let accepted = offers.iter().filter(|o| o.action.is_accept()).count() as f64;
        assert_eq!(all.iter().sum::<f64>(), accepted);
    }
}
