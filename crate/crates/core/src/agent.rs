//! Categorical deep-Q driver agent: a value distribution over a fixed atom
//! support for each of accept and reject.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, check_distribution, cross_entropy_grad, softmax, AdamConfig, AdamState, Gradients, Mlp};
use crate::rng::SimRng;
use crate::sim::{Action, Normalizer, Observation, Policy, Transition, ACTIONS, FEATURES};

pub const DEFAULT_ATOMS: usize = 51;
const CHECKPOINT_MAGIC: &str = "ridesim-agent v1";

/// Evenly spaced support `z_i = v_min + i·Δz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomSupport {
    v_min: f64,
    v_max: f64,
    n: usize,
}

impl AtomSupport {
    pub fn new(v_min: f64, v_max: f64, n: usize) -> Result<Self> {
        if !(v_min.is_finite() && v_max.is_finite() && v_min < v_max) {
            return Err(invalid(format!("atom support [{v_min}, {v_max}] is not increasing")));
        }
        if n < 2 {
            return Err(invalid("need at least two atoms"));
        }
        Ok(Self { v_min, v_max, n })
    }

    /// Support spanning the 1st to 99th percentile of `rewards` (widened to
    /// include 0) scaled by the geometric return horizon `1/(1−γ)`.
    pub fn from_rewards(rewards: &[f64], gamma: f64, n: usize) -> Result<Self> {
        let mut r: Vec<f64> = rewards.iter().copied().filter(|v| v.is_finite()).collect();
        if r.is_empty() {
            return Err(invalid("no finite rewards to size the atom support"));
        }
        r.sort_by(f64::total_cmp);
        let pct = |q: f64| r[((r.len() - 1) as f64 * q).round() as usize];
        let horizon = 1.0 / (1.0 - gamma);
        let lo = pct(0.01).min(0.0) * horizon;
        let hi = pct(0.99).max(0.0) * horizon;
        if hi - lo < 1e-9 {
            return Self::new(lo - 1.0, hi + 1.0, n);
        }
        Self::new(lo, hi, n)
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn delta(&self) -> f64 {
        (self.v_max - self.v_min) / (self.n - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.v_max
        } else {
            self.v_min + i as f64 * self.delta()
        }
    }

    pub fn atoms(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.z(i)).collect()
    }

    pub fn mean(&self, probs: &[f64]) -> f64 {
        probs.iter().enumerate().map(|(i, p)| p * self.z(i)).sum()
    }
}

/// Projects the distribution of `r + γ·Z` back onto `support`, splitting each
/// atom's mass between the two support points that bracket its shifted,
/// clamped position.
pub fn project_target(probs: &[f64], r: f64, gamma: f64, support: &AtomSupport) -> Result<Vec<f64>> {
    if probs.len() != support.len() {
        return Err(Error::Dimension { expected: support.len(), actual: probs.len() });
    }
    check_distribution(probs, "source distribution")?;
    if !(r.is_finite() && gamma.is_finite()) {
        return Err(Error::NonFinite("projection shift"));
    }
    let n = support.len();
    let dz = support.delta();
    let mut out = vec![0.0; n];
    for (j, p) in probs.iter().enumerate() {
        let tz = (r + gamma * support.z(j)).clamp(support.v_min, support.v_max);
        let mut b = ((tz - support.v_min) / dz).clamp(0.0, (n - 1) as f64);
        if (b - b.round()).abs() < 1e-9 {
            b = b.round();
        }
        let l = b.floor() as usize;
        let u = b.ceil() as usize;
        if l == u {
            out[l] += p;
        } else {
            out[l] += p * (u as f64 - b);
            out[u] += p * (b - l as f64);
        }
    }
    Ok(out)
}

/// `q + α(r + γ·max_next_q − q)`.
pub fn tabular_q_update(q: f64, r: f64, max_next_q: f64, alpha: f64, gamma: f64) -> f64 {
    q + alpha * (r + gamma * max_next_q - q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub atoms: usize,
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub sync_every: u64,
    pub normalizer: Normalizer,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            atoms: DEFAULT_ATOMS,
            hidden: vec![64, 64],
            gamma: 0.5,
            epsilon: 0.05,
            learning_rate: 1e-3,
            sync_every: 100,
            normalizer: Normalizer::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma {} must lie in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("epsilon {} must lie in [0, 1]", self.epsilon)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid("learning_rate must be >= 0"));
        }
        if self.atoms < 2 || self.hidden.contains(&0) || self.sync_every == 0 {
            return Err(invalid("atoms >= 2, hidden sizes > 0 and sync_every > 0 required"));
        }
        self.normalizer.validate()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![FEATURES];
        dims.extend(&self.hidden);
        dims.push(ACTIONS * self.atoms);
        dims
    }
}

/// Extra logistic term pulling `Q(accept) − Q(reject)` towards the logged
/// decision: `λ·softplus(−y·(Q_acc − Q_rej)/τ)` with `y = ±1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImitationTerm {
    pub weight: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalQAgent {
    pub online: Mlp,
    pub target: Mlp,
    pub support: AtomSupport,
    pub gamma: f64,
    pub epsilon: f64,
    pub normalizer: Normalizer,
    pub sync_every: u64,
    pub train_steps: u64,
    adam: AdamState,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CategoricalQAgent {
    pub fn new<R: Rng + ?Sized>(config: &AgentConfig, support: AtomSupport, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if support.len() != config.atoms {
            return Err(Error::Dimension { expected: config.atoms, actual: support.len() });
        }
        let online = Mlp::new(&config.layer_dims(), rng)?;
        let adam = AdamState::new(&online, AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
        Ok(Self {
            target: online.clone(),
            online,
            support,
            gamma: config.gamma,
            epsilon: config.epsilon,
            normalizer: config.normalizer,
            sync_every: config.sync_every,
            train_steps: 0,
            adam,
        })
    }

    /// Builds an agent around an existing network; the target starts as a
    /// copy of `online`.
    pub fn from_network(online: Mlp, support: AtomSupport, gamma: f64, epsilon: f64, normalizer: Normalizer, learning_rate: f64) -> Result<Self> {
        if online.output_dim() != ACTIONS * support.len() {
            return Err(Error::Dimension { expected: ACTIONS * support.len(), actual: online.output_dim() });
        }
        let adam = AdamState::new(&online, AdamConfig { learning_rate, ..AdamConfig::default() });
        Ok(Self {
            target: online.clone(),
            online,
            support,
            gamma,
            epsilon,
            normalizer,
            sync_every: 100,
            train_steps: 0,
            adam,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.adam.config.learning_rate
    }

    /// Replaces the optimizer, discarding its moment estimates.
    pub fn reset_optimizer(&mut self, learning_rate: f64) {
        self.adam = AdamState::new(&self.online, AdamConfig { learning_rate, ..AdamConfig::default() });
    }

    fn input(&self, obs: &Observation) -> [f64; FEATURES] {
        self.normalizer.normalize(obs)
    }

    fn split(&self, logits: &[f64]) -> [Vec<f64>; ACTIONS] {
        let n = self.support.len();
        [softmax(&logits[..n]), softmax(&logits[n..2 * n])]
    }

    /// Per-action atom probabilities from the online network.
    pub fn distributions(&self, obs: &Observation) -> [Vec<f64>; ACTIONS] {
        let logits = self.online.forward(&self.input(obs)).expect("agent input has fixed width");
        self.split(&logits)
    }

    pub fn expected_q(&self, obs: &Observation) -> (f64, f64) {
        let [acc, rej] = self.distributions(obs);
        (self.support.mean(&acc), self.support.mean(&rej))
    }

    pub fn expected_q_target(&self, obs: &Observation) -> (f64, f64) {
        let logits = self.target.forward(&self.input(obs)).expect("agent input has fixed width");
        let [acc, rej] = self.split(&logits);
        (self.support.mean(&acc), self.support.mean(&rej))
    }

    /// Greedy choice; ties go to accept.
    pub fn greedy(&self, obs: &Observation) -> Action {
        let (qa, qr) = self.expected_q(obs);
        if qa >= qr {
            Action::Accept
        } else {
            Action::Reject
        }
    }

    /// ε-greedy choice. The uniform draw is consumed on every call so the
    /// random stream does not depend on ε.
    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Action {
        let explore = rng.random::<f64>() < self.epsilon;
        let coin = rng.random::<bool>();
        if explore {
            if coin {
                Action::Accept
            } else {
                Action::Reject
            }
        } else {
            self.greedy(obs)
        }
    }

    /// Projected bootstrap target for one transition, from the target net.
    pub fn target_distribution(&self, t: &Transition) -> Result<Vec<f64>> {
        let gamma = if t.done { 0.0 } else { self.gamma };
        let logits = self.target.forward(&self.input(&t.s_prime))?;
        let dists = self.split(&logits);
        let qa = self.support.mean(&dists[0]);
        let qr = self.support.mean(&dists[1]);
        let best = if qa >= qr { 0 } else { 1 };
        project_target(&dists[best], t.r, gamma, &self.support)
    }

    pub fn train_step(&mut self, batch: &[Transition]) -> Result<f64> {
        self.train_step_with(batch, None)
    }

    /// One Adam step on the mean cross-entropy between the online
    /// distribution of each taken action and its projected target, plus the
    /// optional imitation term. Nothing is updated if the loss or a gradient
    /// is non-finite.
    pub fn train_step_with(&mut self, batch: &[Transition], imitation: Option<ImitationTerm>) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("training batch is empty"));
        }
        let n = self.support.len();
        let atoms = self.support.atoms();
        let mut grads = Gradients::zeros_like(&self.online);
        let mut total = 0.0;
        for t in batch {
            let target = self.target_distribution(t)?;
            let cache = self.online.forward_cached(&self.input(&t.s))?;
            let (mut loss, mut d) = cross_entropy_grad(&cache.output, &target, t.a.index())?;
            if let Some(im) = imitation {
                let [pa, pr] = self.split(&cache.output);
                let qa = self.support.mean(&pa);
                let qr = self.support.mean(&pr);
                let y = if t.a.is_accept() { 1.0 } else { -1.0 };
                let margin = (qa - qr) / im.temperature;
                loss += im.weight * softplus(-y * margin);
                // d/dmargin of softplus(−y·m) is −y·σ(−y·m)
                let dm = -y * sigmoid(-y * margin) * im.weight / im.temperature;
                for i in 0..n {
                    d[i] += dm * pa[i] * (atoms[i] - qa);
                    d[n + i] -= dm * pr[i] * (atoms[i] - qr);
                }
            }
            total += loss;
            self.online.backward(&cache, &d, &mut grads)?;
        }
        let mean = total / batch.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        grads.scale(1.0 / batch.len() as f64);
        adam_step(&mut self.online, &grads, &mut self.adam)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.sync_every) {
            self.sync_target();
        }
        Ok(mean)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// A read-only greedy view, for evaluation.
    pub fn greedy_policy(&self) -> Greedy<'_> {
        Greedy(self)
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "atoms {}", self.support.len())?;
        writeln!(out, "v_min {:e}", self.support.v_min)?;
        writeln!(out, "v_max {:e}", self.support.v_max)?;
        writeln!(out, "gamma {:e}", self.gamma)?;
        writeln!(out, "epsilon {:e}", self.epsilon)?;
        writeln!(out, "learning_rate {:e}", self.adam.config.learning_rate)?;
        writeln!(out, "sync_every {}", self.sync_every)?;
        writeln!(out, "train_steps {}", self.train_steps)?;
        let scales: Vec<String> = self.normalizer.scales.iter().map(|s| format!("{s:e}")).collect();
        writeln!(out, "normalizer {}", scales.join(" "))?;
        writeln!(out, "online")?;
        self.online.write_checkpoint(&mut out)?;
        writeln!(out, "target")?;
        self.target.write_checkpoint(&mut out)?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().filter(|l| !matches!(l, Ok(s) if s.starts_with('#')));
        let mut next = |key: &str| take_line(&mut lines, key);
        fn num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
            s.trim().parse().map_err(|_| Error::Format { line: 0, msg: format!("bad value for {key}: `{s}`") })
        }
        next(CHECKPOINT_MAGIC)?;
        let atoms: usize = num(&next("atoms")?, "atoms")?;
        let v_min: f64 = num(&next("v_min")?, "v_min")?;
        let v_max: f64 = num(&next("v_max")?, "v_max")?;
        let gamma: f64 = num(&next("gamma")?, "gamma")?;
        let epsilon: f64 = num(&next("epsilon")?, "epsilon")?;
        let learning_rate: f64 = num(&next("learning_rate")?, "learning_rate")?;
        let sync_every: u64 = num(&next("sync_every")?, "sync_every")?;
        let train_steps: u64 = num(&next("train_steps")?, "train_steps")?;
        let scales: Vec<f64> = next("normalizer")?
            .split_whitespace()
            .map(|t| num(t, "normalizer"))
            .collect::<Result<_>>()?;
        let scales: [f64; FEATURES] = scales
            .try_into()
            .map_err(|v: Vec<f64>| Error::Dimension { expected: FEATURES, actual: v.len() })?;
        take_line(&mut lines, "online")?;
        let online = Mlp::read_checkpoint_lines(&mut lines)?;
        take_line(&mut lines, "target")?;
        let target = Mlp::read_checkpoint_lines(&mut lines)?;
        if online.dims() != target.dims() {
            return Err(invalid("online and target networks differ in shape"));
        }
        let normalizer = Normalizer { scales };
        normalizer.validate()?;
        let mut agent = Self::from_network(online, AtomSupport::new(v_min, v_max, atoms)?, gamma, epsilon, normalizer, learning_rate)?;
        agent.target = target;
        agent.sync_every = sync_every.max(1);
        agent.train_steps = train_steps;
        Ok(agent)
    }
}

/// Next checkpoint line: either exactly `key` (section markers) or
/// `key value`, returning the value.
fn take_line<I>(lines: &mut I, key: &str) -> Result<String>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let line = lines
        .next()
        .ok_or_else(|| Error::Format { line: 0, msg: format!("missing `{key}` in agent checkpoint") })??;
    if line.trim() == key {
        return Ok(String::new());
    }
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| Error::Format { line: 0, msg: format!("expected `{key}`, found `{line}`") })
}

impl Policy for CategoricalQAgent {
    fn decide(&self, obs: &Observation, rng: &mut SimRng) -> Action {
        self.act(obs, rng)
    }
}

/// Acts greedily regardless of the agent's ε.
#[derive(Debug, Clone, Copy)]
pub struct Greedy<'a>(pub &'a CategoricalQAgent);

impl Policy for Greedy<'_> {
    fn decide(&self, obs: &Observation, _rng: &mut SimRng) -> Action {
        self.0.greedy(obs)
    }
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay buffer capacity must be >= 1"));
        }
        Ok(Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 20)) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, items: I) {
        for t in items {
            self.push(t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..size).map(|_| self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::rng::seeded;

    fn obs(x: f64) -> Observation {
        Observation::new(x, 2.0 * x, 600.0, 3.0, 0.5, 30.0)
    }

    fn agent(seed: u64) -> CategoricalQAgent {
        let support = AtomSupport::new(-10.0, 10.0, 51).unwrap();
        CategoricalQAgent::new(&AgentConfig::default(), support, &mut seeded(seed)).unwrap()
    }

    /// Single linear layer whose biases are the given logits and whose
    /// weights are zero, so the output ignores the input.
    fn constant_net(logits: &[f64]) -> Mlp {
        Mlp::from_layers(vec![Layer {
            inputs: FEATURES,
            outputs: logits.len(),
            weights: vec![0.0; FEATURES * logits.len()],
            biases: logits.to_vec(),
        }])
        .unwrap()
    }

    fn constant_agent(logits: &[f64], support: AtomSupport) -> CategoricalQAgent {
        CategoricalQAgent::from_network(constant_net(logits), support, 0.9, 0.0, Normalizer::default(), 0.1).unwrap()
    }

    #[test]
    fn expected_q_examples() {
        let sym = AtomSupport::new(-10.0, 10.0, 51).unwrap();
        let a = constant_agent(&[0.0; 102], sym);
        let (qa, qr) = a.expected_q(&obs(1.0));
        assert!(qa.abs() < 1e-12 && qr.abs() < 1e-12);

        let mut logits = vec![-1e3; 102];
        logits[0] = 0.0;
        logits[51] = 0.0;
        let a = constant_agent(&logits, sym);
        assert_eq!(a.expected_q(&obs(1.0)), (-10.0, -10.0));

        let three = AtomSupport::new(-1.0, 1.0, 3).unwrap();
        let p = [0.2f64, 0.3, 0.5];
        let l: Vec<f64> = p.iter().chain(&p).map(|v| v.ln()).collect();
        let (qa, _) = constant_agent(&l, three).expected_q(&obs(1.0));
        assert!((qa - 0.3).abs() < 1e-12);
    }

    #[test]
    fn act_examples() {
        let three = AtomSupport::new(-1.0, 1.0, 3).unwrap();
        let better = constant_agent(&[0.0, 0.0, 5.0, 5.0, 0.0, 0.0], three);
        let mut rng = seeded(0);
        assert!((0..100).all(|_| better.act(&obs(1.0), &mut rng) == Action::Accept));

        let tie = constant_agent(&[0.0; 6], three);
        assert_eq!(tie.act(&obs(1.0), &mut rng), Action::Accept);

        let mut random = agent(1);
        random.epsilon = 1.0;
        let accepts = (0..10_000).filter(|_| random.act(&obs(1.0), &mut rng).is_accept()).count();
        let rate = accepts as f64 / 10_000.0;
        assert!((0.49..=0.51).contains(&rate), "{rate}");
    }

    #[test]
    fn act_invariant_under_affine_relabel() {
        let base = agent(4);
        for (scale, shift) in [(2.0, 0.0), (0.5, 3.0), (7.0, -40.0)] {
            let mut relabeled = base.clone();
            relabeled.support =
                AtomSupport::new(scale * -10.0 + shift, scale * 10.0 + shift, 51).unwrap();
            for k in 0..50 {
                let o = obs(k as f64 * 0.3);
                assert_eq!(base.greedy(&o), relabeled.greedy(&o));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let three = AtomSupport::new(-1.0, 1.0, 3).unwrap();
        let out = project_target(&[0.0, 1.0, 0.0], 0.5, 1.0, &three).unwrap();
        assert!((out[1] - 0.5).abs() < 1e-12 && (out[2] - 0.5).abs() < 1e-12 && out[0] == 0.0);

        let p = [0.2, 0.3, 0.5];
        let same = project_target(&p, 0.0, 1.0, &three).unwrap();
        for (a, b) in same.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
        let far = project_target(&p, 100.0, 0.9, &three).unwrap();
        assert_eq!(far, vec![0.0, 0.0, 1.0]);
        assert!(project_target(&[0.5, 0.1, 0.1], 0.0, 1.0, &three).is_err());
    }

    #[test]
    fn tabular_update_examples() {
        assert!((tabular_q_update(0.0, 1.0, 2.0, 0.5, 0.9) - 1.4).abs() < 1e-15);
        assert_eq!(tabular_q_update(3.0, 1.0, 2.0, 0.0, 0.9), 3.0);
        assert_eq!(tabular_q_update(2.0, 0.2, 2.0, 0.7, 0.9), 2.0);
    }

    #[test]
    fn single_transition_matches_hand_cross_entropy() {
        // Online: accept slice logits (0, ln 2, ln 3) -> probs (1/6, 2/6, 3/6).
        // Terminal transition with r = 0.5 -> target (0, 0.5, 0.5).
        // Loss = −0.5·ln(2/6) − 0.5·ln(3/6).
        let three = AtomSupport::new(-1.0, 1.0, 3).unwrap();
        let l = [0.0, 2f64.ln(), 3f64.ln(), 0.0, 0.0, 0.0];
        let mut a = constant_agent(&l, three);
        let t = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(2.0), r: 0.5, done: true };
        let loss = a.train_step(&[t]).unwrap();
        let expected = -0.5 * (2.0f64 / 6.0).ln() - 0.5 * (3.0f64 / 6.0).ln();
        assert!((loss - expected).abs() < 1e-8, "{loss} vs {expected}");
    }

    #[test]
    fn fixed_point_batch_barely_moves() {
        // Peaked identical distributions for both actions; r = 0 and γ = 1
        // reproduce the prediction as the target.
        let three = AtomSupport::new(-1.0, 1.0, 3).unwrap();
        let l = [-30.0, 30.0, -30.0, -30.0, 30.0, -30.0];
        let mut a = constant_agent(&l, three);
        a.gamma = 1.0;
        let before = a.online.clone();
        let t = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(1.0), r: 0.0, done: false };
        let loss = a.train_step(&[t; 4]).unwrap();
        assert!(loss < 1e-12);
        for (x, y) in a.online.layers()[0].biases.iter().zip(&before.layers()[0].biases) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn terminal_target_is_point_mass_at_reward() {
        let support = AtomSupport::new(-10.0, 10.0, 51).unwrap();
        let a = agent(3);
        let t = Transition { s: obs(1.0), a: Action::Reject, s_prime: obs(3.0), r: 4.0, done: true };
        let target = a.target_distribution(&t).unwrap();
        let expected = project_target(&{ let mut p = vec![0.0; 51]; p[25] = 1.0; p }, 4.0, 1.0, &support).unwrap();
        for (x, y) in target.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((target[35] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn train_step_errors_leave_network_untouched() {
        let mut a = agent(5);
        let before = a.online.clone();
        assert!(a.train_step(&[]).is_err());
        let bad = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(1.0), r: f64::NAN, done: false };
        assert!(a.train_step(&[bad]).is_err());
        assert_eq!(a.online, before);
    }

    #[test]
    fn sync_target_examples() {
        let mut a = agent(6);
        assert_eq!(a.online, a.target);
        let t = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(2.0), r: 1.0, done: false };
        a.train_step(&[t]).unwrap();
        assert_ne!(a.online, a.target);
        a.sync_target();
        a.sync_target();
        let mut rng = seeded(9);
        for _ in 0..100 {
            let o = obs(rng.random_range(0.0..10.0));
            assert_eq!(a.expected_q(&o), a.expected_q_target(&o));
        }
    }

    #[test]
    fn target_syncs_on_cadence() {
        let mut a = agent(8);
        a.sync_every = 3;
        let t = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(2.0), r: 1.0, done: false };
        for _ in 0..3 {
            a.train_step(&[t]).unwrap();
        }
        assert_eq!(a.online, a.target);
    }

    #[test]
    fn imitation_term_pushes_towards_logged_action() {
        let mut a = agent(12);
        a.reset_optimizer(1e-2);
        let im = ImitationTerm { weight: 1.0, temperature: 1.0 };
        let batch: Vec<Transition> = (0..8)
            .map(|k| Transition { s: obs(k as f64), a: Action::Reject, s_prime: obs(k as f64), r: 0.0, done: true })
            .collect();
        for _ in 0..200 {
            a.train_step_with(&batch, Some(im)).unwrap();
        }
        assert!(batch.iter().all(|t| a.greedy(&t.s) == Action::Reject));
    }

    #[test]
    fn replay_buffer_is_bounded_fifo() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for k in 0..5 {
            buf.push(Transition { s: obs(k as f64), a: Action::Accept, s_prime: obs(0.0), r: k as f64, done: false });
            assert!(buf.len() <= 3);
        }
        let kept: Vec<f64> = buf.iter().map(|t| t.r).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
        assert!(ReplayBuffer::new(0).is_err());
        assert_eq!(buf.sample(10, &mut seeded(0)).len(), 10);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = agent(2);
        let t = Transition { s: obs(1.0), a: Action::Accept, s_prime: obs(2.0), r: 1.0, done: false };
        a.train_step(&[t]).unwrap();
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        let b = CategoricalQAgent::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(b.online, a.online);
        assert_eq!(b.target, a.target);
        assert_eq!(b.support, a.support);
        assert_eq!(b.gamma, a.gamma);
        assert_eq!(b.normalizer, a.normalizer);
        assert_eq!(b.expected_q(&obs(0.7)), a.expected_q(&obs(0.7)));
    }
}
