//! Shared-parameter MADDPG: one actor maps a local observation to a bounded
//! price-quantity action, one critic scores the joint observation-action of
//! the whole lot from a marked ego agent's point of view.

mod checkpoint;
mod mlp;
mod noise;
mod replay;

pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_VERSION};
pub use mlp::{soft_update, Adam, Mlp, ShapeMismatch, Trace};
pub use noise::{annealed_sigma, OuNoise};
pub use replay::ReplayBuffer;

use crate::domain::{AgentId, EvAgent, Offer, Role, SimConfig};
use crate::env::OBS_DIM;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const ACT_DIM: usize = 2;
/// Per-slot critic features: observation, action, ego flag, absent flag.
pub const SLOT_DIM: usize = OBS_DIM + ACT_DIM + 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub episodes: usize,
    pub n_train: usize,
    pub seeds: usize,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Joint transitions stored before updates begin.
    pub warmup: usize,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Fraction of episodes over which exploration noise decays to `sigma_floor`.
    pub sigma_anneal_frac: f64,
    pub sigma_floor: f64,
    /// Weight of the squared pre-squash actor outputs subtracted from the
    /// actor objective; keeps the heads out of saturation.
    pub raw_action_l2: f64,
    /// Output-layer init range of both networks.
    pub final_layer_scale: f64,
    pub checkpoint_every: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 256,
            tau: 0.01,
            episodes: 2000,
            n_train: 20,
            seeds: 3,
            hidden: vec![128, 128],
            buffer_capacity: 100_000,
            warmup: 1000,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            sigma_anneal_frac: 0.5,
            sigma_floor: 0.0,
            raw_action_l2: 0.01,
            final_layer_scale: 3e-3,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnerConfigError {
    #[error("gamma {0} outside (0, 1)")]
    Gamma(f64),
    #[error("tau {0} outside (0, 1]")]
    Tau(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerConfigError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LearnerConfigError::Gamma(self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LearnerConfigError::Tau(self.tau));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("n_train", self.n_train),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if v == 0 {
                return Err(LearnerConfigError::NonPositive(name));
            }
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Observation features to normalized action in `[0, 1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
}

impl Actor {
    pub fn new<R: Rng>(hidden: &[usize], final_scale: f64, rng: &mut R) -> Actor {
        let mut sizes = vec![OBS_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(ACT_DIM);
        Actor {
            net: Mlp::new(&sizes, final_scale, rng),
        }
    }

    /// `(tanh + 1)/2` on the price head, sigmoid on the quantity head;
    /// neutral agents get quantity zero. Also returns `d action / d raw`.
    fn squash(raw: &[f64], role: Role) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        let t = raw[0].tanh();
        let s = sigmoid(raw[1]);
        let q_live = if role == Role::Neutral { 0.0 } else { 1.0 };
        ([(t + 1.0) / 2.0, s * q_live], [(1.0 - t * t) / 2.0, s * (1.0 - s) * q_live])
    }

    pub fn action(&self, obs: &[f64; OBS_DIM]) -> [f64; ACT_DIM] {
        let role = Role::from_one_hot(&obs[OBS_DIM - 3..]);
        Self::squash(&self.net.forward(obs), role).0
    }

    fn action_trace(&self, obs: &[f64; OBS_DIM]) -> (Trace, [f64; ACT_DIM], [f64; ACT_DIM]) {
        let role = Role::from_one_hot(&obs[OBS_DIM - 3..]);
        let trace = self.net.forward_trace(obs);
        let (a, d) = Self::squash(trace.output(), role);
        (trace, a, d)
    }

    /// Adds exploration noise on the normalized scale, clips, and re-applies the role mask.
    pub fn noisy_action(&self, obs: &[f64; OBS_DIM], noise: [f64; ACT_DIM]) -> [f64; ACT_DIM] {
        let role = Role::from_one_hot(&obs[OBS_DIM - 3..]);
        let mut a = self.action(obs);
        for (x, n) in a.iter_mut().zip(noise) {
            *x = (*x + n).clamp(0.0, 1.0);
        }
        if role == Role::Neutral {
            a[1] = 0.0;
        }
        a
    }
}

/// Maps a normalized action to a masked offer for `agent`.
pub fn action_to_offer(agent: &EvAgent, action: [f64; ACT_DIM], cfg: &SimConfig) -> Offer {
    let price = cfg.price_min + action[0] * (cfg.price_max - cfg.price_min);
    let quantity = action[1] * agent.role_cap_kwh();
    Offer::masked(agent, price, quantity, cfg)
}

/// Fixed-width critic input. Entries must be sorted by agent id. With more
/// entries than slots the ego and the lowest-id others are kept; unused
/// slots are zero with the absent flag set. Returns the data and the ego's slot.
pub fn pad_joint(
    obs: &[[f64; OBS_DIM]],
    actions: &[[f64; ACT_DIM]],
    ego: Option<usize>,
    n_slots: usize,
) -> (Vec<f64>, Option<usize>) {
    assert_eq!(obs.len(), actions.len());
    let mut data = vec![0.0; n_slots * SLOT_DIM];
    let mut chosen: Vec<usize> = (0..obs.len()).collect();
    if chosen.len() > n_slots {
        chosen = match ego {
            Some(e) if e >= n_slots - 1 => (0..n_slots - 1).chain(std::iter::once(e)).collect(),
            _ => (0..n_slots).collect(),
        };
    }
    let mut ego_slot = None;
    for (slot, &k) in chosen.iter().enumerate() {
        let d = &mut data[slot * SLOT_DIM..(slot + 1) * SLOT_DIM];
        d[..OBS_DIM].copy_from_slice(&obs[k]);
        d[OBS_DIM..OBS_DIM + ACT_DIM].copy_from_slice(&actions[k]);
        if Some(k) == ego {
            d[OBS_DIM + ACT_DIM] = 1.0;
            ego_slot = Some(slot);
        }
    }
    for slot in chosen.len()..n_slots {
        data[slot * SLOT_DIM + SLOT_DIM - 1] = 1.0;
    }
    (data, ego_slot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: Mlp,
    pub slots: usize,
}

impl Critic {
    pub fn new<R: Rng>(slots: usize, hidden: &[usize], final_scale: f64, rng: &mut R) -> Critic {
        let mut sizes = vec![slots * SLOT_DIM];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Critic {
            net: Mlp::new(&sizes, final_scale, rng),
            slots,
        }
    }

    pub fn value(&self, input: &[f64]) -> f64 {
        self.net.forward(input)[0]
    }
}

/// One joint step as seen by the learner. Agents are sorted by id.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub ids: Vec<AgentId>,
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<[f64; ACT_DIM]>,
    pub rewards: Vec<f64>,
    /// True when the agent leaves (or the episode ends) after this step.
    pub done: Vec<bool>,
    pub next_ids: Vec<AgentId>,
    pub next_obs: Vec<[f64; OBS_DIM]>,
}

/// A transition viewed from one agent.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub t: &'a Transition,
    pub ego: usize,
}

/// Bellman targets from the target networks; independent of the online critic.
pub fn td_targets(samples: &[Sample], target_actor: &Actor, target_critic: &Critic, gamma: f64) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            let r = s.t.rewards[s.ego];
            if s.t.done[s.ego] {
                return r;
            }
            let id = s.t.ids[s.ego];
            let Ok(next_ego) = s.t.next_ids.binary_search(&id) else {
                return r;
            };
            let next_actions: Vec<[f64; ACT_DIM]> = s.t.next_obs.iter().map(|o| target_actor.action(o)).collect();
            let (input, _) = pad_joint(&s.t.next_obs, &next_actions, Some(next_ego), target_critic.slots);
            r + gamma * target_critic.value(&input)
        })
        .collect()
}

/// Mean squared TD error and its gradient in the critic's parameters.
pub fn critic_loss_grad(critic: &Critic, samples: &[Sample], targets: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.net.n_params()];
    let n = samples.len().max(1) as f64;
    let mut loss = 0.0;
    for (s, &y) in samples.iter().zip(targets) {
        let (input, _) = pad_joint(&s.t.obs, &s.t.actions, Some(s.ego), critic.slots);
        let trace = critic.net.forward_trace(&input);
        let err = trace.output()[0] - y;
        loss += err * err / n;
        critic.net.backward(&trace, &[2.0 * err / n], &mut grad);
    }
    (loss, grad)
}

/// Batch-mean `Q(s, a_-i, mu(s_i))` and its gradient in the actor's
/// parameters, chained through the ego's action slot only.
pub fn actor_objective_grad(actor: &Actor, critic: &Critic, samples: &[Sample]) -> (f64, Vec<f64>) {
    regularized_actor_objective_grad(actor, critic, samples, 0.0)
}

/// As `actor_objective_grad`, minus `raw_l2` times the batch-mean squared
/// pre-squash outputs.
pub fn regularized_actor_objective_grad(actor: &Actor, critic: &Critic, samples: &[Sample], raw_l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; actor.net.n_params()];
    let mut critic_scratch = vec![0.0; critic.net.n_params()];
    let n = samples.len().max(1) as f64;
    let mut objective = 0.0;
    let mut actions = Vec::new();
    for s in samples {
        let (a_trace, a, da) = actor.action_trace(&s.t.obs[s.ego]);
        actions.clear();
        actions.extend_from_slice(&s.t.actions);
        actions[s.ego] = a;
        let (input, ego_slot) = pad_joint(&s.t.obs, &actions, Some(s.ego), critic.slots);
        let trace = critic.net.forward_trace(&input);
        objective += trace.output()[0] / n;
        let d_input = critic.net.backward(&trace, &[1.0 / n], &mut critic_scratch);
        let slot = ego_slot.expect("ego is always placed");
        let base = slot * SLOT_DIM + OBS_DIM;
        let raw = a_trace.output();
        objective -= raw_l2 * (raw[0] * raw[0] + raw[1] * raw[1]) / n;
        let d_raw = [
            d_input[base] * da[0] - 2.0 * raw_l2 * raw[0] / n,
            d_input[base + 1] * da[1] - 2.0 * raw_l2 * raw[1] / n,
        ];
        actor.net.backward(&a_trace, &d_raw, &mut grad);
    }
    (objective, grad)
}

/// Online and target networks with their optimizers.
#[derive(Clone, Debug)]
pub struct Maddpg {
    pub cfg: LearnerConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub target_actor: Actor,
    pub target_critic: Critic,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl Maddpg {
    pub fn new<R: Rng>(cfg: LearnerConfig, rng: &mut R) -> Maddpg {
        let actor = Actor::new(&cfg.hidden, cfg.final_layer_scale, rng);
        let critic = Critic::new(cfg.n_train, &cfg.hidden, cfg.final_layer_scale, rng);
        Self::from_nets(cfg, actor, critic)
    }

    pub fn from_nets(cfg: LearnerConfig, actor: Actor, critic: Critic) -> Maddpg {
        Maddpg {
            actor_opt: Adam::new(actor.net.n_params(), cfg.actor_lr),
            critic_opt: Adam::new(critic.net.n_params(), cfg.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            cfg,
        }
    }

    /// One gradient step on the critic; returns the pre-step loss.
    pub fn critic_update(&mut self, samples: &[Sample]) -> f64 {
        let targets = td_targets(samples, &self.target_actor, &self.target_critic, self.cfg.gamma);
        let (loss, grad) = critic_loss_grad(&self.critic, samples, &targets);
        self.critic_opt.step(self.critic.net.params_mut(), &grad);
        loss
    }

    /// One ascent step on the actor; returns the gradient norm.
    pub fn actor_update(&mut self, samples: &[Sample]) -> f64 {
        let (_, grad) = regularized_actor_objective_grad(&self.actor, &self.critic, samples, self.cfg.raw_action_l2);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let descent: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.actor_opt.step(self.actor.net.params_mut(), &descent);
        norm
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.cfg.tau;
        soft_update(&mut self.target_actor.net, &self.actor.net, tau).expect("same shapes");
        soft_update(&mut self.target_critic.net, &self.critic.net, tau).expect("same shapes");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::agent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs_for(role: Role, rng: &mut ChaCha8Rng) -> [f64; OBS_DIM] {
        let mut o = [0.0; OBS_DIM];
        for x in &mut o[..6] {
            *x = rng.gen_range(0.0..1.0);
        }
        o[6..].copy_from_slice(&role.one_hot());
        o
    }

    fn random_transition(n: usize, rng: &mut ChaCha8Rng) -> Transition {
        let roles = [Role::Buyer, Role::Seller, Role::Neutral];
        let obs: Vec<_> = (0..n).map(|i| obs_for(roles[i % 3], rng)).collect();
        let actions: Vec<_> = (0..n).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let ids: Vec<_> = (0..n as u64).map(AgentId).collect();
        Transition {
            ids: ids.clone(),
            obs: obs.clone(),
            actions,
            rewards: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: (0..n).map(|i| i == 0).collect(),
            next_ids: ids,
            next_obs: obs,
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    #[test]
    fn zero_output_layer_gives_band_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut actor = Actor::new(&[8, 8], 0.1, &mut rng);
        actor.net.zero_output_layer();
        let cfg = SimConfig::default();
        let buyer = agent(30.0, 50.0, 5.0);
        let o = crate::env::observe(&buyer, 0, &cfg).features();
        let a = actor.action(&o);
        let offer = action_to_offer(&buyer, a, &cfg);
        assert!((offer.price - 0.275).abs() < 1e-12);
        assert!((offer.quantity - 0.5 * 20.0).abs() < 1e-12);
        assert_eq!(actor.action(&o), a);
    }

    #[test]
    fn neutral_quantity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::new(&[8], 1.0, &mut rng);
        let o = obs_for(Role::Neutral, &mut rng);
        assert_eq!(actor.action(&o)[1], 0.0);
        assert_eq!(actor.noisy_action(&o, [0.3, 0.9])[1], 0.0);
    }

    #[test]
    fn actions_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Actor::new(&[16, 16], 5.0, &mut rng);
        for _ in 0..200 {
            let o = obs_for(Role::Buyer, &mut rng);
            let noise = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            for a in [actor.action(&o), actor.noisy_action(&o, noise)] {
                assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn pad_joint_examples() {
        let obs = vec![[0.5; OBS_DIM]; 6];
        let act = vec![[0.1, 0.2]; 6];
        let (d, ego) = pad_joint(&obs, &act, None, 6);
        assert_eq!(d.len(), 6 * SLOT_DIM);
        assert_eq!(ego, None);
        assert!(d.chunks(SLOT_DIM).all(|s| s[SLOT_DIM - 1] == 0.0));

        let (d, ego) = pad_joint(&obs, &act, Some(2), 20);
        assert_eq!(ego, Some(2));
        let padded = d.chunks(SLOT_DIM).filter(|s| s[SLOT_DIM - 1] == 1.0).count();
        assert_eq!(padded, 14);
        for s in d.chunks(SLOT_DIM).skip(6) {
            assert!(s[..SLOT_DIM - 1].iter().all(|x| *x == 0.0));
        }

        let (_, ego) = pad_joint(&obs, &act, Some(5), 4);
        assert_eq!(ego, Some(3));
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let critic = Critic::new(3, &[2], 0.5, &mut rng);
            let ts: Vec<_> = (0..4).map(|_| random_transition(3, &mut rng)).collect();
            let samples: Vec<_> = ts.iter().enumerate().map(|(k, t)| Sample { t, ego: k % 3 }).collect();
            let targets: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, g) = critic_loss_grad(&critic, &samples, &targets);
            let h = 1e-6;
            let fd: Vec<f64> = (0..critic.net.n_params())
                .map(|k| {
                    let mut p = critic.clone();
                    p.net.params_mut()[k] += h;
                    let mut m = critic.clone();
                    m.net.params_mut()[k] -= h;
                    (critic_loss_grad(&p, &samples, &targets).0 - critic_loss_grad(&m, &samples, &targets).0) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let actor = Actor::new(&[2], 0.5, &mut rng);
            let critic = Critic::new(3, &[2], 0.5, &mut rng);
            let ts: Vec<_> = (0..4).map(|_| random_transition(3, &mut rng)).collect();
            let samples: Vec<_> = ts.iter().map(|t| Sample { t, ego: 0 }).collect();
            let (_, g) = actor_objective_grad(&actor, &critic, &samples);
            let h = 1e-6;
            let fd: Vec<f64> = (0..actor.net.n_params())
                .map(|k| {
                    let mut p = actor.clone();
                    p.net.params_mut()[k] += h;
                    let mut m = actor.clone();
                    m.net.params_mut()[k] -= h;
                    (actor_objective_grad(&p, &critic, &samples).0 - actor_objective_grad(&m, &critic, &samples).0)
                        / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-4, "{}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn critic_at_fixed_point_does_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = LearnerConfig {
            hidden: vec![4],
            n_train: 3,
            gamma: 0.5,
            ..LearnerConfig::default()
        };
        let mut m = Maddpg::new(cfg, &mut rng);
        let mut t = random_transition(3, &mut rng);
        t.done = vec![true; 3];
        // rewards equal to the current predictions make every TD error zero
        for k in 0..3 {
            let (input, _) = pad_joint(&t.obs, &t.actions, Some(k), 3);
            t.rewards[k] = m.critic.value(&input);
        }
        let samples: Vec<_> = (0..3).map(|ego| Sample { t: &t, ego }).collect();
        let before = m.critic.clone();
        let loss = m.critic_update(&samples);
        assert!(loss < 1e-24);
        assert_eq!(m.critic, before);
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let actor = Actor::new(&[4], 0.5, &mut rng);
        let critic = Critic::new(3, &[4], 0.5, &mut rng);
        let mut t = random_transition(3, &mut rng);
        t.done = vec![false; 3];
        let samples: Vec<_> = (0..3).map(|ego| Sample { t: &t, ego }).collect();
        assert_eq!(td_targets(&samples, &actor, &critic, 0.0), t.rewards);
        let bootstrapped = td_targets(&samples, &actor, &critic, 0.9);
        assert!(bootstrapped.iter().zip(&t.rewards).any(|(y, r)| y != r));
    }

    #[test]
    fn critic_constant_in_action_gives_zero_actor_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let actor = Actor::new(&[4], 0.5, &mut rng);
        let mut critic = Critic::new(3, &[4], 0.5, &mut rng);
        // zero every first-layer weight reading an action feature
        let width = critic.net.input_dim();
        let hidden = critic.net.sizes()[1];
        for o in 0..hidden {
            for slot in 0..3 {
                for a in 0..ACT_DIM {
                    critic.net.params_mut()[o * width + slot * SLOT_DIM + OBS_DIM + a] = 0.0;
                }
            }
        }
        let t = random_transition(3, &mut rng);
        let samples = [Sample { t: &t, ego: 1 }];
        let (_, g) = actor_objective_grad(&actor, &critic, &samples);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn actor_step_increases_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = LearnerConfig {
            hidden: vec![8],
            n_train: 3,
            actor_lr: 1e-3,
            ..LearnerConfig::default()
        };
        let mut m = Maddpg::new(cfg, &mut rng);
        m.critic = Critic::new(3, &[8], 1.0, &mut rng);
        let ts: Vec<_> = (0..8).map(|_| random_transition(3, &mut rng)).collect();
        let samples: Vec<_> = ts.iter().map(|t| Sample { t, ego: 1 }).collect();
        let before = actor_objective_grad(&m.actor, &m.critic, &samples).0;
        let norm = m.actor_update(&samples);
        let after = actor_objective_grad(&m.actor, &m.critic, &samples).0;
        assert!(norm > 0.0);
        assert!(after > before, "{before} -> {after}");
    }
}
