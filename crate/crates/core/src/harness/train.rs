use super::{create_dir, stream, write_csv, ExperimentConfig, HarnessError, RunMetadata, RunSpec, Stream};
use super::{CHECKPOINT_FILE, LEARNING_CURVE_FILE};
use crate::domain::{AgentId, Role};
use crate::learner::{
    action_to_offer, annealed_sigma, Checkpoint, Maddpg, OuNoise, ReplayBuffer, Sample, Transition, CHECKPOINT_VERSION,
};
use crate::metrics::{mean, sample_variance, social_welfare};
use crate::rewards::{step_rewards, RewardPlan};
use crate::env::FleetState;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One row of the learning-curve CSV. Reward columns are means over every
/// agent-step of the episode; `sw` and `volume_kwh` are episode totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    pub base: f64,
    pub credit: f64,
    pub price_prox: f64,
    pub ir_penalty: f64,
    pub sw: f64,
    pub volume_kwh: f64,
    pub trades: usize,
    /// Mean submitted price over buyer and seller offers; zero without any.
    pub bid_mean: f64,
    pub ask_mean: f64,
    pub agent_steps: usize,
    pub clearing_calls: usize,
    pub updates: usize,
    /// Mean over the episode's updates; zero before warm-up ends.
    pub critic_loss: f64,
    pub actor_grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpisodeLog>,
    pub checkpoint: Checkpoint,
}

/// Sample variance of the per-episode mean reward over the last `frac` of training.
pub fn late_reward_variance(logs: &[EpisodeLog], frac: f64) -> f64 {
    let k = ((logs.len() as f64 * frac).ceil() as usize).clamp(1, logs.len().max(1));
    let tail: Vec<f64> = logs[logs.len().saturating_sub(k)..].iter().map(|l| l.mean_reward).collect();
    sample_variance(&tail)
}

/// Trains one shared actor and critic for `seed`. With `write` set,
/// writes the learning curve, checkpoints and metadata to `spec.out_dir`.
pub fn run_training(cfg: &ExperimentConfig, spec: &RunSpec, seed: u64, write: bool) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let mut sim = cfg.sim.clone();
    sim.n_target = spec.n_agents;
    let lc = &cfg.learner;
    let plan = RewardPlan::for_run(spec.mechanism, spec.ablation);
    let steps = sim.steps_per_day;

    let mut fleet = FleetState::from_rng(stream(seed, Stream::Fleet));
    let mut init_rng = stream(seed, Stream::Init);
    let mut noise_rng = stream(seed, Stream::Noise);
    let mut replay_rng = stream(seed, Stream::Replay);
    let mut clear_rng = stream(seed, Stream::Clearing);
    let mut learner = Maddpg::new(lc.clone(), &mut init_rng);
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(lc.buffer_capacity);
    let ready = lc.warmup.max(lc.batch_size).max(1);

    let dir = &spec.out_dir;
    if write {
        create_dir(dir)?;
        RunMetadata::new(spec, seed, cfg).write(dir)?;
    }
    let snapshot = |learner: &Maddpg, episode: usize| Checkpoint {
        format_version: CHECKPOINT_VERSION,
        mechanism: spec.mechanism.name().to_string(),
        ablation: spec.ablation.label(),
        seed,
        episode,
        learner: lc.clone(),
        actor: learner.actor.clone(),
        critic: learner.critic.clone(),
    };

    let mut logs = Vec::with_capacity(lc.episodes);
    let mut noises: BTreeMap<AgentId, OuNoise> = BTreeMap::new();
    for episode in 0..lc.episodes {
        fleet.reset(&sim);
        noises.clear();
        let mut side_counts = (0usize, 0usize);
        let sigma = annealed_sigma(lc.ou_sigma, lc.sigma_floor, episode, lc.episodes, lc.sigma_anneal_frac);
        let mut log = EpisodeLog {
            episode,
            mean_reward: 0.0,
            base: 0.0,
            credit: 0.0,
            price_prox: 0.0,
            ir_penalty: 0.0,
            sw: 0.0,
            volume_kwh: 0.0,
            trades: 0,
            bid_mean: 0.0,
            ask_mean: 0.0,
            agent_steps: 0,
            clearing_calls: 0,
            updates: 0,
            critic_loss: 0.0,
            actor_grad_norm: 0.0,
        };
        for t in 0..steps {
            if fleet.agents.is_empty() {
                fleet.step_arrivals_departures(&sim);
                continue;
            }
            let ids: Vec<AgentId> = fleet.agents.iter().map(|a| a.id).collect();
            let obs: Vec<_> = fleet.observations(&sim).iter().map(|o| o.features()).collect();
            let mut actions = Vec::with_capacity(ids.len());
            let mut offers = Vec::with_capacity(ids.len());
            for (a, o) in fleet.agents.iter().zip(&obs) {
                let noise = noises
                    .entry(a.id)
                    .or_insert_with(|| OuNoise::new(lc.ou_theta, sigma))
                    .sample(&mut noise_rng);
                let act = learner.actor.noisy_action(o, noise);
                offers.push(action_to_offer(a, act, &sim));
                actions.push(act);
            }
            let agents = &fleet.agents;
            let (result, rewards, calls) = step_rewards(&offers, &cfg.rewards, plan, |o| {
                spec.mechanism.clear(o, agents, &sim, &mut clear_rng)
            });
            fleet.apply_trades(&result, &sim)?;
            let departed = fleet.step_arrivals_departures(&sim);
            let last = t + 1 == steps;

            log.sw += social_welfare(&result);
            log.volume_kwh += result.volume();
            log.trades += result.trades.len();
            log.clearing_calls += calls;
            log.agent_steps += ids.len();
            for o in &offers {
                match o.role {
                    Role::Buyer => {
                        log.bid_mean += o.price;
                        side_counts.0 += 1;
                    }
                    Role::Seller => {
                        log.ask_mean += o.price;
                        side_counts.1 += 1;
                    }
                    Role::Neutral => {}
                }
            }
            for r in &rewards {
                log.mean_reward += r.total;
                log.base += r.base;
                log.credit += r.credit;
                log.price_prox += r.price_prox;
                log.ir_penalty += r.ir_penalty;
            }

            buffer.push(Transition {
                done: ids.iter().map(|id| last || departed.contains(id)).collect(),
                ids,
                obs,
                actions,
                rewards: rewards.iter().map(|r| r.total).collect(),
                next_ids: fleet.agents.iter().map(|a| a.id).collect(),
                next_obs: fleet.observations(&sim).iter().map(|o| o.features()).collect(),
            });

            if buffer.len() >= ready {
                let batch = buffer.sample(lc.batch_size, &mut replay_rng);
                let samples: Vec<Sample> = batch
                    .into_iter()
                    .map(|t| Sample {
                        t,
                        ego: replay_rng.gen_range(0..t.ids.len()),
                    })
                    .collect();
                log.critic_loss += learner.critic_update(&samples);
                log.actor_grad_norm += learner.actor_update(&samples);
                learner.soft_update_targets();
                log.updates += 1;
            }
        }
        let n = log.agent_steps.max(1) as f64;
        for v in [&mut log.mean_reward, &mut log.base, &mut log.credit, &mut log.price_prox, &mut log.ir_penalty] {
            *v /= n;
        }
        log.bid_mean /= side_counts.0.max(1) as f64;
        log.ask_mean /= side_counts.1.max(1) as f64;
        if log.updates > 0 {
            log.critic_loss /= log.updates as f64;
            log.actor_grad_norm /= log.updates as f64;
        }
        logs.push(log);
        if write && lc.checkpoint_every > 0 && (episode + 1) % lc.checkpoint_every == 0 && episode + 1 < lc.episodes {
            save(&snapshot(&learner, episode + 1), &dir.join(format!("checkpoint_ep{}.json", episode + 1)))?;
        }
    }

    let checkpoint = snapshot(&learner, lc.episodes);
    if write {
        save(&checkpoint, &dir.join(CHECKPOINT_FILE))?;
        write_csv(&dir.join(LEARNING_CURVE_FILE), &logs)?;
    }
    Ok(TrainOutcome { logs, checkpoint })
}

fn save(ck: &Checkpoint, path: &Path) -> Result<(), HarnessError> {
    ck.save(path).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

impl TrainOutcome {
    /// Mean of the per-episode mean reward over the last `frac` of training.
    pub fn late_mean_reward(&self, frac: f64) -> f64 {
        let k = ((self.logs.len() as f64 * frac).ceil() as usize).max(1);
        let tail: Vec<f64> = self.logs[self.logs.len().saturating_sub(k)..].iter().map(|l| l.mean_reward).collect();
        mean(&tail)
    }
}
