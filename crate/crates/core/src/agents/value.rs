//! The DQN family: one code path for dense DQN, polynomial pruning,
//! distillation pruning and the adaptive population method.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::member::{Member, Population};
use super::selection::{behavior_distribution, exploitation, exploration, select_target};
use crate::envs::argmax;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkParams};
use crate::pruning::{poly_schedule, EauDeConfig, Mask, PolyPruneConfig};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueMethod {
    /// Plain DQN.
    Dense,
    /// Polynomial schedule applied every `pruning_period` steps.
    PolyPrune(PolyPruneConfig),
    /// Polynomial schedule applied right after each target update.
    Distill(PolyPruneConfig),
    /// Adaptive population pruning.
    EauDe(EauDeConfig),
}

impl ValueMethod {
    pub fn population_size(&self) -> usize {
        match self {
            ValueMethod::EauDe(cfg) => cfg.population_size,
            _ => 1,
        }
    }
}

/// Shared bootstrap targets `y = r + gamma * (1 - done) * max_a' Q(s', a')`.
pub fn td_targets(
    target_params: &NetworkParams,
    target_mask: &Mask,
    batch: &Batch,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.size == 0 {
        return Err(Error::Empty("batch".into()));
    }
    let trace = target_params.forward_batch(target_mask, &batch.next_states, batch.size)?;
    let width = target_params.output_width();
    let q = trace.output();
    Ok((0..batch.size)
        .map(|j| {
            if batch.dones[j] {
                batch.rewards[j]
            } else {
                let best = q[j * width..(j + 1) * width]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                batch.rewards[j] + gamma * best
            }
        })
        .collect())
}

/// Uniform random action with probability `epsilon`, otherwise greedy.
pub fn act_epsilon_greedy(
    member: &Member,
    state: &[f64],
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<usize> {
    let n_actions = member.params.output_width();
    if rng.uniform() < epsilon {
        Ok(rng.index(n_actions))
    } else {
        let q = member.params.forward(&member.mask, state)?;
        Ok(argmax(&q))
    }
}

/// Linearly decayed exploration rate.
pub fn epsilon_at(t: u64, start: f64, end: f64, decay_steps: u64) -> f64 {
    if t >= decay_steps {
        return end;
    }
    start + (end - start) * (t as f64 / decay_steps as f64)
}

/// What a target-update or pruning event did.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentEvent {
    TargetUpdate {
        champion: usize,
    },
    Exploitation {
        selection: Vec<usize>,
    },
    Exploration {
        duplicated: Vec<bool>,
        sparsities: Vec<f64>,
    },
    Prune {
        target: f64,
        realized: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueAgent {
    pub method: ValueMethod,
    pub population: Population,
    pub gamma: f64,
    /// Slot chosen by the most recent target selection, before reshuffling.
    pub last_champion: usize,
}

impl ValueAgent {
    pub fn new(
        method: ValueMethod,
        specs: &[LayerSpec],
        seed: u64,
        learning_rate: f64,
        adam_epsilon: f64,
        gamma: f64,
    ) -> Result<Self> {
        if let ValueMethod::EauDe(cfg) = &method {
            cfg.validate()?;
        }
        if let ValueMethod::PolyPrune(cfg) | ValueMethod::Distill(cfg) = &method {
            cfg.validate()?;
        }
        let members = (0..method.population_size())
            .map(|k| {
                let mut rng = RngStream::new(seed, format!("member/{k}/init"));
                let params = NetworkParams::init(specs, &mut rng)?;
                Ok(Member::new(params, learning_rate, adam_epsilon, k as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            method,
            population: Population::new(members)?,
            gamma,
            last_champion: 0,
        })
    }

    /// Samples the acting member from the inverse-loss distribution.
    pub fn behavior_index(&self, rng: &mut RngStream) -> usize {
        match self.method {
            ValueMethod::EauDe(_) => {
                rng.categorical(&behavior_distribution(&self.population.losses()))
            }
            _ => 0,
        }
    }

    pub fn act(
        &self,
        member: usize,
        state: &[f64],
        epsilon: f64,
        rng: &mut RngStream,
    ) -> Result<usize> {
        act_epsilon_greedy(&self.population.members[member], state, epsilon, rng)
    }

    /// One gradient pass: every member trains against the same targets.
    pub fn gradient_step(&mut self, batch: &Batch, step: u64, parallel: bool) -> Result<Vec<f64>> {
        let targets = td_targets(
            &self.population.target_params,
            &self.population.target_mask,
            batch,
            self.gamma,
        )?;
        let train = |(k, m): (usize, &mut Member)| {
            m.train_step(&batch.states, &batch.discrete_actions, &targets)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { member: k, step },
                    other => other,
                })
        };
        if parallel {
            self.population
                .members
                .par_iter_mut()
                .enumerate()
                .map(train)
                .collect()
        } else {
            self.population
                .members
                .iter_mut()
                .enumerate()
                .map(train)
                .collect()
        }
    }

    /// Target update at step `t`, followed by the method's selection or
    /// pruning. `selection_enabled` is false until learning has started.
    pub fn target_update(
        &mut self,
        t: u64,
        target_period: u64,
        selection_enabled: bool,
        rng: &mut RngStream,
    ) -> Result<Vec<AgentEvent>> {
        let mut events = Vec::new();
        match self.method {
            ValueMethod::Dense | ValueMethod::PolyPrune(_) => {
                self.population.copy_target_from(0);
                self.last_champion = 0;
                events.push(AgentEvent::TargetUpdate { champion: 0 });
            }
            ValueMethod::Distill(cfg) => {
                self.population.copy_target_from(0);
                self.last_champion = 0;
                events.push(AgentEvent::TargetUpdate { champion: 0 });
                events.push(self.prune_member0(t, &cfg)?);
            }
            ValueMethod::EauDe(cfg) => {
                let losses = self.population.losses();
                let champion = select_target(&losses);
                self.population.copy_target_from(champion);
                self.last_champion = champion;
                self.population.champion = champion;
                events.push(AgentEvent::TargetUpdate { champion });
                if selection_enabled {
                    let selection = exploitation(&losses, champion, &cfg, rng)?;
                    let (members, report) = exploration(
                        &self.population.members,
                        &selection,
                        t,
                        t + target_period,
                        &cfg,
                        rng,
                        &mut self.population.next_lineage,
                    )?;
                    self.population.members = members;
                    self.population.champion = 0;
                    events.push(AgentEvent::Exploitation { selection });
                    events.push(AgentEvent::Exploration {
                        duplicated: report.duplicated,
                        sparsities: self.population.sparsities(),
                    });
                }
            }
        }
        self.population.reset_losses();
        Ok(events)
    }

    /// Scheduled pruning of the polynomial method (no-op for others).
    pub fn scheduled_prune(&mut self, t: u64) -> Result<Option<AgentEvent>> {
        match self.method {
            ValueMethod::PolyPrune(cfg) if t.is_multiple_of(cfg.pruning_period) => {
                Ok(Some(self.prune_member0(t, &cfg)?))
            }
            _ => Ok(None),
        }
    }

    fn prune_member0(&mut self, t: u64, cfg: &PolyPruneConfig) -> Result<AgentEvent> {
        let target = poly_schedule(t, cfg);
        let member = &mut self.population.members[0];
        member.prune_to(target)?;
        Ok(AgentEvent::Prune {
            target,
            realized: member.sparsity,
        })
    }

    /// The member currently holding the target lineage.
    pub fn champion_member(&self) -> &Member {
        &self.population.members[self.population.champion]
    }
}

/// Standalone distillation update used for the schedule equivalence
/// checks: prune a member to the polynomial target at step `t`.
pub fn distillqn_update(member: &mut Member, schedule: &PolyPruneConfig, t: u64) -> Result<()> {
    member.prune_to(poly_schedule(t, schedule))
}
