//! The training loop shared by every algorithm.
//!
//! Per environment step `t` (1-based) the order is: pick the acting
//! member, interact and store the transition, then (once `t > warmup`) the
//! gradient pass every `G` steps or `UTD` actor-critic updates, then the
//! target update with selection every `T` steps (or the prune event every
//! `P` steps for actor-critic runs), then scheduled pruning, evaluation
//! and logging.

use std::time::Instant;

use crate::agents::sac::{eaudesac_prune_event, SacAgent, SacHyper, SacMethod};
use crate::agents::{epsilon_at, AgentEvent, Batch, Member, ValueAgent, ValueMethod};
use crate::envs::{
    argmax, is_terminal, random_action, tabular_dims, value_iteration, Action, ActionSpace, Env,
    EnvId, Transition,
};
use crate::error::{Error, Result};
use crate::nn::mlp_specs;
use crate::replay::ReplayBuffer;
use crate::rng::RngStream;

use super::config::{Algorithm, ExperimentConfig};
use super::log::{EventRecord, LogLayout, LogRecord, RunLog};

#[derive(Clone, Debug, PartialEq)]
pub enum Agent {
    Value(ValueAgent),
    ActorCritic(SacAgent),
}

/// Every random stream a run consumes, one per purpose.
#[derive(Clone, Debug, PartialEq)]
pub struct Streams {
    pub env: RngStream,
    pub behavior: RngStream,
    pub action: RngStream,
    pub replay: RngStream,
    pub exploration: RngStream,
    pub eval: RngStream,
    pub critic_target: RngStream,
    pub actor: RngStream,
}

impl Streams {
    pub const LABELS: [&'static str; 8] = [
        "env",
        "behavior",
        "action",
        "replay",
        "exploration",
        "eval",
        "critic-target",
        "actor",
    ];

    pub fn new(seed: u64) -> Self {
        Self::from_positions(seed, &[0; 8])
    }

    pub fn from_positions(seed: u64, positions: &[u128; 8]) -> Self {
        let s = |i: usize| RngStream::restore(seed, Self::LABELS[i], positions[i]);
        Self {
            env: s(0),
            behavior: s(1),
            action: s(2),
            replay: s(3),
            exploration: s(4),
            eval: s(5),
            critic_target: s(6),
            actor: s(7),
        }
    }

    pub fn positions(&self) -> [u128; 8] {
        [
            &self.env,
            &self.behavior,
            &self.action,
            &self.replay,
            &self.exploration,
            &self.eval,
            &self.critic_target,
            &self.actor,
        ]
        .map(RngStream::position)
    }
}

/// The complete mutable state of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: ExperimentConfig,
    pub agent: Agent,
    pub env: Env,
    pub observation: Vec<f64>,
    pub buffer: ReplayBuffer,
    /// Environment steps taken so far.
    pub step: u64,
    pub episode_return: f64,
    pub last_episode_return: f64,
    pub last_eval_return: f64,
    pub behavior_index: usize,
    pub learning_started: bool,
    pub streams: Streams,
    pub log: RunLog,
    pub(crate) wallclock_offset: f64,
    pub(crate) clock: Instant,
}

impl PartialEq for Trainer {
    /// Compares everything except the wall clock.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.agent == other.agent
            && self.env == other.env
            && self.observation == other.observation
            && self.buffer.capacity() == other.buffer.capacity()
            && self.buffer.insert_count() == other.buffer.insert_count()
            && self.buffer.iter_fifo().eq(other.buffer.iter_fifo())
            && self.step == other.step
            && self.episode_return.to_bits() == other.episode_return.to_bits()
            && self.last_episode_return.to_bits() == other.last_episode_return.to_bits()
            && self.last_eval_return.to_bits() == other.last_eval_return.to_bits()
            && self.behavior_index == other.behavior_index
            && self.learning_started == other.learning_started
            && self.streams == other.streams
            && self.log.to_csv().ok() == other.log.to_csv().ok()
            && self.log.events == other.log.events
    }
}

fn value_method(config: &ExperimentConfig) -> ValueMethod {
    match config.algorithm {
        Algorithm::PolypruneDqn => ValueMethod::PolyPrune(config.polyprune),
        Algorithm::DistillDqn => ValueMethod::Distill(config.polyprune),
        Algorithm::EaudeDqn => ValueMethod::EauDe(config.eaude),
        _ => ValueMethod::Dense,
    }
}

fn sac_method(config: &ExperimentConfig) -> SacMethod {
    match config.algorithm {
        Algorithm::PolypruneSac => SacMethod::PolyPrune(config.polyprune),
        Algorithm::EaudeSac => SacMethod::EauDe(config.eaude),
        _ => SacMethod::Dense,
    }
}

/// Builds the freshly initialised agent of a configuration.
pub fn build_agent(config: &ExperimentConfig) -> Result<Agent> {
    let spec = config.spec();
    match spec.action_space {
        ActionSpace::Discrete(n_actions) => {
            let mut widths = vec![spec.observation_width];
            widths.extend_from_slice(&config.hidden);
            widths.push(n_actions);
            Ok(Agent::Value(ValueAgent::new(
                value_method(config),
                &mlp_specs(&widths),
                config.seed,
                config.learning_rate,
                config.adam_epsilon,
                config.gamma,
            )?))
        }
        ActionSpace::Continuous { dim, low, high } => {
            let hyper = SacHyper {
                obs_width: spec.observation_width,
                action_dim: dim,
                low,
                high,
                actor_hidden: &config.actor_hidden,
                critic_hidden: &config.hidden,
                learning_rate: config.learning_rate,
                adam_epsilon: config.adam_epsilon,
                gamma: config.gamma,
                tau: config.sac.tau,
                alpha: config.sac.alpha,
            };
            Ok(Agent::ActorCritic(SacAgent::new(
                sac_method(config),
                &hyper,
                config.seed,
            )?))
        }
    }
}

pub fn log_layout(config: &ExperimentConfig) -> LogLayout {
    let members = config.population_size();
    if config.algorithm.is_actor_critic() {
        LogLayout::ActorCritic { members }
    } else {
        LogLayout::Value { members }
    }
}

/// Mean undiscounted return of `policy` over `episodes` episodes.
pub fn evaluate_policy(
    env: EnvId,
    episodes: usize,
    rng: &mut RngStream,
    mut policy: impl FnMut(&[f64]) -> Result<Action>,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Argument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env = Env::new(env);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        loop {
            let out = env.step(&policy(&obs)?)?;
            total += out.reward;
            if out.done || out.truncated {
                break;
            }
            obs = out.observation;
        }
    }
    Ok(total / episodes as f64)
}

/// Whether a Q-network's greedy action is optimal (per value iteration) in
/// every non-terminal state of a tabular environment.
pub fn matches_value_iteration(member: &Member, env: EnvId, gamma: f64) -> Result<bool> {
    let (n_states, _) = tabular_dims(env)?;
    let table = value_iteration(env, gamma, 1e-12)?;
    for state in (0..n_states).filter(|&s| !is_terminal(env, s)) {
        let mut obs = vec![0.0; n_states];
        obs[state] = 1.0;
        let greedy = argmax(&member.params.forward(&member.mask, &obs)?);
        if !table.optimal_actions(state, 1e-9).contains(&greedy) {
            return Ok(false);
        }
    }
    Ok(true)
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let agent = build_agent(&config)?;
        let mut streams = Streams::new(config.seed);
        let mut env = Env::new(config.env);
        let observation = env.reset(&mut streams.env);
        let log = RunLog::new(log_layout(&config));
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            agent,
            env,
            observation,
            step: 0,
            episode_return: 0.0,
            last_episode_return: f64::NAN,
            last_eval_return: f64::NAN,
            behavior_index: 0,
            learning_started: false,
            streams,
            log,
            wallclock_offset: 0.0,
            clock: Instant::now(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    pub fn wallclock(&self) -> f64 {
        self.wallclock_offset + self.clock.elapsed().as_secs_f64()
    }

    /// Runs until `until` steps (capped at the configured total), using the
    /// configured thread count for per-member work.
    pub fn run_to(&mut self, until: u64) -> Result<()> {
        let until = until.min(self.config.total_steps);
        if self.config.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| self.advance(until, true))
        } else {
            self.advance(until, false)
        }
    }

    fn advance(&mut self, until: u64, parallel: bool) -> Result<()> {
        while self.step < until {
            self.step_once(parallel)?;
        }
        Ok(())
    }

    /// One environment step with everything scheduled at it. Returns the
    /// events that fired.
    pub fn step_once(&mut self, parallel: bool) -> Result<Vec<EventRecord>> {
        let t = self.step + 1;
        let action = self.choose_action(t)?;
        let out = self.env.step(&action)?;
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.observation),
            action,
            reward: out.reward,
            next_state: out.observation.clone(),
            done: out.done,
        });
        self.episode_return += out.reward;
        if out.done || out.truncated {
            self.last_episode_return = self.episode_return;
            self.episode_return = 0.0;
            self.observation = self.env.reset(&mut self.streams.env);
        } else {
            self.observation = out.observation;
        }

        if t > self.config.warmup as u64 {
            self.learn(t, parallel)?;
        }
        let losses_at_selection = self.losses();
        let events = self.scheduled_events(t)?;
        let eval = self.config.eval;
        if eval.period > 0 && t.is_multiple_of(eval.period) {
            self.last_eval_return = self.evaluate(eval.episodes)?;
        }
        self.step = t;
        if t.is_multiple_of(self.config.log.period) || !events.is_empty() {
            let mut record = self.record(t);
            if !events.is_empty() {
                record.losses = losses_at_selection;
            }
            self.log.push(record)?;
        }
        self.log.events.extend(events.iter().cloned());
        Ok(events)
    }

    fn choose_action(&mut self, t: u64) -> Result<Action> {
        match &self.agent {
            Agent::Value(agent) => {
                self.behavior_index = agent.behavior_index(&mut self.streams.behavior);
                let e = self.config.epsilon;
                let epsilon = epsilon_at(t - 1, e.start, e.end, e.decay_steps);
                Ok(Action::Discrete(agent.act(
                    self.behavior_index,
                    &self.observation,
                    epsilon,
                    &mut self.streams.action,
                )?))
            }
            Agent::ActorCritic(agent) => {
                if t <= self.config.warmup as u64 {
                    Ok(random_action(&self.config.spec(), &mut self.streams.action))
                } else {
                    let (a, _) = agent
                        .policy
                        .sample(&self.observation, &mut self.streams.action)?;
                    Ok(Action::Continuous(a))
                }
            }
        }
    }

    fn sample_batch(&mut self) -> Result<Batch> {
        let sample = self
            .buffer
            .sample_batch(self.config.batch_size, &mut self.streams.replay)?;
        Ok(Batch::from_transitions(&sample))
    }

    fn learn(&mut self, t: u64, parallel: bool) -> Result<()> {
        match self.agent {
            Agent::Value(_) => {
                if t.is_multiple_of(self.config.gradient_period) {
                    let batch = self.sample_batch()?;
                    if let Agent::Value(agent) = &mut self.agent {
                        agent.gradient_step(&batch, t, parallel)?;
                    }
                    self.learning_started = true;
                }
            }
            Agent::ActorCritic(_) => {
                for _ in 0..self.config.sac.utd {
                    let batch = self.sample_batch()?;
                    if let Agent::ActorCritic(agent) = &mut self.agent {
                        agent.update(
                            &batch,
                            t,
                            parallel,
                            &mut self.streams.critic_target,
                            &mut self.streams.behavior,
                            &mut self.streams.actor,
                        )?;
                        self.behavior_index = agent.twin.critics[0].behavior;
                    }
                    self.learning_started = true;
                }
            }
        }
        Ok(())
    }

    fn scheduled_events(&mut self, t: u64) -> Result<Vec<EventRecord>> {
        let mut out = Vec::new();
        let plain = |event| EventRecord {
            step: t,
            critic: None,
            event,
        };
        match &mut self.agent {
            Agent::Value(agent) => {
                let period = self.config.target_period;
                if t.is_multiple_of(period) {
                    let events = agent.target_update(
                        t,
                        period,
                        self.learning_started,
                        &mut self.streams.exploration,
                    )?;
                    out.extend(events.into_iter().map(plain));
                }
                if let Some(event) = agent.scheduled_prune(t)? {
                    out.push(plain(event));
                }
            }
            Agent::ActorCritic(agent) => {
                let period = self.config.sac.pruning_period;
                match agent.method {
                    SacMethod::EauDe(cfg) if t.is_multiple_of(period) && self.learning_started => {
                        let reports = eaudesac_prune_event(
                            &mut agent.twin,
                            t,
                            t + period,
                            &cfg,
                            &mut self.streams.exploration,
                        )?;
                        for (i, (selection, duplicated)) in reports.into_iter().enumerate() {
                            let critic = Some(i as u8 + 1);
                            let sparsities = agent.twin.critics[i].sparsities();
                            out.push(EventRecord {
                                step: t,
                                critic,
                                event: AgentEvent::Exploitation { selection },
                            });
                            out.push(EventRecord {
                                step: t,
                                critic,
                                event: AgentEvent::Exploration {
                                    duplicated,
                                    sparsities,
                                },
                            });
                        }
                        self.behavior_index = 0;
                    }
                    SacMethod::PolyPrune(_) => {
                        if let Some(target) = agent.scheduled_prune(t)? {
                            for i in 0..2 {
                                out.push(EventRecord {
                                    step: t,
                                    critic: Some(i as u8 + 1),
                                    event: AgentEvent::Prune {
                                        target,
                                        realized: agent.twin.critics[i].members[0].sparsity,
                                    },
                                });
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    /// Cumulated losses in log column order.
    fn losses(&self) -> Vec<f64> {
        match &self.agent {
            Agent::Value(agent) => agent.population.losses(),
            Agent::ActorCritic(agent) => {
                let [c1, c2] = &agent.twin.critics;
                [c1.losses(), c2.losses()].concat()
            }
        }
    }

    /// The log row for step `t`. On event steps the caller substitutes the
    /// losses seen by the selection, since they are reset afterwards.
    fn record(&self, t: u64) -> LogRecord {
        let (champion_index, sparsities) = match &self.agent {
            Agent::Value(agent) => (agent.population.champion, agent.population.sparsities()),
            Agent::ActorCritic(agent) => {
                let [c1, c2] = &agent.twin.critics;
                (c1.champion, [c1.sparsities(), c2.sparsities()].concat())
            }
        };
        let losses = self.losses();
        LogRecord {
            step: t,
            wallclock_s: if self.config.log.wallclock {
                self.wallclock()
            } else {
                0.0
            },
            episode_return: self.last_episode_return,
            eval_return: self.last_eval_return,
            champion_index,
            behavior_index: self.behavior_index,
            sparsities,
            losses,
        }
    }

    /// Greedy (value-based) or mean-action (actor-critic) evaluation of the
    /// current champion, drawing resets from the evaluation stream.
    pub fn evaluate(&mut self, episodes: usize) -> Result<f64> {
        let env = self.config.env;
        let rng = &mut self.streams.eval;
        match &self.agent {
            Agent::Value(agent) => {
                let member = agent.champion_member();
                evaluate_policy(env, episodes, rng, |obs| {
                    Ok(Action::Discrete(argmax(
                        &member.params.forward(&member.mask, obs)?,
                    )))
                })
            }
            Agent::ActorCritic(agent) => evaluate_policy(env, episodes, rng, |obs| {
                Ok(Action::Continuous(agent.policy.mean_action(obs)?))
            }),
        }
    }

    /// Sparsity of the champion network (critic 1 for actor-critic runs).
    pub fn champion_sparsity(&self) -> f64 {
        match &self.agent {
            Agent::Value(agent) => agent.champion_member().sparsity,
            Agent::ActorCritic(agent) => agent.champion_sparsity()[0],
        }
    }
}

/// Trains a configuration to completion in memory.
pub fn run_training(config: &ExperimentConfig) -> Result<RunLog> {
    let mut trainer = Trainer::new(config.clone())?;
    trainer.run_to(config.total_steps)?;
    Ok(trainer.log)
}
