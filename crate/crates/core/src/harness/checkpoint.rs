//! Binary checkpoints of a complete [`Trainer`].
//!
//! ```text
//! magic "SQCK" | version u32 | digest str | canonical config str
//! | counters | rng positions | environment | replay buffer | agent | log
//! ```
//!
//! Strings and vectors are length-prefixed; numbers are little-endian and
//! floats are stored by bit pattern, so a round trip is bit-exact.

use std::path::Path;
use std::time::Instant;

use crate::agents::sac::{CriticPopulation, GaussianPolicy, SacAgent, TwinCritics};
use crate::agents::{Member, Population, ValueAgent};
use crate::codec::{Decoder, Encoder};
use crate::envs::{Action, Env, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Layer, LayerSpec, NetworkParams};
use crate::pruning::Mask;
use crate::replay::ReplayBuffer;

use super::config::ExperimentConfig;
use super::log::{LogRecord, RunLog};
use super::train::{build_agent, log_layout, Agent, Streams, Trainer};

const MAGIC: &[u8; 4] = b"SQCK";
const VERSION: u32 = 1;

fn put_params(e: &mut Encoder, p: &NetworkParams) {
    e.usize(p.specs().len());
    for s in p.specs() {
        e.usize(s.input_width);
        e.usize(s.output_width);
        e.u8(s.activation.code());
    }
    for l in &p.layers {
        e.f64s(&l.weights);
        e.f64s(&l.bias);
    }
}

fn get_params(d: &mut Decoder) -> Result<NetworkParams> {
    let n = d.len_prefix(17)?;
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let input_width = d.usize()?;
        let output_width = d.usize()?;
        let activation =
            Activation::from_code(d.u8()?).ok_or_else(|| d.error("unknown activation code"))?;
        specs.push(LayerSpec::new(input_width, output_width, activation));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let weights = d.f64s()?;
        let bias = d.f64s()?;
        layers.push(Layer { weights, bias });
    }
    NetworkParams::from_layers(specs, layers).map_err(|e| d.error(e.to_string()))
}

fn put_mask(e: &mut Encoder, m: &Mask) {
    e.usize(m.layers.len());
    m.layers.iter().for_each(|l| e.bools(l));
}

fn get_mask(d: &mut Decoder, params: &NetworkParams) -> Result<Mask> {
    let n = d.len_prefix(8)?;
    let layers = (0..n).map(|_| d.bools()).collect::<Result<Vec<_>>>()?;
    let mask = Mask { layers };
    params
        .check_mask(&mask)
        .map_err(|e| d.error(e.to_string()))?;
    Ok(mask)
}

fn put_adam(e: &mut Encoder, a: &AdamState) {
    put_params(e, &a.first_moment);
    put_params(e, &a.second_moment);
    e.u64(a.step_count);
    e.f64(a.learning_rate);
    e.f64(a.epsilon);
    e.f64(a.beta1);
    e.f64(a.beta2);
}

fn get_adam(d: &mut Decoder, params: &NetworkParams) -> Result<AdamState> {
    let first_moment = get_params(d)?;
    let second_moment = get_params(d)?;
    if !first_moment.same_shape(params) || !second_moment.same_shape(params) {
        return Err(d.error("optimizer moments do not match the parameters"));
    }
    Ok(AdamState {
        first_moment,
        second_moment,
        step_count: d.u64()?,
        learning_rate: d.f64()?,
        epsilon: d.f64()?,
        beta1: d.f64()?,
        beta2: d.f64()?,
    })
}

fn put_member(e: &mut Encoder, m: &Member) {
    put_params(e, &m.params);
    put_mask(e, &m.mask);
    put_adam(e, &m.optimizer);
    e.f64(m.cumulated_loss);
    e.f64(m.sparsity);
    e.u64(m.lineage_id);
    match m.parent_lineage {
        Some(p) => {
            e.bool(true);
            e.u64(p);
        }
        None => e.bool(false),
    }
}

fn get_member(d: &mut Decoder) -> Result<Member> {
    let params = get_params(d)?;
    let mask = get_mask(d, &params)?;
    let optimizer = get_adam(d, &params)?;
    Ok(Member {
        params,
        mask,
        optimizer,
        cumulated_loss: d.f64()?,
        sparsity: d.f64()?,
        lineage_id: d.u64()?,
        parent_lineage: if d.bool()? { Some(d.u64()?) } else { None },
    })
}

fn put_members(e: &mut Encoder, members: &[Member]) {
    e.usize(members.len());
    members.iter().for_each(|m| put_member(e, m));
}

fn get_members(d: &mut Decoder, expected: usize) -> Result<Vec<Member>> {
    let n = d.len_prefix(1)?;
    if n != expected {
        return Err(d.error(format!("expected {expected} members, found {n}")));
    }
    (0..n).map(|_| get_member(d)).collect()
}

fn put_transition(e: &mut Encoder, t: &Transition) {
    e.f64s(&t.state);
    match &t.action {
        Action::Discrete(a) => {
            e.u8(0);
            e.usize(*a);
        }
        Action::Continuous(v) => {
            e.u8(1);
            e.f64s(v);
        }
    }
    e.f64(t.reward);
    e.f64s(&t.next_state);
    e.bool(t.done);
}

fn get_transition(d: &mut Decoder) -> Result<Transition> {
    let state = d.f64s()?;
    let action = match d.u8()? {
        0 => Action::Discrete(d.usize()?),
        1 => Action::Continuous(d.f64s()?),
        other => return Err(d.error(format!("unknown action tag {other}"))),
    };
    Ok(Transition {
        state,
        action,
        reward: d.f64()?,
        next_state: d.f64s()?,
        done: d.bool()?,
    })
}

fn put_agent(e: &mut Encoder, agent: &Agent) {
    match agent {
        Agent::Value(a) => {
            e.u8(0);
            let p = &a.population;
            put_members(e, &p.members);
            put_params(e, &p.target_params);
            put_mask(e, &p.target_mask);
            e.usize(p.champion);
            e.u64(p.next_lineage);
            e.usize(a.last_champion);
        }
        Agent::ActorCritic(a) => {
            e.u8(1);
            put_params(e, &a.policy.params);
            put_mask(e, &a.policy.mask);
            put_adam(e, &a.policy.optimizer);
            for c in &a.twin.critics {
                put_members(e, &c.members);
                c.targets.iter().for_each(|t| put_params(e, t));
                e.usize(c.champion);
                e.usize(c.behavior);
                e.u64(c.next_lineage);
            }
        }
    }
}

fn read_index(d: &mut Decoder, k: usize) -> Result<usize> {
    let i = d.usize()?;
    if i < k {
        Ok(i)
    } else {
        Err(d.error(format!("index {i} out of range for {k} members")))
    }
}

/// Reads agent state into a freshly built agent of the same configuration,
/// which supplies method and hyperparameters.
fn get_agent(d: &mut Decoder, template: Agent) -> Result<Agent> {
    let tag = d.u8()?;
    match (tag, template) {
        (0, Agent::Value(a)) => {
            let k = a.population.size();
            let members = get_members(d, k)?;
            let target_params = get_params(d)?;
            let target_mask = get_mask(d, &target_params)?;
            let champion = read_index(d, k)?;
            let next_lineage = d.u64()?;
            let last_champion = read_index(d, k)?;
            Ok(Agent::Value(ValueAgent {
                population: Population {
                    members,
                    target_params,
                    target_mask,
                    champion,
                    next_lineage,
                },
                last_champion,
                ..a
            }))
        }
        (1, Agent::ActorCritic(a)) => {
            let params = get_params(d)?;
            let mask = get_mask(d, &params)?;
            let optimizer = get_adam(d, &params)?;
            let policy = GaussianPolicy {
                params,
                mask,
                optimizer,
                ..a.policy
            };
            let k = a.twin.critics[0].members.len();
            let mut critic = || -> Result<CriticPopulation> {
                let members = get_members(d, k)?;
                let targets = (0..k).map(|_| get_params(d)).collect::<Result<Vec<_>>>()?;
                let champion = read_index(d, k)?;
                let behavior = read_index(d, k)?;
                Ok(CriticPopulation {
                    members,
                    targets,
                    champion,
                    behavior,
                    next_lineage: d.u64()?,
                })
            };
            let critics = [critic()?, critic()?];
            Ok(Agent::ActorCritic(SacAgent {
                policy,
                twin: TwinCritics { critics, ..a.twin },
                ..a
            }))
        }
        _ => Err(d.error("agent kind does not match the configuration")),
    }
}

fn put_log(e: &mut Encoder, log: &RunLog) {
    e.usize(log.records.len());
    for r in &log.records {
        e.u64(r.step);
        e.f64(r.wallclock_s);
        e.f64(r.episode_return);
        e.f64(r.eval_return);
        e.usize(r.champion_index);
        e.usize(r.behavior_index);
        e.f64s(&r.sparsities);
        e.f64s(&r.losses);
    }
    e.str(&log.events_jsonl());
}

fn get_log(d: &mut Decoder, config: &ExperimentConfig) -> Result<RunLog> {
    let mut log = RunLog::new(log_layout(config));
    let n = d.len_prefix(8)?;
    for i in 0..n {
        d.set_record(Some(i));
        let record = LogRecord {
            step: d.u64()?,
            wallclock_s: d.f64()?,
            episode_return: d.f64()?,
            eval_return: d.f64()?,
            champion_index: d.usize()?,
            behavior_index: d.usize()?,
            sparsities: d.f64s()?,
            losses: d.f64s()?,
        };
        log.push(record).map_err(|e| d.error(e.to_string()))?;
    }
    d.set_record(None);
    let events = d.str()?;
    log.events = RunLog::parse_events(&events).map_err(|e| d.error(e.to_string()))?;
    Ok(log)
}

/// Serializes the complete trainer state.
pub fn encode_checkpoint(trainer: &Trainer) -> Vec<u8> {
    let mut e = Encoder::new();
    e.bytes(MAGIC);
    e.u32(VERSION);
    e.str(&trainer.config.digest());
    e.str(&trainer.config.canonical());
    e.u64(trainer.step);
    e.f64(trainer.episode_return);
    e.f64(trainer.last_episode_return);
    e.f64(trainer.last_eval_return);
    e.usize(trainer.behavior_index);
    e.bool(trainer.learning_started);
    e.f64(if trainer.config.log.wallclock {
        trainer.wallclock()
    } else {
        0.0
    });
    for p in trainer.streams.positions() {
        e.u128(p);
    }
    let (state, elapsed) = trainer.env.raw_state();
    e.f64s(state);
    e.usize(elapsed);
    e.f64s(&trainer.observation);
    e.usize(trainer.buffer.capacity());
    e.u64(trainer.buffer.insert_count());
    e.usize(trainer.buffer.len());
    trainer
        .buffer
        .iter_fifo()
        .for_each(|t| put_transition(&mut e, t));
    put_agent(&mut e, &trainer.agent);
    put_log(&mut e, &trainer.log);
    e.into_bytes()
}

/// Rebuilds a trainer. Nothing is returned unless the whole input parses.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    let mut d = Decoder::new(bytes);
    if d.take(4)? != MAGIC {
        return Err(d.error("not a checkpoint file"));
    }
    let version = d.u32()?;
    if version != VERSION {
        return Err(d.error(format!("unsupported checkpoint version {version}")));
    }
    let digest = d.str()?;
    let config = ExperimentConfig::from_canonical(&d.str()?)?;
    if config.digest() != digest {
        return Err(Error::DigestMismatch {
            expected: config.digest(),
            found: digest,
        });
    }
    let step = d.u64()?;
    let episode_return = d.f64()?;
    let last_episode_return = d.f64()?;
    let last_eval_return = d.f64()?;
    let behavior_index = d.usize()?;
    let learning_started = d.bool()?;
    let wallclock_offset = d.f64()?;
    let mut positions = [0u128; 8];
    for p in positions.iter_mut() {
        *p = d.u128()?;
    }
    let mut env = Env::new(config.env);
    let raw = d.f64s()?;
    let elapsed = d.usize()?;
    env.set_raw_state(raw, elapsed)
        .map_err(|e| d.error(e.to_string()))?;
    let observation = d.f64s()?;
    let capacity = d.usize()?;
    let insert_count = d.u64()?;
    let len = d.len_prefix(1)?;
    let fifo = (0..len)
        .map(|i| {
            d.set_record(Some(i));
            get_transition(&mut d)
        })
        .collect::<Result<Vec<_>>>()?;
    d.set_record(None);
    let buffer = ReplayBuffer::from_parts(capacity, fifo, insert_count)
        .map_err(|e| d.error(e.to_string()))?;
    let agent = get_agent(&mut d, build_agent(&config)?)?;
    let log = get_log(&mut d, &config)?;
    d.expect_end()?;
    Ok(Trainer {
        streams: Streams::from_positions(config.seed, &positions),
        config,
        agent,
        env,
        observation,
        buffer,
        step,
        episode_return,
        last_episode_return,
        last_eval_return,
        behavior_index,
        learning_started,
        log,
        wallclock_offset,
        clock: Instant::now(),
    })
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(trainer))?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint for resumption, refusing one written for a different
/// configuration.
pub fn resume_checkpoint(path: &Path, config: &ExperimentConfig) -> Result<Trainer> {
    let trainer = load_checkpoint(path)?;
    let (expected, found) = (config.digest(), trainer.config.digest());
    if expected != found {
        return Err(Error::DigestMismatch { expected, found });
    }
    Ok(trainer)
}
