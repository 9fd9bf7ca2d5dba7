//! Experiment configuration.
//!
//! Files are TOML restricted to scalar keys, either under `[section]`
//! headers or written as dotted keys (`train.total_steps = 5000`). Every
//! key is optional; missing keys take desk-scale defaults that depend on
//! the environment and algorithm. Unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ActionSpace, Baselines, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::pruning::{EauDeConfig, PolyPruneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    PolypruneDqn,
    /// Polynomial pruning applied right after each target update.
    DistillDqn,
    EaudeDqn,
    Sac,
    PolypruneSac,
    EaudeSac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Dqn,
        Algorithm::PolypruneDqn,
        Algorithm::DistillDqn,
        Algorithm::EaudeDqn,
        Algorithm::Sac,
        Algorithm::PolypruneSac,
        Algorithm::EaudeSac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::PolypruneDqn => "polyprune_dqn",
            Algorithm::DistillDqn => "distill_dqn",
            Algorithm::EaudeDqn => "eaude_dqn",
            Algorithm::Sac => "sac",
            Algorithm::PolypruneSac => "polyprune_sac",
            Algorithm::EaudeSac => "eaude_sac",
        }
    }

    pub fn is_actor_critic(self) -> bool {
        matches!(
            self,
            Algorithm::Sac | Algorithm::PolypruneSac | Algorithm::EaudeSac
        )
    }

    pub fn is_population(self) -> bool {
        matches!(self, Algorithm::EaudeDqn | Algorithm::EaudeSac)
    }

    pub fn is_polynomial(self) -> bool {
        matches!(
            self,
            Algorithm::PolypruneDqn | Algorithm::DistillDqn | Algorithm::PolypruneSac
        )
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacSettings {
    pub tau: f64,
    pub alpha: f64,
    /// Steps between prune events (`P`).
    pub pruning_period: u64,
    pub utd: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Steps between evaluations; 0 disables evaluation.
    pub period: u64,
    pub episodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSettings {
    pub period: u64,
    /// Record elapsed wall-clock seconds; when false the column is 0 so
    /// logs are byte-comparable.
    pub wallclock: bool,
}

/// A fully resolved run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub seed: u64,
    pub total_steps: u64,
    pub gradient_period: u64,
    pub target_period: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub gamma: f64,
    pub threads: usize,
    pub epsilon: EpsilonSchedule,
    pub hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub sac: SacSettings,
    pub polyprune: PolyPruneConfig,
    pub eaude: EauDeConfig,
    pub eval: EvalSettings,
    pub log: LogSettings,
    pub baselines: Option<Baselines>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    total_steps: Option<u64>,
    gradient_period: Option<u64>,
    target_period: Option<u64>,
    batch_size: Option<usize>,
    buffer_capacity: Option<usize>,
    warmup: Option<usize>,
    learning_rate: Option<f64>,
    adam_epsilon: Option<f64>,
    gamma: Option<f64>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpsilon {
    start: Option<f64>,
    end: Option<f64>,
    decay_steps: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    hidden: Option<Vec<usize>>,
    actor_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSac {
    tau: Option<f64>,
    alpha: Option<f64>,
    pruning_period: Option<u64>,
    utd: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolyPrune {
    final_sparsity: Option<f64>,
    exponent: Option<f64>,
    t_start: Option<u64>,
    t_end: Option<u64>,
    pruning_period: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEauDe {
    u_max: Option<f64>,
    s_max: Option<f64>,
    population_size: Option<usize>,
    tournament_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    period: Option<u64>,
    episodes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLog {
    period: Option<u64>,
    wallclock: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaselines {
    random: Option<f64>,
    reference: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    algorithm: Option<String>,
    env: Option<String>,
    seed: Option<u64>,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    epsilon: RawEpsilon,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    sac: RawSac,
    #[serde(default)]
    polyprune: RawPolyPrune,
    #[serde(default)]
    eaude: RawEauDe,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    log: RawLog,
    #[serde(default)]
    baselines: RawBaselines,
}

/// Desk-scale training defaults for one environment/algorithm pair.
struct Defaults {
    total_steps: u64,
    target_period: u64,
    batch_size: usize,
    buffer_capacity: usize,
    warmup: usize,
    learning_rate: f64,
    adam_epsilon: f64,
    hidden: Vec<usize>,
    actor_hidden: Vec<usize>,
    eval: EvalSettings,
}

fn defaults(algorithm: Algorithm, env: EnvId) -> Defaults {
    if algorithm.is_actor_critic() {
        return Defaults {
            total_steps: 50_000,
            target_period: 1,
            batch_size: 32,
            buffer_capacity: 50_000,
            warmup: 1_000,
            learning_rate: 1e-3,
            adam_epsilon: 1e-8,
            hidden: vec![64, 64],
            actor_hidden: vec![32, 32],
            eval: EvalSettings {
                period: 5_000,
                episodes: 10,
            },
        };
    }
    let (total_steps, target_period, buffer_capacity, warmup) = match env {
        EnvId::Cartpole => (100_000, 1_000, 50_000, 1_000),
        _ => (20_000, 500, 10_000, 500),
    };
    Defaults {
        total_steps,
        target_period,
        batch_size: 32,
        buffer_capacity,
        warmup,
        learning_rate: 1e-3,
        adam_epsilon: 1.5e-4,
        hidden: vec![32, 32],
        actor_hidden: vec![32, 32],
        eval: EvalSettings {
            period: 0,
            episodes: 10,
        },
    }
}

impl ExperimentConfig {
    /// The resolved defaults for an algorithm and environment.
    pub fn desk(algorithm: Algorithm, env: EnvId, seed: u64) -> Result<Self> {
        Self::resolve(
            RawConfig {
                algorithm: Some(algorithm.name().into()),
                env: Some(env.name().into()),
                seed: Some(seed),
                ..RawConfig::default()
            },
            None,
        )
    }

    /// Parses and validates configuration text. `seed` overrides the file.
    pub fn from_toml(text: &str, seed: Option<u64>) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        Self::resolve(raw, seed)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, seed)
    }

    fn resolve(raw: RawConfig, seed_override: Option<u64>) -> Result<Self> {
        let algorithm: Algorithm = raw
            .algorithm
            .as_deref()
            .ok_or_else(|| Error::Config("missing key `algorithm`".into()))?
            .parse()?;
        let env: EnvId = raw
            .env
            .as_deref()
            .ok_or_else(|| Error::Config("missing key `env`".into()))?
            .parse()?;
        let d = defaults(algorithm, env);
        let t = raw.train;
        let total_steps = t.total_steps.unwrap_or(d.total_steps);
        let target_period = t.target_period.unwrap_or(d.target_period);
        let sac = SacSettings {
            tau: raw.sac.tau.unwrap_or(0.005),
            alpha: raw.sac.alpha.unwrap_or(0.2),
            pruning_period: raw.sac.pruning_period.unwrap_or(250),
            utd: raw.sac.utd.unwrap_or(1),
        };
        let prune_period = if algorithm.is_actor_critic() {
            sac.pruning_period
        } else {
            target_period
        };
        let standard = PolyPruneConfig::standard(total_steps, prune_period);
        let p = raw.polyprune;
        let polyprune = PolyPruneConfig {
            final_sparsity: p.final_sparsity.unwrap_or(standard.final_sparsity),
            exponent: p.exponent.unwrap_or(standard.exponent),
            t_start: p.t_start.unwrap_or(standard.t_start),
            t_end: p.t_end.unwrap_or(standard.t_end),
            t_final: total_steps,
            pruning_period: p.pruning_period.unwrap_or(prune_period),
        };
        let standard = EauDeConfig::standard(total_steps);
        let population = if algorithm.is_population() {
            standard.population_size
        } else {
            1
        };
        let e = raw.eaude;
        let population_size = e.population_size.unwrap_or(population);
        let eaude = EauDeConfig {
            u_max: e.u_max.unwrap_or(standard.u_max),
            s_max: e.s_max.unwrap_or(standard.s_max),
            population_size,
            tournament_size: e
                .tournament_size
                .unwrap_or(standard.tournament_size.min(population_size)),
            t_final: total_steps,
        };
        let baselines = match (raw.baselines.random, raw.baselines.reference) {
            (Some(random), Some(reference)) => Some(Baselines { random, reference }),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "baselines.random and baselines.reference must be given together".into(),
                ))
            }
        };
        let config = Self {
            algorithm,
            env,
            seed: seed_override.or(raw.seed).unwrap_or(0),
            total_steps,
            gradient_period: t.gradient_period.unwrap_or(1),
            target_period,
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            buffer_capacity: t.buffer_capacity.unwrap_or(d.buffer_capacity),
            warmup: t.warmup.unwrap_or(d.warmup),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            adam_epsilon: t.adam_epsilon.unwrap_or(d.adam_epsilon),
            gamma: t.gamma.unwrap_or(EnvSpec::of(env).discount),
            threads: t.threads.unwrap_or(1),
            epsilon: EpsilonSchedule {
                start: raw.epsilon.start.unwrap_or(1.0),
                end: raw.epsilon.end.unwrap_or(0.01),
                decay_steps: raw.epsilon.decay_steps.unwrap_or(total_steps / 10),
            },
            hidden: raw.network.hidden.unwrap_or_else(|| d.hidden.clone()),
            actor_hidden: raw.network.actor_hidden.unwrap_or(d.actor_hidden),
            sac,
            polyprune,
            eaude,
            eval: EvalSettings {
                period: raw.eval.period.unwrap_or(d.eval.period),
                episodes: raw.eval.episodes.unwrap_or(d.eval.episodes),
            },
            log: LogSettings {
                period: raw.log.period.unwrap_or(100),
                wallclock: raw.log.wallclock.unwrap_or(true),
            },
            baselines,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks every invariant; the first violation is reported.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        let spec = EnvSpec::of(self.env);
        match (self.algorithm.is_actor_critic(), spec.action_space) {
            (true, ActionSpace::Discrete(_)) => {
                return fail("actor-critic algorithms need a continuous action space")
            }
            (false, ActionSpace::Continuous { .. }) => {
                return fail("value-based algorithms need a discrete action space")
            }
            _ => {}
        }
        if self.total_steps == 0 {
            return fail("train.total_steps must be positive");
        }
        if self.gradient_period == 0 || self.target_period == 0 {
            return fail("train.gradient_period and train.target_period must be positive");
        }
        if self.sac.pruning_period == 0 || self.sac.utd == 0 {
            return fail("sac.pruning_period and sac.utd must be positive");
        }
        if self.log.period == 0 {
            return fail("log.period must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return fail("train.batch_size and train.buffer_capacity must be positive");
        }
        if self.warmup > self.buffer_capacity {
            return fail("train.warmup must not exceed train.buffer_capacity");
        }
        if (self.warmup as u64) > self.total_steps {
            return fail("train.total_steps must be at least train.warmup");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("train.learning_rate must be positive");
        }
        if !(self.adam_epsilon > 0.0 && self.adam_epsilon.is_finite()) {
            return fail("train.adam_epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("train.gamma must be in [0, 1]");
        }
        if self.threads == 0 {
            return fail("train.threads must be at least 1");
        }
        let eps = &self.epsilon;
        if !(0.0..=1.0).contains(&eps.start) || !(0.0..=1.0).contains(&eps.end) {
            return fail("epsilon.start and epsilon.end must be in [0, 1]");
        }
        if self
            .hidden
            .iter()
            .chain(&self.actor_hidden)
            .any(|&w| w == 0)
        {
            return fail("network widths must be positive");
        }
        if !(self.sac.tau > 0.0 && self.sac.tau <= 1.0) {
            return fail("sac.tau must be in (0, 1]");
        }
        if !(self.sac.alpha >= 0.0 && self.sac.alpha.is_finite()) {
            return fail("sac.alpha must be non-negative");
        }
        if self.eval.episodes == 0 {
            return fail("eval.episodes must be at least 1");
        }
        if self.algorithm.is_polynomial() {
            self.polyprune.validate()?;
        }
        self.eaude.validate()?;
        if !self.algorithm.is_population() && self.eaude.population_size != 1 {
            return fail("eaude.population_size applies only to population algorithms");
        }
        Ok(())
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec::of(self.env)
    }

    /// Members per population (per critic for actor-critic runs).
    pub fn population_size(&self) -> usize {
        self.eaude.population_size
    }

    /// Canonical text form of the resolved configuration.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("stored configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Hex SHA-256 of the canonical form.
    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
