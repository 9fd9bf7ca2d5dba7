//! Desk-scale environments and the tabular value-iteration oracle.
//!
//! * `chain`: 10 states in a row, start at 0, actions {left, right}; moving
//!   right from state 8 enters the terminal state 9 with reward 1.
//! * `gridworld`: 5x5 grid, start (0,0), terminal goal (4,4) with reward 1,
//!   moves into walls leave the agent in place.
//! * `cartpole`: classic cart-pole, Euler integration with `dt = 0.02`.
//! * `pendulum`: torque-limited swing-up, observed as `(cos, sin, velocity)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const CHAIN_LENGTH: usize = 10;
pub const GRID_SIDE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Chain,
    Gridworld,
    Cartpole,
    Pendulum,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::Chain => "chain",
            EnvId::Gridworld => "gridworld",
            EnvId::Cartpole => "cartpole",
            EnvId::Pendulum => "pendulum",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EnvId::Chain => 0,
            EnvId::Gridworld => 1,
            EnvId::Cartpole => 2,
            EnvId::Pendulum => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [
            EnvId::Chain,
            EnvId::Gridworld,
            EnvId::Cartpole,
            EnvId::Pendulum,
        ]
        .into_iter()
        .find(|e| e.code() == code)
    }

    pub fn is_tabular(self) -> bool {
        matches!(self, EnvId::Chain | EnvId::Gridworld)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(EnvId::Chain),
            "gridworld" => Ok(EnvId::Gridworld),
            "cartpole" => Ok(EnvId::Cartpole),
            "pendulum" => Ok(EnvId::Pendulum),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    pub fn width(&self) -> usize {
        match *self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub observation_width: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub discount: f64,
}

impl EnvSpec {
    pub fn of(id: EnvId) -> Self {
        let (observation_width, action_space, horizon) = match id {
            EnvId::Chain => (CHAIN_LENGTH, ActionSpace::Discrete(2), 50),
            EnvId::Gridworld => (GRID_SIDE * GRID_SIDE, ActionSpace::Discrete(4), 100),
            EnvId::Cartpole => (4, ActionSpace::Discrete(2), 500),
            EnvId::Pendulum => (
                3,
                ActionSpace::Continuous {
                    dim: 1,
                    low: -pendulum::MAX_TORQUE,
                    high: pendulum::MAX_TORQUE,
                },
                200,
            ),
        };
        Self {
            id,
            observation_width,
            action_space,
            horizon,
            discount: 0.99,
        }
    }

    pub fn discrete_actions(&self) -> Option<usize> {
        match self.action_space {
            ActionSpace::Discrete(n) => Some(n),
            ActionSpace::Continuous { .. } => None,
        }
    }
}

/// One environment interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True termination only; horizon cut-offs are not terminal.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The horizon was reached without termination.
    pub truncated: bool,
}

/// A live environment instance. `state` holds the raw physical or tabular
/// state (not the observation).
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    state: Vec<f64>,
    elapsed: usize,
}

fn one_hot(index: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    v
}

impl Env {
    pub fn new(id: EnvId) -> Self {
        let spec = EnvSpec::of(id);
        let mut env = Self {
            spec,
            state: Vec::new(),
            elapsed: 0,
        };
        env.state = env.initial_state_fixed();
        env
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn initial_state_fixed(&self) -> Vec<f64> {
        match self.spec.id {
            EnvId::Chain | EnvId::Gridworld => vec![0.0],
            EnvId::Cartpole => vec![0.0; 4],
            EnvId::Pendulum => vec![0.0; 2],
        }
    }

    pub fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        self.elapsed = 0;
        self.state = match self.spec.id {
            EnvId::Chain | EnvId::Gridworld => vec![0.0],
            EnvId::Cartpole => (0..4).map(|_| rng.uniform_range(-0.05, 0.05)).collect(),
            EnvId::Pendulum => vec![rng.uniform_range(-PI, PI), rng.uniform_range(-1.0, 1.0)],
        };
        self.observation()
    }

    /// Raw state, elapsed steps. Used for checkpoints and tests.
    pub fn raw_state(&self) -> (&[f64], usize) {
        (&self.state, self.elapsed)
    }

    pub fn set_raw_state(&mut self, state: Vec<f64>, elapsed: usize) -> Result<()> {
        if state.len() != self.initial_state_fixed().len() {
            return Err(Error::Shape("raw state width".into()));
        }
        self.state = state;
        self.elapsed = elapsed;
        Ok(())
    }

    pub fn observation(&self) -> Vec<f64> {
        match self.spec.id {
            EnvId::Chain | EnvId::Gridworld => {
                one_hot(self.state[0] as usize, self.spec.observation_width)
            }
            EnvId::Cartpole => self.state.clone(),
            EnvId::Pendulum => {
                let (theta, velocity) = (self.state[0], self.state[1]);
                vec![theta.cos(), theta.sin(), velocity]
            }
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let (reward, done) = match (self.spec.id, action) {
            (EnvId::Chain | EnvId::Gridworld, Action::Discrete(a)) => {
                let model = tabular_step(self.spec.id, self.state[0] as usize, *a)?;
                self.state[0] = model.next_state as f64;
                (model.reward, model.done)
            }
            (EnvId::Cartpole, Action::Discrete(a)) => {
                if *a >= 2 {
                    return Err(Error::Argument(format!(
                        "cart-pole action {a} out of range"
                    )));
                }
                cartpole::step(&mut self.state, *a)
            }
            (EnvId::Pendulum, Action::Continuous(u)) => {
                if u.len() != 1 || !u[0].is_finite() {
                    return Err(Error::Argument(format!("invalid pendulum torque {u:?}")));
                }
                (pendulum::step(&mut self.state, u[0]), false)
            }
            (id, a) => {
                return Err(Error::Argument(format!(
                    "action {a:?} does not fit the {id} action space"
                )))
            }
        };
        self.elapsed += 1;
        let truncated = !done && self.elapsed >= self.spec.horizon;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done,
            truncated,
        })
    }
}

pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const ANGLE_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
    pub const POSITION_LIMIT: f64 = 2.4;

    /// Advances `[x, x_dot, theta, theta_dot]` one Euler step. Returns
    /// `(reward, done)`.
    pub fn step(state: &mut [f64], action: usize) -> (f64, bool) {
        let total_mass = CART_MASS + POLE_MASS;
        let pole_moment = POLE_MASS * HALF_LENGTH;
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let force = if action == 1 { FORCE } else { -FORCE };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        state[0] = x + DT * x_dot;
        state[1] = x_dot + DT * x_acc;
        state[2] = theta + DT * theta_dot;
        state[3] = theta_dot + DT * theta_acc;
        let done = state[0].abs() > POSITION_LIMIT || state[2].abs() > ANGLE_LIMIT;
        (1.0, done)
    }
}

pub mod pendulum {
    use std::f64::consts::PI;

    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const MAX_SPEED: f64 = 8.0;

    pub fn normalize_angle(theta: f64) -> f64 {
        (theta + PI).rem_euclid(2.0 * PI) - PI
    }

    /// Advances `[theta, theta_dot]` (0 = upright) one step; returns the
    /// reward of the pre-step state and clipped torque.
    pub fn step(state: &mut [f64], torque: f64) -> f64 {
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        let (theta, velocity) = (state[0], state[1]);
        let angle = normalize_angle(theta);
        let cost = angle * angle + 0.1 * velocity * velocity + 0.001 * u * u;
        let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let new_velocity = (velocity + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        state[0] = theta + new_velocity * DT;
        state[1] = new_velocity;
        -cost
    }
}

/// Deterministic transition of a tabular environment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularStep {
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
}

pub fn tabular_dims(id: EnvId) -> Result<(usize, usize)> {
    match id {
        EnvId::Chain => Ok((CHAIN_LENGTH, 2)),
        EnvId::Gridworld => Ok((GRID_SIDE * GRID_SIDE, 4)),
        other => Err(Error::Unsupported(format!("{other} is not tabular"))),
    }
}

pub fn is_terminal(id: EnvId, state: usize) -> bool {
    match id {
        EnvId::Chain => state == CHAIN_LENGTH - 1,
        EnvId::Gridworld => state == GRID_SIDE * GRID_SIDE - 1,
        _ => false,
    }
}

pub fn tabular_step(id: EnvId, state: usize, action: usize) -> Result<TabularStep> {
    let (n_states, n_actions) = tabular_dims(id)?;
    if action >= n_actions {
        return Err(Error::Argument(format!(
            "action {action} out of range for {id}"
        )));
    }
    if state >= n_states {
        return Err(Error::Argument(format!(
            "state {state} out of range for {id}"
        )));
    }
    let next_state = match id {
        EnvId::Chain => match action {
            0 => state.saturating_sub(1),
            _ => (state + 1).min(CHAIN_LENGTH - 1),
        },
        _ => {
            let (row, col) = (state / GRID_SIDE, state % GRID_SIDE);
            let (row, col) = match action {
                0 => (row.saturating_sub(1), col),
                1 => ((row + 1).min(GRID_SIDE - 1), col),
                2 => (row, col.saturating_sub(1)),
                _ => (row, (col + 1).min(GRID_SIDE - 1)),
            };
            row * GRID_SIDE + col
        }
    };
    let done = is_terminal(id, next_state);
    Ok(TabularStep {
        next_state,
        reward: if done { 1.0 } else { 0.0 },
        done,
    })
}

/// Optimal action values of a tabular environment.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    /// Actions whose value is within `tol` of the best one.
    pub fn optimal_actions(&self, state: usize, tol: f64) -> Vec<usize> {
        let row = self.row(state);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.n_actions)
            .filter(|&a| row[a] >= best - tol)
            .collect()
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Iterates the Bellman optimality operator until the max-norm residual is
/// below `tolerance`. Terminal states hold value 0.
pub fn value_iteration(id: EnvId, discount: f64, tolerance: f64) -> Result<QTable> {
    let (n_states, n_actions) = tabular_dims(id)?;
    let mut model = Vec::with_capacity(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            model.push(tabular_step(id, s, a)?);
        }
    }
    let mut q = vec![0.0; n_states * n_actions];
    loop {
        let v: Vec<f64> = (0..n_states)
            .map(|s| {
                if is_terminal(id, s) {
                    0.0
                } else {
                    q[s * n_actions..(s + 1) * n_actions]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let mut residual: f64 = 0.0;
        for s in 0..n_states {
            for a in 0..n_actions {
                let idx = s * n_actions + a;
                let new = if is_terminal(id, s) {
                    0.0
                } else {
                    let m = model[idx];
                    let bootstrap = if m.done { 0.0 } else { v[m.next_state] };
                    m.reward + discount * bootstrap
                };
                residual = residual.max((new - q[idx]).abs());
                q[idx] = new;
            }
        }
        if residual < tolerance {
            break;
        }
    }
    Ok(QTable {
        n_states,
        n_actions,
        values: q,
    })
}

/// Random-policy and reference scores used to normalize raw returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub random: f64,
    pub reference: f64,
}

pub fn normalized_return(raw: f64, baselines: &Baselines) -> Result<f64> {
    let span = baselines.reference - baselines.random;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::Config(format!(
            "degenerate normalization baselines {baselines:?}"
        )));
    }
    Ok((raw - baselines.random) / span)
}

/// Samples a uniformly random action.
pub fn random_action(spec: &EnvSpec, rng: &mut RngStream) -> Action {
    match spec.action_space {
        ActionSpace::Discrete(n) => Action::Discrete(rng.index(n)),
        ActionSpace::Continuous { dim, low, high } => {
            Action::Continuous((0..dim).map(|_| rng.uniform_range(low, high)).collect())
        }
    }
}

/// Runs one episode (up to the horizon) and returns the undiscounted return.
pub fn rollout(
    env: &mut Env,
    rng: &mut RngStream,
    mut policy: impl FnMut(&[f64], &mut RngStream) -> Action,
) -> Result<f64> {
    let mut obs = env.reset(rng);
    let mut total = 0.0;
    loop {
        let action = policy(&obs, rng);
        let out = env.step(&action)?;
        total += out.reward;
        if out.done || out.truncated {
            return Ok(total);
        }
        obs = out.observation;
    }
}

/// Mean return of the uniform random policy over `episodes` episodes.
pub fn random_policy_return(id: EnvId, episodes: usize, rng: &mut RngStream) -> Result<f64> {
    let mut env = Env::new(id);
    let spec = *env.spec();
    let mut sum = 0.0;
    for _ in 0..episodes {
        sum += rollout(&mut env, rng, |_, r| random_action(&spec, r))?;
    }
    Ok(sum / episodes as f64)
}

/// Return of the value-iteration greedy policy (tabular environments only).
pub fn optimal_return(id: EnvId) -> Result<f64> {
    let spec = EnvSpec::of(id);
    let table = value_iteration(id, spec.discount, 1e-12)?;
    let mut env = Env::new(id);
    let mut rng = RngStream::new(0, "optimal-return");
    rollout(&mut env, &mut rng, |obs, _| {
        Action::Discrete(table.greedy(argmax(obs)))
    })
}

/// Default normalization baselines: Monte-Carlo uniform-policy return and
/// a reference score (value-iteration greedy return on tabular
/// environments, the horizon cap on cart-pole, and a typical converged
/// swing-up score on the pendulum).
pub fn default_baselines(id: EnvId, seed: u64) -> Result<Baselines> {
    let mut rng = RngStream::new(seed, "baselines/random");
    let random = random_policy_return(id, 10_000, &mut rng)?;
    let reference = match id {
        EnvId::Chain | EnvId::Gridworld => optimal_return(id)?,
        EnvId::Cartpole => EnvSpec::of(id).horizon as f64,
        EnvId::Pendulum => -150.0,
    };
    Ok(Baselines { random, reference })
}
