use crate::envs::{Action, Transition};

/// A minibatch laid out as flat row-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs_width: usize,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Discrete action indices (empty for continuous batches).
    pub discrete_actions: Vec<usize>,
    /// Continuous actions, `size x action_width` (empty for discrete).
    pub continuous_actions: Vec<f64>,
    pub action_width: usize,
}

impl Batch {
    pub fn from_transitions(transitions: &[&Transition]) -> Self {
        let size = transitions.len();
        let obs_width = transitions.first().map_or(0, |t| t.state.len());
        let mut batch = Self {
            size,
            obs_width,
            states: Vec::with_capacity(size * obs_width),
            next_states: Vec::with_capacity(size * obs_width),
            rewards: Vec::with_capacity(size),
            dones: Vec::with_capacity(size),
            discrete_actions: Vec::new(),
            continuous_actions: Vec::new(),
            action_width: 0,
        };
        for t in transitions {
            batch.states.extend_from_slice(&t.state);
            batch.next_states.extend_from_slice(&t.next_state);
            batch.rewards.push(t.reward);
            batch.dones.push(t.done);
            match &t.action {
                Action::Discrete(a) => {
                    batch.discrete_actions.push(*a);
                    batch.action_width = 1;
                }
                Action::Continuous(v) => {
                    batch.continuous_actions.extend_from_slice(v);
                    batch.action_width = v.len();
                }
            }
        }
        batch
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.obs_width..(j + 1) * self.obs_width]
    }

    /// Concatenates each state with a continuous action: the critic input.
    pub fn state_action_inputs(states: &[f64], actions: &[f64], size: usize) -> Vec<f64> {
        let obs_width = states.len() / size.max(1);
        let action_width = actions.len() / size.max(1);
        let mut out = Vec::with_capacity(size * (obs_width + action_width));
        for j in 0..size {
            out.extend_from_slice(&states[j * obs_width..(j + 1) * obs_width]);
            out.extend_from_slice(&actions[j * action_width..(j + 1) * action_width]);
        }
        out
    }
}
