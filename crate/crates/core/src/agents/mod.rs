//! The algorithm layer: population members and their selection mechanics,
//! the DQN family (dense, polynomial pruning, distillation pruning, the
//! adaptive population variant) and SAC with twin critic populations.

mod batch;
mod member;
pub mod sac;
pub mod selection;
pub mod value;

pub use batch::Batch;
pub use member::{Member, Population};
pub use sac::{CriticPopulation, GaussianPolicy, SacAgent, SacHyper, SacMethod, TwinCritics};
pub use selection::{
    behavior_distribution, exploitation, exploitation_with_draws, exploration, select_target,
    ExplorationReport,
};
pub use value::{
    act_epsilon_greedy, distillqn_update, epsilon_at, td_targets, AgentEvent, ValueAgent,
    ValueMethod,
};
