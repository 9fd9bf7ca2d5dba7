//! Soft actor-critic with twin critic populations.
//!
//! The actor is a tanh-squashed Gaussian. Each of the two critics is a
//! population of `K` members, every member with its own soft target.
//! Targets use the current champion of each critic; the actor update uses
//! members drawn from the inverse-loss behavior distribution.

use std::f64::consts::{LN_2, PI};

use rayon::prelude::*;

use super::batch::Batch;
use super::member::Member;
use super::selection::{behavior_distribution, exploitation, exploration, select_target};
use crate::error::{Error, Result};
use crate::nn::{mlp_specs, AdamState, Gradients, LayerSpec, NetworkParams};
use crate::pruning::{poly_schedule, EauDeConfig, Mask, PolyPruneConfig};
use crate::rng::RngStream;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Per-sample quantities of a reparameterized policy draw.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pre_tanh: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
    trace: crate::nn::Trace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub params: NetworkParams,
    pub mask: Mask,
    pub optimizer: AdamState,
    pub action_dim: usize,
    pub low: f64,
    pub high: f64,
}

impl GaussianPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs_width: usize,
        hidden: &[usize],
        action_dim: usize,
        low: f64,
        high: f64,
        learning_rate: f64,
        adam_epsilon: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if !(high > low) {
            return Err(Error::Config(
                "action bounds must satisfy low < high".into(),
            ));
        }
        let mut widths = vec![obs_width];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        let params = NetworkParams::init(&mlp_specs(&widths), rng)?;
        let mask = Mask::ones(&params);
        let optimizer = AdamState::new(&params, learning_rate, adam_epsilon);
        Ok(Self {
            params,
            mask,
            optimizer,
            action_dim,
            low,
            high,
        })
    }

    fn scale(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    fn offset(&self) -> f64 {
        (self.high + self.low) / 2.0
    }

    /// Draws actions for `n` states using the given standard-normal noise
    /// (`n x action_dim`).
    pub fn sample_with_noise(
        &self,
        states: &[f64],
        n: usize,
        noise: &[f64],
    ) -> Result<PolicySample> {
        let d = self.action_dim;
        if noise.len() != n * d {
            return Err(Error::Shape("noise must be n x action_dim".into()));
        }
        let trace = self.params.forward_batch(&self.mask, states, n)?;
        let out = trace.output();
        let (scale, offset) = (self.scale(), self.offset());
        let mut actions = Vec::with_capacity(n * d);
        let mut log_probs = Vec::with_capacity(n);
        let mut pre_tanh = Vec::with_capacity(n * d);
        let mut stds = Vec::with_capacity(n * d);
        let mut clamped = Vec::with_capacity(n * d);
        for j in 0..n {
            let mut logp = 0.0;
            for i in 0..d {
                let mean = out[j * 2 * d + i];
                let raw = out[j * 2 * d + d + i];
                let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let std = log_std.exp();
                let xi = noise[j * d + i];
                let u = mean + std * xi;
                actions.push(scale * u.tanh() + offset);
                logp += -0.5 * xi * xi
                    - log_std
                    - 0.5 * (2.0 * PI).ln()
                    - scale.ln()
                    - log_one_minus_tanh_sq(u);
                pre_tanh.push(u);
                stds.push(std);
                clamped.push(raw != log_std);
            }
            log_probs.push(logp);
        }
        Ok(PolicySample {
            actions,
            log_probs,
            pre_tanh,
            std: stds,
            clamped,
            trace,
        })
    }

    pub fn sample(&self, state: &[f64], rng: &mut RngStream) -> Result<(Vec<f64>, f64)> {
        let noise: Vec<f64> = (0..self.action_dim)
            .map(|_| rng.standard_normal())
            .collect();
        let s = self.sample_with_noise(state, 1, &noise)?;
        Ok((s.actions, s.log_probs[0]))
    }

    /// Deterministic action `tanh(mean)` used for evaluation.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.params.forward(&self.mask, state)?;
        Ok(out[..self.action_dim]
            .iter()
            .map(|&m| self.scale() * m.tanh() + self.offset())
            .collect())
    }

    /// Log-density of an action strictly inside the bounds.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let out = self.params.forward(&self.mask, state)?;
        let d = self.action_dim;
        let (scale, offset) = (self.scale(), self.offset());
        let mut logp = 0.0;
        for i in 0..d {
            let y = (action[i] - offset) / scale;
            if !(y.abs() < 1.0) {
                return Ok(f64::NEG_INFINITY);
            }
            let u = y.atanh();
            let log_std = out[d + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let xi = (u - out[i]) / log_std.exp();
            logp += -0.5 * xi * xi
                - log_std
                - 0.5 * (2.0 * PI).ln()
                - scale.ln()
                - log_one_minus_tanh_sq(u);
        }
        Ok(logp)
    }
}

/// One critic index: `K` members, each with a soft target network.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticPopulation {
    pub members: Vec<Member>,
    pub targets: Vec<NetworkParams>,
    pub champion: usize,
    pub behavior: usize,
    pub next_lineage: u64,
}

impl CriticPopulation {
    pub fn new(
        specs: &[LayerSpec],
        size: usize,
        seed: u64,
        critic: usize,
        learning_rate: f64,
        adam_epsilon: f64,
    ) -> Result<Self> {
        let members = (0..size)
            .map(|k| {
                let mut rng = RngStream::new(seed, format!("critic/{critic}/member/{k}/init"));
                let params = NetworkParams::init(specs, &mut rng)?;
                Ok(Member::new(params, learning_rate, adam_epsilon, k as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = members.iter().map(|m| m.params.clone()).collect();
        Ok(Self {
            members,
            targets,
            champion: 0,
            behavior: 0,
            next_lineage: size as u64,
        })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.cumulated_loss).collect()
    }

    pub fn sparsities(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.sparsity).collect()
    }

    /// Q-values of the champion's target network.
    fn target_q(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let k = self.champion;
        Ok(self.targets[k]
            .forward_batch(&self.members[k].mask, inputs, n)?
            .into_output())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinCritics {
    pub critics: [CriticPopulation; 2],
    pub tau: f64,
    pub alpha: f64,
}

/// `tau * online + (1 - tau) * target`, element-wise.
pub fn soft_update(
    target: &NetworkParams,
    online: &NetworkParams,
    tau: f64,
) -> Result<NetworkParams> {
    let mut out = target.clone();
    soft_update_in_place(&mut out, online, tau)?;
    Ok(out)
}

pub fn soft_update_in_place(
    target: &mut NetworkParams,
    online: &NetworkParams,
    tau: f64,
) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Shape("soft update between different shapes".into()));
    }
    for (t, o) in target.values_mut().zip(online.values()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

pub fn ema_loss_update(loss: f64, batch_loss: f64, tau: f64) -> f64 {
    (1.0 - tau) * loss + tau * batch_loss
}

/// `y = r + gamma * (1 - done) * (min_i Qbar_i(s', a') - alpha * log pi(a'|s'))`
/// with `a' ~ pi(.|s')` and each `Qbar_i` the target of critic `i`'s champion.
pub fn sac_critic_targets(
    twin: &TwinCritics,
    policy: &GaussianPolicy,
    batch: &Batch,
    gamma: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let n = batch.size;
    if n == 0 {
        return Err(Error::Empty("batch".into()));
    }
    let noise: Vec<f64> = (0..n * policy.action_dim)
        .map(|_| rng.standard_normal())
        .collect();
    let next = policy.sample_with_noise(&batch.next_states, n, &noise)?;
    let inputs = Batch::state_action_inputs(&batch.next_states, &next.actions, n);
    let q1 = twin.critics[0].target_q(&inputs, n)?;
    let q2 = twin.critics[1].target_q(&inputs, n)?;
    Ok((0..n)
        .map(|j| {
            if batch.dones[j] {
                batch.rewards[j]
            } else {
                let soft = q1[j].min(q2[j]) - twin.alpha * next.log_probs[j];
                batch.rewards[j] + gamma * soft
            }
        })
        .collect())
}

/// Trains every member of both critics on the shared targets, soft-updates
/// its target, folds the batch loss into its moving-average loss and
/// re-selects each critic's champion.
pub fn critic_step(
    twin: &mut TwinCritics,
    batch: &Batch,
    targets: &[f64],
    step: u64,
    parallel: bool,
) -> Result<[Vec<f64>; 2]> {
    let inputs = Batch::state_action_inputs(&batch.states, &batch.continuous_actions, batch.size);
    let actions = vec![0usize; batch.size];
    let tau = twin.tau;
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, critic) in twin.critics.iter_mut().enumerate() {
        let train = |(k, (m, target)): (usize, (&mut Member, &mut NetworkParams))| -> Result<f64> {
            let (grad, loss) = m
                .params
                .backward(&m.mask, &inputs, &actions, targets)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { member: k, step },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { member: k, step });
            }
            m.optimizer.step(&mut m.params, &grad)?;
            soft_update_in_place(target, &m.params, tau)?;
            m.cumulated_loss = ema_loss_update(m.cumulated_loss, loss, tau);
            Ok(loss)
        };
        let pairs = critic.members.iter_mut().zip(critic.targets.iter_mut());
        let losses: Result<Vec<f64>> = if parallel {
            pairs
                .collect::<Vec<_>>()
                .into_par_iter()
                .enumerate()
                .map(train)
                .collect()
        } else {
            pairs.enumerate().map(train).collect()
        };
        out[i] = losses?;
        critic.champion = select_target(&critic.losses());
    }
    Ok(out)
}

/// Samples each critic's behavior member from its inverse-loss distribution.
pub fn sample_behavior(twin: &mut TwinCritics, rng: &mut RngStream) {
    for critic in twin.critics.iter_mut() {
        critic.behavior = rng.categorical(&behavior_distribution(&critic.losses()));
    }
}

/// Actor objective `mean_j [min(Q1, Q2)(s_j, a_j) - alpha * log pi(a_j|s_j)]`
/// under fixed reparameterization noise.
pub fn actor_objective(
    policy: &GaussianPolicy,
    critics: [(&NetworkParams, &Mask); 2],
    states: &[f64],
    noise: &[f64],
    alpha: f64,
) -> Result<f64> {
    let n = noise.len() / policy.action_dim;
    let sample = policy.sample_with_noise(states, n, noise)?;
    let inputs = Batch::state_action_inputs(states, &sample.actions, n);
    let q1 = critics[0]
        .0
        .forward_batch(critics[0].1, &inputs, n)?
        .into_output();
    let q2 = critics[1]
        .0
        .forward_batch(critics[1].1, &inputs, n)?
        .into_output();
    Ok((0..n)
        .map(|j| q1[j].min(q2[j]) - alpha * sample.log_probs[j])
        .sum::<f64>()
        / n as f64)
}

/// Gradient of the negated actor objective with respect to the policy
/// parameters, and the objective value.
pub fn actor_loss_gradient(
    policy: &GaussianPolicy,
    critics: [(&NetworkParams, &Mask); 2],
    states: &[f64],
    noise: &[f64],
    alpha: f64,
) -> Result<(Gradients, f64)> {
    let d = policy.action_dim;
    let n = noise.len() / d;
    let sample = policy.sample_with_noise(states, n, noise)?;
    let inputs = Batch::state_action_inputs(states, &sample.actions, n);
    let obs_width = states.len() / n;
    let traces = [
        critics[0].0.forward_batch(critics[0].1, &inputs, n)?,
        critics[1].0.forward_batch(critics[1].1, &inputs, n)?,
    ];
    let (q1, q2) = (traces[0].output(), traces[1].output());
    let inv_n = 1.0 / n as f64;
    let mut objective = 0.0;
    let mut dq_da = vec![0.0; n * d];
    let mut selectors = [vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        let c = if q2[j] < q1[j] { 1 } else { 0 };
        selectors[c][j] = inv_n;
        objective += q1[j].min(q2[j]) - alpha * sample.log_probs[j];
    }
    for c in 0..2 {
        if selectors[c].iter().all(|&v| v == 0.0) {
            continue;
        }
        let (_, input_grad) = critics[c]
            .0
            .backprop(critics[c].1, &traces[c], &selectors[c])?;
        let width = obs_width + d;
        for j in 0..n {
            for i in 0..d {
                dq_da[j * d + i] += input_grad[j * width + obs_width + i];
            }
        }
    }
    let scale = policy.scale();
    let mut dout = vec![0.0; n * 2 * d];
    for j in 0..n {
        for i in 0..d {
            let idx = j * d + i;
            let u = sample.pre_tanh[idx];
            let th = u.tanh();
            let dj_du = dq_da[idx] * scale * (1.0 - th * th) - alpha * inv_n * 2.0 * th;
            dout[j * 2 * d + i] = -dj_du;
            if !sample.clamped[idx] {
                let xi = noise[idx];
                let dj_dlog_std = dj_du * sample.std[idx] * xi + alpha * inv_n;
                dout[j * 2 * d + d + i] = -dj_dlog_std;
            }
        }
    }
    let (grad, _) = policy.params.backprop(&policy.mask, &sample.trace, &dout)?;
    Ok((grad, objective * inv_n))
}

/// One gradient-ascent step on the actor objective against the critics'
/// current behavior members. Critics are not modified.
pub fn sac_actor_update(
    policy: &mut GaussianPolicy,
    twin: &TwinCritics,
    batch: &Batch,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let noise: Vec<f64> = (0..batch.size * policy.action_dim)
        .map(|_| rng.standard_normal())
        .collect();
    let c1 = &twin.critics[0].members[twin.critics[0].behavior];
    let c2 = &twin.critics[1].members[twin.critics[1].behavior];
    let (grad, objective) = actor_loss_gradient(
        policy,
        [(&c1.params, &c1.mask), (&c2.params, &c2.mask)],
        &batch.states,
        &noise,
        alpha,
    )?;
    let GaussianPolicy {
        params, optimizer, ..
    } = policy;
    optimizer.step(params, &grad)?;
    Ok(objective)
}

/// Per-critic exploitation and exploration. Duplicated members restart
/// their soft target from the pruned copy; all moving-average losses are
/// reset.
pub fn eaudesac_prune_event(
    twin: &mut TwinCritics,
    t: u64,
    t_next: u64,
    cfg: &EauDeConfig,
    rng: &mut RngStream,
) -> Result<[(Vec<usize>, Vec<bool>); 2]> {
    let mut reports: [(Vec<usize>, Vec<bool>); 2] = Default::default();
    for (i, critic) in twin.critics.iter_mut().enumerate() {
        let losses = critic.losses();
        let champion = select_target(&losses);
        let selection = exploitation(&losses, champion, cfg, rng)?;
        let (members, report) = exploration(
            &critic.members,
            &selection,
            t,
            t_next,
            cfg,
            rng,
            &mut critic.next_lineage,
        )?;
        let targets = selection
            .iter()
            .zip(&report.duplicated)
            .zip(&members)
            .map(|((&src, &dup), m)| {
                if dup {
                    m.params.clone()
                } else {
                    critic.targets[src].clone()
                }
            })
            .collect();
        critic.members = members;
        critic.targets = targets;
        critic.champion = 0;
        critic.behavior = 0;
        reports[i] = (selection, report.duplicated);
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SacMethod {
    Dense,
    PolyPrune(PolyPruneConfig),
    EauDe(EauDeConfig),
}

impl SacMethod {
    pub fn population_size(&self) -> usize {
        match self {
            SacMethod::EauDe(cfg) => cfg.population_size,
            _ => 1,
        }
    }
}

/// Actor, twin critic populations and the method-specific pruning.
#[derive(Clone, Debug, PartialEq)]
pub struct SacAgent {
    pub method: SacMethod,
    pub policy: GaussianPolicy,
    pub twin: TwinCritics,
    pub gamma: f64,
}

pub struct SacHyper<'a> {
    pub obs_width: usize,
    pub action_dim: usize,
    pub low: f64,
    pub high: f64,
    pub actor_hidden: &'a [usize],
    pub critic_hidden: &'a [usize],
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl SacAgent {
    pub fn new(method: SacMethod, hyper: &SacHyper<'_>, seed: u64) -> Result<Self> {
        match &method {
            SacMethod::EauDe(cfg) => cfg.validate()?,
            SacMethod::PolyPrune(cfg) => cfg.validate()?,
            SacMethod::Dense => {}
        }
        let mut rng = RngStream::new(seed, "actor/init");
        let policy = GaussianPolicy::new(
            hyper.obs_width,
            hyper.actor_hidden,
            hyper.action_dim,
            hyper.low,
            hyper.high,
            hyper.learning_rate,
            hyper.adam_epsilon,
            &mut rng,
        )?;
        let mut widths = vec![hyper.obs_width + hyper.action_dim];
        widths.extend_from_slice(hyper.critic_hidden);
        widths.push(1);
        let specs = mlp_specs(&widths);
        let k = method.population_size();
        let critics = [
            CriticPopulation::new(&specs, k, seed, 1, hyper.learning_rate, hyper.adam_epsilon)?,
            CriticPopulation::new(&specs, k, seed, 2, hyper.learning_rate, hyper.adam_epsilon)?,
        ];
        Ok(Self {
            method,
            policy,
            twin: TwinCritics {
                critics,
                tau: hyper.tau,
                alpha: hyper.alpha,
            },
            gamma: hyper.gamma,
        })
    }

    /// One update: critic targets, critic pass, behavior sampling, actor step.
    pub fn update(
        &mut self,
        batch: &Batch,
        step: u64,
        parallel: bool,
        target_rng: &mut RngStream,
        behavior_rng: &mut RngStream,
        actor_rng: &mut RngStream,
    ) -> Result<[Vec<f64>; 2]> {
        let targets = sac_critic_targets(&self.twin, &self.policy, batch, self.gamma, target_rng)?;
        let losses = critic_step(&mut self.twin, batch, &targets, step, parallel)?;
        if matches!(self.method, SacMethod::EauDe(_)) {
            sample_behavior(&mut self.twin, behavior_rng);
        }
        let alpha = self.twin.alpha;
        sac_actor_update(&mut self.policy, &self.twin, batch, alpha, actor_rng)?;
        Ok(losses)
    }

    /// Polynomial pruning of the (single) critic members.
    pub fn scheduled_prune(&mut self, t: u64) -> Result<Option<f64>> {
        match self.method {
            SacMethod::PolyPrune(cfg) if t.is_multiple_of(cfg.pruning_period) => {
                let target = poly_schedule(t, &cfg);
                for critic in self.twin.critics.iter_mut() {
                    critic.members[0].prune_to(target)?;
                }
                Ok(Some(target))
            }
            _ => Ok(None),
        }
    }

    pub fn champion_sparsity(&self) -> [f64; 2] {
        [0, 1].map(|i| {
            let c = &self.twin.critics[i];
            c.members[c.champion].sparsity
        })
    }
}
