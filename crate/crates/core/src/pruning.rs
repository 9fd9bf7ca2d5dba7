//! Binary weight masks, magnitude pruning and the two sparsity schedules:
//! the hand-designed polynomial ramp and the stochastic sampler used when a
//! population member is duplicated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::rng::RngStream;

/// One keep/prune flag per weight, mirroring the weight matrices of a
/// network. `true` keeps the weight. Biases have no entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub layers: Vec<Vec<bool>>,
}

impl Mask {
    pub fn ones(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| vec![true; l.weights.len()])
                .collect(),
        }
    }

    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| vec![false; l.weights.len()])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&k| !k).count())
            .sum()
    }

    /// True when every weight pruned in `self` is also pruned in `other`.
    pub fn is_subset_of_pruned(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| x || !y))
    }
}

/// Fraction of pruned entries over all maskable positions.
pub fn sparsity_of(mask: &Mask) -> f64 {
    let total = mask.len();
    if total == 0 {
        return 0.0;
    }
    mask.zero_count() as f64 / total as f64
}

/// Number of weights pruned in a layer of `count` weights at `target`
/// sparsity (round half up).
pub fn pruned_count(target: f64, count: usize) -> usize {
    let k = (target * count as f64 + 0.5).floor() as usize;
    k.min(count)
}

/// Per-layer magnitude pruning: in every layer the `round(target * n)`
/// smallest-magnitude weights are pruned, ties broken by lowest index.
pub fn magnitude_mask(params: &NetworkParams, target_sparsity: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(Error::Argument(format!(
            "target sparsity {target_sparsity} outside [0, 1]"
        )));
    }
    if !params.all_finite() {
        return Err(Error::Argument("parameters must be finite".into()));
    }
    let layers = params
        .layers
        .iter()
        .map(|layer| {
            let n = layer.weights.len();
            let k = pruned_count(target_sparsity, n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                layer.weights[a]
                    .abs()
                    .total_cmp(&layer.weights[b].abs())
                    .then(a.cmp(&b))
            });
            let mut keep = vec![true; n];
            for &i in &order[..k] {
                keep[i] = false;
            }
            keep
        })
        .collect();
    Ok(Mask { layers })
}

/// Element-wise product on weights; biases untouched.
pub fn apply_mask(params: &NetworkParams, mask: &Mask) -> Result<NetworkParams> {
    let mut out = params.clone();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(params: &mut NetworkParams, mask: &Mask) -> Result<()> {
    params.check_mask(mask)?;
    for (layer, keep) in params.layers.iter_mut().zip(&mask.layers) {
        for (w, &k) in layer.weights.iter_mut().zip(keep) {
            if !k {
                *w = 0.0;
            }
        }
    }
    Ok(())
}

/// Polynomial sparsity ramp from 0 at `t_start` to `final_sparsity` at
/// `t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyPruneConfig {
    pub final_sparsity: f64,
    pub exponent: f64,
    pub t_start: u64,
    pub t_end: u64,
    pub t_final: u64,
    pub pruning_period: u64,
}

impl PolyPruneConfig {
    /// Ramp over `[0.2, 0.8] * t_final` to 0.95 with a cubic exponent.
    pub fn standard(t_final: u64, pruning_period: u64) -> Self {
        Self {
            final_sparsity: 0.95,
            exponent: 3.0,
            t_start: t_final / 5,
            t_end: t_final * 4 / 5,
            t_final,
            pruning_period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.final_sparsity) {
            return Err(Error::Config("final sparsity must be in [0, 1)".into()));
        }
        if !(self.exponent >= 1.0) {
            return Err(Error::Config("polynomial exponent must be >= 1".into()));
        }
        if !(self.t_start < self.t_end && self.t_end <= self.t_final) {
            return Err(Error::Config(
                "require t_start < t_end <= t_final for the pruning ramp".into(),
            ));
        }
        if self.pruning_period == 0 {
            return Err(Error::Config("pruning period must be positive".into()));
        }
        Ok(())
    }
}

/// Target sparsity of the polynomial schedule at step `t`.
pub fn poly_schedule(t: u64, cfg: &PolyPruneConfig) -> f64 {
    let span = (cfg.t_end - cfg.t_start) as f64;
    let progress = ((t as f64 - cfg.t_start as f64) / span).clamp(0.0, 1.0);
    cfg.final_sparsity * (1.0 - (1.0 - progress).powf(cfg.exponent))
}

/// Population and sampler constants of the adaptive method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EauDeConfig {
    pub u_max: f64,
    pub s_max: f64,
    pub population_size: usize,
    pub tournament_size: usize,
    pub t_final: u64,
}

impl EauDeConfig {
    /// `U_max = 3, S_max = 0.01, K = 5, M = 3`.
    pub fn standard(t_final: u64) -> Self {
        Self {
            u_max: 3.0,
            s_max: 0.01,
            population_size: 5,
            tournament_size: 3,
            t_final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_max >= 0.0 && self.u_max.is_finite()) {
            return Err(Error::Config(
                "U_max must be finite and non-negative".into(),
            ));
        }
        if !(self.s_max > 0.0 && self.s_max <= 1.0) {
            return Err(Error::Config("S_max must be in (0, 1]".into()));
        }
        if self.population_size == 0 {
            return Err(Error::Config("population size must be >= 1".into()));
        }
        if self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(Error::Config(format!(
                "tournament size {} must be in 1..={}",
                self.tournament_size, self.population_size
            )));
        }
        if self.t_final == 0 {
            return Err(Error::Config("t_final must be positive".into()));
        }
        Ok(())
    }
}

const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// The sampler with an explicit exploration draw `u`.
pub fn sparsity_step(s_t: f64, t: u64, t_next: u64, cfg: &EauDeConfig, u: f64) -> Result<f64> {
    if t >= cfg.t_final {
        return Err(Error::ScheduleExhausted {
            step: t,
            t_final: cfg.t_final,
        });
    }
    if !(0.0..1.0).contains(&s_t) {
        return Err(Error::Argument(format!(
            "current sparsity {s_t} outside [0, 1)"
        )));
    }
    if t_next <= t {
        return Err(Error::Argument(
            "next event must follow the current step".into(),
        ));
    }
    let remaining = 1.0 - s_t;
    let linear = remaining / (cfg.t_final - t) as f64 * (t_next - t) as f64 * u;
    let cap = remaining * cfg.s_max;
    Ok((s_t + linear.min(cap)).min(BELOW_ONE))
}

/// Samples the sparsity of a duplicated member: a step along the line to
/// full sparsity at `t_final`, scaled by `U ~ Uniform(0, U_max)` and capped at
/// `S_max` of the remaining weights.
pub fn sample_sparsity(
    s_t: f64,
    t: u64,
    t_next: u64,
    cfg: &EauDeConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    if t >= cfg.t_final {
        return Err(Error::ScheduleExhausted {
            step: t,
            t_final: cfg.t_final,
        });
    }
    let u = cfg.u_max * rng.uniform();
    sparsity_step(s_t, t, t_next, cfg, u)
}
