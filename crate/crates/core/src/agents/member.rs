use crate::error::{Error, Result};
use crate::nn::{AdamState, NetworkParams};
use crate::pruning::{apply_mask_in_place, pruned_count, sparsity_of, Mask};

/// One online network of a population with its training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub params: NetworkParams,
    pub mask: Mask,
    pub optimizer: AdamState,
    /// Sum (value-based) or moving average (SAC critics) of batch losses
    /// since the last selection event.
    pub cumulated_loss: f64,
    pub sparsity: f64,
    pub lineage_id: u64,
    /// Lineage this member was duplicated from, if any.
    pub parent_lineage: Option<u64>,
}

impl Member {
    pub fn new(params: NetworkParams, learning_rate: f64, epsilon: f64, lineage_id: u64) -> Self {
        let mask = Mask::ones(&params);
        let optimizer = AdamState::new(&params, learning_rate, epsilon);
        Self {
            params,
            mask,
            optimizer,
            cumulated_loss: 0.0,
            sparsity: 0.0,
            lineage_id,
            parent_lineage: None,
        }
    }

    /// Re-prunes to `target` sparsity by weight magnitude.
    ///
    /// Each layer keeps at least its current pruned set: already pruned
    /// positions rank first, then the smallest magnitudes (ties by index),
    /// so masks are nested and sparsity never decreases. Pruned weights are
    /// zeroed together with their optimizer moments; the optimizer is not
    /// otherwise touched.
    pub fn prune_to(&mut self, target: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Argument(format!(
                "target sparsity {target} outside [0, 1]"
            )));
        }
        for (layer, keep) in self.params.layers.iter().zip(self.mask.layers.iter_mut()) {
            let n = layer.weights.len();
            let already = keep.iter().filter(|&&k| !k).count();
            let k = pruned_count(target, n).max(already);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                keep[a]
                    .cmp(&keep[b])
                    .then(layer.weights[a].abs().total_cmp(&layer.weights[b].abs()))
                    .then(a.cmp(&b))
            });
            keep.iter_mut().for_each(|v| *v = true);
            for &i in &order[..k] {
                keep[i] = false;
            }
        }
        apply_mask_in_place(&mut self.params, &self.mask)?;
        self.optimizer.clear_masked(&self.mask);
        self.sparsity = sparsity_of(&self.mask);
        Ok(())
    }

    /// One masked Adam step on the summed squared TD error. Adds the batch
    /// loss to the cumulated loss and returns it.
    pub fn train_step(
        &mut self,
        inputs: &[f64],
        actions: &[usize],
        targets: &[f64],
    ) -> Result<f64> {
        let (grad, loss) = self.params.backward(&self.mask, inputs, actions, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                layer: self.params.layers.len() - 1,
            });
        }
        self.optimizer.step(&mut self.params, &grad)?;
        self.cumulated_loss += loss;
        Ok(loss)
    }

    /// Checks `sparsity == sparsity_of(mask)` and zero weights under the mask.
    pub fn is_consistent(&self) -> bool {
        self.sparsity == sparsity_of(&self.mask)
            && self.cumulated_loss.is_finite()
            && self
                .params
                .layers
                .iter()
                .zip(&self.mask.layers)
                .all(|(l, keep)| l.weights.iter().zip(keep).all(|(&w, &k)| k || w == 0.0))
    }
}

/// `K` online members sharing one hard-updated target network.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<Member>,
    pub target_params: NetworkParams,
    pub target_mask: Mask,
    /// Slot holding the lineage the target was copied from.
    pub champion: usize,
    pub next_lineage: u64,
}

impl Population {
    /// The target starts as a copy of member 0.
    pub fn new(members: Vec<Member>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("population needs at least one member".into()))?;
        let target_params = first.params.clone();
        let target_mask = first.mask.clone();
        let next_lineage = members.iter().map(|m| m.lineage_id + 1).max().unwrap_or(0);
        Ok(Self {
            members,
            target_params,
            target_mask,
            champion: 0,
            next_lineage,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.cumulated_loss).collect()
    }

    pub fn sparsities(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.sparsity).collect()
    }

    pub fn copy_target_from(&mut self, slot: usize) {
        self.target_params = self.members[slot].params.clone();
        self.target_mask = self.members[slot].mask.clone();
    }

    pub fn reset_losses(&mut self) {
        for m in &mut self.members {
            m.cumulated_loss = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp_specs;
    use crate::rng::RngStream;

    fn member(seed: u64) -> Member {
        let mut rng = RngStream::new(seed, "m");
        let p = NetworkParams::init(&mlp_specs(&[4, 8, 3]), &mut rng).unwrap();
        Member::new(p, 1e-3, 1e-8, 0)
    }

    #[test]
    fn prune_is_nested_and_zeroes() {
        let mut m = member(1);
        m.prune_to(0.3).unwrap();
        let first = m.mask.clone();
        assert!(m.is_consistent());
        m.prune_to(0.31).unwrap();
        assert!(first.is_subset_of_pruned(&m.mask));
        let s = m.sparsity;
        // a lower target never un-prunes
        m.prune_to(0.1).unwrap();
        assert_eq!(m.sparsity, s);
        assert!(m.is_consistent());
    }

    #[test]
    fn pruned_weights_stay_zero_under_training() {
        let mut m = member(2);
        let mut rng = RngStream::new(2, "data");
        for _ in 0..20 {
            let inputs: Vec<f64> = (0..8).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            m.train_step(&inputs, &[0, 2], &[1.0, -1.0]).unwrap();
        }
        m.prune_to(0.5).unwrap();
        for _ in 0..50 {
            let inputs: Vec<f64> = (0..8).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            m.train_step(&inputs, &[1, 2], &[0.5, 2.0]).unwrap();
        }
        assert!(m.is_consistent());
    }
}
