//! Population selection: target choice, behavior sampling, tournament
//! exploitation and pruning exploration.

use super::member::Member;
use crate::error::{Error, Result};
use crate::pruning::{sample_sparsity, EauDeConfig};
use crate::rng::RngStream;

/// Loss clamp below which a member counts as loss-free.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Sampling probabilities inversely proportional to the cumulated losses.
/// Uniform when every loss is below [`LOSS_FLOOR`].
pub fn behavior_distribution(losses: &[f64]) -> Vec<f64> {
    let k = losses.len();
    if k == 0 {
        return Vec::new();
    }
    if losses.iter().all(|&l| l < LOSS_FLOOR) {
        return vec![1.0 / k as f64; k];
    }
    let inverse: Vec<f64> = losses.iter().map(|&l| 1.0 / l.max(LOSS_FLOOR)).collect();
    let total: f64 = inverse.iter().sum();
    inverse.into_iter().map(|w| w / total).collect()
}

/// Index of the smallest cumulated loss; ties go to the lowest index.
pub fn select_target(losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate().skip(1) {
        if l < losses[best] {
            best = i;
        }
    }
    best
}

fn tournament_winner(losses: &[f64], entrants: &[usize]) -> usize {
    let mut best = entrants[0];
    for &i in &entrants[1..] {
        if losses[i] < losses[best] || (losses[i] == losses[best] && i < best) {
            best = i;
        }
    }
    best
}

/// Exploitation with explicit tournament draws (one entry per slot after
/// the reserved champion slot).
pub fn exploitation_with_draws(
    losses: &[f64],
    champion: usize,
    draws: &[Vec<usize>],
) -> Vec<usize> {
    let mut selection = Vec::with_capacity(draws.len() + 1);
    selection.push(champion);
    selection.extend(draws.iter().map(|d| tournament_winner(losses, d)));
    selection
}

/// Selects `K` source indices with repetition: slot 0 is the champion and
/// every other slot is the lowest-loss entrant of `M` members drawn without
/// replacement.
pub fn exploitation(
    losses: &[f64],
    champion: usize,
    cfg: &EauDeConfig,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let k = losses.len();
    if cfg.tournament_size == 0 || cfg.tournament_size > k {
        return Err(Error::Config(format!(
            "tournament size {} must be in 1..={k}",
            cfg.tournament_size
        )));
    }
    if champion >= k {
        return Err(Error::Argument(format!("champion {champion} out of range")));
    }
    let draws: Vec<Vec<usize>> = (1..k)
        .map(|_| rng.distinct_indices(k, cfg.tournament_size))
        .collect();
    Ok(exploitation_with_draws(losses, champion, &draws))
}

/// What happened to each slot during exploration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationReport {
    pub sources: Vec<usize>,
    /// `true` where the slot holds a freshly pruned duplicate.
    pub duplicated: Vec<bool>,
}

/// Builds the next population from a selection.
///
/// First occurrences of a source move in untouched. Later occurrences are
/// duplicates: they copy the source network, get an independently sampled
/// higher sparsity, a reset optimizer and a fresh lineage id. Once the
/// sampling horizon is exhausted duplicates keep the source sparsity. All
/// cumulated losses are reset to zero.
#[allow(clippy::too_many_arguments)]
pub fn exploration(
    members: &[Member],
    selection: &[usize],
    t: u64,
    t_next: u64,
    cfg: &EauDeConfig,
    rng: &mut RngStream,
    next_lineage: &mut u64,
) -> Result<(Vec<Member>, ExplorationReport)> {
    if selection.len() != members.len() {
        return Err(Error::Argument(
            "selection must have one entry per member".into(),
        ));
    }
    let mut seen = vec![false; members.len()];
    let mut next = Vec::with_capacity(members.len());
    let mut duplicated = Vec::with_capacity(members.len());
    for &src in selection {
        let source = members
            .get(src)
            .ok_or_else(|| Error::Argument(format!("selection index {src} out of range")))?;
        let mut member = source.clone();
        if !seen[src] {
            seen[src] = true;
            duplicated.push(false);
        } else {
            let target =
                match sample_sparsity(source.sparsity, t, t_next.min(cfg.t_final), cfg, rng) {
                    Ok(s) => s,
                    Err(Error::ScheduleExhausted { .. }) => source.sparsity,
                    Err(e) => return Err(e),
                };
            member.prune_to(target)?;
            member.optimizer.reset();
            member.parent_lineage = Some(source.lineage_id);
            member.lineage_id = *next_lineage;
            *next_lineage += 1;
            duplicated.push(true);
        }
        member.cumulated_loss = 0.0;
        next.push(member);
    }
    Ok((
        next,
        ExplorationReport {
            sources: selection.to_vec(),
            duplicated,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_specs, NetworkParams};
    use proptest::prelude::*;

    #[test]
    fn behavior_probabilities() {
        assert_eq!(behavior_distribution(&[2.0, 2.0, 2.0, 2.0]), vec![0.25; 4]);
        let p = behavior_distribution(&[1.0, 3.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert_eq!(behavior_distribution(&[0.0, 0.0, 0.0]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn behavior_zero_loss_member_dominates() {
        let p = behavior_distribution(&[0.0, 1.0]);
        assert!(p[0] > 0.999_999);
    }

    #[test]
    fn target_selection() {
        assert_eq!(select_target(&[0.3, 0.1, 0.2]), 1);
        assert_eq!(select_target(&[7.0]), 0);
        assert_eq!(select_target(&[0.5, 0.5]), 0);
    }

    #[test]
    fn tournament_trace() {
        let losses = [0.1, 0.2, 0.3, 0.4, 0.5];
        let draws = vec![vec![1, 2, 3], vec![0, 4, 2], vec![3, 4, 1], vec![2, 3, 4]];
        assert_eq!(
            exploitation_with_draws(&losses, 0, &draws),
            vec![0, 1, 0, 1, 2]
        );
    }

    #[test]
    fn exhaustive_tournament_is_all_champion() {
        let cfg = EauDeConfig {
            tournament_size: 4,
            population_size: 4,
            ..EauDeConfig::standard(100)
        };
        let losses = [0.4, 0.2, 0.9, 0.3];
        let mut rng = RngStream::new(0, "exploitation");
        for _ in 0..20 {
            assert_eq!(
                exploitation(&losses, 1, &cfg, &mut rng).unwrap(),
                vec![1, 1, 1, 1]
            );
        }
        let single = EauDeConfig {
            tournament_size: 1,
            population_size: 1,
            ..cfg
        };
        assert_eq!(exploitation(&[3.0], 0, &single, &mut rng).unwrap(), vec![0]);
    }

    #[test]
    fn oversized_tournament_rejected() {
        let cfg = EauDeConfig {
            tournament_size: 4,
            ..EauDeConfig::standard(100)
        };
        let mut rng = RngStream::new(0, "x");
        assert!(matches!(
            exploitation(&[1.0, 2.0], 0, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    fn population(k: usize) -> Vec<Member> {
        (0..k)
            .map(|i| {
                let mut rng = RngStream::new(i as u64, "init");
                let p = NetworkParams::init(&mlp_specs(&[3, 16, 2]), &mut rng).unwrap();
                let mut m = Member::new(p, 1e-3, 1e-8, i as u64);
                m.cumulated_loss = 1.0 + i as f64;
                m.optimizer.step_count = 10 + i as u64;
                m
            })
            .collect()
    }

    #[test]
    fn distinct_selection_only_resets_losses() {
        let members = population(3);
        let cfg = EauDeConfig::standard(1000);
        let mut rng = RngStream::new(0, "exploration");
        let mut next_id = 3;
        let (next, report) =
            exploration(&members, &[2, 0, 1], 10, 20, &cfg, &mut rng, &mut next_id).unwrap();
        assert_eq!(report.duplicated, vec![false; 3]);
        for (slot, src) in [(0, 2), (1, 0), (2, 1)] {
            let mut expected = members[src].clone();
            expected.cumulated_loss = 0.0;
            assert_eq!(next[slot], expected);
        }
        assert_eq!(next_id, 3);
    }

    #[test]
    fn all_champion_selection() {
        let members = population(4);
        let cfg = EauDeConfig::standard(1000);
        let mut rng = RngStream::new(1, "exploration");
        let mut next_id = 4;
        let (next, report) = exploration(
            &members,
            &[1, 1, 1, 1],
            100,
            150,
            &cfg,
            &mut rng,
            &mut next_id,
        )
        .unwrap();
        assert_eq!(report.duplicated, vec![false, true, true, true]);
        let mut champion = members[1].clone();
        champion.cumulated_loss = 0.0;
        assert_eq!(next[0], champion);
        for m in &next[1..] {
            assert!(m.sparsity >= members[1].sparsity);
            assert_eq!(m.optimizer.step_count, 0);
            assert_eq!(m.parent_lineage, Some(1));
            assert_eq!(m.cumulated_loss, 0.0);
            assert!(m.is_consistent());
        }
        let ids: Vec<u64> = next.iter().map(|m| m.lineage_id).collect();
        assert_eq!(ids, vec![1, 4, 5, 6]);
    }

    #[test]
    fn zero_draw_keeps_sparsity_but_resets_optimizer() {
        let members = population(2);
        let cfg = EauDeConfig {
            u_max: 0.0,
            population_size: 2,
            tournament_size: 2,
            ..EauDeConfig::standard(1000)
        };
        let mut rng = RngStream::new(2, "exploration");
        let mut next_id = 2;
        let (next, _) =
            exploration(&members, &[0, 0], 0, 10, &cfg, &mut rng, &mut next_id).unwrap();
        assert_eq!(next[1].sparsity, members[0].sparsity);
        assert_eq!(next[1].optimizer.step_count, 0);
        assert_eq!(next[1].cumulated_loss, 0.0);
    }

    proptest! {
        #[test]
        fn argmin_matches_scan(losses in prop::collection::vec(0.0f64..10.0, 1..12)) {
            let idx = select_target(&losses);
            let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
            let first = losses.iter().position(|&l| l == min).unwrap();
            prop_assert_eq!(idx, first);
        }

        #[test]
        fn argmin_scale_invariant(losses in prop::collection::vec(0.0f64..10.0, 1..12), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = losses.iter().map(|l| l * c).collect();
            prop_assert_eq!(select_target(&scaled), select_target(&losses));
        }

        #[test]
        fn behavior_is_distribution(losses in prop::collection::vec(0.0f64..10.0, 1..12)) {
            let p = behavior_distribution(&losses);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
