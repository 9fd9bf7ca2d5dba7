//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use sparseq::agents::{exploitation, select_target, AgentEvent};
use sparseq::envs::Baselines;
use sparseq::envs::{random_policy_return, EnvId, EnvSpec};
use sparseq::harness::{
    aggregate_runs, decode_checkpoint, encode_checkpoint, iqm, matches_value_iteration,
    run_training, trimmed_mean, Agent, Algorithm, ExperimentConfig, LogLayout, LogRecord, RunLog,
    Trainer,
};
use sparseq::nn::{Activation, LayerSpec, NetworkParams};
use sparseq::pruning::{
    magnitude_mask, poly_schedule, sample_sparsity, EauDeConfig, PolyPruneConfig,
};
use sparseq::rng::RngStream;
use sparseq::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn config(text: &str, seed: u64) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(text, Some(seed))
}

fn value_agent(trainer: &Trainer) -> &sparseq::agents::ValueAgent {
    match &trainer.agent {
        Agent::Value(agent) => agent,
        Agent::ActorCritic(_) => panic!("value-based trainer expected"),
    }
}

fn gradient_oracle() -> Result<Outcome> {
    let mut rng = RngStream::new(1, "gradient-oracle");
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..100 {
        let depth = 1 + rng.index(3);
        let mut widths = vec![1 + rng.index(4)];
        for _ in 0..depth {
            widths.push(1 + rng.index(6));
        }
        let specs: Vec<LayerSpec> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == widths.len() {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                LayerSpec::new(w[0], w[1], act)
            })
            .collect();
        let params = NetworkParams::init(&specs, &mut rng)?;
        let mask = magnitude_mask(&params, 0.5 * rng.uniform())?;
        let params = sparseq::pruning::apply_mask(&params, &mask)?;
        let batch = 1 + rng.index(5);
        let n_in = params.input_width();
        let n_out = params.output_width();
        let inputs: Vec<f64> = (0..batch * n_in)
            .map(|_| rng.uniform_range(-2.0, 2.0))
            .collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.index(n_out)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let (grads, _) = params.backward(&mask, &inputs, &actions, &targets)?;
        let analytic: Vec<f64> = grads.values().collect();
        let count = analytic.len();
        for k in 0..count {
            let loss_at = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                *p.values_mut().nth(k).expect("index in range") += delta;
                p.squared_error(&mask, &inputs, &actions, &targets)
            };
            let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
            let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 networks"),
    )
}

fn reduction() -> Result<Outcome> {
    let base = r#"
env = "chain"
[train]
total_steps = 5000
[eaude]
population_size = 1
tournament_size = 1
u_max = 0.0
[log]
wallclock = false
"#;
    let mut dqn = Trainer::new(config(&format!("algorithm = \"dqn\"\n{base}"), 0)?)?;
    let mut eaude = Trainer::new(config(&format!("algorithm = \"eaude_dqn\"\n{base}"), 0)?)?;
    let mut identical_params = true;
    while !dqn.is_finished() {
        dqn.step_once(false)?;
        eaude.step_once(false)?;
        let (a, b) = (
            &value_agent(&dqn).population,
            &value_agent(&eaude).population,
        );
        identical_params &= a.members[0].params == b.members[0].params
            && a.members[0].mask == b.members[0].mask
            && a.target_params == b.target_params;
    }
    let identical_logs = dqn.log.to_csv()? == eaude.log.to_csv()?;
    outcome(
        identical_params && identical_logs,
        format!("parameters identical: {identical_params}, CSV identical: {identical_logs}"),
    )
}

fn schedule_equivalence() -> Result<Outcome> {
    let base = r#"
env = "chain"
[train]
total_steps = 20000
target_period = 500
[polyprune]
pruning_period = 500
[log]
wallclock = false
"#;
    let mut distill = Trainer::new(config(&format!("algorithm = \"distill_dqn\"\n{base}"), 0)?)?;
    let mut poly = Trainer::new(config(
        &format!("algorithm = \"polyprune_dqn\"\n{base}"),
        0,
    )?)?;
    let (mut events, mut equal) = (0, 0);
    while !distill.is_finished() {
        let a = distill.step_once(false)?;
        let b = poly.step_once(false)?;
        let prunes = |ev: &[sparseq::harness::EventRecord]| {
            ev.iter()
                .filter(|e| matches!(e.event, AgentEvent::Prune { .. }))
                .count()
        };
        if prunes(&a) > 0 || prunes(&b) > 0 {
            events += 1;
            let (ma, mb) = (
                &value_agent(&distill).population.members[0],
                &value_agent(&poly).population.members[0],
            );
            if prunes(&a) == 1 && prunes(&b) == 1 && ma.mask == mb.mask {
                equal += 1;
            }
        }
    }
    outcome(
        events == 40 && equal == 40,
        format!("{equal} of {events} pruning events with identical masks"),
    )
}

fn schedule_exactness() -> Result<Outcome> {
    let cfg = PolyPruneConfig::standard(10_000, 100);
    let below = (0..=cfg.t_start).all(|t| poly_schedule(t, &cfg) == 0.0);
    let above = (cfg.t_end..=cfg.t_final + 500).all(|t| poly_schedule(t, &cfg) == 0.95);
    let grid: Vec<f64> = (0..10_000).map(|t| poly_schedule(t, &cfg)).collect();
    let monotone = grid.windows(2).all(|w| w[0] <= w[1]);
    let hand = PolyPruneConfig {
        final_sparsity: 0.95,
        exponent: 3.0,
        t_start: 20,
        t_end: 80,
        t_final: 100,
        pruning_period: 1,
    };
    let mid = poly_schedule(50, &hand);
    let mid_ok = (mid - 0.83125).abs() < 1e-12;
    outcome(
        below && above && monotone && mid_ok,
        format!(
            "zero below start {below}, 0.95 after end {above}, monotone {monotone}, midpoint {mid}"
        ),
    )
}

/// Two-sided Kolmogorov-Smirnov statistic against Uniform(0, width).
fn ks_uniform(mut samples: Vec<f64>, width: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x / width).clamp(0.0, 1.0);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn sampler_bounds() -> Result<Outcome> {
    let mut rng = RngStream::new(2, "sampler-inputs");
    let mut draws = RngStream::new(2, "sampler-draws");
    let mut violations = 0;
    for _ in 0..10_000 {
        let t_final = 1_000 + rng.index(100_000) as u64;
        let t = rng.index(t_final as usize) as u64;
        let t_next = t + 1 + rng.index((t_final - t) as usize) as u64;
        let s = 0.999 * rng.uniform();
        let cfg = EauDeConfig {
            t_final,
            ..EauDeConfig::standard(t_final)
        };
        let out = sample_sparsity(s, t, t_next, &cfg, &mut draws)?;
        if !(out >= s && out <= s + (1.0 - s) * cfg.s_max && out < 1.0) {
            violations += 1;
        }
    }
    let cfg = EauDeConfig::standard(100_000);
    let (s, t, t_next) = (0.2, 1_000, 1_100);
    let linear = (1.0 - s) / (cfg.t_final - t) as f64 * (t_next - t) as f64;
    let width = linear * cfg.u_max;
    let uncapped = width < (1.0 - s) * cfg.s_max;
    let samples: Vec<f64> = (0..10_000)
        .map(|_| sample_sparsity(s, t, t_next, &cfg, &mut draws).map(|v| v - s))
        .collect::<Result<_>>()?;
    let d = ks_uniform(samples, width);
    let critical = 1.628 / (10_000f64).sqrt();
    outcome(
        violations == 0 && uncapped && d < critical,
        format!("{violations} bound violations; KS D = {d:.4} (critical {critical:.4})"),
    )
}

/// Runs a full EauDeDQN chain experiment with the standard population
/// constants, checking selection and lineage invariants at every event.
fn full_eaude_run() -> Result<(Outcome, Outcome)> {
    let text = r#"
algorithm = "eaude_dqn"
env = "chain"
[log]
wallclock = false
"#;
    let mut trainer = Trainer::new(config(text, 0)?)?;
    let period = trainer.config.target_period;
    let mut argmin_ok = true;
    let mut all_champion_ok = true;
    let mut brute = RngStream::new(3, "selection");
    for _ in 0..1_000 {
        let k = 1 + brute.index(8);
        let losses: Vec<f64> = (0..k).map(|_| (brute.index(5) as f64) * 0.5).collect();
        let mut best = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l < losses[best] {
                best = i;
            }
        }
        argmin_ok &= select_target(&losses) == best;
        let cfg = EauDeConfig {
            population_size: k,
            tournament_size: k,
            ..EauDeConfig::standard(1_000)
        };
        all_champion_ok &= exploitation(&losses, best, &cfg, &mut brute)? == vec![best; k];
    }

    let (mut events, mut preserved) = (0, 0);
    let mut lineage_sparsity: HashMap<u64, f64> = HashMap::new();
    let mut monotone = true;
    let mut losses_reset = true;
    while !trainer.is_finished() {
        let t = trainer.step + 1;
        let before = if t % period == 0 && trainer.learning_started {
            let mut shadow = trainer.clone();
            shadow.config.target_period = u64::MAX;
            shadow.step_once(false)?;
            let population = value_agent(&shadow).population.clone();
            let champion = select_target(&population.losses());
            Some(population.members[champion].clone())
        } else {
            None
        };
        let fired = trainer.step_once(false)?;
        let population = &value_agent(&trainer).population;
        if let Some(champion) = before {
            events += 1;
            let slot = &population.members[0];
            if slot.params == champion.params
                && slot.mask == champion.mask
                && slot.optimizer == champion.optimizer
                && slot.lineage_id == champion.lineage_id
            {
                preserved += 1;
            }
        }
        if !fired.is_empty() {
            losses_reset &= population.losses().iter().all(|&l| l == 0.0);
        }
        for m in &population.members {
            let floor = lineage_sparsity
                .get(&m.lineage_id)
                .or_else(|| m.parent_lineage.and_then(|p| lineage_sparsity.get(&p)))
                .copied()
                .unwrap_or(0.0);
            monotone &= m.sparsity >= floor;
            lineage_sparsity.insert(m.lineage_id, m.sparsity);
        }
    }
    let selection = Outcome {
        pass: argmin_ok && all_champion_ok && events > 0 && preserved == events,
        detail: format!(
            "argmin/tie-break {argmin_ok}, all-champion {all_champion_ok}, champion preserved at {preserved} of {events} events"
        ),
    };
    let lineage = Outcome {
        pass: monotone && losses_reset && lineage_sparsity.len() > 5,
        detail: format!(
            "{} lineages monotone {monotone}, losses zero after updates {losses_reset}, final champion sparsity {:.3}",
            lineage_sparsity.len(),
            trainer.champion_sparsity()
        ),
    };
    Ok((selection, lineage))
}

fn value_learning() -> Result<Outcome> {
    let gamma = EnvSpec::of(EnvId::Chain).discount;
    let mut dense_ok = 0;
    let mut eaude_ok = 0;
    let mut sparse_ok = 0;
    let mut sparsities = Vec::new();
    for seed in 0..5 {
        let dqn = config("algorithm = \"dqn\"\nenv = \"chain\"\n", seed)?;
        let mut trainer = Trainer::new(dqn)?;
        trainer.run_to(u64::MAX)?;
        if matches_value_iteration(value_agent(&trainer).champion_member(), EnvId::Chain, gamma)? {
            dense_ok += 1;
        }
        let eaude = config(
            "algorithm = \"eaude_dqn\"\nenv = \"chain\"\n[train]\ntarget_period = 50\n",
            seed,
        )?;
        let mut trainer = Trainer::new(eaude)?;
        trainer.run_to(u64::MAX)?;
        if matches_value_iteration(value_agent(&trainer).champion_member(), EnvId::Chain, gamma)? {
            eaude_ok += 1;
        }
        let s = trainer.champion_sparsity();
        if s > 0.30 {
            sparse_ok += 1;
        }
        sparsities.push(format!("{s:.3}"));
    }
    outcome(
        dense_ok >= 4 && eaude_ok >= 4 && sparse_ok >= 4,
        format!(
            "DQN optimal {dense_ok}/5, EauDeDQN optimal {eaude_ok}/5, sparsity > 0.30 {sparse_ok}/5 [{}]",
            sparsities.join(", ")
        ),
    )
}

fn actor_critic_learning() -> Result<Outcome> {
    let random = random_policy_return(
        EnvId::Pendulum,
        100,
        &mut RngStream::new(0, "random-baseline"),
    )?;
    let mut passed = 0;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let cfg = config(
            "algorithm = \"eaude_sac\"\nenv = \"pendulum\"\n[sac]\npruning_period = 100\n",
            seed,
        )?;
        let mut trainer = Trainer::new(cfg)?;
        trainer.run_to(u64::MAX)?;
        let eval = trainer.last_eval_return;
        let sparsity = match &trainer.agent {
            Agent::ActorCritic(agent) => agent.champion_sparsity(),
            Agent::Value(_) => unreachable!(),
        };
        if eval >= -300.0 && sparsity.iter().all(|&s| s > 0.20) {
            passed += 1;
        }
        rows.push(format!("{eval:.0}/{:.3}/{:.3}", sparsity[0], sparsity[1]));
    }
    outcome(
        passed >= 3,
        format!(
            "{passed}/5 seeds with eval >= -300 and both critic champions > 0.20 (random {random:.0}); eval/c1/c2 [{}]",
            rows.join(", ")
        ),
    )
}

/// Trims by repeatedly discarding the current minimum and maximum.
fn brute_iqm(values: &[f64]) -> f64 {
    let mut kept = values.to_vec();
    for _ in 0..values.len() / 4 {
        let lo = (0..kept.len())
            .min_by(|&a, &b| kept[a].total_cmp(&kept[b]))
            .unwrap();
        kept.remove(lo);
        let hi = (0..kept.len())
            .max_by(|&a, &b| kept[a].total_cmp(&kept[b]))
            .unwrap();
        kept.remove(hi);
    }
    kept.sort_by(f64::total_cmp);
    trimmed_mean(&kept)
}

fn aggregation() -> Result<Outcome> {
    let mut rng = RngStream::new(4, "iqm");
    let mut mismatches = 0;
    for _ in 0..1_000 {
        let n = 1 + rng.index(30);
        let values: Vec<f64> = (0..n).map(|_| rng.uniform_range(-100.0, 100.0)).collect();
        if iqm(&values)? != brute_iqm(&values) {
            mismatches += 1;
        }
    }
    let mut log = RunLog::new(LogLayout::Value { members: 1 });
    for step in 1..=3 {
        log.push(LogRecord {
            step: step * 100,
            wallclock_s: 0.0,
            episode_return: 0.3 * step as f64,
            eval_return: 0.1,
            champion_index: 0,
            behavior_index: 0,
            sparsities: vec![0.25],
            losses: vec![1.0],
        })?;
    }
    let baselines = Baselines {
        random: 0.0,
        reference: 1.0,
    };
    let summary = aggregate_runs(&vec![log; 5], &baselines)?;
    let zero_width = summary.rows.iter().all(|r| {
        [r.episode_return, r.eval_return, r.champion_sparsity]
            .iter()
            .all(|e| e.lower == e.upper && e.lower == e.iqm)
    });
    outcome(
        mismatches == 0 && zero_width,
        format!("{mismatches} mismatches in 1000 vectors; identical runs zero width {zero_width}"),
    )
}

fn persistence() -> Result<Outcome> {
    let mut round_trips = true;
    for algorithm in Algorithm::ALL {
        let env = if algorithm.is_actor_critic() {
            "pendulum"
        } else {
            "gridworld"
        };
        let text = format!(
            "algorithm = \"{algorithm}\"\nenv = \"{env}\"\n[train]\ntotal_steps = 1300\nwarmup = 1000\n[network]\nhidden = [8]\nactor_hidden = [8]\n[sac]\npruning_period = 100\n[log]\nwallclock = false\n"
        );
        let mut trainer = Trainer::new(config(&text, 6)?)?;
        trainer.run_to(1_300)?;
        let bytes = encode_checkpoint(&trainer);
        let decoded = decode_checkpoint(&bytes)?;
        round_trips &= decoded == trainer && encode_checkpoint(&decoded) == bytes;
    }

    let text = "algorithm = \"eaude_dqn\"\nenv = \"chain\"\n[train]\ntotal_steps = 2000\ntarget_period = 100\nwarmup = 200\n[log]\nwallclock = false\n";
    let cfg = config(text, 7)?;
    let mut straight = Trainer::new(cfg.clone())?;
    straight.run_to(2_000)?;
    let mut first = Trainer::new(cfg.clone())?;
    first.run_to(1_000)?;
    let mut resumed = decode_checkpoint(&encode_checkpoint(&first))?;
    resumed.run_to(2_000)?;
    let resume_ok = resumed == straight && resumed.log.to_csv()? == straight.log.to_csv()?;

    let mut threaded = cfg;
    threaded.threads = 4;
    let threads_ok = run_training(&threaded)?.to_csv()? == straight.log.to_csv()?;
    outcome(
        round_trips && resume_ok && threads_ok,
        format!("round trip {round_trips}, resume equals continue {resume_ok}, 1 vs 4 threads identical {threads_ok}"),
    )
}

fn report(
    index: usize,
    name: &str,
    limit: Duration,
    start: Instant,
    result: Result<Outcome>,
) -> bool {
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass && elapsed <= limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let status = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {index:>2} {status} {name}: {detail} [{:.1}s, limit {}s]",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;

    let start = Instant::now();
    all &= report(1, "gradient oracle", secs(10), start, gradient_oracle());
    let start = Instant::now();
    all &= report(2, "reduction to DQN", secs(30), start, reduction());
    let start = Instant::now();
    all &= report(
        3,
        "distillation equivalence",
        secs(60),
        start,
        schedule_equivalence(),
    );
    let start = Instant::now();
    all &= report(
        4,
        "polynomial schedule",
        secs(10),
        start,
        schedule_exactness(),
    );
    let start = Instant::now();
    all &= report(5, "sparsity sampler", secs(10), start, sampler_bounds());

    let start = Instant::now();
    match full_eaude_run() {
        Ok((selection, lineage)) => {
            all &= report(6, "selection mechanics", secs(300), start, Ok(selection));
            all &= report(7, "lineage monotonicity", secs(300), start, Ok(lineage));
        }
        Err(e) => {
            println!("criterion  6 FAIL selection mechanics: error: {e}");
            println!("criterion  7 FAIL lineage monotonicity: error: {e}");
            all = false;
        }
    }

    let start = Instant::now();
    all &= report(
        8,
        "value-based learning",
        secs(300),
        start,
        value_learning(),
    );
    let start = Instant::now();
    all &= report(
        9,
        "actor-critic learning",
        secs(900),
        start,
        actor_critic_learning(),
    );
    let start = Instant::now();
    all &= report(10, "IQM aggregation", secs(10), start, aggregation());
    let start = Instant::now();
    all &= report(
        11,
        "persistence and determinism",
        secs(60),
        start,
        persistence(),
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
