use sparseq::agents::AgentEvent;
use sparseq::envs::{normalized_return, Action, Baselines, EnvId};
use sparseq::harness::{
    decode_checkpoint, encode_checkpoint, evaluate_policy, run_training, Agent, ExperimentConfig,
    Trainer,
};
use sparseq::rng::RngStream;

fn config(text: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml(text, Some(seed)).unwrap()
}

const EAUDE_CHAIN: &str = r#"
algorithm = "eaude_dqn"
env = "chain"
[train]
total_steps = 2000
target_period = 100
warmup = 200
[log]
wallclock = false
"#;

#[test]
fn thread_count_does_not_change_the_log() {
    let single = config(EAUDE_CHAIN, 3);
    let mut multi = single.clone();
    multi.threads = 4;
    let a = run_training(&single).unwrap();
    let b = run_training(&multi).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.events_jsonl(), b.events_jsonl());
}

#[test]
fn sac_thread_count_does_not_change_the_log() {
    let text = r#"
algorithm = "eaude_sac"
env = "pendulum"
[train]
total_steps = 1400
warmup = 1000
[network]
hidden = [8, 8]
actor_hidden = [8]
[sac]
pruning_period = 100
[eval]
period = 700
episodes = 1
[log]
wallclock = false
"#;
    let single = config(text, 1);
    let mut multi = single.clone();
    multi.threads = 3;
    let a = run_training(&single).unwrap();
    let b = run_training(&multi).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert!(a.events.iter().any(|e| e.critic == Some(2)));
}

#[test]
fn resuming_from_a_checkpoint_equals_continuing() {
    let cfg = config(EAUDE_CHAIN, 9);
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    straight.run_to(2000).unwrap();

    let mut first = Trainer::new(cfg).unwrap();
    first.run_to(1000).unwrap();
    let bytes = encode_checkpoint(&first);
    drop(first);
    let mut resumed = decode_checkpoint(&bytes).unwrap();
    resumed.run_to(2000).unwrap();

    assert!(resumed == straight);
    assert_eq!(
        resumed.log.to_csv().unwrap(),
        straight.log.to_csv().unwrap()
    );
}

#[test]
fn single_member_without_noise_reduces_to_dqn() {
    let base = r#"
env = "chain"
[train]
total_steps = 1500
target_period = 100
warmup = 100
[eaude]
population_size = 1
tournament_size = 1
u_max = 0.0
[log]
wallclock = false
"#;
    let mut dqn = Trainer::new(config(&format!("algorithm = \"dqn\"\n{base}"), 4)).unwrap();
    let mut eaude = Trainer::new(config(&format!("algorithm = \"eaude_dqn\"\n{base}"), 4)).unwrap();
    for _ in 0..1500 {
        dqn.step_once(false).unwrap();
        eaude.step_once(false).unwrap();
        let (Agent::Value(a), Agent::Value(b)) = (&dqn.agent, &eaude.agent) else {
            panic!("value agents expected");
        };
        assert_eq!(
            a.population.members[0].params,
            b.population.members[0].params
        );
        assert_eq!(a.population.target_params, b.population.target_params);
    }
    assert_eq!(dqn.log.to_csv().unwrap(), eaude.log.to_csv().unwrap());
}

#[test]
fn events_follow_target_update_order() {
    let mut trainer = Trainer::new(config(EAUDE_CHAIN, 2)).unwrap();
    let mut updates = 0;
    while !trainer.is_finished() {
        let events = trainer.step_once(false).unwrap();
        if events.is_empty() {
            continue;
        }
        let kinds: Vec<&str> = events
            .iter()
            .map(|e| match e.event {
                AgentEvent::TargetUpdate { .. } => "target",
                AgentEvent::Exploitation { .. } => "exploitation",
                AgentEvent::Exploration { .. } => "exploration",
                AgentEvent::Prune { .. } => "prune",
            })
            .collect();
        assert_eq!(trainer.step % 100, 0);
        if trainer.learning_started {
            assert_eq!(kinds, ["target", "exploitation", "exploration"]);
        } else {
            assert_eq!(kinds, ["target"]);
        }
        let Agent::Value(agent) = &trainer.agent else {
            unreachable!()
        };
        assert!(agent.population.losses().iter().all(|&l| l == 0.0));
        let row = trainer.log.records.last().unwrap();
        assert_eq!(row.step, trainer.step);
        updates += 1;
    }
    assert_eq!(updates, 20);
}

#[test]
fn warmup_only_run_leaves_networks_untouched() {
    let text = r#"
algorithm = "eaude_dqn"
env = "gridworld"
[train]
total_steps = 300
warmup = 300
target_period = 100
"#;
    let cfg = config(text, 5);
    let fresh = Trainer::new(cfg.clone()).unwrap();
    let mut trainer = Trainer::new(cfg).unwrap();
    trainer.run_to(300).unwrap();
    assert!(!trainer.learning_started);
    assert_eq!(trainer.buffer.len(), 300);
    let (Agent::Value(a), Agent::Value(b)) = (&fresh.agent, &trainer.agent) else {
        unreachable!()
    };
    for (m, n) in a.population.members.iter().zip(&b.population.members) {
        assert_eq!(m.params, n.params);
        assert_eq!(n.sparsity, 0.0);
    }
    assert!(trainer
        .log
        .events
        .iter()
        .all(|e| matches!(e.event, AgentEvent::TargetUpdate { .. })));
}

#[test]
fn evaluation_of_fixed_chain_policies() {
    let mut rng = RngStream::new(0, "eval");
    let right = evaluate_policy(EnvId::Chain, 3, &mut rng, |_| Ok(Action::Discrete(1))).unwrap();
    assert_eq!(right, 1.0);
    let left = evaluate_policy(EnvId::Chain, 3, &mut rng, |_| Ok(Action::Discrete(0))).unwrap();
    assert_eq!(left, 0.0);
}

#[test]
fn normalization_endpoints() {
    let b = Baselines {
        random: -1200.0,
        reference: -150.0,
    };
    assert_eq!(normalized_return(-1200.0, &b).unwrap(), 0.0);
    assert_eq!(normalized_return(-150.0, &b).unwrap(), 1.0);
    assert_eq!(normalized_return(-675.0, &b).unwrap(), 0.5);
    let degenerate = Baselines {
        random: 1.0,
        reference: 1.0,
    };
    assert!(normalized_return(1.0, &degenerate).is_err());
}
