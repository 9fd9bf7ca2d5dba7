//! FIFO replay buffer and offline transition datasets.
//!
//! Dataset file layout (all little-endian):
//!
//! ```text
//! magic "SQDS" | version u32 | env code u8 | observation width u32
//! | action kind u8 (0 discrete, 1 continuous) | action width u32 | count u64
//! then `count` fixed-width records:
//!   state f64 x width | action (u64, or f64 x action width) | reward f64
//!   | next_state f64 x width | done u8
//! ```

use std::path::Path;

use crate::codec::{Decoder, Encoder};
use crate::envs::{Action, ActionSpace, EnvId, EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            insert_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub fn push(&mut self, transition: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(transition);
        } else {
            let slot = (self.insert_count % self.capacity as u64) as usize;
            self.storage[slot] = transition;
        }
        self.insert_count += 1;
    }

    /// Contents from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            (self.insert_count % self.capacity as u64) as usize
        };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut RngStream) -> Result<Vec<&Transition>> {
        let size = self.storage.len();
        if size == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| &self.storage[rng.index(size)])
            .collect())
    }

    /// Rebuilds a buffer from its FIFO contents.
    pub fn from_parts(capacity: usize, fifo: Vec<Transition>, insert_count: u64) -> Result<Self> {
        if fifo.len() > capacity || (fifo.len() as u64) != insert_count.min(capacity as u64) {
            return Err(Error::Validation(
                "replay buffer contents inconsistent".into(),
            ));
        }
        let mut storage = fifo;
        if storage.len() == capacity {
            let split = (insert_count % capacity as u64) as usize;
            storage.rotate_right(split);
        }
        Ok(Self {
            capacity,
            storage,
            insert_count,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub source_env: EnvSpec,
    pub transitions: Vec<Transition>,
}

const DATASET_MAGIC: &[u8; 4] = b"SQDS";
const DATASET_VERSION: u32 = 1;

fn check_transition(spec: &EnvSpec, t: &Transition) -> bool {
    let action_ok = match (&spec.action_space, &t.action) {
        (ActionSpace::Discrete(n), Action::Discrete(a)) => a < n,
        (ActionSpace::Continuous { dim, .. }, Action::Continuous(v)) => v.len() == *dim,
        _ => false,
    };
    action_ok
        && t.state.len() == spec.observation_width
        && t.next_state.len() == spec.observation_width
        && t.reward.is_finite()
}

impl OfflineDataset {
    pub fn new(source_env: EnvSpec, transitions: Vec<Transition>) -> Result<Self> {
        let ds = Self {
            source_env,
            transitions,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Validation("dataset has no transitions".into()));
        }
        if let Some(i) = self
            .transitions
            .iter()
            .position(|t| !check_transition(&self.source_env, t))
        {
            return Err(Error::Validation(format!(
                "transition {i} does not fit the {} environment",
                self.source_env.id
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let spec = &self.source_env;
        let mut e = Encoder::new();
        e.bytes(DATASET_MAGIC);
        e.u32(DATASET_VERSION);
        e.u8(spec.id.code());
        e.u32(spec.observation_width as u32);
        let (kind, width) = match spec.action_space {
            ActionSpace::Discrete(_) => (0u8, 1u32),
            ActionSpace::Continuous { dim, .. } => (1, dim as u32),
        };
        e.u8(kind);
        e.u32(width);
        e.u64(self.transitions.len() as u64);
        for t in &self.transitions {
            t.state.iter().for_each(|&v| e.f64(v));
            match &t.action {
                Action::Discrete(a) => e.u64(*a as u64),
                Action::Continuous(v) => v.iter().for_each(|&x| e.f64(x)),
            }
            e.f64(t.reward);
            t.next_state.iter().for_each(|&v| e.f64(v));
            e.bool(t.done);
        }
        Ok(e.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes);
        if d.take(4)? != DATASET_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                record: None,
                message: "not a dataset file".into(),
            });
        }
        let version = d.u32()?;
        if version != DATASET_VERSION {
            return Err(d.error(format!("unsupported dataset version {version}")));
        }
        let id = EnvId::from_code(d.u8()?).ok_or_else(|| d.error("unknown environment code"))?;
        let spec = EnvSpec::of(id);
        let width = d.u32()? as usize;
        let kind = d.u8()?;
        let action_width = d.u32()? as usize;
        let expected_kind = match spec.action_space {
            ActionSpace::Discrete(_) => 0,
            ActionSpace::Continuous { .. } => 1,
        };
        if width != spec.observation_width
            || kind != expected_kind
            || action_width != spec.action_space.width()
        {
            return Err(d.error(format!("header does not match the {id} environment")));
        }
        let count = d.u64()?;
        let record_size = 8 * (2 * width + 1 + action_width) + 1;
        let mut transitions = Vec::with_capacity((count as usize).min(d.remaining() / record_size));
        for index in 0..count as usize {
            d.set_record(Some(index));
            let state = (0..width).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
            let action = if kind == 0 {
                Action::Discrete(d.u64()? as usize)
            } else {
                Action::Continuous((0..action_width).map(|_| d.f64()).collect::<Result<_>>()?)
            };
            let reward = d.f64()?;
            let next_state = (0..width).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
            let done = d.bool()?;
            let t = Transition {
                state,
                action,
                reward,
                next_state,
                done,
            };
            if !check_transition(&spec, &t) {
                return Err(d.error("record does not fit the environment"));
            }
            transitions.push(t);
        }
        d.set_record(None);
        d.expect_end()?;
        Self::new(spec, transitions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// Fills a replay buffer with the whole dataset.
    pub fn to_buffer(&self) -> ReplayBuffer {
        let mut buffer = ReplayBuffer::new(self.transitions.len());
        for t in &self.transitions {
            buffer.push(t.clone());
        }
        buffer
    }
}

/// Collects `count` transitions with a behavior policy.
pub fn collect_dataset(
    id: EnvId,
    count: usize,
    rng: &mut RngStream,
    mut policy: impl FnMut(&[f64], &mut RngStream) -> Action,
) -> Result<OfflineDataset> {
    let mut env = crate::envs::Env::new(id);
    let mut obs = env.reset(rng);
    let mut transitions = Vec::with_capacity(count);
    while transitions.len() < count {
        let action = policy(&obs, rng);
        let out = env.step(&action)?;
        transitions.push(Transition {
            state: obs,
            action,
            reward: out.reward,
            next_state: out.observation.clone(),
            done: out.done,
        });
        obs = if out.done || out.truncated {
            env.reset(rng)
        } else {
            out.observation
        };
    }
    OfflineDataset::new(*env.spec(), transitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_action;
    use proptest::prelude::*;

    fn tr(tag: f64) -> Transition {
        Transition {
            state: vec![tag],
            action: Action::Discrete(0),
            reward: tag,
            next_state: vec![tag + 1.0],
            done: false,
        }
    }

    fn tags(b: &ReplayBuffer) -> Vec<f64> {
        b.iter_fifo().map(|t| t.reward).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2);
        b.push(tr(1.0));
        assert_eq!(b.len(), 1);
        b.push(tr(2.0));
        b.push(tr(3.0));
        assert_eq!(tags(&b), vec![2.0, 3.0]);
    }

    #[test]
    fn ring_arithmetic() {
        let mut b = ReplayBuffer::new(100);
        for i in 1..=1000 {
            b.push(tr(i as f64));
        }
        let expected: Vec<f64> = (901..=1000).map(|i| i as f64).collect();
        assert_eq!(tags(&b), expected);
        assert_eq!(b.insert_count(), 1000);
    }

    #[test]
    fn sampling() {
        let mut b = ReplayBuffer::new(8);
        let mut rng = RngStream::new(0, "replay");
        assert!(matches!(
            b.sample_batch(4, &mut rng),
            Err(Error::EmptyBuffer)
        ));
        b.push(tr(5.0));
        let batch = b.sample_batch(3, &mut rng).unwrap();
        assert!(batch.iter().all(|t| t.reward == 5.0));

        for i in 1..4 {
            b.push(tr(i as f64));
        }
        let mut r1 = RngStream::new(3, "replay");
        let mut r2 = RngStream::new(3, "replay");
        assert_eq!(
            b.sample_batch(16, &mut r1).unwrap(),
            b.sample_batch(16, &mut r2).unwrap()
        );
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(4);
        for i in 0..4 {
            b.push(tr(i as f64));
        }
        let mut rng = RngStream::new(17, "replay");
        let mut counts = [0usize; 4];
        for t in b.sample_batch(100_000, &mut rng).unwrap() {
            counts[t.reward as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    fn dataset(id: EnvId, n: usize) -> OfflineDataset {
        let spec = EnvSpec::of(id);
        let mut rng = RngStream::new(5, "dataset");
        collect_dataset(id, n, &mut rng, |_, r| random_action(&spec, r)).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for id in [EnvId::Chain, EnvId::Pendulum] {
            let ds = dataset(id, 300);
            let path = dir.path().join(format!("{id}.bin"));
            ds.save(&path).unwrap();
            assert_eq!(OfflineDataset::load(&path).unwrap(), ds);
        }
    }

    #[test]
    fn truncated_dataset_names_offset() {
        let ds = dataset(EnvId::Chain, 10);
        let bytes = ds.encode().unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match OfflineDataset::decode(cut) {
            Err(Error::Parse { offset, record, .. }) => {
                assert_eq!(record, Some(9));
                assert!(offset <= cut.len());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_refused() {
        let ds = OfflineDataset {
            source_env: EnvSpec::of(EnvId::Chain),
            transitions: vec![],
        };
        assert!(matches!(ds.encode(), Err(Error::Validation(_))));
        assert!(OfflineDataset::new(EnvSpec::of(EnvId::Chain), vec![]).is_err());
    }

    proptest! {
        #[test]
        fn fifo_and_capacity_hold(capacity in 1usize..20, pushes in 0usize..200) {
            let mut b = ReplayBuffer::new(capacity);
            for i in 0..pushes {
                b.push(tr(i as f64));
            }
            prop_assert_eq!(b.len(), pushes.min(capacity));
            let expected: Vec<f64> = (pushes.saturating_sub(capacity)..pushes).map(|i| i as f64).collect();
            prop_assert_eq!(tags(&b), expected);
            let fifo: Vec<Transition> = b.iter_fifo().cloned().collect();
            let rebuilt = ReplayBuffer::from_parts(capacity, fifo, b.insert_count()).unwrap();
            prop_assert_eq!(rebuilt, b);
        }
    }
}
