//! Fixed-capacity ring buffer of transitions with uniform sampling.
//!
//! The buffer belongs to the run, not to the agent: resets reinitialize the
//! networks and leave the stored experience in place.

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use rand::Rng;
use thiserror::Error;

use crate::archive::{Archive, ArchiveError};
use crate::autodiff::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("transition {field} has length {actual}, buffer expects {expected}")]
    Shape {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("capacity must be positive")]
    ZeroCapacity,
}

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    /// No bootstrapping past this step.
    pub terminal: bool,
    /// The robot fell; implies `terminal`.
    pub fall: bool,
}

/// Column-major view of sampled transitions, ready for the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T = f32> {
    pub states: Tensor<T>,
    pub actions: Tensor<T>,
    /// `[B, 1]`
    pub rewards: Tensor<T>,
    pub next_states: Tensor<T>,
    /// `[B, 1]`, 1 where the transition is terminal.
    pub terminals: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            states: self.states.cast(),
            actions: self.actions.cast(),
            rewards: self.rewards.cast(),
            next_states: self.next_states.cast(),
            terminals: self.terminals.cast(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    cursor: usize,
    len: usize,
    states: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    next_states: Vec<f32>,
    terminals: Vec<bool>,
    falls: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            state_dim,
            action_dim,
            capacity,
            cursor: 0,
            len: 0,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
            falls: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn clear(&mut self) {
        *self = Self::new(self.state_dim, self.action_dim, self.capacity).unwrap();
    }

    pub fn insert(&mut self, t: Transition) -> Result<(), ReplayError> {
        check("state", self.state_dim, t.state.len())?;
        check("next_state", self.state_dim, t.next_state.len())?;
        check("action", self.action_dim, t.action.len())?;
        let i = self.cursor;
        if self.len < self.capacity {
            // Storage grows lazily until full; the cursor equals len until then.
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.terminals.push(t.terminal || t.fall);
            self.falls.push(t.fall);
            self.len += 1;
        } else {
            let (s, a) = (self.state_dim, self.action_dim);
            self.states[i * s..(i + 1) * s].copy_from_slice(&t.state);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_states[i * s..(i + 1) * s].copy_from_slice(&t.next_state);
            self.terminals[i] = t.terminal || t.fall;
            self.falls[i] = t.fall;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// The transition at storage slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len {
            return None;
        }
        let (s, a) = (self.state_dim, self.action_dim);
        Some(Transition {
            state: self.states[i * s..(i + 1) * s].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * s..(i + 1) * s].to_vec(),
            terminal: self.terminals[i],
            fall: self.falls[i],
        })
    }

    /// Transitions from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity { 0 } else { self.cursor };
        (0..self.len).map(move |k| self.get((start + k) % self.len).unwrap())
    }

    /// Storage indices drawn i.i.d. uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.len == 0 {
            return Err(ReplayError::Empty);
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len)).collect())
    }

    /// Copies a uniformly sampled batch out of the buffer.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch, ReplayError> {
        let idx = self.sample_indices(batch_size, rng)?;
        let (s, a) = (self.state_dim, self.action_dim);
        let gather = |src: &[f32], width: usize| -> Vec<f32> {
            idx.iter()
                .flat_map(|&i| src[i * width..(i + 1) * width].iter().copied())
                .collect()
        };
        let b = batch_size;
        Ok(Batch {
            states: Tensor::from_raw(vec![b, s], gather(&self.states, s)),
            actions: Tensor::from_raw(vec![b, a], gather(&self.actions, a)),
            rewards: Tensor::from_raw(vec![b, 1], idx.iter().map(|&i| self.rewards[i]).collect()),
            next_states: Tensor::from_raw(vec![b, s], gather(&self.next_states, s)),
            terminals: Tensor::from_raw(
                vec![b, 1],
                idx.iter().map(|&i| if self.terminals[i] { 1.0 } else { 0.0 }).collect(),
            ),
        })
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("replay");
        a.push_u64s(
            "meta",
            &[
                self.state_dim as u64,
                self.action_dim as u64,
                self.capacity as u64,
                self.cursor as u64,
                self.len as u64,
            ],
        );
        a.push_f32s("states", &self.states);
        a.push_f32s("actions", &self.actions);
        a.push_f32s("rewards", &self.rewards);
        a.push_f32s("next_states", &self.next_states);
        a.push_bytes("terminals", &self.terminals.iter().map(|&b| b as u8).collect::<Vec<_>>());
        a.push_bytes("falls", &self.falls.iter().map(|&b| b as u8).collect::<Vec<_>>());
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self, ArchiveError> {
        a.expect_kind("replay")?;
        let meta = a.u64s("meta")?;
        let [state_dim, action_dim, capacity, cursor, len] = meta[..] else {
            return Err(ArchiveError::Type("meta".into()));
        };
        let (state_dim, action_dim, len) = (state_dim as usize, action_dim as usize, len as usize);
        let buf = Self {
            state_dim,
            action_dim,
            capacity: capacity as usize,
            cursor: cursor as usize,
            len,
            states: a.f32s("states")?,
            actions: a.f32s("actions")?,
            rewards: a.f32s("rewards")?,
            next_states: a.f32s("next_states")?,
            terminals: a.bytes("terminals")?.into_iter().map(|b| b != 0).collect(),
            falls: a.bytes("falls")?.into_iter().map(|b| b != 0).collect(),
        };
        let consistent = buf.capacity > 0
            && len <= buf.capacity
            && buf.cursor < buf.capacity
            && buf.states.len() == len * state_dim
            && buf.next_states.len() == len * state_dim
            && buf.actions.len() == len * action_dim
            && buf.rewards.len() == len
            && buf.terminals.len() == len
            && buf.falls.len() == len;
        if !consistent {
            return Err(ArchiveError::Corrupt("replay sizes disagree".into()));
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        self.to_archive().write(path)
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_archive(&Archive::read(path)?)
    }

    /// CRC-32 of the serialized contents.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.to_archive().to_bytes())
    }
}

fn check(field: &'static str, expected: usize, actual: usize) -> Result<(), ReplayError> {
    if expected != actual {
        return Err(ReplayError::Shape {
            field,
            expected,
            actual,
        });
    }
    Ok(())
}

/// A buffer shared between one writer and one reader.
///
/// All access goes through the lock, so an insert is never observed half-done.
#[derive(Debug)]
pub struct SharedReplay(Mutex<ReplayBuffer>);

impl SharedReplay {
    pub fn new(buffer: ReplayBuffer) -> Self {
        Self(Mutex::new(buffer))
    }

    pub fn lock(&self) -> MutexGuard<'_, ReplayBuffer> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn insert(&self, t: Transition) -> Result<(), ReplayError> {
        self.lock().insert(t)
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch, ReplayError> {
        self.lock().sample(batch_size, rng)
    }

    pub fn into_inner(self) -> ReplayBuffer {
        self.0.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn tr(v: f32) -> Transition {
        Transition {
            state: vec![v, v + 1.0],
            action: vec![-v],
            reward: v * 10.0,
            next_state: vec![v + 0.5, v + 1.5],
            terminal: false,
            fall: false,
        }
    }

    #[test]
    fn insert_into_empty() {
        let mut b = ReplayBuffer::new(2, 1, 10).unwrap();
        b.insert(tr(1.0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(2, 1, 3).unwrap();
        for v in 0..4 {
            b.insert(tr(v as f32)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f32> = b.iter_ordered().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut b = ReplayBuffer::new(2, 1, 3).unwrap();
        let mut t = tr(0.0);
        t.action.push(1.0);
        assert!(matches!(b.insert(t), Err(ReplayError::Shape { field: "action", .. })));
        assert!(b.is_empty());
    }

    #[test]
    fn empty_sample_errors() {
        let b = ReplayBuffer::new(2, 1, 3).unwrap();
        assert_eq!(b.sample(4, &mut seeded(0)).unwrap_err(), ReplayError::Empty);
    }

    #[test]
    fn single_item_is_repeated() {
        let mut b = ReplayBuffer::new(2, 1, 3).unwrap();
        b.insert(tr(2.0)).unwrap();
        let batch = b.sample(5, &mut seeded(1)).unwrap();
        assert!(batch.rewards.data().iter().all(|&r| r == 20.0));
        assert_eq!(batch.states.shape(), &[5, 2]);
    }

    #[test]
    fn same_seed_same_batches() {
        let mut b = ReplayBuffer::new(2, 1, 100).unwrap();
        for v in 0..50 {
            b.insert(tr(v as f32)).unwrap();
        }
        let (mut r1, mut r2) = (seeded(4), seeded(4));
        for _ in 0..5 {
            assert_eq!(b.sample(16, &mut r1).unwrap(), b.sample(16, &mut r2).unwrap());
        }
    }

    #[test]
    fn fall_implies_terminal_in_storage() {
        let mut b = ReplayBuffer::new(2, 1, 3).unwrap();
        b.insert(Transition {
            fall: true,
            ..tr(0.0)
        })
        .unwrap();
        let t = b.get(0).unwrap();
        assert!(t.terminal && t.fall);
        assert_eq!(t.next_state, vec![0.5, 1.5]);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut b = ReplayBuffer::new(2, 1, 4).unwrap();
        for v in 0..6 {
            b.insert(tr(v as f32)).unwrap();
        }
        let back = ReplayBuffer::from_archive(&Archive::from_bytes(&b.to_archive().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.checksum(), b.checksum());
    }

    #[test]
    fn shared_buffer_is_usable_across_threads() {
        let shared = std::sync::Arc::new(SharedReplay::new(ReplayBuffer::new(2, 1, 64).unwrap()));
        let writer = {
            let shared = shared.clone();
            std::thread::spawn(move || {
                for v in 0..32 {
                    shared.insert(tr(v as f32)).unwrap();
                }
            })
        };
        writer.join().unwrap();
        let batch = shared.sample(8, &mut seeded(0)).unwrap();
        assert_eq!(batch.len(), 8);
    }

    proptest! {
        #[test]
        fn insert_then_sample_is_bit_exact(vals in proptest::collection::vec(-1e3f32..1e3, 4)) {
            let mut b = ReplayBuffer::new(2, 1, 8).unwrap();
            let t = Transition {
                state: vec![vals[0], vals[1]],
                action: vec![vals[2]],
                reward: vals[3],
                next_state: vec![vals[1], vals[0]],
                terminal: true,
                fall: false,
            };
            b.insert(t.clone()).unwrap();
            let batch = b.sample(1, &mut seeded(0)).unwrap();
            prop_assert_eq!(batch.states.data(), &t.state[..]);
            prop_assert_eq!(batch.actions.data(), &t.action[..]);
            prop_assert_eq!(batch.rewards.item().to_bits(), t.reward.to_bits());
            prop_assert_eq!(batch.next_states.data(), &t.next_state[..]);
            prop_assert_eq!(batch.terminals.item(), 1.0);
        }

        #[test]
        fn size_never_exceeds_capacity(cap in 1usize..20, n in 0usize..60) {
            let mut b = ReplayBuffer::new(2, 1, cap).unwrap();
            let mut last = 0;
            for v in 0..n {
                b.insert(tr(v as f32)).unwrap();
                prop_assert!(b.len() <= cap);
                prop_assert!(b.len() >= last);
                last = b.len();
            }
            prop_assert_eq!(b.len(), n.min(cap));
        }
    }
}
