//! Episode-structured uniform replay with fixed-length segment sampling.

use std::cell::RefCell;
use std::collections::VecDeque;

use rand::Rng;

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Tensor,
    pub action: Action,
    pub reward: f64,
    pub next_observation: Tensor,
    /// Terminal: cuts the bootstrap.
    pub done: bool,
    /// Episode ended by a time limit without termination.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
struct Episode {
    /// `len + 1` observations once at least one transition is stored.
    observations: Vec<Tensor>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    finished: bool,
}

impl Episode {
    fn new(first: Tensor) -> Self {
        Self {
            observations: vec![first],
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            finished: false,
        }
    }

    fn len(&self) -> usize {
        self.actions.len()
    }

    /// Segment starts available for a window of `window` transitions.
    fn valid_starts(&self, window: usize) -> usize {
        if self.finished {
            self.len()
        } else {
            (self.len() + 1).saturating_sub(window)
        }
    }

    fn drop_front(&mut self) {
        self.observations.remove(0);
        self.actions.remove(0);
        self.rewards.remove(0);
        self.dones.remove(0);
    }
}

/// A contiguous window of `K + n` transitions starting at a sampled index.
///
/// Positions past the end of the episode are padded (zero observations,
/// repeated action, zero reward) and flagged invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    /// `K + n + 1` observations.
    pub observations: Vec<Tensor>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub done_flags: Vec<bool>,
    pub valid_mask: Vec<bool>,
}

impl TrajectorySegment {
    pub fn window(&self) -> usize {
        self.actions.len()
    }

    /// Whether observation `k` is real data (the start, or the result of a
    /// valid transition).
    pub fn observation_valid(&self, k: usize) -> bool {
        k == 0 || self.valid_mask[k - 1]
    }
}

/// Uniform replay storing whole episodes. Capacity counts transitions; when
/// exceeded, the oldest episode is evicted entirely.
pub struct ReplayBuffer {
    capacity: usize,
    min_fill: usize,
    episodes: VecDeque<Episode>,
    size: usize,
    /// `(window, cumulative valid starts per episode)`, dropped on push.
    starts: RefCell<Option<(usize, Vec<usize>)>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_fill: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Replay("capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            min_fill,
            episodes: VecDeque::new(),
            size: 0,
            starts: RefCell::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn min_fill(&self) -> usize {
        self.min_fill
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn ready(&self) -> bool {
        self.size >= self.min_fill
    }

    pub fn episode_lengths(&self) -> Vec<usize> {
        self.episodes.iter().map(Episode::len).collect()
    }

    pub fn push(&mut self, t: Transition) {
        self.starts.replace(None);
        let open = self.episodes.back().is_some_and(|e| !e.finished);
        if !open {
            self.episodes.push_back(Episode::new(t.observation));
        }
        let ep = self.episodes.back_mut().expect("episode exists");
        ep.observations.push(t.next_observation);
        ep.actions.push(t.action);
        ep.rewards.push(t.reward);
        ep.dones.push(t.done);
        ep.finished = t.done || t.truncated;
        self.size += 1;

        while self.size > self.capacity {
            if self.episodes.len() > 1 {
                let old = self.episodes.pop_front().expect("non-empty");
                self.size -= old.len();
            } else {
                // a single episode longer than the capacity loses its head
                self.episodes[0].drop_front();
                self.size -= 1;
            }
        }
    }

    fn with_prefix<T>(&self, window: usize, f: impl FnOnce(&[usize]) -> T) -> T {
        let mut cache = self.starts.borrow_mut();
        if cache.as_ref().is_none_or(|(w, _)| *w != window) {
            let mut acc = 0;
            let prefix = self
                .episodes
                .iter()
                .map(|e| {
                    acc += e.valid_starts(window);
                    acc
                })
                .collect();
            *cache = Some((window, prefix));
        }
        f(&cache.as_ref().expect("filled above").1)
    }

    fn total_starts(&self, window: usize) -> usize {
        self.with_prefix(window, |p| p.last().copied().unwrap_or(0))
    }

    /// Locates flat start index `i` among episode starts.
    fn locate(&self, i: usize, window: usize) -> (usize, usize) {
        self.with_prefix(window, |p| {
            let e = p.partition_point(|&c| c <= i);
            let before = if e == 0 { 0 } else { p[e - 1] };
            (e, i - before)
        })
    }

    /// Extracts the `window`-transition segment beginning at step `start` of
    /// episode `episode`.
    pub fn segment_at(&self, episode: usize, start: usize, window: usize) -> Result<TrajectorySegment> {
        let ep = self
            .episodes
            .get(episode)
            .ok_or_else(|| Error::Replay(format!("episode {episode} out of range")))?;
        if start >= ep.len() {
            return Err(Error::Replay(format!(
                "start {start} beyond episode length {}",
                ep.len()
            )));
        }
        let pad_obs = Tensor::zeros(ep.observations[0].shape());
        let pad_action = ep.actions[ep.len() - 1].clone();
        let mut seg = TrajectorySegment {
            observations: Vec::with_capacity(window + 1),
            actions: Vec::with_capacity(window),
            rewards: Vec::with_capacity(window),
            done_flags: Vec::with_capacity(window),
            valid_mask: Vec::with_capacity(window),
        };
        seg.observations.push(ep.observations[start].clone());
        for j in 0..window {
            let t = start + j;
            if t < ep.len() {
                seg.actions.push(ep.actions[t].clone());
                seg.rewards.push(ep.rewards[t]);
                seg.done_flags.push(ep.dones[t]);
                seg.valid_mask.push(true);
                seg.observations.push(ep.observations[t + 1].clone());
            } else {
                seg.actions.push(pad_action.clone());
                seg.rewards.push(0.0);
                seg.done_flags.push(false);
                seg.valid_mask.push(false);
                seg.observations.push(pad_obs.clone());
            }
        }
        Ok(seg)
    }

    /// Draws `batch` segments of `k + n` transitions with i.i.d. uniform
    /// start indices.
    pub fn sample_segments<R: Rng + ?Sized>(
        &self,
        batch: usize,
        k: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<TrajectorySegment>> {
        if self.size < self.min_fill {
            return Err(Error::Replay(format!(
                "sampling with {} transitions stored, below min_fill {}",
                self.size, self.min_fill
            )));
        }
        let window = k + n;
        if window == 0 {
            return Err(Error::Replay("segment window must be positive".into()));
        }
        let total = self.total_starts(window);
        if total == 0 {
            return Err(Error::Replay("no valid segment start in the buffer".into()));
        }
        (0..batch)
            .map(|_| {
                let (e, s) = self.locate(rng.random_range(0..total), window);
                self.segment_at(e, s, window)
            })
            .collect()
    }

    /// Number of valid segment starts for a `k + n` window.
    pub fn start_index_count(&self, k: usize, n: usize) -> usize {
        self.total_starts(k + n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64) -> Tensor {
        Tensor::vector(vec![x]).unwrap()
    }

    fn push_episode(buf: &mut ReplayBuffer, len: usize, tag: f64) {
        for t in 0..len {
            buf.push(Transition {
                observation: obs(tag + t as f64),
                action: Action::Discrete(t % 2),
                reward: t as f64,
                next_observation: obs(tag + t as f64 + 1.0),
                done: t + 1 == len,
                truncated: false,
            });
        }
    }

    #[test]
    fn push_one() {
        let mut b = ReplayBuffer::new(10, 0).unwrap();
        push_episode(&mut b, 1, 0.0);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn fifo_over_single_step_episodes() {
        let mut b = ReplayBuffer::new(10, 0).unwrap();
        for i in 0..15 {
            push_episode(&mut b, 1, 100.0 * i as f64);
        }
        assert_eq!(b.len(), 10);
        assert_eq!(b.num_episodes(), 10);
        let first = b.segment_at(0, 0, 1).unwrap();
        assert_eq!(first.observations[0].item(), 500.0);
    }

    #[test]
    fn whole_episode_eviction() {
        let mut b = ReplayBuffer::new(10, 0).unwrap();
        push_episode(&mut b, 7, 0.0);
        push_episode(&mut b, 6, 100.0);
        assert_eq!(b.len(), 6);
        assert_eq!(b.episode_lengths(), vec![6]);
    }

    #[test]
    fn full_and_masked_segments() {
        let mut b = ReplayBuffer::new(100, 0).unwrap();
        push_episode(&mut b, 10, 0.0);
        let s = b.segment_at(0, 1, 8).unwrap();
        assert!(s.valid_mask.iter().all(|&v| v));
        assert_eq!(s.observations.first().unwrap().item(), 1.0);
        assert_eq!(s.observations.last().unwrap().item(), 9.0);

        let s = b.segment_at(0, 8, 8).unwrap();
        assert_eq!(s.valid_mask, vec![true, true, false, false, false, false, false, false]);
        assert!(s.done_flags[1]);
        assert_eq!(s.observations[3].item(), 0.0);
        assert_eq!(s.rewards[2..], [0.0; 6]);
    }

    #[test]
    fn min_fill_is_enforced() {
        let mut b = ReplayBuffer::new(100, 5).unwrap();
        push_episode(&mut b, 3, 0.0);
        let mut rng = rand::rng();
        assert!(b.sample_segments(4, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn open_episode_only_offers_full_windows() {
        let mut b = ReplayBuffer::new(100, 0).unwrap();
        for t in 0..5 {
            b.push(Transition {
                observation: obs(t as f64),
                action: Action::Discrete(0),
                reward: 0.0,
                next_observation: obs(t as f64 + 1.0),
                done: false,
                truncated: false,
            });
        }
        assert_eq!(b.start_index_count(2, 1), 3);
        assert_eq!(b.start_index_count(5, 1), 0);
    }
}
