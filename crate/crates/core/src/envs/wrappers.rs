use std::collections::VecDeque;

use super::{Action, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Repeats each action `repeat` times, summing rewards and stopping early at
/// episode end.
pub struct ActionRepeat {
    inner: Box<dyn Environment>,
    repeat: usize,
    spec: EnvSpec,
}

impl ActionRepeat {
    pub fn new(inner: Box<dyn Environment>, repeat: usize) -> Result<Self> {
        if repeat == 0 {
            return Err(Error::Env("action repeat must be >= 1".into()));
        }
        let mut spec = inner.spec().clone();
        spec.max_episode_length = spec.max_episode_length.div_ceil(repeat);
        Ok(Self { inner, repeat, spec })
    }
}

impl Environment for ActionRepeat {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Tensor {
        self.inner.reset()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let mut total = 0.0;
        let mut last = None;
        for _ in 0..self.repeat {
            let r = self.inner.step(action)?;
            total += r.reward;
            let over = r.episode_over();
            last = Some(r);
            if over {
                break;
            }
        }
        let mut r = last.expect("repeat >= 1");
        r.reward = total;
        Ok(r)
    }
}

/// Concatenates the last `k` observations along the leading axis.
pub struct FrameStack {
    inner: Box<dyn Environment>,
    k: usize,
    frames: VecDeque<Tensor>,
    spec: EnvSpec,
}

impl FrameStack {
    pub fn new(inner: Box<dyn Environment>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Env("frame stack must be >= 1".into()));
        }
        let mut spec = inner.spec().clone();
        spec.observation_dim *= k;
        spec.observation_shape[0] *= k;
        Ok(Self {
            inner,
            k,
            frames: VecDeque::with_capacity(k),
            spec,
        })
    }

    fn stacked(&self) -> Tensor {
        let data = self.frames.iter().flat_map(|f| f.data().iter().copied()).collect();
        Tensor::from_parts(self.spec.observation_shape.clone(), data)
    }
}

impl Environment for FrameStack {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Tensor {
        let first = self.inner.reset();
        self.frames.clear();
        for _ in 0..self.k {
            self.frames.push_back(first.clone());
        }
        self.stacked()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        let mut r = self.inner.step(action)?;
        self.frames.pop_front();
        self.frames.push_back(r.observation);
        r.observation = self.stacked();
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Chain, ChainConfig};

    #[test]
    fn repeat_sums_rewards_and_stops_at_end() {
        let chain = Chain::new(ChainConfig {
            length: 3,
            max_episode_length: 10,
        })
        .unwrap();
        let mut env = ActionRepeat::new(Box::new(chain), 4).unwrap();
        env.reset();
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.done);
    }

    #[test]
    fn stack_keeps_last_k() {
        let chain = Chain::new(ChainConfig::default()).unwrap();
        let mut env = FrameStack::new(Box::new(chain), 2).unwrap();
        let o = env.reset();
        assert_eq!(o.shape(), &[16]);
        assert_eq!(o.data()[0], 1.0);
        assert_eq!(o.data()[8], 1.0);
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(r.observation.data()[0], 1.0);
        assert_eq!(r.observation.data()[9], 1.0);
    }
}
