use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub length: usize,
    pub max_episode_length: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            length: 8,
            max_episode_length: 50,
        }
    }
}

/// Cells `0..L`; action 0 moves left (clamped at 0), action 1 moves right.
/// Entering cell `L-1` pays 1 and terminates. The time limit also
/// terminates. Observations are one-hot positions.
pub struct Chain {
    config: ChainConfig,
    spec: EnvSpec,
    pos: usize,
    t: usize,
    done: bool,
}

impl Chain {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;

    pub fn new(config: ChainConfig) -> Result<Self> {
        if config.length < 2 || config.max_episode_length < 1 {
            return Err(Error::Env(format!("bad chain config {config:?}")));
        }
        let spec = EnvSpec {
            name: "chain".into(),
            observation_dim: config.length,
            observation_shape: vec![config.length],
            action_space: ActionSpace::Discrete(2),
            max_episode_length: config.max_episode_length,
            random_score: random_policy_return(config.length, config.max_episode_length),
            optimal_score: if config.length - 1 <= config.max_episode_length {
                1.0
            } else {
                0.0
            },
        };
        Ok(Self {
            config,
            spec,
            pos: 0,
            t: 0,
            done: true,
        })
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    fn observe(&self) -> Tensor {
        let mut v = vec![0.0; self.config.length];
        v[self.pos] = 1.0;
        Tensor::from_parts(vec![self.config.length], v)
    }
}

/// Probability that a uniform random walk started at 0 (left clamped)
/// reaches `length - 1` within `limit` steps, by forward propagation of the
/// occupancy distribution.
pub(crate) fn random_policy_return(length: usize, limit: usize) -> f64 {
    let goal = length - 1;
    let mut p = vec![0.0; length];
    p[0] = 1.0;
    let mut absorbed = 0.0;
    for _ in 0..limit {
        let mut next = vec![0.0; length];
        for (i, &mass) in p.iter().enumerate().take(goal) {
            next[i.saturating_sub(1)] += 0.5 * mass;
            next[i + 1] += 0.5 * mass;
        }
        absorbed += next[goal];
        next[goal] = 0.0;
        p = next;
    }
    absorbed
}

impl Environment for Chain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self) -> Tensor {
        self.pos = 0;
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("chain: step after episode end; call reset".into()));
        }
        match action.discrete()? {
            Self::LEFT => self.pos = self.pos.saturating_sub(1),
            Self::RIGHT => self.pos += 1,
            a => return Err(Error::Env(format!("chain: action {a} out of range"))),
        }
        self.t += 1;
        let reached = self.pos == self.config.length - 1;
        let reward = if reached { 1.0 } else { 0.0 };
        self.done = reached || self.t >= self.config.max_episode_length;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
            truncated: false,
        })
    }
}
