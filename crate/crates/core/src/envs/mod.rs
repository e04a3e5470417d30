//! Toy environments with known random-policy and optimal reference scores.

mod chain;
mod pixelgrid;
mod pointmass;
mod wrappers;

pub use chain::{Chain, ChainConfig};
pub use pixelgrid::{PixelGrid, PixelGridConfig};
pub use pointmass::{PointMass, PointMassConfig};
pub use wrappers::{ActionRepeat, FrameStack};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    /// Flattened observation length.
    pub observation_dim: usize,
    /// Natural observation shape (e.g. `[channels, height, width]` for images).
    pub observation_shape: Vec<usize>,
    pub action_space: ActionSpace,
    pub max_episode_length: usize,
    /// Expected undiscounted return of the uniform random policy.
    pub random_score: f64,
    /// Expected undiscounted return of an optimal policy.
    pub optimal_score: f64,
}

impl EnvSpec {
    pub fn is_image(&self) -> bool {
        self.observation_shape.len() == 3
    }

    pub fn n_actions(&self) -> Option<usize> {
        match self.action_space {
            ActionSpace::Discrete(n) => Some(n),
            ActionSpace::Continuous { .. } => None,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.action_space {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Result<usize> {
        match self {
            Action::Discrete(a) => Ok(*a),
            Action::Continuous(_) => Err(Error::Env("expected a discrete action".into())),
        }
    }

    pub fn continuous(&self) -> Result<&[f64]> {
        match self {
            Action::Continuous(a) => Ok(a),
            Action::Discrete(_) => Err(Error::Env("expected a continuous action".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Tensor,
    pub reward: f64,
    /// Terminal transition; cuts the bootstrap.
    pub done: bool,
    /// Time-limit end without termination; the bootstrap continues.
    pub truncated: bool,
}

impl StepResult {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Tensor;

    /// Advances one step. Stepping after the episode ended is an error.
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

/// Parameters for building any of the bundled environments by name.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvParams {
    pub name: String,
    pub chain: ChainConfig,
    pub pixelgrid: PixelGridConfig,
    pub pointmass: PointMassConfig,
    pub action_repeat: usize,
    pub frame_stack: usize,
}

impl EnvParams {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            chain: ChainConfig::default(),
            pixelgrid: PixelGridConfig::default(),
            pointmass: PointMassConfig::default(),
            action_repeat: 1,
            frame_stack: 1,
        }
    }
}

pub const ENV_NAMES: [&str; 3] = ["chain", "pixelgrid", "pointmass"];

/// Builds the environment selected by `params.name`, seeded with `seed`,
/// with the action-repeat and frame-stack wrappers applied.
pub fn make_env(params: &EnvParams, seed: u64) -> Result<Box<dyn Environment>> {
    let base: Box<dyn Environment> = match params.name.as_str() {
        "chain" => Box::new(Chain::new(params.chain.clone())?),
        "pixelgrid" => Box::new(PixelGrid::new(params.pixelgrid.clone(), seed)?),
        "pointmass" => Box::new(PointMass::new(params.pointmass.clone())?),
        other => return Err(Error::Env(format!("unknown environment `{other}`"))),
    };
    let repeated: Box<dyn Environment> = if params.action_repeat > 1 {
        Box::new(ActionRepeat::new(base, params.action_repeat)?)
    } else {
        base
    };
    Ok(if params.frame_stack > 1 {
        Box::new(FrameStack::new(repeated, params.frame_stack)?)
    } else {
        repeated
    })
}

/// Reference scores of the environment `params` would build.
pub fn env_spec(params: &EnvParams) -> Result<EnvSpec> {
    Ok(make_env(params, 0)?.spec().clone())
}
